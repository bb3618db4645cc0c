//! Image and geometry losses, each with its gradient.
//!
//! Image losses take the rendered output and an RGBA target of the same size;
//! gradients come back as per-pixel color and alpha partials ready for
//! [`crate::backward`].

use crate::error::{Error, Result};
use crate::image::RgbaImage;
use crate::mesh::{uniform_laplacian, Mesh};
use crate::raster::RenderOutput;
use crate::Vec3;

pub const IOU_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Partials of a scalar loss with respect to a rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrad {
    pub d_color: Vec<Vec3>,
    pub d_alpha: Vec<f64>,
}

impl ImageGrad {
    pub fn zeros(pixels: usize) -> Self {
        Self {
            d_color: vec![Vec3::zeros(); pixels],
            d_alpha: vec![0.0; pixels],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ImageGrad, scale: f64) {
        for (a, b) in self.d_color.iter_mut().zip(&other.d_color) {
            *a += b * scale;
        }
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            *a += b * scale;
        }
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn check_target(pred: &RenderOutput, target: &RgbaImage) -> Result<()> {
    if (pred.height, pred.width) != target.size() {
        return Err(Error::SizeMismatch {
            left: (pred.height, pred.width),
            right: target.size(),
        });
    }
    Ok(())
}

/// `1 - |P*T|_1 / |P + T - P*T|_1` over alpha masks, with its gradient in `pred`.
pub fn silhouette_iou_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        inter += p * t;
        union += p + t - p * t;
    }
    let floored = union <= IOU_DENOMINATOR_FLOOR;
    let u = union.max(IOU_DENOMINATOR_FLOOR);
    let loss = 1.0 - inter / u;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(_, t)| {
            let d_union = if floored { 0.0 } else { 1.0 - t };
            -(t * u - inter * d_union) / (u * u)
        })
        .collect();
    Ok((loss, grad))
}

pub fn silhouette_iou_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    silhouette_iou_grad(pred, target).map(|(l, _)| l)
}

/// Mean absolute difference over all pixels and channels.
pub fn color_l1_grad(pred: &[Vec3], target: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_len(pred.len(), target.len())?;
    let n = (3 * pred.len()).max(1) as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            sum += d.abs().sum();
            d.map(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }) / n
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn color_l1_loss(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    color_l1_grad(pred, target).map(|(l, _)| l)
}

/// Mean over vertices of the squared uniform-Laplacian norm of `values`, with
/// its gradient in `values`.
pub fn laplacian_grad(mesh: &Mesh, values: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    let delta = uniform_laplacian(mesh, values)?;
    let n = values.len();
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let adj = mesh.adjacency();
    let scale = 2.0 / n as f64;
    let mut grad: Vec<Vec3> = delta.iter().map(|d| d * scale).collect();
    for (i, d) in delta.iter().enumerate() {
        let ring = adj.neighbors(i);
        if ring.is_empty() {
            continue;
        }
        let share = d * (scale / ring.len() as f64);
        for &j in ring {
            grad[j] -= share;
        }
    }
    let loss = delta.iter().map(|d| d.norm_squared()).sum::<f64>() / n as f64;
    Ok((loss, grad))
}

/// Laplacian loss of the vertex positions.
pub fn laplacian_loss(mesh: &Mesh) -> f64 {
    laplacian_grad(mesh, mesh.vertices())
        .map(|(l, _)| l)
        .expect("lengths agree")
}

/// Laplacian loss of the vertex colors.
pub fn color_laplacian_loss(mesh: &Mesh) -> f64 {
    laplacian_grad(mesh, mesh.colors())
        .map(|(l, _)| l)
        .expect("lengths agree")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0, mu: 1e-3 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda >= 0.0 && mu >= 0.0 && lambda.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative, got ({lambda}, {mu})"
            )));
        }
        Ok(Self { lambda, mu })
    }
}

/// Component values of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub silhouette: f64,
    pub color: f64,
    /// Shape plus color Laplacian.
    pub geometry: f64,
}

impl LossTerms {
    pub fn total(&self, weights: &LossWeights) -> f64 {
        self.silhouette + weights.lambda * self.color + weights.mu * self.geometry
    }
}

pub fn loss_terms(pred: &RenderOutput, target: &RgbaImage, mesh: &Mesh) -> Result<LossTerms> {
    check_target(pred, target)?;
    let target_color: Vec<Vec3> = target.pixels().iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
    Ok(LossTerms {
        silhouette: silhouette_iou_loss(&pred.alpha, &target.alpha())?,
        color: color_l1_loss(&pred.color, &target_color)?,
        geometry: laplacian_loss(mesh) + color_laplacian_loss(mesh),
    })
}

/// `L_s + lambda * L_c + mu * L_g`.
pub fn total_loss(pred: &RenderOutput, target: &RgbaImage, mesh: &Mesh, weights: &LossWeights) -> Result<f64> {
    Ok(loss_terms(pred, target, mesh)?.total(weights))
}

/// Root-mean-square difference over all RGBA elements.
pub fn fit_energy(pred: &RenderOutput, target: &RgbaImage) -> Result<f64> {
    fit_energy_grad(pred, target).map(|(e, _)| e)
}

/// Fit energy and its image gradient; the gradient is zero at a zero residual.
pub fn fit_energy_grad(pred: &RenderOutput, target: &RgbaImage) -> Result<(f64, ImageGrad)> {
    check_target(pred, target)?;
    let n = (4 * target.pixels().len()).max(1) as f64;
    let mut sum = 0.0;
    let mut residual = ImageGrad::zeros(target.pixels().len());
    for (i, t) in target.pixels().iter().enumerate() {
        let dc = pred.color[i] - Vec3::new(t[0], t[1], t[2]);
        let da = pred.alpha[i] - t[3];
        sum += dc.norm_squared() + da * da;
        residual.d_color[i] = dc;
        residual.d_alpha[i] = da;
    }
    let energy = (sum / n).sqrt();
    let scale = if energy > 0.0 { 1.0 / (n * energy) } else { 0.0 };
    let mut grad = ImageGrad::zeros(target.pixels().len());
    grad.add_scaled(&residual, scale);
    Ok((energy, grad))
}
