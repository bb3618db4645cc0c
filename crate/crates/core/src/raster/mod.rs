//! Forward soft rasterizer.
//!
//! Every (pixel, triangle) pair yields a fragment: a coverage probability from
//! the signed screen distance, a normalized depth and a shaded color from
//! clipped barycentric interpolation. Fragments are fused per pixel by the
//! depth softmax (color) and the probabilistic union (alpha).

mod aggregate;
mod primitives;
mod render;
mod shading;

pub use aggregate::{
    aggregate_silhouette, aggregate_softmax, silhouette_from_complements, softmax_from_logs, SoftmaxResult,
};
pub use primitives::{
    clipped_barycentric, log_sigmoid, normalize_depth, probability, signed_distance, ClipState, DistanceEval,
    ScreenTriangle, DEGENERATE_SCREEN_AREA,
};
pub use render::{render, render_world, Fragment, FragmentBuffer, PixelRecord, RenderOutput, Tape};
pub use shading::{shade, ShadeEval};

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceMetric {
    /// Signed squared distance to the closest point on the triangle's edges.
    Euclidean,
    /// Smallest barycentric coordinate.
    Barycentric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lighting {
    /// Color is the interpolated albedo.
    Flat,
    /// `albedo * (ambient + diffuse * max(0, <n, -direction>))`.
    Directional {
        ambient: f64,
        diffuse: f64,
        /// Unit direction the light travels in.
        direction: Vec3,
    },
}

impl Lighting {
    pub fn validate(&self) -> Result<()> {
        if let Lighting::Directional {
            ambient,
            diffuse,
            direction,
        } = self
        {
            if !(0.0..=1.0).contains(ambient) || !(0.0..=1.0).contains(diffuse) {
                return Err(Error::InvalidConfig("light intensities must lie in [0,1]".into()));
            }
            if ambient + diffuse > 1.0 + 1e-12 {
                return Err(Error::InvalidConfig("ambient + diffuse must not exceed 1".into()));
            }
            if (direction.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig("light direction must be a unit vector".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Sharpness of the coverage sigmoid, in squared NDC units.
    pub sigma: f64,
    /// Sharpness of the depth softmax, in normalized-depth units.
    pub gamma: f64,
    /// Background pseudo-depth for the softmax.
    pub epsilon: f64,
    pub height: usize,
    pub width: usize,
    pub background: Vec3,
    pub metric: DistanceMetric,
    /// Skip fragments whose coverage probability is below this threshold.
    pub fast_cutoff: Option<f64>,
    pub lighting: Lighting,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            gamma: 1e-4,
            epsilon: 0.0,
            height: 64,
            width: 64,
            background: Vec3::zeros(),
            metric: DistanceMetric::Euclidean,
            fast_cutoff: None,
            lighting: Lighting::Flat,
        }
    }
}

impl RenderConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig("epsilon must be finite".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("image dimensions must be at least 1".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig("background color outside [0,1]".into()));
        }
        if let Some(tau) = self.fast_cutoff {
            if !(tau > 0.0 && tau < 0.5) {
                return Err(Error::InvalidConfig(format!("fast cutoff {tau} outside (0, 0.5)")));
            }
        }
        self.lighting.validate()
    }

    /// Signed distance below which a fragment is skipped, if a cutoff is set.
    pub fn distance_threshold(&self) -> Option<f64> {
        self.fast_cutoff.map(|tau| self.sigma * (tau / (1.0 - tau)).ln())
    }
}
