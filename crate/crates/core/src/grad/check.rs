//! Central finite-difference checks of the analytic backward pass.
//!
//! The loss is the linear functional `sum_i <d_color_i, I_i> + d_alpha_i A_i`
//! with fixed random upstream weights; every scalar input is perturbed by
//! a sequence of shrinking steps, extrapolated to zero, and re-rendered through the forward path only. Perturbations
//! that change any piecewise branch of the forward pass (closest edge,
//! barycentric clamp, argmin, lighting gate, depth clamp, clipping) are
//! excluded, since the derivative does not exist across those switches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{random_rotation, world_vertices, Camera, Pose};
use crate::error::Result;
use crate::mesh::{make_ico_sphere, Mesh};
use crate::raster::{render, render_world, DistanceMetric, Lighting, RenderConfig, RenderOutput};
use crate::Vec3;

use super::{backward, GradientSet};

/// `|a - f| / max(|a|, |f|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Largest step tried.
    pub step: f64,
    /// Coordinates still switching a branch at this step are excluded.
    pub min_step: f64,
    /// Ridders extrapolation over shrinking steps; a single central difference otherwise.
    pub richardson: bool,
    /// Relative error estimate above which other starting steps are tried.
    pub target_error: f64,
    pub abs_floor: f64,
    /// Step for vertex colors; the image is linear in them away from channel clamps.
    pub color_step: f64,
    /// Skip perturbations that change a piecewise branch of the forward pass.
    pub exclude_regime_switches: bool,
    /// Fragments with weight and coverage both below this cannot bias a difference.
    pub influence: f64,
    /// Check at most this many randomly chosen scalars per block ([`check_scene`]).
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            min_step: 1e-7,
            richardson: true,
            target_error: 1e-5,
            abs_floor: 1e-8,
            color_step: 2e-2,
            exclude_regime_switches: true,
            influence: 1e-12,
            max_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Scalars skipped because every tried step switched a branch.
    pub excluded_indices: Vec<usize>,
    /// Scalar index of the worst entry, with its analytic and numeric values.
    pub worst: Option<(usize, f64, f64)>,
}

impl BlockReport {
    pub fn excluded(&self) -> usize {
        self.excluded_indices.len()
    }

    fn new(name: &'static str) -> Self {
        Self {
            name,
            max_rel_error: 0.0,
            checked: 0,
            excluded_indices: Vec::new(),
            worst: None,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64, floor: f64) {
        let e = relative_error(analytic, numeric, floor);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((index, analytic, numeric));
        }
    }

    fn merge(&mut self, other: &BlockReport) {
        self.checked += other.checked;
        self.excluded_indices.extend(&other.excluded_indices);
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub blocks: Vec<BlockReport>,
}

impl CheckReport {
    pub fn empty() -> Self {
        Self {
            blocks: ["vertices", "displacements", "colors", "rotation", "translation"]
                .into_iter()
                .map(BlockReport::new)
                .collect(),
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn merge(&mut self, other: &CheckReport) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.merge(b);
        }
    }
}

/// A scene plus the upstream weights defining the scalar loss.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: Mesh,
    pub camera: Camera,
    pub pose: Pose,
    pub config: RenderConfig,
    pub d_color: Vec<Vec3>,
    pub d_alpha: Vec<f64>,
}

impl Scene {
    pub fn loss(&self, out: &RenderOutput) -> f64 {
        let mut total = 0.0;
        for i in 0..out.color.len() {
            total += out.color[i].dot(&self.d_color[i]) + out.alpha[i] * self.d_alpha[i];
        }
        total
    }

    pub fn analytic(&self) -> Result<(RenderOutput, GradientSet)> {
        let out = render(&self.mesh, &self.camera, &self.pose, &self.config)?;
        let g = backward(&out, &self.d_color, &self.d_alpha, &self.mesh, &self.camera, &self.pose)?;
        Ok((out, g))
    }
}

/// Random scene with at most `max_faces` faces, fully in front of the camera.
pub fn random_scene<R: Rng + ?Sized>(
    rng: &mut R,
    max_faces: usize,
    lit: bool,
    metric: DistanceMetric,
    size: usize,
) -> Scene {
    let mesh = if rng.random_bool(0.5) && max_faces >= 20 {
        let sub = if max_faces >= 80 && rng.random_bool(0.5) { 1 } else { 0 };
        let sphere = make_ico_sphere(sub).expect("valid subdivision");
        let jitter: Vec<Vec3> = sphere
            .vertices()
            .iter()
            .map(|v| v * rng.random_range(0.7..1.1) + random_vec(rng, 0.05))
            .collect();
        let colors: Vec<Vec3> = (0..sphere.vertex_count()).map(|_| random_color(rng)).collect();
        sphere
            .with_vertices(jitter)
            .and_then(|m| m.with_colors(colors))
            .expect("valid sphere")
    } else {
        let n = rng.random_range(1..=max_faces.clamp(1, 12));
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in 0..n {
            let center = random_vec(rng, 0.7);
            for _ in 0..3 {
                vertices.push(center + random_vec(rng, 0.6));
            }
            faces.push([3 * f, 3 * f + 1, 3 * f + 2]);
        }
        let colors = (0..vertices.len()).map(|_| random_color(rng)).collect();
        Mesh::new(vertices, faces, colors).expect("valid soup")
    };
    let eye = Vec3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(3.5..5.0),
    );
    let camera = Camera::new(
        eye,
        Vec3::zeros(),
        Vec3::y(),
        rng.random_range(0.7..1.0),
        1.0,
        1.0,
        10.0,
    )
    .expect("valid camera");
    let pose = Pose::new(random_rotation(rng), random_vec(rng, 0.2)).expect("valid pose");
    let lighting = if lit {
        let dir = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0).normalize();
        Lighting::Directional {
            ambient: 0.3,
            diffuse: 0.6,
            direction: dir,
        }
    } else {
        Lighting::Flat
    };
    let log_sigma = match metric {
        DistanceMetric::Euclidean => rng.random_range(-4.0..-2.0),
        DistanceMetric::Barycentric => rng.random_range(-3.0..-2.0),
    };
    let config = RenderConfig {
        sigma: 10f64.powf(log_sigma),
        gamma: 10f64.powf(rng.random_range(-2.5..-1.0)),
        epsilon: 0.0,
        height: size,
        width: size,
        background: random_color(rng),
        metric,
        fast_cutoff: None,
        lighting,
    };
    let pixels = size * size;
    let d_color = (0..pixels).map(|_| random_vec(rng, 1.0)).collect();
    let d_alpha = (0..pixels).map(|_| rng.random_range(-1.0..1.0)).collect();
    Scene {
        mesh,
        camera,
        pose,
        config,
        d_color,
        d_alpha,
    }
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
    )
}

/// Ridders' extrapolation of central differences `central(s)`, starting from
/// the largest step in `h, h/1.6, ...` (down to `min_step`) free of branch
/// switches. Returns the estimate and its error estimate.
fn ridders(
    h: f64,
    min_step: f64,
    extrapolate: bool,
    central: &dyn Fn(f64) -> Result<Option<f64>>,
) -> Result<Option<(f64, f64)>> {
    const SHRINK: f64 = 1.6;
    const LEVELS: usize = 8;
    let mut step = h;
    let first = loop {
        if let Some(d) = central(step)? {
            break d;
        }
        step /= SHRINK;
        if step < min_step {
            return Ok(None);
        }
    };
    if !extrapolate {
        return Ok(Some((first, f64::INFINITY)));
    }
    let mut prev = vec![first];
    let mut best = first;
    let mut best_err = f64::INFINITY;
    for _ in 1..LEVELS {
        step /= SHRINK;
        let Some(d) = central(step)? else { break };
        let mut row = vec![d];
        let mut fac = SHRINK * SHRINK;
        for j in 1..=prev.len() {
            let next = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let err = (next - row[j - 1]).abs().max((next - prev[j - 1]).abs());
            if err <= best_err {
                best_err = err;
                best = next;
            }
            row.push(next);
        }
        let n = row.len();
        if (row[n - 1] - prev[n - 2]).abs() >= 2.0 * best_err {
            break;
        }
        prev = row;
    }
    Ok(Some((best, best_err)))
}

/// Ridders from `h`, retried from `10 h` (if at most `max_start`) and `h / 10` when its own error
/// estimate exceeds `target` relative to `max(|estimate|, floor)`; the
/// estimate with the smallest error estimate wins.
fn adaptive_derivative(
    h: f64,
    max_start: f64,
    options: &CheckOptions,
    central: &dyn Fn(f64) -> Result<Option<f64>>,
) -> Result<Option<f64>> {
    let mut best = ridders(h, options.min_step, options.richardson, central)?;
    let resolved = |r: &Option<(f64, f64)>| match r {
        Some((d, e)) => *e <= options.target_error * d.abs().max(options.abs_floor),
        None => false,
    };
    if options.richardson && !resolved(&best) {
        for start in [10.0 * h, 0.1 * h].into_iter().filter(|&s| s <= max_start) {
            if let Some((d, e)) = ridders(start, options.min_step, true, central)? {
                if best.is_none_or(|(_, be)| e < be) {
                    best = Some((d, e));
                }
            }
        }
    }
    Ok(best.map(|(d, _)| d))
}

/// True if a fragment that influences either render changed its piecewise regime.
pub fn switches(base: &RenderOutput, other: &RenderOutput, influence: f64) -> bool {
    let (a, b) = (&base.tape.buffer, &other.tape.buffer);
    if a.rows.iter().zip(&b.rows).any(|(x, y)| x.len() != y.len())
        || base
            .tape
            .triangles
            .iter()
            .zip(&other.tape.triangles)
            .any(|(x, y)| x.is_some() != y.is_some())
    {
        return true;
    }
    a.fragments().zip(b.fragments()).any(|(f, g)| {
        (f.face != g.face || f.regime != g.regime)
            && (f.weight.max(f.prob) > influence || g.weight.max(g.prob) > influence)
    })
}

/// Scalar indices to check per block, in [`CheckReport::empty`] order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selection {
    pub blocks: [Vec<usize>; 5],
}

impl Selection {
    /// Every scalar, or at most `max_per_block` random ones per block.
    pub fn sample(vertex_count: usize, max_per_block: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |len: usize| -> Vec<usize> {
            match max_per_block {
                Some(m) if m < len => {
                    let mut idx = rand::seq::index::sample(&mut rng, len, m).into_vec();
                    idx.sort_unstable();
                    idx
                }
                _ => (0..len).collect(),
            }
        };
        let n = 3 * vertex_count;
        Self {
            blocks: [pick(n), pick(n), pick(n), pick(4), pick(3)],
        }
    }

    pub fn vertices(indices: Vec<usize>) -> Self {
        Self {
            blocks: [indices, vec![], vec![], vec![], vec![]],
        }
    }
}

/// Compares analytic partials in the scene's [`GradientSet`] with central
/// differences, for every scalar or a random subset per block.
pub fn check_scene(scene: &Scene, options: &CheckOptions) -> Result<CheckReport> {
    let selection = Selection::sample(scene.mesh.vertex_count(), options.max_per_block, options.seed);
    check_selection(scene, options, &selection)
}

pub fn check_selection(scene: &Scene, options: &CheckOptions, selection: &Selection) -> Result<CheckReport> {
    let (base, grads) = scene.analytic()?;
    let h = options.step;
    let mut report = CheckReport::empty();
    let (mesh, cam, pose, cfg) = (&scene.mesh, &scene.camera, &scene.pose, &scene.config);
    let world = world_vertices(mesh, pose);

    // derivative along one scalar input; None when no step avoids a branch switch
    let derivative = |h: f64, max_start: f64, render_at: &dyn Fn(f64) -> Result<RenderOutput>| -> Result<Option<f64>> {
        let central = |s: f64| -> Result<Option<f64>> {
            let plus = render_at(s)?;
            let minus = render_at(-s)?;
            if options.exclude_regime_switches
                && (switches(&base, &plus, options.influence) || switches(&base, &minus, options.influence))
            {
                return Ok(None);
            }
            Ok(Some((scene.loss(&plus) - scene.loss(&minus)) / (2.0 * s)))
        };
        adaptive_derivative(h, max_start, options, &central)
    };

    for (b, ids) in selection.blocks.iter().enumerate() {
        for &idx in ids {
            let (v, k) = (idx / 3, idx % 3);
            let (analytic, fd) = match b {
                0 => (
                    grads.d_vertices[v][k],
                    derivative(h, 10.0 * h, &|s| {
                        let mut w = world.clone();
                        w[v][k] += s;
                        render_world(mesh, w, cam, pose, cfg)
                    })?,
                ),
                1 => (
                    grads.d_displacements[v][k],
                    derivative(h, 10.0 * h, &|s| {
                        let mut m = mesh.vertices().to_vec();
                        m[v][k] += s;
                        render(&mesh.with_vertices(m)?, cam, pose, cfg)
                    })?,
                ),
                2 => (
                    grads.d_colors[v][k],
                    derivative(options.color_step, options.color_step, &|s| {
                        let mut c = mesh.colors().to_vec();
                        c[v][k] += s;
                        render(&mesh.with_colors(c)?, cam, pose, cfg)
                    })?,
                ),
                3 => (
                    grads.d_rotation[idx],
                    derivative(h, 10.0 * h, &|s| {
                        let mut q = pose.rotation;
                        q[idx] += s;
                        render(mesh, cam, &Pose::from_raw(q, pose.translation), cfg)
                    })?,
                ),
                _ => (
                    grads.d_translation[idx],
                    derivative(h, 10.0 * h, &|s| {
                        let mut p = *pose;
                        p.translation[idx] += s;
                        render(mesh, cam, &p, cfg)
                    })?,
                ),
            };
            let block = &mut report.blocks[b];
            match fd {
                Some(fd) => block.record(idx, analytic, fd, options.abs_floor),
                None => block.excluded_indices.push(idx),
            }
        }
    }
    Ok(report)
}
