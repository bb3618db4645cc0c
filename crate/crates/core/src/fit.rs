//! Fitting loops: rigid pose and per-vertex displacements, driven by the fit
//! energy against a target image, plus the Monte Carlo pose study.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{
    quat_from_axis_angle, quat_mul, random_rotation, rotation_geodesic_angle, world_vertices, Camera, Pose,
};
use crate::error::{Error, Result};
use crate::image::RgbaImage;
use crate::loss::{fit_energy, fit_energy_grad, laplacian_grad};
use crate::mesh::{displace, Mesh};
use crate::optim::{adam_step, AdamConfig, AdamState, PoseAdam, Schedule};
use crate::raster::{RenderConfig, RenderOutput};
use crate::{backward, render, Vec3};

pub const CSV_HEADER: &str = "iteration,loss,sigma,gamma,angle_error";

/// Adam learning rate for per-vertex displacements.
pub const NONRIGID_LR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Size, metric, lighting, background and cutoff; sharpness comes from the schedule.
    pub render: RenderConfig,
    pub fix_translation: bool,
    /// Abort once the loss stays above `divergence_factor` times the initial
    /// loss for `divergence_patience` consecutive iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
    /// Restart the optimizer moments whenever the schedule changes level.
    pub reset_on_level: bool,
    /// When set, the learning rate applies at this sigma and scales with
    /// `sqrt(sigma / reference)`, the blur radius, elsewhere.
    pub lr_reference_sigma: Option<f64>,
}

impl FitOptions {
    /// Annealed from 1e-2 to 1e-4 when `scheduled`, otherwise constant at the
    /// sharpness of `render`.
    pub fn new(render: RenderConfig, iterations: usize, scheduled: bool) -> Result<Self> {
        let schedule = if scheduled {
            Schedule::default_annealing(iterations)?
        } else {
            Schedule::constant(render.sigma, render.gamma)?
        };
        Ok(Self {
            iterations,
            adam: AdamConfig::default(),
            schedule,
            render,
            fix_translation: false,
            divergence_factor: 10.0,
            divergence_patience: 100,
            reset_on_level: true,
            lr_reference_sigma: Some(crate::optim::SCHEDULE_START),
        })
    }

    fn config_at(&self, iteration: usize) -> RenderConfig {
        let (sigma, gamma) = self.schedule.at(iteration);
        RenderConfig {
            sigma,
            gamma,
            ..self.render
        }
    }

    fn adam_at(&self, sigma: f64) -> AdamConfig {
        let scale = self.lr_reference_sigma.map_or(1.0, |r| (sigma / r).sqrt());
        AdamConfig {
            lr: self.adam.lr * scale,
            ..self.adam
        }
    }

    fn level_starts(&self, iteration: usize) -> bool {
        self.reset_on_level && iteration > 0 && self.schedule.at(iteration) != self.schedule.at(iteration - 1)
    }

    fn final_config(&self) -> RenderConfig {
        self.config_at(self.iterations.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Radians; present when the ground-truth pose is known.
    pub angle_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub records: Vec<IterationRecord>,
    pub final_pose: Pose,
    pub final_angle_error: Option<f64>,
    /// Energies of the initial and final state, both at the final sharpness.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub displacements: Vec<Vec3>,
    /// Per iteration, the number of back-facing vertices with a nonzero gradient.
    pub hidden_gradient_counts: Vec<usize>,
    pub frames: Vec<String>,
    pub wall_time: Duration,
}

impl FitReport {
    pub fn succeeded(&self) -> bool {
        self.final_loss <= self.initial_loss
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let angle = r.angle_error.map(|a| a.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{}", r.iteration, r.loss, r.sigma, r.gamma, angle).expect("write to string");
        }
        s
    }
}

/// Called after each forward pass; may return the path of a dumped frame.
pub type Observer<'a> = dyn FnMut(&IterationRecord, &RenderOutput) -> Result<Option<String>> + 'a;

struct Divergence {
    initial: Option<f64>,
    streak: usize,
}

impl Divergence {
    fn check(&mut self, iteration: usize, loss: f64, options: &FitOptions) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > options.divergence_factor * initial {
            self.streak += 1;
            if self.streak >= options.divergence_patience {
                return Err(Error::Diverged {
                    iteration,
                    loss,
                    initial,
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

fn check_target(options: &FitOptions, target: &RgbaImage) -> Result<()> {
    options.render.validate()?;
    if target.size() != (options.render.height, options.render.width) {
        return Err(Error::SizeMismatch {
            left: (options.render.height, options.render.width),
            right: target.size(),
        });
    }
    if options.iterations == 0 {
        return Err(Error::InvalidConfig("at least one iteration is required".into()));
    }
    Ok(())
}

pub fn fit_rigid_pose(
    mesh: &Mesh,
    camera: &Camera,
    target: &RgbaImage,
    init: &Pose,
    truth: Option<&Pose>,
    options: &FitOptions,
) -> Result<FitReport> {
    fit_rigid_pose_observed(mesh, camera, target, init, truth, options, &mut |_, _| Ok(None))
}

/// Adam on `(quaternion, translation)` minimizing the fit energy.
pub fn fit_rigid_pose_observed(
    mesh: &Mesh,
    camera: &Camera,
    target: &RgbaImage,
    init: &Pose,
    truth: Option<&Pose>,
    options: &FitOptions,
    observer: &mut Observer<'_>,
) -> Result<FitReport> {
    check_target(options, target)?;
    let start = Instant::now();
    let angle_to = |p: &Pose| truth.map(|t| rotation_geodesic_angle(p.unit_rotation(), t.unit_rotation()));
    let mut opt = PoseAdam::new(options.adam);
    opt.fix_translation = options.fix_translation;
    let mut pose = Pose::new(init.rotation, init.translation)?;
    let mut records = Vec::with_capacity(options.iterations);
    let mut frames = Vec::new();
    let mut divergence = Divergence {
        initial: None,
        streak: 0,
    };
    for iteration in 0..options.iterations {
        let cfg = options.config_at(iteration);
        if options.level_starts(iteration) {
            opt.state = AdamState::new(7);
        }
        opt.config = options.adam_at(cfg.sigma);
        let out = render(mesh, camera, &pose, &cfg)?;
        let (loss, grad) = fit_energy_grad(&out, target)?;
        let record = IterationRecord {
            iteration,
            loss,
            sigma: cfg.sigma,
            gamma: cfg.gamma,
            angle_error: angle_to(&pose),
        };
        records.push(record);
        frames.extend(observer(&record, &out)?);
        divergence.check(iteration, loss, options)?;
        let g = backward(&out, &grad.d_color, &grad.d_alpha, mesh, camera, &pose)?;
        pose = opt.step(&pose, g.d_rotation, g.d_translation)?;
    }
    let last = options.final_config();
    let initial_loss = fit_energy(&render(mesh, camera, init, &last)?, target)?;
    let final_loss = fit_energy(&render(mesh, camera, &pose, &last)?, target)?;
    Ok(FitReport {
        records,
        final_angle_error: angle_to(&pose),
        final_pose: pose,
        initial_loss,
        final_loss,
        displacements: Vec::new(),
        hidden_gradient_counts: Vec::new(),
        frames,
        wall_time: start.elapsed(),
    })
}

/// Vertices whose incident faces all point away from the camera.
pub fn back_facing_vertices(mesh: &Mesh, camera: &Camera, pose: &Pose) -> Vec<bool> {
    let world = world_vertices(mesh, pose);
    let mut front = vec![false; mesh.vertex_count()];
    let mut touched = vec![false; mesh.vertex_count()];
    for f in mesh.faces() {
        let n = (world[f[1]] - world[f[0]]).cross(&(world[f[2]] - world[f[0]]));
        let centroid = (world[f[0]] + world[f[1]] + world[f[2]]) / 3.0;
        let facing = n.dot(&(camera.eye - centroid)) > 0.0;
        for &v in f {
            touched[v] = true;
            front[v] |= facing;
        }
    }
    front.iter().zip(&touched).map(|(f, t)| *t && !f).collect()
}

pub fn fit_nonrigid(
    mesh: &Mesh,
    camera: &Camera,
    pose: &Pose,
    target: &RgbaImage,
    mu: f64,
    options: &FitOptions,
) -> Result<FitReport> {
    fit_nonrigid_observed(mesh, camera, pose, target, mu, options, &mut |_, _| Ok(None))
}

/// Adam on per-vertex displacements minimizing the fit energy plus `mu`
/// times the Laplacian loss of the displaced shape.
pub fn fit_nonrigid_observed(
    mesh: &Mesh,
    camera: &Camera,
    pose: &Pose,
    target: &RgbaImage,
    mu: f64,
    options: &FitOptions,
    observer: &mut Observer<'_>,
) -> Result<FitReport> {
    check_target(options, target)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("mu must be non-negative, got {mu}")));
    }
    let start = Instant::now();
    let n = mesh.vertex_count();
    let mut rho = vec![0.0; 3 * n];
    let mut state = AdamState::new(3 * n);
    let as_vecs = |flat: &[f64]| -> Vec<Vec3> { flat.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect() };
    let energy = |m: &Mesh, cfg: &RenderConfig| -> Result<f64> {
        let img = fit_energy(&render(m, camera, pose, cfg)?, target)?;
        Ok(img + mu * laplacian_grad(m, m.vertices())?.0)
    };
    let mut records = Vec::with_capacity(options.iterations);
    let mut frames = Vec::new();
    let mut hidden_counts = Vec::with_capacity(options.iterations);
    let mut divergence = Divergence {
        initial: None,
        streak: 0,
    };
    for iteration in 0..options.iterations {
        let cfg = options.config_at(iteration);
        if options.level_starts(iteration) {
            state = AdamState::new(3 * n);
        }
        let current = displace(mesh, &as_vecs(&rho))?;
        let out = render(&current, camera, pose, &cfg)?;
        let (image_loss, grad) = fit_energy_grad(&out, target)?;
        let (lap, lap_grad) = laplacian_grad(&current, current.vertices())?;
        let loss = image_loss + mu * lap;
        let record = IterationRecord {
            iteration,
            loss,
            sigma: cfg.sigma,
            gamma: cfg.gamma,
            angle_error: None,
        };
        records.push(record);
        frames.extend(observer(&record, &out)?);
        divergence.check(iteration, loss, options)?;
        let g = backward(&out, &grad.d_color, &grad.d_alpha, &current, camera, pose)?;
        let hidden = back_facing_vertices(&current, camera, pose);
        hidden_counts.push(
            g.d_displacements
                .iter()
                .zip(&hidden)
                .filter(|(d, h)| **h && d.norm() > 0.0)
                .count(),
        );
        let flat: Vec<f64> = g
            .d_displacements
            .iter()
            .zip(&lap_grad)
            .flat_map(|(d, l)| {
                let t = d + l * mu;
                [t.x, t.y, t.z]
            })
            .collect();
        adam_step(&mut rho, &flat, &mut state, &options.adam_at(cfg.sigma))?;
    }
    let last = options.final_config();
    let displacements = as_vecs(&rho);
    let initial_loss = energy(mesh, &last)?;
    let final_loss = energy(&displace(mesh, &displacements)?, &last)?;
    Ok(FitReport {
        records,
        final_pose: *pose,
        final_angle_error: None,
        initial_loss,
        final_loss,
        displacements,
        hidden_gradient_counts: hidden_counts,
        frames,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// Initial rotation within `max_angle` radians of the target.
    Near { max_angle: f64 },
    /// Target and initial rotation drawn independently and uniformly.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub final_loss: f64,
}

/// Random target/initial rotation pair for `trial`, depending only on
/// `(seed, trial)`.
pub fn trial_poses(seed: u64, trial: usize, mode: InitMode) -> (Pose, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let target = random_rotation(&mut rng);
    let init = match mode {
        InitMode::Uniform => random_rotation(&mut rng),
        InitMode::Near { max_angle } => {
            let axis = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if (1e-3..=1.0).contains(&v.norm()) {
                    break v;
                }
            };
            let angle = rng.random_range(0.0..=max_angle);
            quat_mul(quat_from_axis_angle(axis, angle), target)
        }
    };
    (
        Pose::from_raw(target, Vec3::zeros()),
        Pose::from_raw(init, Vec3::zeros()),
    )
}

/// Independent rotation fits in parallel, returned in trial order. Targets
/// are rendered at `target_config`; translation stays at the origin.
pub fn pose_trials(
    mesh: &Mesh,
    camera: &Camera,
    target_config: &RenderConfig,
    options: &FitOptions,
    trials: usize,
    seed: u64,
    mode: InitMode,
) -> Result<Vec<TrialResult>> {
    let mut options = options.clone();
    options.fix_translation = true;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (truth, init) = trial_poses(seed, trial, mode);
            let target = render(mesh, camera, &truth, target_config)?.to_rgba();
            let report = fit_rigid_pose(mesh, camera, &target, &init, Some(&truth), &options)?;
            Ok(TrialResult {
                trial,
                initial_error: rotation_geodesic_angle(init.rotation, truth.rotation),
                final_error: report.final_angle_error.expect("truth is known"),
                final_loss: report.final_loss,
            })
        })
        .collect()
}

pub fn mean_final_error(results: &[TrialResult]) -> f64 {
    results.iter().map(|r| r.final_error).sum::<f64>() / results.len().max(1) as f64
}
