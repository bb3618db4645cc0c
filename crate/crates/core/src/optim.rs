//! Adam and piecewise-constant sharpness schedules.

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. Nothing is modified
/// when a gradient entry is not finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if state.m.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: state.m.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let c1 = 1.0 - config.beta1.powi(state.t as i32);
    let c2 = 1.0 - config.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// Adam over the seven pose parameters `[w, x, y, z, tx, ty, tz]`, with the
/// quaternion renormalized after every step.
#[derive(Debug, Clone)]
pub struct PoseAdam {
    pub config: AdamConfig,
    pub state: AdamState,
    /// Freeze the translation block.
    pub fix_translation: bool,
}

impl PoseAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::new(7),
            fix_translation: false,
        }
    }

    pub fn step(&mut self, pose: &Pose, d_rotation: [f64; 4], d_translation: Vec3) -> Result<Pose> {
        let q = pose.unit_rotation();
        let t = pose.translation;
        let mut params = [q[0], q[1], q[2], q[3], t.x, t.y, t.z];
        let mut grads = [
            d_rotation[0],
            d_rotation[1],
            d_rotation[2],
            d_rotation[3],
            d_translation.x,
            d_translation.y,
            d_translation.z,
        ];
        if self.fix_translation {
            grads[4..].fill(0.0);
        }
        adam_step(&mut params, &grads, &mut self.state, &self.config)?;
        if self.fix_translation {
            params[4..].copy_from_slice(t.as_slice());
        }
        Pose::new(
            [params[0], params[1], params[2], params[3]],
            Vec3::new(params[4], params[5], params[6]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub iteration: usize,
    pub sigma: f64,
    pub gamma: f64,
}

/// Piecewise-constant `(sigma, gamma)` over iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: Vec<ScheduleStep>,
}

pub const DEFAULT_LEVELS: usize = 5;
pub const SCHEDULE_START: f64 = 1e-2;
pub const SCHEDULE_END: f64 = 1e-4;

impl Schedule {
    pub fn new(steps: Vec<ScheduleStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidSchedule("no breakpoints".into()));
        }
        if steps[0].iteration != 0 {
            return Err(Error::InvalidSchedule("first breakpoint must be at iteration 0".into()));
        }
        if steps.windows(2).any(|w| w[0].iteration >= w[1].iteration) {
            return Err(Error::InvalidSchedule("iterations must be strictly increasing".into()));
        }
        if steps
            .iter()
            .any(|s| !(s.sigma > 0.0 && s.gamma > 0.0 && s.sigma.is_finite() && s.gamma.is_finite()))
        {
            return Err(Error::InvalidSchedule("sigma and gamma must be positive".into()));
        }
        Ok(Self { steps })
    }

    pub fn constant(sigma: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![ScheduleStep {
            iteration: 0,
            sigma,
            gamma,
        }])
    }

    /// `levels` equal segments of `iterations`, both sharpness values decaying
    /// geometrically from `start` to `end`.
    pub fn geometric(iterations: usize, levels: usize, start: f64, end: f64) -> Result<Self> {
        if levels == 0 || iterations < levels {
            return Err(Error::InvalidSchedule(format!(
                "{levels} levels over {iterations} iterations"
            )));
        }
        let steps = (0..levels)
            .map(|k| {
                let frac = if levels == 1 {
                    1.0
                } else {
                    k as f64 / (levels - 1) as f64
                };
                let value = start * (end / start).powf(frac);
                ScheduleStep {
                    iteration: k * iterations / levels,
                    sigma: value,
                    gamma: value,
                }
            })
            .collect();
        Self::new(steps)
    }

    /// Five levels from 1e-2 down to 1e-4.
    pub fn default_annealing(iterations: usize) -> Result<Self> {
        Self::geometric(iterations, DEFAULT_LEVELS, SCHEDULE_START, SCHEDULE_END)
    }

    pub fn steps(&self) -> &[ScheduleStep] {
        &self.steps
    }

    pub fn at(&self, iteration: usize) -> (f64, f64) {
        let k = self.steps.partition_point(|s| s.iteration <= iteration) - 1;
        (self.steps[k].sigma, self.steps[k].gamma)
    }
}
