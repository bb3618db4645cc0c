//! Per-pixel fusion of fragments: the depth-weighted softmax for color and
//! the probabilistic union for the silhouette.

use crate::Vec3;

/// Above this many fragments the silhouette product is accumulated in log space.
const LOG_SPACE_FRAGMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxResult {
    pub color: Vec3,
    pub weights: Vec<f64>,
    pub background_weight: f64,
}

/// Overwrites `logits` with softmax weights against a background logit and
/// returns the background weight. Sums run in slice order.
pub(crate) fn normalize_logits(logits: &mut [f64], background_logit: f64) -> f64 {
    let max = logits.iter().fold(background_logit, |m, &l| m.max(l));
    let background = (background_logit - max).exp();
    let mut sum = background;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    background / sum
}

/// Color softmax from log-probabilities, stable for probabilities that
/// underflow in linear space.
pub fn softmax_from_logs(
    log_probs: &[f64],
    depths: &[f64],
    colors: &[Vec3],
    gamma: f64,
    epsilon: f64,
    background: &Vec3,
) -> SoftmaxResult {
    assert_eq!(log_probs.len(), depths.len());
    assert_eq!(log_probs.len(), colors.len());
    let mut weights: Vec<f64> = log_probs.iter().zip(depths).map(|(lp, z)| lp + z / gamma).collect();
    let background_weight = normalize_logits(&mut weights, epsilon / gamma);
    let mut color = background * background_weight;
    for (w, c) in weights.iter().zip(colors) {
        color += c * *w;
    }
    SoftmaxResult {
        color,
        weights,
        background_weight,
    }
}

pub fn aggregate_softmax(
    probs: &[f64],
    depths: &[f64],
    colors: &[Vec3],
    gamma: f64,
    epsilon: f64,
    background: &Vec3,
) -> SoftmaxResult {
    let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    softmax_from_logs(&logs, depths, colors, gamma, epsilon, background)
}

/// `(alpha, prod(1 - D_j))` from the complements `1 - D_j`.
pub fn silhouette_from_complements(complements: &[f64]) -> (f64, f64) {
    let transmittance = if complements.len() > LOG_SPACE_FRAGMENTS {
        complements.iter().map(|c| c.ln()).sum::<f64>().exp()
    } else {
        complements.iter().product()
    };
    (1.0 - transmittance, transmittance)
}

/// As [`silhouette_from_complements`], with `ln(1 - D_j)` supplied.
pub(crate) fn silhouette_from_parts(complements: &[f64], log_complements: &[f64]) -> (f64, f64) {
    let transmittance = if complements.len() > LOG_SPACE_FRAGMENTS {
        log_complements.iter().sum::<f64>().exp()
    } else {
        complements.iter().product()
    };
    (1.0 - transmittance, transmittance)
}

pub fn aggregate_silhouette(probs: &[f64]) -> f64 {
    let comps: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
    silhouette_from_complements(&comps).0
}
