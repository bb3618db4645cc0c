use nalgebra::Matrix3;

use super::DistanceMetric;
use crate::camera::ScreenVertex;
use crate::Vec2;

/// Screen triangles with area at or below this (NDC^2) are skipped.
pub const DEGENERATE_SCREEN_AREA: f64 = 1e-12;

/// A projected, non-degenerate triangle with its barycentric solve matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenTriangle {
    pub points: [Vec2; 3],
    pub depths: [f64; 3],
    /// Inverse of `[[x0 x1 x2], [y0 y1 y2], [1 1 1]]`.
    pub inverse: Matrix3<f64>,
    pub det: f64,
    /// `1 / |p_{k+1} - p_k|^2` per edge.
    pub inv_edge_len2: [f64; 3],
}

impl ScreenTriangle {
    /// `None` for degenerate triangles, which contribute nothing.
    pub fn new(points: [Vec2; 3], depths: [f64; 3]) -> Option<Self> {
        let [a, b, c] = points;
        let det = a.x * (b.y - c.y) - b.x * (a.y - c.y) + c.x * (a.y - b.y);
        if !(det.abs() * 0.5 > DEGENERATE_SCREEN_AREA) {
            return None;
        }
        let mut inverse = Matrix3::zeros();
        for k in 0..3 {
            let p1 = points[(k + 1) % 3];
            let p2 = points[(k + 2) % 3];
            inverse[(k, 0)] = (p1.y - p2.y) / det;
            inverse[(k, 1)] = (p2.x - p1.x) / det;
            inverse[(k, 2)] = (p1.x * p2.y - p2.x * p1.y) / det;
        }
        let inv_edge_len2 = [0, 1, 2].map(|k| 1.0 / (points[(k + 1) % 3] - points[k]).norm_squared());
        Some(Self {
            points,
            depths,
            inverse,
            det,
            inv_edge_len2,
        })
    }

    pub fn from_screen(v: [&ScreenVertex; 3]) -> Option<Self> {
        if v.iter().any(|s| s.clipped) {
            return None;
        }
        Self::new([v[0].uv, v[1].uv, v[2].uv], [v[0].depth, v[1].depth, v[2].depth])
    }

    /// Unclipped barycentric coordinates `U^{-1} [x, y, 1]`.
    pub fn barycentric(&self, p: &Vec2) -> [f64; 3] {
        let m = &self.inverse;
        [
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)],
        ]
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        let [a, b, c] = self.points;
        (
            Vec2::new(a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y)),
            Vec2::new(a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y)),
        )
    }
}

/// Result of a signed distance evaluation, with what the backward pass needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEval {
    pub value: f64,
    pub bary: [f64; 3],
    pub inside: bool,
    /// Barycentric coordinate of the closest edge point (Euclidean metric).
    pub closest: [f64; 3],
    /// Closest edge `k` runs from vertex `k` to vertex `k + 1`, or the closest
    /// vertex when `endpoint == 3` (Euclidean); index of the smallest
    /// coordinate (barycentric).
    pub feature: u8,
    /// 0: closest point interior to edge `feature`, 3: closest point is vertex `feature`.
    pub endpoint: u8,
}

pub fn signed_distance(pixel: &Vec2, tri: &ScreenTriangle, metric: DistanceMetric) -> DistanceEval {
    let bary = tri.barycentric(pixel);
    let inside = bary.iter().all(|&b| b >= 0.0);
    match metric {
        DistanceMetric::Barycentric => {
            let mut s = 0;
            for k in 1..3 {
                if bary[k] < bary[s] {
                    s = k;
                }
            }
            let mut closest = [0.0; 3];
            closest[s] = 1.0;
            DistanceEval {
                value: bary[s],
                bary,
                inside,
                closest,
                feature: s as u8,
                endpoint: 0,
            }
        }
        DistanceMetric::Euclidean => {
            let mut best = f64::INFINITY;
            let mut best_edge = 0;
            let mut best_s = 0.0;
            let mut best_end = None;
            for k in 0..3 {
                let a = tri.points[k];
                let b = tri.points[(k + 1) % 3];
                let ab = b - a;
                let raw = (pixel - a).dot(&ab) * tri.inv_edge_len2[k];
                let (s, end) = if raw <= 0.0 {
                    (0.0, Some(k))
                } else if raw >= 1.0 {
                    (1.0, Some((k + 1) % 3))
                } else {
                    (raw, None)
                };
                let d2 = (a + ab * s - pixel).norm_squared();
                if d2 < best {
                    best = d2;
                    best_edge = k;
                    best_s = s;
                    best_end = end;
                }
            }
            let mut closest = [0.0; 3];
            closest[best_edge] = 1.0 - best_s;
            closest[(best_edge + 1) % 3] = best_s;
            // a vertex shared by two edges is one feature, whichever edge won the tie
            let (feature, endpoint) = match best_end {
                Some(v) => (v as u8, 3),
                None => (best_edge as u8, 0),
            };
            DistanceEval {
                value: if inside { best } else { -best },
                bary,
                inside,
                closest,
                feature,
                endpoint,
            }
        }
    }
}

/// `sigmoid(distance / sigma)` without overflow.
pub fn probability(distance: f64, sigma: f64) -> f64 {
    sigmoid(distance / sigma)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(sigmoid(x), sigmoid(-x), ln sigmoid(x), ln sigmoid(-x))` from one exponential.
pub(crate) fn sigmoid_parts(x: f64) -> (f64, f64, f64, f64) {
    let e = (-x.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e / (1.0 + e);
    let l = e.ln_1p();
    if x >= 0.0 {
        (big, small, -l, -x - l)
    } else {
        (small, big, x - l, -l)
    }
}

/// `ln(sigmoid(x))`, exact for large negative `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Which coordinates the clamp touched: bit `k` of `low` means `b_k < 0`,
/// bit `k` of `high` means `b_k > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClipState {
    pub low: u8,
    pub high: u8,
    /// Every coordinate clamped to zero; the uniform fallback was used.
    pub fallback: bool,
}

impl ClipState {
    pub fn is_clamped(&self, k: usize) -> bool {
        (self.low | self.high) & (1 << k) != 0
    }

    pub fn any(&self) -> bool {
        self.low | self.high != 0
    }
}

/// Clamps barycentric coordinates to `[0,1]` and renormalizes; coordinates
/// already inside the triangle are returned unchanged.
pub fn clipped_barycentric(bary: [f64; 3]) -> ([f64; 3], ClipState) {
    let mut state = ClipState::default();
    let mut clamped = bary;
    for k in 0..3 {
        if bary[k] < 0.0 {
            clamped[k] = 0.0;
            state.low |= 1 << k;
        } else if bary[k] > 1.0 {
            clamped[k] = 1.0;
            state.high |= 1 << k;
        }
    }
    if !state.any() {
        return (bary, state);
    }
    let sum: f64 = clamped.iter().sum();
    if sum <= 0.0 {
        state.fallback = true;
        return ([1.0 / 3.0; 3], state);
    }
    (clamped.map(|c| c / sum), state)
}

/// `(z_far - Z) / (z_far - z_near)` with `Z` clipped to the frustum range.
pub fn normalize_depth(depth: f64, z_near: f64, z_far: f64) -> f64 {
    let z = depth.clamp(z_near, z_far);
    (z_far - z) / (z_far - z_near)
}
