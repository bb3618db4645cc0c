use super::Lighting;
use crate::Vec3;

/// A shaded fragment color and the intermediate terms of the shading model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeEval {
    pub color: Vec3,
    pub albedo: Vec3,
    /// `ambient + diffuse * max(0, <n, -l>)`, or 1 for flat shading.
    pub factor: f64,
    /// `<n, -l> > 0`, i.e. the diffuse term is active.
    pub lit: bool,
    /// Channels where `albedo * factor` fell outside `[0,1]` and was clamped.
    pub clamped: [bool; 3],
}

pub fn shade(colors: [&Vec3; 3], bary: &[f64; 3], normal: &Vec3, lighting: &Lighting) -> ShadeEval {
    let albedo = colors[0] * bary[0] + colors[1] * bary[1] + colors[2] * bary[2];
    let (factor, lit) = match lighting {
        Lighting::Flat => (1.0, false),
        Lighting::Directional {
            ambient,
            diffuse,
            direction,
        } => {
            let cos = -normal.dot(direction);
            (ambient + diffuse * cos.max(0.0), cos > 0.0)
        }
    };
    let raw = albedo * factor;
    let mut clamped = [false; 3];
    let mut color = raw;
    for k in 0..3 {
        if !(0.0..=1.0).contains(&raw[k]) {
            clamped[k] = true;
            color[k] = raw[k].clamp(0.0, 1.0);
        }
    }
    ShadeEval {
        color,
        albedo,
        factor,
        lit,
        clamped,
    }
}
