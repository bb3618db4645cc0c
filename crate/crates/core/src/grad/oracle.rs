//! Brute-force z-buffer rasterizer used as the reference for the soft
//! renderer's limiting behavior. It shares only the projection with the
//! soft path.

use crate::camera::{pixel_center, project, Camera, Pose};
use crate::error::Result;
use crate::image::RgbaImage;
use crate::mesh::Mesh;
use crate::raster::{Lighting, RenderConfig};
use crate::{Vec2, Vec3};

/// Nearest covering triangle per pixel, shaded with exact barycentric
/// interpolation; alpha is 1 where any triangle covers the pixel center.
pub fn hard_raster_oracle(mesh: &Mesh, camera: &Camera, pose: &Pose, config: &RenderConfig) -> Result<RgbaImage> {
    config.validate()?;
    let screen = project(mesh, camera, pose);
    let r = pose.rotation_matrix();
    let world: Vec<Vec3> = mesh.vertices().iter().map(|v| r * v + pose.translation).collect();
    let (h, w) = (config.height, config.width);
    let bg = config.background;
    let mut img = RgbaImage::new(h, w, [bg.x, bg.y, bg.z, 0.0]);
    for row in 0..h {
        for col in 0..w {
            let p = pixel_center(row, col, h, w);
            let mut best: Option<(f64, Vec3)> = None;
            for f in mesh.faces() {
                let s = [screen[f[0]], screen[f[1]], screen[f[2]]];
                if s.iter().any(|v| v.clipped) {
                    continue;
                }
                let (a, b, c) = (s[0].uv, s[1].uv, s[2].uv);
                let area = (b - a).perp(&(c - a));
                if area.abs() * 0.5 <= 1e-12 {
                    continue;
                }
                let l0 = (b - p).perp(&(c - p)) / area;
                let l1 = (c - p).perp(&(a - p)) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let depth = l0 * s[0].depth + l1 * s[1].depth + l2 * s[2].depth;
                if depth < camera.z_near || depth > camera.z_far {
                    continue;
                }
                if best.is_some_and(|(d, _)| d <= depth) {
                    continue;
                }
                let albedo = mesh.colors()[f[0]] * l0 + mesh.colors()[f[1]] * l1 + mesh.colors()[f[2]] * l2;
                let factor = match config.lighting {
                    Lighting::Flat => 1.0,
                    Lighting::Directional {
                        ambient,
                        diffuse,
                        direction,
                    } => {
                        let n = (world[f[1]] - world[f[0]]).cross(&(world[f[2]] - world[f[0]]));
                        let n = if n.norm() > 0.0 { n.normalize() } else { n };
                        ambient + diffuse * (-n.dot(&direction)).max(0.0)
                    }
                };
                best = Some((depth, (albedo * factor).map(|x| x.clamp(0.0, 1.0))));
            }
            if let Some((_, c)) = best {
                img.pixels_mut()[row * w + col] = [c.x, c.y, c.z, 1.0];
            }
        }
    }
    Ok(img)
}

/// Distance in pixels from each pixel center to the nearest projected edge of
/// any unclipped triangle; `f64::INFINITY` when no triangle is visible.
pub fn edge_clearance(mesh: &Mesh, camera: &Camera, pose: &Pose, height: usize, width: usize) -> Vec<f64> {
    let screen = project(mesh, camera, pose);
    let to_px = |uv: Vec2| Vec2::new((uv.x + 1.0) * 0.5 * width as f64, (1.0 - uv.y) * 0.5 * height as f64);
    let mut segments = Vec::new();
    for f in mesh.faces() {
        if f.iter().any(|&i| screen[i].clipped) {
            continue;
        }
        for k in 0..3 {
            segments.push((to_px(screen[f[k]].uv), to_px(screen[f[(k + 1) % 3]].uv)));
        }
    }
    let mut out = vec![f64::INFINITY; height * width];
    for row in 0..height {
        for col in 0..width {
            let p = to_px(pixel_center(row, col, height, width));
            out[row * width + col] = segments
                .iter()
                .map(|&(a, b)| {
                    let e = b - a;
                    let t = if e.norm_squared() > 0.0 {
                        ((p - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    (p - (a + e * t)).norm()
                })
                .fold(f64::INFINITY, f64::min);
        }
    }
    out
}
