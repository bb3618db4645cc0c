//! Analytic backward pass of the soft rasterizer.
//!
//! The image gradient is factored through the per-fragment coverage
//! probability (screen-space position), the normalized depth (softmax weight)
//! and the shaded color, then pulled back through the projection and pose.

pub mod check;
mod oracle;

pub use oracle::{edge_clearance, hard_raster_oracle};

use nalgebra::{Matrix3, Vector4};
use rayon::prelude::*;

use crate::camera::{screen_jacobian, world_vertices, Camera, Pose};
use crate::error::{Error, Result};
use crate::mesh::{face_cross, Mesh, DEGENERATE_AREA};
use crate::raster::{
    clipped_barycentric, shade, ClipState, DistanceMetric, Fragment, Lighting, RenderOutput, ScreenTriangle, ShadeEval,
    Tape,
};
use crate::{Vec2, Vec3};

/// Gradients of a scalar loss with respect to every differentiable input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// With respect to posed (world-space) vertex positions.
    pub d_vertices: Vec<Vec3>,
    pub d_colors: Vec<Vec3>,
    /// With respect to the stored `[w, x, y, z]` quaternion, through its normalization.
    pub d_rotation: [f64; 4],
    pub d_translation: Vec3,
    /// With respect to model-space vertex positions (per-vertex displacements).
    pub d_displacements: Vec<Vec3>,
}

impl GradientSet {
    pub fn zeros(vertex_count: usize) -> Self {
        Self {
            d_vertices: vec![Vec3::zeros(); vertex_count],
            d_colors: vec![Vec3::zeros(); vertex_count],
            d_rotation: [0.0; 4],
            d_translation: Vec3::zeros(),
            d_displacements: vec![Vec3::zeros(); vertex_count],
        }
    }

    pub fn is_finite(&self) -> bool {
        let v = |xs: &[Vec3]| xs.iter().all(|x| x.iter().all(|c| c.is_finite()));
        v(&self.d_vertices)
            && v(&self.d_colors)
            && v(&self.d_displacements)
            && self.d_rotation.iter().all(|c| c.is_finite())
            && self.d_translation.iter().all(|c| c.is_finite())
    }
}

/// Per-fragment partials of one pixel's color loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateGrad {
    pub d_prob: f64,
    pub d_depth: f64,
    pub d_color: Vec3,
}

/// Softmax aggregate: `dI/dD_j = w_j / D_j (C_j - I)`, `dI/dz_j = w_j / gamma (C_j - I)`,
/// `dI/dC_j = w_j`, each contracted with the upstream `d_color`.
pub fn grad_color_aggregate(
    weights: &[f64],
    probs: &[f64],
    colors: &[Vec3],
    pixel_color: &Vec3,
    d_color: &Vec3,
    gamma: f64,
) -> Vec<AggregateGrad> {
    weights
        .iter()
        .zip(probs)
        .zip(colors)
        .map(|((w, p), c)| {
            let g = (c - pixel_color).dot(d_color);
            AggregateGrad {
                d_prob: w / p.max(1e-300) * g,
                d_depth: w / gamma * g,
                d_color: d_color * *w,
            }
        })
        .collect()
}

/// Occupancy aggregate: `dI_s/dD_j = (1 - I_s) / (1 - D_j)`, contracted with `d_alpha`.
pub fn grad_silhouette_aggregate(prob_complements: &[f64], transmittance: f64, d_alpha: f64) -> Vec<f64> {
    prob_complements
        .iter()
        .map(|c| d_alpha * transmittance / c.max(1e-300))
        .collect()
}

/// `dD/dU` for the three screen vertices of a triangle, holding the closest
/// point (Euclidean) or the argmin coordinate (barycentric) fixed.
pub fn grad_distance(
    pixel: &Vec2,
    tri: &ScreenTriangle,
    metric: DistanceMetric,
    bary: &[f64; 3],
    closest: &[f64; 3],
    feature: usize,
    inside: bool,
) -> [Vec2; 3] {
    match metric {
        DistanceMetric::Euclidean => {
            let q = tri.points[0] * closest[0] + tri.points[1] * closest[1] + tri.points[2] * closest[2];
            let sign = if inside { 2.0 } else { -2.0 };
            let r = (q - pixel) * sign;
            [r * closest[0], r * closest[1], r * closest[2]]
        }
        DistanceMetric::Barycentric => {
            let mut g = [0.0; 3];
            g[feature] = 1.0;
            barycentric_backward(tri, bary, &g)
        }
    }
}

/// Pulls `dL/db` back to the screen vertices through `b = U^{-1} p`.
fn barycentric_backward(tri: &ScreenTriangle, bary: &[f64; 3], g_bary: &[f64; 3]) -> [Vec2; 3] {
    // d b_s / d U_kl = -(U^{-1})_sk b_l ; only the x, y rows of U are free
    let m = &tri.inverse;
    let rx = g_bary[0] * m[(0, 0)] + g_bary[1] * m[(1, 0)] + g_bary[2] * m[(2, 0)];
    let ry = g_bary[0] * m[(0, 1)] + g_bary[1] * m[(1, 1)] + g_bary[2] * m[(2, 1)];
    let r = Vec2::new(-rx, -ry);
    [r * bary[0], r * bary[1], r * bary[2]]
}

/// Straight-through clamp: clamped coordinates receive no gradient.
fn clip_backward(bary: &[f64; 3], clipped: &[f64; 3], state: &ClipState, g: &[f64; 3]) -> [f64; 3] {
    if !state.any() {
        return *g;
    }
    if state.fallback {
        return [0.0; 3];
    }
    let sum: f64 = bary.iter().map(|b| b.clamp(0.0, 1.0)).sum();
    let dot = g[0] * clipped[0] + g[1] * clipped[1] + g[2] * clipped[2];
    let mut out = [0.0; 3];
    for k in 0..3 {
        if !state.is_clamped(k) {
            out[k] = (g[k] - dot) / sum;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeGrad {
    pub d_colors: [Vec3; 3],
    pub d_bary: [f64; 3],
    pub d_normal: Vec3,
}

/// Backward of [`shade`] for an upstream `d_color`.
pub fn grad_shading(
    colors: [&Vec3; 3],
    bary: &[f64; 3],
    eval: &ShadeEval,
    lighting: &Lighting,
    d_color: &Vec3,
) -> ShadeGrad {
    let mut g_pre = *d_color;
    for k in 0..3 {
        if eval.clamped[k] {
            g_pre[k] = 0.0;
        }
    }
    let g_albedo = g_pre * eval.factor;
    let d_normal = match lighting {
        Lighting::Directional { diffuse, direction, .. } if eval.lit => {
            -direction * (g_pre.dot(&eval.albedo) * diffuse)
        }
        _ => Vec3::zeros(),
    };
    ShadeGrad {
        d_colors: [g_albedo * bary[0], g_albedo * bary[1], g_albedo * bary[2]],
        d_bary: [
            colors[0].dot(&g_albedo),
            colors[1].dot(&g_albedo),
            colors[2].dot(&g_albedo),
        ],
        d_normal,
    }
}

/// Pulls a unit-normal gradient back to the face's three vertices.
fn normal_backward(world: &[Vec3], face: &[usize; 3], g_normal: &Vec3) -> Option<[Vec3; 3]> {
    let c = face_cross(world, face);
    let len = c.norm();
    if len < DEGENERATE_AREA {
        return None;
    }
    let n = c / len;
    let g_c = (g_normal - n * n.dot(g_normal)) / len;
    let v0 = world[face[0]];
    let e1 = world[face[1]] - v0;
    let e2 = world[face[2]] - v0;
    let g_e1 = e2.cross(&g_c);
    let g_e2 = g_c.cross(&e1);
    Some([-(g_e1 + g_e2), g_e1, g_e2])
}

/// Rows per independently accumulated block; fixed so results do not depend
/// on the thread count.
const ROWS_PER_BLOCK: usize = 4;

struct Accum {
    uv: Vec<Vec2>,
    depth: Vec<f64>,
    color: Vec<Vec3>,
    normal: Vec<Vec3>,
}

impl Accum {
    fn new(vertices: usize, faces: usize) -> Self {
        Self {
            uv: vec![Vec2::zeros(); vertices],
            depth: vec![0.0; vertices],
            color: vec![Vec3::zeros(); vertices],
            normal: vec![Vec3::zeros(); faces],
        }
    }

    fn add(&mut self, other: &Accum) {
        for (a, b) in self.uv.iter_mut().zip(&other.uv) {
            *a += b;
        }
        for (a, b) in self.depth.iter_mut().zip(&other.depth) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
        for (a, b) in self.normal.iter_mut().zip(&other.normal) {
            *a += b;
        }
    }
}

fn check_tape(tape: &Tape, d_color: &[Vec3], d_alpha: &[f64], mesh: &Mesh, camera: &Camera, pose: &Pose) -> Result<()> {
    let pixels = tape.config.height * tape.config.width;
    if d_color.len() != pixels || d_alpha.len() != pixels {
        return Err(Error::TapeMismatch(format!(
            "upstream gradients have {} / {} entries for {} pixels",
            d_color.len(),
            d_alpha.len(),
            pixels
        )));
    }
    if mesh.vertex_count() != tape.world.len() || mesh.face_count() != tape.triangles.len() {
        return Err(Error::TapeMismatch("mesh size differs from the rendered mesh".into()));
    }
    if *camera != tape.camera || *pose != tape.pose {
        return Err(Error::TapeMismatch(
            "camera or pose differs from the forward pass".into(),
        ));
    }
    if world_vertices(mesh, pose) != tape.world {
        return Err(Error::TapeMismatch(
            "vertex positions differ from the forward pass".into(),
        ));
    }
    Ok(())
}

/// Gradients of `sum_i <d_color_i, I_i> + d_alpha_i * A_i` for the render
/// recorded in `output`.
pub fn backward(
    output: &RenderOutput,
    d_color: &[Vec3],
    d_alpha: &[f64],
    mesh: &Mesh,
    camera: &Camera,
    pose: &Pose,
) -> Result<GradientSet> {
    let tape = &output.tape;
    check_tape(tape, d_color, d_alpha, mesh, camera, pose)?;
    let cfg = &tape.config;
    let (h, w) = (cfg.height, cfg.width);
    let (nv, nf) = (mesh.vertex_count(), mesh.face_count());
    let faces = mesh.faces();
    let colors = mesh.colors();
    let depth_scale = -1.0 / (camera.z_far - camera.z_near);

    let block_count = h.div_ceil(ROWS_PER_BLOCK);
    let blocks: Vec<Accum> = (0..block_count)
        .into_par_iter()
        .map(|block| {
            let mut acc = Accum::new(nv, nf);
            let rows = block * ROWS_PER_BLOCK..((block + 1) * ROWS_PER_BLOCK).min(h);
            for row in rows {
                for col in 0..w {
                    let i = row * w + col;
                    let record = &tape.buffer.pixels[i];
                    let (d_i, d_a) = (d_color[i], d_alpha[i]);
                    if d_i == Vec3::zeros() && d_a == 0.0 {
                        continue;
                    }
                    let pixel = crate::camera::pixel_center(row, col, h, w);
                    for frag in tape.buffer.pixel_fragments(i) {
                        fragment_backward(
                            frag,
                            record.color,
                            record.transmittance,
                            &d_i,
                            d_a,
                            &pixel,
                            tape,
                            faces,
                            colors,
                            depth_scale,
                            &mut acc,
                        );
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::new(nv, nf);
    for b in &blocks {
        total.add(b);
    }

    let mut d_vertices = vec![Vec3::zeros(); nv];
    for (v, g) in d_vertices.iter_mut().enumerate() {
        if total.uv[v] == Vec2::zeros() && total.depth[v] == 0.0 {
            continue;
        }
        let (d_uv, d_depth) = screen_jacobian(&tape.world[v], camera);
        *g = d_uv.transpose() * total.uv[v] + d_depth * total.depth[v];
    }
    for (fi, g_n) in total.normal.iter().enumerate() {
        if *g_n == Vec3::zeros() {
            continue;
        }
        if let Some(gs) = normal_backward(&tape.world, &faces[fi], g_n) {
            for k in 0..3 {
                d_vertices[faces[fi][k]] += gs[k];
            }
        }
    }

    let rot: Matrix3<f64> = pose.rotation_matrix();
    let mut d_rotation = Vector4::zeros();
    let mut d_translation = Vec3::zeros();
    let mut d_displacements = Vec::with_capacity(nv);
    for (v, g) in d_vertices.iter().enumerate() {
        d_displacements.push(rot.transpose() * g);
        if *g != Vec3::zeros() {
            d_rotation += pose.rotation_jacobian(&mesh.vertices()[v]).transpose() * g;
            d_translation += g;
        }
    }
    Ok(GradientSet {
        d_vertices,
        d_colors: total.color,
        d_rotation: d_rotation.into(),
        d_translation,
        d_displacements,
    })
}

#[allow(clippy::too_many_arguments)]
fn fragment_backward(
    frag: &Fragment,
    pixel_color: Vec3,
    transmittance: f64,
    d_i: &Vec3,
    d_a: f64,
    pixel: &Vec2,
    tape: &Tape,
    faces: &[[usize; 3]],
    colors: &[Vec3],
    depth_scale: f64,
    acc: &mut Accum,
) {
    let cfg = &tape.config;
    let face = frag.face as usize;
    let ids = faces[face];
    let tri = tape.triangles[face]
        .as_ref()
        .expect("fragments only come from renderable faces");

    let g_cd = (frag.color - pixel_color).dot(d_i);
    // gradient w.r.t. x = D / sigma, where D_j = sigmoid(x):
    //   color:      w_j / D_j (C_j - I) * D_j (1 - D_j)
    //   silhouette: (1 - I_s) / (1 - D_j) * D_j (1 - D_j)
    let g_x = frag.weight * frag.prob_comp * g_cd + d_a * transmittance * frag.prob;
    let g_dist = g_x / cfg.sigma;
    let g_z = frag.weight / cfg.gamma * g_cd;
    let g_c = d_i * frag.weight;

    let mut g_uv = [Vec2::zeros(); 3];
    if g_dist != 0.0 {
        let d = grad_distance(
            pixel,
            tri,
            cfg.metric,
            &frag.bary,
            &frag.closest,
            frag.feature as usize,
            frag.bary.iter().all(|&b| b >= 0.0),
        );
        for k in 0..3 {
            g_uv[k] += d[k] * g_dist;
        }
    }

    let (bbar, clip) = clipped_barycentric(frag.bary);
    let mut g_bbar = [0.0; 3];
    let z_pix = bbar[0] * tri.depths[0] + bbar[1] * tri.depths[1] + bbar[2] * tri.depths[2];
    if g_z != 0.0 && z_pix >= tape.camera.z_near && z_pix <= tape.camera.z_far {
        let g_zpix = g_z * depth_scale;
        for k in 0..3 {
            acc.depth[ids[k]] += g_zpix * bbar[k];
            g_bbar[k] += g_zpix * tri.depths[k];
        }
    }

    if g_c != Vec3::zeros() {
        let vcolors = [&colors[ids[0]], &colors[ids[1]], &colors[ids[2]]];
        let normal = &tape.normals.normals[face];
        let eval = shade(vcolors, &bbar, normal, &cfg.lighting);
        let sg = grad_shading(vcolors, &bbar, &eval, &cfg.lighting, &g_c);
        for k in 0..3 {
            acc.color[ids[k]] += sg.d_colors[k];
            g_bbar[k] += sg.d_bary[k];
        }
        acc.normal[face] += sg.d_normal;
    }

    if g_bbar != [0.0; 3] {
        let g_b = clip_backward(&frag.bary, &bbar, &clip, &g_bbar);
        let d = barycentric_backward(tri, &frag.bary, &g_b);
        for k in 0..3 {
            g_uv[k] += d[k];
        }
    }
    for k in 0..3 {
        acc.uv[ids[k]] += g_uv[k];
    }
}
