use rayon::prelude::*;

use super::aggregate::{normalize_logits, silhouette_from_parts};
use super::primitives::{clipped_barycentric, normalize_depth, sigmoid_parts, signed_distance, ScreenTriangle};
use super::shading::shade;
use super::{DistanceMetric, RenderConfig};
use crate::camera::{pixel_center, project_world, world_vertices, Camera, Pose, ScreenVertex};
use crate::error::Result;
use crate::image::RgbaImage;
use crate::mesh::{face_normals_of, FaceNormals, Mesh};
use crate::{Vec2, Vec3};

/// One (pixel, triangle) contribution retained for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub face: u32,
    /// Closest edge (Euclidean) or smallest coordinate (barycentric).
    pub feature: u8,
    /// Packed record of every piecewise branch taken for this fragment.
    pub regime: u16,
    /// Signed distance `D(i, j)`.
    pub distance: f64,
    pub prob: f64,
    /// `1 - prob`, evaluated without cancellation.
    pub prob_comp: f64,
    /// Unclipped barycentric coordinates of the pixel.
    pub bary: [f64; 3],
    /// Barycentric coordinates of the closest edge point (Euclidean metric).
    pub closest: [f64; 3],
    /// Normalized depth, larger is closer.
    pub depth: f64,
    pub color: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRecord {
    pub start: u32,
    pub count: u32,
    pub color: Vec3,
    pub alpha: f64,
    /// `prod_j (1 - D_j)`.
    pub transmittance: f64,
    pub background_weight: f64,
    /// Triangles dropped at this pixel by the fast cutoff.
    pub skipped: u32,
}

/// Every fragment of every pixel, stored per image row, grouped by pixel and
/// by ascending face index within a pixel. `PixelRecord::start` is relative
/// to the pixel's row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FragmentBuffer {
    pub width: usize,
    pub pixels: Vec<PixelRecord>,
    pub rows: Vec<Vec<Fragment>>,
}

impl FragmentBuffer {
    pub fn pixel_fragments(&self, pixel: usize) -> &[Fragment] {
        let p = &self.pixels[pixel];
        &self.rows[pixel / self.width][p.start as usize..(p.start + p.count) as usize]
    }

    /// All fragments in pixel order.
    pub fn fragments(&self) -> impl Iterator<Item = &Fragment> {
        self.rows.iter().flatten()
    }

    pub fn fragment_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Forward intermediates consumed by [`crate::grad::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    pub config: RenderConfig,
    pub camera: Camera,
    pub pose: Pose,
    pub world: Vec<Vec3>,
    pub screen: Vec<ScreenVertex>,
    pub normals: FaceNormals,
    /// Renderable screen triangle per face; `None` for clipped or degenerate faces.
    pub triangles: Vec<Option<ScreenTriangle>>,
    pub buffer: FragmentBuffer,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub height: usize,
    pub width: usize,
    pub color: Vec<Vec3>,
    pub alpha: Vec<f64>,
    pub tape: Tape,
}

impl RenderOutput {
    pub fn to_rgba(&self) -> RgbaImage {
        let data = self
            .color
            .iter()
            .zip(&self.alpha)
            .map(|(c, a)| [c.x, c.y, c.z, *a])
            .collect();
        RgbaImage::from_pixels(self.height, self.width, data).expect("sizes agree")
    }

    /// Packed branch record of every fragment, for detecting piecewise regime
    /// changes between two renders of the same scene.
    pub fn regime_signature(&self) -> Vec<(u32, u16)> {
        self.tape.buffer.fragments().map(|f| (f.face, f.regime)).collect()
    }
}

pub fn render(mesh: &Mesh, camera: &Camera, pose: &Pose, config: &RenderConfig) -> Result<RenderOutput> {
    config.validate()?;
    camera.validate()?;
    let world = world_vertices(mesh, pose);
    render_world(mesh, world, camera, pose, config)
}

struct FaceSetup {
    face: u32,
    tri: ScreenTriangle,
    ids: [usize; 3],
    /// Conservative pixel-space bounds for the fast cutoff, inclusive.
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Renders from already-posed world vertices; `pose` is recorded on the tape.
pub fn render_world(
    mesh: &Mesh,
    world: Vec<Vec3>,
    camera: &Camera,
    pose: &Pose,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    let screen = project_world(&world, camera);
    let normals = face_normals_of(&world, mesh.faces());
    let triangles: Vec<Option<ScreenTriangle>> = mesh
        .faces()
        .iter()
        .map(|f| ScreenTriangle::from_screen([&screen[f[0]], &screen[f[1]], &screen[f[2]]]))
        .collect();

    let (h, w) = (config.height, config.width);
    let threshold = config.distance_threshold();
    let setups: Vec<FaceSetup> = triangles
        .iter()
        .enumerate()
        .filter_map(|(fi, t)| {
            let tri = (*t)?;
            let (rows, cols) = match threshold {
                Some(th) => pixel_bounds(&tri, config.metric, -th, h, w),
                None => ((0, h - 1), (0, w - 1)),
            };
            Some(FaceSetup {
                face: fi as u32,
                tri,
                ids: mesh.faces()[fi],
                rows,
                cols,
            })
        })
        .collect();

    let ctx = RowContext {
        mesh,
        camera,
        config,
        normals: &normals,
        setups: &setups,
        threshold,
    };
    let rows: Vec<(Vec<PixelRecord>, Vec<Fragment>)> = (0..h).into_par_iter().map(|r| ctx.render_row(r)).collect();

    let mut buffer = FragmentBuffer {
        width: w,
        pixels: Vec::with_capacity(h * w),
        rows: Vec::with_capacity(h),
    };
    for (pixels, fragments) in rows {
        buffer.pixels.extend(pixels);
        buffer.rows.push(fragments);
    }
    let color = buffer.pixels.iter().map(|p| p.color).collect();
    let alpha = buffer.pixels.iter().map(|p| p.alpha).collect();
    Ok(RenderOutput {
        height: h,
        width: w,
        color,
        alpha,
        tape: Tape {
            config: *config,
            camera: *camera,
            pose: *pose,
            world,
            screen,
            normals,
            triangles,
            buffer,
        },
    })
}

/// Inclusive pixel rows/cols whose centers can lie within `reach` of the
/// triangle under `metric`.
fn pixel_bounds(
    tri: &ScreenTriangle,
    metric: DistanceMetric,
    reach: f64,
    h: usize,
    w: usize,
) -> ((usize, usize), (usize, usize)) {
    let (lo, hi) = match metric {
        DistanceMetric::Euclidean => {
            let r = reach.sqrt();
            let (lo, hi) = tri.bounds();
            (lo - Vec2::repeat(r), hi + Vec2::repeat(r))
        }
        DistanceMetric::Barycentric => {
            // all b_k >= -c is the triangle scaled by (1 + 3c) about its centroid
            let c = (tri.points[0] + tri.points[1] + tri.points[2]) / 3.0;
            let s = 1.0 + 3.0 * reach;
            bounds_of(tri.points.map(|p| c + (p - c) * s))
        }
    };
    // NDC -> continuous pixel coordinates; centers sit at index + 0.5
    let col_lo = ((lo.x + 1.0) * 0.5 * w as f64 - 0.5).floor();
    let col_hi = ((hi.x + 1.0) * 0.5 * w as f64 - 0.5).ceil();
    let row_lo = ((1.0 - hi.y) * 0.5 * h as f64 - 0.5).floor();
    let row_hi = ((1.0 - lo.y) * 0.5 * h as f64 - 0.5).ceil();
    let clamp = |v: f64, n: usize| v.clamp(0.0, n as f64 - 1.0) as usize;
    if col_hi < 0.0 || row_hi < 0.0 || col_lo > (w - 1) as f64 || row_lo > (h - 1) as f64 {
        // empty range
        return ((1, 0), (1, 0));
    }
    (
        (clamp(row_lo, h), clamp(row_hi, h)),
        (clamp(col_lo, w), clamp(col_hi, w)),
    )
}

fn bounds_of(p: [Vec2; 3]) -> (Vec2, Vec2) {
    (
        Vec2::new(p[0].x.min(p[1].x).min(p[2].x), p[0].y.min(p[1].y).min(p[2].y)),
        Vec2::new(p[0].x.max(p[1].x).max(p[2].x), p[0].y.max(p[1].y).max(p[2].y)),
    )
}

struct RowContext<'a> {
    mesh: &'a Mesh,
    camera: &'a Camera,
    config: &'a RenderConfig,
    normals: &'a FaceNormals,
    setups: &'a [FaceSetup],
    threshold: Option<f64>,
}

impl RowContext<'_> {
    fn render_row(&self, row: usize) -> (Vec<PixelRecord>, Vec<Fragment>) {
        let cfg = self.config;
        let (h, w) = (cfg.height, cfg.width);
        let colors = self.mesh.colors();
        let mut pixels = Vec::with_capacity(w);
        let mut fragments: Vec<Fragment> = Vec::with_capacity(if self.threshold.is_none() {
            w * self.setups.len()
        } else {
            0
        });
        let mut logits: Vec<f64> = Vec::new();
        let mut comps: Vec<f64> = Vec::new();
        let mut log_comps: Vec<f64> = Vec::new();
        for col in 0..w {
            let p = pixel_center(row, col, h, w);
            let start = fragments.len();
            let mut skipped = 0u32;
            logits.clear();
            comps.clear();
            log_comps.clear();
            for s in self.setups {
                if self.threshold.is_some() && (row < s.rows.0 || row > s.rows.1 || col < s.cols.0 || col > s.cols.1) {
                    skipped += 1;
                    continue;
                }
                let eval = signed_distance(&p, &s.tri, cfg.metric);
                if let Some(th) = self.threshold {
                    if eval.value < th {
                        skipped += 1;
                        continue;
                    }
                }
                let x = eval.value / cfg.sigma;
                let (bbar, clip) = clipped_barycentric(eval.bary);
                let z_pix = bbar[0] * s.tri.depths[0] + bbar[1] * s.tri.depths[1] + bbar[2] * s.tri.depths[2];
                let depth_state: u16 = if z_pix < self.camera.z_near {
                    1
                } else if z_pix > self.camera.z_far {
                    2
                } else {
                    0
                };
                let depth = normalize_depth(z_pix, self.camera.z_near, self.camera.z_far);
                let shaded = shade(
                    [&colors[s.ids[0]], &colors[s.ids[1]], &colors[s.ids[2]]],
                    &bbar,
                    &self.normals.normals[s.face as usize],
                    &cfg.lighting,
                );
                let regime = (eval.feature as u16)
                    | (eval.endpoint as u16) << 2
                    | (clip.low as u16) << 4
                    | (clip.high as u16) << 7
                    | (shaded.lit as u16) << 10
                    | depth_state << 11
                    | (clip.fallback as u16) << 13
                    | (shaded.clamped.iter().any(|&c| c) as u16) << 14;
                let (prob, comp, log_prob, log_comp) = sigmoid_parts(x);
                logits.push(log_prob + depth / cfg.gamma);
                comps.push(comp);
                log_comps.push(log_comp);
                fragments.push(Fragment {
                    face: s.face,
                    feature: eval.feature,
                    regime,
                    distance: eval.value,
                    prob,
                    prob_comp: comp,
                    bary: eval.bary,
                    closest: eval.closest,
                    depth,
                    color: shaded.color,
                    weight: 0.0,
                });
            }
            let background_weight = normalize_logits(&mut logits, cfg.epsilon / cfg.gamma);
            let mut color = cfg.background * background_weight;
            for (f, wt) in fragments[start..].iter_mut().zip(&logits) {
                f.weight = *wt;
                color += f.color * *wt;
            }
            let (alpha, transmittance) = silhouette_from_parts(&comps, &log_comps);
            pixels.push(PixelRecord {
                start: start as u32,
                count: (fragments.len() - start) as u32,
                color,
                alpha,
                transmittance,
                background_weight,
                skipped,
            });
        }
        (pixels, fragments)
    }
}
