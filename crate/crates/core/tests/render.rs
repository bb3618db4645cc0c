use softras::camera::{Camera, Pose};
use softras::grad::{edge_clearance, hard_raster_oracle};
use softras::mesh::{make_face_colored_cube, make_ico_sphere, make_unit_cube, Mesh};
use softras::raster::{log_sigmoid, softmax_from_logs, RenderConfig, RenderOutput};
use softras::{render, DistanceMetric, Lighting, Vec3};

fn camera() -> Camera {
    Camera::new(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 0.8, 1.0, 1.0, 10.0).unwrap()
}

fn cube_pose() -> Pose {
    Pose::from_axis_angle(Vec3::new(1.0, 1.0, 0.2), 0.7, Vec3::zeros())
}

fn colored_sphere(subdivisions: u32) -> Mesh {
    let m = make_ico_sphere(subdivisions).unwrap();
    let colors = m
        .vertices()
        .iter()
        .map(|v| v.map(|c| (0.5 + 0.45 * c).clamp(0.05, 0.95)))
        .collect();
    m.with_colors(colors).unwrap()
}

fn fixtures() -> Vec<(&'static str, Mesh, Pose)> {
    vec![
        ("cube", make_unit_cube(), cube_pose()),
        ("face-colored cube", make_face_colored_cube(), cube_pose()),
        (
            "icosphere",
            colored_sphere(2),
            Pose::from_axis_angle(Vec3::new(0.2, 1.0, 0.0), 0.4, Vec3::zeros()),
        ),
    ]
}

fn config(sigma: f64, gamma: f64, size: usize) -> RenderConfig {
    RenderConfig {
        sigma,
        gamma,
        background: Vec3::new(0.2, 0.4, 0.6),
        ..RenderConfig::with_size(size, size)
    }
}

fn max_oracle_diff(mesh: &Mesh, pose: &Pose, cfg: &RenderConfig) -> (f64, usize) {
    let soft = render(mesh, &camera(), pose, cfg).unwrap().to_rgba();
    let hard = hard_raster_oracle(mesh, &camera(), pose, cfg).unwrap();
    let clearance = edge_clearance(mesh, &camera(), pose, cfg.height, cfg.width);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (i, (s, h)) in soft.pixels().iter().zip(hard.pixels()).enumerate() {
        if clearance[i] <= 2.0 {
            continue;
        }
        compared += 1;
        for c in 0..4 {
            worst = worst.max((s[c] - h[c]).abs());
        }
    }
    (worst, compared)
}

fn plates() -> Mesh {
    let front = 0.6;
    let back = 0.3;
    let vertices = vec![
        Vec3::new(-front, -front, 0.0),
        Vec3::new(front, -front, 0.0),
        Vec3::new(front, front, 0.0),
        Vec3::new(-front, front, 0.0),
        Vec3::new(-back, -back, -0.02),
        Vec3::new(back, -back, -0.02),
        Vec3::new(back, back, -0.02),
        Vec3::new(-back, back, -0.02),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]];
    let mut colors = vec![Vec3::new(0.9, 0.1, 0.1); 4];
    colors.extend(vec![Vec3::new(0.1, 0.8, 0.3); 4]);
    Mesh::new(vertices, faces, colors).unwrap()
}

fn pixel_weight_sum(out: &RenderOutput, pixel: usize) -> f64 {
    let buf = &out.tape.buffer;
    buf.pixels[pixel].background_weight + buf.pixel_fragments(pixel).iter().map(|f| f.weight).sum::<f64>()
}

#[test]
fn soft_render_reaches_the_hard_rasterizer_with_a_cutoff() {
    for (name, mesh, pose) in fixtures() {
        let cfg = RenderConfig {
            fast_cutoff: Some(1e-4),
            ..config(1e-7, 1e-7, 64)
        };
        let (worst, compared) = max_oracle_diff(&mesh, &pose, &cfg);
        assert!(compared > 1000, "{name}: only {compared} pixels clear of edges");
        assert!(worst < 1.0 / 255.0, "{name}: worst channel difference {worst}");
    }
}

#[test]
fn exact_mode_is_dominated_by_nearer_uncovering_triangles_in_the_limit() {
    let (mesh, pose) = (make_unit_cube(), cube_pose());
    let (worst, _) = max_oracle_diff(&mesh, &pose, &config(1e-7, 1e-7, 32));
    assert!(worst > 0.1);
}

#[test]
fn empty_mesh_renders_background() {
    let cfg = config(1e-4, 1e-4, 8);
    let out = render(&Mesh::empty(), &camera(), &Pose::identity(), &cfg).unwrap();
    assert!(out.color.iter().all(|c| *c == cfg.background));
    assert!(out.alpha.iter().all(|&a| a == 0.0));
    assert_eq!(out.tape.buffer.fragment_count(), 0);
}

#[test]
fn invalid_sharpness_is_rejected() {
    for (sigma, gamma) in [(0.0, 1e-4), (1e-4, -1.0), (f64::NAN, 1e-4)] {
        let cfg = config(sigma, gamma, 4);
        assert!(render(&make_unit_cube(), &camera(), &cube_pose(), &cfg).is_err());
    }
}

#[test]
fn weights_are_normalized_on_every_pixel() {
    for (name, mesh, pose) in fixtures() {
        for (sigma, gamma, cutoff) in [
            (1e-4, 1e-4, None),
            (1e-2, 1e-1, None),
            (1e-7, 1e-7, Some(1e-4)),
            (1e-3, 1e-5, Some(1e-4)),
        ] {
            let cfg = RenderConfig {
                fast_cutoff: cutoff,
                ..config(sigma, gamma, 32)
            };
            let out = render(&mesh, &camera(), &pose, &cfg).unwrap();
            for p in 0..out.alpha.len() {
                let s = pixel_weight_sum(&out, p);
                assert!(
                    (s - 1.0).abs() <= 1e-9,
                    "{name} σ={sigma} γ={gamma}: pixel {p} sums to {s}"
                );
            }
        }
    }
}

#[test]
fn silhouette_matches_direct_product() {
    for (name, mesh, pose) in fixtures() {
        for sigma in [1e-5, 1e-3, 3e-2] {
            let out = render(&mesh, &camera(), &pose, &config(sigma, 1e-4, 32)).unwrap();
            for (p, &alpha) in out.alpha.iter().enumerate() {
                let direct = 1.0
                    - out
                        .tape
                        .buffer
                        .pixel_fragments(p)
                        .iter()
                        .map(|f| 1.0 - f.prob)
                        .product::<f64>();
                assert!((alpha - direct).abs() <= 1e-12, "{name}: pixel {p} {alpha} vs {direct}");
            }
        }
    }
}

#[test]
fn weight_ratios_ignore_a_common_depth_shift() {
    let cam = camera();
    let shift = 1.0 / (cam.z_far - cam.z_near);
    for (name, mesh, pose) in fixtures() {
        let cfg = config(1e-4, 1e-4, 32);
        let out = render(&mesh, &cam, &pose, &cfg).unwrap();
        let mut pairs = 0;
        for p in 0..out.alpha.len() {
            let frags = out.tape.buffer.pixel_fragments(p);
            let logs: Vec<f64> = frags.iter().map(|f| log_sigmoid(f.distance / cfg.sigma)).collect();
            let colors: Vec<Vec3> = frags.iter().map(|f| f.color).collect();
            let depths: Vec<f64> = frags.iter().map(|f| f.depth).collect();
            let shifted: Vec<f64> = depths.iter().map(|z| z - shift).collect();
            let a = softmax_from_logs(&logs, &depths, &colors, cfg.gamma, cfg.epsilon, &cfg.background);
            let b = softmax_from_logs(&logs, &shifted, &colors, cfg.gamma, cfg.epsilon, &cfg.background);
            for j in 0..frags.len() {
                for k in 0..frags.len() {
                    let (wa, wb) = (a.weights[j] / a.weights[k], b.weights[j] / b.weights[k]);
                    if a.weights[k] > 1e-250 && a.weights[j] > 1e-250 {
                        pairs += 1;
                        assert!(
                            (wa - wb).abs() <= 1e-6 * wa.abs(),
                            "{name}: pixel {p} pair ({j},{k}) {wa} vs {wb}"
                        );
                    }
                }
            }
        }
        assert!(pairs > 0);
    }
}

#[test]
fn view_axis_translation_keeps_ratios_of_saturated_parallel_plates() {
    let cam = camera();
    let axis = (cam.target - cam.eye).normalize();
    let mesh = plates();
    let cfg = config(1e-5, 1e-4, 64);
    let near = render(&mesh, &cam, &Pose::identity(), &cfg).unwrap();
    let far = render(&mesh, &cam, &Pose::from_raw([1.0, 0.0, 0.0, 0.0], axis), &cfg).unwrap();
    let saturated = |out: &RenderOutput, p: usize| -> Vec<(u32, f64)> {
        out.tape
            .buffer
            .pixel_fragments(p)
            .iter()
            .filter(|f| f.prob == 1.0 && f.weight > 1e-250)
            .map(|f| (f.face, f.weight))
            .collect()
    };
    let mut pairs = 0;
    for p in 0..near.alpha.len() {
        let (a, b) = (saturated(&near, p), saturated(&far, p));
        for &(fj, wj) in &a {
            for &(fk, wk) in &a {
                let (Some(&(_, vj)), Some(&(_, vk))) = (b.iter().find(|x| x.0 == fj), b.iter().find(|x| x.0 == fk))
                else {
                    continue;
                };
                if mesh.faces()[fj as usize][0] / 4 == mesh.faces()[fk as usize][0] / 4 {
                    continue;
                }
                pairs += 1;
                let (r, s) = (wj / wk, vj / vk);
                assert!((r - s).abs() <= 1e-6 * r, "pixel {p}: {r} vs {s}");
            }
        }
    }
    assert!(pairs > 100, "{pairs}");
}

#[test]
fn rendering_is_deterministic_across_thread_counts() {
    let (mesh, pose) = (colored_sphere(2), Pose::from_axis_angle(Vec3::x(), 0.3, Vec3::zeros()));
    let cfg = RenderConfig {
        lighting: Lighting::Directional {
            ambient: 0.3,
            diffuse: 0.7,
            direction: Vec3::new(0.3, -0.4, -1.0).normalize(),
        },
        ..config(1e-4, 1e-4, 40)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render(&mesh, &camera(), &pose, &cfg).unwrap())
    };
    let a = run(1);
    for threads in [1, 3] {
        let b = run(threads);
        assert!(a
            .color
            .iter()
            .zip(&b.color)
            .all(|(x, y)| x.map(f64::to_bits) == y.map(f64::to_bits)));
        assert!(a.alpha.iter().zip(&b.alpha).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn cutoff_changes_output_by_at_most_the_skipped_weight() {
    for (name, mesh, pose) in fixtures() {
        for (sigma, gamma) in [(1e-4, 1e-4), (1e-3, 1e-2)] {
            let exact = render(&mesh, &camera(), &pose, &config(sigma, gamma, 32)).unwrap();
            let tau = 1e-3;
            let cut_cfg = RenderConfig {
                fast_cutoff: Some(tau),
                ..config(sigma, gamma, 32)
            };
            let cut = render(&mesh, &camera(), &pose, &cut_cfg).unwrap();
            for p in 0..exact.alpha.len() {
                let kept: Vec<u32> = cut.tape.buffer.pixel_fragments(p).iter().map(|f| f.face).collect();
                let skipped_frags: Vec<_> = exact
                    .tape
                    .buffer
                    .pixel_fragments(p)
                    .iter()
                    .filter(|f| !kept.contains(&f.face))
                    .collect();
                let skipped_weight: f64 = skipped_frags.iter().map(|f| f.weight).sum();
                let skipped_prob: f64 = skipped_frags.iter().map(|f| f.prob).sum();
                assert!(skipped_frags.iter().all(|f| f.prob < tau), "{name}: kept set too small");
                assert!((exact.alpha[p] - cut.alpha[p]).abs() <= skipped_prob + 1e-15);
                assert!((exact.alpha[p] - cut.alpha[p]).abs() <= tau * skipped_frags.len() as f64 + 1e-15);
                for c in 0..3 {
                    let d = (exact.color[p][c] - cut.color[p][c]).abs();
                    assert!(
                        d <= skipped_weight + 1e-12,
                        "{name}: pixel {p} channel {c}: {d} > {skipped_weight}"
                    );
                }
            }
        }
    }
}

#[test]
fn cutoff_color_bound_per_skipped_triangle_holds_with_a_near_background() {
    for (name, mesh, pose) in fixtures() {
        let base = RenderConfig {
            epsilon: 1.0,
            ..config(1e-4, 1e-2, 32)
        };
        let tau = 1e-3;
        let exact = render(&mesh, &camera(), &pose, &base).unwrap();
        let cut = render(
            &mesh,
            &camera(),
            &pose,
            &RenderConfig {
                fast_cutoff: Some(tau),
                ..base
            },
        )
        .unwrap();
        for p in 0..exact.alpha.len() {
            let skipped = exact.tape.buffer.pixels[p].count - cut.tape.buffer.pixels[p].count;
            assert_eq!(skipped, cut.tape.buffer.pixels[p].skipped);
            for c in 0..3 {
                let d = (exact.color[p][c] - cut.color[p][c]).abs();
                assert!(d <= tau * skipped as f64 + 1e-12, "{name}: pixel {p}: {d}");
            }
        }
    }
}

#[test]
fn alpha_outside_the_silhouette_grows_with_sigma() {
    let (mesh, pose) = (make_unit_cube(), cube_pose());
    let size = 64;
    let hard = hard_raster_oracle(&mesh, &camera(), &pose, &config(1e-4, 1e-4, size)).unwrap();
    let clearance = edge_clearance(&mesh, &camera(), &pose, size, size);
    let band: Vec<usize> = (0..size * size)
        .filter(|&p| hard.pixels()[p][3] == 0.0 && clearance[p] > 1.0 && clearance[p] <= 4.0)
        .collect();
    assert!(band.len() > 50);
    let sigmas = [1e-5, 1e-4, 1e-3];
    let renders: Vec<RenderOutput> = sigmas
        .iter()
        .map(|&s| render(&mesh, &camera(), &pose, &config(s, 1e-4, size)).unwrap())
        .collect();
    let means: Vec<f64> = renders
        .iter()
        .map(|r| band.iter().map(|&p| r.alpha[p]).sum::<f64>() / band.len() as f64)
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");

    let pixel_step = 2.0 / size as f64;
    for (i, &s) in sigmas.iter().enumerate().take(2) {
        let target = 3.0 * s.sqrt() / pixel_step;
        let p = (0..size * size)
            .filter(|&p| hard.pixels()[p][3] == 0.0)
            .min_by(|&a, &b| (clearance[a] - target).abs().total_cmp(&(clearance[b] - target).abs()))
            .unwrap();
        assert!(renders[i].alpha[p] < renders[i + 1].alpha[p]);
    }
}

#[test]
fn occluded_face_contributes_more_as_gamma_grows() {
    let mesh = plates();
    let contribution = |gamma: f64| {
        let out = render(&mesh, &camera(), &Pose::identity(), &config(1e-4, gamma, 32)).unwrap();
        let total: f64 = out
            .tape
            .buffer
            .fragments()
            .filter(|f| f.face >= 2)
            .map(|f| f.weight * f.color.sum())
            .sum();
        total / out.alpha.len() as f64
    };
    let c: Vec<f64> = [1e-5, 1e-4, 1e-3].iter().map(|&g| contribution(g)).collect();
    assert!(c[0] > 0.0);
    assert!(c.windows(2).all(|w| w[0] < w[1]), "{c:?}");
}

#[test]
fn fragment_buffer_layout_is_consistent() {
    for (_, mesh, pose) in fixtures() {
        for cutoff in [None, Some(1e-4)] {
            let cfg = RenderConfig {
                fast_cutoff: cutoff,
                ..config(1e-4, 1e-4, 24)
            };
            let out = render(&mesh, &camera(), &pose, &cfg).unwrap();
            let buf = &out.tape.buffer;
            assert_eq!(buf.pixels.len(), 24 * 24);
            assert_eq!(buf.rows.len(), 24);
            let total: usize = buf.pixels.iter().map(|p| p.count as usize).sum();
            assert_eq!(total, buf.fragment_count());
            for p in 0..buf.pixels.len() {
                let frags = buf.pixel_fragments(p);
                assert!(frags.windows(2).all(|w| w[0].face < w[1].face));
                assert!(frags
                    .iter()
                    .all(|f| (0.0..=1.0).contains(&f.prob) && (0.0..=1.0).contains(&f.depth)));
                if cutoff.is_none() {
                    assert_eq!(buf.pixels[p].skipped, 0);
                }
            }
        }
    }
}

#[test]
fn barycentric_metric_renders_the_same_interior() {
    let (mesh, pose) = (make_face_colored_cube(), cube_pose());
    let base = RenderConfig {
        fast_cutoff: Some(1e-4),
        ..config(1e-7, 1e-7, 48)
    };
    let e = render(&mesh, &camera(), &pose, &base).unwrap();
    let b = render(
        &mesh,
        &camera(),
        &pose,
        &RenderConfig {
            metric: DistanceMetric::Barycentric,
            ..base
        },
    )
    .unwrap();
    let clearance = edge_clearance(&mesh, &camera(), &pose, 48, 48);
    for p in 0..e.alpha.len() {
        if clearance[p] > 2.0 {
            assert!((e.color[p] - b.color[p]).amax() < 1e-9);
            assert!((e.alpha[p] - b.alpha[p]).abs() < 1e-9);
        }
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outputs_stay_in_range(ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.0..3.0f64,
                                 log_sigma in -5.0..-2.0f64, log_gamma in -5.0..-1.0f64, lit in any::<bool>()) {
            let pose = Pose::from_axis_angle(Vec3::new(ax, ay, 0.5), angle, Vec3::zeros());
            let cfg = RenderConfig {
                lighting: if lit {
                    Lighting::Directional { ambient: 0.4, diffuse: 0.6, direction: Vec3::new(0.0, 0.0, -1.0) }
                } else {
                    Lighting::Flat
                },
                ..config(10f64.powf(log_sigma), 10f64.powf(log_gamma), 12)
            };
            let out = render(&make_unit_cube(), &camera(), &pose, &cfg).unwrap();
            for p in 0..out.alpha.len() {
                prop_assert!((0.0..=1.0).contains(&out.alpha[p]));
                prop_assert!(out.color[p].iter().all(|c| (0.0..=1.0).contains(c)));
                prop_assert!((pixel_weight_sum(&out, p) - 1.0).abs() <= 1e-9);
            }
        }
    }
}
