use softras::camera::{rotation_geodesic_angle, Camera, Pose};
use softras::fit::{
    fit_nonrigid, fit_rigid_pose, fit_rigid_pose_observed, pose_trials, trial_poses, FitOptions, InitMode,
    IterationRecord, CSV_HEADER, NONRIGID_LR,
};
use softras::grad::backward;
use softras::loss::{fit_energy_grad, silhouette_iou_loss};
use softras::mesh::{displace, make_face_colored_cube, make_ico_sphere, Mesh};
use softras::optim::AdamConfig;
use softras::raster::{RenderConfig, RenderOutput};
use softras::{render, Error, Vec3};

fn camera() -> Camera {
    Camera::looking_at_origin(3.0, 0.6)
}

fn cube_config(size: usize) -> RenderConfig {
    RenderConfig::with_size(size, size)
}

fn truth() -> Pose {
    Pose::from_axis_angle(Vec3::new(0.3, 1.0, 0.2), 0.8, Vec3::zeros())
}

fn fixed_translation(options: &mut FitOptions) {
    options.fix_translation = true;
}

#[test]
fn fit_from_the_truth_stays_there() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(64);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let mut opts = FitOptions::new(cfg, 100, false).unwrap();
    fixed_translation(&mut opts);
    let report = fit_rigid_pose(&mesh, &camera(), &target, &truth(), Some(&truth()), &opts).unwrap();
    assert!(report.final_angle_error.unwrap().to_degrees() < 0.5);
    assert!(report.records.iter().all(|r| r.loss.is_finite()));
    assert!(report.records[0].loss < 1e-12);
}

#[test]
fn thirty_degree_fit_converges_without_a_schedule() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(64);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let init = truth().rotated_by(softras::camera::quat_from_axis_angle(
        Vec3::new(1.0, -0.5, 0.3),
        30f64.to_radians(),
    ));
    let start = rotation_geodesic_angle(init.rotation, truth().rotation).to_degrees();
    assert!((start - 30.0).abs() < 1e-9);
    let mut opts = FitOptions::new(cfg, 500, false).unwrap();
    fixed_translation(&mut opts);
    let report = fit_rigid_pose(&mesh, &camera(), &target, &init, Some(&truth()), &opts).unwrap();
    let err = report.final_angle_error.unwrap().to_degrees();
    assert!(err < 5.0, "final error {err} deg");
    assert!(report.succeeded());
    assert!(report.final_loss < report.initial_loss);
}

#[test]
fn csv_has_fixed_columns_and_one_row_per_iteration() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(32);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let init = Pose::identity();
    let opts = FitOptions::new(cfg, 10, true).unwrap();
    let report = fit_rigid_pose(&mesh, &camera(), &target, &init, Some(&truth()), &opts).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(CSV_HEADER, "iteration,loss,sigma,gamma,angle_error");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5);
        assert_eq!(row[0], i as f64);
        assert_eq!(row[1], report.records[i].loss);
        assert_eq!(row[4], report.records[i].angle_error.unwrap());
    }
    assert_eq!(rows[0][2], 1e-2);
    assert!(rows[9][2] < rows[0][2]);
    let sigmas: std::collections::BTreeSet<u64> = rows.iter().map(|r| r[2].to_bits()).collect();
    assert_eq!(sigmas.len(), 5);
}

#[test]
fn csv_leaves_the_angle_empty_without_ground_truth() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(16);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let opts = FitOptions::new(cfg, 2, false).unwrap();
    let report = fit_rigid_pose(&mesh, &camera(), &target, &Pose::identity(), None, &opts).unwrap();
    assert!(report.final_angle_error.is_none());
    for line in report.to_csv().lines().skip(1) {
        assert!(line.ends_with(','));
    }
}

#[test]
fn schedule_steps_down_five_times_in_the_records() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(16);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let opts = FitOptions::new(cfg, 50, true).unwrap();
    let report = fit_rigid_pose(&mesh, &camera(), &target, &Pose::identity(), None, &opts).unwrap();
    let changes = report
        .records
        .windows(2)
        .filter(|w| w[1].sigma != w[0].sigma || w[1].gamma != w[0].gamma)
        .count();
    assert_eq!(changes, 4);
    let last = report.records.last().unwrap();
    assert!((last.sigma - 1e-4).abs() < 1e-15 && (last.gamma - 1e-4).abs() < 1e-15);
}

#[test]
fn divergence_aborts_with_a_diagnostic() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(16);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let mut opts = FitOptions::new(cfg, 50, false).unwrap();
    opts.divergence_factor = 1e-9;
    opts.divergence_patience = 3;
    let err = fit_rigid_pose(&mesh, &camera(), &target, &Pose::identity(), None, &opts).unwrap_err();
    match err {
        Error::Diverged { iteration, .. } => assert_eq!(iteration, 2),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn mismatched_target_size_is_rejected() {
    let mesh = make_face_colored_cube();
    let target = render(&mesh, &camera(), &truth(), &cube_config(16)).unwrap().to_rgba();
    let opts = FitOptions::new(cube_config(32), 5, false).unwrap();
    assert!(fit_rigid_pose(&mesh, &camera(), &target, &Pose::identity(), None, &opts).is_err());
    let opts = FitOptions::new(cube_config(16), 0, false).unwrap();
    assert!(fit_rigid_pose(&mesh, &camera(), &target, &Pose::identity(), None, &opts).is_err());
}

#[test]
fn observer_sees_every_iteration_and_records_frames() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(16);
    let target = render(&mesh, &camera(), &truth(), &cfg).unwrap().to_rgba();
    let opts = FitOptions::new(cfg, 6, false).unwrap();
    let mut seen = Vec::new();
    let mut observer = |r: &IterationRecord, out: &RenderOutput| {
        assert_eq!(out.color.len(), 16 * 16);
        seen.push(r.iteration);
        Ok((r.iteration % 2 == 0).then(|| format!("frame_{:05}.png", r.iteration)))
    };
    let report =
        fit_rigid_pose_observed(&mesh, &camera(), &target, &Pose::identity(), None, &opts, &mut observer).unwrap();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
    assert_eq!(
        report.frames,
        vec!["frame_00000.png", "frame_00002.png", "frame_00004.png"]
    );
}

#[test]
fn trial_poses_depend_only_on_seed_and_index() {
    let near = InitMode::Near {
        max_angle: 45f64.to_radians(),
    };
    for trial in 0..50 {
        let (t1, i1) = trial_poses(7, trial, near);
        let (t2, i2) = trial_poses(7, trial, near);
        assert_eq!((t1.rotation, i1.rotation), (t2.rotation, i2.rotation));
        let angle = rotation_geodesic_angle(t1.rotation, i1.rotation);
        assert!(angle <= 45f64.to_radians() + 1e-12);
    }
    assert_ne!(
        trial_poses(7, 0, InitMode::Uniform).0.rotation,
        trial_poses(8, 0, InitMode::Uniform).0.rotation
    );
    assert_ne!(
        trial_poses(7, 0, InitMode::Uniform).0.rotation,
        trial_poses(7, 1, InitMode::Uniform).0.rotation
    );
}

#[test]
fn uniform_trial_angles_average_near_the_random_baseline() {
    let n = 4000;
    let mean = (0..n)
        .map(|t| {
            let (a, b) = trial_poses(11, t, InitMode::Uniform);
            rotation_geodesic_angle(a.rotation, b.rotation)
        })
        .sum::<f64>()
        / n as f64;
    let expected = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
    assert!((expected.to_degrees() - 126.48).abs() < 0.01);
    assert!((mean - expected).abs().to_degrees() < 1.5, "mean {}", mean.to_degrees());
}

#[test]
fn pose_trials_are_ordered_and_reproducible() {
    let mesh = make_face_colored_cube();
    let cfg = cube_config(16);
    let opts = FitOptions::new(cfg, 5, true).unwrap();
    let a = pose_trials(&mesh, &camera(), &cfg, &opts, 4, 3, InitMode::Uniform).unwrap();
    let b = pose_trials(&mesh, &camera(), &cfg, &opts, 4, 3, InitMode::Uniform).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.trial).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

fn sphere() -> Mesh {
    let m = make_ico_sphere(1).unwrap();
    let m = m.map_vertices(|v| v * 0.5).unwrap();
    let colors = m.vertices().iter().map(|v| v.map(|c| 0.5 + 0.8 * c)).collect();
    m.with_colors(colors).unwrap()
}

#[test]
fn nonrigid_fit_against_its_own_render_barely_moves() {
    let mesh = sphere();
    let cfg = cube_config(32);
    let pose = Pose::identity();
    let target = render(&mesh, &camera(), &pose, &cfg).unwrap().to_rgba();
    let mut opts = FitOptions::new(cfg, 50, false).unwrap();
    opts.adam = AdamConfig::with_lr(NONRIGID_LR);
    let report = fit_nonrigid(&mesh, &camera(), &pose, &target, 0.0, &opts).unwrap();
    let worst = report
        .displacements
        .iter()
        .flat_map(|d| d.iter().copied())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-2, "max displacement {worst}");
}

#[test]
fn nonrigid_fit_stretches_a_sphere_to_its_target() {
    let mesh = sphere();
    let cfg = cube_config(64);
    let pose = Pose::identity();
    let stretched = mesh.map_vertices(|v| Vec3::new(1.3 * v.x, v.y, v.z)).unwrap();
    let target = render(&stretched, &camera(), &pose, &cfg).unwrap().to_rgba();
    let start = render(&mesh, &camera(), &pose, &cfg).unwrap();
    let start_iou = silhouette_iou_loss(&start.alpha, &target.alpha()).unwrap();
    let mut opts = FitOptions::new(cfg, 150, true).unwrap();
    opts.adam = AdamConfig::with_lr(NONRIGID_LR);
    let report = fit_nonrigid(&mesh, &camera(), &pose, &target, 1e-3, &opts).unwrap();
    let fitted = displace(&mesh, &report.displacements).unwrap();
    let out = render(&fitted, &camera(), &pose, &cfg).unwrap();
    let iou = silhouette_iou_loss(&out.alpha, &target.alpha()).unwrap();
    assert!(iou < 0.05, "silhouette loss {iou} (start {start_iou})");
    assert!(report.succeeded());
    assert_eq!(report.hidden_gradient_counts.len(), 150);
    assert!(report.hidden_gradient_counts[0] > 0);
}

fn occluded_scene() -> Mesh {
    let vertices = vec![
        Vec3::new(-0.8, -0.8, 0.5),
        Vec3::new(0.8, -0.8, 0.5),
        Vec3::new(0.8, 0.8, 0.5),
        Vec3::new(-0.8, 0.8, 0.5),
        Vec3::new(-0.3, -0.3, -0.5),
        Vec3::new(0.3, -0.3, -0.5),
        Vec3::new(0.0, 0.3, -0.5),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3], [4, 5, 6]];
    let mut colors = vec![Vec3::new(0.8, 0.8, 0.8); 4];
    colors.extend(vec![Vec3::new(0.9, 0.1, 0.1); 3]);
    Mesh::new(vertices, faces, colors).unwrap()
}

#[test]
fn occluded_triangle_gets_gradient_on_the_first_iteration() {
    let mesh = occluded_scene();
    let cfg = RenderConfig {
        sigma: 1e-4,
        gamma: 1e-1,
        ..cube_config(32)
    };
    let pose = Pose::identity();
    let hard = softras::grad::hard_raster_oracle(&mesh, &camera(), &pose, &cfg).unwrap();
    let plate_only = softras::grad::hard_raster_oracle(
        &Mesh::new(
            mesh.vertices()[..4].to_vec(),
            vec![[0, 1, 2], [0, 2, 3]],
            mesh.colors()[..4].to_vec(),
        )
        .unwrap(),
        &camera(),
        &pose,
        &cfg,
    )
    .unwrap();
    assert_eq!(hard.pixels(), plate_only.pixels());

    let moved = mesh
        .with_vertices(
            mesh.vertices()
                .iter()
                .enumerate()
                .map(|(i, v)| if i >= 4 { v + Vec3::new(0.1, 0.0, 0.0) } else { *v })
                .collect(),
        )
        .unwrap();
    let target = render(&moved, &camera(), &pose, &cfg).unwrap().to_rgba();
    let out = render(&mesh, &camera(), &pose, &cfg).unwrap();
    let (_, g) = fit_energy_grad(&out, &target).unwrap();
    let grads = backward(&out, &g.d_color, &g.d_alpha, &mesh, &camera(), &pose).unwrap();
    let rear: f64 = grads.d_displacements[4..]
        .iter()
        .map(|d| d.norm_squared())
        .sum::<f64>()
        .sqrt();
    assert!(rear > 0.0);
    assert!(grads.d_vertices[4..].iter().any(|d| d.z != 0.0));

    let opts = FitOptions::new(cfg, 1, false).unwrap();
    let report = fit_nonrigid(&mesh, &camera(), &pose, &target, 0.0, &opts).unwrap();
    assert!(report.displacements[4..].iter().any(|d| d.norm() > 0.0));
}
