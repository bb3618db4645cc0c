use crate::config::{colored_sphere, CheckScene, SceneConfig};
use crate::obj::write_obj;
use crate::png_io::{read_png, write_png};
use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softras::camera::rotation_geodesic_angle;
use softras::fit::{
    fit_nonrigid_observed, fit_rigid_pose_observed, pose_trials, trial_poses, FitOptions, FitReport, IterationRecord,
    TrialResult, NONRIGID_LR,
};
use softras::grad::check::{check_scene, random_scene, CheckOptions, CheckReport, Scene};
use softras::grad::hard_raster_oracle;
use softras::mesh::displace;
use softras::optim::AdamConfig;
use softras::{render, RenderOutput, RgbaImage, Vec3};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn cmd_render(cfg: &SceneConfig, out: &mut dyn Write) -> Result<()> {
    let mesh = cfg.load_mesh()?;
    let camera = cfg.camera()?;
    let pose = cfg.pose()?;
    let rc = cfg.render_config();
    let image = if cfg.hard {
        hard_raster_oracle(&mesh, &camera, &pose, &rc)?
    } else {
        render(&mesh, &camera, &pose, &rc)?.to_rgba()
    };
    let path = cfg.output.clone().unwrap_or_else(|| PathBuf::from("render.png"));
    write_png(&image, &path)?;
    let coverage = image.alpha().iter().sum::<f64>() / image.pixels().len() as f64;
    writeln!(
        out,
        "wrote {} ({}x{}, mean alpha {coverage:.6})",
        path.display(),
        rc.width,
        rc.height
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub gamma: f64,
    /// Mean alpha over pixels outside the hard silhouette.
    pub outside_alpha: f64,
    pub path: PathBuf,
}

/// One image per `(sigma, gamma)` pair of the configured grid.
pub fn cmd_sweep(cfg: &SceneConfig, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let mesh = cfg.load_mesh()?;
    let camera = cfg.camera()?;
    let pose = cfg.pose()?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let hard = hard_raster_oracle(&mesh, &camera, &pose, &cfg.render_config())?.alpha();
    let mut rows = Vec::new();
    writeln!(out, "sigma,gamma,outside_alpha,path")?;
    for &sigma in &cfg.sigmas {
        for &gamma in &cfg.gammas {
            let rc = softras::RenderConfig {
                sigma,
                gamma,
                ..cfg.render_config()
            };
            let image = render(&mesh, &camera, &pose, &rc)?;
            let outside: Vec<f64> = image
                .alpha
                .iter()
                .zip(&hard)
                .filter(|(_, h)| **h == 0.0)
                .map(|(a, _)| *a)
                .collect();
            let outside_alpha = outside.iter().sum::<f64>() / outside.len().max(1) as f64;
            let path = dir.join(format!("sigma{sigma:e}_gamma{gamma:e}.png"));
            write_png(&image.to_rgba(), &path)?;
            writeln!(out, "{sigma:e},{gamma:e},{outside_alpha},{}", path.display())?;
            rows.push(SweepRow {
                sigma,
                gamma,
                outside_alpha,
                path,
            });
        }
    }
    Ok(rows)
}

fn fit_options(cfg: &SceneConfig, default_lr: f64) -> Result<FitOptions> {
    let mut opts = FitOptions::new(cfg.render_config(), cfg.iterations, cfg.schedule)?;
    opts.adam = AdamConfig::with_lr(cfg.lr.unwrap_or(default_lr));
    opts.fix_translation = cfg.fix_translation;
    Ok(opts)
}

fn frame_observer(
    cfg: &SceneConfig,
) -> Result<impl FnMut(&IterationRecord, &RenderOutput) -> softras::Result<Option<String>>> {
    let dir = cfg.frames.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let every = cfg.frame_every;
    Ok(move |record: &IterationRecord, output: &RenderOutput| {
        let Some(d) = &dir else { return Ok(None) };
        if record.iteration % every != 0 {
            return Ok(None);
        }
        let path = d.join(format!("frame_{:05}.png", record.iteration));
        write_png(&output.to_rgba(), &path).map_err(|e| softras::Error::Observer(format!("{e:#}")))?;
        Ok(Some(path.display().to_string()))
    })
}

fn emit_csv(cfg: &SceneConfig, csv: &str, out: &mut dyn Write) -> Result<()> {
    match &cfg.csv {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn load_target(path: &Path, cfg: &SceneConfig) -> Result<RgbaImage> {
    let img = read_png(path)?;
    if img.size() != (cfg.height, cfg.width) {
        bail!(
            "target {} is {}x{}, expected {}x{}",
            path.display(),
            img.width(),
            img.height(),
            cfg.width,
            cfg.height
        );
    }
    Ok(img)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

pub fn trials_csv(results: &[TrialResult]) -> String {
    let mut s = String::from("trial,initial_error,final_error,final_loss\n");
    for r in results {
        writeln!(s, "{},{},{},{}", r.trial, r.initial_error, r.final_error, r.final_loss).expect("write to string");
    }
    s
}

pub fn trials_summary(results: &[TrialResult]) -> String {
    let mut errs: Vec<f64> = results.iter().map(|r| r.final_error.to_degrees()).collect();
    let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    let under = errs.iter().filter(|e| **e < 2.0).count();
    let med = median(&mut errs);
    format!(
        "trials {} mean {mean:.4} deg median {med:.4} deg under 2 deg {under}/{}",
        results.len(),
        results.len()
    )
}

/// Pose fit. Writes the per-iteration CSV, or with `trials > 0` the per-trial CSV.
pub fn cmd_fit_pose(cfg: &SceneConfig, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    let mesh = cfg.load_mesh()?;
    let camera = cfg.camera()?;
    let rc = cfg.render_config();
    let opts = fit_options(cfg, AdamConfig::default().lr)?;
    if cfg.trials > 0 {
        let results = pose_trials(&mesh, &camera, &rc, &opts, cfg.trials, cfg.seed, cfg.init_mode())?;
        emit_csv(cfg, &trials_csv(&results), out)?;
        writeln!(log, "{}", trials_summary(&results))?;
        return Ok(());
    }
    let (truth, init, target) = match (&cfg.target, cfg.target_pose()?) {
        (Some(path), truth) => (truth, cfg.pose()?, load_target(path, cfg)?),
        (None, Some(truth)) => {
            let target = render(&mesh, &camera, &truth, &rc)?.to_rgba();
            (Some(truth), cfg.pose()?, target)
        }
        (None, None) => {
            let (truth, init) = trial_poses(cfg.seed, 0, cfg.init_mode());
            let target = render(&mesh, &camera, &truth, &rc)?.to_rgba();
            (Some(truth), init, target)
        }
    };
    let mut observer = frame_observer(cfg)?;
    let report = fit_rigid_pose_observed(&mesh, &camera, &target, &init, truth.as_ref(), &opts, &mut observer)?;
    emit_csv(cfg, &report.to_csv(), out)?;
    let q = report.final_pose.rotation;
    write!(
        log,
        "loss {:.6} -> {:.6}, rotation [{:.6}, {:.6}, {:.6}, {:.6}]",
        report.initial_loss, report.final_loss, q[0], q[1], q[2], q[3]
    )?;
    if let (Some(t), Some(err)) = (truth, report.final_angle_error) {
        let start = rotation_geodesic_angle(init.rotation, t.rotation);
        write!(
            log,
            ", angle error {:.4} -> {:.4} deg",
            start.to_degrees(),
            err.to_degrees()
        )?;
    }
    writeln!(log, "{}", if report.succeeded() { "" } else { " (loss increased)" })?;
    Ok(())
}

pub fn cmd_fit_nonrigid(cfg: &SceneConfig, out: &mut dyn Write, log: &mut dyn Write) -> Result<FitReport> {
    let mesh = cfg.load_mesh()?;
    let camera = cfg.camera()?;
    let pose = cfg.pose()?;
    let rc = cfg.render_config();
    let target = match &cfg.target {
        Some(path) => load_target(path, cfg)?,
        None => {
            let s = cfg.target_scale;
            let scaled = mesh.map_vertices(|v| Vec3::new(s[0] * v.x, s[1] * v.y, s[2] * v.z))?;
            render(&scaled, &camera, &pose, &rc)?.to_rgba()
        }
    };
    let opts = fit_options(cfg, NONRIGID_LR)?;
    let mut observer = frame_observer(cfg)?;
    let report = fit_nonrigid_observed(&mesh, &camera, &pose, &target, cfg.mu, &opts, &mut observer)?;
    emit_csv(cfg, &report.to_csv(), out)?;
    let fitted = displace(&mesh, &report.displacements)?;
    if let Some(path) = &cfg.mesh_output {
        write_obj(&fitted, path)?;
    }
    if let Some(path) = &cfg.output {
        write_png(&render(&fitted, &camera, &pose, &rc)?.to_rgba(), path)?;
    }
    let hidden = report.hidden_gradient_counts.first().copied().unwrap_or(0);
    writeln!(
        log,
        "loss {:.6} -> {:.6}, back-facing vertices with gradient at iteration 0: {hidden}",
        report.initial_loss, report.final_loss
    )?;
    Ok(report)
}

fn check_scene_for(cfg: &SceneConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rc = cfg.render_config();
    match cfg.check_scene {
        CheckScene::Random => {
            if cfg.width != cfg.height {
                bail!("random gradient-check scenes are square");
            }
            let lit = matches!(rc.lighting, softras::Lighting::Directional { .. });
            Ok(random_scene(&mut rng, cfg.max_faces, lit, rc.metric, cfg.width))
        }
        CheckScene::Sphere => {
            let mesh = match &cfg.mesh {
                Some(_) => cfg.load_mesh()?,
                None => colored_sphere(cfg.sphere_subdivisions)?,
            };
            let n = rc.width * rc.height;
            Ok(Scene {
                mesh,
                camera: cfg.camera()?,
                pose: cfg.pose()?,
                config: rc,
                d_color: (0..n)
                    .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.0 - Vec3::repeat(1.0))
                    .collect(),
                d_alpha: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
        }
    }
}

/// Finite-difference check of every gradient block; returns whether all pass.
pub fn cmd_gradcheck(cfg: &SceneConfig, out: &mut dyn Write) -> Result<(bool, CheckReport)> {
    let scene = check_scene_for(cfg)?;
    let options = CheckOptions {
        max_per_block: cfg.max_per_block,
        seed: cfg.seed,
        ..CheckOptions::default()
    };
    let report = check_scene(&scene, &options)?;
    let mut pass = true;
    for b in &report.blocks {
        let ok = b.max_rel_error < cfg.tolerance;
        pass &= ok;
        writeln!(
            out,
            "{:<14} max rel {:.3e}  checked {:>4}  excluded {:>3}  {}",
            b.name,
            b.max_rel_error,
            b.checked,
            b.excluded(),
            if ok { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(
        out,
        "{} faces, {}x{}: {}",
        scene.mesh.face_count(),
        scene.config.width,
        scene.config.height,
        if pass { "PASS" } else { "FAIL" }
    )?;
    Ok((pass, report))
}
