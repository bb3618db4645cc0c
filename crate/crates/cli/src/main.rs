use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use softras_cli::commands::{cmd_fit_nonrigid, cmd_fit_pose, cmd_gradcheck, cmd_render, cmd_sweep};
use softras_cli::config::parse_assignment;
use softras_cli::SceneConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Soft rasterizer: render meshes, fit poses and shapes, check gradients.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene to PNG.
    Render(Common),
    /// Render one image per (sigma, gamma) pair into a directory.
    Sweep(Common),
    /// Fit a rigid pose to a target image, or run a Monte Carlo study with --trials.
    FitPose(Common),
    /// Fit per-vertex displacements to a target image.
    FitNonrigid(Common),
    /// Compare analytic gradients with finite differences; exits nonzero on failure.
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set fov_y=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// OBJ mesh (with optional per-vertex colors).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Built-in mesh when no OBJ is given: cube, plain-cube or sphere.
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated sigma values for `sweep`.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Comma-separated gamma values for `sweep`.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// Square image size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// euclidean or barycentric.
    #[arg(long)]
    metric: Option<String>,
    /// Skip fragments with coverage probability below this.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Directional lighting instead of flat colors.
    #[arg(long)]
    lit: bool,
    /// Hard z-buffer rasterization instead of the soft renderer.
    #[arg(long)]
    hard: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for per-iteration frame_%05d.png dumps.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Target image for fitting.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Anneal sigma and gamma in 5 steps during fitting.
    #[arg(long)]
    schedule: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// near or uniform initial rotations for seeded fits.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<SceneConfig> {
        let base = match &self.config {
            Some(path) => SceneConfig::load(path)?,
            None => SceneConfig::default(),
        };
        let mut ov: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Value| ov.push((k.to_string(), v));
        if let Some(v) = &self.mesh {
            put("mesh", json!(v));
        }
        if let Some(v) = &self.fixture {
            put("fixture", json!(v));
        }
        if let Some(v) = self.sigma {
            put("sigma", json!(v));
        }
        if let Some(v) = self.gamma {
            put("gamma", json!(v));
        }
        if let Some(v) = &self.sigmas {
            put("sigmas", json!(v));
        }
        if let Some(v) = &self.gammas {
            put("gammas", json!(v));
        }
        if let Some(v) = self.size {
            put("width", json!(v));
            put("height", json!(v));
        }
        if let Some(v) = &self.metric {
            put("metric", json!(v));
        }
        if let Some(v) = self.cutoff {
            put("fast_cutoff", json!(v));
        }
        if self.lit {
            put("lighting", json!("directional"));
        }
        if self.hard {
            put("hard", json!(true));
        }
        if let Some(v) = &self.output {
            put("output", json!(v));
        }
        if let Some(v) = &self.csv {
            put("csv", json!(v));
        }
        if let Some(v) = &self.frames {
            put("frames", json!(v));
        }
        if let Some(v) = &self.target {
            put("target", json!(v));
        }
        if self.schedule {
            put("schedule", json!(true));
        }
        if let Some(v) = self.iterations {
            put("iterations", json!(v));
        }
        if let Some(v) = self.lr {
            put("lr", json!(v));
        }
        if let Some(v) = self.mu {
            put("mu", json!(v));
        }
        if let Some(v) = self.trials {
            put("trials", json!(v));
        }
        if let Some(v) = &self.init {
            put("init", json!(v));
        }
        if let Some(v) = self.seed {
            put("seed", json!(v));
        }
        if let Some(v) = self.jobs {
            put("jobs", json!(v));
        }
        for s in &self.set {
            ov.push(parse_assignment(s)?);
        }
        let cfg = base.with_overrides(&ov)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: &Command) -> Result<bool> {
    let (Command::Render(c)
    | Command::Sweep(c)
    | Command::FitPose(c)
    | Command::FitNonrigid(c)
    | Command::Gradcheck(c)) = command;
    let cfg = c.resolve()?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            b = b.num_threads(j);
        }
        b.build()?
    };
    pool.install(|| {
        let mut out = std::io::stdout();
        let mut log = std::io::stderr();
        match command {
            Command::Render(_) => cmd_render(&cfg, &mut out)?,
            Command::Sweep(_) => {
                cmd_sweep(&cfg, &mut out)?;
            }
            Command::FitPose(_) => cmd_fit_pose(&cfg, &mut out, &mut log)?,
            Command::FitNonrigid(_) => {
                cmd_fit_nonrigid(&cfg, &mut out, &mut log)?;
            }
            Command::Gradcheck(_) => return Ok(cmd_gradcheck(&cfg, &mut out)?.0),
        }
        Ok(true)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
