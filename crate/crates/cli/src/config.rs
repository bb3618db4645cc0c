//! Flat key-value scene and experiment configuration.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use softras::camera::{Camera, Pose};
use softras::fit::InitMode;
use softras::mesh::{make_face_colored_cube, make_ico_sphere, make_unit_cube, Mesh};
use softras::{DistanceMetric, Lighting, RenderConfig, Vec3};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    /// Unit cube with one color per face.
    Cube,
    /// Unit cube with gray vertices.
    PlainCube,
    /// Icosphere with position-derived colors.
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    Barycentric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightingMode {
    Flat,
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Near,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckScene {
    Random,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// OBJ file; the fixture is used when absent.
    pub mesh: Option<PathBuf>,
    pub fixture: Fixture,
    pub sphere_subdivisions: u32,

    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_y: f64,
    /// Width over height; the image aspect when absent.
    pub aspect: Option<f64>,
    pub z_near: f64,
    pub z_far: f64,

    /// Quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],

    pub sigma: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub metric: Metric,
    pub fast_cutoff: Option<f64>,
    pub lighting: LightingMode,
    pub ambient: f64,
    pub diffuse: f64,
    pub light_direction: [f64; 3],

    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Directory receiving `frame_%05d.png` dumps.
    pub frames: Option<PathBuf>,
    pub frame_every: usize,
    pub hard: bool,

    /// Target image for fitting; rendered from `target_rotation` or a seeded draw when absent.
    pub target: Option<PathBuf>,
    pub target_rotation: Option<[f64; 4]>,
    pub iterations: usize,
    pub lr: Option<f64>,
    pub schedule: bool,
    pub fix_translation: bool,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub trials: usize,
    pub init: InitKind,
    pub max_angle_deg: f64,

    pub mu: f64,
    /// Per-axis scale applied to the mesh to synthesize a non-rigid target.
    pub target_scale: [f64; 3],
    pub mesh_output: Option<PathBuf>,

    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,

    pub check_scene: CheckScene,
    pub max_faces: usize,
    pub max_per_block: Option<usize>,
    pub tolerance: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let r = RenderConfig::default();
        Self {
            mesh: None,
            fixture: Fixture::Cube,
            sphere_subdivisions: 2,
            eye: [0.0, 0.0, 3.0],
            look_at: [0.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            fov_y: 0.6,
            aspect: None,
            z_near: 0.1,
            z_far: 12.0,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
            sigma: r.sigma,
            gamma: r.gamma,
            epsilon: r.epsilon,
            width: r.width,
            height: r.height,
            background: [0.0; 3],
            metric: Metric::Euclidean,
            fast_cutoff: None,
            lighting: LightingMode::Flat,
            ambient: 0.5,
            diffuse: 0.5,
            light_direction: [0.0, 0.0, -1.0],
            output: None,
            csv: None,
            frames: None,
            frame_every: 1,
            hard: false,
            target: None,
            target_rotation: None,
            iterations: 600,
            lr: None,
            schedule: false,
            fix_translation: true,
            seed: 0,
            jobs: None,
            trials: 0,
            init: InitKind::Near,
            max_angle_deg: 45.0,
            mu: 1e-3,
            target_scale: [1.3, 1.0, 1.0],
            mesh_output: None,
            sigmas: vec![1e-5, 1e-4, 1e-3],
            gammas: vec![1e-5, 1e-4, 1e-3],
            check_scene: CheckScene::Random,
            max_faces: 80,
            max_per_block: None,
            tolerance: 1e-3,
        }
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the listed keys; values are JSON, or bare strings.
    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut map: Map<String, Value> = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        };
        for (key, value) in overrides {
            if !map.contains_key(key) {
                bail!("unknown config key {key:?}");
            }
            map.insert(key.clone(), value.clone());
        }
        serde_json::from_value(Value::Object(map)).context("applying overrides")
    }

    pub fn validate(&self) -> Result<()> {
        self.render_config().validate()?;
        self.camera()?;
        self.pose()?;
        if let Some(path) = &self.mesh {
            if !path.is_file() {
                bail!("mesh file {} does not exist", path.display());
            }
        }
        if let Some(path) = &self.target {
            if !path.is_file() {
                bail!("target image {} does not exist", path.display());
            }
        }
        if self.frame_every == 0 {
            bail!("frame_every must be at least 1");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            bail!("mu must be non-negative");
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                bail!("lr must be positive");
            }
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            sigma: self.sigma,
            gamma: self.gamma,
            epsilon: self.epsilon,
            height: self.height,
            width: self.width,
            background: v3(self.background),
            metric: match self.metric {
                Metric::Euclidean => DistanceMetric::Euclidean,
                Metric::Barycentric => DistanceMetric::Barycentric,
            },
            fast_cutoff: self.fast_cutoff,
            lighting: match self.lighting {
                LightingMode::Flat => Lighting::Flat,
                LightingMode::Directional => Lighting::Directional {
                    ambient: self.ambient,
                    diffuse: self.diffuse,
                    direction: v3(self.light_direction).normalize(),
                },
            },
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let aspect = self.aspect.unwrap_or(self.width as f64 / self.height.max(1) as f64);
        Ok(Camera::new(
            v3(self.eye),
            v3(self.look_at),
            v3(self.up),
            self.fov_y,
            aspect,
            self.z_near,
            self.z_far,
        )?)
    }

    pub fn pose(&self) -> Result<Pose> {
        Ok(Pose::new(self.rotation, v3(self.translation))?)
    }

    pub fn target_pose(&self) -> Result<Option<Pose>> {
        self.target_rotation
            .map(|q| Pose::new(q, v3(self.translation)).map_err(Into::into))
            .transpose()
    }

    pub fn load_mesh(&self) -> Result<Mesh> {
        if let Some(path) = &self.mesh {
            return crate::obj::load_obj(path);
        }
        Ok(match self.fixture {
            Fixture::Cube => make_face_colored_cube(),
            Fixture::PlainCube => make_unit_cube(),
            Fixture::Sphere => colored_sphere(self.sphere_subdivisions)?,
        })
    }

    pub fn init_mode(&self) -> InitMode {
        match self.init {
            InitKind::Near => InitMode::Near {
                max_angle: self.max_angle_deg.to_radians(),
            },
            InitKind::Uniform => InitMode::Uniform,
        }
    }
}

pub fn colored_sphere(subdivisions: u32) -> Result<Mesh> {
    let m = make_ico_sphere(subdivisions)?;
    let colors = m
        .vertices()
        .iter()
        .map(|v| v.map(|c| (0.5 + 0.45 * c).clamp(0.05, 0.95)))
        .collect();
    Ok(m.with_colors(colors)?)
}

/// `key=value` with a JSON value, or a bare string when it does not parse.
pub fn parse_assignment(text: &str) -> Result<(String, Value)> {
    let (key, value) = text
        .split_once('=')
        .with_context(|| format!("expected key=value, got {text:?}"))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SceneConfig::default();
        c.validate().unwrap();
        assert_eq!((c.width, c.height), (64, 64));
        assert_eq!(c.render_config(), RenderConfig::default());
        assert_eq!(c.camera().unwrap(), Camera::looking_at_origin(3.0, 0.6));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = SceneConfig::default();
        c.sigma = 3.3e-5;
        c.mesh = Some("a b.obj".into());
        c.target_rotation = Some([0.1, 0.2, 0.3, 0.4]);
        c.lighting = LightingMode::Directional;
        c.sigmas = vec![0.1 + 0.2, 1e-7];
        let back = SceneConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(SceneConfig::from_json(&back.to_json()).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = SceneConfig::from_json(r#"{"sigma": 0.01, "fixture": "sphere"}"#).unwrap();
        assert_eq!(c.sigma, 0.01);
        assert_eq!(c.fixture, Fixture::Sphere);
        assert_eq!(c.gamma, 1e-4);
        assert!(SceneConfig::from_json(r#"{"sigmaa": 1}"#).is_err());
    }

    #[test]
    fn overrides_replace_keys() {
        let base = SceneConfig::from_json(r#"{"sigma": 0.01, "width": 32}"#).unwrap();
        let ov = vec![
            parse_assignment("sigma=0.002").unwrap(),
            parse_assignment("metric=barycentric").unwrap(),
            parse_assignment("output=out/x.png").unwrap(),
        ];
        let c = base.with_overrides(&ov).unwrap();
        assert_eq!(c.sigma, 0.002);
        assert_eq!(c.width, 32);
        assert_eq!(c.metric, Metric::Barycentric);
        assert_eq!(c.output, Some(PathBuf::from("out/x.png")));
        assert!(base.with_overrides(&[parse_assignment("nope=1").unwrap()]).is_err());
        assert!(base.with_overrides(&[parse_assignment("width=-3").unwrap()]).is_err());
        assert!(parse_assignment("sigma").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = |json: &str| SceneConfig::from_json(json).unwrap().validate().is_err();
        assert!(bad(r#"{"sigma": 0}"#));
        assert!(bad(r#"{"fov_y": 4}"#));
        assert!(bad(r#"{"rotation": [0, 0, 0, 0]}"#));
        assert!(bad(r#"{"mesh": "/definitely/missing.obj"}"#));
        assert!(bad(r#"{"fast_cutoff": 0.7}"#));
        assert!(bad(r#"{"jobs": 0}"#));
    }
}
