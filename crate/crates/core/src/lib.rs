//! Differentiable soft rasterization of colored triangle meshes.
//!
//! The forward renderer replaces the binary coverage test with a sigmoid of a
//! signed screen-space distance and fuses per-triangle contributions with a
//! depth-aware softmax (color) and a probabilistic union (silhouette). The
//! backward pass propagates image gradients analytically to vertex positions,
//! vertex colors, pose parameters and per-vertex displacements.

pub mod camera;
pub mod error;
pub mod fit;
pub mod grad;
pub mod image;
pub mod loss;
pub mod mesh;
pub mod optim;
pub mod raster;

pub use camera::{Camera, Pose, ScreenVertex};
pub use error::{Error, Result};
pub use grad::{backward, GradientSet};
pub use image::RgbaImage;
pub use mesh::Mesh;
pub use raster::{render, DistanceMetric, Lighting, RenderConfig, RenderOutput};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
