//! Look-at perspective camera, rigid pose, and the analytic Jacobians of the
//! projection used by the backward pass.
//!
//! Conventions: right-handed view space with the camera looking down `-z` and
//! `y` up; screen coordinates are NDC in `[-1, 1]^2` with `x` right and `y`
//! up; depth is the linear view-space distance `-z_view`.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x4, Matrix4, Vector4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::{Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    /// Width over height.
    pub aspect: f64,
    pub z_near: f64,
    pub z_far: f64,
}

impl Camera {
    pub fn new(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, aspect: f64, z_near: f64, z_far: f64) -> Result<Self> {
        let cam = Self {
            eye,
            target,
            up,
            fov_y,
            aspect,
            z_near,
            z_far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on the `+z` axis at `distance` looking at the origin.
    pub fn looking_at_origin(distance: f64, fov_y: f64) -> Self {
        Self::new(
            Vec3::new(0.0, 0.0, distance),
            Vec3::zeros(),
            Vec3::y(),
            fov_y,
            1.0,
            0.1_f64.min(distance * 0.5),
            distance * 4.0,
        )
        .expect("valid default camera")
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fov_y, self.aspect, self.z_near, self.z_far];
        if self
            .eye
            .iter()
            .chain(self.target.iter())
            .chain(self.up.iter())
            .chain(all.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let dir = self.target - self.eye;
        if dir.norm() < 1e-12 {
            return Err(Error::InvalidCamera("eye coincides with target".into()));
        }
        if dir.normalize().cross(&self.up).norm() < 1e-9 * self.up.norm().max(1e-300) {
            return Err(Error::InvalidCamera("up is parallel to the view direction".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidCamera(format!("fov {} outside (0, pi)", self.fov_y)));
        }
        if self.aspect <= 0.0 {
            return Err(Error::InvalidCamera("aspect must be positive".into()));
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far) {
            return Err(Error::InvalidCamera(format!(
                "need 0 < z_near < z_far, got {} and {}",
                self.z_near, self.z_far
            )));
        }
        Ok(())
    }

    /// Orthonormal view basis `(right, up, forward)`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.target - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }

    pub fn tan_half_fov(&self) -> f64 {
        (self.fov_y * 0.5).tan()
    }
}

/// A projected vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub uv: Vec2,
    pub depth: f64,
    /// Depth is in front of the near plane (or behind the camera).
    pub clipped: bool,
}

/// Rigid transform `v -> R(q) v + t`.
///
/// The rotation is stored as a quaternion `[w, x, y, z]`; `R` always uses the
/// normalized quaternion, so gradients are taken through the normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [f64; 4],
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: Vec3::zeros(),
        }
    }

    /// Normalizes `rotation`; a zero quaternion is rejected.
    pub fn new(rotation: [f64; 4], translation: Vec3) -> Result<Self> {
        let q = Vector4::from(rotation);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        Ok(Self {
            rotation: (q / n).into(),
            translation,
        })
    }

    /// Pose with a possibly unnormalized quaternion, as used by finite differences.
    pub fn from_raw(rotation: [f64; 4], translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let a = axis.normalize() * (angle * 0.5).sin();
        Self {
            rotation: [(angle * 0.5).cos(), a.x, a.y, a.z],
            translation,
        }
    }

    pub fn unit_rotation(&self) -> [f64; 4] {
        let q = Vector4::from(self.rotation);
        (q / q.norm()).into()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.unit_rotation();
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.rotation_matrix() * v + self.translation
    }

    /// `d(R(q/|q|) v)/dq` for the stored (possibly unnormalized) quaternion.
    pub fn rotation_jacobian(&self, v: &Vec3) -> Matrix3x4<f64> {
        let q = Vector4::from(self.rotation);
        let norm = q.norm();
        let u = q / norm;
        let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
        let (a, b, c) = (v.x, v.y, v.z);
        // derivative of the unit-quaternion rotation formula w.r.t. (w, x, y, z)
        #[rustfmt::skip]
        let d_unit = Matrix3x4::new(
            2.0 * (-z * b + y * c), 2.0 * (y * b + z * c),            2.0 * (-2.0 * y * a + x * b + w * c), 2.0 * (-2.0 * z * a - w * b + x * c),
            2.0 * (z * a - x * c),  2.0 * (y * a - 2.0 * x * b - w * c), 2.0 * (x * a + z * c),             2.0 * (w * a - 2.0 * z * b + y * c),
            2.0 * (-y * a + x * b), 2.0 * (z * a + w * b - 2.0 * x * c), 2.0 * (-w * a + z * b - 2.0 * y * c), 2.0 * (x * a + y * b),
        );
        let normalize = (Matrix4::identity() - u * u.transpose()) / norm;
        d_unit * normalize
    }

    /// Composition `other` followed by `self` on the rotation; translation kept from `self`.
    pub fn rotated_by(&self, rotation: [f64; 4]) -> Self {
        Self {
            rotation: quat_mul(rotation, self.unit_rotation()),
            translation: self.translation,
        }
    }
}

/// Hamilton product `a * b` of `[w, x, y, z]` quaternions.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> [f64; 4] {
    Pose::from_axis_angle(axis, angle, Vec3::zeros()).rotation
}

/// Uniform random rotation (Shoemake's subgroup algorithm).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos()]
}

/// Angle of the relative rotation between two unit quaternions, in `[0, pi]`.
pub fn rotation_geodesic_angle(q1: [f64; 4], q2: [f64; 4]) -> f64 {
    let dot: f64 = q1.iter().zip(&q2).map(|(a, b)| a * b).sum();
    2.0 * dot.abs().min(1.0).acos()
}

pub fn world_vertices(mesh: &Mesh, pose: &Pose) -> Vec<Vec3> {
    let r = pose.rotation_matrix();
    mesh.vertices().iter().map(|v| r * v + pose.translation).collect()
}

pub fn project_point(p: &Vec3, camera: &Camera) -> ScreenVertex {
    let (right, up, forward) = camera.basis();
    let rel = p - camera.eye;
    let depth = forward.dot(&rel);
    let t = camera.tan_half_fov();
    let uv = Vec2::new(
        right.dot(&rel) / (depth * t * camera.aspect),
        up.dot(&rel) / (depth * t),
    );
    ScreenVertex {
        uv,
        depth,
        clipped: !(depth >= camera.z_near),
    }
}

pub fn project_world(world: &[Vec3], camera: &Camera) -> Vec<ScreenVertex> {
    world.iter().map(|p| project_point(p, camera)).collect()
}

pub fn project(mesh: &Mesh, camera: &Camera, pose: &Pose) -> Vec<ScreenVertex> {
    project_world(&world_vertices(mesh, pose), camera)
}

/// Per-vertex projection derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexJacobian {
    /// `d uv / d v_world`
    pub d_uv: Matrix2x3<f64>,
    /// `d depth / d v_world`
    pub d_depth: Vec3,
    /// `d v_world / d q` through the quaternion normalization.
    pub d_world_dq: Matrix3x4<f64>,
    /// `d v_world / d t`
    pub d_world_dt: Matrix3<f64>,
    /// `d v_world / d v_model`
    pub d_world_dv: Matrix3<f64>,
}

impl VertexJacobian {
    fn zero() -> Self {
        Self {
            d_uv: Matrix2x3::zeros(),
            d_depth: Vec3::zeros(),
            d_world_dq: Matrix3x4::zeros(),
            d_world_dt: Matrix3::zeros(),
            d_world_dv: Matrix3::zeros(),
        }
    }
}

/// Screen-space derivatives of one world point; zero for clipped points.
pub fn screen_jacobian(p: &Vec3, camera: &Camera) -> (Matrix2x3<f64>, Vec3) {
    let (right, up, forward) = camera.basis();
    let rel = p - camera.eye;
    let depth = forward.dot(&rel);
    if !(depth >= camera.z_near) {
        return (Matrix2x3::zeros(), Vec3::zeros());
    }
    let t = camera.tan_half_fov();
    let (a, b) = (right.dot(&rel), up.dot(&rel));
    let du = (right / depth - forward * (a / (depth * depth))) / (t * camera.aspect);
    let dv = (up / depth - forward * (b / (depth * depth))) / t;
    (Matrix2x3::from_rows(&[du.transpose(), dv.transpose()]), forward)
}

pub fn project_jacobians(mesh: &Mesh, camera: &Camera, pose: &Pose) -> Vec<VertexJacobian> {
    let r = pose.rotation_matrix();
    mesh.vertices()
        .iter()
        .map(|v| {
            let p = r * v + pose.translation;
            let (d_uv, d_depth) = screen_jacobian(&p, camera);
            if d_depth == Vec3::zeros() {
                return VertexJacobian::zero();
            }
            VertexJacobian {
                d_uv,
                d_depth,
                d_world_dq: pose.rotation_jacobian(v),
                d_world_dt: Matrix3::identity(),
                d_world_dv: r,
            }
        })
        .collect()
}

/// NDC coordinates of the center of pixel `(row, col)` in an `height x width` image.
pub fn pixel_center(row: usize, col: usize, height: usize, width: usize) -> Vec2 {
    Vec2::new(
        2.0 * (col as f64 + 0.5) / width as f64 - 1.0,
        1.0 - 2.0 * (row as f64 + 0.5) / height as f64,
    )
}
