//! Triangle meshes with per-vertex colors, flat face normals and the uniform
//! (umbrella) Laplacian used by the smoothness regularizer.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::Vec3;

/// Cross products shorter than this are treated as zero-area faces.
pub const DEGENERATE_AREA: f64 = 1e-15;

/// Undirected 1-ring neighbor lists, sorted ascending per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_faces(vertex_count: usize, faces: &[[usize; 3]]) -> Self {
        let mut neighbors = vec![Vec::new(); vertex_count];
        for f in faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self { neighbors }
    }

    pub fn neighbors(&self, vertex: usize) -> &[usize] {
        &self.neighbors[vertex]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Topology {
    faces: Vec<[usize; 3]>,
    adjacency: OnceLock<Adjacency>,
}

/// A triangle mesh with one RGB color per vertex.
///
/// Topology (faces and the derived adjacency) is shared between meshes that
/// only differ in vertex positions or colors, so deforming a mesh never
/// recomputes neighbor sets.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    colors: Vec<Vec3>,
    topology: Arc<Topology>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.colors == other.colors && self.topology.faces == other.topology.faces
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, colors: Vec<Vec3>) -> Result<Self> {
        validate(&vertices, &faces, &colors)?;
        Ok(Self {
            vertices,
            colors,
            topology: Arc::new(Topology {
                faces,
                adjacency: OnceLock::new(),
            }),
        })
    }

    /// Mesh with every vertex colored `color`.
    pub fn with_uniform_color(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, color: Vec3) -> Result<Self> {
        let colors = vec![color; vertices.len()];
        Self::new(vertices, faces, colors)
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new()).expect("empty mesh is valid")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topology.faces
    }

    pub fn colors(&self) -> &[Vec3] {
        &self.colors
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn adjacency(&self) -> &Adjacency {
        self.topology
            .adjacency
            .get_or_init(|| Adjacency::from_faces(self.vertices.len(), &self.topology.faces))
    }

    /// Same topology and colors, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        if vertices.iter().any(|v| !is_finite(v)) {
            return Err(Error::NonFinite("vertices"));
        }
        Ok(Self {
            vertices,
            colors: self.colors.clone(),
            topology: Arc::clone(&self.topology),
        })
    }

    /// Same topology and positions, new vertex colors.
    pub fn with_colors(&self, colors: Vec<Vec3>) -> Result<Self> {
        validate_colors(self.vertices.len(), &colors)?;
        Ok(Self {
            vertices: self.vertices.clone(),
            colors,
            topology: Arc::clone(&self.topology),
        })
    }

    /// True when both meshes were derived from the same face list.
    pub fn shares_topology(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || self.topology.faces == other.topology.faces
    }

    /// Applies `f` to every vertex position.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        self.with_vertices(self.vertices.iter().map(f).collect())
    }
}

fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn validate_colors(vertex_count: usize, colors: &[Vec3]) -> Result<()> {
    if colors.len() != vertex_count {
        return Err(Error::InvalidMesh(format!(
            "{} colors for {} vertices",
            colors.len(),
            vertex_count
        )));
    }
    for (i, c) in colors.iter().enumerate() {
        if c.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidMesh(format!("color {i} outside [0,1]: {c:?}")));
        }
    }
    Ok(())
}

fn validate(vertices: &[Vec3], faces: &[[usize; 3]], colors: &[Vec3]) -> Result<()> {
    if let Some(i) = vertices.iter().position(|v| !is_finite(v)) {
        return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
    }
    for (fi, f) in faces.iter().enumerate() {
        if f.iter().any(|&i| i >= vertices.len()) {
            return Err(Error::InvalidMesh(format!(
                "face {fi} {f:?} references a vertex >= {}",
                vertices.len()
            )));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::InvalidMesh(format!("face {fi} {f:?} repeats a vertex")));
        }
    }
    validate_colors(vertices.len(), colors)
}

/// Unit face normals; zero-area faces get a zero vector and `degenerate[f] = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<bool>,
}

/// Unnormalized face normal `(v1 - v0) x (v2 - v0)`.
pub fn face_cross(vertices: &[Vec3], face: &[usize; 3]) -> Vec3 {
    let v0 = vertices[face[0]];
    (vertices[face[1]] - v0).cross(&(vertices[face[2]] - v0))
}

pub fn compute_face_normals(mesh: &Mesh) -> FaceNormals {
    face_normals_of(mesh.vertices(), mesh.faces())
}

pub fn face_normals_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> FaceNormals {
    let mut normals = Vec::with_capacity(faces.len());
    let mut degenerate = Vec::with_capacity(faces.len());
    for f in faces {
        let c = face_cross(vertices, f);
        let len = c.norm();
        if len < DEGENERATE_AREA {
            normals.push(Vec3::zeros());
            degenerate.push(true);
        } else {
            normals.push(c / len);
            degenerate.push(false);
        }
    }
    FaceNormals { normals, degenerate }
}

/// `delta_i = value_i - mean(value_j for j in ring(i))`; isolated vertices give zero.
pub fn uniform_laplacian(mesh: &Mesh, values: &[Vec3]) -> Result<Vec<Vec3>> {
    if values.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            actual: values.len(),
        });
    }
    Ok(laplacian_with(mesh.adjacency(), values))
}

pub fn laplacian_with(adjacency: &Adjacency, values: &[Vec3]) -> Vec<Vec3> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ring = adjacency.neighbors(i);
            if ring.is_empty() {
                return Vec3::zeros();
            }
            let mean = ring.iter().fold(Vec3::zeros(), |acc, &j| acc + values[j]) / ring.len() as f64;
            v - mean
        })
        .collect()
}

pub fn displace(mesh: &Mesh, displacements: &[Vec3]) -> Result<Mesh> {
    if displacements.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            actual: displacements.len(),
        });
    }
    if displacements.iter().any(|d| !is_finite(d)) {
        return Err(Error::NonFinite("displacements"));
    }
    mesh.with_vertices(mesh.vertices().iter().zip(displacements).map(|(v, d)| v + d).collect())
}

/// Corner colors of the cube fixture, indexed by `x + 2y + 4z` corner bits.
const CUBE_CORNER_COLORS: [[f64; 3]; 8] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.8, 0.2],
    [0.1, 0.3, 0.9],
    [0.95, 0.85, 0.1],
    [0.8, 0.2, 0.8],
    [0.1, 0.85, 0.85],
    [0.95, 0.55, 0.1],
    [0.9, 0.9, 0.9],
];

const CUBE_FACE_COLORS: [[f64; 3]; 6] = [
    [0.9, 0.15, 0.15],
    [0.15, 0.8, 0.2],
    [0.15, 0.3, 0.9],
    [0.95, 0.85, 0.15],
    [0.8, 0.2, 0.8],
    [0.15, 0.85, 0.85],
];

/// Quads of the cube as corner indices, one per axis-aligned face.
const CUBE_QUADS: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = -
    [1, 3, 7, 5], // x = +
    [0, 1, 5, 4], // y = -
    [2, 3, 7, 6], // y = +
    [0, 1, 3, 2], // z = -
    [4, 5, 7, 6], // z = +
];

fn cube_corners() -> Vec<Vec3> {
    (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 != 0 { 0.5 } else { -0.5 },
                if i & 2 != 0 { 0.5 } else { -0.5 },
                if i & 4 != 0 { 0.5 } else { -0.5 },
            )
        })
        .collect()
}

/// Ensures every face of a mesh centered at the origin winds outward.
fn orient_outward(vertices: &[Vec3], faces: &mut [[usize; 3]]) {
    for f in faces.iter_mut() {
        let c = face_cross(vertices, f);
        let centroid = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
        if c.dot(&centroid) < 0.0 {
            f.swap(1, 2);
        }
    }
}

fn quad_to_tris(q: [usize; 4]) -> [[usize; 3]; 2] {
    [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
}

/// Unit cube centered at the origin: 8 shared corners, 12 outward faces and a
/// distinct color per corner.
pub fn make_unit_cube() -> Mesh {
    let vertices = cube_corners();
    let mut faces: Vec<[usize; 3]> = CUBE_QUADS.iter().flat_map(|&q| quad_to_tris(q)).collect();
    orient_outward(&vertices, &mut faces);
    let colors = CUBE_CORNER_COLORS.iter().map(|c| Vec3::from(*c)).collect();
    Mesh::new(vertices, faces, colors).expect("cube fixture is valid")
}

/// Unit cube with one flat color per face: corners are duplicated per face
/// (24 vertices) so the two triangles of a face share a single color.
pub fn make_face_colored_cube() -> Mesh {
    let corners = cube_corners();
    let mut vertices = Vec::with_capacity(24);
    let mut colors = Vec::with_capacity(24);
    let mut faces = Vec::with_capacity(12);
    for (qi, q) in CUBE_QUADS.iter().enumerate() {
        let base = vertices.len();
        for &c in q {
            vertices.push(corners[c]);
            colors.push(Vec3::from(CUBE_FACE_COLORS[qi]));
        }
        faces.extend(quad_to_tris([base, base + 1, base + 2, base + 3]));
    }
    orient_outward(&vertices, &mut faces);
    Mesh::new(vertices, faces, colors).expect("cube fixture is valid")
}

pub const MAX_ICO_SUBDIVISIONS: u32 = 5;

/// Unit-radius icosphere with white vertex colors.
pub fn make_ico_sphere(subdivisions: u32) -> Result<Mesh> {
    if subdivisions > MAX_ICO_SUBDIVISIONS {
        return Err(Error::InvalidMesh(format!(
            "icosphere subdivisions {subdivisions} > {MAX_ICO_SUBDIVISIONS}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut vertices);
            let bc = midpoint(f[1], f[2], &mut vertices);
            let ca = midpoint(f[2], f[0], &mut vertices);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    orient_outward(&vertices, &mut faces);
    Mesh::with_uniform_color(vertices, faces, Vec3::new(1.0, 1.0, 1.0))
}
