//! Wavefront OBJ with the per-vertex color extension `v x y z r g b`.

use anyhow::{bail, Context, Result};
use softras::mesh::Mesh;
use softras::Vec3;
use std::fmt::Write as _;
use std::path::Path;

pub const DEFAULT_COLOR: f64 = 0.8;

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_obj(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut polygons: Vec<(usize, Vec<i64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let values: Vec<f64> = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .with_context(|| format!("line {line_no}: bad number in vertex"))?;
                if values.iter().any(|v| !v.is_finite()) {
                    bail!("line {line_no}: non-finite vertex value");
                }
                match values.len() {
                    3 | 4 => colors.push(Vec3::repeat(DEFAULT_COLOR)),
                    6 | 7 => colors.push(Vec3::new(values[3], values[4], values[5])),
                    n => bail!("line {line_no}: vertex has {n} values, expected 3 or 6"),
                }
                vertices.push(Vec3::new(values[0], values[1], values[2]));
            }
            Some("f") => {
                let indices: Vec<i64> = fields
                    .map(|f| {
                        f.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .with_context(|| format!("line {line_no}: bad face index {f:?}"))
                    })
                    .collect::<Result<_>>()?;
                if indices.len() < 3 {
                    bail!("line {line_no}: face with {} vertices", indices.len());
                }
                polygons.push((line_no, indices));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut faces = Vec::new();
    for (line_no, poly) in polygons {
        let resolved: Vec<usize> = poly
            .iter()
            .map(|&k| {
                let idx = if k < 0 { n + k } else { k - 1 };
                if k == 0 || idx < 0 || idx >= n {
                    bail!("line {line_no}: vertex index {k} out of range (1..={n})");
                }
                Ok(idx as usize)
            })
            .collect::<Result<_>>()?;
        for j in 1..resolved.len() - 1 {
            faces.push([resolved[0], resolved[j], resolved[j + 1]]);
        }
    }
    Ok(Mesh::new(vertices, faces, colors)?)
}

pub fn obj_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    for (v, c) in mesh.vertices().iter().zip(mesh.colors()) {
        writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z).expect("write to string");
    }
    for f in mesh.faces() {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).expect("write to string");
    }
    s
}

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, obj_string(mesh)).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.face_count(), 1);
        assert_eq!(m.faces()[0], [0, 1, 2]);
        assert_eq!(m.colors()[0], Vec3::repeat(0.8));
    }

    #[test]
    fn color_extension() {
        let m = parse_obj("v 0 0 0 1 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.colors()[0], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(m.colors()[1], Vec3::repeat(0.8));
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slash_forms_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2//1 -1/1\n";
        assert_eq!(parse_obj(text).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 2"), "{err:#}");
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 5"), "{err:#}");
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 1\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").is_err());
    }

    #[test]
    fn round_trip_through_text() {
        let cube = softras::mesh::make_face_colored_cube();
        let back = parse_obj(&obj_string(&cube)).unwrap();
        assert_eq!(back.vertices(), cube.vertices());
        assert_eq!(back.colors(), cube.colors());
        assert_eq!(back.faces(), cube.faces());
    }
}
