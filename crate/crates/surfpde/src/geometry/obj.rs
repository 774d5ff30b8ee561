//! Minimal ASCII OBJ reader/writer. Only `v` and `f` records are used;
//! normals, texture coordinates, groups and materials are skipped.

use super::TriangleMesh;
use crate::{Error, Result, Vec3};
use std::path::Path;

/// How to treat faces with more than three vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonTriPolicy {
    /// Triangulate as a fan around the first vertex.
    #[default]
    Fan,
    /// Reject the file.
    Reject,
}

pub fn load_mesh(path: &Path, policy: NonTriPolicy) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, policy)
}

pub fn parse_obj(text: &str, policy: NonTriPolicy) -> Result<TriangleMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad coordinate {tok:?}"),
                    })?;
                    if !c.is_finite() {
                        return Err(Error::Parse {
                            line,
                            msg: "non-finite coordinate".into(),
                        });
                    }
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx: Vec<u32> = Vec::with_capacity(4);
                for tok in tokens {
                    let vert_tok = tok.split('/').next().unwrap_or("");
                    let signed: i64 = vert_tok.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = if signed > 0 {
                        signed - 1
                    } else if signed < 0 {
                        vertices.len() as i64 + signed
                    } else {
                        return Err(Error::Parse {
                            line,
                            msg: "face index 0 is invalid".into(),
                        });
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::Parse {
                            line,
                            msg: format!("face index {signed} out of range"),
                        });
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "face needs at least 3 vertices".into(),
                    });
                }
                if idx.len() > 3 && policy == NonTriPolicy::Reject {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-triangular face ({} vertices)", idx.len()),
                    });
                }
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {} // vn, vt, g, o, s, mtllib, usemtl, l, p ... skipped
        }
    }

    if vertices.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no vertices in file".into(),
        });
    }
    TriangleMesh::new(vertices, faces)
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", NonTriPolicy::Fan).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces.len(), 1);
    }

    #[test]
    fn empty_file_is_error() {
        assert!(parse_obj("", NonTriPolicy::Fan).is_err());
        assert!(parse_obj("# just a comment\n", NonTriPolicy::Fan).is_err());
    }

    #[test]
    fn icosphere_round_trip_counts() {
        // one icosahedron subdivision: 42 vertices, 80 faces
        let mesh = crate::geometry::geodesic_sphere(2, 1.0);
        assert_eq!(mesh.vertices.len(), 42);
        assert_eq!(mesh.faces.len(), 80);
        let dir = std::env::temp_dir().join("surfpde_obj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ico42.obj");
        save_obj(&mesh, &path).unwrap();
        let loaded = load_mesh(&path, NonTriPolicy::Fan).unwrap();
        assert_eq!(loaded.vertices.len(), 42);
        assert_eq!(loaded.faces.len(), 80);
    }

    #[test]
    fn quad_fan_triangulation() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let mesh = parse_obj(text, NonTriPolicy::Fan).unwrap();
        assert_eq!(mesh.faces.len(), 2);
        assert!(parse_obj(text, NonTriPolicy::Reject).is_err());
    }

    #[test]
    fn error_carries_line_number() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 nope\n";
        match parse_obj(text, NonTriPolicy::Fan) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_and_slashed_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2/2/2 -1/3/3\n";
        let mesh = parse_obj(text, NonTriPolicy::Fan).unwrap();
        assert_eq!(mesh.faces[0], [0, 1, 2]);
    }

    #[test]
    fn out_of_range_index() {
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n", NonTriPolicy::Fan).is_err());
    }
}
