use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Mesh, MeshError, Vec3};

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text)
}

/// Parses `v` and `f` records. Polygons are fan-triangulated; texture and
/// normal indices in `f i/t/n` forms are ignored, as is every other record.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in xyz.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| MeshError::Parse {
                        line,
                        message: format!("bad coordinate `{tok}`"),
                    })?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| MeshError::Parse {
                        line,
                        message: format!("bad face index `{tok}`"),
                    })?;
                    let resolved = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => vertices.len() as i64 + i,
                        _ => -1,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(MeshError::Parse {
                            line,
                            message: format!("face index {idx} out of range"),
                        });
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..poly.len() - 1 {
                    let tri = [poly[0], poly[k], poly[k + 1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        log::warn!("line {line}: dropping triangle with repeated vertex");
                        continue;
                    }
                    faces.push(tri);
                }
            }
            _ => {}
        }
    }

    Mesh::new(vertices, faces)
}

/// Writes `v` and `f` records with shortest round-trip float formatting.
pub fn write_obj(mesh: &Mesh, out: &mut impl Write) -> Result<(), MeshError> {
    mesh.validate()?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    mesh.validate()?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_obj(mesh, &mut out)?;
    out.flush()?;
    Ok(())
}
