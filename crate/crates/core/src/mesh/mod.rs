//! Indexed triangle meshes, OBJ I/O, vertex normals and the shape metrics
//! used to judge a deformation (curvature change, self-intersection,
//! normal consistency).

mod intersect;
mod metrics;
mod obj;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use intersect::triangles_intersect;
pub use metrics::{
    angle_deficits, gaussian_curvature_change, normal_consistency, self_intersecting_faces,
    self_intersection_ratio,
};
pub use obj::{load_obj, parse_obj, save_obj, write_obj};

pub type Vec3 = Vector3<f64>;

/// Faces with less area than this are skipped by normal and curvature code.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no faces")]
    NoFaces,
    #[error("mesh needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
    #[error("attribute `{name}` has {len} rows for {count} vertices")]
    AttributeLength {
        name: String,
        len: usize,
        count: usize,
    },
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("expected {expected} normals, got {actual}")]
    NormalCount { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-vertex attribute rows keyed by name. Deformation carries them through
/// untouched.
pub type VertexAttributes = BTreeMap<String, Vec<Vec<f64>>>;

/// An indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub attributes: VertexAttributes,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Mesh {
            vertices,
            faces,
            attributes: VertexAttributes::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_attribute(
        mut self,
        name: impl Into<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, MeshError> {
        let name = name.into();
        if rows.len() != self.vertices.len() {
            return Err(MeshError::AttributeLength {
                name,
                len: rows.len(),
                count: self.vertices.len(),
            });
        }
        self.attributes.insert(name, rows);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.vertices.len() < 3 {
            return Err(MeshError::TooFewVertices(self.vertices.len()));
        }
        if self.faces.is_empty() {
            return Err(MeshError::NoFaces);
        }
        let count = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &index in f {
                if index >= count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index,
                        count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace(fi));
            }
        }
        for (name, rows) in &self.attributes {
            if rows.len() != count {
                return Err(MeshError::AttributeLength {
                    name: name.clone(),
                    len: rows.len(),
                    count,
                });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::from_points(self.vertices.iter())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Copy of this mesh with new vertex positions, same faces and attributes.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Mesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Mesh {
            vertices,
            faces: self.faces.clone(),
            attributes: self.attributes.clone(),
        }
    }

    pub fn translated(&self, offset: Vec3) -> Mesh {
        self.with_vertices(self.vertices.iter().map(|v| v + offset).collect())
    }

    /// Uniform scale about `center`.
    pub fn scaled_about(&self, center: Vec3, factor: f64) -> Mesh {
        self.with_vertices(
            self.vertices
                .iter()
                .map(|v| center + (v - center) * factor)
                .collect(),
        )
    }

    /// Undirected mesh edges as sorted index pairs, deduplicated and ordered.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn same_topology(&self, other: &Mesh) -> Result<(), MeshError> {
        if self.vertices.len() != other.vertices.len() {
            return Err(MeshError::TopologyMismatch(format!(
                "{} vs {} vertices",
                self.vertices.len(),
                other.vertices.len()
            )));
        }
        if self.faces != other.faces {
            return Err(MeshError::TopologyMismatch("face lists differ".into()));
        }
        Ok(())
    }
}

/// Axis-aligned extent of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Bounds {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Bounds { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }
}

/// Unit normal and area of a triangle. The normal is zero for degenerate
/// triangles.
pub fn face_normal_area(tri: &[Vec3; 3]) -> (Vec3, f64) {
    let cross = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let len = cross.norm();
    let area = 0.5 * len;
    if area < DEGENERATE_AREA {
        (Vec3::zeros(), area)
    } else {
        (cross / len, area)
    }
}

/// One unit normal per vertex; zero for vertices without a usable incident
/// face.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
}

impl VertexNormals {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn is_valid(&self, vertex: usize) -> bool {
        self.normals[vertex] != Vec3::zeros()
    }
}

/// Unweighted average of unit face normals over the faces incident to each
/// vertex, renormalized.
pub fn vertex_normals(mesh: &Mesh) -> VertexNormals {
    let mut sums = vec![Vec3::zeros(); mesh.vertices.len()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        let (n, area) = face_normal_area(&mesh.triangle(fi));
        if area < DEGENERATE_AREA {
            continue;
        }
        for &v in face {
            sums[v] += n;
        }
    }
    let normals = sums
        .into_iter()
        .map(|s| {
            let len = s.norm();
            if len < 1e-12 {
                Vec3::zeros()
            } else {
                s / len
            }
        })
        .collect();
    VertexNormals { normals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn validate_rejects_bad_indices() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace(0))
        ));
        assert!(matches!(Mesh::new(v, vec![]), Err(MeshError::NoFaces)));
    }

    #[test]
    fn flat_square_normals_point_up() {
        let m = fixtures::flat_square();
        for n in vertex_normals(&m).normals {
            assert!((n - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn cube_corner_normal_counts_fan_multiplicity() {
        // Corner 0 = (0,0,0). Enumerate its incident faces in the fixture by
        // hand and average their axis normals with multiplicity.
        let cube = fixtures::unit_cube();
        let mut sum = Vec3::zeros();
        for f in &cube.faces {
            if f.contains(&0) {
                let (n, _) = face_normal_area(&[
                    cube.vertices[f[0]],
                    cube.vertices[f[1]],
                    cube.vertices[f[2]],
                ]);
                // Every cube face normal is an axis direction.
                assert!((n.abs().max() - 1.0).abs() < 1e-12);
                sum += n;
            }
        }
        let expected = sum.normalize();
        let got = vertex_normals(&cube).normals[0];
        assert!((got - expected).norm() < 1e-12);
        // All three components point outward (negative) at the origin corner.
        assert!(got.x < 0.0 && got.y < 0.0 && got.z < 0.0);
    }

    #[test]
    fn icosphere_normals_are_nearly_radial() {
        let sphere = fixtures::icosphere(2);
        let normals = vertex_normals(&sphere);
        let limit = 5f64.to_radians().cos();
        for (v, n) in sphere.vertices.iter().zip(&normals.normals) {
            assert!(n.dot(&v.normalize()) > limit);
        }
    }

    #[test]
    fn isolated_vertex_gets_zero_normal() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)];
        let m = Mesh::new(v, vec![[0, 1, 2]]).unwrap();
        let n = vertex_normals(&m);
        assert!(!n.is_valid(3));
        assert!(n.is_valid(0));
    }

    #[test]
    fn edges_are_unique() {
        let cube = fixtures::unit_cube();
        // 12 cube edges plus one diagonal per quad.
        assert_eq!(cube.edges().len(), 18);
    }
}
