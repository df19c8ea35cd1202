use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::intersect::triangles_intersect;
use super::{face_normal_area, vertex_normals, Mesh, MeshError, Vec3, VertexNormals, DEGENERATE_AREA};

fn corner_angle(at: Vec3, p: Vec3, q: Vec3) -> f64 {
    let a = p - at;
    let b = q - at;
    a.cross(&b).norm().atan2(a.dot(&b))
}

/// Discrete Gaussian curvature as the raw angle deficit `2π − Σθ` at every
/// vertex. Degenerate faces contribute no angle.
pub fn angle_deficits(mesh: &Mesh) -> Vec<f64> {
    let mut sums = vec![0.0; mesh.vertices.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = mesh.triangle(fi);
        if face_normal_area(&tri).1 < DEGENERATE_AREA {
            continue;
        }
        for k in 0..3 {
            sums[f[k]] += corner_angle(tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
        }
    }
    sums.into_iter().map(|s| 2.0 * PI - s).collect()
}

/// Mean absolute change of the per-vertex angle deficit.
pub fn gaussian_curvature_change(original: &Mesh, deformed: &Mesh) -> Result<f64, MeshError> {
    original.same_topology(deformed)?;
    let before = angle_deficits(original);
    let after = angle_deficits(deformed);
    let total: f64 = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (b - a).abs())
        .sum();
    Ok(total / before.len() as f64)
}

fn share_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|i| b.contains(i))
}

/// Flags every face that intersects some other face it shares no vertex
/// with. Candidate pairs come from a uniform hash grid whose cell is 1/50 of
/// the bounding-box diagonal.
pub fn self_intersecting_faces(mesh: &Mesh) -> Vec<bool> {
    let bounds = mesh.bounds();
    let diag = bounds.diagonal();
    if diag <= 0.0 {
        return vec![false; mesh.faces.len()];
    }
    let cell = diag / 50.0;
    let key = |p: f64, lo: f64| ((p - lo) / cell).floor() as i64;
    let cell_range = |fi: usize| {
        let tri = mesh.triangle(fi);
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in &tri {
            for a in 0..3 {
                let k = key(p[a], bounds.min[a]);
                lo[a] = lo[a].min(k);
                hi[a] = hi[a].max(k);
            }
        }
        (lo, hi)
    };

    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for fi in 0..mesh.faces.len() {
        let (lo, hi) = cell_range(fi);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    grid.entry((x, y, z)).or_default().push(fi);
                }
            }
        }
    }

    (0..mesh.faces.len())
        .into_par_iter()
        .map(|fi| {
            let face = &mesh.faces[fi];
            let tri = mesh.triangle(fi);
            let (lo, hi) = cell_range(fi);
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let Some(bucket) = grid.get(&(x, y, z)) else {
                            continue;
                        };
                        for &other in bucket {
                            if other == fi || share_vertex(face, &mesh.faces[other]) {
                                continue;
                            }
                            if triangles_intersect(&tri, &mesh.triangle(other)) {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        })
        .collect()
}

/// Fraction of faces in [`self_intersecting_faces`].
pub fn self_intersection_ratio(mesh: &Mesh) -> f64 {
    let flags = self_intersecting_faces(mesh);
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

/// Mean cosine between the given normals and the normals recomputed on
/// `deformed`. Vertices whose normal is zero on either side are skipped; with
/// nothing left to compare the result is 1.
pub fn normal_consistency(original: &VertexNormals, deformed: &Mesh) -> Result<f64, MeshError> {
    if original.len() != deformed.vertex_count() {
        return Err(MeshError::NormalCount {
            expected: deformed.vertex_count(),
            actual: original.len(),
        });
    }
    let current = vertex_normals(deformed);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in original.normals.iter().zip(&current.normals) {
        if *a == Vec3::zeros() || *b == Vec3::zeros() {
            continue;
        }
        sum += a.dot(b);
        count += 1;
    }
    if count == 0 {
        return Ok(1.0);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    /// Angle sums by the law of cosines, independent of the atan2 route.
    fn oracle_deficits(m: &Mesh) -> Vec<f64> {
        let mut sums = vec![0.0; m.vertex_count()];
        for f in &m.faces {
            for k in 0..3 {
                let p = m.vertices[f[k]];
                let q = m.vertices[f[(k + 1) % 3]];
                let r = m.vertices[f[(k + 2) % 3]];
                let a = (q - r).norm();
                let b = (p - r).norm();
                let c = (p - q).norm();
                sums[f[k]] += ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0).acos();
            }
        }
        sums.into_iter().map(|s| 2.0 * PI - s).collect()
    }

    #[test]
    fn curvature_identity_is_zero() {
        let m = fixtures::icosphere(1);
        assert_eq!(gaussian_curvature_change(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn curvature_uniform_scale_is_zero() {
        let m = fixtures::airplane_cross();
        let s = m.scaled_about(Vec3::new(0.3, -0.2, 0.1), 2.0);
        assert!(gaussian_curvature_change(&m, &s).unwrap() < 1e-9);
    }

    #[test]
    fn lifted_center_matches_oracle() {
        let flat = fixtures::pyramid(0.0);
        let lifted = fixtures::pyramid(0.5);
        let before = oracle_deficits(&flat);
        let after = oracle_deficits(&lifted);
        let expected: f64 =
            before.iter().zip(&after).map(|(a, b)| (b - a).abs()).sum::<f64>() / 5.0;
        let got = gaussian_curvature_change(&flat, &lifted).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // Frozen value from the oracle above.
        assert!((got - 0.178_145_622_945_542_56).abs() < 1e-9, "{got}");
    }

    #[test]
    fn curvature_topology_mismatch() {
        let a = fixtures::unit_cube();
        let b = fixtures::icosphere(0);
        assert!(gaussian_curvature_change(&a, &b).is_err());
    }

    #[test]
    fn cube_has_no_self_intersection() {
        assert_eq!(self_intersection_ratio(&fixtures::unit_cube()), 0.0);
        assert_eq!(self_intersection_ratio(&fixtures::icosphere(2)), 0.0);
    }

    #[test]
    fn crossing_pair_is_half() {
        assert_eq!(self_intersection_ratio(&fixtures::crossing_pair()), 0.5);
    }

    #[test]
    fn shared_vertex_pair_is_excluded() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.5, 0.5, -1.0),
            Vec3::new(0.6, 1.5, 1.0),
        ];
        // Second triangle passes through the first and also shares vertex 0.
        let m = Mesh::new(v, vec![[0, 1, 2], [0, 3, 4]]).unwrap();
        assert!(triangles_intersect(&m.triangle(0), &m.triangle(1)));
        assert_eq!(self_intersection_ratio(&m), 0.0);
    }

    #[test]
    fn normal_consistency_identity_and_scale() {
        let m = fixtures::icosphere(2);
        let n = vertex_normals(&m);
        assert_eq!(normal_consistency(&n, &m).unwrap(), 1.0);
        let s = m.scaled_about(Vec3::new(1.0, 2.0, 3.0), 1.7);
        assert!((normal_consistency(&n, &s).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_region_anisotropic_stretch_keeps_consistency() {
        let m = fixtures::flat_square();
        let n = vertex_normals(&m);
        let stretched = m.with_vertices(
            m.vertices.iter().map(|v| Vec3::new(v.x * 3.0, v.y * 0.4, v.z)).collect(),
        );
        assert_eq!(normal_consistency(&n, &stretched).unwrap(), 1.0);
    }

    #[test]
    fn normal_count_mismatch() {
        let m = fixtures::unit_cube();
        let n = vertex_normals(&fixtures::icosphere(0));
        assert!(normal_consistency(&n, &m).is_err());
    }

    proptest! {
        #[test]
        fn normals_rotate_with_mesh(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 0.0f64..6.0) {
            let axis = Vec3::new(ax, ay, az);
            prop_assume!(axis.norm() > 1e-3);
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let m = fixtures::airplane_cross();
            let r = m.with_vertices(m.vertices.iter().map(|v| rot * v).collect());
            let n0 = vertex_normals(&m);
            let n1 = vertex_normals(&r);
            for (a, b) in n0.normals.iter().zip(&n1.normals) {
                prop_assert!((rot * a - b).norm() < 1e-6);
            }
        }

        #[test]
        fn self_intersection_ignores_face_order(seed in 0u64..1000) {
            let m = fixtures::crossing_pair();
            let mut faces = m.faces.clone();
            // Deterministic shuffle from the seed.
            let mut s = seed;
            for i in (1..faces.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                faces.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled = Mesh::new(m.vertices.clone(), faces).unwrap();
            prop_assert_eq!(self_intersection_ratio(&shuffled), self_intersection_ratio(&m));
        }
    }
}
