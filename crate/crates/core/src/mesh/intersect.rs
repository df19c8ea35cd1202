use super::Vec3;

fn project(tri: &[Vec3; 3], axis: &Vec3) -> (f64, f64) {
    let a = tri[0].dot(axis);
    let b = tri[1].dot(axis);
    let c = tri[2].dot(axis);
    (a.min(b).min(c), a.max(b).max(c))
}

/// Separating-axis test for two closed triangles. Touching and coplanar
/// overlap both count as intersection.
///
/// Candidate axes are the two face normals, the nine edge-edge cross
/// products, and the six in-plane edge normals that cover the coplanar case.
pub fn triangles_intersect(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let e1 = [t1[1] - t1[0], t1[2] - t1[1], t1[0] - t1[2]];
    let e2 = [t2[1] - t2[0], t2[2] - t2[1], t2[0] - t2[2]];
    let n1 = e1[0].cross(&e1[1]);
    let n2 = e2[0].cross(&e2[1]);

    let scale = e1
        .iter()
        .chain(e2.iter())
        .map(|e| e.norm_squared())
        .fold(0.0, f64::max);
    let min_axis = 1e-24 * scale * scale;

    let separates = |axis: Vec3| -> bool {
        if axis.norm_squared() <= min_axis {
            return false;
        }
        let (lo1, hi1) = project(t1, &axis);
        let (lo2, hi2) = project(t2, &axis);
        hi1 < lo2 || hi2 < lo1
    };

    if separates(n1) || separates(n2) {
        return false;
    }
    for a in &e1 {
        for b in &e2 {
            if separates(a.cross(b)) {
                return false;
            }
        }
    }
    for e in &e1 {
        if separates(n1.cross(e)) {
            return false;
        }
    }
    for e in &e2 {
        if separates(n2.cross(e)) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    /// Independent check: does any edge of one triangle pierce the other?
    /// Valid for non-coplanar configurations.
    fn segment_hits_triangle(p: Vec3, q: Vec3, t: &[Vec3; 3]) -> bool {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        let dp = (p - t[0]).dot(&n);
        let dq = (q - t[0]).dot(&n);
        if dp * dq > 0.0 || dp == dq {
            return false;
        }
        let x = p + (q - p) * (dp / (dp - dq));
        let inside = |a: Vec3, b: Vec3| (b - a).cross(&(x - a)).dot(&n) >= 0.0;
        inside(t[0], t[1]) && inside(t[1], t[2]) && inside(t[2], t[0])
    }

    fn brute(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
        (0..3).any(|i| segment_hits_triangle(t1[i], t1[(i + 1) % 3], t2))
            || (0..3).any(|i| segment_hits_triangle(t2[i], t2[(i + 1) % 3], t1))
    }

    #[test]
    fn crossing_triangles() {
        let a = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let b = [v(0.5, 0.5, -1.0), v(0.5, 0.5, 1.0), v(0.6, 1.5, 0.0)];
        assert!(brute(&a, &b));
        assert!(triangles_intersect(&a, &b));
    }

    #[test]
    fn separated_triangles() {
        let a = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        let b = [v(0.0, 0.0, 1.0), v(1.0, 0.0, 1.0), v(0.0, 1.0, 1.0)];
        assert!(!triangles_intersect(&a, &b));
        // Near miss across an edge.
        let c = [v(0.6, 0.6, -1.0), v(0.6, 0.6, 1.0), v(2.0, 2.0, 0.0)];
        assert!(!brute(&a, &c));
        assert!(!triangles_intersect(&a, &c));
    }

    #[test]
    fn coplanar_overlap_counts() {
        let a = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let b = [v(0.5, 0.5, 0.0), v(3.0, 0.5, 0.0), v(0.5, 3.0, 0.0)];
        assert!(triangles_intersect(&a, &b));
        let c = [v(3.0, 3.0, 0.0), v(4.0, 3.0, 0.0), v(3.0, 4.0, 0.0)];
        assert!(!triangles_intersect(&a, &c));
    }

    #[test]
    fn agrees_with_segment_oracle_on_a_sweep() {
        let a = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        for i in 0..40 {
            for j in 0..40 {
                let x = -0.5 + i as f64 * 0.0431;
                let y = -0.5 + j as f64 * 0.0437;
                let b = [v(x, y, -0.7), v(x + 0.3, y + 0.1, 0.9), v(x - 0.2, y + 0.4, 0.35)];
                assert_eq!(triangles_intersect(&a, &b), brute(&a, &b), "x={x} y={y}");
            }
        }
    }
}
