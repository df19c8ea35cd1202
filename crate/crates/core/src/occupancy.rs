//! Surface voxelization and the per-slab projection grids that feed the
//! split score.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{Bounds, Mesh, Vec3};

pub const DEFAULT_RESOLUTION: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum OccupancyError {
    #[error("resolution {0} outside [4, 512]")]
    Resolution(usize),
    #[error("mesh bounding box has zero extent")]
    Degenerate,
    #[error("slab [{start}, {end}) outside cell range [{lo}, {hi})")]
    SlabOutOfRange {
        start: i64,
        end: i64,
        lo: i64,
        hi: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The two remaining axes, in increasing order.
    pub fn transverse(self) -> (Axis, Axis) {
        match self {
            Axis::X => (Axis::Y, Axis::Z),
            Axis::Y => (Axis::X, Axis::Z),
            Axis::Z => (Axis::X, Axis::Y),
        }
    }
}

/// Inclusive range of cell indices per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRange {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CellRange {
    pub fn len(&self, axis: Axis) -> usize {
        self.hi[axis.index()] + 1 - self.lo[axis.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub cell_size: f64,
    bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(dims: [usize; 3], origin: Vec3, cell_size: f64) -> Self {
        OccupancyGrid {
            dims,
            origin,
            cell_size,
            bits: vec![false; dims[0] * dims[1] * dims[2]],
        }
    }

    fn offset(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn get(&self, c: [usize; 3]) -> bool {
        self.bits[self.offset(c)]
    }

    pub fn set(&mut self, c: [usize; 3], value: bool) {
        let o = self.offset(c);
        self.bits[o] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn cell_min(&self, c: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.cell_size
    }

    /// World coordinate of the boundary plane in front of cell `index`.
    pub fn boundary(&self, axis: Axis, index: usize) -> f64 {
        self.origin[axis.index()] + index as f64 * self.cell_size
    }

    pub fn bounds(&self) -> Bounds {
        let max = self.origin
            + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
                * self.cell_size;
        Bounds {
            min: self.origin,
            max,
        }
    }

    /// Cells overlapping the closed box `[min, max]`, clamped to the grid.
    pub fn cell_range(&self, min: &Vec3, max: &Vec3) -> CellRange {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            let cell = |x: f64| {
                let i = ((x - self.origin[a]) / self.cell_size).floor();
                i.clamp(0.0, (self.dims[a] - 1) as f64) as usize
            };
            lo[a] = cell(min[a]);
            hi[a] = cell(max[a]).max(lo[a]);
        }
        CellRange { lo, hi }
    }

    /// Run-length encoded text dump for fixture diffing.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(
            out,
            "origin {} {} {}",
            self.origin.x, self.origin.y, self.origin.z
        );
        let _ = writeln!(out, "cell_size {}", self.cell_size);
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len.to_string());
                current = b;
                len = 1;
            }
        }
        runs.push(len.to_string());
        let _ = writeln!(out, "runs {}", runs.join(" "));
        out
    }

    pub fn from_rle(text: &str) -> Option<Self> {
        let mut dims = None;
        let mut origin = None;
        let mut cell = None;
        let mut runs = None;
        for line in text.lines() {
            let mut it = line.split_whitespace();
            let nums = |it: std::str::SplitWhitespace| -> Option<Vec<f64>> {
                it.map(|t| t.parse().ok()).collect()
            };
            match it.next()? {
                "dims" => {
                    let v = nums(it)?;
                    dims = Some([v[0] as usize, v[1] as usize, v[2] as usize]);
                }
                "origin" => {
                    let v = nums(it)?;
                    origin = Some(Vec3::new(v[0], v[1], v[2]));
                }
                "cell_size" => cell = nums(it)?.first().copied(),
                "runs" => {
                    runs = Some(
                        it.map(|t| t.parse::<usize>().ok())
                            .collect::<Option<Vec<_>>>()?,
                    )
                }
                _ => return None,
            }
        }
        let mut grid = OccupancyGrid::empty(dims?, origin?, cell?);
        let mut pos = 0;
        let mut value = false;
        for run in runs? {
            for _ in 0..run {
                *grid.bits.get_mut(pos)? = value;
                pos += 1;
            }
            value = !value;
        }
        (pos == grid.bits.len()).then_some(grid)
    }
}

/// Triangle vs closed box overlap by the separating axis theorem (box
/// normals, triangle normal, nine edge cross products). Touching counts.
pub fn triangle_box_overlap(tri: &[Vec3; 3], box_min: &Vec3, box_max: &Vec3) -> bool {
    let center = (box_min + box_max) * 0.5;
    let half = (box_max - box_min) * 0.5;
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];

    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }

    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let separated = |axis: Vec3| -> bool {
        if axis.norm_squared() == 0.0 {
            return false;
        }
        let p = [v[0].dot(&axis), v[1].dot(&axis), v[2].dot(&axis)];
        let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        p[0].min(p[1]).min(p[2]) > r || p[0].max(p[1]).max(p[2]) < -r
    };
    if separated(edges[0].cross(&edges[1])) {
        return false;
    }
    for e in &edges {
        for a in 0..3 {
            let mut unit = Vec3::zeros();
            unit[a] = 1.0;
            if separated(unit.cross(e)) {
                return false;
            }
        }
    }
    true
}

/// Fraction of a cell by which test boxes shrink, so that triangles merely
/// touching a cell face do not mark the cell.
const TOUCH_MARGIN: f64 = 1e-7;

/// Conservative surface voxelization.
///
/// Cells are cubes sized so that the longest axis of the mesh bounding box
/// spans `resolution` cells; the grid adds one padding layer and is centered
/// on the mesh. A cell is occupied when a triangle reaches its interior. A
/// triangle lying exactly in a grid plane is assigned to the layer on the
/// side of the mesh center.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<OccupancyGrid, OccupancyError> {
    if !(4..=512).contains(&resolution) {
        return Err(OccupancyError::Resolution(resolution));
    }
    let bounds = mesh.bounds();
    let extent = bounds.extent();
    let longest = extent.max();
    if !(longest > 0.0) {
        return Err(OccupancyError::Degenerate);
    }
    let cell = longest / resolution as f64;
    let center = bounds.center();
    let mut dims = [0usize; 3];
    let mut origin = Vec3::zeros();
    for a in 0..3 {
        let span = ((extent[a] / cell) - 1e-9).ceil().max(1.0) as usize;
        dims[a] = span + 2;
        origin[a] = if extent[a] == longest {
            bounds.min[a] - cell
        } else {
            center[a] - dims[a] as f64 * cell * 0.5
        };
    }
    let mut grid = OccupancyGrid::empty(dims, origin, cell);
    let margin = TOUCH_MARGIN * cell;

    let per_face: Vec<Vec<usize>> = (0..mesh.faces.len())
        .into_par_iter()
        .map(|fi| {
            let mut tri = mesh.triangle(fi);
            // Nudge triangles lying in a grid plane into the inner layer.
            for a in 0..3 {
                if tri[0][a] == tri[1][a] && tri[1][a] == tri[2][a] {
                    let t = (tri[0][a] - origin[a]) / cell;
                    if (t - t.round()).abs() < 1e-9 {
                        let dir = if tri[0][a] > center[a] { -1.0 } else { 1.0 };
                        for p in tri.iter_mut() {
                            p[a] += dir * 2.0 * margin;
                        }
                    }
                }
            }
            let b = Bounds::from_points(tri.iter());
            let range = grid.cell_range(&b.min, &b.max);
            let mut hits = Vec::new();
            for z in range.lo[2]..=range.hi[2] {
                for y in range.lo[1]..=range.hi[1] {
                    for x in range.lo[0]..=range.hi[0] {
                        let lo = grid.cell_min([x, y, z]);
                        let hi = lo + Vec3::repeat(cell);
                        let shrink = Vec3::repeat(margin);
                        if triangle_box_overlap(&tri, &(lo + shrink), &(hi - shrink)) {
                            hits.push(grid.offset([x, y, z]));
                        }
                    }
                }
            }
            hits
        })
        .collect();
    for hits in per_face {
        for o in hits {
            grid.bits[o] = true;
        }
    }
    Ok(grid)
}

/// Silhouette of a slab of voxels, projected along the slab axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrid {
    pub axis: Axis,
    pub slab: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub bitmap: Vec<bool>,
    pub area: usize,
}

/// OR-projection of the occupied cells in `[slab_start, slab_start + slab_width)`
/// along `axis`, restricted to the transverse cells of `range`.
pub fn projection_grid(
    grid: &OccupancyGrid,
    range: &CellRange,
    axis: Axis,
    slab_start: usize,
    slab_width: usize,
) -> Result<ProjectionGrid, OccupancyError> {
    let a = axis.index();
    let end = slab_start + slab_width;
    if slab_width == 0 || slab_start < range.lo[a] || end > range.hi[a] + 1 || end > grid.dims[a] {
        return Err(OccupancyError::SlabOutOfRange {
            start: slab_start as i64,
            end: end as i64,
            lo: range.lo[a] as i64,
            hi: range.hi[a] as i64 + 1,
        });
    }
    let (u, v) = axis.transverse();
    let (ui, vi) = (u.index(), v.index());
    let width = range.len(u);
    let height = range.len(v);
    let mut bitmap = vec![false; width * height];
    let mut area = 0;
    for jv in 0..height {
        for ju in 0..width {
            let mut c = [0; 3];
            c[ui] = range.lo[ui] + ju;
            c[vi] = range.lo[vi] + jv;
            let hit = (slab_start..end).any(|k| {
                c[a] = k;
                grid.get(c)
            });
            if hit {
                bitmap[jv * width + ju] = true;
                area += 1;
            }
        }
    }
    Ok(ProjectionGrid {
        axis,
        slab: (slab_start, end),
        width,
        height,
        bitmap,
        area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    /// Oracle: sample each triangle densely and mark every cell whose open
    /// interior contains a sample. Valid for the axis-aligned fixtures used
    /// here, whose triangles never lie in a grid plane.
    fn sampled_occupancy(mesh: &Mesh, grid: &OccupancyGrid) -> Vec<bool> {
        let mut bits = vec![false; grid.bits.len()];
        let n = 200;
        for fi in 0..mesh.faces.len() {
            let t = mesh.triangle(fi);
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                    let p = t[0] + (t[1] - t[0]) * u + (t[2] - t[0]) * v;
                    let q = (p - grid.origin) / grid.cell_size;
                    let mut c = [0usize; 3];
                    let mut interior = true;
                    for a in 0..3 {
                        let f = q[a].floor();
                        if q[a] - f < 1e-6 || f + 1.0 - q[a] < 1e-6 {
                            interior = false;
                        }
                        c[a] = f as usize;
                    }
                    if interior {
                        bits[grid.offset(c)] = true;
                    }
                }
            }
        }
        bits
    }

    fn square_at_half() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.5),
                Vec3::new(1.0, 0.0, 0.5),
                Vec3::new(1.0, 1.0, 0.5),
                Vec3::new(0.0, 1.0, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn square_occupies_one_slab() {
        let grid = voxelize(&square_at_half(), 4).unwrap();
        assert_eq!(grid.occupied_count(), 16);
        let oracle = sampled_occupancy(&square_at_half(), &grid);
        assert_eq!(oracle, grid.bits);
        // Every occupied cell straddles z = 0.5.
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    if grid.get([x, y, z]) {
                        let lo = grid.cell_min([x, y, z]);
                        assert!(lo.z < 0.5 && lo.z + grid.cell_size > 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn point_mesh_is_degenerate() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        let m = Mesh {
            vertices: vec![p; 3],
            faces: vec![[0, 1, 2]],
            attributes: Default::default(),
        };
        assert_eq!(voxelize(&m, 16), Err(OccupancyError::Degenerate));
        assert_eq!(
            voxelize(&fixtures::unit_cube(), 3),
            Err(OccupancyError::Resolution(3))
        );
    }

    #[test]
    fn cube_shell_is_hollow() {
        let grid = voxelize(&fixtures::unit_cube(), 8).unwrap();
        assert_eq!(grid.dims, [10, 10, 10]);
        // Shell: faces land in the outermost in-box layer.
        for z in 0..10 {
            for y in 0..10 {
                for x in 0..10 {
                    let c = [x, y, z];
                    let inside = c.iter().all(|&i| (1..=8).contains(&i));
                    let on_shell = inside && c.iter().any(|&i| i == 1 || i == 8);
                    assert_eq!(grid.get(c), on_shell, "cell {c:?}");
                }
            }
        }
    }

    #[test]
    fn tilted_mesh_matches_sampling_oracle() {
        let m = fixtures::icosphere(1);
        let grid = voxelize(&m, 12).unwrap();
        let oracle = sampled_occupancy(&m, &grid);
        // Sampling can only miss slivers, never invent cells.
        for (o, g) in oracle.iter().zip(&grid.bits) {
            assert!(!*o || *g);
        }
        let missed = oracle.iter().zip(&grid.bits).filter(|(o, g)| **g && !**o).count();
        assert!(missed * 20 < grid.occupied_count(), "missed {missed}");
    }

    #[test]
    fn occupied_cells_are_near_the_surface() {
        let m = fixtures::icosphere(2);
        let grid = voxelize(&m, 24).unwrap();
        let b = grid.bounds();
        assert!(b.min <= m.bounds().min && b.max >= m.bounds().max);
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    if grid.get([x, y, z]) {
                        let c = grid.cell_min([x, y, z]) + Vec3::repeat(grid.cell_size * 0.5);
                        // Unit sphere: distance to surface is |r - 1| up to
                        // the chord error of the tessellation.
                        assert!((c.norm() - 1.0).abs() < grid.cell_size + 0.05);
                    }
                }
            }
        }
    }

    /// Two solid 4³ blocks joined by a one-cell bar of length 2 along x.
    pub(crate) fn dumbbell_grid() -> OccupancyGrid {
        let mut g = OccupancyGrid::empty([12, 6, 6], Vec3::zeros(), 1.0);
        for x in 1..11 {
            for y in 1..5 {
                for z in 1..5 {
                    let block = x < 5 || x >= 7;
                    let bar = y == 2 && z == 2;
                    if block || bar {
                        g.set([x, y, z], true);
                    }
                }
            }
        }
        g
    }

    #[test]
    fn projection_areas() {
        let g = dumbbell_grid();
        let all = CellRange {
            lo: [0, 0, 0],
            hi: [11, 5, 5],
        };
        assert_eq!(projection_grid(&g, &all, Axis::X, 0, 1).unwrap().area, 0);
        assert_eq!(projection_grid(&g, &all, Axis::X, 5, 1).unwrap().area, 1);
        assert_eq!(projection_grid(&g, &all, Axis::X, 3, 1).unwrap().area, 16);
        let mut full = OccupancyGrid::empty([5, 7, 3], Vec3::zeros(), 1.0);
        for x in 0..5 {
            for y in 0..7 {
                full.set([x, y, 1], true);
            }
        }
        let r = full.cell_range(&Vec3::zeros(), &Vec3::new(4.5, 6.5, 2.5));
        let p = projection_grid(&full, &r, Axis::Z, 1, 1).unwrap();
        assert_eq!(p.area, 35);
        assert_eq!(p.bitmap.iter().filter(|&&b| b).count(), p.area);
        assert!(projection_grid(&g, &all, Axis::X, 11, 2).is_err());
    }

    #[test]
    fn rle_round_trip() {
        let g = dumbbell_grid();
        let back = OccupancyGrid::from_rle(&g.to_rle()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn translation_with_origin_shift_keeps_bits() {
        let m = fixtures::two_cube();
        let a = voxelize(&m, 16).unwrap();
        let shift = Vec3::new(0.25, -0.5, 1.0);
        let b = voxelize(&m.translated(shift), 16).unwrap();
        assert_eq!(a.dims, b.dims);
        assert!((b.origin - a.origin - shift).norm() < 1e-12);
        assert_eq!(a.bits, b.bits);
    }

    proptest! {
        #[test]
        fn wider_slabs_never_shrink(start in 0usize..10, w in 1usize..3) {
            let g = dumbbell_grid();
            let all = CellRange { lo: [0, 0, 0], hi: [11, 5, 5] };
            prop_assume!(start + w + 1 <= 12);
            let narrow = projection_grid(&g, &all, Axis::X, start, w).unwrap();
            let wide = projection_grid(&g, &all, Axis::X, start, w + 1).unwrap();
            prop_assert!(wide.area >= narrow.area);
        }

        #[test]
        fn union_of_slabs_is_whole_projection(axis in 0usize..3) {
            let g = dumbbell_grid();
            let axis = Axis::ALL[axis];
            let all = CellRange { lo: [0, 0, 0], hi: [11, 5, 5] };
            let n = g.dims[axis.index()];
            let whole = projection_grid(&g, &all, axis, 0, n).unwrap();
            let mut union = vec![false; whole.bitmap.len()];
            for s in 0..n {
                let p = projection_grid(&g, &all, axis, s, 1).unwrap();
                for (u, b) in union.iter_mut().zip(&p.bitmap) {
                    *u |= *b;
                }
            }
            prop_assert_eq!(union, whole.bitmap);
        }
    }
}
