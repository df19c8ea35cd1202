//! Part-level box generation by greedy, priority-driven splitting.
//!
//! Each box is scored by scanning every axis for the cut with the sharpest
//! change in cross-section silhouette area, weighted towards long axes. The
//! box with the lowest score is split next.

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::mesh::{Bounds, Mesh, Vec3};
use crate::occupancy::{projection_grid, Axis, OccupancyGrid};

pub const DEFAULT_MIN_VERTICES: usize = 8;
pub const MAX_BOXES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("target box count {0} outside [1, {MAX_BOXES}]")]
    TargetCount(usize),
}

/// A part-level axis-aligned box and the mesh vertices it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
    pub owned: Vec<usize>,
}

impl Aabb {
    /// Tight box around the given vertices of `mesh`.
    pub fn around(mesh: &Mesh, owned: Vec<usize>) -> Aabb {
        let b = Bounds::from_points(owned.iter().map(|&i| &mesh.vertices[i]));
        Aabb {
            min: b.min,
            max: b.max,
            owned,
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            min: self.min,
            max: self.max,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        self.bounds().volume()
    }

    pub fn length(&self, axis: Axis) -> f64 {
        self.max[axis.index()] - self.min[axis.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutCandidate {
    pub axis: Axis,
    /// Grid boundary index; the cut plane sits in front of this cell.
    pub boundary: usize,
    pub position: f64,
    pub score: f64,
    /// Length of the box along `axis`, kept for tie-breaking.
    pub axis_length: f64,
}

impl CutCandidate {
    /// Total order: lower score first, then longer axis, lower position and
    /// axis order.
    pub fn rank(&self, other: &CutCandidate) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.axis_length.total_cmp(&self.axis_length))
            .then_with(|| self.position.total_cmp(&other.position))
            .then_with(|| self.axis.cmp(&other.axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub min_vertices: usize,
    /// Slab thickness in cells.
    pub slab_width: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            min_vertices: DEFAULT_MIN_VERTICES,
            slab_width: 1,
        }
    }
}

/// Scores every interior cell boundary of `bbox` along `axis`.
///
/// The score is `min(A⁺, A⁻) / max(A⁺, A⁻) / L`, where `A⁺` and `A⁻` are the
/// projected areas of the slabs on either side and `L` is the box length.
/// Boundaries with two empty slabs are skipped. Boxes spanning fewer than
/// three cells yield no candidates.
pub fn split_scores(
    grid: &OccupancyGrid,
    bbox: &Aabb,
    axis: Axis,
    slab_width: usize,
) -> Vec<CutCandidate> {
    let range = grid.cell_range(&bbox.min, &bbox.max);
    let a = axis.index();
    let length = bbox.length(axis);
    if range.len(axis) < 3 || length <= 0.0 {
        return Vec::new();
    }
    let (lo, hi) = (range.lo[a], range.hi[a] + 1);
    let areas: Vec<usize> = (lo..hi)
        .map(|c| {
            projection_grid(grid, &range, axis, c, 1)
                .expect("slab inside range")
                .area
        })
        .collect();
    let slab_area = |start: usize, end: usize| -> usize {
        if slab_width == 1 {
            areas[start - lo]
        } else {
            projection_grid(grid, &range, axis, start, end - start)
                .expect("slab inside range")
                .area
        }
    };

    let mut out = Vec::new();
    for c in lo + 1..hi {
        let above = slab_area(c, (c + slab_width).min(hi));
        let below = slab_area(c.saturating_sub(slab_width).max(lo), c);
        if above == 0 && below == 0 {
            continue;
        }
        let ratio = above.min(below) as f64 / above.max(below) as f64;
        out.push(CutCandidate {
            axis,
            boundary: c,
            position: grid.boundary(axis, c),
            score: ratio / length,
            axis_length: length,
        });
    }
    out
}

/// Number of owned vertices on the low side (`coord <= position`).
fn low_side_count(mesh: &Mesh, bbox: &Aabb, axis: Axis, position: f64) -> usize {
    let a = axis.index();
    bbox.owned
        .iter()
        .filter(|&&i| mesh.vertices[i][a] <= position)
        .count()
}

/// Lowest-ranked cut over all three axes that leaves at least
/// `min_vertices` owned vertices on each side.
pub fn best_cut(
    mesh: &Mesh,
    grid: &OccupancyGrid,
    bbox: &Aabb,
    options: &SplitOptions,
) -> Option<CutCandidate> {
    let total = bbox.owned.len();
    Axis::ALL
        .iter()
        .flat_map(|&axis| split_scores(grid, bbox, axis, options.slab_width))
        .filter(|c| {
            let low = low_side_count(mesh, bbox, c.axis, c.position);
            low >= options.min_vertices && total - low >= options.min_vertices
        })
        .min_by(|a, b| a.rank(b))
}

/// Splits `bbox` at `cut`, tightening both children around their vertices.
pub fn split_box(mesh: &Mesh, bbox: &Aabb, cut: &CutCandidate) -> (Aabb, Aabb) {
    let a = cut.axis.index();
    let (low, high): (Vec<usize>, Vec<usize>) = bbox
        .owned
        .iter()
        .partition(|&&i| mesh.vertices[i][a] <= cut.position);
    (Aabb::around(mesh, low), Aabb::around(mesh, high))
}

/// Recursively splits the global box until `target_count` boxes exist or no
/// box admits a valid cut. Box order is stable: a split box is replaced in
/// place by its low child and the high child is appended.
pub fn generate_boxes(
    mesh: &Mesh,
    grid: &OccupancyGrid,
    target_count: usize,
    options: &SplitOptions,
) -> Result<Vec<Aabb>, SplitError> {
    if !(1..=MAX_BOXES).contains(&target_count) {
        return Err(SplitError::TargetCount(target_count));
    }
    let root = Aabb::around(mesh, (0..mesh.vertex_count()).collect());
    let root_cut = best_cut(mesh, grid, &root, options);
    let mut boxes = vec![(root, root_cut)];

    while boxes.len() < target_count {
        let next = boxes
            .iter()
            .enumerate()
            .filter_map(|(i, (_, cut))| cut.map(|c| (i, c)))
            .min_by(|(i, a), (j, b)| a.rank(b).then(i.cmp(j)));
        let Some((index, cut)) = next else {
            break;
        };
        let (low, high) = split_box(mesh, &boxes[index].0, &cut);
        let low_cut = best_cut(mesh, grid, &low, options);
        let high_cut = best_cut(mesh, grid, &high, options);
        boxes[index] = (low, low_cut);
        boxes.push((high, high_cut));
    }
    Ok(boxes.into_iter().map(|(b, _)| b).collect())
}

#[derive(Serialize)]
struct BoxRecord {
    min: [f64; 3],
    max: [f64; 3],
    vertex_count: usize,
}

/// Debug export: `[{min, max, vertex_count}, ...]`.
pub fn boxes_to_json(boxes: &[Aabb]) -> serde_json::Value {
    let records: Vec<BoxRecord> = boxes
        .iter()
        .map(|b| BoxRecord {
            min: b.min.into(),
            max: b.max.into(),
            vertex_count: b.owned.len(),
        })
        .collect();
    serde_json::to_value(records).expect("plain records serialize")
}
