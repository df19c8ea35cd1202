//! The box deformation graph: part boxes as nodes, mesh-edge adjacency as
//! edges, a BFS spanning tree along which box translations propagate, and
//! the frozen correspondences used to keep parts attached.
//!
//! A deformation runs in three phases:
//!
//! 1. Root to leaves, every box scales its vertices about its own center.
//!    Each child tree node is then translated so that the frozen point pair
//!    linking it to its parent keeps its original relative vector. The
//!    translation is inherited by the child's subtree.
//! 2. For every graph edge and both directions, each vertex of one box is
//!    pulled by a decaying fraction of the change of its offset to the
//!    nearest vertex of the other box, measured on the phase-1 snapshot.
//! 3. All phase-2 corrections are summed per vertex and applied at once.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{Mesh, Vec3};
use crate::split::Aabb;

pub const DEFAULT_FACE_SUBDIVISIONS: usize = 8;
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("vertex {0} is not owned by any box")]
    Unowned(usize),
    #[error("vertex {vertex} is owned by boxes {first} and {second}")]
    OwnedTwice {
        vertex: usize,
        first: usize,
        second: usize,
    },
    #[error("box {box_index} owns vertex {vertex} outside the mesh")]
    BadVertex { box_index: usize, vertex: usize },
    #[error("expected {expected} scale vectors, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("scale component {value} of box {box_index} is not a positive finite number")]
    BadScale { box_index: usize, value: f64 },
}

/// Boxes plus mesh-edge adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGraph {
    pub boxes: Vec<Aabb>,
    /// Unordered adjacent pairs stored as `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Owning box of every mesh vertex.
    pub owner: Vec<usize>,
}

impl BoxGraph {
    pub fn neighbors(&self, b: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == b {
                    Some(j)
                } else if j == b {
                    Some(i)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Connects two boxes whenever a mesh edge joins vertices they own.
pub fn build_graph(mesh: &Mesh, boxes: &[Aabb]) -> Result<BoxGraph, GraphError> {
    let n = mesh.vertex_count();
    let mut owner = vec![usize::MAX; n];
    let mut boxes = boxes.to_vec();
    for (bi, b) in boxes.iter_mut().enumerate() {
        b.owned.sort_unstable();
        for &v in &b.owned {
            if v >= n {
                return Err(GraphError::BadVertex {
                    box_index: bi,
                    vertex: v,
                });
            }
            if owner[v] != usize::MAX {
                return Err(GraphError::OwnedTwice {
                    vertex: v,
                    first: owner[v],
                    second: bi,
                });
            }
            owner[v] = bi;
        }
    }
    if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(GraphError::Unowned(v));
    }
    let edges: BTreeSet<(usize, usize)> = mesh
        .edges()
        .into_iter()
        .map(|(a, b)| (owner[a], owner[b]))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    Ok(BoxGraph {
        boxes,
        edges: edges.into_iter().collect(),
        owner,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNode {
    /// Box indices, ascending. More than one only for merged nodes.
    pub boxes: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// False for the virtual edge joining a disconnected component's root to
    /// the global root; such edges carry no tree constraint.
    pub constrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDefTree {
    /// Nodes in breadth-first order; index 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub node_of_box: Vec<usize>,
}

impl BoxDefTree {
    pub fn root(&self) -> usize {
        0
    }
}

struct Builder {
    boxes: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    constrained: Vec<bool>,
    rep: Vec<usize>,
}

impl Builder {
    fn add(&mut self, boxes: Vec<usize>, parent: Option<usize>, constrained: bool) -> usize {
        self.boxes.push(boxes);
        self.parent.push(parent);
        self.constrained.push(constrained);
        self.rep.push(self.rep.len());
        self.rep.len() - 1
    }

    fn find(&mut self, mut n: usize) -> usize {
        while self.rep[n] != n {
            self.rep[n] = self.rep[self.rep[n]];
            n = self.rep[n];
        }
        n
    }

    fn parent_of(&mut self, n: usize) -> Option<usize> {
        self.parent[n].map(|p| self.find(p))
    }

    /// Merges two nodes of the same depth, merging their parents first when
    /// they differ so the result stays a tree.
    fn merge(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if let (Some(pa), Some(pb)) = (self.parent_of(a), self.parent_of(b)) {
            if pa != pb {
                self.merge(pa, pb);
            }
        }
        let (keep, gone) = (a.min(b), a.max(b));
        let moved = std::mem::take(&mut self.boxes[gone]);
        self.boxes[keep].extend(moved);
        self.rep[gone] = keep;
    }
}

/// Breadth-first spanning tree rooted at the largest-volume box.
///
/// Neighbors are visited in ascending index order. A newly discovered box
/// adjacent to two or more nodes of the current BFS layer causes those nodes
/// to merge into one compound node, which becomes its parent. Disconnected
/// components get their own BFS and hang off the global root through
/// unconstrained edges.
pub fn build_tree(graph: &BoxGraph) -> BoxDefTree {
    let n = graph.boxes.len();
    let adjacency: Vec<Vec<usize>> = (0..n).map(|b| graph.neighbors(b)).collect();
    let mut by_volume: Vec<usize> = (0..n).collect();
    by_volume.sort_by(|&a, &b| {
        graph.boxes[b]
            .volume()
            .total_cmp(&graph.boxes[a].volume())
            .then(a.cmp(&b))
    });

    let mut builder = Builder {
        boxes: Vec::new(),
        parent: Vec::new(),
        constrained: Vec::new(),
        rep: Vec::new(),
    };
    let mut node_of_box = vec![usize::MAX; n];
    let mut global_root = None;

    for &start in &by_volume {
        if node_of_box[start] != usize::MAX {
            continue;
        }
        let root = builder.add(vec![start], global_root, false);
        global_root.get_or_insert(root);
        node_of_box[start] = root;
        let mut layer_boxes = vec![start];

        while !layer_boxes.is_empty() {
            let in_layer: BTreeSet<usize> = layer_boxes.iter().copied().collect();
            let candidates: BTreeSet<usize> = layer_boxes
                .iter()
                .flat_map(|&b| adjacency[b].iter().copied())
                .filter(|&c| node_of_box[c] == usize::MAX)
                .collect();
            let mut next = Vec::new();
            let mut pending = Vec::new();
            for &child in &candidates {
                let mut parents: Vec<usize> = adjacency[child]
                    .iter()
                    .filter(|b| in_layer.contains(b))
                    .map(|&b| node_of_box[b])
                    .collect();
                parents.dedup();
                for &p in &parents[1..] {
                    builder.merge(parents[0], p);
                }
                pending.push((child, parents[0]));
            }
            for (child, parent) in pending {
                let node = builder.add(vec![child], Some(parent), true);
                node_of_box[child] = node;
                next.push(child);
            }
            layer_boxes = next;
        }
    }

    // Compact: keep representatives in creation order, which is BFS order.
    let reps: Vec<usize> = (0..builder.rep.len())
        .filter(|&i| builder.find(i) == i)
        .collect();
    let mut new_id = vec![usize::MAX; builder.rep.len()];
    for (k, &r) in reps.iter().enumerate() {
        new_id[r] = k;
    }
    let mut nodes: Vec<TreeNode> = reps
        .iter()
        .map(|&r| {
            let mut boxes = builder.boxes[r].clone();
            boxes.sort_unstable();
            let parent = builder.parent_of(r).map(|p| new_id[p]);
            TreeNode {
                boxes,
                parent,
                children: Vec::new(),
                constrained: builder.constrained[r],
            }
        })
        .collect();
    for k in 0..nodes.len() {
        if let Some(p) = nodes[k].parent {
            nodes[p].children.push(k);
        }
    }
    let mut node_of_box = vec![0; n];
    for (k, node) in nodes.iter().enumerate() {
        for &b in &node.boxes {
            node_of_box[b] = k;
        }
    }
    BoxDefTree { nodes, node_of_box }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintOptions {
    /// Each box face is sampled on a `(k + 1) × (k + 1)` lattice.
    pub face_subdivisions: usize,
    /// Decay radius as a fraction of the mesh bounding-box diagonal.
    pub epsilon_fraction: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            face_subdivisions: DEFAULT_FACE_SUBDIVISIONS,
            epsilon_fraction: DEFAULT_EPSILON_FRACTION,
        }
    }
}

/// Frozen closest pair between a parent node's box surfaces and a child
/// node's box face centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeConstraint {
    pub child_node: usize,
    pub parent_box: usize,
    pub parent_point: Vec3,
    pub child_box: usize,
    pub child_point: Vec3,
    /// `parent_point − child_point` on the undeformed mesh.
    pub relative: Vec3,
}

/// One vertex of the target box tied to its nearest vertex in the source
/// box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub vertex: usize,
    pub nearest: usize,
    /// `x[nearest] − x[vertex]` on the undeformed mesh.
    pub field: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConstraint {
    /// Box whose vertices are corrected.
    pub target: usize,
    /// Box providing the nearest vertices.
    pub source: usize,
    pub links: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// Indexed by tree node; `None` for the root and unconstrained nodes.
    pub tree: Vec<Option<TreeConstraint>>,
    pub graph: Vec<GraphConstraint>,
    pub epsilon: f64,
}

/// Lattice points on the six faces of a box.
pub fn box_surface_samples(bbox: &Aabb, subdivisions: usize) -> Vec<Vec3> {
    let k = subdivisions.max(1);
    let e = bbox.extent();
    let mut out = Vec::with_capacity(6 * (k + 1) * (k + 1));
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0.0, 1.0] {
            for i in 0..=k {
                for j in 0..=k {
                    let mut p = bbox.min;
                    p[axis] += side * e[axis];
                    p[u] += e[u] * i as f64 / k as f64;
                    p[v] += e[v] * j as f64 / k as f64;
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Centers of the six faces of a box.
pub fn box_face_centers(bbox: &Aabb) -> [Vec3; 6] {
    let c = bbox.center();
    let mut out = [c; 6];
    for axis in 0..3 {
        out[2 * axis][axis] = bbox.min[axis];
        out[2 * axis + 1][axis] = bbox.max[axis];
    }
    out
}

fn nearest_in(mesh: &Mesh, candidates: &[usize], p: &Vec3) -> usize {
    let mut best = candidates[0];
    let mut best_d = f64::INFINITY;
    for &c in candidates {
        let d = (mesh.vertices[c] - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Freezes every correspondence the deformation needs, on the undeformed
/// mesh.
pub fn precompute_constraints(
    mesh: &Mesh,
    graph: &BoxGraph,
    tree: &BoxDefTree,
    options: &ConstraintOptions,
) -> ConstraintSet {
    let epsilon = options.epsilon_fraction * mesh.bounds().diagonal();

    let tree_constraints = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let parent = node.parent?;
            if !node.constrained {
                return None;
            }
            let mut best: Option<(f64, usize, Vec3, usize, Vec3)> = None;
            for &pb in &tree.nodes[parent].boxes {
                let samples = box_surface_samples(&graph.boxes[pb], options.face_subdivisions);
                for &cb in &node.boxes {
                    for cp in box_face_centers(&graph.boxes[cb]) {
                        for sp in &samples {
                            let d = (sp - cp).norm_squared();
                            if best.as_ref().is_none_or(|b| d < b.0) {
                                best = Some((d, pb, *sp, cb, cp));
                            }
                        }
                    }
                }
            }
            let (_, parent_box, parent_point, child_box, child_point) = best?;
            Some(TreeConstraint {
                child_node: k,
                parent_box,
                parent_point,
                child_box,
                child_point,
                relative: parent_point - child_point,
            })
        })
        .collect();

    let directed: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .flat_map(|&(i, j)| [(i, j), (j, i)])
        .collect();
    let graph_constraints = directed
        .par_iter()
        .map(|&(source, target)| {
            let src = &graph.boxes[source].owned;
            let links = graph.boxes[target]
                .owned
                .iter()
                .map(|&v| {
                    let nearest = nearest_in(mesh, src, &mesh.vertices[v]);
                    let field = mesh.vertices[nearest] - mesh.vertices[v];
                    let len = field.norm();
                    let decay = if len > 0.0 { (epsilon / len).min(1.0) } else { 1.0 };
                    Correspondence {
                        vertex: v,
                        nearest,
                        field,
                        weight: 0.5 * decay,
                    }
                })
                .collect();
            GraphConstraint {
                target,
                source,
                links,
            }
        })
        .collect();

    ConstraintSet {
        tree: tree_constraints,
        graph: graph_constraints,
        epsilon,
    }
}

/// Per-box scale vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformParams {
    pub scales: Vec<Vec3>,
}

impl DeformParams {
    pub fn identity(boxes: usize) -> Self {
        DeformParams {
            scales: vec![Vec3::repeat(1.0); boxes],
        }
    }

    /// Reads `3 × boxes` numbers as consecutive xyz triples.
    pub fn from_flat(values: &[f64]) -> Self {
        DeformParams {
            scales: values
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.scales.iter().flat_map(|s| [s.x, s.y, s.z]).collect()
    }
}

/// The complete deformation model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDefGraph {
    pub graph: BoxGraph,
    pub tree: BoxDefTree,
    pub constraints: ConstraintSet,
}

/// Result of the scaling and tree-translation phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1 {
    pub positions: Vec<Vec3>,
    /// Accumulated translation of every tree node.
    pub translations: Vec<Vec3>,
}

/// One graph-edge correction before accumulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub vertex: usize,
    pub delta: Vec3,
    /// `F_def − F_ori` for this link.
    pub field_change: Vec3,
}

impl BoxDefGraph {
    pub fn build(
        mesh: &Mesh,
        boxes: &[Aabb],
        options: &ConstraintOptions,
    ) -> Result<Self, GraphError> {
        let graph = build_graph(mesh, boxes)?;
        let tree = build_tree(&graph);
        let constraints = precompute_constraints(mesh, &graph, &tree, options);
        Ok(BoxDefGraph {
            graph,
            tree,
            constraints,
        })
    }

    pub fn box_count(&self) -> usize {
        self.graph.boxes.len()
    }

    fn check(&self, params: &DeformParams) -> Result<(), GraphError> {
        if params.scales.len() != self.box_count() {
            return Err(GraphError::ParamCount {
                expected: self.box_count(),
                actual: params.scales.len(),
            });
        }
        for (i, s) in params.scales.iter().enumerate() {
            if let Some(&bad) = s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(GraphError::BadScale {
                    box_index: i,
                    value: bad,
                });
            }
        }
        Ok(())
    }

    /// Image of `p` under the phase-1 transform of box `b`, written as
    /// `p + (s − 1)⊙(p − c) + T` so unit scales map points exactly.
    pub fn map_point(&self, b: usize, scale: &Vec3, translation: &Vec3, p: &Vec3) -> Vec3 {
        let c = self.graph.boxes[b].center();
        p + (scale - Vec3::repeat(1.0)).component_mul(&(p - c)) + translation
    }

    pub fn phase1(&self, mesh: &Mesh, params: &DeformParams) -> Result<Phase1, GraphError> {
        self.check(params)?;
        let nodes = &self.tree.nodes;
        let mut translations = vec![Vec3::zeros(); nodes.len()];
        for k in 0..nodes.len() {
            let Some(parent) = nodes[k].parent else {
                continue;
            };
            let Some(tc) = &self.constraints.tree[k] else {
                continue;
            };
            let inherited = translations[parent];
            let p_parent = self.map_point(
                tc.parent_box,
                &params.scales[tc.parent_box],
                &translations[parent],
                &tc.parent_point,
            );
            let p_child =
                self.map_point(tc.child_box, &params.scales[tc.child_box], &inherited, &tc.child_point);
            translations[k] = inherited + (p_parent - p_child - tc.relative);
        }
        let positions = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let b = self.graph.owner[v];
                let t = translations[self.tree.node_of_box[b]];
                self.map_point(b, &params.scales[b], &t, p)
            })
            .collect();
        Ok(Phase1 {
            positions,
            translations,
        })
    }

    /// Every directed graph-edge correction computed from one snapshot.
    pub fn graph_corrections(&self, snapshot: &[Vec3]) -> Vec<Correction> {
        self.constraints
            .graph
            .iter()
            .flat_map(|gc| gc.links.iter())
            .map(|link| {
                let current = snapshot[link.nearest] - snapshot[link.vertex];
                let field_change = current - link.field;
                Correction {
                    vertex: link.vertex,
                    delta: field_change * link.weight,
                    field_change,
                }
            })
            .collect()
    }

    /// Scaling and tree translations only.
    pub fn deform_tree_only(&self, mesh: &Mesh, params: &DeformParams) -> Result<Mesh, GraphError> {
        Ok(mesh.with_vertices(self.phase1(mesh, params)?.positions))
    }

    pub fn deform(&self, mesh: &Mesh, params: &DeformParams) -> Result<Mesh, GraphError> {
        let mut positions = self.phase1(mesh, params)?.positions;
        let mut accumulated = vec![Vec3::zeros(); positions.len()];
        for c in self.graph_corrections(&positions) {
            accumulated[c.vertex] += c.delta;
        }
        for (p, d) in positions.iter_mut().zip(&accumulated) {
            *p += d;
        }
        Ok(mesh.with_vertices(positions))
    }

    /// Debug export: `{nodes: [{min, max, volume}], edges: [[i, j]],
    /// tree: [{boxes, parent}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .graph
            .boxes
            .iter()
            .map(|b| {
                serde_json::json!({
                    "min": [b.min.x, b.min.y, b.min.z],
                    "max": [b.max.x, b.max.y, b.max.z],
                    "volume": b.volume(),
                })
            })
            .collect();
        let tree: Vec<serde_json::Value> = self
            .tree
            .nodes
            .iter()
            .map(|n| serde_json::json!({ "boxes": n.boxes, "parent": n.parent }))
            .collect();
        serde_json::json!({
            "nodes": nodes,
            "edges": self.graph.edges.iter().map(|&(i, j)| [i, j]).collect::<Vec<_>>(),
            "tree": tree,
        })
    }
}

/// Nodes of `tree` in breadth-first order from the root.
pub fn bfs_order(tree: &BoxDefTree) -> Vec<usize> {
    let mut out = Vec::with_capacity(tree.nodes.len());
    let mut queue = VecDeque::from([tree.root()]);
    while let Some(n) = queue.pop_front() {
        out.push(n);
        queue.extend(tree.nodes[n].children.iter().copied());
    }
    out
}
