//! Small procedural meshes used by tests, examples and the CLI's demo mode.
//!
//! Most shapes are built as the boundary surface of a union of lattice
//! cubes, which gives closed meshes with evenly spaced vertices. The y axis
//! is up.

use std::collections::{BTreeSet, HashMap};

use crate::mesh::{Mesh, Vec3};

type Cell = (i32, i32, i32);

/// Boundary surface of a union of lattice cubes of edge `h`, with outward
/// winding and welded lattice vertices.
pub fn lattice_union(cells: &BTreeSet<Cell>, h: f64) -> Mesh {
    let mut index: HashMap<Cell, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |p: Cell, vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(Vec3::new(p.0 as f64 * h, p.1 as f64 * h, p.2 as f64 * h));
            vertices.len() - 1
        })
    };

    // For each direction: neighbor offset and the quad corners (as offsets
    // from the cell's min corner) in counter-clockwise order seen from
    // outside.
    const SIDES: [((i32, i32, i32), [(i32, i32, i32); 4]); 6] = [
        ((1, 0, 0), [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)]),
        ((-1, 0, 0), [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)]),
        ((0, 1, 0), [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)]),
        ((0, -1, 0), [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)]),
        ((0, 0, 1), [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]),
        ((0, 0, -1), [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)]),
    ];

    for &(x, y, z) in cells {
        for (dir, quad) in SIDES.iter() {
            if cells.contains(&(x + dir.0, y + dir.1, z + dir.2)) {
                continue;
            }
            let ids: Vec<usize> = quad
                .iter()
                .map(|o| vid((x + o.0, y + o.1, z + o.2), &mut vertices))
                .collect();
            faces.push([ids[0], ids[1], ids[2]]);
            faces.push([ids[0], ids[2], ids[3]]);
        }
    }
    Mesh::new(vertices, faces).expect("lattice union is a valid mesh")
}

fn block(set: &mut BTreeSet<Cell>, min: Cell, max: Cell) {
    for x in min.0..max.0 {
        for y in min.1..max.1 {
            for z in min.2..max.2 {
                set.insert((x, y, z));
            }
        }
    }
}

/// Closed unit cube with 8 vertices and 12 triangles.
pub fn unit_cube() -> Mesh {
    let v = [
        (0.0, 0.0, 0.0),
        (1.0, 0.0, 0.0),
        (1.0, 1.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (1.0, 0.0, 1.0),
        (1.0, 1.0, 1.0),
        (0.0, 1.0, 1.0),
    ];
    let quads = [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh::new(
        v.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect(),
        faces,
    )
    .unwrap()
}

/// Unit cube surface subdivided into `n × n` quads per face.
pub fn subdivided_cube(n: i32) -> Mesh {
    let mut cells = BTreeSet::new();
    block(&mut cells, (0, 0, 0), (n, n, n));
    lattice_union(&cells, 1.0 / n as f64)
}

/// Two coplanar triangles covering the unit square at z = 0, normal +z.
pub fn flat_square() -> Mesh {
    Mesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

/// Square `[-1,1]²` fanned around a center vertex raised to `height`.
pub fn pyramid(height: f64) -> Mesh {
    Mesh::new(
        vec![
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(-1.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, height),
        ],
        vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
    )
    .unwrap()
}

/// Unit cube with a half-size cube centered on its top face.
pub fn two_cube() -> Mesh {
    let mut cells = BTreeSet::new();
    block(&mut cells, (0, 0, 0), (8, 8, 8));
    block(&mut cells, (2, 8, 2), (6, 12, 6));
    lattice_union(&cells, 0.125)
}

/// Two 0.5-unit blobs along x joined by a thin 0.1 × 0.1 bar of length 0.3.
pub fn dumbbell() -> Mesh {
    let mut cells = BTreeSet::new();
    block(&mut cells, (0, 0, 0), (5, 5, 5));
    block(&mut cells, (5, 2, 2), (8, 3, 3));
    block(&mut cells, (8, 0, 0), (13, 5, 5));
    lattice_union(&cells, 0.1)
}

/// A long body along z crossed by thin wings along x.
pub fn airplane_cross() -> Mesh {
    let mut cells = BTreeSet::new();
    block(&mut cells, (5, 0, 0), (7, 2, 14));
    block(&mut cells, (0, 1, 6), (5, 2, 9));
    block(&mut cells, (7, 1, 6), (12, 2, 9));
    lattice_union(&cells, 0.1)
}

/// Table top with four legs.
pub fn table() -> Mesh {
    let mut cells = BTreeSet::new();
    block(&mut cells, (0, 6, 0), (10, 7, 6));
    for (x, z) in [(0, 0), (9, 0), (0, 5), (9, 5)] {
        block(&mut cells, (x, 0, z), (x + 1, 6, z + 1));
    }
    lattice_union(&cells, 0.1)
}

/// Icosahedron refined `subdivisions` times and projected onto the unit
/// sphere.
pub fn icosphere(subdivisions: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
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
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(vertices, faces).unwrap()
}

/// Four triangles sharing no vertices: the first two pierce each other, the
/// last two are far away from everything.
pub fn crossing_pair() -> Mesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    Mesh::new(
        vec![
            v(0.0, 0.0, 0.0),
            v(2.0, 0.0, 0.0),
            v(0.0, 2.0, 0.0),
            v(0.5, 0.5, -1.0),
            v(0.5, 0.5, 1.0),
            v(0.6, 1.5, 0.0),
            v(5.0, 0.0, 0.0),
            v(6.0, 0.0, 0.0),
            v(5.0, 1.0, 0.0),
            v(5.0, 0.0, 3.0),
            v(6.0, 0.0, 3.0),
            v(5.0, 1.0, 3.0),
        ],
        vec![[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]],
    )
    .unwrap()
}

/// The five meshes the identity and metric checks run over.
pub fn standard_set() -> Vec<(&'static str, Mesh)> {
    vec![
        ("cube", subdivided_cube(4)),
        ("two_cube", two_cube()),
        ("airplane_cross", airplane_cross()),
        ("table", table()),
        ("icosphere", icosphere(2)),
    ]
}
