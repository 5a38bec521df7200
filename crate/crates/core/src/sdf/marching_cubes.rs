use std::collections::HashMap;

use super::grid::SdfGrid;
use super::mesh::TriangleMesh;
use super::tables::TRI_TABLE;
use crate::geometry::Vec3;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of `grid`. Corners with value `< iso` count as
/// inside. Vertices on a lattice edge are shared between the cells touching
/// that edge, and faces wind counter-clockwise seen from the outside (the
/// side of larger values). Non-finite corners are treated as outside.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.resolution;
    let inside = |v: f64| v < iso;
    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = grid.get(i + off[0], j + off[1], k + off[2]);
                    if inside(vals[c]) {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut t = 0;
                while t < 16 && row[t] >= 0 {
                    let mut tri = [0u32; 3];
                    for (s, slot) in tri.iter_mut().enumerate() {
                        let [ca, cb] = EDGES[row[t + s] as usize];
                        let (oa, ob) = (CORNERS[ca], CORNERS[cb]);
                        let axis = (0..3).find(|&a| oa[a] != ob[a]).expect("edge spans one axis");
                        let lo = if oa[axis] < ob[axis] { oa } else { ob };
                        let key = (grid.index(i + lo[0], j + lo[1], k + lo[2]), axis as u8);
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[ca], vals[cb]);
                            let pa = grid.position(i + oa[0], j + oa[1], k + oa[2]);
                            let pb = grid.position(i + ob[0], j + ob[1], k + ob[2]);
                            mesh.vertices.push(interpolate(pa, pb, va, vb, iso));
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    // The table winds triangles towards the inside; reverse them.
                    mesh.faces.push([tri[0], tri[2], tri[1]]);
                    t += 3;
                }
            }
        }
    }
    mesh
}

fn interpolate(pa: Vec3, pb: Vec3, va: f64, vb: f64, iso: f64) -> Vec3 {
    let denom = vb - va;
    let t = if denom.abs() > 1e-12 && denom.is_finite() {
        ((iso - va) / denom).clamp(0.0, 1.0)
    } else {
        0.5
    };
    pa + (pb - pa) * t
}
