//! Regular reference meshes: structured boxes and ellipsoids built from a
//! uniform grid of cubes, each split into six tetrahedra around its main
//! diagonal. Handy for tests, convergence studies and demo scenarios;
//! production meshes come from `mesh-v1` files.

use super::{Mesh, Point3};
use crate::error::{Error, Result};

/// Structured tetrahedral mesh of an axis-aligned box with `nx*ny*nz`
/// cubes, six tetrahedra each.
pub fn box_mesh(min: Point3, max: Point3, divisions: [usize; 3]) -> Result<Mesh> {
    let [nx, ny, nz] = divisions;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Contract("box mesh needs at least one division per axis".into()));
    }
    for k in 0..3 {
        if !(max[k] > min[k]) {
            return Err(Error::Contract("box mesh extent must be positive".into()));
        }
    }
    let coord = |i: usize, n: usize, k: usize| min[k] + (max[k] - min[k]) * (i as f64 / n as f64);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for kz in 0..=nz {
        for ky in 0..=ny {
            for kx in 0..=nx {
                nodes.push([coord(kx, nx, 0), coord(ky, ny, 1), coord(kz, nz, 2)]);
            }
        }
    }
    let id = |kx: usize, ky: usize, kz: usize| kx + (nx + 1) * (ky + (ny + 1) * kz);
    let mut cells = Vec::with_capacity(6 * nx * ny * nz);
    for kz in 0..nz {
        for ky in 0..ny {
            for kx in 0..nx {
                let v = [
                    id(kx, ky, kz),
                    id(kx + 1, ky, kz),
                    id(kx, ky + 1, kz),
                    id(kx + 1, ky + 1, kz),
                    id(kx, ky, kz + 1),
                    id(kx + 1, ky, kz + 1),
                    id(kx, ky + 1, kz + 1),
                    id(kx + 1, ky + 1, kz + 1),
                ];
                // Kuhn subdivision around the v0-v7 diagonal.
                cells.push([v[0], v[1], v[3], v[7]]);
                cells.push([v[0], v[3], v[2], v[7]]);
                cells.push([v[0], v[2], v[6], v[7]]);
                cells.push([v[0], v[6], v[4], v[7]]);
                cells.push([v[0], v[4], v[5], v[7]]);
                cells.push([v[0], v[5], v[1], v[7]]);
            }
        }
    }
    Mesh::new(nodes, cells)
}

/// Unit cube [0,1]^3 with `n` divisions per axis.
pub fn unit_cube_mesh(n: usize) -> Result<Mesh> {
    box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [n, n, n])
}

/// Ellipsoid approximated by the cells of a structured box mesh whose
/// barycenters lie inside; unreferenced nodes are dropped and only the
/// largest face-connected component is kept.
pub fn ellipsoid_mesh(center: Point3, semi_axes: Point3, divisions: [usize; 3]) -> Result<Mesh> {
    for k in 0..3 {
        if !(semi_axes[k] > 0.0) {
            return Err(Error::Contract("ellipsoid semi-axes must be positive".into()));
        }
    }
    let min = [center[0] - semi_axes[0], center[1] - semi_axes[1], center[2] - semi_axes[2]];
    let max = [center[0] + semi_axes[0], center[1] + semi_axes[1], center[2] + semi_axes[2]];
    let boxm = box_mesh(min, max, divisions)?;
    let geo = boxm.cell_geometry();
    let inside = |p: Point3| {
        let u = (p[0] - center[0]) / semi_axes[0];
        let v = (p[1] - center[1]) / semi_axes[1];
        let w = (p[2] - center[2]) / semi_axes[2];
        u * u + v * v + w * w <= 1.0
    };
    let keep: Vec<usize> = (0..boxm.cell_count())
        .filter(|&c| inside(geo.barycenters[c]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Geometry("ellipsoid too small for the grid resolution".into()));
    }
    let cells: Vec<[usize; 4]> = keep.iter().map(|&c| boxm.cells()[c]).collect();
    let cells = largest_face_component(&cells);
    compact(boxm.nodes(), cells)
}

/// Keeps only the largest component of cells connected through shared faces.
fn largest_face_component(cells: &[[usize; 4]]) -> Vec<[usize; 4]> {
    use std::collections::HashMap;
    let mut face_map: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
    for (ci, cell) in cells.iter().enumerate() {
        for f in super::mesh::CELL_FACES {
            let mut key = [cell[f[0]], cell[f[1]], cell[f[2]]];
            key.sort_unstable();
            face_map.entry(key).or_default().push(ci);
        }
    }
    let mut comp = vec![usize::MAX; cells.len()];
    let mut best: (usize, usize) = (0, 0); // (size, id)
    let mut n_comp = 0;
    for start in 0..cells.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = n_comp;
        n_comp += 1;
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0;
        while let Some(c) = stack.pop() {
            size += 1;
            for f in super::mesh::CELL_FACES {
                let mut key = [cells[c][f[0]], cells[c][f[1]], cells[c][f[2]]];
                key.sort_unstable();
                for &nb in &face_map[&key] {
                    if comp[nb] == usize::MAX {
                        comp[nb] = id;
                        stack.push(nb);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, id);
        }
    }
    cells
        .iter()
        .zip(&comp)
        .filter_map(|(c, &id)| (id == best.1).then_some(*c))
        .collect()
}

/// Renumbers nodes so only referenced ones remain.
fn compact(nodes: &[Point3], cells: Vec<[usize; 4]>) -> Result<Mesh> {
    let mut map = vec![usize::MAX; nodes.len()];
    let mut new_nodes = Vec::new();
    let mut new_cells = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut c = [0usize; 4];
        for (slot, &n) in c.iter_mut().zip(&cell) {
            if map[n] == usize::MAX {
                map[n] = new_nodes.len();
                new_nodes.push(nodes[n]);
            }
            *slot = map[n];
        }
        new_cells.push(c);
    }
    Mesh::new(new_nodes, new_cells)
}
