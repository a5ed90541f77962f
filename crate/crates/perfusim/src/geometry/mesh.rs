//! Tetrahedral mesh container with validation and text-format I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{dist, signed_tet_volume, Point3, DEFAULT_REL_EPS};
use crate::error::{Error, Result};

/// A tetrahedral discretization of the organ domain.
///
/// Invariants enforced at construction:
/// - every cell has 4 distinct node indices, all in range;
/// - every cell volume is strictly positive (cells with negative signed
///   volume are silently reordered by swapping the last two indices);
/// - each interior face is shared by exactly 2 cells, boundary faces by 1.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point3>,
    cells: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    bbox: (Point3, Point3),
}

/// Per-cell volume and barycenter, derived from a [`Mesh`].
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub volumes: Vec<f64>,
    pub barycenters: Vec<Point3>,
}

impl Mesh {
    /// Builds a mesh from raw nodes and cells, fixing orientation and
    /// validating all invariants.
    pub fn new(nodes: Vec<Point3>, mut cells: Vec<[usize; 4]>) -> Result<Self> {
        if nodes.is_empty() || cells.is_empty() {
            return Err(Error::Geometry("mesh must have at least one node and one cell".into()));
        }
        let bbox = bounding_box(&nodes);

        for (ci, cell) in cells.iter_mut().enumerate() {
            for &n in cell.iter() {
                if n >= nodes.len() {
                    return Err(Error::Geometry(format!(
                        "cell {ci}: node index {n} out of range (mesh has {} nodes)",
                        nodes.len()
                    )));
                }
            }
            let mut sorted = *cell;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Geometry(format!("cell {ci}: repeated node index")));
            }
            let v = signed_tet_volume(nodes[cell[0]], nodes[cell[1]], nodes[cell[2]], nodes[cell[3]]);
            if v < 0.0 {
                cell.swap(2, 3);
            }
            // Degeneracy is judged against the cell's own edge scale.
            let v = v.abs();
            let mut edge_max = 0.0f64;
            for i in 0..4 {
                for j in (i + 1)..4 {
                    edge_max = edge_max.max(dist(nodes[cell[i]], nodes[cell[j]]));
                }
            }
            let vol_eps = (edge_max * edge_max * edge_max).max(f64::MIN_POSITIVE) * DEFAULT_REL_EPS;
            if v <= vol_eps {
                return Err(Error::Geometry(format!(
                    "cell {ci}: degenerate (volume {v:.3e} below tolerance {vol_eps:.3e})"
                )));
            }
        }

        let boundary_faces = extract_boundary(&cells)?;
        Ok(Mesh { nodes, cells, boundary_faces, bbox })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn nodes(&self) -> &[Point3] {
        &self.nodes
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    /// Triangles lying on the outer surface, one entry per boundary face.
    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.boundary_faces
    }

    /// Axis-aligned bounding box (min corner, max corner).
    pub fn bounding_box(&self) -> (Point3, Point3) {
        self.bbox
    }

    /// Length of the bounding-box diagonal; the reference scale for all
    /// geometric tolerances.
    pub fn bbox_diagonal(&self) -> f64 {
        dist(self.bbox.0, self.bbox.1)
    }

    /// Per-cell volumes and barycenters.
    pub fn cell_geometry(&self) -> CellGeometry {
        let mut volumes = Vec::with_capacity(self.cells.len());
        let mut barycenters = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            let [a, b, c, d] = cell.map(|n| self.nodes[n]);
            volumes.push(signed_tet_volume(a, b, c, d));
            barycenters.push([
                (a[0] + b[0] + c[0] + d[0]) / 4.0,
                (a[1] + b[1] + c[1] + d[1]) / 4.0,
                (a[2] + b[2] + c[2] + d[2]) / 4.0,
            ]);
        }
        CellGeometry { volumes, barycenters }
    }

    /// Index of the mesh node closest to `p` (Euclidean distance, ties
    /// resolved to the lowest index).
    pub fn nearest_node(&self, p: Point3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &n) in self.nodes.iter().enumerate() {
            let d = dist(n, p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Index of the cell whose barycenter is closest to `p`.
    pub fn nearest_cell(&self, p: Point3) -> usize {
        let geo = self.cell_geometry();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &b) in geo.barycenters.iter().enumerate() {
            let d = dist(b, p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Finds the cell containing `p` by barycentric-coordinate test, or
    /// `None` if `p` lies outside the mesh (up to the relative tolerance).
    pub fn locate_cell(&self, p: Point3) -> Option<usize> {
        let tol = self.bbox_diagonal() * DEFAULT_REL_EPS;
        for (ci, cell) in self.cells.iter().enumerate() {
            let [a, b, c, d] = cell.map(|n| self.nodes[n]);
            if p[0] < a[0].min(b[0]).min(c[0]).min(d[0]) - tol
                || p[0] > a[0].max(b[0]).max(c[0]).max(d[0]) + tol
                || p[1] < a[1].min(b[1]).min(c[1]).min(d[1]) - tol
                || p[1] > a[1].max(b[1]).max(c[1]).max(d[1]) + tol
                || p[2] < a[2].min(b[2]).min(c[2]).min(d[2]) - tol
                || p[2] > a[2].max(b[2]).max(c[2]).max(d[2]) + tol
            {
                continue;
            }
            let v = signed_tet_volume(a, b, c, d);
            let w0 = signed_tet_volume(p, b, c, d) / v;
            let w1 = signed_tet_volume(a, p, c, d) / v;
            let w2 = signed_tet_volume(a, b, p, d) / v;
            let w3 = signed_tet_volume(a, b, c, p) / v;
            let lo = -DEFAULT_REL_EPS * 1e3;
            if w0 >= lo && w1 >= lo && w2 >= lo && w3 >= lo {
                return Some(ci);
            }
        }
        None
    }

    /// Cells incident to each node.
    pub fn node_cells(&self) -> Vec<Vec<usize>> {
        let mut incid = vec![Vec::new(); self.nodes.len()];
        for (ci, cell) in self.cells.iter().enumerate() {
            for &n in cell {
                incid[n].push(ci);
            }
        }
        incid
    }
}

fn bounding_box(nodes: &[Point3]) -> (Point3, Point3) {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for n in nodes {
        for k in 0..3 {
            min[k] = min[k].min(n[k]);
            max[k] = max[k].max(n[k]);
        }
    }
    (min, max)
}

/// The four faces of a tetrahedron, each opposite to one vertex.
pub(crate) const CELL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

fn extract_boundary(cells: &[[usize; 4]]) -> Result<Vec<[usize; 3]>> {
    let mut count: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    for (ci, cell) in cells.iter().enumerate() {
        for f in CELL_FACES {
            let tri = [cell[f[0]], cell[f[1]], cell[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            let entry = count.entry(key).or_insert((0, tri));
            entry.0 += 1;
            if entry.0 > 2 {
                return Err(Error::Geometry(format!(
                    "face {key:?} of cell {ci} shared by more than two cells"
                )));
            }
        }
    }
    let mut boundary: Vec<[usize; 3]> = count
        .into_iter()
        .filter_map(|(_, (n, tri))| (n == 1).then_some(tri))
        .collect();
    boundary.sort_unstable();
    Ok(boundary)
}

/// Reads a mesh from the line-oriented `mesh-v1` text format.
///
/// Layout: header line `mesh-v1`, node count, one `x y z` line per node,
/// cell count, one `i j k l` line per cell (0-based indices). Everything
/// after `#` on a line is a comment.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let stripped = raw.split('#').next().unwrap_or("").trim();
        (!stripped.is_empty()).then_some((i + 1, stripped))
    });

    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .ok_or_else(|| Error::format(path, 0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("header")?;
    if header != "mesh-v1" {
        return Err(Error::format(path, ln, format!("expected header `mesh-v1`, found `{header}`")));
    }
    let (ln, nc) = next("node count")?;
    let n_nodes: usize = nc
        .parse()
        .map_err(|_| Error::format(path, ln, format!("invalid node count `{nc}`")))?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = next("node coordinates")?;
        let mut it = line.split_whitespace();
        let mut p = [0.0f64; 3];
        for coord in p.iter_mut() {
            let tok = it
                .next()
                .ok_or_else(|| Error::format(path, ln, "node line needs 3 coordinates"))?;
            *coord = tok
                .parse()
                .map_err(|_| Error::format(path, ln, format!("invalid coordinate `{tok}`")))?;
        }
        if it.next().is_some() {
            return Err(Error::format(path, ln, "trailing tokens on node line"));
        }
        nodes.push(p);
    }
    let (ln, cc) = next("cell count")?;
    let n_cells: usize = cc
        .parse()
        .map_err(|_| Error::format(path, ln, format!("invalid cell count `{cc}`")))?;
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (ln, line) = next("cell indices")?;
        let mut it = line.split_whitespace();
        let mut c = [0usize; 4];
        for idx in c.iter_mut() {
            let tok = it
                .next()
                .ok_or_else(|| Error::format(path, ln, "cell line needs 4 node indices"))?;
            *idx = tok
                .parse()
                .map_err(|_| Error::format(path, ln, format!("invalid node index `{tok}`")))?;
            if *idx >= n_nodes {
                return Err(Error::format(
                    path,
                    ln,
                    format!("node index {idx} out of range (mesh has {n_nodes} nodes)", idx = *idx),
                ));
            }
        }
        if it.next().is_some() {
            return Err(Error::format(path, ln, "trailing tokens on cell line"));
        }
        cells.push(c);
    }
    if let Some((ln, line)) = lines.next() {
        return Err(Error::format(path, ln, format!("unexpected trailing content `{line}`")));
    }
    Mesh::new(nodes, cells)
}

/// Writes a mesh in the `mesh-v1` text format; `load_mesh` round-trips it.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("mesh-v1\n");
    let _ = writeln!(out, "{}", mesh.node_count());
    for n in mesh.nodes() {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", n[0], n[1], n[2]);
    }
    let _ = writeln!(out, "{}", mesh.cell_count());
    for c in mesh.cells() {
        let _ = writeln!(out, "{} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    std::fs::write(path, out)?;
    Ok(())
}
