//! Tetrahedral meshes, per-cell/per-node field containers and file I/O.
//!
//! All coordinates are in meters. Meshes are immutable after construction
//! and safe to share read-only between threads.

mod fields;
mod mesh;
pub mod structured;
mod vtk;

pub use fields::{CellField, CellValues, NodeField, SymTensor3};
pub use mesh::{load_mesh, save_mesh, CellGeometry, Mesh};
pub use vtk::{write_vtk, FieldData, NamedField};

pub(crate) use mesh::CELL_FACES;

/// Relative geometric tolerance, applied to the mesh bounding-box diagonal.
pub const DEFAULT_REL_EPS: f64 = 1e-12;

pub(crate) type Point3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

/// Signed volume of the tetrahedron (a, b, c, d).
#[inline]
pub(crate) fn signed_tet_volume(a: Point3, b: Point3, c: Point3, d: Point3) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}
