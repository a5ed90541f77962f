//! Legacy-ASCII VTK writer for tetrahedral meshes with attached fields.

use std::fmt::Write as _;
use std::path::Path;

use super::{CellField, CellValues, Mesh, NodeField};
use crate::error::Result;

/// A field to be written, either cell- or node-attached.
#[derive(Debug, Clone)]
pub enum FieldData<'a> {
    Cell(&'a CellField),
    Node(&'a NodeField),
}

/// A field plus the name it is written under.
#[derive(Debug, Clone)]
pub struct NamedField<'a> {
    pub name: String,
    pub data: FieldData<'a>,
}

impl<'a> NamedField<'a> {
    pub fn cell(name: impl Into<String>, field: &'a CellField) -> Self {
        NamedField { name: name.into(), data: FieldData::Cell(field) }
    }

    pub fn node(name: impl Into<String>, field: &'a NodeField) -> Self {
        NamedField { name: name.into(), data: FieldData::Node(field) }
    }
}

/// Writes the mesh and fields as a legacy ASCII `DATASET UNSTRUCTURED_GRID`
/// file (cell type 10, tetrahedron), readable by common viewers.
pub fn write_vtk(mesh: &Mesh, fields: &[NamedField<'_>], path: impl AsRef<Path>) -> Result<()> {
    for f in fields {
        match &f.data {
            FieldData::Cell(c) => c.validate_for(mesh)?,
            FieldData::Node(n) => n.validate_for(mesh)?,
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("perfusim output\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(out, "POINTS {} double", mesh.node_count());
    for p in mesh.nodes() {
        let _ = writeln!(out, "{} {} {}", fmt_g(p[0]), fmt_g(p[1]), fmt_g(p[2]));
    }

    let n_cells = mesh.cell_count();
    let _ = writeln!(out, "CELLS {} {}", n_cells, 5 * n_cells);
    for c in mesh.cells() {
        let _ = writeln!(out, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {n_cells}");
    for _ in 0..n_cells {
        out.push_str("10\n");
    }

    let cell_fields: Vec<&NamedField> = fields
        .iter()
        .filter(|f| matches!(f.data, FieldData::Cell(_)))
        .collect();
    if !cell_fields.is_empty() {
        let _ = writeln!(out, "CELL_DATA {n_cells}");
        for f in cell_fields {
            let FieldData::Cell(cf) = &f.data else { unreachable!() };
            write_cell_attribute(&mut out, &f.name, cf);
        }
    }

    let node_fields: Vec<&NamedField> = fields
        .iter()
        .filter(|f| matches!(f.data, FieldData::Node(_)))
        .collect();
    if !node_fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.node_count());
        for f in node_fields {
            let FieldData::Node(nf) = &f.data else { unreachable!() };
            let _ = writeln!(out, "SCALARS {} double 1", sanitize(&f.name));
            out.push_str("LOOKUP_TABLE default\n");
            for v in &nf.values {
                let _ = writeln!(out, "{}", fmt_g(*v));
            }
        }
    }

    std::fs::write(path, out)?;
    Ok(())
}

fn write_cell_attribute(out: &mut String, name: &str, field: &CellField) {
    let name = sanitize(name);
    match &field.values {
        CellValues::Scalar(vals) => {
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for v in vals {
                let _ = writeln!(out, "{}", fmt_g(*v));
            }
        }
        CellValues::Vector(vals) => {
            let _ = writeln!(out, "VECTORS {name} double");
            for v in vals {
                let _ = writeln!(out, "{} {} {}", fmt_g(v[0]), fmt_g(v[1]), fmt_g(v[2]));
            }
        }
        CellValues::Tensor(vals) => {
            let _ = writeln!(out, "TENSORS {name} double");
            for t in vals {
                let m = t.to_matrix();
                for row in m {
                    let _ = writeln!(out, "{} {} {}", fmt_g(row[0]), fmt_g(row[1]), fmt_g(row[2]));
                }
                out.push('\n');
            }
        }
    }
}

/// VTK attribute names must not contain whitespace.
fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// Deterministic float formatting with enough digits for round-trips.
fn fmt_g(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.9e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mesh;

    fn tet() -> Mesh {
        Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn scalar_cell_field_gives_one_cell_data_block() {
        let m = tet();
        let f = CellField::scalar(0, vec![3.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.vtk");
        write_vtk(&m, &[NamedField::cell("phi", &f)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("CELL_DATA").count(), 1);
        assert!(text.contains("SCALARS phi double 1"));
        assert!(text.contains("CELL_TYPES 1"));
    }

    #[test]
    fn empty_field_list_writes_geometry_only() {
        let m = tet();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vtk");
        write_vtk(&m, &[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("CELL_DATA"));
        assert!(!text.contains("POINT_DATA"));
        assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let m = tet();
        let f = CellField::scalar(0, vec![1.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let res = write_vtk(&m, &[NamedField::cell("bad", &f)], dir.path().join("x.vtk"));
        assert!(matches!(res, Err(crate::error::Error::Contract(_))));
    }

    /// Reparses POINTS back out of the written file; coordinates must agree
    /// to at least 6 significant digits.
    #[test]
    fn roundtrip_coordinates() {
        let m = Mesh::new(
            vec![
                [0.123456789, -2.987654321e-3, 1.7e1],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.vtk");
        write_vtk(&m, &[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        while let Some(l) = lines.next() {
            if l.starts_with("POINTS") {
                break;
            }
        }
        for orig in m.nodes() {
            let line = lines.next().unwrap();
            let got: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
            for k in 0..3 {
                let rel = if orig[k] == 0.0 {
                    got[k].abs()
                } else {
                    ((got[k] - orig[k]) / orig[k]).abs()
                };
                assert!(rel < 1e-6, "coordinate {k}: {} vs {}", got[k], orig[k]);
            }
        }
    }
}
