//! Scalar, vector and symmetric-tensor fields attached to mesh entities.

use super::Mesh;
use crate::error::{Error, Result};

/// Symmetric 3x3 tensor stored as its six independent components.
///
/// Symmetry is exact by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl SymTensor3 {
    pub const ZERO: SymTensor3 = SymTensor3 { xx: 0.0, yy: 0.0, zz: 0.0, xy: 0.0, xz: 0.0, yz: 0.0 };

    pub fn isotropic(k: f64) -> Self {
        SymTensor3 { xx: k, yy: k, zz: k, ..Self::ZERO }
    }

    /// Rank-one outer product `s * (t ⊗ t)`.
    pub fn scaled_outer(t: [f64; 3], s: f64) -> Self {
        SymTensor3 {
            xx: s * t[0] * t[0],
            yy: s * t[1] * t[1],
            zz: s * t[2] * t[2],
            xy: s * t[0] * t[1],
            xz: s * t[0] * t[2],
            yz: s * t[1] * t[2],
        }
    }

    pub fn add_assign(&mut self, o: &SymTensor3) {
        self.xx += o.xx;
        self.yy += o.yy;
        self.zz += o.zz;
        self.xy += o.xy;
        self.xz += o.xz;
        self.yz += o.yz;
    }

    pub fn scale(&self, s: f64) -> Self {
        SymTensor3 {
            xx: self.xx * s,
            yy: self.yy * s,
            zz: self.zz * s,
            xy: self.xy * s,
            xz: self.xz * s,
            yz: self.yz * s,
        }
    }

    /// Adds `s` to the diagonal.
    pub fn add_diagonal(&self, s: f64) -> Self {
        SymTensor3 { xx: self.xx + s, yy: self.yy + s, zz: self.zz + s, ..*self }
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        [
            self.xx * v[0] + self.xy * v[1] + self.xz * v[2],
            self.xy * v[0] + self.yy * v[1] + self.yz * v[2],
            self.xz * v[0] + self.yz * v[1] + self.zz * v[2],
        ]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.xx == 0.0 && self.yy == 0.0 && self.zz == 0.0 && self.xy == 0.0 && self.xz == 0.0 && self.yz == 0.0
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }
}

/// Per-cell values: one scalar, vector or symmetric tensor per cell.
#[derive(Debug, Clone)]
pub enum CellValues {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 3]>),
    Tensor(Vec<SymTensor3>),
}

impl CellValues {
    pub fn len(&self) -> usize {
        match self {
            CellValues::Scalar(v) => v.len(),
            CellValues::Vector(v) => v.len(),
            CellValues::Tensor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A field defined on mesh cells, tagged with the compartment it belongs to.
#[derive(Debug, Clone)]
pub struct CellField {
    pub compartment: usize,
    pub values: CellValues,
}

impl CellField {
    pub fn scalar(compartment: usize, values: Vec<f64>) -> Self {
        CellField { compartment, values: CellValues::Scalar(values) }
    }

    pub fn vector(compartment: usize, values: Vec<[f64; 3]>) -> Self {
        CellField { compartment, values: CellValues::Vector(values) }
    }

    pub fn tensor(compartment: usize, values: Vec<SymTensor3>) -> Self {
        CellField { compartment, values: CellValues::Tensor(values) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate_for(&self, mesh: &Mesh) -> Result<()> {
        if self.len() != mesh.cell_count() {
            return Err(Error::Contract(format!(
                "cell field has {} values but mesh has {} cells",
                self.len(),
                mesh.cell_count()
            )));
        }
        Ok(())
    }
}

/// A scalar field defined on mesh nodes (e.g. a compartment pressure).
#[derive(Debug, Clone)]
pub struct NodeField {
    pub compartment: usize,
    pub values: Vec<f64>,
}

impl NodeField {
    pub fn new(compartment: usize, values: Vec<f64>) -> Self {
        NodeField { compartment, values }
    }

    pub fn validate_for(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.node_count() {
            return Err(Error::Contract(format!(
                "node field has {} values but mesh has {} nodes",
                self.values.len(),
                mesh.node_count()
            )));
        }
        Ok(())
    }
}
