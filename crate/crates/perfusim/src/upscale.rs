//! Upscaling of lower-hierarchy tree geometry into per-element compartment
//! parameters: anisotropic permeability, porosity and inter-compartment
//! perfusion coefficients.
//!
//! Segments are assigned to cells by midpoint lookup; segments whose
//! midpoint falls outside the mesh are skipped. All averages are
//! accumulated in segment-index order, so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::geometry::{CellField, CellValues, Mesh, SymTensor3};
use crate::vtree::LowerSegment;

/// Which vein system a compartment represents. The filtration compartment
/// sits at hierarchy 0 and communicates with both systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CompartmentGroup {
    Portal,
    Hepatic,
    Filtration,
}

impl CompartmentGroup {
    fn overlaps(self, other: CompartmentGroup) -> bool {
        self == other || self == CompartmentGroup::Filtration || other == CompartmentGroup::Filtration
    }
}

/// Identity of one compartment: group, hierarchy index and the vessel
/// diameter range it represents.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CompartmentSpec {
    pub id: usize,
    pub group: CompartmentGroup,
    /// Half-open diameter range (min, max] in meters.
    pub diameter_range: (f64, f64),
    /// Hierarchy index; 0 is the precapillary level.
    pub hierarchy: u32,
}

impl CompartmentSpec {
    pub fn contains_diameter(&self, d: f64) -> bool {
        d > self.diameter_range.0 && d <= self.diameter_range.1
    }
}

/// Fluid may pass between two compartments only if they are adjacent
/// hierarchies of overlapping groups, or both sit at hierarchy 0 in
/// different groups.
pub fn coupling_allowed(a: &CompartmentSpec, b: &CompartmentSpec) -> bool {
    let adjacent = a.hierarchy.abs_diff(b.hierarchy) == 1;
    let same_group_adjacent = a.group.overlaps(b.group) && adjacent;
    let capillary_cross = a.hierarchy == 0 && b.hierarchy == 0 && a.group != b.group;
    same_group_adjacent || capillary_cross
}

/// Exchange coefficient field between one coupled pair of compartments.
///
/// `g` holds `G` per cell; the exchange flux from `lo` to `hi` is
/// `G (p_lo - p_hi)`, antisymmetric by construction.
#[derive(Debug, Clone)]
pub struct ExchangePair {
    pub lo: usize,
    pub hi: usize,
    pub g: CellField,
}

/// All per-compartment and per-pair parameter fields of the continuum model.
#[derive(Debug, Clone)]
pub struct PerfusionParams {
    pub compartments: Vec<CompartmentSpec>,
    /// Permeability tensor field per compartment, m^2 (Pa s)^-1.
    pub permeability: Vec<CellField>,
    /// Porosity (volume fraction) per compartment.
    pub porosity: Vec<CellField>,
    /// Exchange coefficients, (Pa s)^-1, one entry per coupled pair.
    pub exchange: Vec<ExchangePair>,
}

impl PerfusionParams {
    /// Checks sizes, the coupling rules, exchange positivity and the
    /// partition of unity; returns the matrix (non-vessel) fraction field.
    pub fn validate(&self, mesh: &Mesh) -> Result<CellField> {
        let n = self.compartments.len();
        if self.permeability.len() != n || self.porosity.len() != n {
            return Err(Error::Contract("one permeability and porosity field per compartment".into()));
        }
        for field in self.permeability.iter().chain(self.porosity.iter()) {
            field.validate_for(mesh)?;
        }
        for (i, f) in self.permeability.iter().enumerate() {
            if !matches!(f.values, CellValues::Tensor(_)) {
                return Err(Error::Contract(format!("permeability field {i} must be a tensor field")));
            }
        }
        for pair in &self.exchange {
            pair.g.validate_for(mesh)?;
            if pair.lo >= n || pair.hi >= n || pair.lo == pair.hi {
                return Err(Error::Contract("exchange pair indices out of range".into()));
            }
            let (a, b) = (&self.compartments[pair.lo], &self.compartments[pair.hi]);
            if !coupling_allowed(a, b) {
                return Err(Error::Contract(format!(
                    "coupling between compartments {} and {} violates the hierarchy rules",
                    pair.lo, pair.hi
                )));
            }
            if let CellValues::Scalar(g) = &pair.g.values {
                if g.iter().any(|&v| v < 0.0) {
                    return Err(Error::Contract("exchange coefficients must be non-negative".into()));
                }
            } else {
                return Err(Error::Contract("exchange coefficient field must be scalar".into()));
            }
        }
        self.matrix_fraction(mesh)
    }

    /// Matrix fraction `1 - sum_i phi_i` per cell; errors if negative.
    pub fn matrix_fraction(&self, mesh: &Mesh) -> Result<CellField> {
        let mut phi_m = vec![1.0; mesh.cell_count()];
        for field in &self.porosity {
            let CellValues::Scalar(phi) = &field.values else {
                return Err(Error::Contract("porosity fields must be scalar".into()));
            };
            for (m, &p) in phi_m.iter_mut().zip(phi) {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Geometry(format!("porosity {p} outside [0, 1]")));
                }
                *m -= p;
            }
        }
        if let Some((c, &bad)) = phi_m.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::Geometry(format!(
                "volume fractions exceed 1 in cell {c} (matrix fraction {bad:.3e})"
            )));
        }
        Ok(CellField::scalar(usize::MAX, phi_m))
    }
}

/// Cell index each segment midpoint falls in, `None` when outside the mesh.
fn assign_cells(segments: &[LowerSegment], mesh: &Mesh) -> Vec<Option<usize>> {
    segments.iter().map(|s| mesh.locate_cell(s.midpoint())).collect()
}

/// Volume-averaged permeability tensor per cell:
/// `K = (1/V_cell) sum_seg (pi r^4 / (8 mu)) L (t x t)` over the segments
/// of the compartment's diameter range; symmetric PSD by construction.
/// Cells without segments get the zero tensor.
pub fn average_permeability(
    segments: &[LowerSegment],
    mesh: &Mesh,
    spec: &CompartmentSpec,
    viscosity: f64,
) -> Result<CellField> {
    if !(viscosity > 0.0) {
        return Err(Error::Contract("viscosity must be positive".into()));
    }
    let volumes = mesh.cell_geometry().volumes;
    let mut k = vec![SymTensor3::ZERO; mesh.cell_count()];
    let cells = assign_cells(segments, mesh);
    for (seg, cell) in segments.iter().zip(cells) {
        if !spec.contains_diameter(seg.diameter) {
            continue;
        }
        let Some(ci) = cell else { continue };
        let r = seg.diameter / 2.0;
        let weight = std::f64::consts::PI * r.powi(4) / (8.0 * viscosity) * seg.length;
        k[ci].add_assign(&SymTensor3::scaled_outer(seg.direction(), weight));
    }
    for (ci, t) in k.iter_mut().enumerate() {
        *t = t.scale(1.0 / volumes[ci]);
    }
    Ok(CellField::tensor(spec.id, k))
}

/// Volume-averaged porosity per cell: `phi = sum_seg pi r^2 L / V_cell`.
/// Errors if any cell ends up with `phi > 1`.
pub fn average_porosity(segments: &[LowerSegment], mesh: &Mesh, spec: &CompartmentSpec) -> Result<CellField> {
    let volumes = mesh.cell_geometry().volumes;
    let mut phi = vec![0.0f64; mesh.cell_count()];
    let cells = assign_cells(segments, mesh);
    for (seg, cell) in segments.iter().zip(cells) {
        if !spec.contains_diameter(seg.diameter) {
            continue;
        }
        let Some(ci) = cell else { continue };
        let r = seg.diameter / 2.0;
        phi[ci] += std::f64::consts::PI * r * r * seg.length;
    }
    for (ci, p) in phi.iter_mut().enumerate() {
        *p /= volumes[ci];
        if *p > 1.0 {
            return Err(Error::Geometry(format!(
                "vessel volume exceeds cell volume in cell {ci} (porosity {p:.3})",
            )));
        }
    }
    Ok(CellField::scalar(spec.id, phi))
}

/// Segments that bridge the diameter boundary `a` between two hierarchy
/// ranges: their own diameter lies above `a` while their children (or their
/// missing continuation, for leaves) fall at or below it.
pub fn interface_segments(segments: &[LowerSegment], boundary_diameter: f64) -> Vec<LowerSegment> {
    segments
        .iter()
        .filter(|s| {
            s.diameter > boundary_diameter
                && s.min_child_diameter.map_or(true, |d| d <= boundary_diameter)
        })
        .copied()
        .collect()
}

/// Per-volume Poiseuille conductance of the bridging vessels:
/// `G = (1/V_cell) sum_seg (pi r^4) / (8 mu L)`, non-negative; zero where
/// no interface segments live.
pub fn perfusion_coupling_coeffs(tree_cut: &[LowerSegment], mesh: &Mesh, viscosity: f64) -> Result<CellField> {
    if !(viscosity > 0.0) {
        return Err(Error::Contract("viscosity must be positive".into()));
    }
    let volumes = mesh.cell_geometry().volumes;
    let mut g = vec![0.0f64; mesh.cell_count()];
    let cells = assign_cells(tree_cut, mesh);
    for (seg, cell) in tree_cut.iter().zip(cells) {
        let Some(ci) = cell else { continue };
        let r = seg.diameter / 2.0;
        g[ci] += std::f64::consts::PI * r.powi(4) / (8.0 * viscosity * seg.length);
    }
    for (ci, v) in g.iter_mut().enumerate() {
        *v /= volumes[ci];
    }
    Ok(CellField::scalar(usize::MAX, g))
}

/// Reference permeability magnitude: mean Frobenius norm over the support
/// (cells with a nonzero tensor). Errors when the whole field is zero.
pub fn reference_permeability(field: &CellField) -> Result<f64> {
    let CellValues::Tensor(k) = &field.values else {
        return Err(Error::Contract("regularization expects a tensor field".into()));
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in k {
        if !t.is_zero() {
            sum += t.norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config(
            "all-zero permeability field: no support to derive a reference magnitude from; \
             provide an explicit fallback value"
                .into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Regularized permeability `K + eps * k_ref * I`, with `k_ref` derived
/// from the field's own support. Guarantees positive definiteness.
pub fn regularize(field: &CellField, eps: f64) -> Result<CellField> {
    let k_ref = reference_permeability(field)?;
    regularize_with(field, eps, k_ref)
}

/// Regularization against an explicitly chosen reference permeability.
pub fn regularize_with(field: &CellField, eps: f64, k_ref: f64) -> Result<CellField> {
    if !(eps > 0.0) {
        return Err(Error::Config("regularization epsilon must be positive".into()));
    }
    if !(k_ref > 0.0) {
        return Err(Error::Config("reference permeability must be positive".into()));
    }
    let CellValues::Tensor(k) = &field.values else {
        return Err(Error::Contract("regularization expects a tensor field".into()));
    };
    let shift = eps * k_ref;
    let out: Vec<SymTensor3> = k.iter().map(|t| t.add_diagonal(shift)).collect();
    Ok(CellField::tensor(field.compartment, out))
}

/// Floors a porosity field at `eps` times its support mean, so cells that
/// carry regularized background permeability also carry a nonzero volume
/// fraction. Support values above the floor are left untouched.
pub fn porosity_floor(field: &CellField, eps: f64) -> Result<CellField> {
    if !(eps > 0.0) {
        return Err(Error::Config("porosity floor epsilon must be positive".into()));
    }
    let CellValues::Scalar(phi) = &field.values else {
        return Err(Error::Contract("porosity floor expects a scalar field".into()));
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for &p in phi {
        if p > 0.0 {
            sum += p;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("all-zero porosity field: no support to derive a floor from".into()));
    }
    let floor = eps * sum / count as f64;
    Ok(CellField::scalar(field.compartment, phi.iter().map(|&p| p.max(floor)).collect()))
}
