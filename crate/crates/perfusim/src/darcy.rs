//! Finite-element solution of the multicompartment Darcy system: P1 nodal
//! pressures on tetrahedra, lumped inter-compartment exchange, point
//! flux sources, nodal Dirichlet pressures and a no-flux outer boundary.
//!
//! The block system over all compartments is symmetric and, after
//! permeability regularization plus at least one Dirichlet node, positive
//! definite; it is solved by Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::geometry::{CellField, CellValues, Mesh, NodeField, SymTensor3};
use crate::linalg::{pcg, Csr};
use crate::upscale::PerfusionParams;

/// Default relative tolerance of the pressure solve.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// A nodal condition coupling the continuum to the outside world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// Point flux Q (m^3/s), positive into the compartment.
    Flux(f64),
    /// Prescribed nodal pressure (Pa).
    Pressure(f64),
}

/// All nodal conditions of one compartment.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub compartment: usize,
    pub conditions: Vec<(usize, SourceKind)>,
}

/// Options for [`DarcySystem::solve`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the unknown count.
    pub max_iter_factor: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { rel_tol: DEFAULT_REL_TOL, max_iter_factor: 10 }
    }
}

/// Exchange flux field between one coupled pair: `flux` holds
/// `J = G (p_lo - p_hi)` per cell, the volumetric rate from `lo` to `hi`.
/// The reverse flux is its exact negation.
#[derive(Debug, Clone)]
pub struct ExchangeFlux {
    pub lo: usize,
    pub hi: usize,
    pub flux: CellField,
}

/// External flux injected at a Dirichlet node to hold its pressure
/// (the discrete reaction; negative when the node drains the compartment).
#[derive(Debug, Clone, Copy)]
pub struct Reaction {
    pub compartment: usize,
    pub node: usize,
    pub flux: f64,
}

/// Converged pressures with derived velocity and exchange fields.
#[derive(Debug, Clone)]
pub struct PressureSolution {
    /// Nodal pressure per compartment (Pa).
    pub pressures: Vec<NodeField>,
    /// Per-cell Darcy velocity per compartment (m/s).
    pub velocities: Vec<CellField>,
    /// Exchange flux per coupled pair (s^-1).
    pub exchange: Vec<ExchangeFlux>,
    /// Reaction fluxes at Dirichlet nodes.
    pub reactions: Vec<Reaction>,
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

/// Assembled block system with Dirichlet bookkeeping.
pub struct DarcySystem<'a> {
    mesh: &'a Mesh,
    params: &'a PerfusionParams,
    matrix: Csr,
    rhs: Vec<f64>,
    /// (global unknown, prescribed value) pairs, sorted by unknown.
    dirichlet: Vec<(usize, f64)>,
    n_nodes: usize,
    n_comp: usize,
}

/// Constant gradients of the four P1 basis functions on a tetrahedron.
fn p1_gradients(mesh: &Mesh, cell: &[usize; 4]) -> [[f64; 3]; 4] {
    let x = cell.map(|n| mesh.nodes()[n]);
    let e1 = sub3(x[1], x[0]);
    let e2 = sub3(x[2], x[0]);
    let e3 = sub3(x[3], x[0]);
    let det = dot3(e1, cross3(e2, e3));
    // Rows of the inverse of [e1; e2; e3]^T scaled by 1/det.
    let g1 = scale3(cross3(e2, e3), 1.0 / det);
    let g2 = scale3(cross3(e3, e1), 1.0 / det);
    let g3 = scale3(cross3(e1, e2), 1.0 / det);
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    [g0, g1, g2, g3]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Assembles the coupled stiffness + exchange system with point sources.
///
/// The exchange term is integrated with a lumped (diagonal) mass
/// approximation, which keeps the discrete maximum principle for the
/// coupling. Fails before solving when no Dirichlet node exists anywhere
/// (the pure-Neumann system is singular) or when a node carries two
/// conditions in the same compartment.
pub fn assemble<'a>(
    mesh: &'a Mesh,
    params: &'a PerfusionParams,
    sources: &[SourceSpec],
) -> Result<DarcySystem<'a>> {
    params.validate(mesh)?;
    let n_nodes = mesh.node_count();
    let n_comp = params.compartments.len();
    let n = n_nodes * n_comp;
    let gidx = |comp: usize, node: usize| comp * n_nodes + node;

    let volumes = mesh.cell_geometry().volumes;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();

    // Stiffness per compartment.
    for (comp, kfield) in params.permeability.iter().enumerate() {
        let CellValues::Tensor(k) = &kfield.values else {
            return Err(Error::Contract("permeability must be a tensor field".into()));
        };
        for (ci, cell) in mesh.cells().iter().enumerate() {
            let grads = p1_gradients(mesh, cell);
            let v = volumes[ci];
            let kg: [[f64; 3]; 4] = [
                k[ci].apply(grads[0]),
                k[ci].apply(grads[1]),
                k[ci].apply(grads[2]),
                k[ci].apply(grads[3]),
            ];
            for a in 0..4 {
                for b in 0..4 {
                    let val = v * dot3(grads[a], kg[b]);
                    triplets.push((gidx(comp, cell[a]), gidx(comp, cell[b]), val));
                }
            }
        }
    }

    // Lumped exchange coupling.
    for pair in &params.exchange {
        let CellValues::Scalar(g) = &pair.g.values else {
            return Err(Error::Contract("exchange coefficients must be scalar".into()));
        };
        for (ci, cell) in mesh.cells().iter().enumerate() {
            let w = g[ci] * volumes[ci] / 4.0;
            if w == 0.0 {
                continue;
            }
            for &node in cell {
                let lo = gidx(pair.lo, node);
                let hi = gidx(pair.hi, node);
                triplets.push((lo, lo, w));
                triplets.push((lo, hi, -w));
                triplets.push((hi, hi, w));
                triplets.push((hi, lo, -w));
            }
        }
    }

    // Nodal conditions.
    let mut rhs = vec![0.0; n];
    let mut dirichlet: Vec<(usize, f64)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for spec in sources {
        if spec.compartment >= n_comp {
            return Err(Error::Contract(format!("source compartment {} out of range", spec.compartment)));
        }
        for &(node, kind) in &spec.conditions {
            if node >= n_nodes {
                return Err(Error::Contract(format!("source node {node} out of range")));
            }
            if !seen.insert((spec.compartment, node)) {
                return Err(Error::Contract(format!(
                    "node {node} carries more than one condition in compartment {}",
                    spec.compartment
                )));
            }
            match kind {
                SourceKind::Flux(q) => rhs[gidx(spec.compartment, node)] += q,
                SourceKind::Pressure(p) => dirichlet.push((gidx(spec.compartment, node), p)),
            }
        }
    }
    if dirichlet.is_empty() {
        return Err(Error::Solver(
            "singular system: no Dirichlet pressure node in any compartment".into(),
        ));
    }
    dirichlet.sort_unstable_by_key(|&(i, _)| i);

    let matrix = Csr::from_triplets(n, triplets);
    Ok(DarcySystem { mesh, params, matrix, rhs, dirichlet, n_nodes, n_comp })
}

impl DarcySystem<'_> {
    /// Solves the reduced system and derives velocities, exchange fluxes
    /// and Dirichlet reactions.
    pub fn solve(&self, opts: &SolveOptions) -> Result<PressureSolution> {
        let n = self.n_nodes * self.n_comp;
        let mut is_dir = vec![false; n];
        let mut dir_val = vec![0.0; n];
        for &(i, v) in &self.dirichlet {
            is_dir[i] = true;
            dir_val[i] = v;
        }

        // Reduced numbering over free unknowns.
        let mut red_of = vec![usize::MAX; n];
        let mut free = Vec::with_capacity(n);
        for i in 0..n {
            if !is_dir[i] {
                red_of[i] = free.len();
                free.push(i);
            }
        }
        let nf = free.len();
        let mut red_triplets = Vec::new();
        let mut b = vec![0.0; nf];
        for (row_red, &row) in free.iter().enumerate() {
            b[row_red] = self.rhs[row];
            let (cols, vals) = self.matrix.row(row);
            for (&c, &v) in cols.iter().zip(vals) {
                if is_dir[c] {
                    b[row_red] -= v * dir_val[c];
                } else {
                    red_triplets.push((row_red, red_of[c], v));
                }
            }
        }
        let a_red = Csr::from_triplets(nf, red_triplets);
        let cg = pcg(&a_red, &b, opts.rel_tol, opts.max_iter_factor.max(1) * nf.max(1))?;

        let mut x = dir_val;
        for (row_red, &row) in free.iter().enumerate() {
            x[row] = cg.x[row_red];
        }

        // Reactions from the full residual at Dirichlet rows.
        let mut ax = vec![0.0; n];
        self.matrix.matvec(&x, &mut ax);
        let reactions: Vec<Reaction> = self
            .dirichlet
            .iter()
            .map(|&(i, _)| Reaction {
                compartment: i / self.n_nodes,
                node: i % self.n_nodes,
                flux: ax[i] - self.rhs[i],
            })
            .collect();

        let pressures: Vec<NodeField> = (0..self.n_comp)
            .map(|comp| {
                NodeField::new(comp, x[comp * self.n_nodes..(comp + 1) * self.n_nodes].to_vec())
            })
            .collect();

        let velocities: Vec<CellField> = (0..self.n_comp)
            .map(|comp| darcy_velocity(&pressures[comp], &self.params.permeability[comp], self.mesh))
            .collect::<Result<_>>()?;

        let exchange = exchange_fluxes(self.mesh, self.params, &pressures)?;

        Ok(PressureSolution {
            pressures,
            velocities,
            exchange,
            reactions,
            cg_iterations: cg.iterations,
            relative_residual: cg.relative_residual,
        })
    }

    /// Number of unknowns in the coupled block system.
    pub fn unknowns(&self) -> usize {
        self.n_nodes * self.n_comp
    }
}

/// Per-cell Darcy velocity `w = -K grad p` (exact for P1 pressures).
pub fn darcy_velocity(p: &NodeField, k: &CellField, mesh: &Mesh) -> Result<CellField> {
    p.validate_for(mesh)?;
    k.validate_for(mesh)?;
    let CellValues::Tensor(kt) = &k.values else {
        return Err(Error::Contract("darcy_velocity expects a tensor permeability field".into()));
    };
    let mut w = Vec::with_capacity(mesh.cell_count());
    for (ci, cell) in mesh.cells().iter().enumerate() {
        let grads = p1_gradients(mesh, cell);
        let mut gp = [0.0; 3];
        for (a, &node) in cell.iter().enumerate() {
            let pv = p.values[node];
            gp[0] += pv * grads[a][0];
            gp[1] += pv * grads[a][1];
            gp[2] += pv * grads[a][2];
        }
        let kg = kt[ci].apply(gp);
        w.push([-kg[0], -kg[1], -kg[2]]);
    }
    Ok(CellField::vector(p.compartment, w))
}

/// Cell-wise exchange fluxes `J = G (p_lo - p_hi)` using nodal means, which
/// makes `sum_cells V J` identical to the assembled lumped coupling term.
fn exchange_fluxes(
    mesh: &Mesh,
    params: &PerfusionParams,
    pressures: &[NodeField],
) -> Result<Vec<ExchangeFlux>> {
    let mut out = Vec::with_capacity(params.exchange.len());
    for pair in &params.exchange {
        let CellValues::Scalar(g) = &pair.g.values else {
            return Err(Error::Contract("exchange coefficients must be scalar".into()));
        };
        let p_lo = &pressures[pair.lo].values;
        let p_hi = &pressures[pair.hi].values;
        let mut j = Vec::with_capacity(mesh.cell_count());
        for (ci, cell) in mesh.cells().iter().enumerate() {
            let mut dp = 0.0;
            for &n in cell {
                dp += p_lo[n] - p_hi[n];
            }
            j.push(g[ci] * dp / 4.0);
        }
        out.push(ExchangeFlux { lo: pair.lo, hi: pair.hi, flux: CellField::scalar(pair.lo, j) });
    }
    Ok(out)
}

impl PressureSolution {
    /// Total volumetric exchange from `lo` to `hi` (m^3/s): the integral of
    /// the pair's exchange flux over the mesh.
    pub fn total_exchange(&self, mesh: &Mesh, lo: usize, hi: usize) -> Option<f64> {
        let volumes = mesh.cell_geometry().volumes;
        self.exchange
            .iter()
            .find(|e| (e.lo, e.hi) == (lo, hi) || (e.lo, e.hi) == (hi, lo))
            .map(|e| {
                let CellValues::Scalar(j) = &e.flux.values else { unreachable!() };
                let total: f64 = j.iter().zip(&volumes).map(|(&ji, &v)| ji * v).sum();
                if e.lo == lo {
                    total
                } else {
                    -total
                }
            })
    }
}
