//! Fixed-point pseudo-time coupling of the portal tree (inlet-velocity
//! mode), the hepatic tree (outlet-pressure mode) and the multicompartment
//! Darcy solver through terminal-junction sources and sinks.
//!
//! Per outer iteration: ramp the driving boundary values, solve both trees,
//! solve the continuum with portal terminals as point fluxes and hepatic
//! terminals as Dirichlet pressure nodes, then read the interface variables
//! back (portal pressures from the pressure field, hepatic velocities from
//! the discrete reaction fluxes) with under-relaxation.

use crate::darcy::{assemble, PressureSolution, SolveOptions, SourceKind, SourceSpec};
use crate::error::{Error, Result};
use crate::flow1d::{solve_tree_flow, Fluid, TreeFlowBc, TreeFlowState};
use crate::geometry::Mesh;
use crate::upscale::{CompartmentGroup, PerfusionParams};
use crate::vtree::VascularTree;

/// Which side of the perfusion system a tree drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeRole {
    Portal,
    Hepatic,
}

/// One coupled terminal junction.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceEntry {
    pub role: TreeRole,
    /// Terminal junction index in the owning tree.
    pub junction: usize,
    /// Mesh node the junction maps to.
    pub node: usize,
    /// Compartment fed (portal) or drained (hepatic).
    pub compartment: usize,
    /// Volumetric flux into the compartment (m^3/s); negative at sinks.
    pub flux: f64,
    /// Interface pressure (Pa).
    pub pressure: f64,
}

/// Convergence log entry for one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    pub ramp: f64,
    pub interface_residual: f64,
    pub mass_gap: f64,
    pub relaxation: f64,
}

/// Global volumetric balances of a converged state.
#[derive(Debug, Clone, Copy)]
pub struct MassClosure {
    pub portal_inflow: f64,
    pub hepatic_outflow: f64,
    pub exchange_upper: f64,
    pub exchange_lower: f64,
}

impl MassClosure {
    /// Largest pairwise relative gap between the four balances.
    pub fn max_gap(&self) -> f64 {
        let v = [self.portal_inflow, self.hepatic_outflow, self.exchange_upper, self.exchange_lower];
        let scale = v.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-300);
        let mut gap = 0.0f64;
        for i in 0..4 {
            for j in (i + 1)..4 {
                gap = gap.max((v[i] - v[j]).abs() / scale);
            }
        }
        gap
    }
}

/// Options of the outer fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct CouplingOptions {
    /// Number of pseudo-time steps ramping the boundary data.
    pub pseudo_steps: usize,
    pub max_outer_iterations: usize,
    /// Convergence tolerance on the relative interface change.
    pub tolerance: f64,
    /// Under-relaxation factor applied to interface updates.
    pub relaxation: f64,
    /// Halve the relaxation whenever the residual grows past the ramp.
    pub adaptive_relaxation: bool,
    pub darcy: SolveOptions,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions {
            pseudo_steps: 10,
            max_outer_iterations: 200,
            tolerance: 1e-6,
            relaxation: 0.5,
            adaptive_relaxation: true,
            darcy: SolveOptions { rel_tol: 1e-12, max_iter_factor: 20 },
        }
    }
}

/// Converged coupled state of trees, continuum and interface.
#[derive(Debug, Clone)]
pub struct CoupledFlowState {
    pub portal: TreeFlowState,
    pub hepatic: TreeFlowState,
    pub darcy: PressureSolution,
    pub interface: Vec<InterfaceEntry>,
    pub log: Vec<IterationRecord>,
    pub source_compartment: usize,
    pub sink_compartment: usize,
    pub outer_iterations: usize,
}

impl CoupledFlowState {
    pub fn mass_closure(&self, portal: &VascularTree, hepatic: &VascularTree, mesh: &Mesh) -> MassClosure {
        let portal_inflow = self.portal.root_flux(portal);
        let hepatic_outflow = -self.hepatic.root_flux(hepatic);
        let pairs: Vec<(usize, usize)> =
            self.darcy.exchange.iter().map(|e| (e.lo, e.hi)).collect();
        // Exchange out of the source compartment and into the sink one.
        let exchange_upper = pairs
            .iter()
            .find(|&&(lo, hi)| lo == self.source_compartment || hi == self.source_compartment)
            .and_then(|&(lo, hi)| {
                let other = if lo == self.source_compartment { hi } else { lo };
                self.darcy.total_exchange(mesh, self.source_compartment, other)
            })
            .unwrap_or(0.0);
        let exchange_lower = pairs
            .iter()
            .find(|&&(lo, hi)| lo == self.sink_compartment || hi == self.sink_compartment)
            .and_then(|&(lo, hi)| {
                let other = if lo == self.sink_compartment { hi } else { lo };
                self.darcy.total_exchange(mesh, other, self.sink_compartment)
            })
            .unwrap_or(0.0);
        MassClosure { portal_inflow, hepatic_outflow, exchange_upper, exchange_lower }
    }
}

/// Maps terminal junctions to their nearest mesh nodes, failing on
/// duplicates within the same tree so sources stay distinguishable.
pub fn map_terminals(mesh: &Mesh, tree: &VascularTree, role: TreeRole) -> Result<Vec<usize>> {
    let mut nodes = Vec::with_capacity(tree.terminal_junctions().len());
    let mut seen = std::collections::HashMap::new();
    for &j in tree.terminal_junctions() {
        let node = mesh.nearest_node(tree.junctions()[j].position);
        if let Some(&prev) = seen.get(&node) {
            return Err(Error::Config(format!(
                "{role:?} terminal junctions {prev} and {j} both map to mesh node {node}; \
                 refine the mesh or adjust the tree"
            )));
        }
        seen.insert(node, j);
        nodes.push(node);
    }
    Ok(nodes)
}

/// Compartment fed by a tree role: the highest hierarchy of the group.
fn boundary_compartment(params: &PerfusionParams, role: TreeRole) -> Result<usize> {
    let group = match role {
        TreeRole::Portal => CompartmentGroup::Portal,
        TreeRole::Hepatic => CompartmentGroup::Hepatic,
    };
    params
        .compartments
        .iter()
        .enumerate()
        .filter(|(_, c)| c.group == group)
        .max_by_key(|(_, c)| c.hierarchy)
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Config(format!("no compartment of group {group:?} to couple the {role:?} tree to")))
}

/// Step-5 read-back: new portal terminal pressures from the source
/// compartment's nodal pressures, new hepatic terminal velocities from the
/// Dirichlet reaction fluxes (`w = F / A` with F the flux injected to hold
/// the nodal pressure; negative when the node drains).
pub fn interface_update(
    darcy: &PressureSolution,
    source_comp: usize,
    sink_comp: usize,
    portal_nodes: &[usize],
    hepatic_nodes: &[usize],
    hepatic_tree: &VascularTree,
) -> (Vec<f64>, Vec<f64>) {
    let p_portal: Vec<f64> = portal_nodes
        .iter()
        .map(|&n| darcy.pressures[source_comp].values[n])
        .collect();
    let mut reaction_by_node = std::collections::HashMap::new();
    for r in &darcy.reactions {
        if r.compartment == sink_comp {
            reaction_by_node.insert(r.node, r.flux);
        }
    }
    let w_hepatic: Vec<f64> = hepatic_nodes
        .iter()
        .zip(hepatic_tree.terminal_junctions())
        .map(|(&n, &j)| {
            let area = hepatic_tree.segments()[hepatic_tree.terminal_segment(j)].area();
            reaction_by_node.get(&n).copied().unwrap_or(0.0) / area
        })
        .collect();
    (p_portal, w_hepatic)
}

/// Runs the pseudo-time fixed-point loop until the interface variables
/// settle: ramp boundary data, solve both trees, solve the continuum,
/// update the interface, repeat.
#[allow(clippy::too_many_arguments)]
pub fn couple_steady(
    portal: &VascularTree,
    hepatic: &VascularTree,
    mesh: &Mesh,
    params: &PerfusionParams,
    fluid: Fluid,
    v_in: f64,
    p_out: f64,
    options: &CouplingOptions,
) -> Result<CoupledFlowState> {
    if v_in < 0.0 {
        return Err(Error::Config("inlet velocity must be non-negative".into()));
    }
    if options.pseudo_steps == 0 {
        return Err(Error::Config("pseudo_steps must be at least 1".into()));
    }
    let source_comp = boundary_compartment(params, TreeRole::Portal)?;
    let sink_comp = boundary_compartment(params, TreeRole::Hepatic)?;
    let portal_nodes = map_terminals(mesh, portal, TreeRole::Portal)?;
    let hepatic_nodes = map_terminals(mesh, hepatic, TreeRole::Hepatic)?;
    let n_p = portal_nodes.len();
    let n_h = hepatic_nodes.len();

    // Characteristic single-node conductance of the sink compartment,
    // K_mean * h (m^3 / (Pa s)); used only as a residual scale.
    let nodal_conductance = {
        let k_mean = match &params.permeability[sink_comp].values {
            crate::geometry::CellValues::Tensor(k) => {
                k.iter().map(|t| t.norm()).sum::<f64>() / k.len().max(1) as f64
            }
            _ => 0.0,
        };
        let h = mesh.bbox_diagonal() / (mesh.node_count() as f64).cbrt();
        (k_mean * h).max(1e-300)
    };

    // Step 1: all interface velocities and pressures start at zero.
    let mut p_k_portal = vec![0.0; n_p];
    let mut w_k_hepatic = vec![0.0; n_h];
    let tau = 1.0 / options.pseudo_steps as f64;
    let mut omega = options.relaxation;
    const OMEGA_MIN: f64 = 1.0 / 256.0;

    let mut log: Vec<IterationRecord> = Vec::new();
    let mut converged_streak = 0usize;
    let mut result: Option<(TreeFlowState, TreeFlowState, PressureSolution)> = None;
    let mut outer_iterations = 0;
    // Last accepted interface state, restored when an inner solve blows up
    // on a diverging transient.
    let mut snapshot = (p_k_portal.clone(), w_k_hepatic.clone());
    let mut failures = 0usize;

    for i in 1..=options.max_outer_iterations {
        outer_iterations = i;
        // Step 2: ramp the driving data.
        let ramp = (i as f64 * tau).min(1.0);
        let w0 = ramp * v_in;
        let p0_h = ramp * p_out;

        // Steps 3-4: both tree solves, then the continuum solve with
        // portal fluxes and hepatic pressures.
        let solves = (|| -> Result<(TreeFlowState, TreeFlowState, PressureSolution)> {
            let portal_state = solve_tree_flow(
                portal,
                &TreeFlowBc::InletVelocity {
                    root_velocity: w0,
                    terminal_pressures: p_k_portal.clone(),
                },
                fluid,
            )?;
            let hepatic_state = solve_tree_flow(
                hepatic,
                &TreeFlowBc::OutletPressure {
                    root_pressure: p0_h,
                    terminal_velocities: w_k_hepatic.clone(),
                },
                fluid,
            )?;
            let portal_fluxes = portal_state.terminal_fluxes(portal);
            let hepatic_pressures: Vec<f64> = hepatic
                .terminal_junctions()
                .iter()
                .map(|&j| hepatic_state.junction_pressures[j])
                .collect();
            let sources = vec![
                SourceSpec {
                    compartment: source_comp,
                    conditions: portal_nodes
                        .iter()
                        .zip(&portal_fluxes)
                        .map(|(&n, &q)| (n, SourceKind::Flux(q)))
                        .collect(),
                },
                SourceSpec {
                    compartment: sink_comp,
                    conditions: hepatic_nodes
                        .iter()
                        .zip(&hepatic_pressures)
                        .map(|(&n, &p)| (n, SourceKind::Pressure(p)))
                        .collect(),
                },
            ];
            let system = assemble(mesh, params, &sources)?;
            let darcy_sol = system.solve(&options.darcy)?;
            Ok((portal_state, hepatic_state, darcy_sol))
        })();

        let (portal_state, hepatic_state, darcy_sol) = match solves {
            Ok(t) => t,
            Err(e) if options.adaptive_relaxation && omega > OMEGA_MIN && failures < 8 => {
                failures += 1;
                omega *= 0.5;
                p_k_portal = snapshot.0.clone();
                w_k_hepatic = snapshot.1.clone();
                log::debug!("coupling iteration {i} failed ({e}); relaxation reduced to {omega}");
                continue;
            }
            Err(e) => return Err(e),
        };

        // Step 5: interface read-back and relaxed update. Pressure changes
        // are measured against the pressure scale; flux changes against the
        // larger of the driven flux and the flux a pressure-scale
        // difference pushes through one mesh node (otherwise a no-flow
        // state would be normalized by its own solver noise).
        let (p_read, w_read) = interface_update(
            &darcy_sol,
            source_comp,
            sink_comp,
            &portal_nodes,
            &hepatic_nodes,
            hepatic,
        );
        let p_scale = p_read
            .iter()
            .fold(p_out.abs(), |m, &v| m.max(v.abs()))
            .max(1e-300);
        let q_drive = portal.segments()[portal.root_segment()].area() * v_in;
        let q_floor = p_scale * nodal_conductance;
        let areas: Vec<f64> = hepatic
            .terminal_junctions()
            .iter()
            .map(|&j| hepatic.segments()[hepatic.terminal_segment(j)].area())
            .collect();
        let q_scale = w_read
            .iter()
            .zip(&areas)
            .fold(q_drive.max(q_floor), |m, (&w, &a)| m.max((w * a).abs()))
            .max(1e-300);
        let mut residual = 0.0f64;
        for (old, new) in p_k_portal.iter().zip(&p_read) {
            residual = residual.max((new - old).abs() / p_scale);
        }
        for ((old, new), &a) in w_k_hepatic.iter().zip(&w_read).zip(&areas) {
            residual = residual.max(((new - old) * a).abs() / q_scale);
        }
        snapshot = (p_k_portal.clone(), w_k_hepatic.clone());
        for (old, &new) in p_k_portal.iter_mut().zip(&p_read) {
            *old += omega * (new - *old);
        }
        for (old, &new) in w_k_hepatic.iter_mut().zip(&w_read) {
            *old += omega * (new - *old);
        }

        let portal_inflow = portal_state.root_flux(portal);
        let hepatic_outflow = -hepatic_state.root_flux(hepatic);
        let scale = portal_inflow.abs().max(hepatic_outflow.abs()).max(1e-300);
        let mass_gap = (portal_inflow - hepatic_outflow).abs() / scale;
        log.push(IterationRecord { iteration: i, ramp, interface_residual: residual, mass_gap, relaxation: omega });
        log::debug!(
            "coupling iteration {i}: ramp {ramp:.2}, residual {residual:.3e}, mass gap {mass_gap:.3e}"
        );
        result = Some((portal_state, hepatic_state, darcy_sol));

        // Step 6: repeat until the interface is steady past the ramp.
        let past_ramp = i >= options.pseudo_steps;
        if past_ramp && residual < options.tolerance {
            converged_streak += 1;
            if converged_streak >= 2 {
                break;
            }
        } else {
            converged_streak = 0;
        }
        if options.adaptive_relaxation && omega > OMEGA_MIN {
            if let Some(prev) = log.len().checked_sub(2).map(|k| log[k].interface_residual) {
                // Any growth counts past the ramp; only strong growth does
                // during it (the ramp itself moves the target).
                let grew = if past_ramp { residual > prev } else { residual > 4.0 * prev.max(1.0) };
                if grew {
                    omega *= 0.5;
                    log::debug!("coupling relaxation reduced to {omega}");
                }
            }
        }
    }

    if converged_streak < 2 {
        let tail: Vec<String> = log
            .iter()
            .rev()
            .take(5)
            .map(|r| format!("it {}: {:.3e}", r.iteration, r.interface_residual))
            .collect();
        return Err(Error::Solver(format!(
            "coupled solve did not reach a steady interface in {} iterations (last residuals: {})",
            options.max_outer_iterations,
            tail.join(", ")
        )));
    }

    let (portal_state, hepatic_state, darcy_sol) = result.expect("at least one iteration ran");
    let portal_fluxes = portal_state.terminal_fluxes(portal);
    let mut interface = Vec::with_capacity(n_p + n_h);
    for (k, &j) in portal.terminal_junctions().iter().enumerate() {
        interface.push(InterfaceEntry {
            role: TreeRole::Portal,
            junction: j,
            node: portal_nodes[k],
            compartment: source_comp,
            flux: portal_fluxes[k],
            pressure: p_k_portal[k],
        });
    }
    for (k, &j) in hepatic.terminal_junctions().iter().enumerate() {
        let area = hepatic.segments()[hepatic.terminal_segment(j)].area();
        interface.push(InterfaceEntry {
            role: TreeRole::Hepatic,
            junction: j,
            node: hepatic_nodes[k],
            compartment: sink_comp,
            flux: area * w_k_hepatic[k],
            pressure: hepatic_state.junction_pressures[j],
        });
    }

    Ok(CoupledFlowState {
        portal: portal_state,
        hepatic: hepatic_state,
        darcy: darcy_sol,
        interface,
        log,
        source_compartment: source_comp,
        sink_compartment: sink_comp,
        outer_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::structured::box_mesh;
    use crate::geometry::{CellField, SymTensor3};
    use crate::upscale::{CompartmentSpec, ExchangePair};
    use crate::vtree::{build_synthetic_tree, TreeSpec};

    fn three_comp_params(mesh: &Mesh, k: f64, g: f64) -> PerfusionParams {
        let nc = mesh.cell_count();
        let comp = |id, group, hierarchy| CompartmentSpec {
            id,
            group,
            diameter_range: (0.0, 1.0),
            hierarchy,
        };
        PerfusionParams {
            compartments: vec![
                comp(0, CompartmentGroup::Portal, 1),
                comp(1, CompartmentGroup::Filtration, 0),
                comp(2, CompartmentGroup::Hepatic, 1),
            ],
            permeability: (0..3)
                .map(|c| CellField::tensor(c, vec![SymTensor3::isotropic(k); nc]))
                .collect(),
            porosity: (0..3).map(|c| CellField::scalar(c, vec![1e-3; nc])).collect(),
            exchange: vec![
                ExchangePair { lo: 0, hi: 1, g: CellField::scalar(0, vec![g; nc]) },
                ExchangePair { lo: 1, hi: 2, g: CellField::scalar(1, vec![g; nc]) },
            ],
        }
    }

    /// Toy trees resistive enough that the Darcy point response does not
    /// dominate the interface loop (as with upscaled tissue, where sources
    /// sit inside highly conductive regions).
    fn small_trees(mesh_extent: [f64; 3]) -> (VascularTree, VascularTree) {
        let spec = |seed, from_min: bool| TreeSpec {
            depth: 2,
            root_diameter: 1e-3,
            diameter_ratio: 0.8,
            length_diameter_ratio: 20.0,
            region_min: if from_min {
                [0.0, 0.0, 0.0]
            } else {
                [mesh_extent[0] * 0.5, 0.0, 0.0]
            },
            region_max: if from_min {
                [mesh_extent[0] * 0.5, mesh_extent[1], mesh_extent[2]]
            } else {
                mesh_extent
            },
            seed,
            tortuosity: 1.1,
        };
        let portal = build_synthetic_tree(&spec(3, true)).unwrap();
        let hepatic = build_synthetic_tree(&spec(9, false)).unwrap();
        (portal, hepatic)
    }

    fn test_mesh() -> Mesh {
        box_mesh([0.0; 3], [0.1, 0.08, 0.06], [6, 5, 4]).unwrap()
    }

    #[test]
    fn rest_state() {
        let mesh = test_mesh();
        let params = three_comp_params(&mesh, 1e-9, 1e-6);
        let (portal, hepatic) = small_trees([0.1, 0.08, 0.06]);
        let st = couple_steady(
            &portal,
            &hepatic,
            &mesh,
            &params,
            Fluid::default(),
            0.0,
            500.0,
            &CouplingOptions::default(),
        )
        .unwrap();
        // No inflow: everything settles at the outlet pressure.
        for comp in 0..3 {
            for &p in &st.darcy.pressures[comp].values {
                assert!((p - 500.0).abs() < 1e-6, "compartment {comp}: p = {p}");
            }
        }
        for &w in st.portal.segment_velocities.iter().chain(&st.hepatic.segment_velocities) {
            assert!(w.abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_mass_closure_small_scenario() {
        let mesh = test_mesh();
        let params = three_comp_params(&mesh, 1e-8, 1e-6);
        let (portal, hepatic) = small_trees([0.1, 0.08, 0.06]);
        let options = CouplingOptions { tolerance: 1e-8, ..Default::default() };
        let st = couple_steady(
            &portal,
            &hepatic,
            &mesh,
            &params,
            Fluid::default(),
            0.05,
            800.0,
            &options,
        )
        .unwrap();
        let closure = st.mass_closure(&portal, &hepatic, &mesh);
        assert!(
            closure.max_gap() < 1e-6,
            "gap {:.3e} from {closure:?}",
            closure.max_gap()
        );
        // Hepatic terminals drain.
        for e in st.interface.iter().filter(|e| e.role == TreeRole::Hepatic) {
            assert!(e.flux < 0.0, "hepatic interface flux {e:?}");
        }
        // One extra outer iteration changes nothing beyond tolerance.
        let p_before: Vec<f64> = st
            .interface
            .iter()
            .filter(|e| e.role == TreeRole::Portal)
            .map(|e| e.pressure)
            .collect();
        let (p_read, _) = interface_update(
            &st.darcy,
            st.source_compartment,
            st.sink_compartment,
            &st.interface
                .iter()
                .filter(|e| e.role == TreeRole::Portal)
                .map(|e| e.node)
                .collect::<Vec<_>>(),
            &st.interface
                .iter()
                .filter(|e| e.role == TreeRole::Hepatic)
                .map(|e| e.node)
                .collect::<Vec<_>>(),
            &hepatic,
        );
        let scale = p_read.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for (a, b) in p_before.iter().zip(&p_read) {
            assert!((a - b).abs() <= 1e-6 * scale, "fixed point drift: {a} vs {b}");
        }
    }

    #[test]
    fn duplicate_node_mapping_fails() {
        // A mesh so coarse that 16 terminals cannot land on distinct nodes.
        let mesh = box_mesh([0.0; 3], [0.1, 0.08, 0.06], [1, 1, 1]).unwrap();
        let spec = TreeSpec {
            depth: 5,
            root_diameter: 3e-3,
            diameter_ratio: 0.8,
            length_diameter_ratio: 6.0,
            region_min: [0.0; 3],
            region_max: [0.1, 0.08, 0.06],
            seed: 5,
            tortuosity: 1.1,
        };
        let tree = build_synthetic_tree(&spec).unwrap();
        assert!(matches!(
            map_terminals(&mesh, &tree, TreeRole::Portal),
            Err(Error::Config(_))
        ));
    }
}
