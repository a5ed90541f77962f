//! Steady flow on a vascular tree: junction continuity plus the modified
//! Bernoulli equation with Poiseuille losses, solved by a damped Newton
//! iteration on the terminal fluxes and the root pressure.
//!
//! Velocities are signed positive from segment tail to head, i.e. away from
//! the root. The pressure loss is implemented in its simplified signed
//! linear form `32 mu L w / D^2`, which is algebraically identical to
//! `1/2 rho lambda(w) w |w|` with `lambda = 64/Re * L/D` for laminar flow
//! and removes the `1/|w|` singularity at rest.

use crate::error::{Error, Result};
use crate::vtree::VascularTree;

/// Newton convergence tolerance on the scaled absolute residual.
pub const NEWTON_TOL: f64 = 1e-10;
/// Maximum Newton iterations before reporting non-convergence.
pub const NEWTON_MAX_ITER: usize = 50;
/// Laminar-model validity bound; exceeding it only logs a warning.
const REYNOLDS_WARN: f64 = 2300.0;

/// Blood properties. Defaults are standard hemodynamic values.
#[derive(Debug, Clone, Copy)]
pub struct Fluid {
    /// Density rho (kg/m^3).
    pub density: f64,
    /// Dynamic viscosity mu (Pa*s).
    pub viscosity: f64,
}

impl Default for Fluid {
    fn default() -> Self {
        Fluid { density: 1050.0, viscosity: 3.5e-3 }
    }
}

/// Boundary conditions for one tree solve.
///
/// Terminal vectors are ordered like [`VascularTree::terminal_junctions`].
#[derive(Debug, Clone)]
pub enum TreeFlowBc {
    /// Given root velocity, given terminal pressures (portal role).
    InletVelocity {
        root_velocity: f64,
        terminal_pressures: Vec<f64>,
    },
    /// Given root pressure, given terminal velocities (hepatic role).
    OutletPressure {
        root_pressure: f64,
        terminal_velocities: Vec<f64>,
    },
}

/// Converged nodal pressures and segment velocities.
#[derive(Debug, Clone)]
pub struct TreeFlowState {
    /// Pressure at every junction (Pa).
    pub junction_pressures: Vec<f64>,
    /// Signed velocity in every segment (m/s), positive tail -> head.
    pub segment_velocities: Vec<f64>,
    pub fluid: Fluid,
}

impl TreeFlowState {
    /// Volumetric flow through the root segment, positive into the tree.
    pub fn root_flux(&self, tree: &VascularTree) -> f64 {
        let rs = tree.root_segment();
        tree.segments()[rs].area() * self.segment_velocities[rs]
    }

    /// Volumetric flow out of each terminal junction into the continuum,
    /// ordered like `tree.terminal_junctions()`.
    pub fn terminal_fluxes(&self, tree: &VascularTree) -> Vec<f64> {
        tree.terminal_junctions()
            .iter()
            .map(|&j| {
                let si = tree.terminal_segment(j);
                tree.segments()[si].area() * self.segment_velocities[si]
            })
            .collect()
    }
}

/// Viscous pressure loss over one segment for signed velocity `w`.
///
/// Evaluates `1/2 rho lambda(w) w |w|` with the laminar loss factor, which
/// simplifies to `32 mu L w / D^2`; zero at `w = 0`.
pub fn segment_pressure_loss(w: f64, length: f64, diameter: f64, fluid: &Fluid) -> f64 {
    32.0 * fluid.viscosity * length * w / (diameter * diameter)
}

/// Loss coefficient `c` such that the segment loss is `c * w`.
fn loss_coefficient(length: f64, diameter: f64, fluid: &Fluid) -> f64 {
    32.0 * fluid.viscosity * length / (diameter * diameter)
}

/// Solves the junction-continuity + modified-Bernoulli system on a tree.
///
/// In `InletVelocity` mode the unknowns are the root pressure and the
/// terminal fluxes, found by Newton iteration with an analytic Jacobian,
/// starting from the linear (rho = 0) resistor solution. In
/// `OutletPressure` mode the state follows explicitly from the given data.
pub fn solve_tree_flow(tree: &VascularTree, bc: &TreeFlowBc, fluid: Fluid) -> Result<TreeFlowState> {
    let n_t = tree.terminal_junctions().len();
    match bc {
        TreeFlowBc::InletVelocity { root_velocity, terminal_pressures } => {
            if terminal_pressures.len() != n_t {
                return Err(Error::Contract(format!(
                    "expected {n_t} terminal pressures, got {}",
                    terminal_pressures.len()
                )));
            }
            if !root_velocity.is_finite() {
                return Err(Error::Contract("root velocity must be finite".into()));
            }
            solve_inlet_velocity(tree, *root_velocity, terminal_pressures, fluid)
        }
        TreeFlowBc::OutletPressure { root_pressure, terminal_velocities } => {
            if terminal_velocities.len() != n_t {
                return Err(Error::Contract(format!(
                    "expected {n_t} terminal velocities, got {}",
                    terminal_velocities.len()
                )));
            }
            solve_outlet_pressure(tree, *root_pressure, terminal_velocities, fluid)
        }
    }
}

/// Leaf fluxes in DFS-slot order from terminal values in junction order.
fn to_leaf_slots(tree: &VascularTree, terminal_values: &[f64]) -> Vec<f64> {
    let mut by_junction = vec![0.0; tree.junctions().len()];
    for (k, &j) in tree.terminal_junctions().iter().enumerate() {
        by_junction[j] = terminal_values[k];
    }
    tree.leaves_dfs().iter().map(|&j| by_junction[j]).collect()
}

/// Segment fluxes from leaf fluxes via subtree accumulation; exact mass
/// conservation at every junction by construction.
fn segment_fluxes(tree: &VascularTree, leaf_flux: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; tree.segments().len()];
    for &si in tree.segments_topo() {
        let (lo, hi) = tree.leaf_span(si);
        q[si] = leaf_flux[lo..hi].iter().sum();
    }
    q
}

/// Propagates junction pressures away from the root given segment fluxes.
///
/// Along segment e from junction i to j the energy balance reads
/// `1/2 rho w_up(i)^2 + p_i = 1/2 rho w_e^2 + p_j + loss(w_e)`, where
/// `w_up(i)` is the velocity in the segment feeding junction i (the root
/// segment feeds the root junction itself).
fn propagate_pressures(
    tree: &VascularTree,
    seg_flux: &[f64],
    root_pressure: f64,
    fluid: &Fluid,
) -> (Vec<f64>, Vec<f64>) {
    let n_j = tree.junctions().len();
    let mut w = vec![0.0; tree.segments().len()];
    for (si, s) in tree.segments().iter().enumerate() {
        w[si] = seg_flux[si] / s.area();
    }
    let mut p = vec![0.0; n_j];
    p[tree.root_junction()] = root_pressure;
    for &si in tree.segments_topo() {
        let s = &tree.segments()[si];
        let up = tree.parent_segment(s.tail).unwrap_or(si);
        let kinetic = 0.5 * fluid.density * (w[up] * w[up] - w[si] * w[si]);
        let loss = segment_pressure_loss(w[si], s.length, s.diameter, fluid);
        p[s.head] = p[s.tail] + kinetic - loss;
    }
    (p, w)
}

fn solve_outlet_pressure(
    tree: &VascularTree,
    root_pressure: f64,
    terminal_velocities: &[f64],
    fluid: Fluid,
) -> Result<TreeFlowState> {
    let leaf_junctions = tree.leaves_dfs();
    let term_vel_slots = to_leaf_slots(tree, terminal_velocities);
    let leaf_flux: Vec<f64> = leaf_junctions
        .iter()
        .zip(&term_vel_slots)
        .map(|(&j, &wk)| tree.segments()[tree.terminal_segment(j)].area() * wk)
        .collect();
    let q = segment_fluxes(tree, &leaf_flux);
    let (p, w) = propagate_pressures(tree, &q, root_pressure, &fluid);
    warn_if_turbulent(tree, &w, &fluid);
    Ok(TreeFlowState { junction_pressures: p, segment_velocities: w, fluid })
}

fn solve_inlet_velocity(
    tree: &VascularTree,
    root_velocity: f64,
    terminal_pressures: &[f64],
    fluid: Fluid,
) -> Result<TreeFlowState> {
    let n_t = tree.terminal_junctions().len();
    let root_seg = tree.root_segment();
    let a_root = tree.segments()[root_seg].area();
    let target_flux = a_root * root_velocity;
    let p_term_slots = to_leaf_slots(tree, terminal_pressures);

    // Residual scales: flux equation by the root flux, pressure equations
    // by the larger of the root dynamic pressure, the total viscous drop
    // down the tree at the nominal velocity, and the BC pressure magnitude.
    let q_scale = nonzero(target_flux.abs(), 1.0);
    let dyn_p = 0.5 * fluid.density * root_velocity * root_velocity;
    let visc_p: f64 = tree
        .segments()
        .iter()
        .map(|s| loss_coefficient(s.length, s.diameter, &fluid) * root_velocity.abs())
        .fold(0.0, f64::max);
    let bc_p = p_term_slots.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let p_scale = nonzero(dyn_p.max(visc_p).max(bc_p), 1.0);

    // Unknowns: x[0] = root pressure, x[1..] = leaf fluxes (DFS slots).
    let residual = |x: &[f64], rho: f64| -> Vec<f64> {
        let f = Fluid { density: rho, ..fluid };
        let leaf_flux = &x[1..];
        let q = segment_fluxes(tree, leaf_flux);
        let (p, _w) = propagate_pressures(tree, &q, x[0], &f);
        let mut r = Vec::with_capacity(n_t + 1);
        r.push((leaf_flux.iter().sum::<f64>() - target_flux) / q_scale);
        for (slot, &j) in tree.leaves_dfs().iter().enumerate() {
            r.push((p[j] - p_term_slots[slot]) / p_scale);
        }
        r
    };

    // Linear (rho = 0) resistor solve provides the initial guess; the
    // system is linear then, so one Newton step lands on it exactly.
    let mut x = vec![0.0; n_t + 1];
    newton(tree, &mut x, &residual, 0.0, &fluid, q_scale, p_scale, 2)?;
    if fluid.density != 0.0 {
        let linear = x.clone();
        if newton(tree, &mut x, &residual, fluid.density, &fluid, q_scale, p_scale, NEWTON_MAX_ITER)
            .is_err()
        {
            // Strongly nonlinear kinetic terms: continue gradually in rho
            // from the linear solution.
            x = linear;
            for step in 1..=8 {
                let rho = fluid.density * step as f64 / 8.0;
                newton(tree, &mut x, &residual, rho, &fluid, q_scale, p_scale, NEWTON_MAX_ITER)?;
            }
        }
    }

    let q = segment_fluxes(tree, &x[1..]);
    let (p, w) = propagate_pressures(tree, &q, x[0], &fluid);
    warn_if_turbulent(tree, &w, &fluid);
    Ok(TreeFlowState { junction_pressures: p, segment_velocities: w, fluid })
}

#[allow(clippy::too_many_arguments)]
fn newton(
    tree: &VascularTree,
    x: &mut [f64],
    residual: &dyn Fn(&[f64], f64) -> Vec<f64>,
    rho: f64,
    fluid: &Fluid,
    q_scale: f64,
    p_scale: f64,
    max_iter: usize,
) -> Result<()> {
    let merit = |r: &[f64]| -> f64 { 0.5 * r.iter().map(|v| v * v).sum::<f64>() };
    let mut r = residual(x, rho);
    let mut rnorm = max_norm(&r);
    let mut m = merit(&r);
    for _ in 0..max_iter {
        if rnorm <= NEWTON_TOL {
            return Ok(());
        }
        let jac = jacobian(tree, x, rho, fluid, q_scale, p_scale);
        let dx = solve_dense(jac, &r).map_err(|col| singular_error(tree, col, rnorm))?;

        // Damping: halve the step while the least-squares merit grows.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(&xi, &di)| xi - alpha * di).collect();
            let rt = residual(&trial, rho);
            let mt = merit(&rt);
            if mt <= m * (1.0 - 1e-4 * alpha) || max_norm(&rt) <= NEWTON_TOL {
                x.copy_from_slice(&trial);
                rnorm = max_norm(&rt);
                r = rt;
                m = mt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver(format!(
                "tree flow Newton stalled: damping failed at scaled residual {rnorm:.3e}"
            )));
        }
        log::trace!("tree flow Newton residual {rnorm:.3e}");
    }
    if rnorm <= NEWTON_TOL {
        Ok(())
    } else {
        Err(Error::Solver(format!(
            "tree flow Newton did not converge in {max_iter} iterations; final scaled residual {rnorm:.3e}"
        )))
    }
}

/// Analytic Jacobian of the scaled residual w.r.t. [p0, leaf fluxes].
fn jacobian(
    tree: &VascularTree,
    x: &[f64],
    rho: f64,
    fluid: &Fluid,
    q_scale: f64,
    p_scale: f64,
) -> Vec<Vec<f64>> {
    let n_t = tree.leaves_dfs().len();
    let n = n_t + 1;
    let leaf_flux = &x[1..];
    let q = segment_fluxes(tree, leaf_flux);
    let segs = tree.segments();
    let w: Vec<f64> = segs.iter().enumerate().map(|(si, s)| q[si] / s.area()).collect();

    let mut jac = vec![vec![0.0; n]; n];
    for l in 0..n_t {
        jac[0][1 + l] = 1.0 / q_scale;
    }

    // Path from the root to each leaf, accumulating d p_leaf / d q_l.
    // T_e = 1/2 rho (w_up^2 - w_e^2) - c_e w_e contributes over the leaf
    // spans of the upstream segment and of e itself.
    for (slot, &leaf_j) in tree.leaves_dfs().iter().enumerate() {
        let row = &mut jac[1 + slot];
        row[0] = 1.0 / p_scale;
        let mut j = leaf_j;
        while let Some(si) = tree.parent_segment(j) {
            let s = &segs[si];
            let c = loss_coefficient(s.length, s.diameter, fluid);
            let a_e = s.area();
            let (lo, hi) = tree.leaf_span(si);
            let d_own = (-rho * w[si] - c) / a_e / p_scale;
            for col in lo..hi {
                row[1 + col] += d_own;
            }
            let up = tree.parent_segment(s.tail).unwrap_or(si);
            let a_up = segs[up].area();
            let (ulo, uhi) = tree.leaf_span(up);
            let d_up = rho * w[up] / a_up / p_scale;
            for col in ulo..uhi {
                row[1 + col] += d_up;
            }
            j = s.tail;
        }
    }
    jac
}

/// Gaussian elimination with partial pivoting; reports the offending
/// column on a zero pivot so the caller can name the junction.
fn solve_dense(mut a: Vec<Vec<f64>>, b: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let n = b.len();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col][col].abs();
        for row in (col + 1)..n {
            let v = a[row][col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(col);
        }
        a.swap(col, piv);
        x.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}

fn singular_error(tree: &VascularTree, column: usize, rnorm: f64) -> Error {
    let junction = if column == 0 {
        tree.root_junction()
    } else {
        tree.leaves_dfs()[column - 1]
    };
    Error::Solver(format!(
        "singular Jacobian in tree flow solve at junction {junction} (scaled residual {rnorm:.3e})"
    ))
}

fn warn_if_turbulent(tree: &VascularTree, w: &[f64], fluid: &Fluid) {
    let mut re_max = 0.0f64;
    for (si, s) in tree.segments().iter().enumerate() {
        let re = fluid.density * w[si].abs() * s.diameter / fluid.viscosity;
        re_max = re_max.max(re);
    }
    if re_max > REYNOLDS_WARN {
        log::warn!(
            "laminar loss model outside its range: max segment Reynolds number {re_max:.0} > {REYNOLDS_WARN}"
        );
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn nonzero(v: f64, fallback: f64) -> f64 {
    if v > 1e-300 {
        v
    } else {
        fallback
    }
}

/// Residual diagnostics for a computed state; used by tests and the
/// coupled solver's convergence report.
pub fn flow_residuals(tree: &VascularTree, state: &TreeFlowState) -> (f64, f64) {
    let fluid = &state.fluid;
    let w = &state.segment_velocities;
    let p = &state.junction_pressures;
    let mut continuity = 0.0f64;
    for (j, junction) in tree.junctions().iter().enumerate() {
        if junction.segments.len() < 2 {
            continue;
        }
        let mut net = 0.0;
        let mut scale = 0.0f64;
        for &si in &junction.segments {
            let s = &tree.segments()[si];
            let q = s.area() * w[si];
            net += if s.head == j { q } else { -q };
            scale = scale.max(q.abs());
        }
        if scale > 0.0 {
            continuity = continuity.max(net.abs() / scale);
        }
    }
    let mut bernoulli = 0.0f64;
    for s in tree.segments() {
        let si = tree.parent_segment(s.head).unwrap();
        let up = tree.parent_segment(s.tail).unwrap_or(si);
        let lhs = p[s.tail] + 0.5 * fluid.density * w[up] * w[up];
        let rhs = p[s.head]
            + 0.5 * fluid.density * w[si] * w[si]
            + segment_pressure_loss(w[si], s.length, s.diameter, fluid);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        bernoulli = bernoulli.max((lhs - rhs).abs() / scale);
    }
    (continuity, bernoulli)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vtree::{build_synthetic_tree, Segment, TreeSpec, VascularTree};
    use proptest::prelude::*;

    fn pipe(length: f64, diameter: f64) -> VascularTree {
        VascularTree::new(
            vec![[0.0, 0.0, 0.0], [length, 0.0, 0.0]],
            vec![Segment { tail: 0, head: 1, diameter, length }],
            0,
        )
        .unwrap()
    }

    fn test_spec(depth: u32, seed: u64) -> TreeSpec {
        TreeSpec {
            depth,
            root_diameter: 0.008,
            diameter_ratio: 0.75,
            length_diameter_ratio: 10.0,
            region_min: [0.0, 0.0, 0.0],
            region_max: [0.5, 0.4, 0.3],
            seed,
            tortuosity: 1.15,
        }
    }

    #[test]
    fn loss_zero_at_rest() {
        let f = Fluid::default();
        assert_eq!(segment_pressure_loss(0.0, 0.1, 0.01, &f), 0.0);
    }

    #[test]
    fn loss_hand_value() {
        // 32 mu L w / D^2 with mu = 3.5e-3, L = 0.1, w = 0.1, D = 0.01.
        let f = Fluid { density: 1050.0, viscosity: 3.5e-3 };
        let loss = segment_pressure_loss(0.1, 0.1, 0.01, &f);
        assert!((loss - 11.2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn loss_is_odd() {
        let f = Fluid::default();
        for &w in &[0.01, 0.3, 2.5] {
            let a = segment_pressure_loss(w, 0.2, 0.004, &f);
            let b = segment_pressure_loss(-w, 0.2, 0.004, &f);
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn single_pipe_analytic() {
        let tree = pipe(0.1, 0.01);
        let fluid = Fluid { density: 1050.0, viscosity: 3.5e-3 };
        let bc = TreeFlowBc::InletVelocity { root_velocity: 0.1, terminal_pressures: vec![0.0] };
        let st = solve_tree_flow(&tree, &bc, fluid).unwrap();
        // Constant diameter: kinetic terms cancel, drop is pure loss.
        let expected = 32.0 * 3.5e-3 * 0.1 * 0.1 / (0.01 * 0.01);
        let p_root = st.junction_pressures[0];
        assert!(((p_root - expected) / expected).abs() < 1e-10, "p_root {p_root}");
        assert!((st.segment_velocities[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_bifurcation_splits_evenly() {
        // Root at x=0 feeding two identical children.
        let tree = VascularTree::new(
            vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.05, 0.0], [0.2, -0.05, 0.0]],
            vec![
                Segment { tail: 0, head: 1, diameter: 0.01, length: 0.1 },
                Segment { tail: 1, head: 2, diameter: 0.007, length: 0.12 },
                Segment { tail: 1, head: 3, diameter: 0.007, length: 0.12 },
            ],
            0,
        )
        .unwrap();
        let bc = TreeFlowBc::InletVelocity { root_velocity: 0.2, terminal_pressures: vec![100.0, 100.0] };
        let st = solve_tree_flow(&tree, &bc, Fluid::default()).unwrap();
        assert!((st.segment_velocities[1] - st.segment_velocities[2]).abs() < 1e-12);
        let q_root = st.root_flux(&tree);
        let q_child = tree.segments()[1].area() * st.segment_velocities[1];
        assert!(((2.0 * q_child - q_root) / q_root).abs() < 1e-12);
    }

    #[test]
    fn rest_state_is_hydrostatic() {
        let tree = build_synthetic_tree(&test_spec(4, 3)).unwrap();
        let n_t = tree.terminal_junctions().len();
        let bc = TreeFlowBc::InletVelocity { root_velocity: 0.0, terminal_pressures: vec![750.0; n_t] };
        let st = solve_tree_flow(&tree, &bc, Fluid::default()).unwrap();
        for &w in &st.segment_velocities {
            assert!(w.abs() < 1e-12);
        }
        for &p in &st.junction_pressures {
            assert!((p - 750.0).abs() < 1e-8, "pressure {p}");
        }
    }

    #[test]
    fn outlet_pressure_mode_consistency() {
        let tree = build_synthetic_tree(&test_spec(4, 8)).unwrap();
        let n_t = tree.terminal_junctions().len();
        let fluid = Fluid::default();
        let wk: Vec<f64> = (0..n_t).map(|k| -0.02 - 0.001 * k as f64).collect();
        let bc = TreeFlowBc::OutletPressure { root_pressure: 1e3, terminal_velocities: wk.clone() };
        let st = solve_tree_flow(&tree, &bc, fluid).unwrap();
        assert!((st.junction_pressures[tree.root_junction()] - 1e3).abs() < 1e-12);

        // Feeding the resulting state back through the inlet-velocity mode
        // must reproduce it.
        let w_root = st.segment_velocities[tree.root_segment()];
        let p_terms: Vec<f64> = tree.terminal_junctions().iter().map(|&j| st.junction_pressures[j]).collect();
        let bc2 = TreeFlowBc::InletVelocity { root_velocity: w_root, terminal_pressures: p_terms };
        let st2 = solve_tree_flow(&tree, &bc2, fluid).unwrap();
        for (a, b) in st.junction_pressures.iter().zip(&st2.junction_pressures) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
        let (cont, bern) = flow_residuals(&tree, &st);
        assert!(cont < 1e-12 && bern < 1e-10, "cont {cont} bern {bern}");
    }

    #[test]
    fn monotone_pressure_on_constant_diameter_path() {
        // Three segments in series, constant diameter.
        let tree = VascularTree::new(
            vec![[0.0; 3], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.3, 0.0, 0.0]],
            vec![
                Segment { tail: 0, head: 1, diameter: 0.01, length: 0.1 },
                Segment { tail: 1, head: 2, diameter: 0.01, length: 0.1 },
                Segment { tail: 2, head: 3, diameter: 0.01, length: 0.1 },
            ],
            0,
        )
        .unwrap();
        let bc = TreeFlowBc::InletVelocity { root_velocity: 0.15, terminal_pressures: vec![0.0] };
        let st = solve_tree_flow(&tree, &bc, Fluid::default()).unwrap();
        let p = &st.junction_pressures;
        assert!(p[0] > p[1] && p[1] > p[2] && p[2] > p[3], "pressures {p:?}");
    }

    /// Independent oracle: junction-pressure nodal solve of the linear
    /// resistor network (conductance A D^2 / (32 mu L) per segment).
    pub(crate) fn resistor_network_pressures(
        tree: &VascularTree,
        root_velocity: f64,
        terminal_pressures: &[f64],
        viscosity: f64,
    ) -> Vec<f64> {
        let n_j = tree.junctions().len();
        let mut fixed = vec![None; n_j];
        for (k, &j) in tree.terminal_junctions().iter().enumerate() {
            fixed[j] = Some(terminal_pressures[k]);
        }
        let unknown: Vec<usize> = (0..n_j).filter(|&j| fixed[j].is_none()).collect();
        let col_of: std::collections::HashMap<usize, usize> =
            unknown.iter().enumerate().map(|(c, &j)| (j, c)).collect();
        let n = unknown.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        let root_seg = tree.root_segment();
        let q_in = tree.segments()[root_seg].area() * root_velocity;
        b[col_of[&tree.root_junction()]] += q_in;
        for s in tree.segments() {
            let g = s.area() * s.diameter * s.diameter / (32.0 * viscosity * s.length);
            for (me, other) in [(s.tail, s.head), (s.head, s.tail)] {
                if let Some(&row) = col_of.get(&me) {
                    a[row][row] += g;
                    match col_of.get(&other) {
                        Some(&col) => a[row][col] -= g,
                        None => b[row] += g * fixed[other].unwrap(),
                    }
                }
            }
        }
        let x = solve_dense(a, &b).expect("resistor network is nonsingular");
        (0..n_j)
            .map(|j| fixed[j].unwrap_or_else(|| x[col_of[&j]]))
            .collect()
    }

    #[test]
    fn poiseuille_limit_matches_resistor_network() {
        let tree = build_synthetic_tree(&test_spec(5, 77)).unwrap();
        let n_t = tree.terminal_junctions().len();
        let p_terms: Vec<f64> = (0..n_t).map(|k| 200.0 + 35.0 * (k % 7) as f64).collect();
        let fluid = Fluid { density: 0.0, viscosity: 3.5e-3 };
        let bc = TreeFlowBc::InletVelocity { root_velocity: 0.12, terminal_pressures: p_terms.clone() };
        let st = solve_tree_flow(&tree, &bc, fluid).unwrap();
        let oracle = resistor_network_pressures(&tree, 0.12, &p_terms, 3.5e-3);
        let scale = oracle.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for (j, (&got, &want)) in st.junction_pressures.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() <= 1e-8 * scale,
                "junction {j}: {got} vs {want}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        /// Global mass balance holds for any converged inlet-velocity solve.
        #[test]
        fn mass_balance(seed in 0u64..1000, depth in 2u32..6, v in 0.01f64..0.4) {
            let tree = build_synthetic_tree(&test_spec(depth, seed)).unwrap();
            let n_t = tree.terminal_junctions().len();
            // Large common offset plus a differential spread on the scale of
            // the achievable viscous drops.
            let p_terms: Vec<f64> =
                (0..n_t).map(|k| 1000.0 + 0.5 * ((k * (1 + seed as usize)) % 10) as f64).collect();
            let bc = TreeFlowBc::InletVelocity { root_velocity: v, terminal_pressures: p_terms };
            let st = solve_tree_flow(&tree, &bc, Fluid::default()).unwrap();
            let q_root = st.root_flux(&tree);
            let q_out: f64 = st.terminal_fluxes(&tree).iter().sum();
            prop_assert!(((q_out - q_root) / q_root).abs() <= 1e-10);
        }
    }
}
