//! Dynamic contrast-agent transport: delay-based advection on the 1D
//! trees with junction mixing, explicit upwind finite-volume advection in
//! the compartments with exchange transfer, inlet bolus and the total
//! apparent concentration.

mod compartments;
mod network;

pub use compartments::{
    CompartmentFlowField, CompartmentTransport, PairFlux, PointFlux, CFL_SAFETY,
};
pub use network::{transition_times, NetworkTransport, TransitionTimes, STAGNANT_VELOCITY};

use crate::coupling::{CoupledFlowState, TreeRole};
use crate::error::{Error, Result};
use crate::geometry::{CellValues, Mesh};
use crate::vtree::VascularTree;

/// Inlet bolus: peak parameter and duration.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BolusSpec {
    /// Peak parameter; the maximum inlet saturation is twice this value.
    pub peak: f64,
    /// Bolus duration (s).
    pub duration: f64,
}

impl BolusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak >= 0.0 && 2.0 * self.peak <= 1.0) {
            return Err(Error::Config(format!(
                "bolus peak {} outside [0, 0.5] (the inlet saturation must stay within [0, 1])",
                self.peak
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config("bolus duration must be positive".into()));
        }
        Ok(())
    }
}

/// Inlet saturation `peak * (1 - cos(2 pi t / T))` during the bolus, zero
/// afterwards (and for t < 0).
pub fn bolus(t: f64, spec: &BolusSpec) -> f64 {
    if t < 0.0 || t > spec.duration {
        0.0
    } else {
        spec.peak * (1.0 - (2.0 * std::f64::consts::PI * t / spec.duration).cos())
    }
}

/// Total apparent concentration `C = sum_i phi_i S_i` per cell.
pub fn total_concentration(saturations: &[Vec<f64>], porosity: &[Vec<f64>]) -> Vec<f64> {
    let n_cells = saturations.first().map_or(0, Vec::len);
    let mut c = vec![0.0; n_cells];
    for (s, phi) in saturations.iter().zip(porosity) {
        for i in 0..n_cells {
            c[i] += phi[i] * s[i];
        }
    }
    c
}

/// Time step policy of the simulation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// CFL bound times the safety factor, optionally capped.
    Auto { cap: Option<f64> },
    /// Fixed step; still validated against the CFL bound.
    Fixed(f64),
}

/// Saturation curves sampled at every step at the probe cells.
#[derive(Debug, Clone)]
pub struct ProbeSeries {
    pub times: Vec<f64>,
    /// `[probe][compartment][step]`.
    pub saturation: Vec<Vec<Vec<f64>>>,
    /// `[probe][step]` total apparent concentration.
    pub concentration: Vec<Vec<f64>>,
    /// Cell index sampled by each probe.
    pub probe_cells: Vec<usize>,
}

/// Field snapshot at one output time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub saturations: Vec<Vec<f64>>,
    pub concentration: Vec<f64>,
}

/// Tracer bookkeeping over the whole run.
#[derive(Debug, Clone, Copy, Default)]
pub struct TracerBudget {
    pub injected: f64,
    pub drained: f64,
    pub stored_final: f64,
    /// max over output times of |stored + drained - injected| relative to
    /// the injected volume so far.
    pub max_relative_error: f64,
}

/// Result of a perfusion-test simulation.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub series: ProbeSeries,
    pub snapshots: Vec<Snapshot>,
    pub budget: TracerBudget,
    /// Largest excursion of any saturation outside [0, 1].
    pub max_bound_violation: f64,
    pub dt: f64,
    pub steps: usize,
    /// Worst per-cell flux imbalance after the conservative correction.
    pub flux_imbalance: f64,
    /// Venous output curve: hepatic root junction saturation per step.
    pub hepatic_outlet: Vec<f64>,
}

/// Full input bundle of [`simulate_perfusion_test`].
pub struct PerfusionTest<'a> {
    pub mesh: &'a Mesh,
    pub portal: &'a VascularTree,
    pub hepatic: &'a VascularTree,
    pub coupled: &'a CoupledFlowState,
    /// Per-compartment porosity (floored, strictly positive).
    pub porosity: Vec<Vec<f64>>,
    pub bolus: BolusSpec,
    pub t_end: f64,
    pub probes: Vec<[f64; 3]>,
    pub dt: DtPolicy,
    pub snapshot_times: Vec<f64>,
}

/// Builds the compartment flow field of a converged coupled state.
pub fn flow_field_of(coupled: &CoupledFlowState) -> Result<CompartmentFlowField> {
    let mut velocities = Vec::with_capacity(coupled.darcy.velocities.len());
    for v in &coupled.darcy.velocities {
        let CellValues::Vector(w) = &v.values else {
            return Err(Error::Contract("velocity fields must be vector-valued".into()));
        };
        velocities.push(w.clone());
    }
    let mut exchange = Vec::new();
    for e in &coupled.darcy.exchange {
        let CellValues::Scalar(j) = &e.flux.values else {
            return Err(Error::Contract("exchange fields must be scalar".into()));
        };
        exchange.push(PairFlux { lo: e.lo, hi: e.hi, flux: j.clone() });
    }
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for entry in &coupled.interface {
        match entry.role {
            TreeRole::Portal => sources.push(PointFlux {
                compartment: entry.compartment,
                node: entry.node,
                flux: entry.flux.max(0.0),
            }),
            TreeRole::Hepatic => sinks.push(PointFlux {
                compartment: entry.compartment,
                node: entry.node,
                flux: (-entry.flux).max(0.0),
            }),
        }
    }
    Ok(CompartmentFlowField { velocities, exchange, sources, sinks })
}

/// Advances network and compartment transport on a shared clock and emits
/// probe curves, snapshots and the tracer budget.
pub fn simulate_perfusion_test(test: &PerfusionTest<'_>) -> Result<TransportResult> {
    test.bolus.validate()?;
    if !(test.t_end > 0.0) {
        return Err(Error::Config("t_end must be positive".into()));
    }
    let flow = flow_field_of(test.coupled)?;
    let transport = CompartmentTransport::new(test.mesh, test.porosity.clone(), &flow, true)?;

    let dt = match test.dt {
        DtPolicy::Fixed(dt) => {
            if !(dt > 0.0) {
                return Err(Error::Config("fixed dt must be positive".into()));
            }
            dt
        }
        DtPolicy::Auto { cap } => {
            let mut dt = CFL_SAFETY * transport.cfl_bound();
            // Resolve the bolus regardless of how lazy the CFL bound is.
            dt = dt.min(test.bolus.duration / 50.0);
            if let Some(cap) = cap {
                dt = dt.min(cap);
            }
            dt
        }
    };
    let steps = (test.t_end / dt).ceil() as usize;

    let mut portal_net = NetworkTransport::new(test.portal, &test.coupled.portal, dt, test.t_end)?;
    let mut hepatic_net = NetworkTransport::new(test.hepatic, &test.coupled.hepatic, dt, test.t_end)?;

    // Portal terminals feed the sources in interface order; the source list
    // in `flow` was built in the same order.
    let portal_terminals: Vec<usize> = test
        .coupled
        .interface
        .iter()
        .filter(|e| e.role == TreeRole::Portal)
        .map(|e| e.junction)
        .collect();
    let hepatic_terminals: Vec<(usize, usize)> = test
        .coupled
        .interface
        .iter()
        .filter(|e| e.role == TreeRole::Hepatic)
        .map(|e| (e.junction, e.node))
        .collect();
    let portal_root = test.portal.root_junction();
    let sink_comp = test.coupled.sink_compartment;

    let probe_cells: Vec<usize> = test.probes.iter().map(|&p| test.mesh.nearest_cell(p)).collect();
    let n_comp = test.porosity.len();
    let mut s: Vec<Vec<f64>> = (0..n_comp).map(|_| vec![0.0; test.mesh.cell_count()]).collect();

    let mut series = ProbeSeries {
        times: Vec::with_capacity(steps + 1),
        saturation: vec![vec![Vec::with_capacity(steps + 1); n_comp]; probe_cells.len()],
        concentration: vec![Vec::with_capacity(steps + 1); probe_cells.len()],
        probe_cells: probe_cells.clone(),
    };
    let mut snapshots = Vec::new();
    let mut snap_times: Vec<f64> = test.snapshot_times.clone();
    snap_times.sort_by(|a, b| a.total_cmp(b));
    let mut next_snap = 0usize;
    let mut hepatic_outlet = Vec::with_capacity(steps + 1);

    let mut budget = TracerBudget::default();
    let mut max_violation = 0.0f64;

    let mut record = |t: f64,
                      s: &[Vec<f64>],
                      series: &mut ProbeSeries,
                      hepatic_outlet: &mut Vec<f64>,
                      hepatic_net: &NetworkTransport| {
        series.times.push(t);
        for (pi, &cell) in probe_cells.iter().enumerate() {
            let mut c = 0.0;
            for comp in 0..n_comp {
                let v = s[comp][cell];
                series.saturation[pi][comp].push(v);
                c += test.porosity[comp][cell] * v;
            }
            series.concentration[pi].push(c);
        }
        hepatic_outlet.push(hepatic_net.saturation(test.hepatic.root_junction()));
    };
    record(0.0, &s, &mut series, &mut hepatic_outlet, &hepatic_net);

    for step in 0..steps {
        let t = step as f64 * dt;
        let t_next = (step + 1) as f64 * dt;

        // Compartment step with the portal terminal saturations at t.
        let source_saturations: Vec<f64> = portal_terminals
            .iter()
            .map(|&j| portal_net.saturation(j))
            .collect();
        let (inj, dra) = transport.step(&mut s, &source_saturations, dt)?;
        budget.injected += inj;
        budget.drained += dra;

        // Network steps to t_next: the portal root takes the bolus, the
        // hepatic leaves take the local compartment saturation.
        portal_net.step(&[(portal_root, bolus(t_next, &test.bolus))])?;
        let hepatic_boundary: Vec<(usize, f64)> = hepatic_terminals
            .iter()
            .map(|&(j, node)| (j, transport.node_saturation(test.mesh, &s[sink_comp], node)))
            .collect();
        hepatic_net.step(&hepatic_boundary)?;

        // Invariants and bookkeeping.
        for comp in &s {
            for &v in comp {
                let excess = (v - 1.0).max(-v).max(0.0);
                max_violation = max_violation.max(excess);
            }
        }
        for net in [&portal_net, &hepatic_net] {
            for j in 0..test.portal.junctions().len().max(test.hepatic.junctions().len()) {
                if j < if std::ptr::eq(net, &portal_net) {
                    test.portal.junctions().len()
                } else {
                    test.hepatic.junctions().len()
                } {
                    let v = net.saturation(j);
                    let excess = (v - 1.0).max(-v).max(0.0);
                    max_violation = max_violation.max(excess);
                }
            }
        }
        if max_violation > 1e-12 {
            return Err(Error::Invariant(format!(
                "saturation left [0, 1] by {max_violation:.3e} at t = {t_next:.6}"
            )));
        }

        let stored = transport.tracer_mass(&s);
        let err = (stored + budget.drained - budget.injected).abs();
        if budget.injected > 0.0 {
            budget.max_relative_error = budget.max_relative_error.max(err / budget.injected);
        }

        record(t_next, &s, &mut series, &mut hepatic_outlet, &hepatic_net);

        while next_snap < snap_times.len() && t_next >= snap_times[next_snap] - 1e-12 {
            snapshots.push(Snapshot {
                time: t_next,
                saturations: s.clone(),
                concentration: total_concentration(&s, &test.porosity),
            });
            next_snap += 1;
        }
    }

    budget.stored_final = transport.tracer_mass(&s);
    Ok(TransportResult {
        series,
        snapshots,
        budget,
        max_bound_violation: max_violation,
        dt,
        steps,
        flux_imbalance: transport.max_imbalance,
        hepatic_outlet,
    })
}
