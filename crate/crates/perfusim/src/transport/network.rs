//! Tracer transport on a branching network: pure advection per segment
//! reduces to delayed junction values; junctions mix their inflows by
//! flux weighting.

use crate::error::{Error, Result};
use crate::flow1d::TreeFlowState;
use crate::vtree::VascularTree;

/// Segments slower than this are stagnant and excluded from transport.
pub const STAGNANT_VELOCITY: f64 = 1e-12;

/// Relative snap tolerance for delayed history lookups; when a lookup
/// lands this close to a stored sample no interpolation happens, keeping
/// commensurate time steps exact.
const SNAP_EPS: f64 = 1e-9;

/// Tracer transition times per segment, `T = L / |w|`.
#[derive(Debug, Clone)]
pub struct TransitionTimes {
    pub times: Vec<f64>,
    pub stagnant: Vec<bool>,
}

/// Computes per-segment transition times from a converged flow state.
/// Stagnant segments get `T = inf` and a flag instead of an error.
pub fn transition_times(tree: &VascularTree, state: &TreeFlowState) -> TransitionTimes {
    let mut times = Vec::with_capacity(tree.segments().len());
    let mut stagnant = Vec::with_capacity(tree.segments().len());
    for (si, s) in tree.segments().iter().enumerate() {
        let w = state.segment_velocities[si].abs();
        if w < STAGNANT_VELOCITY {
            times.push(f64::INFINITY);
            stagnant.push(true);
        } else {
            times.push(s.length / w);
            stagnant.push(false);
        }
    }
    TransitionTimes { times, stagnant }
}

/// One inflow into a junction: the upstream junction, the transit delay in
/// steps, and the flux weight `A_e |v_e|`.
#[derive(Debug, Clone, Copy)]
struct Inflow {
    upstream: usize,
    delay_steps: f64,
    weight: f64,
}

/// Saturation state of one tree: per-junction histories at step resolution
/// plus the mixing topology derived from the flow direction.
#[derive(Debug)]
pub struct NetworkTransport {
    dt: f64,
    /// Number of committed steps; sample `s` holds the state at `s * dt`.
    step_count: usize,
    capacity: usize,
    /// Ring buffers, one per junction, length `capacity`.
    history: Vec<Vec<f64>>,
    inflows: Vec<Vec<Inflow>>,
    /// Junction processing order along the flow direction.
    order: Vec<usize>,
    /// Junctions with no network inflow; their values come from outside
    /// (the inlet bolus or the continuum at sinks).
    boundary: Vec<usize>,
    pub transition: TransitionTimes,
}

impl NetworkTransport {
    /// Builds the transport state for a steady tree flow. `horizon` bounds
    /// the history length: lookups further back than both the horizon and
    /// the longest delay return the initial (zero) saturation.
    pub fn new(tree: &VascularTree, state: &TreeFlowState, dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Contract("network transport needs dt > 0".into()));
        }
        let n_j = tree.junctions().len();
        let transition = transition_times(tree, state);

        let mut inflows: Vec<Vec<Inflow>> = vec![Vec::new(); n_j];
        for (si, s) in tree.segments().iter().enumerate() {
            if transition.stagnant[si] {
                continue;
            }
            let w = state.segment_velocities[si];
            let weight = tree.segments()[si].area() * w.abs();
            // Positive velocity carries tail -> head.
            let (from, to) = if w > 0.0 { (s.tail, s.head) } else { (s.head, s.tail) };
            inflows[to].push(Inflow {
                upstream: from,
                delay_steps: transition.times[si] / dt,
                weight,
            });
        }

        // Process junctions so upstream values of the current step exist
        // before they are consumed (needed when a delay is shorter than dt).
        let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n_j];
        for (to, flows) in inflows.iter().enumerate() {
            for f in flows {
                downstream[f.upstream].push(to);
            }
        }
        let mut order = Vec::with_capacity(n_j);
        let mut pending: Vec<usize> = inflows.iter().map(|v| v.len()).collect();
        let mut queue: Vec<usize> = (0..n_j).filter(|&j| pending[j] == 0).collect();
        let boundary = queue.clone();
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            order.push(j);
            for &k in &downstream[j] {
                pending[k] -= 1;
                if pending[k] == 0 {
                    queue.push(k);
                }
            }
        }
        if order.len() != n_j {
            return Err(Error::Contract("network flow direction contains a cycle".into()));
        }

        let max_delay = transition
            .times
            .iter()
            .filter(|t| t.is_finite())
            .fold(0.0f64, |m, &t| m.max(t));
        let horizon_steps = (horizon / dt).ceil() as usize + 3;
        let capacity = (((max_delay / dt).ceil() as usize).saturating_add(3)).min(horizon_steps.max(4));

        Ok(NetworkTransport {
            dt,
            step_count: 0,
            capacity,
            history: vec![vec![0.0; capacity]; n_j],
            inflows,
            order,
            boundary,
            transition,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.dt
    }

    /// Junctions whose saturation must be supplied externally each step.
    pub fn boundary_junctions(&self) -> &[usize] {
        &self.boundary
    }

    /// Current saturation of a junction.
    pub fn saturation(&self, junction: usize) -> f64 {
        self.sample(junction, self.step_count as i64)
    }

    fn sample(&self, junction: usize, step: i64) -> f64 {
        if step < 0 || (self.step_count as i64 - step) as usize >= self.capacity {
            // Initial state (zero) before t = 0 or beyond the horizon.
            return 0.0;
        }
        self.history[junction][(step as usize) % self.capacity]
    }

    /// Delayed value at `steps_back` before the given step, with linear
    /// interpolation between samples and snapping of near-integer delays.
    fn delayed(&self, junction: usize, at_step: i64, steps_back: f64) -> f64 {
        let u = at_step as f64 - steps_back;
        let p = u.floor();
        let frac = u - p;
        let p = p as i64;
        if frac <= SNAP_EPS {
            self.sample(junction, p)
        } else if frac >= 1.0 - SNAP_EPS {
            self.sample(junction, p + 1)
        } else {
            (1.0 - frac) * self.sample(junction, p) + frac * self.sample(junction, p + 1)
        }
    }

    /// Advances one step. `boundary_values` supplies saturations for the
    /// boundary junctions (missing ones hold their previous value, which is
    /// what stagnant inlets do).
    pub fn step(&mut self, boundary_values: &[(usize, f64)]) -> Result<()> {
        let next = self.step_count as i64 + 1;
        let mut assigned = vec![false; self.history.len()];
        let mut new_values = vec![0.0; self.history.len()];
        for &(j, v) in boundary_values {
            if j >= self.history.len() {
                return Err(Error::Contract(format!("boundary junction {j} out of range")));
            }
            new_values[j] = v;
            assigned[j] = true;
        }

        // Values must be committed in flow order within the step so that
        // sub-step delays (T_e < dt) can read them back interpolated.
        let order = std::mem::take(&mut self.order);
        for &j in &order {
            if !assigned[j] {
                let flows = &self.inflows[j];
                if flows.is_empty() {
                    // Unsupplied boundary junction: hold.
                    new_values[j] = self.sample(j, self.step_count as i64);
                } else {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for f in flows {
                        num += f.weight * self.delayed(f.upstream, next, f.delay_steps);
                        den += f.weight;
                    }
                    new_values[j] = num / den;
                }
            }
            let slot = (next as usize) % self.capacity;
            self.history[j][slot] = new_values[j];
        }
        self.order = order;
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow1d::Fluid;
    use crate::vtree::Segment;

    fn chain(lengths: &[f64]) -> VascularTree {
        let mut positions = vec![[0.0, 0.0, 0.0]];
        let mut segments = Vec::new();
        let mut x = 0.0;
        for (i, &len) in lengths.iter().enumerate() {
            x += len;
            positions.push([x, 0.0, 0.0]);
            segments.push(Segment { tail: i, head: i + 1, diameter: 1e-3, length: len });
        }
        VascularTree::new(positions, segments, 0).unwrap()
    }

    fn state(tree: &VascularTree, velocities: Vec<f64>) -> TreeFlowState {
        TreeFlowState {
            junction_pressures: vec![0.0; tree.junctions().len()],
            segment_velocities: velocities,
            fluid: Fluid::default(),
        }
    }

    #[test]
    fn transition_time_quotient_and_flags() {
        let tree = chain(&[0.1]);
        let st = state(&tree, vec![0.05]);
        let tt = transition_times(&tree, &st);
        assert!((tt.times[0] - 2.0).abs() < 1e-15);
        assert!(!tt.stagnant[0]);

        let slow = state(&tree, vec![1e-13]);
        let tt = transition_times(&tree, &slow);
        assert!(tt.stagnant[0]);

        // Halving the velocity doubles the transition time.
        let half = state(&tree, vec![0.025]);
        let tt2 = transition_times(&tree, &half);
        assert!((tt2.times[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn single_pipe_pure_delay() {
        let tree = chain(&[0.1]);
        let st = state(&tree, vec![0.05]); // T = 2 s
        let dt = 0.1;
        let mut net = NetworkTransport::new(&tree, &st, dt, 10.0).unwrap();
        let steps = (5.0 / dt) as usize;
        for _ in 0..steps {
            net.step(&[(0, 0.3)]).unwrap();
            let t = net.time();
            let out = net.saturation(1);
            if t < 2.0 - 1e-9 {
                assert_eq!(out, 0.0, "t = {t}");
            } else {
                assert!((out - 0.3).abs() < 1e-12, "t = {t}, out = {out}");
            }
        }
    }

    #[test]
    fn merge_mixes_by_flux_weight() {
        // Hepatic-style merge: two leaves feed junction 1, which drains to
        // the root junction 0.
        let tree = VascularTree::new(
            vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.05, 0.0], [0.2, -0.05, 0.0]],
            vec![
                Segment { tail: 0, head: 1, diameter: 2e-3, length: 0.1 },
                Segment { tail: 1, head: 2, diameter: 1e-3, length: 0.12 },
                Segment { tail: 1, head: 3, diameter: 1e-3, length: 0.12 },
            ],
            0,
        )
        .unwrap();
        // Equal child fluxes toward the root.
        let st = state(&tree, vec![-0.05, -0.06, -0.06]);
        let dt = 0.05;
        let mut net = NetworkTransport::new(&tree, &st, dt, 30.0).unwrap();
        assert_eq!(net.boundary_junctions(), &[2, 3]);
        for _ in 0..((10.0 / dt) as usize) {
            net.step(&[(2, 0.2), (3, 0.6)]).unwrap();
        }
        // After both delays have elapsed the junction holds the equal-weight mean.
        assert!((net.saturation(1) - 0.4).abs() < 1e-12, "mixed {}", net.saturation(1));
    }

    #[test]
    fn narrow_pulse_travels_the_chain() {
        let lengths = [0.1, 0.2, 0.05];
        let tree = chain(&lengths);
        let st = state(&tree, vec![0.05, 0.1, 0.025]); // T = 2, 2, 2
        let dt = 0.25; // divides every T_e
        let total_t = 6.0;
        let mut net = NetworkTransport::new(&tree, &st, dt, 20.0).unwrap();
        let mut peak_at = None;
        let steps = (12.0 / dt) as usize;
        for s in 0..steps {
            // One-step unit pulse at the inlet.
            let inlet = if s == 0 { 1.0 } else { 0.0 };
            net.step(&[(0, inlet)]).unwrap();
            let out = net.saturation(3);
            if out > 0.5 {
                peak_at = Some((net.time(), out));
            }
        }
        let (t, amp) = peak_at.expect("pulse arrived");
        // The inlet pulse sits at t = dt; it arrives delayed by sum T_e.
        assert!((t - (total_t + dt)).abs() < 1.5 * dt, "arrival {t}");
        assert!((amp - 1.0).abs() < 1e-12, "amplitude {amp}");
    }

    #[test]
    fn sub_step_delay_is_resolved_in_flow_order() {
        // T = 0.4 s per segment, dt = 1.0 s: delays shorter than a step.
        let tree = chain(&[0.02, 0.02]);
        let st = state(&tree, vec![0.05, 0.05]);
        let mut net = NetworkTransport::new(&tree, &st, 1.0, 10.0).unwrap();
        net.step(&[(0, 1.0)]).unwrap();
        // After one step the far junction already sees interpolated tracer.
        assert!(net.saturation(2) > 0.0);
        for _ in 0..5 {
            net.step(&[(0, 1.0)]).unwrap();
        }
        assert!((net.saturation(2) - 1.0).abs() < 1e-9);
    }
}
