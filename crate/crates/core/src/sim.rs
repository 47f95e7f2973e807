//! Discrete-time episode engine.
//!
//! Step `t` proceeds as: requests entering at `t` are already in `outstanding`; the stage
//! cost `|outstanding|` is charged; the policy picks one control per agent; the transition
//! applies pickups (agent index order), moves, then appends the arrivals for `t + 1`.
//! At the final step `N` only the terminal cost `|outstanding|` is charged.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CityGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub pickup: NodeId,
    pub dropoff: NodeId,
    pub entry_time: u32,
    pub picked_up: bool,
}

impl Request {
    pub fn new(id: u64, pickup: NodeId, dropoff: NodeId, entry_time: u32) -> Self {
        Self {
            id: RequestId(id),
            pickup,
            dropoff,
            entry_time,
            picked_up: false,
        }
    }

    /// Matching priority at a node: oldest first, then lowest pickup id, then request id.
    #[inline]
    pub fn priority(&self) -> (u32, NodeId, RequestId) {
        (self.entry_time, self.pickup, self.id)
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct SystemState {
    pub time: u32,
    /// Episode length `N`; planners never look beyond it.
    pub horizon: u32,
    pub agent_locations: Vec<NodeId>,
    pub trip_remaining: Vec<u32>,
    /// Drop-off node of the trip in progress, `None` when available.
    pub trip_dest: Vec<Option<NodeId>>,
    /// Requests with `picked_up == false` and `entry_time <= time`, in arrival order.
    pub outstanding: Vec<Request>,
}

impl Clone for SystemState {
    fn clone(&self) -> Self {
        Self {
            time: self.time,
            horizon: self.horizon,
            agent_locations: self.agent_locations.clone(),
            trip_remaining: self.trip_remaining.clone(),
            trip_dest: self.trip_dest.clone(),
            outstanding: self.outstanding.clone(),
        }
    }

    // Reuses the buffers; planners clone the same state thousands of times per step.
    fn clone_from(&mut self, source: &Self) {
        self.time = source.time;
        self.horizon = source.horizon;
        self.agent_locations.clone_from(&source.agent_locations);
        self.trip_remaining.clone_from(&source.trip_remaining);
        self.trip_dest.clone_from(&source.trip_dest);
        self.outstanding.clone_from(&source.outstanding);
    }
}

impl SystemState {
    pub fn new(horizon: u32, agent_locations: Vec<NodeId>) -> Self {
        let m = agent_locations.len();
        Self {
            time: 1,
            horizon,
            agent_locations,
            trip_remaining: vec![0; m],
            trip_dest: vec![None; m],
            outstanding: Vec::new(),
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agent_locations.len()
    }

    #[inline]
    pub fn is_available(&self, agent: usize) -> bool {
        self.trip_remaining[agent] == 0
    }

    pub fn has_request_at(&self, node: NodeId) -> bool {
        self.outstanding.iter().any(|r| r.pickup == node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Stay,
    MoveTo(NodeId),
    Pickup,
    /// Next hop toward the drop-off of the trip in progress.
    ForcedHop(NodeId),
}

/// Legal controls of `agent`, in the fixed enumeration order Stay, MoveTo (ascending), Pickup.
pub fn legal_controls(state: &SystemState, agent: usize, g: &CityGraph) -> Vec<Control> {
    let loc = state.agent_locations[agent];
    if !state.is_available(agent) {
        let dest = state.trip_dest[agent].expect("busy agent has a destination");
        return vec![Control::ForcedHop(g.next_hop(loc, dest))];
    }
    let neighbors = g.neighbors(loc).expect("agent location is a graph node");
    let mut out = Vec::with_capacity(neighbors.len() + 2);
    out.push(Control::Stay);
    out.extend(neighbors.iter().map(|&j| Control::MoveTo(j)));
    if state.has_request_at(loc) {
        out.push(Control::Pickup);
    }
    out
}

pub fn is_legal(state: &SystemState, agent: usize, control: Control, g: &CityGraph) -> bool {
    let loc = state.agent_locations[agent];
    match (state.is_available(agent), control) {
        (true, Control::Stay) => true,
        (true, Control::MoveTo(j)) => g.neighbors(loc).is_ok_and(|n| n.binary_search(&j).is_ok()),
        (true, Control::Pickup) => state.has_request_at(loc),
        (false, Control::ForcedHop(z)) => state.trip_dest[agent].is_some_and(|d| g.next_hop(loc, d) == z),
        _ => false,
    }
}

/// A pickup performed during a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Served {
    pub agent: usize,
    pub request: Request,
    /// Step at which the pickup control was issued.
    pub step: u32,
}

impl Served {
    /// Number of stage costs the request contributed to.
    pub fn wait(&self) -> u32 {
        self.step + 1 - self.request.entry_time
    }
}

/// Applies `controls` in place and returns the pickups made. Arrivals must carry
/// `entry_time == state.time + 1`.
pub fn apply_transition(
    state: &mut SystemState,
    controls: &[Control],
    arrivals: &[Request],
    g: &CityGraph,
) -> Result<Vec<Served>> {
    if controls.len() != state.agent_count() {
        return Err(Error::DimensionMismatch {
            expected: state.agent_count(),
            actual: controls.len(),
        });
    }
    for (agent, &control) in controls.iter().enumerate() {
        if !is_legal(state, agent, control, g) {
            return Err(Error::IllegalControl { agent, control });
        }
    }
    let next_time = state.time + 1;
    if let Some(bad) = arrivals.iter().find(|r| r.entry_time != next_time) {
        return Err(Error::domain(format!(
            "arrival {:?} has entry time {}, expected {next_time}",
            bad.id, bad.entry_time
        )));
    }
    let mut served = Vec::new();
    step_unchecked(state, controls, arrivals, g, |s| served.push(s));
    Ok(served)
}

/// Transition without legality checks; planners use this on controls they generated themselves.
pub(crate) fn step_unchecked(
    state: &mut SystemState,
    controls: &[Control],
    arrivals: &[Request],
    g: &CityGraph,
    mut on_served: impl FnMut(Served),
) {
    for (agent, &control) in controls.iter().enumerate() {
        let loc = state.agent_locations[agent];
        match control {
            Control::Pickup => {
                let best = state
                    .outstanding
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.pickup == loc)
                    .min_by_key(|(_, r)| r.priority())
                    .map(|(k, _)| k);
                // Lost contention to a lower-indexed agent: degrade to Stay.
                if let Some(k) = best {
                    let mut request = state.outstanding.remove(k);
                    request.picked_up = true;
                    let trip = g.hops(loc, request.dropoff).unwrap_or(0);
                    state.trip_remaining[agent] = trip;
                    state.trip_dest[agent] = (trip > 0).then_some(request.dropoff);
                    on_served(Served {
                        agent,
                        request,
                        step: state.time,
                    });
                }
            }
            Control::MoveTo(j) => state.agent_locations[agent] = j,
            Control::ForcedHop(z) => {
                state.agent_locations[agent] = z;
                state.trip_remaining[agent] -= 1;
                if state.trip_remaining[agent] == 0 {
                    state.trip_dest[agent] = None;
                }
            }
            Control::Stay => {}
        }
    }
    state.outstanding.extend_from_slice(arrivals);
    state.time += 1;
}

/// Pure form of the transition.
pub fn transition(
    state: &SystemState,
    controls: &[Control],
    arrivals: &[Request],
    g: &CityGraph,
) -> Result<SystemState> {
    let mut next = state.clone();
    apply_transition(&mut next, controls, arrivals, g)?;
    Ok(next)
}

pub fn stage_cost(state: &SystemState) -> u64 {
    state.outstanding.len() as u64
}

/// A planner. Implementations must return one legal control per agent.
pub trait Policy {
    fn name(&self) -> String;

    /// Called once before the first decision of an episode.
    fn begin_episode(&mut self, _seed: u64) {}

    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>>;
}

/// Source of requests entering the system at a given step.
pub trait DemandStream {
    fn arrivals(&mut self, time: u32) -> Vec<Request>;
}

/// Replays a fixed request list.
#[derive(Debug, Clone)]
pub struct ScriptedStream {
    by_time: Vec<Vec<Request>>,
}

impl ScriptedStream {
    pub fn new(requests: &[Request]) -> Self {
        let max_t = requests.iter().map(|r| r.entry_time).max().unwrap_or(0) as usize;
        let mut by_time = vec![Vec::new(); max_t + 1];
        for r in requests {
            by_time[r.entry_time as usize].push(*r);
        }
        Self { by_time }
    }
}

impl DemandStream for ScriptedStream {
    fn arrivals(&mut self, time: u32) -> Vec<Request> {
        self.by_time.get(time as usize).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: u32,
    pub agent_locations: Vec<NodeId>,
    pub trip_remaining: Vec<u32>,
    pub stage_cost: u64,
    pub arrivals: usize,
    pub controls: Vec<Control>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub policy: String,
    pub seed: u64,
    pub horizon: u32,
    pub steps: Vec<StepRecord>,
    pub terminal_cost: u64,
    pub total_cost: u64,
    pub generated: usize,
    pub served: Vec<Served>,
    pub unserved: Vec<Request>,
    /// Wall-clock planning time per decision, nanoseconds. Not part of the deterministic output.
    #[serde(skip)]
    pub plan_nanos: Vec<u64>,
}

impl PolicyTrace {
    pub fn served_count(&self) -> usize {
        self.served.len()
    }

    pub fn outstanding_count(&self) -> usize {
        self.unserved.len()
    }

    /// Total wait reconstructed from per-request records; equals `total_cost`.
    pub fn total_wait(&self) -> u64 {
        let n = self.horizon;
        let served: u64 = self.served.iter().map(|s| u64::from(s.wait())).sum();
        let unserved: u64 = self
            .unserved
            .iter()
            .map(|r| u64::from(n + 1 - r.entry_time))
            .sum();
        served + unserved
    }

    pub fn mean_plan_seconds(&self) -> f64 {
        if self.plan_nanos.is_empty() {
            0.0
        } else {
            self.plan_nanos.iter().sum::<u64>() as f64 / self.plan_nanos.len() as f64 * 1e-9
        }
    }

    /// Trace file: one comma-separated row per step, then `#`-prefixed summary lines.
    pub fn to_csv(&self) -> String {
        let m = self.steps.first().map_or(0, |s| s.agent_locations.len());
        let mut out = String::from("time,stage_cost");
        for k in 0..m {
            let _ = write!(out, ",loc_{k}");
        }
        for k in 0..m {
            let _ = write!(out, ",tau_{k}");
        }
        out.push('\n');
        for s in &self.steps {
            let _ = write!(out, "{},{}", s.time, s.stage_cost);
            for l in &s.agent_locations {
                let _ = write!(out, ",{l}");
            }
            for t in &s.trip_remaining {
                let _ = write!(out, ",{t}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# policy={} seed={}", self.policy, self.seed);
        let _ = writeln!(
            out,
            "# total_cost={} served={} outstanding={} generated={} terminal_cost={}",
            self.total_cost,
            self.served_count(),
            self.outstanding_count(),
            self.generated,
            self.terminal_cost
        );
        out
    }
}

/// Runs `policy` from `initial` until `initial.horizon`. Arrivals for the initial step are
/// drawn from `demand` before the first decision.
pub fn run_episode(
    initial: &SystemState,
    policy: &mut dyn Policy,
    demand: &mut dyn DemandStream,
    g: &CityGraph,
    seed: u64,
) -> Result<PolicyTrace> {
    let horizon = initial.horizon;
    if horizon < 1 || initial.time > horizon {
        return Err(Error::domain(format!(
            "episode needs horizon >= start time >= 1 (start {}, horizon {horizon})",
            initial.time
        )));
    }
    policy.begin_episode(seed);
    let mut state = initial.clone();
    let first = demand.arrivals(state.time);
    let mut generated = state.outstanding.len() + first.len();
    state.outstanding.extend(first);

    let mut steps = Vec::with_capacity(horizon as usize);
    let mut plan_nanos = Vec::with_capacity(horizon as usize);
    let mut served = Vec::new();
    let mut running = 0u64;
    let mut arrivals_now = generated;
    while state.time < horizon {
        let cost = stage_cost(&state);
        running += cost;
        let clock = Instant::now();
        let controls = policy.decide(&state, g)?;
        plan_nanos.push(clock.elapsed().as_nanos() as u64);
        steps.push(StepRecord {
            time: state.time,
            agent_locations: state.agent_locations.clone(),
            trip_remaining: state.trip_remaining.clone(),
            stage_cost: cost,
            arrivals: arrivals_now,
            controls: controls.clone(),
        });
        let arrivals = demand.arrivals(state.time + 1);
        arrivals_now = arrivals.len();
        generated += arrivals.len();
        let step_served = apply_transition(&mut state, &controls, &arrivals, g).map_err(|e| {
            Error::domain(format!("policy {} at step {}: {e}", policy.name(), state.time))
        })?;
        served.extend(step_served);
    }
    let terminal = stage_cost(&state);
    Ok(PolicyTrace {
        policy: policy.name(),
        seed,
        horizon,
        steps,
        terminal_cost: terminal,
        total_cost: running + terminal,
        generated,
        served,
        unserved: state.outstanding,
        plan_nanos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SectorId;

    fn line4() -> CityGraph {
        let nodes = vec![(SectorId(0), true); 4];
        let mut edges = Vec::new();
        for i in 0..3 {
            edges.push((NodeId(i), NodeId(i + 1)));
            edges.push((NodeId(i + 1), NodeId(i)));
        }
        CityGraph::new(1, nodes, edges).unwrap()
    }

    struct Fixed(Vec<Vec<Control>>);

    impl Policy for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn decide(&mut self, state: &SystemState, _g: &CityGraph) -> Result<Vec<Control>> {
            Ok(self.0[(state.time - 1) as usize].clone())
        }
    }

    #[test]
    fn busy_agent_has_one_control() {
        let g = line4();
        let mut s = SystemState::new(10, vec![NodeId(0)]);
        s.trip_remaining[0] = 3;
        s.trip_dest[0] = Some(NodeId(3));
        assert_eq!(legal_controls(&s, 0, &g), vec![Control::ForcedHop(NodeId(1))]);
    }

    #[test]
    fn available_agent_controls_with_and_without_request() {
        let g = line4();
        let mut s = SystemState::new(10, vec![NodeId(1)]);
        assert_eq!(
            legal_controls(&s, 0, &g),
            vec![Control::Stay, Control::MoveTo(NodeId(0)), Control::MoveTo(NodeId(2))]
        );
        s.outstanding.push(Request::new(0, NodeId(1), NodeId(3), 1));
        let c = legal_controls(&s, 0, &g);
        assert_eq!(c.len(), 4);
        assert_eq!(c[3], Control::Pickup);
    }

    #[test]
    fn stay_only_advances_time() {
        let g = line4();
        let s = SystemState::new(10, vec![NodeId(2)]);
        let next = transition(&s, &[Control::Stay], &[], &g).unwrap();
        assert_eq!(next.time, 2);
        assert_eq!(next.agent_locations, s.agent_locations);
        assert_eq!(next.outstanding, s.outstanding);
    }

    #[test]
    fn pickup_sets_trip_time() {
        let g = line4();
        let mut s = SystemState::new(10, vec![NodeId(0)]);
        s.outstanding.push(Request::new(0, NodeId(0), NodeId(3), 1));
        let next = transition(&s, &[Control::Pickup], &[], &g).unwrap();
        assert_eq!(next.trip_remaining, vec![3]);
        assert!(next.outstanding.is_empty());
        assert_eq!(legal_controls(&next, 0, &g), vec![Control::ForcedHop(NodeId(1))]);
    }

    #[test]
    fn pickup_contention_lower_index_wins() {
        let g = line4();
        let mut s = SystemState::new(10, vec![NodeId(1), NodeId(1)]);
        s.outstanding.push(Request::new(7, NodeId(1), NodeId(3), 1));
        let mut after = s.clone();
        let served = apply_transition(&mut after, &[Control::Pickup, Control::Pickup], &[], &g).unwrap();
        assert_eq!(served.len(), 1);
        assert_eq!(served[0].agent, 0);
        assert_eq!(after.trip_remaining, vec![2, 0]);
        assert_eq!(after.agent_locations, vec![NodeId(1), NodeId(1)]);
        assert_eq!(after.trip_dest[1], None);
    }

    #[test]
    fn oldest_request_matched_first() {
        let g = line4();
        let mut s = SystemState::new(10, vec![NodeId(0)]);
        s.time = 3;
        s.outstanding.push(Request::new(5, NodeId(0), NodeId(1), 3));
        s.outstanding.push(Request::new(9, NodeId(0), NodeId(2), 2));
        let mut after = s.clone();
        let served = apply_transition(&mut after, &[Control::Pickup], &[], &g).unwrap();
        assert_eq!(served[0].request.id, RequestId(9));
    }

    #[test]
    fn illegal_control_is_rejected() {
        let g = line4();
        let s = SystemState::new(10, vec![NodeId(0)]);
        let err = transition(&s, &[Control::MoveTo(NodeId(3))], &[], &g).unwrap_err();
        assert!(matches!(err, Error::IllegalControl { agent: 0, .. }));
        assert!(transition(&s, &[Control::Pickup], &[], &g).is_err());
    }

    #[test]
    fn stage_cost_counts_outstanding() {
        let mut s = SystemState::new(10, vec![NodeId(0)]);
        assert_eq!(stage_cost(&s), 0);
        for k in 0..3 {
            s.outstanding.push(Request::new(k, NodeId(1), NodeId(2), 1));
        }
        assert_eq!(stage_cost(&s), 3);
    }

    // Hand trace, 5 steps, agent at 0, request A (pickup 1, t=1), request B (pickup 3, t=2).
    // t1: g=1 (A), move->1. t2: g=2, pickup A (dropoff 2, tau 1). t3: g=1 (B), hop->2.
    // t4: g=1, move->3. t5 (terminal): g=1 since B is picked at step 5 only if a control were issued.
    // Total 1+2+1+1+1 = 6; waits: A = 2, B = 5+1-2 = 4.
    #[test]
    fn stage_costs_sum_to_total_wait() {
        let g = line4();
        let initial = SystemState::new(5, vec![NodeId(0)]);
        let reqs = vec![
            Request::new(0, NodeId(1), NodeId(2), 1),
            Request::new(1, NodeId(3), NodeId(0), 2),
        ];
        let mut policy = Fixed(vec![
            vec![Control::MoveTo(NodeId(1))],
            vec![Control::Pickup],
            vec![Control::ForcedHop(NodeId(2))],
            vec![Control::MoveTo(NodeId(3))],
        ]);
        let trace = run_episode(&initial, &mut policy, &mut ScriptedStream::new(&reqs), &g, 0).unwrap();
        let costs: Vec<u64> = trace.steps.iter().map(|s| s.stage_cost).collect();
        assert_eq!(costs, vec![1, 2, 1, 1]);
        assert_eq!(trace.terminal_cost, 1);
        assert_eq!(trace.total_cost, 6);
        assert_eq!(trace.total_wait(), 6);
        assert_eq!(trace.served[0].wait(), 2);
        assert_eq!(trace.generated, trace.served_count() + trace.outstanding_count());
    }

    #[test]
    fn empty_episode_costs_nothing() {
        let g = line4();
        let initial = SystemState::new(8, vec![NodeId(0)]);
        let mut policy = Fixed(vec![vec![Control::Stay]; 8]);
        let trace = run_episode(&initial, &mut policy, &mut ScriptedStream::new(&[]), &g, 0).unwrap();
        assert_eq!(trace.total_cost, 0);
        assert_eq!(trace.steps.len(), 7);
    }

    #[test]
    fn trace_csv_has_summary() {
        let g = line4();
        let initial = SystemState::new(3, vec![NodeId(0), NodeId(2)]);
        let mut policy = Fixed(vec![vec![Control::Stay, Control::Stay]; 3]);
        let trace = run_episode(&initial, &mut policy, &mut ScriptedStream::new(&[]), &g, 0).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("time,stage_cost,loc_0,loc_1,tau_0,tau_1\n1,0,0,2,0,0\n"));
        assert!(csv.contains("# total_cost=0 served=0 outstanding=0 generated=0"));
    }
}
