use std::collections::HashSet;

use crate::error::Result;
use crate::graph::CityGraph;
use crate::policy::auction::solve_assignment;
use crate::sim::{run_episode, Control, Policy, PolicyTrace, Request, RequestId, ScriptedStream, SystemState};

/// Full-information baseline: every step, assign all taxis to unserved requests (including
/// those that have not entered yet) by minimum total time-to-pickup, then route accordingly.
///
/// The cost of agent `a` for request `r` at time `t` is
/// `max(τ_a + hops(position_a, ρ_r), t_r − t)`, where `position_a` is the drop-off of a busy
/// agent. Taxis may wait at a pickup node for a request that has not entered yet.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    future: Vec<Request>,
}

impl OraclePolicy {
    pub fn new(mut future: Vec<Request>) -> Self {
        future.sort_by_key(|r| (r.entry_time, r.id));
        Self { future }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>> {
        let now = state.time;
        let outstanding: HashSet<RequestId> = state.outstanding.iter().map(|r| r.id).collect();
        let unserved: Vec<&Request> = state
            .outstanding
            .iter()
            .chain(
                self.future
                    .iter()
                    .filter(|r| r.entry_time > now && r.entry_time <= state.horizon),
            )
            .collect();

        let m = state.agent_count();
        let cost: Vec<Vec<i64>> = (0..m)
            .map(|a| {
                let from = state.trip_dest[a].unwrap_or(state.agent_locations[a]);
                let ready = i64::from(state.trip_remaining[a]);
                unserved
                    .iter()
                    .map(|r| {
                        let travel = g
                            .hops(from, r.pickup)
                            .map_or(i64::from(4 * state.horizon + 1), i64::from);
                        (ready + travel).max(i64::from(r.entry_time) - i64::from(now))
                    })
                    .collect()
            })
            .collect();
        let assignment = solve_assignment(&cost)?;

        Ok((0..m)
            .map(|a| {
                let loc = state.agent_locations[a];
                if let Some(dest) = state.trip_dest[a] {
                    return Control::ForcedHop(g.next_hop(loc, dest));
                }
                match assignment.row_to_col[a].map(|k| unserved[k]) {
                    Some(r) if r.pickup == loc => {
                        if outstanding.contains(&r.id) {
                            Control::Pickup
                        } else {
                            Control::Stay
                        }
                    }
                    Some(r) if g.hops(loc, r.pickup).is_some() => Control::MoveTo(g.next_hop(loc, r.pickup)),
                    _ => Control::Stay,
                }
            })
            .collect())
    }
}

/// Runs the oracle over a full episode given every request of the horizon in advance.
pub fn oracle_decide_episode(
    initial: &SystemState,
    g: &CityGraph,
    full_future: &[Request],
    seed: u64,
) -> Result<PolicyTrace> {
    let mut policy = OraclePolicy::new(full_future.to_vec());
    let mut stream = ScriptedStream::new(full_future);
    run_episode(initial, &mut policy, &mut stream, g, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeId, SectorId};

    fn line(n: u32) -> CityGraph {
        let mut edges = Vec::new();
        for i in 0..n - 1 {
            edges.push((NodeId(i), NodeId(i + 1)));
            edges.push((NodeId(i + 1), NodeId(i)));
        }
        CityGraph::new(1, vec![(SectorId(0), true); n as usize], edges).unwrap()
    }

    #[test]
    fn single_pair_routes_directly() {
        let g = line(5);
        let initial = SystemState::new(10, vec![NodeId(0)]);
        let reqs = [Request::new(0, NodeId(3), NodeId(4), 1)];
        let trace = oracle_decide_episode(&initial, &g, &reqs, 0).unwrap();
        // Three moves then pickup at step 4: wait 4.
        assert_eq!(trace.served.len(), 1);
        assert_eq!(trace.served[0].step, 4);
        assert_eq!(trace.total_cost, 4);
    }

    #[test]
    fn prepositions_for_future_request() {
        let g = line(5);
        let initial = SystemState::new(12, vec![NodeId(0)]);
        let reqs = [Request::new(0, NodeId(3), NodeId(4), 6)];
        let trace = oracle_decide_episode(&initial, &g, &reqs, 0).unwrap();
        assert_eq!(trace.served[0].step, 6);
        assert_eq!(trace.total_cost, 1);
    }
}
