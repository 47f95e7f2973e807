use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::CityGraph;
use crate::sim::{Control, Policy, RequestId, SystemState};

/// Cheap heuristics, usable directly or as the continuation inside rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BasePolicy {
    #[default]
    Greedy,
    InstantAssign,
}

impl BasePolicy {
    pub fn controls(self, state: &SystemState, g: &CityGraph) -> Vec<Control> {
        let mut out = Vec::with_capacity(state.agent_count());
        self.controls_into(state, g, &mut out);
        out
    }

    pub fn controls_into(self, state: &SystemState, g: &CityGraph, out: &mut Vec<Control>) {
        match self {
            BasePolicy::Greedy => greedy_into(state, g, out),
            BasePolicy::InstantAssign => instant_assign_into(state, g, out),
        }
    }
}

#[inline]
fn forced(state: &SystemState, agent: usize, g: &CityGraph) -> Control {
    let dest = state.trip_dest[agent].expect("busy agent has a destination");
    Control::ForcedHop(g.next_hop(state.agent_locations[agent], dest))
}

#[inline]
fn head_for(state: &SystemState, agent: usize, target: crate::graph::NodeId, g: &CityGraph) -> Control {
    let loc = state.agent_locations[agent];
    if loc == target {
        Control::Pickup
    } else {
        Control::MoveTo(g.next_hop(loc, target))
    }
}

fn greedy_into(state: &SystemState, g: &CityGraph, out: &mut Vec<Control>) {
    out.clear();
    for agent in 0..state.agent_count() {
        if !state.is_available(agent) {
            out.push(forced(state, agent, g));
            continue;
        }
        let loc = state.agent_locations[agent];
        let target = state
            .outstanding
            .iter()
            .filter_map(|r| g.hops(loc, r.pickup).map(|d| ((d, r.priority()), r.pickup)))
            .min_by_key(|(key, _)| *key)
            .map(|(_, p)| p);
        out.push(match target {
            Some(p) => head_for(state, agent, p, g),
            None => Control::Stay,
        });
    }
}

/// Iterative global-minimum matching. `dist[a][k]` is the hop count from agent `a` to request
/// `k` (`None` when the agent is busy or the request unreachable); `age[k]` the request's
/// `(entry_time, id)`. Pairs are committed by ascending (distance, agent, entry time, id).
pub fn instant_matching(dist: &[Vec<Option<u32>>], age: &[(u32, RequestId)]) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (agent, row) in dist.iter().enumerate() {
        for (k, d) in row.iter().enumerate() {
            if let Some(d) = d {
                pairs.push((*d, agent, age[k], k));
            }
        }
    }
    pairs.sort_unstable();
    let mut target = vec![None; dist.len()];
    let mut taken = vec![false; age.len()];
    for (_, agent, _, k) in pairs {
        if target[agent].is_none() && !taken[k] {
            target[agent] = Some(k);
            taken[k] = true;
        }
    }
    target
}

fn instant_assign_into(state: &SystemState, g: &CityGraph, out: &mut Vec<Control>) {
    out.clear();
    let m = state.agent_count();
    let dist: Vec<Vec<Option<u32>>> = (0..m)
        .map(|agent| {
            let loc = state.agent_locations[agent];
            state
                .outstanding
                .iter()
                .map(|r| if state.is_available(agent) { g.hops(loc, r.pickup) } else { None })
                .collect()
        })
        .collect();
    let age: Vec<_> = state.outstanding.iter().map(|r| (r.entry_time, r.id)).collect();
    let target = instant_matching(&dist, &age);
    for (agent, t) in target.iter().enumerate() {
        out.push(if !state.is_available(agent) {
            forced(state, agent, g)
        } else {
            match *t {
                Some(k) => head_for(state, agent, state.outstanding[k].pickup, g),
                None => Control::Stay,
            }
        });
    }
}

#[derive(Debug, Clone, Default)]
pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>> {
        Ok(BasePolicy::Greedy.controls(state, g))
    }
}

#[derive(Debug, Clone, Default)]
pub struct InstantAssignPolicy;

impl Policy for InstantAssignPolicy {
    fn name(&self) -> String {
        "instant-assign".into()
    }

    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>> {
        Ok(BasePolicy::InstantAssign.controls(state, g))
    }
}
