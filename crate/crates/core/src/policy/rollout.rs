//! One-agent-at-a-time rollout with limited certainty-equivalence sampling.
//!
//! At step `t` agents are processed one by one. For agent `ℓ` every legal control `u` is
//! scored by the Monte-Carlo mean, over `scenarios` sampled demand realisations, of
//!
//! ```text
//! g_t + Σ_{t' = t+1}^{T-1} g_t' + |r̄_T|,    T = min(t + 1 + H, N)
//! ```
//!
//! where the first transition applies `u` for agent `ℓ`, the already-fixed controls of the
//! agents processed before it and the base-policy controls of the agents after it; every
//! later step follows the base policy for all agents. Scenario `s` of agent `ℓ` at step `t`
//! is drawn from its own seeded stream, so all candidates of an agent are compared on the same
//! demand realisations.

use serde::{Deserialize, Serialize};

use crate::assign::{DemandModels, DestinationMode, SamplingScope};
use crate::error::{Error, Result};
use crate::graph::CityGraph;
use crate::policy::BasePolicy;
use crate::rng::{derive_seed, rng_from, stream};
use crate::sim::{legal_controls, stage_cost, step_unchecked, Control, Policy, Request, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AgentOrder {
    #[default]
    Ascending,
    /// Fresh seeded permutation every step.
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub base_policy: BasePolicy,
    /// Lookahead `H`.
    pub lookahead: u32,
    pub scenarios: u32,
    pub sampling_scope: SamplingScope,
    pub destination: DestinationMode,
    pub agent_order: AgentOrder,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            base_policy: BasePolicy::Greedy,
            lookahead: 10,
            scenarios: 50,
            sampling_scope: SamplingScope::Local,
            destination: DestinationMode::Renormalize,
            agent_order: AgentOrder::Ascending,
            seed: 0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead == 0 {
            return Err(Error::Config("rollout lookahead must be at least 1".into()));
        }
        if self.scenarios == 0 {
            return Err(Error::Config("rollout needs at least one scenario".into()));
        }
        Ok(())
    }
}

/// Sampled request ids live far above any real stream.
const SAMPLED_ID_BASE: u64 = 1 << 62;

#[derive(Debug, Clone)]
pub struct RolloutPolicy {
    cfg: RolloutConfig,
    models: DemandModels,
    label: String,
    episode_seed: u64,
    /// Number of sampled requests drawn so far; exposed for instrumentation.
    pub sampled_requests: u64,
    scratch: Vec<Vec<Vec<Request>>>,
    known_future: Option<Vec<Request>>,
}

impl RolloutPolicy {
    pub fn new(cfg: RolloutConfig, models: DemandModels) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            label: "rollout".into(),
            episode_seed: cfg.seed,
            cfg,
            models,
            sampled_requests: 0,
            scratch: Vec::new(),
            known_future: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Replaces sampling with a known request list: every scenario holds exactly the requests
    /// of `future` entering inside the lookahead window.
    pub fn with_known_future(mut self, future: Vec<Request>) -> Self {
        self.known_future = Some(future);
        self
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.cfg
    }

    fn agent_order(&self, state: &SystemState) -> Vec<usize> {
        let mut order: Vec<usize> = (0..state.agent_count()).collect();
        if self.cfg.agent_order == AgentOrder::SeededRandom {
            use rand::seq::SliceRandom;
            let mut rng = rng_from(self.episode_seed, &[stream::ORDER, u64::from(state.time)]);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Samples the demand scenarios of `agent` at the current step: one bucket per future
    /// step `t + 1 ..= T`.
    pub fn sample_scenarios(
        &mut self,
        state: &SystemState,
        agent: usize,
        g: &CityGraph,
        end: u32,
    ) -> Result<Vec<Vec<Vec<Request>>>> {
        let mut out = Vec::new();
        self.fill_scenarios(state, agent, g, end, &mut out)?;
        Ok(out)
    }

    /// [`Self::sample_scenarios`] into reused buffers.
    fn fill_scenarios(
        &mut self,
        state: &SystemState,
        agent: usize,
        g: &CityGraph,
        end: u32,
        out: &mut Vec<Vec<Vec<Request>>>,
    ) -> Result<()> {
        let center = g.sector_of(state.agent_locations[agent])?;
        let steps = (end - state.time) as usize;
        out.resize_with(self.cfg.scenarios as usize, Vec::new);
        for (s, buckets) in out.iter_mut().enumerate() {
            let mut rng = rng_from(
                self.episode_seed,
                &[stream::ROLLOUT, u64::from(state.time), agent as u64, s as u64],
            );
            buckets.resize_with(steps, Vec::new);
            buckets.truncate(steps);
            buckets.iter_mut().for_each(Vec::clear);
            if let Some(future) = &self.known_future {
                for r in future.iter().filter(|r| r.entry_time > state.time && r.entry_time <= end) {
                    buckets[(r.entry_time - state.time - 1) as usize].push(*r);
                }
                continue;
            }
            self.sampled_requests += self.models.sample_into(
                center,
                state.time + 1,
                self.cfg.sampling_scope,
                self.cfg.destination,
                SAMPLED_ID_BASE,
                &mut rng,
                buckets,
            )?;
        }
        Ok(())
    }

    /// Scores one joint first-step control on sampled futures; returns the summed cost.
    pub fn score(
        &self,
        state: &SystemState,
        joint: &[Control],
        scenarios: &[Vec<Vec<Request>>],
        g: &CityGraph,
        end: u32,
    ) -> u64 {
        let mut controls = Vec::with_capacity(joint.len());
        let mut sim = state.clone();
        scenarios
            .iter()
            .map(|buckets| {
                sim.clone_from(state);
                let mut cost = stage_cost(&sim);
                step_unchecked(&mut sim, joint, &buckets[0], g, |_| {});
                while sim.time < end {
                    cost += stage_cost(&sim);
                    self.cfg.base_policy.controls_into(&sim, g, &mut controls);
                    let k = (sim.time - state.time) as usize;
                    step_unchecked(&mut sim, &controls, &buckets[k], g, |_| {});
                }
                cost + stage_cost(&sim)
            })
            .sum()
    }
}

impl Policy for RolloutPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn begin_episode(&mut self, seed: u64) {
        self.episode_seed = derive_seed(self.cfg.seed, &[seed]);
    }

    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>> {
        let mut joint = self.cfg.base_policy.controls(state, g);
        if state.time >= state.horizon {
            return Ok(joint);
        }
        let end = (state.time + 1 + self.cfg.lookahead).min(state.horizon);
        let mut scenarios = std::mem::take(&mut self.scratch);
        for agent in self.agent_order(state) {
            let candidates = legal_controls(state, agent, g);
            if candidates.len() == 1 {
                joint[agent] = candidates[0];
                continue;
            }
            self.fill_scenarios(state, agent, g, end, &mut scenarios)?;
            let mut best: Option<(u64, Control)> = None;
            for &u in &candidates {
                joint[agent] = u;
                let total = self.score(state, &joint, &scenarios, g, end);
                if best.is_none_or(|(b, _)| total < b) {
                    best = Some((total, u));
                }
            }
            joint[agent] = best.map(|(_, u)| u).unwrap_or(joint[agent]);
        }
        self.scratch = scenarios;
        Ok(joint)
    }
}
