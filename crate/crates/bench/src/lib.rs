//! Shared fixtures for the benchmarks in `benches/`.

use fleet_core::assign::DemandModels;
use fleet_core::harness::{generate_scenario, ExperimentConfig, World};
use fleet_core::sim::{run_episode, ScriptedStream};
use fleet_core::policy::GreedyPolicy;
use fleet_core::{CityGraph, Request, SystemState};

/// The default desk world with the state reached after `steps` greedy minutes at 19:00.
pub struct DeskFixture {
    pub cfg: ExperimentConfig,
    pub world: World,
    pub models: DemandModels,
    pub state: SystemState,
    pub truth: Vec<Request>,
}

impl DeskFixture {
    pub fn new(steps: u32) -> Self {
        let cfg = ExperimentConfig { seed: 1, ..ExperimentConfig::default() };
        let world = World::build(&cfg, cfg.map.build(None).expect("map")).expect("world");
        let scenario = generate_scenario(&cfg, &world, 19, 0).expect("scenario");
        let rates = world.estimated_rates(&cfg, &cfg.demand, 19, 0).expect("rates");
        let models = world.demand_models(&rates, 19, cfg.horizon).expect("models");
        let mut initial = scenario.initial.clone();
        initial.horizon = steps.max(1) + 1;
        let trace = run_episode(&initial, &mut GreedyPolicy, &mut ScriptedStream::new(&scenario.truth), &world.graph, 0)
            .expect("warm-up");
        let last = trace.steps.last().expect("at least one step");
        let mut state = SystemState::new(cfg.horizon, last.agent_locations.clone());
        state.time = last.time;
        state.outstanding = trace.unserved.clone();
        Self { cfg, world, models, state, truth: scenario.truth }
    }

    pub fn graph(&self) -> &CityGraph {
        &self.world.graph
    }
}
