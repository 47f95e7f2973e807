use std::collections::VecDeque;

use fleet_core::assign::{destination_matrix, Categorical, DemandModels, DestinationMode, SamplingScope, TripRecord};
use fleet_core::events::{normalized_laplacian, sector_feature, spectral_cluster, EventRecord};
use fleet_core::harness::{generate_scenario, ExperimentConfig, World};
use fleet_core::policy::{GreedyPolicy, InstantAssignPolicy, OraclePolicy, RolloutConfig, RolloutPolicy};
use fleet_core::rng::rng_from;
use fleet_core::sim::{legal_controls, run_episode, Policy, ScriptedStream};
use fleet_core::{CityGraph, Control, NodeId, Result, SectorId, SystemState};
use proptest::prelude::*;
use rand::Rng;

fn random_graph(seed: u64, n: usize) -> CityGraph {
    let mut rng = rng_from(seed, &[]);
    let mut edges: Vec<(NodeId, NodeId)> = (0..n as u32).map(|i| (NodeId(i), NodeId((i + 1) % n as u32))).collect();
    for _ in 0..rng.random_range(0..2 * n) {
        let (a, b) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
        if a != b && !edges.contains(&(NodeId(a), NodeId(b))) {
            edges.push((NodeId(a), NodeId(b)));
        }
    }
    let sectors = 1 + n / 20;
    let nodes = (0..n).map(|i| (SectorId((i * sectors / n) as u32), true)).collect();
    CityGraph::new(sectors, nodes, edges).expect("random graph")
}

fn bfs(g: &CityGraph, src: NodeId) -> Vec<Option<u32>> {
    let mut dist = vec![None; g.node_count()];
    dist[src.index()] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u.index()].expect("visited");
        for &v in g.neighbors(u).expect("node") {
            if dist[v.index()].is_none() {
                dist[v.index()] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn desk(seed: u64, fleet: usize) -> (ExperimentConfig, World) {
    let cfg = ExperimentConfig { seed, fleet, horizon: 30, ..ExperimentConfig::default() };
    let g = cfg.map.build(None).expect("map");
    let world = World::build(&cfg, g).expect("world");
    (cfg, world)
}

fn models(cfg: &ExperimentConfig, world: &World, hour: u8) -> DemandModels {
    let rates = world.estimated_rates(cfg, &cfg.demand, hour, 0).expect("rates");
    world.demand_models(&rates, hour, cfg.horizon).expect("models")
}

/// Fails the episode if the wrapped planner emits a control outside `legal_controls`.
struct Checked<P>(P);

impl<P: Policy> Policy for Checked<P> {
    fn name(&self) -> String {
        self.0.name()
    }
    fn begin_episode(&mut self, seed: u64) {
        self.0.begin_episode(seed);
    }
    fn decide(&mut self, state: &SystemState, g: &CityGraph) -> Result<Vec<Control>> {
        let controls = self.0.decide(state, g)?;
        for (agent, c) in controls.iter().enumerate() {
            assert!(legal_controls(state, agent, g).contains(c), "{} emitted illegal {c:?}", self.0.name());
        }
        Ok(controls)
    }
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hop_counts_match_bfs(seed in any::<u64>(), n in 2usize..200) {
        let g = random_graph(seed, n);
        for src in (0..n as u32).step_by(1 + n / 25) {
            let oracle = bfs(&g, NodeId(src));
            for dst in 0..n as u32 {
                prop_assert_eq!(g.hops(NodeId(src), NodeId(dst)), oracle[dst as usize]);
            }
        }
    }

    #[test]
    fn next_hop_chain_has_hop_count_length(seed in any::<u64>(), n in 2usize..120) {
        let g = random_graph(seed, n);
        let mut rng = rng_from(seed, &[1]);
        for _ in 0..20 {
            let (src, dst) = (NodeId(rng.random_range(0..n as u32)), NodeId(rng.random_range(0..n as u32)));
            let hops = g.hops(src, dst).expect("ring makes the graph strongly connected");
            let mut at = src;
            for _ in 0..hops {
                let next = g.next_hop(at, dst);
                prop_assert!(g.neighbors(at).unwrap().contains(&next));
                at = next;
            }
            prop_assert_eq!(at, dst);
        }
    }

    #[test]
    fn graph_text_round_trips(seed in any::<u64>(), n in 2usize..80) {
        let text = random_graph(seed, n).to_text();
        prop_assert_eq!(CityGraph::from_text(&text).unwrap().to_text(), text);
    }

    #[test]
    fn episodes_conserve_requests_and_cost_equals_wait(seed in any::<u64>(), fleet in 1usize..8) {
        let (cfg, world) = desk(seed, fleet);
        let scenario = generate_scenario(&cfg, &world, 19, 0).unwrap();
        let mut policy = Checked(GreedyPolicy);
        let trace = run_episode(&scenario.initial, &mut policy, &mut ScriptedStream::new(&scenario.truth), &world.graph, seed).unwrap();
        prop_assert_eq!(trace.generated, scenario.truth.len());
        prop_assert_eq!(trace.generated, trace.served_count() + trace.outstanding_count());
        let wait: u64 = trace.served.iter().map(|s| u64::from(s.step + 1 - s.request.entry_time)).sum::<u64>()
            + trace.unserved.iter().map(|r| u64::from(cfg.horizon + 1 - r.entry_time)).sum::<u64>();
        prop_assert_eq!(trace.total_cost, wait);
        for pair in trace.steps.windows(2) {
            for agent in 0..fleet {
                let (now, next) = (pair[0].trip_remaining[agent], pair[1].trip_remaining[agent]);
                if now > 0 {
                    prop_assert_eq!(next, now - 1);
                }
            }
        }
        for s in &trace.served {
            let trip = world.graph.hops(s.request.pickup, s.request.dropoff).unwrap();
            if let Some(step) = trace.steps.get((s.step + trip) as usize) {
                prop_assert_eq!(step.agent_locations[s.agent], s.request.dropoff);
                prop_assert_eq!(step.trip_remaining[s.agent], 0);
            }
        }
    }

    #[test]
    fn every_policy_emits_legal_controls(seed in any::<u64>()) {
        let (cfg, world) = desk(seed, 4);
        let scenario = generate_scenario(&cfg, &world, 17, 1).unwrap();
        let demand = models(&cfg, &world, 17);
        let rollout = RolloutPolicy::new(RolloutConfig { scenarios: 3, lookahead: 4, seed, ..RolloutConfig::default() }, demand).unwrap();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(Checked(GreedyPolicy)),
            Box::new(Checked(InstantAssignPolicy)),
            Box::new(Checked(OraclePolicy::new(scenario.truth.clone()))),
            Box::new(Checked(rollout)),
        ];
        for mut p in policies {
            let trace = run_episode(&scenario.initial, p.as_mut(), &mut ScriptedStream::new(&scenario.truth), &world.graph, seed);
            prop_assert!(trace.is_ok());
        }
    }

    #[test]
    fn local_sampling_stays_in_the_neighbourhood(seed in any::<u64>(), center in 0u32..6) {
        let (cfg, world) = desk(seed, 1);
        let demand = models(&cfg, &world, 19);
        let hood = world.graph.sector_neighborhood(SectorId(center)).unwrap();
        let mut rng = rng_from(seed, &[2]);
        let sampled = demand
            .sample_local_demand(SectorId(center), 5, 10, SamplingScope::Local, DestinationMode::Renormalize, 0, &mut rng)
            .unwrap();
        for r in sampled {
            prop_assert!(hood.contains(&world.graph.sector_of(r.pickup).unwrap()));
            prop_assert!(hood.contains(&world.graph.sector_of(r.dropoff).unwrap()));
            prop_assert!((5..15).contains(&r.entry_time));
        }
    }

    #[test]
    fn clustering_ignores_point_order(seed in any::<u64>()) {
        let mut rng = rng_from(seed, &[3]);
        let points: Vec<Vec<f64>> = (0..18)
            .map(|k| (0..4).map(|i| if i == k % 3 { 2.0 } else { 0.0 } + 0.1 * rng.random::<f64>()).collect())
            .collect();
        let mut perm: Vec<usize> = (0..points.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let a = spectral_cluster(&points, 3, 1.0, 7).unwrap();
        let b = spectral_cluster(&shuffled, 3, 1.0, 7).unwrap();
        let b_back: Vec<usize> = {
            let mut v = vec![0; points.len()];
            for (k, &i) in perm.iter().enumerate() {
                v[i] = b[k];
            }
            v
        };
        prop_assert!(same_partition(&a, &b_back));
    }

    #[test]
    fn laplacian_spectrum_starts_at_zero(seed in any::<u64>(), n in 2usize..30, gamma in 0.05f64..2.0) {
        let mut rng = rng_from(seed, &[4]);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let l = normalized_laplacian(&points, gamma).unwrap();
        let eig = nalgebra::SymmetricEigen::new(l);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min.abs() < 1e-9, "smallest eigenvalue {min}");
    }

    #[test]
    fn stacked_feature_dimension(seed in any::<u64>(), d in 1usize..12, b in 1usize..5, events in 1usize..5) {
        let mut rng = rng_from(seed, &[5]);
        let records: Vec<EventRecord> = (0..events)
            .map(|k| EventRecord {
                event_id: format!("e{k}"),
                venue_sector: SectorId(0),
                title_embedding: (0..d).map(|_| rng.random()).collect(),
                review_embeddings: (0..rng.random_range(b..b + 6)).map(|_| (0..d).map(|_| rng.random()).collect()).collect(),
                date: None,
                start_hour: None,
            })
            .collect();
        let feature = sector_feature(&records, b, 1.0, seed).unwrap().unwrap();
        prop_assert_eq!(feature.unified.len(), (b + 1) * d);
    }

    #[test]
    fn distributions_are_normalised(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = rng_from(seed, &[6]);
        let weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1e6) }).collect();
        if let Some(c) = Categorical::from_weights((0..n).collect(), &weights) {
            prop_assert!((c.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        } else {
            prop_assert!(weights.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn destination_rows_are_relative_frequencies(seed in any::<u64>(), trips in 1usize..300) {
        let g = CityGraph::grid(6, 6, 2, 2).unwrap();
        let mut rng = rng_from(seed, &[7]);
        let trips: Vec<TripRecord> = (0..trips)
            .map(|_| TripRecord { pickup: rng.random_range(0..36), dropoff: rng.random_range(0..36), entry_minute: 0 })
            .collect();
        let m = destination_matrix(&trips, &g).unwrap();
        for a in g.sectors() {
            let from: Vec<&TripRecord> = trips.iter().filter(|t| g.sector_of(NodeId(t.pickup)).unwrap() == a).collect();
            for b in g.sectors() {
                let expected = if from.is_empty() {
                    1.0 / g.sector_count() as f64
                } else {
                    from.iter().filter(|t| g.sector_of(NodeId(t.dropoff)).unwrap() == b).count() as f64 / from.len() as f64
                };
                prop_assert_eq!(m[a.index()][b.index()], expected);
            }
        }
    }
}
