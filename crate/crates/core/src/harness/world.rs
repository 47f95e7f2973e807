//! Synthetic ground truth: occupancy tables, sector rates, destination preferences, request
//! streams and the demand models the planners see.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use sha2::{Digest, Sha256};

use crate::assign::{destination_matrix, Categorical, DemandModels, OccupancyTable, SectorDemandModel, TripRecord};
use crate::error::{Error, Result};
use crate::graph::{CityGraph, NodeId, SectorId};
use crate::harness::config::{DemandSource, ExperimentConfig};
use crate::rng::{rng_from, stream};
use crate::sim::{Request, SystemState};

/// Occupancy schedules (fraction of maximum occupancy per hour) of the synthetic locale types.
pub fn standard_locale_types() -> Vec<(&'static str, f64, [f64; 24])> {
    let retail = [
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.2, 0.4, 0.6, 0.7, 0.8, 0.8, 0.8, 0.8, 0.9, 0.9, 0.8, 0.6, 0.4,
        0.2, 0.05, 0.0,
    ];
    let restaurant = [
        0.1, 0.05, 0.0, 0.0, 0.0, 0.0, 0.05, 0.2, 0.3, 0.2, 0.2, 0.5, 0.9, 0.7, 0.3, 0.2, 0.3, 0.6, 0.9, 1.0, 0.8,
        0.5, 0.3, 0.2,
    ];
    let hotel = [
        0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.8, 0.6, 0.4, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.8,
        0.9, 0.9, 0.9,
    ];
    let hospital = [
        0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.6, 0.8, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.9, 0.8, 0.7, 0.6, 0.6,
        0.5, 0.5, 0.5,
    ];
    vec![("retail", 60.0, retail), ("restaurant", 80.0, restaurant), ("hotel", 200.0, hotel), ("hospital", 300.0, hospital)]
}

#[derive(Debug, Clone)]
pub struct World {
    pub graph: CityGraph,
    pub occupancy: OccupancyTable,
    /// Baseline requests per hour of each sector, before surges.
    pub base_rates: Vec<f64>,
    /// True drop-off sector distribution of each pickup sector.
    pub truth_dest: Vec<Vec<f64>>,
    /// Historical trips the planners may use to estimate destinations.
    pub history: Vec<TripRecord>,
    /// `(sector, hour) → y_hat` when the demand source is a predictions file.
    pub predictions: BTreeMap<(SectorId, u8), f64>,
}

impl World {
    pub fn build(cfg: &ExperimentConfig, graph: CityGraph) -> Result<Self> {
        let mut rng = rng_from(cfg.seed, &[stream::WORLD]);
        let mut occupancy = OccupancyTable::default();
        let types = standard_locale_types();
        for (name, max, schedule) in &types {
            occupancy.add_type(name, *max, *schedule)?;
        }
        for node in graph.nodes() {
            for (name, _, _) in &types {
                // Sparse: about one locale of each kind per four intersections.
                if rng.random_bool(0.25) {
                    occupancy.add_count(node, name, rng.random_range(1..=3));
                }
            }
        }
        let spread = cfg.world.rate_spread;
        let base_rates: Vec<f64> = graph
            .sectors()
            .map(|_| cfg.world.base_rate * (1.0 + spread * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        let truth_dest = graph
            .sectors()
            .map(|s| {
                let near = graph.adjacent_sectors(s).expect("sector exists");
                let w: Vec<f64> = graph
                    .sectors()
                    .map(|d| {
                        let base = if d == s {
                            4.0
                        } else if near.contains(&d) {
                            1.5
                        } else {
                            0.3
                        };
                        base * (0.5 + rng.random::<f64>())
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            })
            .collect();
        let mut world = Self { graph, occupancy, base_rates, truth_dest, history: Vec::new(), predictions: BTreeMap::new() };
        world.history = world.sample_history(cfg)?;
        Ok(world)
    }

    /// Loads `sector,hour,y_hat` predictions (extra columns are ignored).
    pub fn load_predictions<R: std::io::Read>(&mut self, r: R) -> Result<()> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::parse(1, format!("predictions file lacks `{name}`")))
        };
        let (cs, ch, cy) = (col("sector")?, col("hour")?, col("y_hat")?);
        let mut acc: BTreeMap<(SectorId, u8), (f64, usize)> = BTreeMap::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let p = |c: usize| rec[c].trim().to_string();
            let bad = |e: String| Error::parse(k + 2, e);
            let s = p(cs).parse::<u32>().map_err(|e| bad(e.to_string()))?;
            let h = p(ch).parse::<u8>().map_err(|e| bad(e.to_string()))?;
            let y = p(cy).parse::<f64>().map_err(|e| bad(e.to_string()))?;
            // Several rows per slot (different dates) are averaged.
            let e = acc.entry((SectorId(s), h)).or_default();
            e.0 += y;
            e.1 += 1;
        }
        self.predictions = acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect();
        Ok(())
    }

    pub fn truth_rate(&self, cfg: &ExperimentConfig, sector: SectorId, hour: u8) -> f64 {
        self.base_rates[sector.index()] * cfg.world.multiplier(sector, hour)
    }

    fn pickup_dist(&self, sector: SectorId, hour: u8) -> Result<Categorical<NodeId>> {
        Ok(self.occupancy.intersection_distribution(&self.graph, sector, usize::from(hour))?.0)
    }

    fn sample_history(&self, cfg: &ExperimentConfig) -> Result<Vec<TripRecord>> {
        let mut rng = rng_from(cfg.seed, &[stream::HISTORY]);
        let sectors: Vec<SectorId> = self.graph.sectors().collect();
        let origin = Categorical::from_weights(sectors.clone(), &self.base_rates)
            .unwrap_or_else(|| Categorical::uniform(sectors.clone()));
        let dists = (0..24u8)
            .map(|h| sectors.iter().map(|&s| self.pickup_dist(s, h)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let dest = self.dest_tables();
        Ok((0..cfg.world.history_trips)
            .map(|_| {
                let minute: u32 = rng.random_range(0..24 * 60);
                let h = (minute / 60) as usize;
                let s = origin.sample(&mut rng);
                let d = dest[s.index()].sample(&mut rng);
                TripRecord {
                    pickup: dists[h][s.index()].sample(&mut rng).0,
                    dropoff: dists[h][d.index()].sample(&mut rng).0,
                    entry_minute: minute,
                }
            })
            .collect())
    }

    fn dest_tables(&self) -> Vec<Categorical<SectorId>> {
        let sectors: Vec<SectorId> = self.graph.sectors().collect();
        self.truth_dest
            .iter()
            .map(|row| Categorical::from_weights(sectors.clone(), row).expect("normalised row"))
            .collect()
    }

    /// The hourly rates the planners believe for `hour`.
    pub fn estimated_rates(&self, cfg: &ExperimentConfig, source: &DemandSource, hour: u8, episode: u32) -> Result<Vec<f64>> {
        self.graph
            .sectors()
            .map(|s| match source {
                DemandSource::Scripted { noise } => {
                    let truth = self.truth_rate(cfg, s, hour);
                    if *noise == 0.0 {
                        return Ok(truth);
                    }
                    let mut rng = rng_from(cfg.seed, &[stream::NOISE, u64::from(hour), u64::from(episode), u64::from(s.0)]);
                    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
                    Ok(truth * (noise * z).exp())
                }
                DemandSource::Historical => Ok(self.truth_rate(cfg, s, (hour + 23) % 24)),
                DemandSource::Predicted { .. } => self
                    .predictions
                    .get(&(s, hour))
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no prediction for sector {s} hour {hour}"))),
            })
            .collect()
    }

    /// Demand models from estimated rates, occupancy-weighted intersections for `hour` and the
    /// destination matrix estimated from the historical trips.
    pub fn demand_models(&self, rates: &[f64], hour: u8, horizon: u32) -> Result<DemandModels> {
        let dest = destination_matrix(&self.history, &self.graph)?;
        let models = self
            .graph
            .sectors()
            .map(|s| {
                let pickup = self.pickup_dist(s, hour)?;
                SectorDemandModel::new(s, rates[s.index()], horizon, pickup.clone(), pickup, dest[s.index()].clone())
            })
            .collect::<Result<Vec<_>>>()?;
        DemandModels::new(models, &self.graph)
    }
}

/// One evaluation episode: where the taxis start and which requests really arrive.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub hour: u8,
    pub episode: u32,
    pub initial: SystemState,
    pub truth: Vec<Request>,
    pub stream_hash: String,
}

/// First 16 hex digits of the SHA-256 of the request list.
pub fn stream_hash(requests: &[Request]) -> String {
    let mut h = Sha256::new();
    for r in requests {
        h.update(format!("{},{},{},{};", r.id.0, r.pickup.0, r.dropoff.0, r.entry_time).as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Places taxis uniformly over the nodes and draws Poisson arrivals per sector and minute at
/// the (possibly surged) true rate.
pub fn generate_scenario(cfg: &ExperimentConfig, world: &World, hour: u8, episode: u32) -> Result<Scenario> {
    let g = &world.graph;
    let mut agents_rng = rng_from(cfg.seed, &[stream::AGENTS, u64::from(hour), u64::from(episode)]);
    let nodes = g.node_count() as u32;
    let locations = (0..cfg.fleet).map(|_| NodeId(agents_rng.random_range(0..nodes))).collect();
    let initial = SystemState::new(cfg.horizon, locations);

    let mut rng = rng_from(cfg.seed, &[stream::TRUTH, u64::from(hour), u64::from(episode)]);
    let dest = world.dest_tables();
    let sectors: Vec<SectorId> = g.sectors().collect();
    let pickup = sectors.iter().map(|&s| world.pickup_dist(s, hour)).collect::<Result<Vec<_>>>()?;
    let poisson: Vec<Option<Poisson<f64>>> = sectors
        .iter()
        .map(|&s| {
            let lambda = world.truth_rate(cfg, s, hour) / f64::from(cfg.horizon);
            (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive rate"))
        })
        .collect();
    let mut truth = Vec::new();
    for t in 1..=cfg.horizon {
        for &s in &sectors {
            let Some(p) = &poisson[s.index()] else { continue };
            let n = p.sample(&mut rng) as u64;
            for _ in 0..n {
                let d = dest[s.index()].sample(&mut rng);
                let id = truth.len() as u64;
                truth.push(Request::new(id, pickup[s.index()].sample(&mut rng), pickup[d.index()].sample(&mut rng), t));
            }
        }
    }
    let stream_hash = stream_hash(&truth);
    Ok(Scenario { hour, episode, initial, truth, stream_hash })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Surge;

    fn world(cfg: &ExperimentConfig) -> World {
        World::build(cfg, cfg.map.build(None).unwrap()).unwrap()
    }

    #[test]
    fn same_seed_same_scenario() {
        let cfg = ExperimentConfig::default();
        let w = world(&cfg);
        let a = generate_scenario(&cfg, &w, 19, 3).unwrap();
        let b = generate_scenario(&cfg, &world(&cfg), 19, 3).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.initial, b.initial);
        assert_ne!(a.stream_hash, generate_scenario(&cfg, &w, 19, 4).unwrap().stream_hash);
    }

    #[test]
    fn unit_multiplier_changes_nothing() {
        let plain = ExperimentConfig::default();
        let mut unit = plain.clone();
        unit.world.surge.push(Surge { sectors: vec![0, 1, 2], hours: vec![19], multiplier: 1.0 });
        let a = generate_scenario(&plain, &world(&plain), 19, 0).unwrap();
        let b = generate_scenario(&unit, &world(&unit), 19, 0).unwrap();
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn models_cover_every_sector() {
        let cfg = ExperimentConfig::default();
        let w = world(&cfg);
        let rates = w.estimated_rates(&cfg, &DemandSource::Historical, 19, 0).unwrap();
        assert_eq!(rates.len(), 6);
        let m = w.demand_models(&rates, 19, 60).unwrap();
        assert_eq!(m.models().len(), 6);
        for row in &w.truth_dest {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
