//! Synthetic training data with the same schemas as the real inputs: hourly sector counts with
//! weather, events with title and review embeddings, historical trips and occupancy tables.
//!
//! Event popularity `p ∈ [0, 1]` drives both the demand surge around the event start and the
//! embeddings (title direction scaled by `p`, review sentiment mix shifted by `p`), so the event
//! feature carries real signal about the surge.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::assign::{OccupancyTable, TripRecord};
use crate::error::{Error, Result};
use crate::events::{feature_key, EventRecord};
use crate::graph::{CityGraph, SectorId};
use crate::harness::config::ExperimentConfig;
use crate::harness::world::World;
use crate::predict::DemandRow;
use crate::rng::{rng_from, stream};

/// Relative demand by hour of day.
pub const DIURNAL: [f64; 24] = [
    0.35, 0.25, 0.18, 0.15, 0.15, 0.25, 0.5, 0.8, 1.0, 0.9, 0.8, 0.85, 0.9, 0.9, 0.9, 1.0, 1.1, 1.25, 1.3, 1.2,
    1.05, 0.9, 0.7, 0.5,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub year: i32,
    /// Days sampled in each month (the 1st, then every 7th day).
    pub days_per_month: u32,
    /// Mean requests per sector per hour at diurnal factor 1.
    pub base_rate: f64,
    /// Chance that a sector holds an event on a given day.
    pub event_probability: f64,
    /// Extra demand multiplier of the most popular event.
    pub max_surge: f64,
    pub dim: usize,
    pub min_reviews: usize,
    pub max_reviews: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            year: 2022,
            days_per_month: 4,
            base_rate: 10.0,
            event_probability: 0.2,
            max_surge: 4.0,
            dim: 16,
            min_reviews: 12,
            max_reviews: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Vec<DemandRow>,
    pub events: Vec<EventRecord>,
    pub trips: Vec<TripRecord>,
    pub occupancy: OccupancyTable,
}

fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<f64> = (0..d).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Hours affected by an event starting at `start`, with their share of the surge.
fn surge_profile(start: u8, hour: u8) -> f64 {
    match i32::from(hour) - i32::from(start) {
        -1 => 0.5,
        0 => 1.0,
        1 => 0.6,
        _ => 0.0,
    }
}

pub fn generate_data(g: &CityGraph, cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.dim == 0 || cfg.min_reviews == 0 || cfg.min_reviews > cfg.max_reviews || cfg.days_per_month == 0 {
        return Err(Error::Config("invalid synthetic data settings".into()));
    }
    let world_cfg = ExperimentConfig { seed: cfg.seed, ..ExperimentConfig::default() };
    let world = World::build(&world_cfg, g.clone())?;
    let mut rng = rng_from(cfg.seed, &[stream::EVENTS]);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let title_axis = unit_vector(cfg.dim, &mut rng);
    let sentiment: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(cfg.dim, &mut rng).iter().map(|x| 3.0 * x).collect()).collect();
    let sector_scale: Vec<f64> = g.sectors().map(|_| 0.6 + 0.8 * rng.random::<f64>()).collect();

    let mut dataset = Vec::new();
    let mut events = Vec::new();
    for month in 1..=12u32 {
        for k in 0..cfg.days_per_month {
            let day = 1 + 7 * k;
            let Some(date) = NaiveDate::from_ymd_opt(cfg.year, month, day) else { continue };
            let season = (2.0 * std::f64::consts::PI * (f64::from(date.ordinal()) - 110.0) / 365.0).sin();
            let temp_day = 12.0 + 10.0 * season + 2.0 * noise.sample(&mut rng);
            let rain_day = (noise.sample(&mut rng) - 0.8).max(0.0);
            let weekend = date.weekday().number_from_monday() >= 6;
            let mut day_events: Vec<(SectorId, u8, f64)> = Vec::new();
            for s in g.sectors() {
                if rng.random_bool(cfg.event_probability) {
                    let p: f64 = rng.random();
                    let start = rng.random_range(17..=20u8);
                    day_events.push((s, start, p));
                    let id = format!("ev-{}-{}", date, s.0);
                    let n = rng.random_range(cfg.min_reviews..=cfg.max_reviews);
                    let reviews = (0..n)
                        .map(|_| {
                            // Popular events get mostly positive reviews.
                            let u: f64 = rng.random();
                            let c = if u < 0.2 + 0.6 * p { 0 } else if u < 0.9 { 1 } else { 2 };
                            sentiment[c].iter().map(|x| x + 0.3 * noise.sample(&mut rng)).collect()
                        })
                        .collect();
                    events.push(EventRecord {
                        event_id: id,
                        venue_sector: s,
                        title_embedding: title_axis.iter().map(|x| 2.0 * p * x + 0.05 * noise.sample(&mut rng)).collect(),
                        review_embeddings: reviews,
                        date: Some(date.to_string()),
                        start_hour: Some(start),
                    });
                }
            }
            for hour in 0..24u8 {
                let temperature = temp_day + 3.0 * (f64::from(hour) / 24.0 * 2.0 * std::f64::consts::PI).sin();
                let precipitation = rain_day;
                for s in g.sectors() {
                    let mut rate = cfg.base_rate * sector_scale[s.index()] * DIURNAL[usize::from(hour)];
                    rate *= if weekend { 0.85 } else { 1.0 };
                    rate *= 1.0 + 0.01 * (temperature - 12.0);
                    rate *= 1.0 / (1.0 + 0.4 * precipitation);
                    let mut event_ref = None;
                    if let Some(&(_, start, p)) = day_events.iter().find(|(es, _, _)| *es == s) {
                        let share = surge_profile(start, hour);
                        if share > 0.0 {
                            rate *= 1.0 + cfg.max_surge * p * share;
                            event_ref = Some(feature_key(s, Some(&date.to_string())));
                        }
                    }
                    let count = if rate > 0.0 { Poisson::new(rate).expect("positive").sample(&mut rng) } else { 0.0 };
                    dataset.push(DemandRow { date, hour, sector: s, count, temperature, precipitation, event_ref });
                }
            }
        }
    }
    Ok(SynthData { dataset, events, trips: world.history, occupancy: world.occupancy })
}
