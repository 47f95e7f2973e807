//! From hourly sector predictions to minute-level, intersection-level demand.
//!
//! * [`ArrivalProcess`] spreads an hourly count evenly over the horizon: a fixed count per
//!   minute when the per-minute rate is at least one, a Bernoulli draw otherwise.
//! * [`OccupancyTable`] weights intersections by the expected number of people at nearby
//!   locales for a given hour; normalising the weights inside a sector gives the pickup and
//!   drop-off distributions.
//! * [`destination_matrix`] estimates the drop-off sector distribution from trip history.
//! * [`DemandModels::sample_local_demand`] draws requests for a sector and its neighbours only.
//!
//! File formats (comma-separated, with header):
//!
//! * occupancy: `locale_type,max_occupancy,h0,...,h23`
//! * locale counts: `intersection,locale_type,count`
//! * trip history: `pickup,dropoff,entry_minute`

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CityGraph, NodeId, SectorId};
use crate::sim::Request;

/// Per-minute arrival count of one sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ArrivalProcess {
    Deterministic(u32),
    Bernoulli(f64),
}

impl ArrivalProcess {
    /// `y_hat / horizon` per minute; deterministic (rounded half away from zero) at or above one.
    pub fn from_hourly(y_hat: f64, horizon: u32) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        if !(y_hat >= 0.0) || !y_hat.is_finite() {
            return Err(Error::domain(format!("predicted demand must be finite and >= 0, got {y_hat}")));
        }
        let rate = y_hat / f64::from(horizon);
        Ok(if rate >= 1.0 {
            ArrivalProcess::Deterministic(rate.round() as u32)
        } else {
            ArrivalProcess::Bernoulli(rate)
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            ArrivalProcess::Deterministic(k) => k,
            ArrivalProcess::Bernoulli(p) if p <= 0.0 => 0,
            ArrivalProcess::Bernoulli(p) => u32::from(rng.random::<f64>() < p),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ArrivalProcess::Deterministic(k) => f64::from(k),
            ArrivalProcess::Bernoulli(p) => p,
        }
    }
}

/// Finite distribution sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical<T> {
    support: Vec<T>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl<T: Copy> Categorical<T> {
    /// Normalises non-negative `weights`. Returns `None` when they sum to zero.
    pub fn from_weights(support: Vec<T>, weights: &[f64]) -> Option<Self> {
        assert_eq!(support.len(), weights.len());
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Some(Self { support, probs, cdf })
    }

    pub fn uniform(support: Vec<T>) -> Self {
        let w = vec![1.0; support.len()];
        Self::from_weights(support, &w).expect("non-empty support")
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|&c| c <= u).min(self.support.len() - 1);
        self.support[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocaleType {
    pub name: String,
    pub max_occupancy: f64,
    pub schedule: [f64; 24],
}

/// Locale types with occupancy schedules, plus locale counts near each intersection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    pub types: Vec<LocaleType>,
    pub counts: BTreeMap<NodeId, Vec<(String, u32)>>,
}

impl OccupancyTable {
    pub fn add_type(&mut self, name: &str, max_occupancy: f64, schedule: [f64; 24]) -> Result<()> {
        if schedule.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain(format!("schedule of `{name}` leaves [0, 1]")));
        }
        if !(max_occupancy >= 0.0) {
            return Err(Error::domain(format!("max occupancy of `{name}` is negative")));
        }
        self.types.push(LocaleType {
            name: name.to_string(),
            max_occupancy,
            schedule,
        });
        Ok(())
    }

    pub fn add_count(&mut self, node: NodeId, locale: &str, count: u32) {
        self.counts.entry(node).or_default().push((locale.to_string(), count));
    }

    fn locale(&self, name: &str) -> Result<&LocaleType> {
        self.types
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::domain(format!("unknown locale type `{name}`")))
    }

    /// Expected potential customers near `node` at `hour`: `Σ n(j) · p(h) · o`.
    pub fn occupancy_weight(&self, node: NodeId, hour: usize) -> Result<f64> {
        if hour > 23 {
            return Err(Error::domain(format!("hour {hour} outside 0..=23")));
        }
        let Some(counts) = self.counts.get(&node) else {
            return Ok(0.0);
        };
        counts.iter().try_fold(0.0, |acc, (name, n)| {
            let t = self.locale(name)?;
            Ok(acc + f64::from(*n) * t.schedule[hour] * t.max_occupancy)
        })
    }

    /// Normalised occupancy over the eligible intersections of `sector`. Falls back to uniform
    /// (second tuple field `true`) when every weight is zero.
    pub fn intersection_distribution(
        &self,
        g: &CityGraph,
        sector: SectorId,
        hour: usize,
    ) -> Result<(Categorical<NodeId>, bool)> {
        let support = g.eligible_nodes(sector)?.to_vec();
        if support.is_empty() {
            return Err(Error::domain(format!("sector {sector} has no eligible intersections")));
        }
        let weights = support
            .iter()
            .map(|&j| self.occupancy_weight(j, hour))
            .collect::<Result<Vec<_>>>()?;
        match Categorical::from_weights(support.clone(), &weights) {
            Some(d) => Ok((d, false)),
            None => {
                warn!("sector {sector} has zero occupancy at hour {hour}; using uniform intersections");
                Ok((Categorical::uniform(support), true))
            }
        }
    }

    pub fn read_csv<R: Read, C: Read>(occupancy: R, counts: C) -> Result<Self> {
        let mut table = OccupancyTable::default();
        let mut rdr = csv::Reader::from_reader(occupancy);
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 26 {
                return Err(Error::parse(k + 2, format!("expected 26 fields, got {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| Error::parse(k + 2, e.to_string()))
            };
            let mut schedule = [0.0; 24];
            for (h, slot) in schedule.iter_mut().enumerate() {
                *slot = num(h + 2)?;
            }
            table.add_type(rec[0].trim(), num(1)?, schedule)?;
        }
        let mut rdr = csv::Reader::from_reader(counts);
        for row in rdr.deserialize::<LocaleCount>() {
            let row = row?;
            table.locale(&row.locale_type)?;
            table.add_count(NodeId(row.intersection), &row.locale_type, row.count);
        }
        Ok(table)
    }

    pub fn write_csv<W: Write, C: Write>(&self, occupancy: W, counts: C) -> Result<()> {
        let mut w = csv::Writer::from_writer(occupancy);
        let mut header = vec!["locale_type".to_string(), "max_occupancy".to_string()];
        header.extend((0..24).map(|h| format!("h{h}")));
        w.write_record(&header)?;
        for t in &self.types {
            let mut rec = vec![t.name.clone(), t.max_occupancy.to_string()];
            rec.extend(t.schedule.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(counts);
        for (node, list) in &self.counts {
            for (name, count) in list {
                w.serialize(LocaleCount {
                    intersection: node.0,
                    locale_type: name.clone(),
                    count: *count,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LocaleCount {
    intersection: u32,
    locale_type: String,
    count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup: u32,
    pub dropoff: u32,
    pub entry_minute: u32,
}

pub fn read_trips<R: Read>(reader: R) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_trips<W: Write>(writer: W, trips: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in trips {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

/// Row-stochastic pickup-sector × drop-off-sector relative frequencies. Rows of sectors with
/// no pickups are Laplace-smoothed, which makes them uniform.
pub fn destination_matrix(trips: &[TripRecord], g: &CityGraph) -> Result<Vec<Vec<f64>>> {
    if trips.is_empty() {
        return Err(Error::domain("trip history is empty"));
    }
    let s = g.sector_count();
    let mut counts = vec![vec![0u64; s]; s];
    for t in trips {
        let a = g.sector_of(NodeId(t.pickup))?;
        let b = g.sector_of(NodeId(t.dropoff))?;
        counts[a.index()][b.index()] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![1.0 / s as f64; s]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect())
}

/// Estimated demand of one sector for one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorDemandModel {
    pub sector: SectorId,
    pub y_hat: f64,
    pub eta_det: f64,
    pub arrivals: ArrivalProcess,
    pub pickup: Categorical<NodeId>,
    pub dropoff: Categorical<NodeId>,
    /// Drop-off sector probabilities, indexed by sector.
    pub dest_sectors: Vec<f64>,
}

impl SectorDemandModel {
    pub fn new(
        sector: SectorId,
        y_hat: f64,
        horizon: u32,
        pickup: Categorical<NodeId>,
        dropoff: Categorical<NodeId>,
        dest_sectors: Vec<f64>,
    ) -> Result<Self> {
        let arrivals = ArrivalProcess::from_hourly(y_hat, horizon)?;
        Ok(Self {
            sector,
            y_hat,
            eta_det: y_hat / f64::from(horizon),
            arrivals,
            pickup,
            dropoff,
            dest_sectors,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScope {
    /// The agent's sector and its adjacent sectors.
    #[default]
    Local,
    FullMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DestinationMode {
    /// Drop-off sector distribution restricted to the sampled neighbourhood and renormalised.
    #[default]
    Renormalize,
    /// Drop-off sectors may lie outside the neighbourhood.
    AllowExit,
}

/// Demand models for every sector plus precomputed per-neighbourhood sampling tables.
#[derive(Debug, Clone)]
pub struct DemandModels {
    models: Vec<SectorDemandModel>,
    neighborhoods: Vec<Vec<SectorId>>,
    /// `local_dest[center][k]`: destination distribution of the k-th neighbourhood sector,
    /// restricted to the neighbourhood of `center`.
    local_dest: Vec<Vec<Categorical<SectorId>>>,
    full_dest: Vec<Categorical<SectorId>>,
}

impl DemandModels {
    pub fn new(models: Vec<SectorDemandModel>, g: &CityGraph) -> Result<Self> {
        let s = g.sector_count();
        if models.len() != s {
            return Err(Error::domain(format!("expected {s} sector models, got {}", models.len())));
        }
        for (k, m) in models.iter().enumerate() {
            if m.sector.index() != k {
                return Err(Error::domain(format!("model {k} is for sector {}", m.sector)));
            }
            if m.dest_sectors.len() != s {
                return Err(Error::DimensionMismatch { expected: s, actual: m.dest_sectors.len() });
            }
        }
        let all: Vec<SectorId> = g.sectors().collect();
        let full_dest = models
            .iter()
            .map(|m| Categorical::from_weights(all.clone(), &m.dest_sectors).unwrap_or_else(|| Categorical::uniform(all.clone())))
            .collect();
        let mut neighborhoods = Vec::with_capacity(s);
        let mut local_dest = Vec::with_capacity(s);
        for center in g.sectors() {
            let hood = g.sector_neighborhood(center)?;
            let tables = hood
                .iter()
                .map(|h| {
                    let w: Vec<f64> = hood.iter().map(|d| models[h.index()].dest_sectors[d.index()]).collect();
                    // Nothing goes anywhere in the neighbourhood: keep trips inside the origin sector.
                    Categorical::from_weights(hood.clone(), &w).unwrap_or_else(|| Categorical::uniform(vec![*h]))
                })
                .collect();
            neighborhoods.push(hood);
            local_dest.push(tables);
        }
        Ok(Self {
            models,
            neighborhoods,
            local_dest,
            full_dest,
        })
    }

    pub fn models(&self) -> &[SectorDemandModel] {
        &self.models
    }

    pub fn model(&self, s: SectorId) -> Result<&SectorDemandModel> {
        self.models.get(s.index()).ok_or(Error::UnknownSector(s))
    }

    /// Sectors sampled for an agent in `center` under `scope`.
    pub fn sampled_sectors(&self, center: SectorId, scope: SamplingScope) -> Result<Vec<SectorId>> {
        if center.index() >= self.models.len() {
            return Err(Error::UnknownSector(center));
        }
        Ok(match scope {
            SamplingScope::Local => self.neighborhoods[center.index()].clone(),
            SamplingScope::FullMap => (0..self.models.len() as u32).map(SectorId).collect(),
        })
    }

    /// Draws requests entering at `start_time .. start_time + minutes` in the sampled sectors.
    /// Request ids start at `id_base`. Output is ordered by entry time.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_local_demand<R: Rng + ?Sized>(
        &self,
        center: SectorId,
        start_time: u32,
        minutes: u32,
        scope: SamplingScope,
        dest_mode: DestinationMode,
        id_base: u64,
        rng: &mut R,
    ) -> Result<Vec<Request>> {
        let mut buckets = vec![Vec::new(); minutes as usize];
        self.sample_into(center, start_time, scope, dest_mode, id_base, rng, &mut buckets)?;
        Ok(buckets.into_iter().flatten().collect())
    }

    /// Fills `buckets[k]` with the requests entering at `start_time + k`; returns the number drawn.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn sample_into<R: Rng + ?Sized>(
        &self,
        center: SectorId,
        start_time: u32,
        scope: SamplingScope,
        dest_mode: DestinationMode,
        id_base: u64,
        rng: &mut R,
        buckets: &mut [Vec<Request>],
    ) -> Result<u64> {
        if center.index() >= self.models.len() {
            return Err(Error::UnknownSector(center));
        }
        let hood = &self.neighborhoods[center.index()];
        let all;
        let sectors: &[SectorId] = match scope {
            SamplingScope::Local => hood,
            SamplingScope::FullMap => {
                all = (0..self.models.len() as u32).map(SectorId).collect::<Vec<_>>();
                &all
            }
        };
        let mut next_id = id_base;
        for (offset, bucket) in buckets.iter_mut().enumerate() {
            let t = start_time + offset as u32;
            for (k, &s) in sectors.iter().enumerate() {
                let model = &self.models[s.index()];
                let count = model.arrivals.sample(rng);
                for _ in 0..count {
                    let pickup = model.pickup.sample(rng);
                    let dest = match (scope, dest_mode) {
                        (SamplingScope::Local, DestinationMode::Renormalize) => {
                            self.local_dest[center.index()][k].sample(rng)
                        }
                        _ => self.full_dest[s.index()].sample(rng),
                    };
                    let dropoff = self.models[dest.index()].dropoff.sample(rng);
                    bucket.push(Request::new(next_id, pickup, dropoff, t));
                    next_id += 1;
                }
            }
        }
        Ok(next_id - id_base)
    }
}
