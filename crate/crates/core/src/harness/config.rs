use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{CityGraph, SectorId};
use crate::policy::RolloutConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Grid { rows: usize, cols: usize, sector_rows: usize, sector_cols: usize },
    Ring { sectors: usize, per_sector: usize },
    File { path: PathBuf },
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec::Grid { rows: 10, cols: 10, sector_rows: 2, sector_cols: 3 }
    }
}

impl MapSpec {
    /// Relative file paths are resolved against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<CityGraph> {
        match self {
            MapSpec::Grid { rows, cols, sector_rows, sector_cols } => {
                CityGraph::grid(*rows, *cols, *sector_rows, *sector_cols)
            }
            MapSpec::Ring { sectors, per_sector } => CityGraph::ring_of_sectors(*sectors, *per_sector),
            MapSpec::File { path } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                CityGraph::from_text(&std::fs::read_to_string(path)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Oracle,
    Greedy,
    InstantAssign,
    /// Rollout with the configured demand source and `[rollout]` settings.
    Rollout,
    /// Same as `rollout` but sampling the whole map.
    RolloutFullMap,
    /// Rollout on instantaneous assignment, full-map sampling, previous-hour demand.
    HistoricalRollout,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Oracle,
        PolicyKind::Greedy,
        PolicyKind::InstantAssign,
        PolicyKind::Rollout,
        PolicyKind::RolloutFullMap,
        PolicyKind::HistoricalRollout,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Oracle => "oracle",
            PolicyKind::Greedy => "greedy",
            PolicyKind::InstantAssign => "instant-assign",
            PolicyKind::Rollout => "rollout",
            PolicyKind::RolloutFullMap => "rollout-full-map",
            PolicyKind::HistoricalRollout => "historical-rollout",
        }
    }
}

/// Demand multiplier on some sectors during some hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surge {
    pub sectors: Vec<u32>,
    pub hours: Vec<u8>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Baseline requests per sector per hour.
    pub base_rate: f64,
    /// Sector baselines are drawn uniformly from `base_rate · [1 − spread, 1 + spread]`.
    pub rate_spread: f64,
    /// Synthetic historical trips used to estimate the destination matrix.
    pub history_trips: usize,
    pub surge: Vec<Surge>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { base_rate: 10.0, rate_spread: 0.5, history_trips: 3000, surge: Vec::new() }
    }
}

impl WorldConfig {
    pub fn multiplier(&self, sector: SectorId, hour: u8) -> f64 {
        self.surge
            .iter()
            .filter(|s| s.sectors.contains(&sector.0) && s.hours.contains(&hour))
            .map(|s| s.multiplier)
            .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandSource {
    /// True hourly rate times a seeded multiplicative error `exp(noise · z)`, `z ~ N(0, 1)`.
    Scripted {
        #[serde(default)]
        noise: f64,
    },
    /// Rate of the previous hour, without knowledge of a surge that starts this hour.
    Historical,
    /// Reads `sector,hour,y_hat` rows (as written by the `predict` subcommand).
    Predicted { predictions: PathBuf },
}

impl Default for DemandSource {
    fn default() -> Self {
        DemandSource::Scripted { noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub fleet: usize,
    pub horizon: u32,
    pub hours: Vec<u8>,
    pub initial_states: u32,
    pub policies: Vec<PolicyKind>,
    pub map: MapSpec,
    pub world: WorldConfig,
    pub demand: DemandSource,
    pub rollout: RolloutConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fleet: 8,
            horizon: 60,
            hours: vec![15, 17, 19, 21],
            initial_states: 25,
            policies: vec![PolicyKind::Oracle, PolicyKind::Greedy, PolicyKind::InstantAssign, PolicyKind::Rollout],
            map: MapSpec::default(),
            world: WorldConfig::default(),
            demand: DemandSource::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.fleet == 0 {
            return Err(Error::Config("fleet must have at least one taxi".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Some(h) = self.hours.iter().find(|&&h| h > 23) {
            return Err(Error::Config(format!("hour {h} outside 0..23")));
        }
        if self.hours.is_empty() || self.policies.is_empty() || self.initial_states == 0 {
            return Err(Error::Config("need at least one hour, policy and initial state".into()));
        }
        if !(self.world.base_rate >= 0.0) || !(0.0..=1.0).contains(&self.world.rate_spread) {
            return Err(Error::Config("base_rate must be >= 0 and rate_spread in [0, 1]".into()));
        }
        if let Some(s) = self.world.surge.iter().find(|s| !(s.multiplier >= 0.0) || s.hours.iter().any(|&h| h > 23)) {
            return Err(Error::Config(format!("invalid surge {s:?}")));
        }
        if let DemandSource::Scripted { noise } = self.demand {
            if !(noise >= 0.0) {
                return Err(Error::Config("noise must be non-negative".into()));
            }
        }
        self.rollout.validate()
    }

    /// First 16 hex digits of the SHA-256 of the TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
