use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{DemandSource, ExperimentConfig, PolicyKind};
use crate::harness::world::{generate_scenario, Scenario, World};
use crate::policy::{BasePolicy, GreedyPolicy, InstantAssignPolicy, OraclePolicy, RolloutPolicy};
use crate::rng::derive_seed;
use crate::sim::{run_episode, Policy, PolicyTrace, ScriptedStream};
use crate::assign::SamplingScope;

/// Extra wait per serviced request relative to the oracle on the same realisation.
pub fn wait_time_overhead(policy: &PolicyTrace, oracle: &PolicyTrace) -> Option<f64> {
    let served = policy.served_count();
    (served > 0).then(|| (policy.total_cost as f64 - oracle.total_cost as f64) / served as f64)
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub hour: u8,
    pub policy: String,
    pub episode: u32,
    pub stream_hash: String,
    pub generated: usize,
    pub served: usize,
    pub outstanding: usize,
    pub total_cost: u64,
    pub terminal_cost: u64,
    pub overhead: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub hour: u8,
    pub policy: String,
    pub episode: u32,
    pub steps: usize,
    pub mean_plan_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(values);
        Self { mean, stderr, n: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub hour: u8,
    pub policy: String,
    pub failures: usize,
    pub total_cost: Stat,
    pub outstanding: Stat,
    pub served: Stat,
    pub overhead: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<AggregateRow>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub records: Vec<EpisodeRecord>,
    pub timing: Vec<TimingRecord>,
    pub report: MetricsReport,
    /// Full traces of the last scenario run, kept for inspection.
    pub traces: Vec<PolicyTrace>,
}

impl BenchmarkOutput {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Folds records into per-(hour, policy) statistics, ordered by hour then first appearance of
/// the policy.
pub fn aggregate(records: &[EpisodeRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(u8, String)> = Vec::new();
    let mut groups: BTreeMap<(u8, String), Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.hour, r.policy.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order.sort_by_key(|(h, _)| *h);
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let ok: Vec<&&EpisodeRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            let pick = |f: &dyn Fn(&EpisodeRecord) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                hour: key.0,
                policy: key.1.clone(),
                failures: rs.len() - ok.len(),
                total_cost: pick(&|r| Some(r.total_cost as f64)),
                outstanding: pick(&|r| Some(r.outstanding as f64)),
                served: pick(&|r| Some(r.served as f64)),
                overhead: pick(&|r| r.overhead),
            }
        })
        .collect()
}

struct Planners {
    kinds: Vec<PolicyKind>,
}

impl Planners {
    fn build(
        &self,
        kind: PolicyKind,
        cfg: &ExperimentConfig,
        world: &World,
        scenario: &Scenario,
    ) -> Result<Box<dyn Policy>> {
        let rollout = |source: &DemandSource, mut rc: crate::policy::RolloutConfig| -> Result<Box<dyn Policy>> {
            let rates = world.estimated_rates(cfg, source, scenario.hour, scenario.episode)?;
            let models = world.demand_models(&rates, scenario.hour, cfg.horizon)?;
            rc.seed = derive_seed(cfg.rollout.seed, &[cfg.seed]);
            Ok(Box::new(RolloutPolicy::new(rc, models)?.with_label(kind.label())))
        };
        match kind {
            PolicyKind::Oracle => Ok(Box::new(OraclePolicy::new(scenario.truth.clone()))),
            PolicyKind::Greedy => Ok(Box::new(GreedyPolicy)),
            PolicyKind::InstantAssign => Ok(Box::new(InstantAssignPolicy)),
            PolicyKind::Rollout => rollout(&cfg.demand, cfg.rollout.clone()),
            PolicyKind::RolloutFullMap => {
                rollout(&cfg.demand, crate::policy::RolloutConfig { sampling_scope: SamplingScope::FullMap, ..cfg.rollout.clone() })
            }
            PolicyKind::HistoricalRollout => rollout(
                &DemandSource::Historical,
                crate::policy::RolloutConfig {
                    sampling_scope: SamplingScope::FullMap,
                    base_policy: BasePolicy::InstantAssign,
                    ..cfg.rollout.clone()
                },
            ),
        }
    }

    /// Oracle first, so the others can be compared against it.
    fn run_order(&self) -> Vec<PolicyKind> {
        let mut v = self.kinds.clone();
        v.sort_by_key(|&k| k != PolicyKind::Oracle);
        v
    }
}

/// Builds the map and world from `cfg` (file paths are resolved against `base`) and runs every
/// (hour, initial state, policy) episode on paired ground-truth streams. Episode failures are
/// recorded and do not stop the benchmark.
pub fn run_benchmark(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let graph = cfg.map.build(base)?;
    let mut world = World::build(cfg, graph)?;
    if let DemandSource::Predicted { predictions } = &cfg.demand {
        let path = match base {
            Some(b) if predictions.is_relative() => b.join(predictions),
            _ => predictions.clone(),
        };
        world.load_predictions(std::fs::File::open(path)?)?;
    }
    run_benchmark_in(cfg, &world)
}

pub fn run_benchmark_in(cfg: &ExperimentConfig, world: &World) -> Result<BenchmarkOutput> {
    let planners = Planners { kinds: cfg.policies.clone() };
    let mut records = Vec::new();
    let mut timing = Vec::new();
    let mut traces = Vec::new();
    for &hour in &cfg.hours {
        for episode in 0..cfg.initial_states {
            let scenario = generate_scenario(cfg, world, hour, episode)?;
            let seed = derive_seed(cfg.seed, &[u64::from(hour), u64::from(episode)]);
            let mut oracle: Option<PolicyTrace> = None;
            let mut by_kind: BTreeMap<PolicyKind, (EpisodeRecord, Option<TimingRecord>)> = BTreeMap::new();
            traces.clear();
            for kind in planners.run_order() {
                let result = planners.build(kind, cfg, world, &scenario).and_then(|mut p| {
                    let mut stream = ScriptedStream::new(&scenario.truth);
                    run_episode(&scenario.initial, p.as_mut(), &mut stream, &world.graph, seed)
                });
                let mut rec = EpisodeRecord {
                    hour,
                    policy: kind.label().to_string(),
                    episode,
                    stream_hash: scenario.stream_hash.clone(),
                    generated: scenario.truth.len(),
                    served: 0,
                    outstanding: 0,
                    total_cost: 0,
                    terminal_cost: 0,
                    overhead: None,
                    error: None,
                };
                let mut time_rec = None;
                match result {
                    Ok(trace) => {
                        if trace.generated != trace.served_count() + trace.outstanding_count() {
                            return Err(Error::domain(format!("{} lost requests in episode {episode}", kind.label())));
                        }
                        rec.served = trace.served_count();
                        rec.outstanding = trace.outstanding_count();
                        rec.total_cost = trace.total_cost;
                        rec.terminal_cost = trace.terminal_cost;
                        if kind == PolicyKind::Oracle {
                            oracle = Some(trace.clone());
                        }
                        rec.overhead = oracle.as_ref().and_then(|o| wait_time_overhead(&trace, o));
                        time_rec = Some(TimingRecord {
                            hour,
                            policy: rec.policy.clone(),
                            episode,
                            steps: trace.plan_nanos.len(),
                            mean_plan_seconds: trace.mean_plan_seconds(),
                        });
                        traces.push(trace);
                    }
                    Err(e) => {
                        log::warn!("{} failed on hour {hour} episode {episode}: {e}", kind.label());
                        rec.error = Some(e.to_string());
                    }
                }
                by_kind.insert(kind, (rec, time_rec));
            }
            for kind in &cfg.policies {
                if let Some((rec, t)) = by_kind.remove(kind) {
                    records.push(rec);
                    timing.extend(t);
                }
            }
        }
    }
    let report = MetricsReport { config_hash: cfg.hash(), seed: cfg.seed, rows: aggregate(&records) };
    Ok(BenchmarkOutput { records, timing, report, traces })
}

pub fn write_records<W: Write>(records: &[EpisodeRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<EpisodeRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_timing<W: Write>(timing: &[TimingRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in timing {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_timing<R: Read>(r: R) -> Result<Vec<TimingRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Writes `records.csv`, `summary.json` and `timing.csv` into `dir`. Only the timing file
/// depends on wall-clock time.
pub fn write_outputs(out: &BenchmarkOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(&out.records, std::fs::File::create(dir.join("records.csv"))?)?;
    write_timing(&out.timing, std::fs::File::create(dir.join("timing.csv"))?)?;
    let mut f = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &out.report)?;
    writeln!(f)?;
    Ok(())
}
