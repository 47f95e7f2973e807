use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fleet_core::assign::write_trips;
use fleet_core::events::{grouped_features, read_events, write_events, DEFAULT_CLUSTERS, DEFAULT_GAMMA, DEFAULT_MAX_REVIEWS};
use fleet_core::harness::{
    generate_data, generate_scenario, read_predictions, read_records, read_timing, run_benchmark, write_outputs,
    write_predictions, write_report, ExperimentConfig, MapSpec, PolicyKind, PredictionRow, SynthConfig, World,
};
use fleet_core::policy::{GreedyPolicy, InstantAssignPolicy, OraclePolicy, RolloutPolicy};
use fleet_core::predict::{
    historical_average_predict, read_dataset, read_features, split_by_date, write_dataset, write_features,
    DemandPredictor, FeatureEncoder, FeatureTable, HistoryMode, Mlp, PredictorConfig, PredictorRoute, TrainConfig,
};
use fleet_core::rng::derive_seed;
use fleet_core::sim::{run_episode, Policy, ScriptedStream};
use fleet_core::CityGraph;

#[derive(Parser)]
#[command(name = "fleetsim", version, about = "Event-aware taxi fleet simulation and planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapKind {
    Grid,
    Ring,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic street map in the text graph format.
    GenMap {
        #[arg(long, value_enum, default_value = "grid")]
        kind: MapKind,
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 2)]
        sector_rows: usize,
        #[arg(long, default_value_t = 3)]
        sector_cols: usize,
        /// Ring maps: number of sectors.
        #[arg(long, default_value_t = 6)]
        sectors: usize,
        /// Ring maps: intersections per sector.
        #[arg(long, default_value_t = 8)]
        per_sector: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset, events, trips and occupancy tables into a directory.
    GenData {
        /// Map file; the default 10x10 grid with 6 sectors when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        days_per_month: u32,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster event reviews and write one unified feature per (sector, date).
    Cluster {
        #[arg(long)]
        events: PathBuf,
        /// Event metadata (`event_id,sector,date,start_hour`).
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
        b: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_REVIEWS)]
        max_reviews: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base and event-enhanced demand networks on the training split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "32,32")]
        base_hidden: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "128,128")]
        event_hidden: Vec<usize>,
        /// Output directory for checkpoints, encoder and loss curves.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the test split and write `predictions.csv` rows.
    Predict {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one episode and write its trace.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "rollout")]
        policy: String,
        #[arg(long, default_value_t = 19)]
        hour: u8,
        #[arg(long, default_value_t = 0)]
        episode: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the paired benchmark and write records, summary and timing.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the root seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn benchmark output into plot-ready tables.
    Report {
        /// Directory written by `benchmark`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let (mut cfg, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (ExperimentConfig::from_toml(&text)?, p.parent().map(Path::to_path_buf))
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, base))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn sector_count(rows: &[fleet_core::predict::DemandRow]) -> usize {
    rows.iter().map(|r| r.sector.index() + 1).max().unwrap_or(0)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenMap { kind, rows, cols, sector_rows, sector_cols, sectors, per_sector, out } => {
            let g = match kind {
                MapKind::Grid => CityGraph::grid(rows, cols, sector_rows, sector_cols)?,
                MapKind::Ring => CityGraph::ring_of_sectors(sectors, per_sector)?,
            };
            std::fs::write(&out, g.to_text())?;
            log::info!("{} nodes, {} sectors", g.node_count(), g.sector_count());
        }
        Command::GenData { map, seed, days_per_month, dim, out } => {
            let g = match map {
                Some(p) => CityGraph::from_text(&std::fs::read_to_string(p)?)?,
                None => MapSpec::default().build(None)?,
            };
            let cfg = SynthConfig { seed, days_per_month, dim, ..SynthConfig::default() };
            let data = generate_data(&g, &cfg)?;
            std::fs::create_dir_all(&out)?;
            write_dataset(&data.dataset, create(&out.join("dataset.csv"))?)?;
            write_events(&data.events, create(&out.join("events.csv"))?, create(&out.join("events_meta.csv"))?)?;
            write_trips(create(&out.join("trips.csv"))?, &data.trips)?;
            data.occupancy.write_csv(create(&out.join("occupancy.csv"))?, create(&out.join("counts.csv"))?)?;
            std::fs::write(out.join("map.txt"), g.to_text())?;
        }
        Command::Cluster { events, meta, b, gamma, max_reviews, seed, out } => {
            let meta = meta.map(|m| open(&m)).transpose()?;
            let events = read_events(open(&events)?, meta, max_reviews)?;
            let features = grouped_features(&events, b, gamma, seed)?;
            write_features(&features, create(&out)?)?;
            log::info!("{} features from {} events", features.len(), events.len());
        }
        Command::Train { dataset, features, epochs, learning_rate, seed, base_hidden, event_hidden, out } => {
            let rows = read_dataset(open(&dataset)?)?;
            let features = match features {
                Some(f) => read_features(open(&f)?)?,
                None => FeatureTable::new(),
            };
            let (training, _) = split_by_date(&rows);
            let cfg = PredictorConfig {
                base_hidden,
                event_hidden,
                train: TrainConfig { epochs, learning_rate, seed, ..TrainConfig::default() },
            };
            let (p, report) = DemandPredictor::fit(sector_count(&rows), &training, features, &cfg)?;
            std::fs::create_dir_all(&out)?;
            p.base.write_checkpoint(&cfg.train, create(&out.join("base.ckpt"))?)?;
            if let Some(m) = &p.enhanced {
                m.write_checkpoint(&cfg.train, create(&out.join("enhanced.ckpt"))?)?;
            }
            serde_json::to_writer_pretty(create(&out.join("encoder.json"))?, &p.encoder)?;
            let mut w = csv::Writer::from_writer(create(&out.join("loss.csv"))?);
            w.write_record(["epoch", "base_mse", "enhanced_mse"])?;
            for e in 0..report.base_curve.len().max(report.enhanced_curve.len()) {
                let cell = |c: &[f64]| c.get(e).map(|v| v.to_string()).unwrap_or_default();
                w.write_record([e.to_string(), cell(&report.base_curve), cell(&report.enhanced_curve)])?;
            }
            w.flush()?;
            log::info!("trained on {} base rows and {} event rows", report.base_rows, report.enhanced_rows);
        }
        Command::Predict { dataset, features, models, out } => {
            let rows = read_dataset(open(&dataset)?)?;
            let features = match features {
                Some(f) => read_features(open(&f)?)?,
                None => FeatureTable::new(),
            };
            let encoder: FeatureEncoder = serde_json::from_reader(open(&models.join("encoder.json"))?)?;
            let (base, _) = Mlp::read_checkpoint(open(&models.join("base.ckpt"))?)?;
            let enhanced_path = models.join("enhanced.ckpt");
            let enhanced = if enhanced_path.exists() { Some(Mlp::read_checkpoint(open(&enhanced_path)?)?.0) } else { None };
            let predictor = DemandPredictor { encoder, base, enhanced, features };
            let history: Vec<_> = rows.iter().map(|r| r.to_hourly()).collect();
            let (_, test) = split_by_date(&rows);
            let mut out_rows = Vec::with_capacity(test.len());
            for r in &test {
                let (route, y_hat) = predictor.predict(r)?;
                let base_y_hat = predictor.base.forward(&predictor.encoder.encode(r)?)?;
                let h = r.to_hourly();
                let (history_y_hat, _) = historical_average_predict(&history, r.sector, h.day, r.hour, HistoryMode::PreviousHour);
                out_rows.push(PredictionRow {
                    date: r.date.to_string(),
                    hour: r.hour,
                    sector: r.sector.0,
                    route,
                    y_hat,
                    base_y_hat,
                    history_y_hat,
                    actual: r.count,
                });
            }
            write_predictions(&out_rows, create(&out)?)?;
            let enhanced = out_rows.iter().filter(|r| r.route == PredictorRoute::Enhanced).count();
            log::info!("{} predictions, {enhanced} via the event network", out_rows.len());
        }
        Command::Simulate { config, policy, hour, episode, seed, out } => {
            let (cfg, base) = load_config(config.as_deref(), seed)?;
            let kind: PolicyKind = serde_json::from_value(serde_json::Value::String(policy.clone()))
                .with_context(|| format!("unknown policy `{policy}`"))?;
            let graph = cfg.map.build(base.as_deref())?;
            let world = World::build(&cfg, graph)?;
            let scenario = generate_scenario(&cfg, &world, hour, episode)?;
            let mut planner: Box<dyn Policy> = match kind {
                PolicyKind::Oracle => Box::new(OraclePolicy::new(scenario.truth.clone())),
                PolicyKind::Greedy => Box::new(GreedyPolicy),
                PolicyKind::InstantAssign => Box::new(InstantAssignPolicy),
                PolicyKind::Rollout => {
                    let rates = world.estimated_rates(&cfg, &cfg.demand, hour, episode)?;
                    Box::new(RolloutPolicy::new(cfg.rollout.clone(), world.demand_models(&rates, hour, cfg.horizon)?)?)
                }
                other => bail!("simulate supports oracle, greedy, instant-assign and rollout, not {}", other.label()),
            };
            let ep_seed = derive_seed(cfg.seed, &[u64::from(hour), u64::from(episode)]);
            let trace = run_episode(
                &scenario.initial,
                planner.as_mut(),
                &mut ScriptedStream::new(&scenario.truth),
                &world.graph,
                ep_seed,
            )?;
            std::fs::write(&out, trace.to_csv())?;
            println!("{} total_cost={} served={} outstanding={}", trace.policy, trace.total_cost, trace.served_count(), trace.outstanding_count());
        }
        Command::Benchmark { config, seed, out } => {
            let (cfg, base) = load_config(config.as_deref(), seed)?;
            let result = run_benchmark(&cfg, base.as_deref())?;
            write_outputs(&result, &out)?;
            for row in &result.report.rows {
                println!(
                    "hour {:>2}  {:<16} cost {:>9.2} ± {:<7.2} overhead {:>7.3}",
                    row.hour, row.policy, row.total_cost.mean, row.total_cost.stderr, row.overhead.mean
                );
            }
            let failures = result.failures();
            if failures > 0 {
                eprintln!("{failures} episodes failed; see records.csv");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { input, predictions, out } => {
            let records = read_records(open(&input.join("records.csv"))?)?;
            let timing_path = input.join("timing.csv");
            let timing = if timing_path.exists() { read_timing(open(&timing_path)?)? } else { Vec::new() };
            let preds = match predictions {
                Some(p) => read_predictions(open(&p)?)?,
                None => Vec::new(),
            };
            for f in write_report(&records, &timing, &preds, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
