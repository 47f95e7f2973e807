//! Plot-ready tables derived from raw benchmark records.
//!
//! | file              | columns                                              |
//! |-------------------|------------------------------------------------------|
//! | `cost.csv`        | `hour,policy,episodes,mean,stderr`                   |
//! | `overhead.csv`    | `hour,policy,episodes,mean,stderr`                   |
//! | `outstanding.csv` | `hour,policy,episodes,mean,stderr`                   |
//! | `runtime.csv`     | `hour,policy,episodes,mean_plan_seconds,stderr`      |
//! | `pe.csv`          | `sector,method,rows,excluded_zero,pe`                |

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SectorId;
use crate::harness::benchmark::{aggregate, mean_stderr, EpisodeRecord, Stat, TimingRecord};
use crate::predict::{percent_error, PredictorRoute};

/// One evaluated dataset row, as written by the `predict` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: String,
    pub hour: u8,
    pub sector: u32,
    pub route: PredictorRoute,
    /// Output of the network selected by the routing rule.
    pub y_hat: f64,
    /// Output of the network without event features.
    pub base_y_hat: f64,
    /// Previous-hour baseline.
    pub history_y_hat: f64,
    pub actual: f64,
}

pub fn write_predictions<W: Write>(rows: &[PredictionRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn fmt(x: f64) -> String {
    if x.is_finite() { format!("{x:.6}") } else { String::new() }
}

fn stat_table(path: &Path, rows: &[(u8, String, Stat)], value: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["hour", "policy", "episodes", value, "stderr"])?;
    for (h, p, s) in rows {
        wtr.write_record([h.to_string(), p.clone(), s.n.to_string(), fmt(s.mean), fmt(s.stderr)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the five report tables into `dir` and returns their paths.
pub fn write_report(
    records: &[EpisodeRecord],
    timing: &[TimingRecord],
    predictions: &[PredictionRow],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let agg = aggregate(records);
    let pick = |f: fn(&crate::harness::benchmark::AggregateRow) -> &Stat| -> Vec<(u8, String, Stat)> {
        agg.iter().map(|r| (r.hour, r.policy.clone(), f(r).clone())).collect()
    };
    let mut out = Vec::new();
    for (name, rows) in [
        ("cost.csv", pick(|r| &r.total_cost)),
        ("overhead.csv", pick(|r| &r.overhead)),
        ("outstanding.csv", pick(|r| &r.outstanding)),
    ] {
        let p = dir.join(name);
        stat_table(&p, &rows, "mean")?;
        out.push(p);
    }

    let mut runtime: Vec<((u8, String), Vec<f64>)> = Vec::new();
    for t in timing {
        let key = (t.hour, t.policy.clone());
        match runtime.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(t.mean_plan_seconds),
            None => runtime.push((key, vec![t.mean_plan_seconds])),
        }
    }
    runtime.sort_by_key(|((h, _), _)| *h);
    let p = dir.join("runtime.csv");
    let mut wtr = csv::Writer::from_path(&p)?;
    wtr.write_record(["hour", "policy", "episodes", "mean_plan_seconds", "stderr"])?;
    for ((h, policy), v) in &runtime {
        let (m, s) = mean_stderr(v);
        // Scientific notation: planning times span several orders of magnitude.
        wtr.write_record([h.to_string(), policy.clone(), v.len().to_string(), format!("{m:.4e}"), format!("{s:.4e}")])?;
    }
    wtr.flush()?;
    out.push(p);

    let p = dir.join("pe.csv");
    let mut wtr = csv::Writer::from_path(&p)?;
    wtr.write_record(["sector", "method", "rows", "excluded_zero", "pe"])?;
    type Method = (&'static str, fn(&PredictionRow) -> f64);
    let methods: [Method; 3] = [
        ("event-nn", |r| r.y_hat),
        ("standard-nn", |r| r.base_y_hat),
        ("previous-hour", |r| r.history_y_hat),
    ];
    let mut by_sector: BTreeMap<SectorId, Vec<[String; 5]>> = BTreeMap::new();
    for (name, f) in methods {
        let rows: Vec<(SectorId, f64, f64)> = predictions.iter().map(|r| (SectorId(r.sector), f(r), r.actual)).collect();
        for (s, pe) in percent_error(&rows) {
            by_sector.entry(s).or_default().push([
                s.0.to_string(),
                name.to_string(),
                pe.rows.to_string(),
                pe.excluded_zero.to_string(),
                pe.pe.map(fmt).unwrap_or_default(),
            ]);
        }
    }
    for rows in by_sector.values() {
        for r in rows {
            wtr.write_record(r)?;
        }
    }
    wtr.flush()?;
    out.push(p);
    Ok(out)
}
