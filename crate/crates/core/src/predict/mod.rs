//! Hourly per-sector demand prediction.
//!
//! Dataset file (comma-separated, with header):
//! `date,hour,sector,count,temperature,precipitation,event_ref`. `date` is `YYYY-MM-DD`,
//! `event_ref` is empty or the key of a row in a sector-feature file.
//!
//! Sector-feature file: `key,sector,f0,...,f{D-1}`.

mod baseline;
mod mlp;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SectorId;

pub use baseline::{historical_average_predict, percent_error, HistoryMode, HourlyCount, PercentError};
pub use mlp::{gradient_check, train, Adam, Mlp, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRow {
    pub date: NaiveDate,
    pub hour: u8,
    pub sector: SectorId,
    pub count: f64,
    pub temperature: f64,
    pub precipitation: f64,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub event_ref: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

impl DemandRow {
    pub fn to_hourly(&self) -> HourlyCount {
        HourlyCount {
            sector: self.sector,
            day: i64::from(self.date.num_days_from_ce()),
            hour: self.hour,
            count: self.count,
        }
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<DemandRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<DemandRow>().enumerate() {
        let row = row?;
        if row.hour > 23 {
            return Err(Error::parse(k + 2, format!("hour {} out of range", row.hour)));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(rows: &[DemandRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Keyed sector features as produced by the event-aggregation step.
pub type FeatureTable = BTreeMap<String, (SectorId, Vec<f64>)>;

pub fn read_features<R: Read>(r: R) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = FeatureTable::new();
    let mut dim = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() < 3 {
            return Err(Error::parse(line, "expected key,sector,f0,..."));
        }
        let sector = rec[1].trim().parse::<u32>().map_err(|e| Error::parse(line, e.to_string()))?;
        let v = (2..rec.len())
            .map(|i| rec[i].trim().parse::<f64>().map_err(|e| Error::parse(line, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(v.len()) != v.len() {
            return Err(Error::parse(line, "inconsistent feature dimension"));
        }
        out.insert(rec[0].to_string(), (SectorId(sector), v));
    }
    Ok(out)
}

pub fn write_features<W: Write>(features: &FeatureTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = features.values().next().map_or(0, |(_, v)| v.len());
    let mut header = vec!["key".to_string(), "sector".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header)?;
    for (key, (s, v)) in features {
        let mut rec = vec![key.clone(), s.0.to_string()];
        rec.extend(v.iter().map(|x| format!("{x:?}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Splits by date: the earliest 8/12 of the distinct dates go to training.
pub fn split_by_date(rows: &[DemandRow]) -> (Vec<DemandRow>, Vec<DemandRow>) {
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let cut = match dates.len() {
        0 => return (Vec::new(), Vec::new()),
        1 => dates[0],
        n => dates[((n * 8) / 12).clamp(1, n - 1) - 1],
    };
    rows.iter().cloned().partition(|r| r.date <= cut)
}

/// Base feature `f`: one-hot sector, day of week, month, hour; standardised weather.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub sectors: usize,
    pub weather_mean: [f64; 2],
    pub weather_std: [f64; 2],
}

impl FeatureEncoder {
    pub const TEMPORAL_DIM: usize = 7 + 12 + 24;

    /// Weather statistics from `training` only.
    pub fn fit(sectors: usize, training: &[DemandRow]) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::domain("cannot fit an encoder on no rows"));
        }
        let n = training.len() as f64;
        let ch = |r: &DemandRow| [r.temperature, r.precipitation];
        let mut mean = [0.0; 2];
        for r in training {
            let c = ch(r);
            mean[0] += c[0] / n;
            mean[1] += c[1] / n;
        }
        let mut var = [0.0; 2];
        for r in training {
            let c = ch(r);
            var[0] += (c[0] - mean[0]).powi(2) / n;
            var[1] += (c[1] - mean[1]).powi(2) / n;
        }
        let std = var.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Ok(Self { sectors, weather_mean: mean, weather_std: std })
    }

    pub fn dim(&self) -> usize {
        self.sectors + Self::TEMPORAL_DIM + 2
    }

    pub fn encode(&self, row: &DemandRow) -> Result<Vec<f64>> {
        if row.sector.index() >= self.sectors {
            return Err(Error::UnknownSector(row.sector));
        }
        let mut x = vec![0.0; self.dim()];
        x[row.sector.index()] = 1.0;
        let base = self.sectors;
        x[base + row.date.weekday().num_days_from_monday() as usize] = 1.0;
        x[base + 7 + row.date.month0() as usize] = 1.0;
        x[base + 19 + usize::from(row.hour)] = 1.0;
        x[base + 43] = (row.temperature - self.weather_mean[0]) / self.weather_std[0];
        x[base + 44] = (row.precipitation - self.weather_mean[1]) / self.weather_std[1];
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorRoute {
    Base,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub base_hidden: Vec<usize>,
    pub event_hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { base_hidden: vec![32, 32], event_hidden: vec![128, 128], train: TrainConfig::default() }
    }
}

/// The two-network predictor: rows whose sector has an event feature use the enhanced network
/// on `[f ; F]`, every other row uses the base network on `f`.
#[derive(Debug, Clone)]
pub struct DemandPredictor {
    pub encoder: FeatureEncoder,
    pub base: Mlp,
    pub enhanced: Option<Mlp>,
    pub features: FeatureTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub base_curve: Vec<f64>,
    pub enhanced_curve: Vec<f64>,
    pub base_rows: usize,
    pub enhanced_rows: usize,
}

impl DemandPredictor {
    pub fn route(&self, row: &DemandRow) -> PredictorRoute {
        match (&row.event_ref, &self.enhanced) {
            (Some(key), Some(_)) if self.features.contains_key(key) => PredictorRoute::Enhanced,
            _ => PredictorRoute::Base,
        }
    }

    fn input(&self, row: &DemandRow) -> Result<(PredictorRoute, Vec<f64>)> {
        let mut x = self.encoder.encode(row)?;
        let route = self.route(row);
        if route == PredictorRoute::Enhanced {
            let key = row.event_ref.as_ref().expect("routed on event_ref");
            x.extend_from_slice(&self.features[key].1);
        }
        Ok((route, x))
    }

    pub fn predict(&self, row: &DemandRow) -> Result<(PredictorRoute, f64)> {
        let (route, x) = self.input(row)?;
        let model = match route {
            PredictorRoute::Base => &self.base,
            PredictorRoute::Enhanced => self.enhanced.as_ref().expect("routed on enhanced"),
        };
        Ok((route, model.forward(&x)?))
    }

    /// Fits the encoder on `training`, then trains the base network on rows without a known
    /// event feature and the enhanced network on the others (when there are any).
    pub fn fit(
        sectors: usize,
        training: &[DemandRow],
        features: FeatureTable,
        cfg: &PredictorConfig,
    ) -> Result<(Self, TrainReport)> {
        let encoder = FeatureEncoder::fit(sectors, training)?;
        let feature_dim = features.values().next().map(|(_, v)| v.len());
        let mut this = Self {
            base: Mlp::with_hidden(encoder.dim(), &cfg.base_hidden, cfg.train.seed)?,
            enhanced: match feature_dim {
                Some(d) => Some(Mlp::with_hidden(encoder.dim() + d, &cfg.event_hidden, cfg.train.seed ^ 1)?),
                None => None,
            },
            encoder,
            features,
        };
        let mut base_set = Vec::new();
        let mut event_set = Vec::new();
        for row in training {
            let (route, x) = this.input(row)?;
            match route {
                PredictorRoute::Base => base_set.push((x, row.count)),
                PredictorRoute::Enhanced => event_set.push((x, row.count)),
            }
        }
        let base_curve = if base_set.is_empty() { Vec::new() } else { train(&mut this.base, &base_set, &cfg.train)? };
        let enhanced_curve = match this.enhanced.as_mut() {
            Some(m) if !event_set.is_empty() => train(m, &event_set, &cfg.train)?,
            _ => {
                this.enhanced = None;
                Vec::new()
            }
        };
        let report = TrainReport {
            base_curve,
            enhanced_curve,
            base_rows: base_set.len(),
            enhanced_rows: event_set.len(),
        };
        Ok((this, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(date: &str, hour: u8, sector: u32, event: Option<&str>) -> DemandRow {
        DemandRow {
            date: date.parse().unwrap(),
            hour,
            sector: SectorId(sector),
            count: 10.0,
            temperature: 12.0,
            precipitation: 0.5,
            event_ref: event.map(str::to_string),
        }
    }

    #[test]
    fn encoding_layout() {
        let rows = vec![row("2022-03-07", 5, 1, None)];
        let enc = FeatureEncoder::fit(3, &rows).unwrap();
        let x = enc.encode(&rows[0]).unwrap();
        assert_eq!(x.len(), 3 + 43 + 2);
        // Monday, March, 05:00.
        let hot: Vec<usize> = (0..x.len()).filter(|&i| x[i] == 1.0).collect();
        assert_eq!(hot, vec![1, 3, 3 + 7 + 2, 3 + 19 + 5]);
        assert_eq!(&x[46..], &[0.0, 0.0]);
        assert!(enc.encode(&row("2022-03-07", 5, 3, None)).is_err());
    }

    #[test]
    fn date_split_keeps_first_eight_twelfths() {
        let rows: Vec<DemandRow> = (1..=12).map(|m| row(&format!("2022-{m:02}-01"), 0, 0, None)).collect();
        let (train, test) = split_by_date(&rows);
        assert_eq!(train.len(), 8);
        assert!(train.iter().all(|r| r.date.month() <= 8));
        assert_eq!(test.len(), 4);
    }

    #[test]
    fn routing_follows_event_features() {
        let rows = vec![row("2022-01-01", 0, 0, None), row("2022-01-01", 0, 1, Some("e1"))];
        let mut features = FeatureTable::new();
        features.insert("e1".into(), (SectorId(1), vec![0.5; 4]));
        let cfg = PredictorConfig {
            base_hidden: vec![4],
            event_hidden: vec![4],
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
        };
        let (p, report) = DemandPredictor::fit(2, &rows, features, &cfg).unwrap();
        assert_eq!((report.base_rows, report.enhanced_rows), (1, 1));
        assert_eq!(p.route(&rows[0]), PredictorRoute::Base);
        assert_eq!(p.route(&rows[1]), PredictorRoute::Enhanced);
        assert_eq!(p.route(&row("2022-01-01", 0, 1, Some("missing"))), PredictorRoute::Base);
        assert!(p.predict(&rows[1]).unwrap().1 >= 0.0);
    }

    #[test]
    fn dataset_round_trip() {
        let rows = vec![row("2022-01-01", 3, 0, None), row("2022-01-02", 4, 2, Some("k"))];
        let mut buf = Vec::new();
        write_dataset(&rows, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), rows);
        let mut f = FeatureTable::new();
        f.insert("k".into(), (SectorId(2), vec![0.1, -3.0]));
        let mut buf = Vec::new();
        write_features(&f, &mut buf).unwrap();
        assert_eq!(read_features(buf.as_slice()).unwrap(), f);
    }
}
