use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::SectorId;

/// One observed hourly count; `day` is any increasing day index (e.g. days since epoch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyCount {
    pub sector: SectorId,
    pub day: i64,
    pub hour: u8,
    pub count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    /// Mean over every record of the same sector and hour of day.
    #[default]
    SlotMean,
    /// The observation one hour before `(day, hour)`.
    PreviousHour,
}

/// `(prediction, missing)`; `missing` is set when no matching record exists and 0 is returned.
pub fn historical_average_predict(
    history: &[HourlyCount],
    sector: SectorId,
    day: i64,
    hour: u8,
    mode: HistoryMode,
) -> (f64, bool) {
    match mode {
        HistoryMode::SlotMean => {
            let (sum, n) = history
                .iter()
                .filter(|r| r.sector == sector && r.hour == hour)
                .fold((0.0, 0usize), |(s, n), r| (s + r.count, n + 1));
            if n == 0 { (0.0, true) } else { (sum / n as f64, false) }
        }
        HistoryMode::PreviousHour => {
            let (pday, phour) = if hour == 0 { (day - 1, 23) } else { (day, hour - 1) };
            history
                .iter()
                .rev()
                .find(|r| r.sector == sector && r.day == pday && r.hour == phour)
                .map_or((0.0, true), |r| (r.count, false))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentError {
    /// `None` when every actual of the sector is zero.
    pub pe: Option<f64>,
    pub rows: usize,
    pub excluded_zero: usize,
}

/// Mean absolute relative error per sector over `(sector, predicted, actual)` rows. Rows with a
/// zero actual are excluded and counted.
pub fn percent_error(rows: &[(SectorId, f64, f64)]) -> BTreeMap<SectorId, PercentError> {
    let mut acc: BTreeMap<SectorId, (f64, usize, usize)> = BTreeMap::new();
    for &(s, pred, actual) in rows {
        let e = acc.entry(s).or_default();
        if actual > 0.0 {
            e.0 += (actual - pred).abs() / actual;
            e.1 += 1;
        } else {
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(s, (sum, n, zero))| {
            let pe = (n > 0).then(|| sum / n as f64);
            (s, PercentError { pe, rows: n, excluded_zero: zero })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(day: i64, hour: u8, count: f64) -> HourlyCount {
        HourlyCount { sector: SectorId(1), day, hour, count }
    }

    #[test]
    fn slot_mean() {
        let s = SectorId(1);
        assert_eq!(historical_average_predict(&[rec(0, 17, 40.0)], s, 5, 17, HistoryMode::SlotMean), (40.0, false));
        let h = [rec(0, 17, 30.0), rec(1, 17, 50.0), rec(1, 16, 999.0)];
        assert_eq!(historical_average_predict(&h, s, 5, 17, HistoryMode::SlotMean), (40.0, false));
        assert_eq!(historical_average_predict(&h, SectorId(2), 5, 17, HistoryMode::SlotMean), (0.0, true));
    }

    #[test]
    fn previous_hour() {
        let s = SectorId(1);
        let h = [rec(3, 16, 12.0), rec(3, 17, 40.0), rec(2, 23, 7.0)];
        assert_eq!(historical_average_predict(&h, s, 3, 17, HistoryMode::PreviousHour), (12.0, false));
        assert_eq!(historical_average_predict(&h, s, 3, 0, HistoryMode::PreviousHour), (7.0, false));
        assert_eq!(historical_average_predict(&h, s, 4, 10, HistoryMode::PreviousHour), (0.0, true));
    }

    #[test]
    fn percent_errors() {
        let s = SectorId(0);
        assert_eq!(percent_error(&[(s, 5.0, 5.0), (s, 2.0, 2.0)])[&s].pe, Some(0.0));
        assert_eq!(percent_error(&[(s, 10.0, 5.0), (s, 4.0, 2.0)])[&s].pe, Some(1.0));
        // |10-8|/10 + |3-4|/4 + |0-5|/5 = 0.2 + 0.25 + 1.0 → mean 0.4833…
        let mixed = percent_error(&[(s, 8.0, 10.0), (s, 3.0, 4.0), (s, 0.0, 5.0), (s, 3.0, 0.0)]);
        assert!((mixed[&s].pe.unwrap() - 1.45 / 3.0).abs() < 1e-12);
        assert_eq!(mixed[&s].excluded_zero, 1);
        assert_eq!(percent_error(&[(s, 1.0, 0.0)])[&s].pe, None);
    }
}
