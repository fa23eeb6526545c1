//! Per-station comparison of two member groups at equal ensemble size.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{csv_err, csv_writer, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StationDiagnostic {
    pub station_id: String,
    pub n_cases: usize,
    /// Mean ensemble-mean forecast, high minus low (K).
    pub mean_diff: f64,
    /// Mean ensemble variance, high minus low (K²).
    pub variance_diff: f64,
    /// RMSE of the ensemble mean, high minus low (K).
    pub rmse_diff: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[derive(Default)]
struct Acc {
    n: usize,
    mean: [f64; 2],
    var: [f64; 2],
    sq: [f64; 2],
}

/// Compare groups `high` and `low` station by station over every forecast
/// with a matching observation, both cut to their first `equal_size`
/// members. `lead_days` restricts to one lead time.
pub fn station_diagnostics(
    dataset: &Dataset,
    groups: (&str, &str),
    equal_size: usize,
    lead_days: Option<u32>,
) -> Result<Vec<StationDiagnostic>> {
    if equal_size < 2 {
        return Err(Error::InvalidInput(format!(
            "equal_size must be at least 2 for an ensemble variance, got {equal_size}"
        )));
    }
    let mut acc: BTreeMap<usize, Acc> = BTreeMap::new();
    for f in dataset.forecasts() {
        if lead_days.is_some_and(|l| l != f.lead_days) {
            continue;
        }
        let Some(obs) = dataset.observation(&f.station_id, f.valid_time()) else {
            continue;
        };
        let mut stats = [(0.0, 0.0); 2];
        for (slot, label) in [groups.0, groups.1].into_iter().enumerate() {
            let g = f.group(label).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "forecast {}/{} has no group {label:?}",
                    f.station_id, f.init_time
                ))
            })?;
            if g.members.len() < equal_size {
                return Err(Error::InvalidInput(format!(
                    "group {label:?} of forecast {}/{} has {} members, {equal_size} needed",
                    f.station_id,
                    f.init_time,
                    g.members.len()
                )));
            }
            stats[slot] = mean_var(&g.members[..equal_size]);
        }
        let pos = dataset.station_position(&f.station_id).expect("dataset stations are indexed");
        let a = acc.entry(pos).or_default();
        a.n += 1;
        for (s, (m, v)) in stats.into_iter().enumerate() {
            a.mean[s] += m;
            a.var[s] += v;
            a.sq[s] += (m - obs).powi(2);
        }
    }
    if acc.is_empty() {
        return Err(Error::InvalidInput("no forecast-observation pairs to compare".into()));
    }
    Ok(acc
        .into_iter()
        .map(|(pos, a)| {
            let n = a.n as f64;
            StationDiagnostic {
                station_id: dataset.stations()[pos].station_id.clone(),
                n_cases: a.n,
                mean_diff: (a.mean[0] - a.mean[1]) / n,
                variance_diff: (a.var[0] - a.var[1]) / n,
                rmse_diff: (a.sq[0] / n).sqrt() - (a.sq[1] / n).sqrt(),
            }
        })
        .collect())
}

pub fn write_station_diagnostics(path: &Path, rows: &[StationDiagnostic]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["station_id", "n_cases", "mean_diff_k", "variance_diff_k2", "rmse_diff_k"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.station_id.clone(),
            r.n_cases.to_string(),
            r.mean_diff.to_string(),
            r.variance_diff.to_string(),
            r.rmse_diff.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
