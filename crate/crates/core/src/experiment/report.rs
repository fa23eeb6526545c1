//! CSV report files and their readers.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;

use super::{
    ClusterRecord, ConfigurationId, DailyRow, ExperimentOutput, Metric, MetricKind, Prediction,
    ScoreTable, SummaryRow,
};
use crate::data::{csv_err, csv_writer, CsvRows, Row};
use crate::emos::write_parameter_records;
use crate::error::{Error, Result};
use crate::inference::SignificanceMatrix;
use crate::selection::{write_centroids, write_cluster_assignment};
use crate::synth::Mixture;

const SCORES_HEADER: &[&str] = &[
    "m_low",
    "m_high",
    "method",
    "lead_days",
    "metric",
    "level",
    "mean",
    "ci_lower",
    "ci_upper",
    "skill",
    "skill_lower",
    "skill_upper",
    "diff",
    "diff_lower",
    "diff_upper",
    "dm_statistic",
    "dm_p_value",
    "n_cases",
    "n_days",
];

const DAILY_HEADER: &[&str] = &[
    "m_low", "m_high", "method", "lead_days", "date", "metric", "level", "value", "n_cases",
];

const PREDICTIONS_HEADER: &[&str] = &[
    "m_low",
    "m_high",
    "method",
    "lead_days",
    "station_id",
    "init_date",
    "observation",
    "mean",
    "variance",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn config_cells(c: &ConfigurationId) -> [String; 3] {
    [
        c.mixture.m_low.to_string(),
        c.mixture.m_high.to_string(),
        c.method.to_string(),
    ]
}

fn parse_config(row: &Row<'_>) -> Result<ConfigurationId> {
    Ok(ConfigurationId {
        mixture: Mixture::new(row.parse(0, "m_low")?, row.parse(1, "m_high")?),
        method: row.parse(2, "method")?,
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_scores_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(
        path,
        SCORES_HEADER,
        rows.iter().map(|r| {
            let mut v = config_cells(&r.configuration).to_vec();
            v.extend([
                r.lead_days.to_string(),
                r.metric.kind.to_string(),
                opt(r.metric.level),
                r.mean.to_string(),
                r.ci_lower.to_string(),
                r.ci_upper.to_string(),
                r.skill.to_string(),
                r.skill_lower.to_string(),
                r.skill_upper.to_string(),
                r.diff.to_string(),
                r.diff_lower.to_string(),
                r.diff_upper.to_string(),
                opt(r.dm_statistic),
                opt(r.dm_p_value),
                r.n_cases.to_string(),
                r.n_days.to_string(),
            ]);
            v
        }),
    )
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut out = Vec::new();
    CsvRows::open(path, SCORES_HEADER)?.for_each(|row| {
        let num = |i, name| {
            row.opt_f64(i, name)?
                .ok_or_else(|| row.error(format!("missing {name}")))
        };
        out.push(SummaryRow {
            configuration: parse_config(row)?,
            lead_days: row.parse(3, "lead_days")?,
            metric: Metric {
                kind: row.parse::<MetricKind>(4, "metric")?,
                level: row.opt_f64(5, "level")?,
            },
            mean: num(6, "mean")?,
            ci_lower: num(7, "ci_lower")?,
            ci_upper: num(8, "ci_upper")?,
            skill: num(9, "skill")?,
            skill_lower: num(10, "skill_lower")?,
            skill_upper: num(11, "skill_upper")?,
            diff: num(12, "diff")?,
            diff_lower: num(13, "diff_lower")?,
            diff_upper: num(14, "diff_upper")?,
            dm_statistic: row.opt_f64(15, "dm_statistic")?,
            dm_p_value: row.opt_f64(16, "dm_p_value")?,
            n_cases: row.parse(17, "n_cases")?,
            n_days: row.parse(18, "n_days")?,
        });
        Ok(())
    })?;
    Ok(out)
}

fn write_daily_csv(path: &Path, rows: &[DailyRow]) -> Result<()> {
    write_rows(
        path,
        DAILY_HEADER,
        rows.iter().map(|r| {
            let mut v = config_cells(&r.configuration).to_vec();
            v.extend([
                r.lead_days.to_string(),
                r.date.to_string(),
                r.metric.kind.to_string(),
                opt(r.metric.level),
                r.value.to_string(),
                r.n_cases.to_string(),
            ]);
            v
        }),
    )
}

pub fn read_daily_scores_csv(path: &Path) -> Result<Vec<DailyRow>> {
    let mut out = Vec::new();
    CsvRows::open(path, DAILY_HEADER)?.for_each(|row| {
        out.push(DailyRow {
            configuration: parse_config(row)?,
            lead_days: row.parse(3, "lead_days")?,
            date: row.parse::<NaiveDate>(4, "date")?,
            metric: Metric {
                kind: row.parse(5, "metric")?,
                level: row.opt_f64(6, "level")?,
            },
            value: row.f64(7, "value")?,
            n_cases: row.parse(8, "n_cases")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Re-read `scores.csv` and `daily_scores.csv` from a report directory.
pub fn read_score_table(dir: &Path) -> Result<ScoreTable> {
    Ok(ScoreTable {
        summary: read_scores_csv(&dir.join("scores.csv"))?,
        daily: read_daily_scores_csv(&dir.join("daily_scores.csv"))?,
    })
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_rows(
        path,
        PREDICTIONS_HEADER,
        predictions.iter().map(|p| {
            let mut v = config_cells(&p.configuration).to_vec();
            v.extend([
                p.lead_days.to_string(),
                p.station_id.clone(),
                p.init_date.to_string(),
                p.observation.to_string(),
                p.mean.to_string(),
                p.variance.to_string(),
            ]);
            v
        }),
    )
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    CsvRows::open(path, PREDICTIONS_HEADER)?.for_each(|row| {
        out.push(Prediction {
            configuration: parse_config(row)?,
            lead_days: row.parse(3, "lead_days")?,
            station_id: row.str(4, "station_id")?.to_string(),
            init_date: row.parse(5, "init_date")?,
            observation: row.f64(6, "observation")?,
            mean: row.f64(7, "mean")?,
            variance: row.f64(8, "variance")?,
        });
        Ok(())
    })?;
    Ok(out)
}

fn percent_label(level: f64) -> String {
    let p = level * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

fn configurations(rows: &[SummaryRow]) -> Vec<ConfigurationId> {
    let mut seen = BTreeSet::new();
    rows.iter()
        .filter(|r| seen.insert(r.configuration))
        .map(|r| r.configuration)
        .collect()
}

/// Wide layout: one row per configuration, CRPS, RMSE and every QS level per
/// lead time, three decimals.
fn write_table2(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let leads: BTreeSet<u32> = rows.iter().map(|r| r.lead_days).collect();
    let mut qs: Vec<f64> = Vec::new();
    for r in rows {
        if let (MetricKind::Qs, Some(l)) = (r.metric.kind, r.metric.level) {
            if !qs.contains(&l) {
                qs.push(l);
            }
        }
    }
    let mut metrics = vec![
        Metric {
            kind: MetricKind::Crps,
            level: None,
        },
        Metric {
            kind: MetricKind::Rmse,
            level: None,
        },
    ];
    metrics.extend(qs.iter().map(|&l| Metric {
        kind: MetricKind::Qs,
        level: Some(l),
    }));
    let name = |m: &Metric| match m.level {
        Some(l) => format!("{}{}", m.kind, percent_label(l)),
        None => m.kind.to_string(),
    };
    let mut header = vec!["mixture".to_string(), "method".to_string()];
    for l in &leads {
        header.extend(metrics.iter().map(|m| format!("{}_day{l}", name(m))));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let body = configurations(rows).into_iter().map(|c| {
        let mut v = vec![c.mixture.to_string(), c.method.label()];
        for &l in &leads {
            for m in &metrics {
                v.push(
                    rows.iter()
                        .find(|r| r.configuration == c && r.lead_days == l && r.metric == *m)
                        .map(|r| format!("{:.3}", r.mean))
                        .unwrap_or_default(),
                );
            }
        }
        v
    });
    write_rows(path, &header_refs, body)
}

fn select(rows: &[SummaryRow], kind: MetricKind) -> impl Iterator<Item = &SummaryRow> {
    rows.iter().filter(move |r| r.metric.kind == kind)
}

fn write_lead_curve(path: &Path, rows: &[SummaryRow], kind: MetricKind, diff: bool) -> Result<()> {
    let value = if diff { "diff" } else { "mean" };
    let header = [
        "m_low",
        "m_high",
        "method",
        "lead_days",
        value,
        "ci_lower",
        "ci_upper",
        "dm_statistic",
        "dm_p_value",
    ];
    write_rows(
        path,
        &header,
        select(rows, kind).map(|r| {
            let mut v = config_cells(&r.configuration).to_vec();
            let (x, lo, hi) = if diff {
                (r.diff, r.diff_lower, r.diff_upper)
            } else {
                (r.mean, r.ci_lower, r.ci_upper)
            };
            v.extend([
                r.lead_days.to_string(),
                x.to_string(),
                lo.to_string(),
                hi.to_string(),
                opt(r.dm_statistic),
                opt(r.dm_p_value),
            ]);
            v
        }),
    )
}

fn write_skill(path: &Path, rows: &[SummaryRow], kind: MetricKind) -> Result<()> {
    let header = [
        "m_low",
        "m_high",
        "method",
        "lead_days",
        "level",
        "score",
        "skill",
        "skill_lower",
        "skill_upper",
        "diff",
        "diff_lower",
        "diff_upper",
        "dm_p_value",
    ];
    write_rows(
        path,
        &header,
        select(rows, kind).map(|r| {
            let mut v = config_cells(&r.configuration).to_vec();
            v.extend([
                r.lead_days.to_string(),
                opt(r.metric.level),
                r.mean.to_string(),
                r.skill.to_string(),
                r.skill_lower.to_string(),
                r.skill_upper.to_string(),
                r.diff.to_string(),
                r.diff_lower.to_string(),
                r.diff_upper.to_string(),
                opt(r.dm_p_value),
            ]);
            v
        }),
    )
}

pub fn write_significance_matrix(path: &Path, m: &SignificanceMatrix) -> Result<()> {
    let mut header = vec!["configuration"];
    header.extend(m.configurations.iter().map(String::as_str));
    write_rows(
        path,
        &header,
        m.configurations.iter().zip(&m.proportions).map(|(c, row)| {
            let mut v = vec![c.clone()];
            v.extend(row.iter().map(f64::to_string));
            v
        }),
    )
}

fn write_clusters(dir: &Path, clusters: &[ClusterRecord]) -> Result<()> {
    for c in clusters {
        let stem = format!("clusters_lead{}_{}d_k{}", c.lead_days, c.n_days, c.assignment.k);
        write_cluster_assignment(&dir.join(format!("{stem}.csv")), &c.assignment)?;
        write_centroids(&dir.join(format!("{stem}_centroids.csv")), &c.assignment)?;
    }
    Ok(())
}

/// Write every report file of a finished run into `dir`, creating it.
pub fn emit_reports(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    let rows = &output.table.summary;
    if rows.is_empty() {
        return Err(Error::InvalidInput("score table is empty".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scores_csv(&dir.join("scores.csv"), rows)?;
    write_daily_csv(&dir.join("daily_scores.csv"), &output.table.daily)?;
    write_table2(&dir.join("table2.csv"), rows)?;
    write_lead_curve(&dir.join("crps_vs_lead.csv"), rows, MetricKind::Crps, false)?;
    write_lead_curve(&dir.join("crps_diff_vs_lead.csv"), rows, MetricKind::Crps, true)?;
    write_lead_curve(&dir.join("rmse_diff.csv"), rows, MetricKind::Rmse, true)?;
    write_skill(&dir.join("bss.csv"), rows, MetricKind::Bs)?;
    write_skill(&dir.join("qss.csv"), rows, MetricKind::Qs)?;
    for (lead, m) in &output.significance {
        write_significance_matrix(&dir.join(format!("significance_matrix_lead{lead}.csv")), m)?;
    }
    let cal = &output.calibration;
    if !cal.predictions.is_empty() {
        write_predictions_csv(&dir.join("predictions.csv"), &cal.predictions)?;
    }
    if !cal.parameters.is_empty() {
        write_parameter_records(&dir.join("parameters.jsonl"), &cal.parameters)?;
    }
    write_clusters(dir, &cal.clusters)
}
