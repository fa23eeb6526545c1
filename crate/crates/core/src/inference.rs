//! Inference on daily score series: Diebold-Mariano tests of equal
//! predictive performance and stationary block-bootstrap confidence
//! intervals.
//!
//! The DM statistic is
//!
//! ```text
//! DM = √n · d̄ / √(γ̂₀ + 2 Σ_{ℓ=1..L} γ̂_ℓ),   d_t = a_t − b_t,
//! ```
//!
//! with biased sample autocovariances `γ̂_ℓ` (divisor `n`) and a two-sided
//! p-value from the standard normal. When the truncated long-run variance is
//! not positive the estimator falls back to `γ̂₀` alone.
//!
//! The stationary bootstrap resamples by concatenating blocks that start at
//! uniform positions (wrapping circularly) and whose lengths are geometric
//! with the requested mean. Replicate `r` draws from ChaCha stream `r` of the
//! master seed, so serial and parallel runs agree bit for bit.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{sorted_quantile, std_normal_cdf};

/// Time-ordered daily scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub label: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(label: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: dates.len(),
                right: values.len(),
            });
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("score series dates must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score value"));
        }
        Ok(Self {
            label: label.into(),
            dates,
            values,
        })
    }

    /// Series over consecutive days starting at `start`.
    pub fn daily(label: impl Into<String>, start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        let dates = (0..values.len() as i64)
            .map(|i| start + chrono::Duration::days(i))
            .collect();
        Self::new(label, dates, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Pairs of values on dates present in both series.
    pub fn aligned_with(&self, other: &ScoreSeries) -> (Vec<f64>, Vec<f64>) {
        let other_by_date: BTreeMap<NaiveDate, f64> =
            other.dates.iter().copied().zip(other.values.iter().copied()).collect();
        self.dates
            .iter()
            .zip(&self.values)
            .filter_map(|(d, &a)| other_by_date.get(d).map(|&b| (a, b)))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DmFlag {
    Ok,
    DegenerateZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub flag: DmFlag,
}

pub const DM_MIN_SAMPLE: usize = 10;

/// DM test on two date-aligned score series.
pub fn dm_test(series_a: &ScoreSeries, series_b: &ScoreSeries, max_lag: usize) -> Result<DmResult> {
    if series_a.dates != series_b.dates {
        return Err(Error::Misaligned(format!(
            "{:?} and {:?} cover different dates",
            series_a.label, series_b.label
        )));
    }
    dm_test_values(&series_a.values, &series_b.values, max_lag)
}

/// DM test on paired values.
pub fn dm_test_values(a: &[f64], b: &[f64], max_lag: usize) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < DM_MIN_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "DM test needs at least {DM_MIN_SAMPLE} pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            n,
            flag: DmFlag::DegenerateZeroVariance,
        });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 {
        (lag..n).map(|t| (d[t] - mean) * (d[t - lag] - mean)).sum::<f64>() / nf
    };
    let gamma0 = autocov(0);
    let mut lrv = gamma0;
    for lag in 1..=max_lag.min(n - 1) {
        lrv += 2.0 * autocov(lag);
    }
    if lrv <= 0.0 {
        lrv = gamma0;
    }
    if lrv <= 0.0 {
        // constant nonzero difference
        let statistic = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(DmResult {
            statistic,
            p_value: if mean == 0.0 { 1.0 } else { 0.0 },
            n,
            flag: DmFlag::DegenerateZeroVariance,
        });
    }
    let statistic = nf.sqrt() * mean / lrv.sqrt();
    let p_value = (2.0 * (1.0 - std_normal_cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(DmResult {
        statistic,
        p_value,
        n,
        flag: DmFlag::Ok,
    })
}

/// Default DM truncation lag for a lead time in days: `lead − 1`.
pub fn default_max_lag(lead_days: u32) -> usize {
    lead_days.saturating_sub(1) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
    pub mean_block_length: f64,
}

pub const BOOTSTRAP_MIN_LENGTH: usize = 5;
pub const BOOTSTRAP_MIN_REPLICATES: usize = 100;

/// Default mean block length `⌈n^(1/3)⌉`.
pub fn default_mean_block_length(n: usize) -> f64 {
    let cube = (n as f64).cbrt();
    // guard against cbrt(27) = 3.0000000000000004
    (cube - 1e-9).ceil().max(1.0)
}

/// One stationary-bootstrap resample of positions `0..n`.
pub fn stationary_bootstrap_indices<R: Rng>(n: usize, mean_block_length: f64, rng: &mut R) -> Vec<usize> {
    let p = 1.0 / mean_block_length;
    let mut idx = Vec::with_capacity(n);
    let mut cur = rng.random_range(0..n);
    idx.push(cur);
    for _ in 1..n {
        cur = if rng.random::<f64>() < p {
            rng.random_range(0..n)
        } else {
            (cur + 1) % n
        };
        idx.push(cur);
    }
    idx
}

/// Percentile interval of `statistic` over stationary-bootstrap resamples.
///
/// `statistic` receives resampled positions into the caller's data; `point`
/// is the statistic on the original sample. The interval is widened to
/// contain `point` when the percentile interval would exclude it.
pub fn stationary_bootstrap<F>(
    n: usize,
    statistic: F,
    point: f64,
    replicates: usize,
    mean_block_length: f64,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n < BOOTSTRAP_MIN_LENGTH {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs a series of length >= {BOOTSTRAP_MIN_LENGTH}, got {n}"
        )));
    }
    if replicates < BOOTSTRAP_MIN_REPLICATES {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs >= {BOOTSTRAP_MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    if !(mean_block_length.is_finite() && mean_block_length >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "mean block length {mean_block_length} must be >= 1"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let mut stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let idx = stationary_bootstrap_indices(n, mean_block_length, &mut rng);
            statistic(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lower = sorted_quantile(&stats, alpha / 2.0).min(point);
    let upper = sorted_quantile(&stats, 1.0 - alpha / 2.0).max(point);
    Ok(BootstrapCi {
        point,
        lower,
        upper,
        level,
        replicates,
        mean_block_length,
    })
}

/// Functionals of score series supported by [`stationary_bootstrap_ci`].
#[derive(Debug, Clone, Copy)]
pub enum Functional<'a> {
    Mean(&'a ScoreSeries),
    /// Mean of `a − b`; both series are resampled at the same days.
    MeanDifference(&'a ScoreSeries, &'a ScoreSeries),
}

pub fn stationary_bootstrap_ci(
    functional: Functional<'_>,
    replicates: usize,
    mean_block_length: f64,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    let values: Vec<f64> = match functional {
        Functional::Mean(s) => s.values.clone(),
        Functional::MeanDifference(a, b) => {
            if a.dates != b.dates {
                return Err(Error::Misaligned(format!(
                    "{:?} and {:?} cover different dates",
                    a.label, b.label
                )));
            }
            a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect()
        }
    };
    let n = values.len();
    let point = values.iter().sum::<f64>() / n as f64;
    stationary_bootstrap(
        n,
        |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64,
        point,
        replicates,
        mean_block_length,
        level,
        seed,
    )
}

/// Stations dropped from a pairwise comparison below this many aligned days.
pub const SIGNIFICANCE_MIN_PAIRS: usize = 20;

/// Pairwise proportions of stations whose DM test rejects equal performance.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub configurations: Vec<String>,
    /// `proportions[i][j]`: share of tested stations rejecting at `level`.
    pub proportions: Vec<Vec<f64>>,
    /// Stations with enough aligned days for each pair.
    pub tested: Vec<Vec<usize>>,
    pub level: f64,
}

/// `series_by_config`: configuration → station → daily score series.
pub fn significance_matrix(
    series_by_config: &BTreeMap<String, BTreeMap<String, ScoreSeries>>,
    level: f64,
    max_lag: usize,
) -> Result<SignificanceMatrix> {
    let configurations: Vec<String> = series_by_config.keys().cloned().collect();
    let k = configurations.len();
    let mut proportions = vec![vec![0.0; k]; k];
    let mut tested = vec![vec![0usize; k]; k];
    if let Some(first) = series_by_config.values().next() {
        for (name, stations) in series_by_config {
            if stations.len() != first.len() || stations.keys().ne(first.keys()) {
                return Err(Error::Misaligned(format!(
                    "configuration {name:?} covers a different station set"
                )));
            }
        }
    }
    let all: Vec<&BTreeMap<String, ScoreSeries>> = series_by_config.values().collect();
    for i in 0..k {
        for j in (i + 1)..k {
            let mut rejected = 0usize;
            let mut count = 0usize;
            for (station, sa) in all[i] {
                let sb = &all[j][station];
                let (a, b) = sa.aligned_with(sb);
                if a.len() < SIGNIFICANCE_MIN_PAIRS {
                    continue;
                }
                count += 1;
                if dm_test_values(&a, &b, max_lag)?.p_value < level {
                    rejected += 1;
                }
            }
            let p = if count == 0 { 0.0 } else { rejected as f64 / count as f64 };
            proportions[i][j] = p;
            proportions[j][i] = p;
            tested[i][j] = count;
            tested[j][i] = count;
        }
    }
    Ok(SignificanceMatrix {
        configurations,
        proportions,
        tested,
        level,
    })
}
