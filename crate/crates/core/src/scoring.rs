//! Proper scoring rules and point-error measures.
//!
//! Scores are negatively oriented (smaller is better) and carry the unit of
//! the observation, except the Brier and logarithmic scores which are
//! dimensionless. Every function here is pure.
//!
//! Two predictive families are supported: the parametric
//! [`GaussianPredictive`] produced by EMOS and the [`EmpiricalPredictive`]
//! of a raw ensemble. Both expose their CDF and quantile function through
//! [`PredictiveCdf`] and [`PredictiveQuantile`] so the threshold and
//! quantile scores apply to either.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn std_normal_quantile(p: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(p);
    if !z.is_finite() {
        return z;
    }
    // one Newton step takes statrs' ~1e-11 accuracy to rounding level
    let pdf = std_normal_pdf(z);
    if pdf > 0.0 {
        z - (std_normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPredictive {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::NonFinite("predictive mean/variance"));
        }
        if variance <= 0.0 {
            return Err(Error::NonPositiveVariance(variance));
        }
        Ok(Self { mean, variance })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Raw ensemble viewed as a discrete predictive distribution. Members are
/// kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPredictive {
    sorted: Vec<f64>,
}

impl EmpiricalPredictive {
    pub fn new(members: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut sorted: Vec<f64> = members.into_iter().collect();
        if sorted.is_empty() {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble member"));
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn sorted_members(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }
}

pub trait PredictiveCdf {
    fn cdf(&self, y: f64) -> f64;
}

pub trait PredictiveQuantile {
    /// `inf { y : F(y) >= tau }`.
    fn quantile(&self, tau: f64) -> f64;
}

impl PredictiveCdf for GaussianPredictive {
    fn cdf(&self, y: f64) -> f64 {
        std_normal_cdf((y - self.mean) / self.sd())
    }
}

impl PredictiveQuantile for GaussianPredictive {
    fn quantile(&self, tau: f64) -> f64 {
        self.mean + self.sd() * std_normal_quantile(tau)
    }
}

impl PredictiveCdf for EmpiricalPredictive {
    /// Fraction of members `<= y`.
    fn cdf(&self, y: f64) -> f64 {
        let count = self.sorted.partition_point(|&m| m <= y);
        count as f64 / self.sorted.len() as f64
    }
}

impl PredictiveQuantile for EmpiricalPredictive {
    fn quantile(&self, tau: f64) -> f64 {
        sorted_quantile(&self.sorted, tau)
    }
}

/// Rank `k = ceil(tau * n)` (1-based, clamped to `1..=n`) of the inverse-CDF
/// quantile rule. A relative guard absorbs rounding in `tau * n` so that
/// e.g. `0.1 * 30` selects rank 3.
pub fn quantile_rank(tau: f64, n: usize) -> usize {
    let x = tau * n as f64;
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Inverse-CDF quantile of ascending-sorted data: the `ceil(tau n)`-th
/// smallest value.
pub fn sorted_quantile(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    sorted[quantile_rank(tau, sorted.len()) - 1]
}

/// Sort a copy and take inverse-CDF quantiles at each level.
pub fn empirical_quantiles(values: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty series".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&t| sorted_quantile(&sorted, t)).collect())
}

/// Closed-form CRPS of a normal predictive distribution.
pub fn crps_gaussian(pred: &GaussianPredictive, obs: f64) -> Result<f64> {
    if !obs.is_finite() || !pred.mean.is_finite() || !pred.variance.is_finite() {
        return Err(Error::NonFinite("crps input"));
    }
    if pred.variance <= 0.0 {
        return Err(Error::NonPositiveVariance(pred.variance));
    }
    Ok(crps_normal(pred.mean, pred.sd(), obs))
}

/// Unchecked closed form used by the estimation inner loop.
#[inline]
pub(crate) fn crps_normal(mean: f64, sd: f64, obs: f64) -> f64 {
    let z = (obs - mean) / sd;
    let v = sd * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI);
    v.max(0.0)
}

/// Derivatives of the normal CRPS with respect to mean and standard deviation.
#[inline]
pub(crate) fn crps_normal_gradient(mean: f64, sd: f64, obs: f64) -> (f64, f64) {
    let z = (obs - mean) / sd;
    (
        1.0 - 2.0 * std_normal_cdf(z),
        2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI,
    )
}

/// CRPS of a raw ensemble:
/// `(1/M) Σ|f_i − x| − (1/2M²) ΣΣ|f_i − f_j|`, evaluated in `O(M)` over
/// the sorted members.
pub fn crps_empirical(pred: &EmpiricalPredictive, obs: f64) -> Result<f64> {
    if !obs.is_finite() {
        return Err(Error::NonFinite("observation"));
    }
    let m = pred.sorted.len() as f64;
    let mut abs_err = 0.0;
    // Σ_i Σ_j |f_i − f_j| = 2 Σ_i (2i − M − 1) f_(i) with 1-based ranks.
    let mut spread = 0.0;
    for (i, &f) in pred.sorted.iter().enumerate() {
        abs_err += (f - obs).abs();
        spread += (2.0 * (i as f64 + 1.0) - m - 1.0) * f;
    }
    Ok((abs_err / m - spread / (m * m)).max(0.0))
}

/// Negative log predictive density.
pub fn log_score_gaussian(pred: &GaussianPredictive, obs: f64) -> Result<f64> {
    if pred.variance <= 0.0 {
        return Err(Error::NonPositiveVariance(pred.variance));
    }
    let d = obs - pred.mean;
    Ok(0.5 * (2.0 * PI * pred.variance).ln() + d * d / (2.0 * pred.variance))
}

/// Brier score for the event `obs <= threshold`.
pub fn brier_score<F: PredictiveCdf + ?Sized>(pred: &F, obs: f64, threshold: f64) -> f64 {
    let p = pred.cdf(threshold);
    let event = if obs <= threshold { 1.0 } else { 0.0 };
    (p - event) * (p - event)
}

/// Pinball loss `ρ_τ(u)`.
pub fn pinball_loss(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

pub fn quantile_score<F: PredictiveQuantile + ?Sized>(pred: &F, obs: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("quantile level {tau} outside (0, 1)")));
    }
    Ok(pinball_loss(obs - pred.quantile(tau), tau))
}

/// `1 − score / score_ref`, applied to mean scores.
pub fn skill_score(score: f64, score_ref: f64) -> Result<f64> {
    if score_ref == 0.0 {
        return if score == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::UndefinedSkill(score))
        };
    }
    Ok(1.0 - score / score_ref)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointErrors {
    pub mae: f64,
    pub rmse: f64,
}

pub fn point_errors(point_forecasts: &[f64], obs: &[f64]) -> Result<PointErrors> {
    if point_forecasts.len() != obs.len() {
        return Err(Error::LengthMismatch {
            left: point_forecasts.len(),
            right: obs.len(),
        });
    }
    if obs.is_empty() {
        return Err(Error::InvalidInput("no cases".into()));
    }
    let n = obs.len() as f64;
    let (abs, sq) = point_forecasts
        .iter()
        .zip(obs)
        .fold((0.0, 0.0), |(a, s), (p, o)| {
            let e = p - o;
            (a + e.abs(), s + e * e)
        });
    Ok(PointErrors {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

/// Per-station climatological thresholds at the given probability levels.
pub fn climatology_thresholds(obs_series: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("levels must be sorted ascending".into()));
    }
    empirical_quantiles(obs_series, levels)
}

/// Threshold and quantile levels used in verification, as probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Climatological percentile levels of the Brier thresholds.
    pub bs_threshold_levels: Vec<f64>,
    /// Probability levels of the quantile scores.
    pub qs_levels: Vec<f64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            bs_threshold_levels: (1..=19).map(|i| f64::from(i * 5) / 100.0).collect(),
            qs_levels: vec![0.02, 0.05, 0.10, 0.20, 0.50, 0.80, 0.90, 0.95, 0.98],
        }
    }
}

impl ScoreConfig {
    /// Build from percentages (e.g. `5, 10, …, 95`).
    pub fn from_percent(bs_percent: &[f64], qs_percent: &[f64]) -> Result<Self> {
        let cfg = Self {
            bs_threshold_levels: bs_percent.iter().map(|p| p / 100.0).collect(),
            qs_levels: qs_percent.iter().map(|p| p / 100.0).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for levels in [&self.bs_threshold_levels, &self.qs_levels] {
            if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
                return Err(Error::Config("score levels must lie strictly in (0, 1)".into()));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("score levels must be strictly ascending".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(m: f64, v: f64) -> GaussianPredictive {
        GaussianPredictive::new(m, v).unwrap()
    }

    fn ens(m: &[f64]) -> EmpiricalPredictive {
        EmpiricalPredictive::new(m.iter().copied()).unwrap()
    }

    /// Trapezoid integration of (F(y) − 1{y ≥ x})², with the grid split at
    /// the observation.
    fn crps_quadrature(mean: f64, sd: f64, obs: f64) -> f64 {
        let lo = mean.min(obs) - 12.0 * sd;
        let hi = mean.max(obs) + 12.0 * sd;
        let seg = |a: f64, b: f64, above: bool| {
            let n = 20_000;
            let h = (b - a) / n as f64;
            let f = |y: f64| {
                let p = std_normal_cdf((y - mean) / sd);
                let ind = if above { 1.0 } else { 0.0 };
                (p - ind) * (p - ind)
            };
            let mut s = 0.5 * (f(a) + f(b));
            for i in 1..n {
                s += f(a + i as f64 * h);
            }
            s * h
        };
        seg(lo, obs, false) + seg(obs, hi, true)
    }

    #[test]
    fn crps_gaussian_at_mode_matches_quadrature() {
        let q = crps_quadrature(0.0, 1.0, 0.0);
        assert!((q - 0.233_695).abs() < 1e-6, "quadrature {q}");
        let c = crps_gaussian(&gauss(0.0, 1.0), 0.0).unwrap();
        assert!((c - q).abs() < 1e-7);
    }

    #[test]
    fn crps_gaussian_degenerate_and_symmetric() {
        let c = crps_gaussian(&gauss(2.0, 1e-18), 5.0).unwrap();
        assert!((c - 3.0).abs() < 1e-6);
        let a = crps_gaussian(&gauss(0.0, 1.0), 1.0).unwrap();
        let b = crps_gaussian(&gauss(0.0, 1.0), -1.0).unwrap();
        assert_eq!(a, b);
        assert!(crps_gaussian(&gauss(0.0, 1.0), f64::NAN).is_err());
    }

    #[test]
    fn crps_empirical_examples() {
        assert_eq!(crps_empirical(&ens(&[3.0]), 5.0).unwrap(), 2.0);
        assert!((crps_empirical(&ens(&[0.0, 2.0]), 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(crps_empirical(&ens(&[1.0, 1.0, 1.0]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empirical_predictive_rejects_empty_and_nan() {
        assert!(EmpiricalPredictive::new(Vec::<f64>::new()).is_err());
        assert!(EmpiricalPredictive::new([1.0, f64::NAN]).is_err());
    }

    #[test]
    fn log_score_examples() {
        let g = gauss(0.0, 1.0);
        let at_mode = log_score_gaussian(&g, 0.0).unwrap();
        assert!((at_mode - 0.918_938_533).abs() < 1e-8);
        assert!((log_score_gaussian(&g, 2.0).unwrap() - (at_mode + 2.0)).abs() < 1e-12);
        assert!(log_score_gaussian(&g, 1.0).unwrap() < log_score_gaussian(&g, 2.0).unwrap());
    }

    struct FixedCdf(f64);
    impl PredictiveCdf for FixedCdf {
        fn cdf(&self, _: f64) -> f64 {
            self.0
        }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&FixedCdf(1.0), 0.0, 1.0), 0.0);
        assert!((brier_score(&FixedCdf(0.3), 0.0, 1.0) - 0.49).abs() < 1e-15);
        // event is obs <= threshold
        assert_eq!(brier_score(&FixedCdf(0.0), 1.0, 1.0), 1.0);
        assert_eq!(brier_score(&ens(&[1.0, 2.0]), 5.0, 1.5), 0.25);
    }

    #[test]
    fn quantile_score_examples() {
        let g = gauss(10.0, 4.0);
        let q98 = g.quantile(0.98);
        assert!((quantile_score(&g, q98 - 1.0, 0.98).unwrap() - 0.02).abs() < 1e-12);
        for tau in [0.02, 0.5, 0.98] {
            assert_eq!(quantile_score(&g, g.quantile(tau), tau).unwrap(), 0.0);
        }
        assert!((quantile_score(&g, 13.0, 0.5).unwrap() - 1.5).abs() < 1e-12);
        assert!(quantile_score(&g, 0.0, 0.0).is_err());
        assert!(quantile_score(&g, 0.0, 1.0).is_err());
    }

    #[test]
    fn empirical_quantile_rule() {
        let e = ens(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(e.quantile(0.5), 3.0);
        assert_eq!(e.quantile(0.2), 1.0);
        assert_eq!(e.quantile(0.21), 2.0);
        assert_eq!(e.quantile(0.01), 1.0);
        assert_eq!(e.quantile(0.99), 5.0);
        assert_eq!(quantile_rank(0.1, 30), 3);
        assert_eq!(quantile_rank(0.7, 10), 7);
    }

    #[test]
    fn skill_examples() {
        assert_eq!(skill_score(0.08, 0.08).unwrap(), 0.0);
        assert_eq!(skill_score(0.0, 0.08).unwrap(), 1.0);
        assert!((skill_score(0.06, 0.08).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(skill_score(0.1, 0.0).unwrap_err().kind(), "undefined_skill");
    }

    #[test]
    fn point_error_examples() {
        let p = point_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((p.mae, p.rmse), (0.0, 0.0));
        let p = point_errors(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((p.mae, p.rmse), (1.0, 1.0));
        let p = point_errors(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p.mae, 1.0);
        assert!((p.rmse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_errors(&[1.0], &[]).unwrap_err().kind(), "length_mismatch");
    }

    #[test]
    fn climatology_examples() {
        let cfg = ScoreConfig::default();
        let t = climatology_thresholds(&[290.0; 20], &cfg.bs_threshold_levels).unwrap();
        assert!(t.iter().all(|&v| v == 290.0));
        let series: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(climatology_thresholds(&series, &[0.5]).unwrap(), vec![50.0]);
        let t = climatology_thresholds(&series, &[0.05, 0.10, 0.90, 0.95]).unwrap();
        assert!(t[0] <= t[1] && t[2] <= t[3]);
        assert!(climatology_thresholds(&[], &[0.5]).is_err());
        assert!(climatology_thresholds(&series, &[0.9, 0.1]).is_err());
    }

    #[test]
    fn default_score_config() {
        let cfg = ScoreConfig::default();
        assert_eq!(cfg.bs_threshold_levels.len(), 19);
        assert!((cfg.bs_threshold_levels[0] - 0.05).abs() < 1e-15);
        assert!((cfg.bs_threshold_levels[18] - 0.95).abs() < 1e-15);
        cfg.validate().unwrap();
        assert!(ScoreConfig::from_percent(&[0.0, 50.0], &[50.0]).is_err());
        assert!(ScoreConfig::from_percent(&[50.0, 10.0], &[50.0]).is_err());
    }

    #[test]
    fn gaussian_quantile_inverts_cdf() {
        let g = gauss(3.0, 2.5);
        for tau in [0.02, 0.2, 0.5, 0.8, 0.98] {
            let err = (g.cdf(g.quantile(tau)) - tau).abs();
            assert!(err < 1e-12, "{tau} {err}");
        }
    }
}
