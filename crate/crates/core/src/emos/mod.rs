//! Ensemble model output statistics: Gaussian predictive models linking the
//! ensemble to a normal distribution, and minimum-CRPS estimation of their
//! coefficients over a training window.
//!
//! Every variant predicts `N(mean, variance)` with an affine mean in the
//! ensemble forecasts and an affine variance in the ensemble spread:
//!
//! | variant                | mean                     | variance                  |
//! |------------------------|--------------------------|---------------------------|
//! | `NonExchangeable`      | `a + Σ_i b_i f_i`        | `c + d S²`                |
//! | `Grouped`              | `a + Σ_k b_k f̄_k`        | `c + d S²`                |
//! | `Dual`                 | `a + b_H f̄_H + b_L f̄_L`  | `c + d S²`                |
//! | `DualSplitVariance`    | `a + b_H f̄_H + b_L f̄_L`  | `c + d_H S_H² + d_L S_L²` |
//!
//! `S²` is the sample variance (divisor `M − 1`) of the pooled members.
//! A group missing from a forecast (e.g. the low-resolution group of a pure
//! high-resolution configuration) contributes nothing: its coefficient is
//! held at zero.

mod optim;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use optim::{nelder_mead, Minimum, NelderMeadOptions};

use crate::data::{GroupedEnsembleForecast, TrainingWindow};
use crate::error::{Error, Result};
use crate::scoring::{crps_gaussian, crps_normal, crps_normal_gradient, GaussianPredictive};

/// Variance floor added during estimation (K²).
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VariantTag {
    NonExchangeable,
    Grouped,
    Dual,
    DualSplitVariance,
}

impl std::fmt::Display for VariantTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariantTag::NonExchangeable => "NON_EXCHANGEABLE",
            VariantTag::Grouped => "GROUPED",
            VariantTag::Dual => "DUAL",
            VariantTag::DualSplitVariance => "DUAL_SPLIT_VARIANCE",
        })
    }
}

impl std::str::FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NON_EXCHANGEABLE" => Ok(VariantTag::NonExchangeable),
            "GROUPED" => Ok(VariantTag::Grouped),
            "DUAL" => Ok(VariantTag::Dual),
            "DUAL_SPLIT_VARIANCE" => Ok(VariantTag::DualSplitVariance),
            other => Err(Error::Config(format!("unknown EMOS variant {other:?}"))),
        }
    }
}

/// Model variant together with the group labels its coefficients refer to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmosVariant {
    /// One coefficient per member, in pooled group order.
    NonExchangeable,
    Grouped { labels: Vec<String> },
    Dual { high: String, low: String },
    DualSplitVariance { high: String, low: String },
}

impl EmosVariant {
    pub fn from_tag(tag: VariantTag, labels: &[String]) -> Result<Self> {
        let pair = || -> Result<(String, String)> {
            match labels {
                [h, l] if h != l => Ok((h.clone(), l.clone())),
                _ => Err(Error::Config(format!(
                    "{tag} needs exactly two distinct group labels, got {labels:?}"
                ))),
            }
        };
        Ok(match tag {
            VariantTag::NonExchangeable => EmosVariant::NonExchangeable,
            VariantTag::Grouped => {
                if labels.is_empty() {
                    return Err(Error::Config("GROUPED needs at least one group".into()));
                }
                EmosVariant::Grouped {
                    labels: labels.to_vec(),
                }
            }
            VariantTag::Dual => {
                let (high, low) = pair()?;
                EmosVariant::Dual { high, low }
            }
            VariantTag::DualSplitVariance => {
                let (high, low) = pair()?;
                EmosVariant::DualSplitVariance { high, low }
            }
        })
    }

    pub fn tag(&self) -> VariantTag {
        match self {
            EmosVariant::NonExchangeable => VariantTag::NonExchangeable,
            EmosVariant::Grouped { .. } => VariantTag::Grouped,
            EmosVariant::Dual { .. } => VariantTag::Dual,
            EmosVariant::DualSplitVariance { .. } => VariantTag::DualSplitVariance,
        }
    }

    /// Group labels addressed by the mean coefficients; empty for
    /// `NonExchangeable`.
    pub fn labels(&self) -> Vec<&str> {
        match self {
            EmosVariant::NonExchangeable => Vec::new(),
            EmosVariant::Grouped { labels } => labels.iter().map(String::as_str).collect(),
            EmosVariant::Dual { high, low } | EmosVariant::DualSplitVariance { high, low } => {
                vec![high.as_str(), low.as_str()]
            }
        }
    }

    fn variance_terms(&self) -> usize {
        match self {
            EmosVariant::DualSplitVariance { .. } => 2,
            _ => 1,
        }
    }
}

/// Ensemble statistics entering the predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub labels: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub group_means: Vec<f64>,
    /// Per-group sample variance; 0 for singleton groups.
    pub group_variances: Vec<f64>,
    pub pooled_mean: f64,
    /// Sample variance of all members about the pooled mean.
    pub pooled_variance: f64,
    pub members: Vec<f64>,
}

impl EnsembleSummary {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    fn group_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

pub fn summarize(forecast: &GroupedEnsembleForecast) -> Result<EnsembleSummary> {
    let members: Vec<f64> = forecast.members().collect();
    if members.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ensemble variance needs at least two members, forecast {}/{} has {}",
            forecast.station_id,
            forecast.init_time,
            members.len()
        )));
    }
    let (pooled_mean, pooled_variance) = mean_and_variance(&members);
    let mut summary = EnsembleSummary {
        labels: Vec::with_capacity(forecast.groups.len()),
        group_sizes: Vec::with_capacity(forecast.groups.len()),
        group_means: Vec::with_capacity(forecast.groups.len()),
        group_variances: Vec::with_capacity(forecast.groups.len()),
        pooled_mean,
        pooled_variance,
        members,
    };
    for g in &forecast.groups {
        if g.members.is_empty() {
            return Err(Error::InvalidInput(format!("group {:?} is empty", g.label)));
        }
        let (m, v) = mean_and_variance(&g.members);
        summary.labels.push(g.label.clone());
        summary.group_sizes.push(g.members.len());
        summary.group_means.push(m);
        summary.group_variances.push(v);
    }
    Ok(summary)
}

/// Identifies the data a parameter set was estimated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub target_init: NaiveDate,
    pub lead_days: u32,
    pub length_days: u32,
    pub cases: usize,
}

impl From<&TrainingWindow> for WindowDescriptor {
    fn from(w: &TrainingWindow) -> Self {
        Self {
            target_init: w.target_init,
            lead_days: w.lead_days,
            length_days: w.length_days,
            cases: w.cases.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Mean CRPS at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// `false` when the iteration budget ran out first.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosParameters {
    pub variant: EmosVariant,
    pub a: f64,
    /// One entry per member (`NonExchangeable`) or per variant label.
    pub b: Vec<f64>,
    pub c: f64,
    /// `[d]`, or `[d_H, d_L]` for `DualSplitVariance`.
    pub d: Vec<f64>,
    pub trained_on: Option<WindowDescriptor>,
    pub diagnostics: Option<FitDiagnostics>,
}

impl EmosParameters {
    /// Parameters with no provenance, checked for shape and finiteness.
    pub fn new(variant: EmosVariant, a: f64, b: Vec<f64>, c: f64, d: Vec<f64>) -> Result<Self> {
        let p = Self {
            variant,
            a,
            b,
            c,
            d,
            trained_on: None,
            diagnostics: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.len() != self.variant.variance_terms() {
            return Err(Error::InvalidInput(format!(
                "{} expects {} variance coefficients, got {}",
                self.variant.tag(),
                self.variant.variance_terms(),
                self.d.len()
            )));
        }
        let nb = self.variant.labels().len();
        if self.variant != EmosVariant::NonExchangeable && self.b.len() != nb {
            return Err(Error::InvalidInput(format!(
                "{} expects {nb} mean coefficients, got {}",
                self.variant.tag(),
                self.b.len()
            )));
        }
        let all = std::iter::once(self.a)
            .chain(self.b.iter().copied())
            .chain(std::iter::once(self.c))
            .chain(self.d.iter().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EMOS parameter"));
        }
        Ok(())
    }

    /// Flat coefficient list `a, b…, c, d…`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.b.len() + self.d.len() + 2);
        v.push(self.a);
        v.extend(&self.b);
        v.push(self.c);
        v.extend(&self.d);
        v
    }

    /// Inverse of [`coefficients`](Self::coefficients).
    pub fn from_coefficients(variant: EmosVariant, coefficients: &[f64]) -> Result<Self> {
        let nd = variant.variance_terms();
        if coefficients.len() < 2 + nd {
            return Err(Error::InvalidInput("coefficient list too short".into()));
        }
        let nb = coefficients.len() - 2 - nd;
        Self::new(
            variant,
            coefficients[0],
            coefficients[1..1 + nb].to_vec(),
            coefficients[1 + nb],
            coefficients[2 + nb..].to_vec(),
        )
    }
}

fn predictive_moments(params: &EmosParameters, summary: &EnsembleSummary) -> Result<(f64, f64)> {
    let mut mean = params.a;
    match &params.variant {
        EmosVariant::NonExchangeable => {
            if params.b.len() != summary.members.len() {
                return Err(Error::InvalidInput(format!(
                    "{} member coefficients for {} members",
                    params.b.len(),
                    summary.members.len()
                )));
            }
            for (b, f) in params.b.iter().zip(&summary.members) {
                mean += b * f;
            }
        }
        variant => {
            for (b, label) in params.b.iter().zip(variant.labels()) {
                if let Some(k) = summary.group_index(label) {
                    mean += b * summary.group_means[k];
                }
            }
        }
    }
    let variance = match &params.variant {
        EmosVariant::DualSplitVariance { high, low } => {
            let term = |label: &str, d: f64| {
                summary
                    .group_index(label)
                    .map_or(0.0, |k| d * summary.group_variances[k])
            };
            params.c + term(high, params.d[0]) + term(low, params.d[1])
        }
        _ => params.c + params.d[0] * summary.pooled_variance,
    };
    Ok((mean, variance))
}

/// Predictive normal distribution for one forecast case.
pub fn predictive(params: &EmosParameters, summary: &EnsembleSummary) -> Result<GaussianPredictive> {
    let (mean, variance) = predictive_moments(params, summary)?;
    if !mean.is_finite() || !variance.is_finite() {
        return Err(Error::NonFinite("predictive moments"));
    }
    if variance <= 0.0 {
        return Err(Error::NonPositiveVariance(variance));
    }
    Ok(GaussianPredictive { mean, variance })
}

/// Mean CRPS of the predictive distributions over the window's cases.
pub fn mean_crps_objective(params: &EmosParameters, window: &TrainingWindow) -> Result<f64> {
    if window.cases.is_empty() {
        return Err(Error::InvalidInput("empty training window".into()));
    }
    let mut total = 0.0;
    for case in &window.cases {
        let pred = predictive(params, &summarize(&case.forecast)?)?;
        total += crps_gaussian(&pred, case.observation)?;
    }
    Ok(total / window.cases.len() as f64)
}

/// Gradient of [`mean_crps_objective`] with respect to the natural
/// coefficients, laid out like [`EmosParameters::coefficients`].
pub fn mean_crps_gradient(params: &EmosParameters, window: &TrainingWindow) -> Result<Vec<f64>> {
    let nb = params.b.len();
    let nd = params.d.len();
    let mut grad = vec![0.0; nb + nd + 2];
    for case in &window.cases {
        let s = summarize(&case.forecast)?;
        let pred = predictive(params, &s)?;
        let sd = pred.sd();
        let (d_mean, d_sd) = crps_normal_gradient(pred.mean, sd, case.observation);
        // variance enters through sd = sqrt(var)
        let d_var = d_sd / (2.0 * sd);
        grad[0] += d_mean;
        match &params.variant {
            EmosVariant::NonExchangeable => {
                for (g, f) in grad[1..=nb].iter_mut().zip(&s.members) {
                    *g += d_mean * f;
                }
            }
            variant => {
                for (j, label) in variant.labels().into_iter().enumerate() {
                    if let Some(k) = s.group_index(label) {
                        grad[1 + j] += d_mean * s.group_means[k];
                    }
                }
            }
        }
        grad[1 + nb] += d_var;
        match &params.variant {
            EmosVariant::DualSplitVariance { high, low } => {
                for (j, label) in [high, low].into_iter().enumerate() {
                    if let Some(k) = s.group_index(label) {
                        grad[2 + nb + j] += d_var * s.group_variances[k];
                    }
                }
            }
            _ => grad[2 + nb] += d_var * s.pooled_variance,
        }
    }
    let n = window.cases.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok(grad)
}

/// Estimation settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub f_tol: f64,
    pub variance_floor: f64,
    /// Constrain mean coefficients `b` to be nonnegative.
    pub nonnegative_b: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            f_tol: 1e-8,
            variance_floor: VARIANCE_FLOOR,
            nonnegative_b: false,
        }
    }
}

/// Training cases reduced to design rows: mean predictors (zero where the
/// group is absent), variance predictors and the observation.
struct Design {
    nb: usize,
    nd: usize,
    x: Vec<f64>,
    v: Vec<f64>,
    obs: Vec<f64>,
    active_b: Vec<bool>,
    active_d: Vec<bool>,
    /// Mean of each predictor over the window; predictors are centred in
    /// the optimiser for conditioning.
    x_center: Vec<f64>,
    /// Average share of members per coefficient, for the cold start.
    weight: Vec<f64>,
}

impl Design {
    fn new(window: &TrainingWindow, variant: &EmosVariant) -> Result<Self> {
        let n = window.cases.len();
        let labels = variant.labels();
        let nb = match variant {
            EmosVariant::NonExchangeable => window.cases[0].forecast.member_count(),
            _ => labels.len(),
        };
        let nd = variant.variance_terms();
        let mut d = Design {
            nb,
            nd,
            x: Vec::with_capacity(n * nb),
            v: Vec::with_capacity(n * nd),
            obs: Vec::with_capacity(n),
            active_b: vec![false; nb],
            active_d: vec![false; nd],
            x_center: vec![0.0; nb],
            weight: vec![0.0; nb],
        };
        for case in &window.cases {
            let s = summarize(&case.forecast)?;
            let m = s.member_count() as f64;
            match variant {
                EmosVariant::NonExchangeable => {
                    if s.member_count() != nb {
                        return Err(Error::InvalidInput(format!(
                            "NON_EXCHANGEABLE needs a fixed member count, found {} and {nb}",
                            s.member_count()
                        )));
                    }
                    d.x.extend(&s.members);
                    d.active_b.iter_mut().for_each(|a| *a = true);
                    d.weight.iter_mut().for_each(|w| *w += 1.0 / m);
                }
                _ => {
                    for (j, label) in labels.iter().enumerate() {
                        match s.group_index(label) {
                            Some(k) => {
                                d.x.push(s.group_means[k]);
                                d.active_b[j] = true;
                                d.weight[j] += s.group_sizes[k] as f64 / m;
                            }
                            None => d.x.push(0.0),
                        }
                    }
                    if s.labels.iter().any(|l| !labels.contains(&l.as_str())) {
                        return Err(Error::InvalidInput(format!(
                            "forecast groups {:?} not covered by model labels {labels:?}",
                            s.labels
                        )));
                    }
                }
            }
            match variant {
                EmosVariant::DualSplitVariance { high, low } => {
                    for (j, label) in [high, low].into_iter().enumerate() {
                        match s.group_index(label) {
                            Some(k) => {
                                d.v.push(s.group_variances[k]);
                                if s.group_sizes[k] >= 2 {
                                    d.active_d[j] = true;
                                }
                            }
                            None => d.v.push(0.0),
                        }
                    }
                }
                _ => {
                    d.v.push(s.pooled_variance);
                    d.active_d[0] = true;
                }
            }
            d.obs.push(case.observation);
        }
        for j in 0..nb {
            d.x_center[j] = (0..n).map(|i| d.x[i * nb + j]).sum::<f64>() / n as f64;
            d.weight[j] /= n as f64;
        }
        Ok(d)
    }

    /// Mean CRPS at centred mean coefficients `(alpha, b)` and variance
    /// coefficients `(c, d)`.
    fn objective(&self, alpha: f64, b: &[f64], c: f64, dv: &[f64]) -> f64 {
        let n = self.obs.len();
        let mut total = 0.0;
        for i in 0..n {
            let xi = &self.x[i * self.nb..(i + 1) * self.nb];
            let vi = &self.v[i * self.nd..(i + 1) * self.nd];
            let mut mean = alpha;
            for j in 0..self.nb {
                mean += b[j] * (xi[j] - self.x_center[j]);
            }
            let mut var = c;
            for k in 0..self.nd {
                var += dv[k] * vi[k];
            }
            if !(var > 0.0) {
                return f64::INFINITY;
            }
            total += crps_normal(mean, var.sqrt(), self.obs[i]);
        }
        total / n as f64
    }
}

/// Free-parameter layout: `[alpha, b (active), gamma, delta (active)]` with
/// `c = gamma² + floor`, `d = delta²` and optionally `b = beta²`.
struct Layout<'a> {
    design: &'a Design,
    opts: &'a FitOptions,
    b_index: Vec<usize>,
    d_index: Vec<usize>,
}

impl<'a> Layout<'a> {
    fn new(design: &'a Design, opts: &'a FitOptions) -> Self {
        Self {
            design,
            opts,
            b_index: (0..design.nb).filter(|&j| design.active_b[j]).collect(),
            d_index: (0..design.nd).filter(|&k| design.active_d[k]).collect(),
        }
    }

    fn dim(&self) -> usize {
        2 + self.b_index.len() + self.d_index.len()
    }

    fn decode(&self, theta: &[f64]) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let mut b = vec![0.0; self.design.nb];
        for (p, &j) in self.b_index.iter().enumerate() {
            let t = theta[1 + p];
            b[j] = if self.opts.nonnegative_b { t * t } else { t };
        }
        let g = theta[1 + self.b_index.len()];
        let c = g * g + self.opts.variance_floor;
        let mut d = vec![0.0; self.design.nd];
        for (p, &k) in self.d_index.iter().enumerate() {
            let t = theta[2 + self.b_index.len() + p];
            d[k] = t * t;
        }
        (theta[0], b, c, d)
    }

    fn encode(&self, alpha: f64, b: &[f64], c: f64, d: &[f64]) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        theta.push(alpha);
        for &j in &self.b_index {
            theta.push(if self.opts.nonnegative_b {
                b[j].max(0.0).sqrt()
            } else {
                b[j]
            });
        }
        theta.push((c - self.opts.variance_floor).max(0.0).sqrt());
        for &k in &self.d_index {
            theta.push(d[k].max(0.0).sqrt());
        }
        theta
    }

    fn steps(&self, theta: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(theta.len());
        s.push(1.0);
        s.extend(self.b_index.iter().map(|_| 0.1));
        s.push(0.5);
        s.extend(self.d_index.iter().map(|_| 0.25));
        debug_assert_eq!(s.len(), theta.len());
        s
    }
}

/// Cold-start coefficients: `a = 0`, `b_k` equal to the group's share of
/// members, `c = 1`, `d = 1`.
pub fn default_start(window: &TrainingWindow, variant: &EmosVariant) -> Result<EmosParameters> {
    if window.cases.is_empty() {
        return Err(Error::InvalidInput("empty training window".into()));
    }
    let design = Design::new(window, variant)?;
    let nd = design.nd;
    Ok(EmosParameters {
        variant: variant.clone(),
        a: 0.0,
        b: design.weight,
        c: 1.0 + VARIANCE_FLOOR,
        d: vec![1.0; nd],
        trained_on: None,
        diagnostics: None,
    })
}

/// Minimum-CRPS estimation with default options.
pub fn fit(
    window: &TrainingWindow,
    variant: &EmosVariant,
    init: Option<&EmosParameters>,
) -> Result<EmosParameters> {
    fit_with(window, variant, init, &FitOptions::default())
}

/// Minimise the window's mean CRPS over the variant's coefficients, starting
/// from `init` (warm start) or the cold start.
///
/// The returned `c` includes the variance floor, so the returned parameters
/// reproduce the optimised predictive variances exactly. Running out of
/// iterations is not an error: the best parameters found are returned with
/// `diagnostics.converged == false`.
pub fn fit_with(
    window: &TrainingWindow,
    variant: &EmosVariant,
    init: Option<&EmosParameters>,
    opts: &FitOptions,
) -> Result<EmosParameters> {
    if window.cases.is_empty() {
        return Err(Error::InvalidInput("empty training window".into()));
    }
    let design = Design::new(window, variant)?;
    let layout = Layout::new(&design, opts);

    let compatible = |p: &EmosParameters| {
        p.variant == *variant && p.b.len() == design.nb && p.d.len() == design.nd
    };
    let (a0, b0, c0, d0) = match init.filter(|p| compatible(p)) {
        Some(p) => (p.a, p.b.clone(), p.c, p.d.clone()),
        None => {
            if init.is_some() {
                log::debug!("initial parameters incompatible with {}; cold start", variant.tag());
            }
            (0.0, design.weight.clone(), 1.0 + opts.variance_floor, vec![1.0; design.nd])
        }
    };
    let b0: Vec<f64> = b0
        .iter()
        .enumerate()
        .map(|(j, &b)| if design.active_b[j] { b } else { 0.0 })
        .collect();
    let alpha0 = a0 + b0.iter().zip(&design.x_center).map(|(b, x)| b * x).sum::<f64>();
    let theta0 = layout.encode(alpha0, &b0, c0, &d0);
    let steps = layout.steps(&theta0);

    let nm_opts = NelderMeadOptions {
        max_iterations: opts.max_iterations,
        f_tol: opts.f_tol,
        restarts: 1,
    };
    let min = nelder_mead(
        |theta| {
            let (alpha, b, c, d) = layout.decode(theta);
            design.objective(alpha, &b, c, &d)
        },
        &theta0,
        &steps,
        &nm_opts,
    );
    if !min.f.is_finite() {
        return Err(Error::InvalidInput(
            "no finite objective value reachable from the start".into(),
        ));
    }
    if !min.converged {
        log::warn!(
            "EMOS fit ({}, {} cases) stopped after {} iterations without converging",
            variant.tag(),
            window.cases.len(),
            min.iterations
        );
    }
    let (alpha, b, c, d) = layout.decode(&min.x);
    let a = alpha - b.iter().zip(&design.x_center).map(|(b, x)| b * x).sum::<f64>();
    let params = EmosParameters {
        variant: variant.clone(),
        a,
        b,
        c,
        d,
        trained_on: Some(WindowDescriptor::from(window)),
        diagnostics: Some(FitDiagnostics {
            objective: min.f,
            iterations: min.iterations,
            evaluations: min.evaluations,
            converged: min.converged,
        }),
    };
    params.validate()?;
    Ok(params)
}

/// One line of the fitted-parameter JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub scope_id: String,
    pub lead_days: u32,
    pub target_date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub configuration: Option<String>,
    pub variant: VariantTag,
    pub group_labels: Vec<String>,
    /// `a, b…, c, d…`.
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl ParameterRecord {
    pub fn new(
        scope_id: impl Into<String>,
        lead_days: u32,
        target_date: NaiveDate,
        configuration: Option<String>,
        params: &EmosParameters,
    ) -> Self {
        Self {
            scope_id: scope_id.into(),
            lead_days,
            target_date,
            configuration,
            variant: params.variant.tag(),
            group_labels: params.variant.labels().into_iter().map(String::from).collect(),
            coefficients: params.coefficients(),
            objective: params.diagnostics.as_ref().map(|d| d.objective),
            converged: params.diagnostics.as_ref().map(|d| d.converged),
        }
    }

    pub fn parameters(&self) -> Result<EmosParameters> {
        let variant = EmosVariant::from_tag(self.variant, &self.group_labels)?;
        EmosParameters::from_coefficients(variant, &self.coefficients)
    }
}

pub fn write_parameter_records(path: &std::path::Path, records: &[ParameterRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::InvalidInput(e.to_string()))?);
        out.push('\n');
    }
    crate::data::write_text(path, &out)
}

pub fn read_parameter_records(path: &std::path::Path) -> Result<Vec<ParameterRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRow {
                path: path.into(),
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
