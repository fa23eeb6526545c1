//! Rolling calibrate/verify pipeline over mixtures × training methods × lead
//! times, and the score tables built from it.
//!
//! For every verification day the EMOS coefficients of each training scope
//! are fitted on the `n` preceding days and applied to that day's forecasts.
//! Each (mixture, method, lead, scope) chain runs its days in order so a fit
//! can start from the previous day's coefficients; chains run in parallel
//! and results are reassembled in a fixed order, so output does not depend on
//! the number of workers.

mod config;
mod diagnostics;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_dataset, Dataset, GroupedEnsembleForecast, MemberGroup};
use crate::emos::{fit_with, predictive, summarize, EmosParameters, EmosVariant, ParameterRecord};
use crate::error::{Error, Result};
use crate::inference::{
    default_max_lag, default_mean_block_length, dm_test_values, significance_matrix,
    stationary_bootstrap, ScoreSeries, SignificanceMatrix,
};
use crate::scoring::{
    brier_score, climatology_thresholds, crps_empirical, crps_gaussian, quantile_score,
    EmpiricalPredictive, GaussianPredictive, PredictiveCdf, PredictiveQuantile, ScoreConfig,
};
use crate::selection::{
    assemble_scope_window, kmeans_cluster, window_station_features, ClusterAssignment, ScopeMode,
    TrainingScope,
};
use crate::synth::Mixture;

pub use config::{
    BootstrapConfig, DataConfig, DmConfig, EmosConfig, ExperimentConfig, MemberSelection,
    ScenarioConfig, ScoresConfig, TrainingConfig, VerificationConfig, Weighting,
};
pub use diagnostics::{station_diagnostics, write_station_diagnostics, StationDiagnostic};
pub use report::{
    emit_reports, read_daily_scores_csv, read_predictions_csv, read_score_table, read_scores_csv,
    write_predictions_csv,
};

/// How a configuration turns the ensemble into a forecast distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Raw,
    Emos {
        mode: ScopeMode,
        n_days: u32,
        k_clusters: Option<usize>,
    },
}

impl Method {
    /// Row label in the style of the paper's Table 2.
    pub fn label(&self) -> String {
        match self {
            Method::Raw => "Raw ensemble".into(),
            Method::Emos { mode, n_days, .. } => {
                let m = match mode {
                    ScopeMode::Local => "Local",
                    ScopeMode::Regional => "Regional",
                    ScopeMode::SemiLocal => "Semi-local",
                };
                format!("{m} EMOS, {n_days}d")
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Raw => f.write_str("raw"),
            Method::Emos {
                mode,
                n_days,
                k_clusters,
            } => {
                let m = match mode {
                    ScopeMode::Local => "local",
                    ScopeMode::Regional => "regional",
                    ScopeMode::SemiLocal => "semi_local",
                };
                write!(f, "{m}_{n_days}d")?;
                if let Some(k) = k_clusters {
                    write!(f, "_k{k}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "raw" {
            return Ok(Method::Raw);
        }
        let bad = || Error::InvalidInput(format!("unrecognised method {s:?}"));
        let (mode, rest) = [
            ("semi_local_", ScopeMode::SemiLocal),
            ("regional_", ScopeMode::Regional),
            ("local_", ScopeMode::Local),
        ]
        .iter()
        .find_map(|(p, m)| s.strip_prefix(p).map(|r| (*m, r)))
        .ok_or_else(bad)?;
        let (days, k) = match rest.split_once("d_k") {
            Some((d, k)) => (d, Some(k.parse::<usize>().map_err(|_| bad())?)),
            None => (rest.strip_suffix('d').ok_or_else(bad)?, None),
        };
        Ok(Method::Emos {
            mode,
            n_days: days.parse().map_err(|_| bad())?,
            k_clusters: k,
        })
    }
}

/// One row group of the score table: a member mixture with a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigurationId {
    pub mixture: Mixture,
    pub method: Method,
}

impl fmt::Display for ConfigurationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.mixture, self.method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Crps,
    Mae,
    Rmse,
    Qs,
    Bs,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Crps => "CRPS",
            MetricKind::Mae => "MAE",
            MetricKind::Rmse => "RMSE",
            MetricKind::Qs => "QS",
            MetricKind::Bs => "BS",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "CRPS" => MetricKind::Crps,
            "MAE" => MetricKind::Mae,
            "RMSE" => MetricKind::Rmse,
            "QS" => MetricKind::Qs,
            "BS" => MetricKind::Bs,
            _ => return Err(Error::InvalidInput(format!("unknown metric {s:?}"))),
        })
    }
}

/// A score and, for QS and BS, its probability level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub kind: MetricKind,
    pub level: Option<f64>,
}

fn metric_list(sc: &ScoreConfig) -> Vec<Metric> {
    let plain = |kind| Metric { kind, level: None };
    let mut out = vec![plain(MetricKind::Crps), plain(MetricKind::Mae), plain(MetricKind::Rmse)];
    out.extend(sc.qs_levels.iter().map(|&l| Metric {
        kind: MetricKind::Qs,
        level: Some(l),
    }));
    out.extend(sc.bs_threshold_levels.iter().map(|&l| Metric {
        kind: MetricKind::Bs,
        level: Some(l),
    }));
    out
}

/// Aggregated verification result of one configuration, lead and metric.
///
/// Skill and difference compare against the reference mixture under the same
/// method; the DM test runs on the two daily mean series.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub configuration: ConfigurationId,
    pub lead_days: u32,
    pub metric: Metric,
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub skill: f64,
    pub skill_lower: f64,
    pub skill_upper: f64,
    pub diff: f64,
    pub diff_lower: f64,
    pub diff_upper: f64,
    pub dm_statistic: Option<f64>,
    pub dm_p_value: Option<f64>,
    pub n_cases: usize,
    pub n_days: usize,
}

/// Daily mean of the per-case loss: CRPS, absolute error (MAE), squared
/// error (RMSE), quantile loss (QS) or Brier score (BS).
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRow {
    pub configuration: ConfigurationId,
    pub lead_days: u32,
    pub date: NaiveDate,
    pub metric: Metric,
    pub value: f64,
    pub n_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub summary: Vec<SummaryRow>,
    pub daily: Vec<DailyRow>,
}

impl ScoreTable {
    pub fn row(&self, configuration: ConfigurationId, lead_days: u32, metric: Metric) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.configuration == configuration && r.lead_days == lead_days && r.metric == metric)
    }

    pub fn crps(&self, configuration: ConfigurationId, lead_days: u32) -> Option<f64> {
        self.row(
            configuration,
            lead_days,
            Metric {
                kind: MetricKind::Crps,
                level: None,
            },
        )
        .map(|r| r.mean)
    }
}

/// Gaussian predictive distribution issued for one verification case.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub configuration: ConfigurationId,
    pub lead_days: u32,
    pub station_id: String,
    pub init_date: NaiveDate,
    pub observation: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub lead_days: u32,
    pub n_days: u32,
    pub assignment: ClusterAssignment,
}

#[derive(Debug, Clone, Default)]
pub struct Calibration {
    pub predictions: Vec<Prediction>,
    pub parameters: Vec<ParameterRecord>,
    pub clusters: Vec<ClusterRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub calibration: Calibration,
    pub table: ScoreTable,
    pub significance: BTreeMap<u32, SignificanceMatrix>,
}

/// Load the configured data files, orographically corrected if requested.
/// Relative paths resolve against `base`.
pub fn load_experiment_dataset(config: &ExperimentConfig, base: &Path) -> Result<Dataset> {
    let (obs, fc, st) = config.data.paths(base)?;
    let ds = load_dataset(&obs, &fc, &st)?;
    Ok(if config.data.orographic_correction {
        ds.orographically_corrected()
    } else {
        ds
    })
}

/// Dataset-dependent state shared by calibration and verification.
pub struct Prepared {
    pub dataset: Dataset,
    /// One member-subsampled dataset per mixture, in config order.
    pub mixtures: Vec<(Mixture, Dataset)>,
    pub leads: Vec<u32>,
    pub days: Vec<NaiveDate>,
    pub variant: EmosVariant,
    pub clusters: Vec<ClusterRecord>,
}

impl Prepared {
    fn mixture_dataset(&self, m: Mixture) -> &Dataset {
        &self.mixtures.iter().find(|(x, _)| *x == m).expect("mixture prepared").1
    }

    fn assignment(&self, lead: u32, n_days: u32, k: usize) -> Option<&ClusterAssignment> {
        self.clusters
            .iter()
            .find(|c| c.lead_days == lead && c.n_days == n_days && c.assignment.k == k)
            .map(|c| &c.assignment)
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn random_subset(
    f: &GroupedEnsembleForecast,
    selection: &[(String, usize)],
    seed: u64,
) -> Result<GroupedEnsembleForecast> {
    let mut groups = Vec::with_capacity(selection.len());
    let init = f.init_time.to_string();
    for (label, count) in selection {
        let g = f.group(label).ok_or_else(|| {
            Error::InvalidInput(format!("forecast {}/{} has no group {label:?}", f.station_id, init))
        })?;
        if g.members.len() < *count {
            return Err(Error::InvalidInput(format!(
                "group {label:?} of forecast {}/{} has {} members, {count} requested",
                f.station_id,
                init,
                g.members.len()
            )));
        }
        let key = fnv1a(&[
            &seed.to_le_bytes(),
            f.station_id.as_bytes(),
            init.as_bytes(),
            &f.lead_days.to_le_bytes(),
            label.as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut idx = index::sample(&mut rng, g.members.len(), *count).into_vec();
        idx.sort_unstable();
        groups.push(MemberGroup {
            label: label.clone(),
            members: idx.into_iter().map(|i| g.members[i]).collect(),
        });
    }
    Ok(GroupedEnsembleForecast {
        groups,
        ..f.clone()
    })
}

/// Subsample mixtures, check the verification period against the data and
/// derive the semi-local clusters.
///
/// Clusters are fitted once per lead time and semi-local training setup on
/// the first verification day's training window of the reference mixture.
pub fn prepare(config: &ExperimentConfig, dataset: Dataset) -> Result<Prepared> {
    config.validate()?;
    let scenario = &config.scenario;
    let (first, last) = dataset
        .init_date_range()
        .ok_or_else(|| Error::InvalidInput("dataset holds no forecasts".into()))?;
    let max_n = config.max_training_days();
    let v = &config.verification;
    if v.start < first + chrono::Duration::days(i64::from(max_n)) {
        return Err(Error::Config(format!(
            "verification start {} is earlier than data start {first} plus {max_n} training days",
            v.start
        )));
    }
    if v.end > last {
        return Err(Error::Config(format!(
            "verification end {} is after the last forecast day {last}",
            v.end
        )));
    }
    let available = dataset.lead_times();
    let leads = if config.lead_times.is_empty() {
        available.clone()
    } else {
        for l in &config.lead_times {
            if !available.contains(l) {
                return Err(Error::Config(format!("lead time {l} is not in the data")));
            }
        }
        let mut l = config.lead_times.clone();
        l.sort_unstable();
        l.dedup();
        l
    };
    let variant = config.emos.variant(scenario)?;

    let mut mixtures = Vec::with_capacity(scenario.mixtures.len());
    for m in scenario.mixtures() {
        let sel = scenario.selection(m);
        let ds = match scenario.member_selection {
            MemberSelection::First => dataset.map_forecasts(|f| f.select_members(&sel)),
            MemberSelection::Random => dataset.map_forecasts(|f| random_subset(f, &sel, config.seed)),
        }
        .map_err(|e| e.context(format!("mixture {m}")))?;
        mixtures.push((m, ds));
    }

    let reference = scenario.reference()?;
    let ref_ds = &mixtures.iter().find(|(m, _)| *m == reference).expect("validated").1;
    let mut clusters = Vec::new();
    for t in &config.training {
        let (ScopeMode::SemiLocal, Some(k)) = (t.mode, t.k_clusters) else {
            continue;
        };
        for &lead in &leads {
            if clusters
                .iter()
                .any(|c: &ClusterRecord| c.lead_days == lead && c.n_days == t.n_days && c.assignment.k == k)
            {
                continue;
            }
            let ctx = || format!("clustering lead {lead}d, {}d window, k = {k}", t.n_days);
            let window = crate::data::build_training_window(ref_ds, v.start, lead, t.n_days)
                .map_err(|e| e.context(ctx()))?;
            let features =
                window_station_features(&window, dataset.stations()).map_err(|e| e.context(ctx()))?;
            let assignment = kmeans_cluster(&features, k, config.seed).map_err(|e| e.context(ctx()))?;
            log::info!(
                "lead {lead}d: {k} clusters, sizes {}..{}",
                assignment.sizes().iter().min().unwrap_or(&0),
                assignment.sizes().iter().max().unwrap_or(&0)
            );
            clusters.push(ClusterRecord {
                lead_days: lead,
                n_days: t.n_days,
                assignment,
            });
        }
    }

    Ok(Prepared {
        dataset,
        mixtures,
        leads,
        days: v.days(),
        variant,
        clusters,
    })
}

struct Chain<'a> {
    configuration: ConfigurationId,
    dataset: &'a Dataset,
    training: &'a TrainingConfig,
    lead: u32,
    scope: TrainingScope,
    assignment: Option<&'a ClusterAssignment>,
}

fn in_scope(scope: &TrainingScope, assignment: Option<&ClusterAssignment>, station: &str) -> bool {
    match scope.mode {
        ScopeMode::Local => scope.scope_id == station,
        ScopeMode::Regional => true,
        ScopeMode::SemiLocal => assignment
            .and_then(|a| a.cluster_of(station))
            .is_some_and(|c| c.to_string() == scope.scope_id),
    }
}

fn run_chain(
    chain: &Chain<'_>,
    days: &[NaiveDate],
    variant: &EmosVariant,
    config: &ExperimentConfig,
) -> Result<(Vec<Prediction>, Vec<ParameterRecord>)> {
    let opts = config.emos.fit_options();
    let mut predictions = Vec::new();
    let mut records = Vec::new();
    let mut previous: Option<EmosParameters> = None;
    let label = chain.configuration.to_string();
    for &day in days {
        let (targets, _) = chain
            .dataset
            .cases_on(day, chain.lead, |s| in_scope(&chain.scope, chain.assignment, s));
        if targets.is_empty() {
            continue;
        }
        let ctx = || format!("{label}, lead {}d, scope {}, day {day}", chain.lead, chain.scope.scope_id);
        let window = assemble_scope_window(
            chain.dataset,
            &chain.scope,
            chain.assignment,
            day,
            chain.lead,
            chain.training.n_days,
        )
        .map_err(|e| e.context(ctx()))?;
        let init = if config.emos.warm_start { previous.as_ref() } else { None };
        let params = fit_with(&window, variant, init, &opts).map_err(|e| e.context(ctx()))?;
        for case in &targets {
            let summary = summarize(&case.forecast).map_err(|e| e.context(ctx()))?;
            let p = predictive(&params, &summary).map_err(|e| e.context(ctx()))?;
            predictions.push(Prediction {
                configuration: chain.configuration,
                lead_days: chain.lead,
                station_id: case.forecast.station_id.clone(),
                init_date: day,
                observation: case.observation,
                mean: p.mean,
                variance: p.variance,
            });
        }
        records.push(ParameterRecord::new(
            chain.scope.scope_id.clone(),
            chain.lead,
            day,
            Some(label.clone()),
            &params,
        ));
        previous = Some(params);
    }
    Ok((predictions, records))
}

/// Fit every EMOS configuration on its rolling windows and issue the
/// verification-day predictive distributions.
pub fn calibrate(config: &ExperimentConfig, prepared: &Prepared) -> Result<Calibration> {
    let mut chains = Vec::new();
    for (mixture, ds) in &prepared.mixtures {
        for t in &config.training {
            let configuration = ConfigurationId {
                mixture: *mixture,
                method: t.method(),
            };
            for &lead in &prepared.leads {
                let assignment = match (t.mode, t.k_clusters) {
                    (ScopeMode::SemiLocal, Some(k)) => {
                        Some(prepared.assignment(lead, t.n_days, k).expect("clusters prepared"))
                    }
                    _ => None,
                };
                let scopes: Vec<TrainingScope> = match t.mode {
                    ScopeMode::Local => ds.stations().iter().map(|s| TrainingScope::local(&s.station_id)).collect(),
                    ScopeMode::Regional => vec![TrainingScope::regional()],
                    ScopeMode::SemiLocal => {
                        (0..assignment.expect("semi-local").k).map(TrainingScope::semi_local).collect()
                    }
                };
                for scope in scopes {
                    chains.push(Chain {
                        configuration,
                        dataset: ds,
                        training: t,
                        lead,
                        scope,
                        assignment,
                    });
                }
            }
        }
    }
    log::info!("calibrating {} training chains over {} days", chains.len(), prepared.days.len());
    let results: Vec<(Vec<Prediction>, Vec<ParameterRecord>)> = chains
        .par_iter()
        .map(|c| run_chain(c, &prepared.days, &prepared.variant, config))
        .collect::<Result<_>>()?;

    let order: HashMap<ConfigurationId, usize> = prepared
        .mixtures
        .iter()
        .flat_map(|(m, _)| config.training.iter().map(move |t| (*m, t.method())))
        .enumerate()
        .map(|(i, (mixture, method))| (ConfigurationId { mixture, method }, i))
        .collect();
    let ds = &prepared.dataset;
    let mut predictions = Vec::new();
    let mut parameters = Vec::new();
    for (p, r) in results {
        predictions.extend(p);
        parameters.extend(r);
    }
    predictions.sort_by_key(|p| {
        (
            order[&p.configuration],
            p.lead_days,
            p.init_date,
            ds.station_position(&p.station_id).unwrap_or(usize::MAX),
        )
    });
    Ok(Calibration {
        predictions,
        parameters,
        clusters: prepared.clusters.clone(),
    })
}

/// Per-case losses of one configuration and lead, grouped by day.
struct Scored {
    days: Vec<NaiveDate>,
    counts: Vec<usize>,
    /// `sums[metric][day]`.
    sums: Vec<Vec<f64>>,
    /// `station_stats[metric][station] = (sum, count)`.
    station_stats: Vec<BTreeMap<usize, (f64, usize)>>,
    /// Stationwise daily CRPS.
    station_crps: BTreeMap<usize, Vec<(NaiveDate, f64)>>,
}

struct CaseLoss {
    day: NaiveDate,
    station: usize,
    losses: Vec<f64>,
}

fn case_losses<P: PredictiveCdf + PredictiveQuantile>(
    pred: &P,
    crps: f64,
    point: f64,
    obs: f64,
    sc: &ScoreConfig,
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    let e = point - obs;
    let mut out = Vec::with_capacity(3 + sc.qs_levels.len() + thresholds.len());
    out.extend([crps, e.abs(), e * e]);
    for &tau in &sc.qs_levels {
        out.push(quantile_score(pred, obs, tau)?);
    }
    for &t in thresholds {
        out.push(brier_score(pred, obs, t));
    }
    Ok(out)
}

fn aggregate(mut cases: Vec<CaseLoss>, n_metrics: usize) -> Scored {
    cases.sort_by_key(|c| (c.day, c.station));
    let mut s = Scored {
        days: Vec::new(),
        counts: Vec::new(),
        sums: vec![Vec::new(); n_metrics],
        station_stats: vec![BTreeMap::new(); n_metrics],
        station_crps: BTreeMap::new(),
    };
    for c in cases {
        if s.days.last() != Some(&c.day) {
            s.days.push(c.day);
            s.counts.push(0);
            for m in &mut s.sums {
                m.push(0.0);
            }
        }
        *s.counts.last_mut().expect("pushed") += 1;
        for (j, &v) in c.losses.iter().enumerate() {
            *s.sums[j].last_mut().expect("pushed") += v;
            let e = s.station_stats[j].entry(c.station).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        s.station_crps.entry(c.station).or_default().push((c.day, c.losses[0]));
    }
    s
}

/// Score raw ensembles and EMOS predictions on every verification day.
fn score_all(
    config: &ExperimentConfig,
    prepared: &Prepared,
    calibration: &Calibration,
    sc: &ScoreConfig,
) -> Result<Vec<((ConfigurationId, u32), Scored)>> {
    let ds = &prepared.dataset;
    let mut per_station: Vec<Vec<f64>> = vec![Vec::new(); ds.stations().len()];
    for o in ds.observations() {
        if let Some(i) = ds.station_position(&o.station_id) {
            per_station[i].push(o.value);
        }
    }
    let thresholds: Vec<Vec<f64>> = per_station
        .iter()
        .map(|obs| {
            if obs.is_empty() {
                Ok(Vec::new())
            } else {
                climatology_thresholds(obs, &sc.bs_threshold_levels)
            }
        })
        .collect::<Result<_>>()?;
    let n_metrics = metric_list(sc).len();

    let mut keys = Vec::new();
    for (m, _) in &prepared.mixtures {
        for method in config.methods() {
            for &lead in &prepared.leads {
                keys.push((
                    ConfigurationId {
                        mixture: *m,
                        method,
                    },
                    lead,
                ));
            }
        }
    }
    let mut by_key: HashMap<(ConfigurationId, u32), Vec<&Prediction>> = HashMap::new();
    for p in &calibration.predictions {
        by_key.entry((p.configuration, p.lead_days)).or_default().push(p);
    }
    let days = &prepared.days;
    keys.par_iter()
        .map(|&(cfg, lead)| -> Result<((ConfigurationId, u32), Scored)> {
            let ctx = || format!("verifying {cfg}, lead {lead}d");
            let mut cases = Vec::new();
            match cfg.method {
                Method::Raw => {
                    let mds = prepared.mixture_dataset(cfg.mixture);
                    for &day in days {
                        for case in mds.cases_on(day, lead, |_| true).0 {
                            let station = ds.station_position(&case.forecast.station_id).expect("known");
                            let pred = EmpiricalPredictive::new(case.forecast.members())
                                .map_err(|e| e.context(ctx()))?;
                            let crps = crps_empirical(&pred, case.observation)?;
                            let losses =
                                case_losses(&pred, crps, pred.mean(), case.observation, sc, &thresholds[station])?;
                            cases.push(CaseLoss { day, station, losses });
                        }
                    }
                }
                Method::Emos { .. } => {
                    for p in by_key.get(&(cfg, lead)).map(Vec::as_slice).unwrap_or(&[]) {
                        if p.init_date < config.verification.start || p.init_date > config.verification.end {
                            continue;
                        }
                        let station = ds.station_position(&p.station_id).ok_or_else(|| Error::UnknownStation {
                            station_id: p.station_id.clone(),
                            context: Some("predictions".into()),
                        })?;
                        let pred = GaussianPredictive::new(p.mean, p.variance).map_err(|e| e.context(ctx()))?;
                        let crps = crps_gaussian(&pred, p.observation)?;
                        let losses = case_losses(&pred, crps, p.mean, p.observation, sc, &thresholds[station])?;
                        cases.push(CaseLoss {
                            day: p.init_date,
                            station,
                            losses,
                        });
                    }
                }
            }
            if cases.is_empty() {
                return Err(Error::InvalidInput(format!("{}: no verification cases", ctx())));
            }
            Ok(((cfg, lead), aggregate(cases, n_metrics)))
        })
        .collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn skill_value(score: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if score == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - score / reference
    }
}

/// Sufficient statistics of one metric over aligned days.
struct Series<'a> {
    sums: Vec<f64>,
    counts: Vec<usize>,
    station: &'a BTreeMap<usize, (f64, usize)>,
    root: bool,
    weighting: Weighting,
}

impl Series<'_> {
    fn transform(&self, v: f64) -> f64 {
        if self.root {
            v.sqrt()
        } else {
            v
        }
    }

    fn point(&self) -> f64 {
        match self.weighting {
            Weighting::Case => {
                let n: usize = self.counts.iter().sum();
                self.transform(self.sums.iter().sum::<f64>() / n as f64)
            }
            Weighting::Station => {
                let total: f64 = self
                    .station
                    .values()
                    .map(|&(s, c)| self.transform(s / c as f64))
                    .sum();
                total / self.station.len() as f64
            }
        }
    }

    fn resampled(&self, idx: &[usize]) -> f64 {
        match self.weighting {
            Weighting::Case => {
                let (s, n) = idx
                    .iter()
                    .fold((0.0, 0usize), |(s, n), &i| (s + self.sums[i], n + self.counts[i]));
                self.transform(s / n as f64)
            }
            Weighting::Station => {
                let s: f64 = idx.iter().map(|&i| self.sums[i] / self.counts[i] as f64).sum();
                self.transform(s / idx.len() as f64)
            }
        }
    }

    fn daily_means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| s / c as f64)
            .collect()
    }
}

fn select_days<'a>(
    s: &'a Scored,
    metric: usize,
    days: &[NaiveDate],
    root: bool,
    weighting: Weighting,
) -> Series<'a> {
    let pos: HashMap<NaiveDate, usize> = s.days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let idx: Vec<usize> = days.iter().map(|d| pos[d]).collect();
    Series {
        sums: idx.iter().map(|&i| s.sums[metric][i]).collect(),
        counts: idx.iter().map(|&i| s.counts[i]).collect(),
        station: &s.station_stats[metric],
        root,
        weighting,
    }
}

/// Score every configuration, attach bootstrap intervals and DM tests against
/// the reference mixture, and build the stationwise significance matrices.
pub fn verify(
    config: &ExperimentConfig,
    prepared: &Prepared,
    calibration: &Calibration,
) -> Result<(ScoreTable, BTreeMap<u32, SignificanceMatrix>)> {
    let sc = config.scores.score_config()?;
    let metrics = metric_list(&sc);
    let scored: BTreeMap<(ConfigurationId, u32), Scored> =
        score_all(config, prepared, calibration, &sc)?.into_iter().collect();
    let reference = config.scenario.reference()?;

    // (row index, configuration, lead, metric index) in output order
    let mut jobs = Vec::new();
    for (m, _) in &prepared.mixtures {
        for method in config.methods() {
            for &lead in &prepared.leads {
                for j in 0..metrics.len() {
                    jobs.push((
                        ConfigurationId {
                            mixture: *m,
                            method,
                        },
                        lead,
                        j,
                    ));
                }
            }
        }
    }
    let bs = &config.bootstrap;
    let summary: Vec<SummaryRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(row, &(cfg, lead, j))| -> Result<SummaryRow> {
            let own = &scored[&(cfg, lead)];
            let refc = ConfigurationId {
                mixture: reference,
                method: cfg.method,
            };
            let rs = &scored[&(refc, lead)];
            let root = metrics[j].kind == MetricKind::Rmse;
            let w = config.scores.weighting;
            let seed = splitmix(config.seed ^ splitmix(row as u64));
            let n_own = own.days.len();
            let block = bs.mean_block_length.unwrap_or_else(|| default_mean_block_length(n_own));

            let series = select_days(own, j, &own.days, root, w);
            let point = series.point();
            let ci = stationary_bootstrap(n_own, |idx| series.resampled(idx), point, bs.replicates, block, bs.level, seed)?;

            let common: Vec<NaiveDate> = own.days.iter().filter(|d| rs.days.binary_search(d).is_ok()).copied().collect();
            if common.len() < crate::inference::BOOTSTRAP_MIN_LENGTH {
                return Err(Error::Misaligned(format!(
                    "{cfg} and reference {refc} share only {} verification days at lead {lead}d",
                    common.len()
                )));
            }
            let a = select_days(own, j, &common, root, w);
            let b = select_days(rs, j, &common, root, w);
            let block_c = bs.mean_block_length.unwrap_or_else(|| default_mean_block_length(common.len()));
            let (pa, pb) = (a.point(), b.point());
            let diff = stationary_bootstrap(
                common.len(),
                |idx| a.resampled(idx) - b.resampled(idx),
                pa - pb,
                bs.replicates,
                block_c,
                bs.level,
                seed,
            )?;
            let skill = stationary_bootstrap(
                common.len(),
                |idx| skill_value(a.resampled(idx), b.resampled(idx)),
                skill_value(pa, pb),
                bs.replicates,
                block_c,
                bs.level,
                seed,
            )?;
            let max_lag = config.dm.max_lag.unwrap_or_else(|| default_max_lag(lead));
            let dm = if common.len() >= crate::inference::DM_MIN_SAMPLE {
                Some(dm_test_values(&a.daily_means(), &b.daily_means(), max_lag)?)
            } else {
                None
            };
            Ok(SummaryRow {
                configuration: cfg,
                lead_days: lead,
                metric: metrics[j],
                mean: point,
                ci_lower: ci.lower,
                ci_upper: ci.upper,
                skill: skill.point,
                skill_lower: skill.lower,
                skill_upper: skill.upper,
                diff: diff.point,
                diff_lower: diff.lower,
                diff_upper: diff.upper,
                dm_statistic: dm.map(|d| d.statistic),
                dm_p_value: dm.map(|d| d.p_value),
                n_cases: own.counts.iter().sum(),
                n_days: n_own,
            })
        })
        .collect::<Result<_>>()?;

    let mut daily = Vec::new();
    for (m, _) in &prepared.mixtures {
        for method in config.methods() {
            let cfg = ConfigurationId { mixture: *m, method };
            for &lead in &prepared.leads {
                let s = &scored[&(cfg, lead)];
                for (j, metric) in metrics.iter().enumerate() {
                    for (i, &date) in s.days.iter().enumerate() {
                        daily.push(DailyRow {
                            configuration: cfg,
                            lead_days: lead,
                            date,
                            metric: *metric,
                            value: s.sums[j][i] / s.counts[i] as f64,
                            n_cases: s.counts[i],
                        });
                    }
                }
            }
        }
    }

    let ds = &prepared.dataset;
    let mut significance = BTreeMap::new();
    for &lead in &prepared.leads {
        let mut by_config: BTreeMap<String, BTreeMap<String, ScoreSeries>> = BTreeMap::new();
        for ((cfg, l), s) in &scored {
            if *l != lead {
                continue;
            }
            let label = cfg.to_string();
            let mut stations = BTreeMap::new();
            for (&st, values) in &s.station_crps {
                let id = ds.stations()[st].station_id.clone();
                let (dates, vals): (Vec<_>, Vec<_>) = values.iter().copied().unzip();
                stations.insert(id, ScoreSeries::new(label.clone(), dates, vals)?);
            }
            by_config.insert(label, stations);
        }
        let max_lag = config.dm.max_lag.unwrap_or_else(|| default_max_lag(lead));
        significance.insert(lead, significance_matrix(&by_config, config.dm.level, max_lag)?);
    }

    Ok((
        ScoreTable {
            summary,
            daily,
        },
        significance,
    ))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Calibrate and verify on an already loaded (and corrected) dataset.
pub fn run_experiment(config: &ExperimentConfig, dataset: Dataset) -> Result<ExperimentOutput> {
    with_pool(config.jobs, || {
        let prepared = prepare(config, dataset)?;
        let calibration = calibrate(config, &prepared)?;
        let (table, significance) = verify(config, &prepared, &calibration)?;
        Ok(ExperimentOutput {
            calibration,
            table,
            significance,
        })
    })?
}

/// Calibration only, inside a worker pool of `config.jobs` threads.
pub fn run_calibration(config: &ExperimentConfig, dataset: Dataset) -> Result<(Prepared, Calibration)> {
    with_pool(config.jobs, || {
        let prepared = prepare(config, dataset)?;
        let calibration = calibrate(config, &prepared)?;
        Ok((prepared, calibration))
    })?
}

/// Verification of stored predictions, inside a worker pool.
pub fn run_verification(
    config: &ExperimentConfig,
    dataset: Dataset,
    predictions: Vec<Prediction>,
) -> Result<ExperimentOutput> {
    with_pool(config.jobs, || {
        let prepared = prepare(config, dataset)?;
        let calibration = Calibration {
            predictions,
            parameters: Vec::new(),
            clusters: prepared.clusters.clone(),
        };
        let (table, significance) = verify(config, &prepared, &calibration)?;
        Ok(ExperimentOutput {
            calibration,
            table,
            significance,
        })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Raw,
            Method::Emos {
                mode: ScopeMode::Local,
                n_days: 10,
                k_clusters: None,
            },
            Method::Emos {
                mode: ScopeMode::Regional,
                n_days: 30,
                k_clusters: None,
            },
            Method::Emos {
                mode: ScopeMode::SemiLocal,
                n_days: 30,
                k_clusters: Some(200),
            },
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            Method::Emos {
                mode: ScopeMode::SemiLocal,
                n_days: 30,
                k_clusters: Some(200)
            }
            .label(),
            "Semi-local EMOS, 30d"
        );
        assert!("local_d".parse::<Method>().is_err());
    }

    #[test]
    fn skill_rule() {
        assert_eq!(skill_value(1.0, 1.0), 0.0);
        assert_eq!(skill_value(0.0, 0.0), 0.0);
        assert_eq!(skill_value(0.5, 1.0), 0.5);
    }
}
