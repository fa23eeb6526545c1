//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::emos::{EmosVariant, FitOptions, VariantTag, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::scoring::ScoreConfig;
use crate::selection::ScopeMode;
use crate::synth::Mixture;

use super::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
    /// Lead times to verify; empty means every lead in the data.
    #[serde(default)]
    pub lead_times: Vec<u32>,
    #[serde(default)]
    pub data: DataConfig,
    pub scenario: ScenarioConfig,
    #[serde(default = "default_training")]
    pub training: Vec<TrainingConfig>,
    #[serde(default)]
    pub emos: EmosConfig,
    #[serde(default)]
    pub scores: ScoresConfig,
    pub verification: VerificationConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub dm: DmConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_training() -> Vec<TrainingConfig> {
    vec![TrainingConfig {
        mode: ScopeMode::SemiLocal,
        n_days: 30,
        k_clusters: Some(200),
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `stations.csv`, `observations.csv` and
    /// `forecasts.csv`; the explicit paths below override single files.
    pub dir: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
    pub orographic_correction: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            stations: None,
            observations: None,
            forecasts: None,
            orographic_correction: true,
        }
    }
}

impl DataConfig {
    /// Resolved (observations, forecasts, stations) paths, relative paths
    /// taken from `base`.
    pub fn paths(&self, base: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
            let p = match (explicit, &self.dir) {
                (Some(p), _) => p.clone(),
                (None, Some(d)) => d.join(name),
                (None, None) => {
                    return Err(Error::Config(format!("data: no path for {name} and no dir")))
                }
            };
            Ok(if p.is_relative() { base.join(p) } else { p })
        };
        Ok((
            pick(&self.observations, "observations.csv")?,
            pick(&self.forecasts, "forecasts.csv")?,
            pick(&self.stations, "stations.csv")?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberSelection {
    /// First `M` members in file order.
    #[default]
    First,
    /// Seeded random subset per forecast, for sensitivity checks.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub high_group: String,
    pub low_group: String,
    /// `[M_L, M_H]` pairs.
    pub mixtures: Vec<(usize, usize)>,
    /// Reference mixture; defaults to the pure high-resolution one.
    #[serde(default)]
    pub reference: Option<(usize, usize)>,
    #[serde(default)]
    pub member_selection: MemberSelection,
    /// Declared budget; every mixture must fit within it.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default = "default_cost_high")]
    pub cost_high: f64,
    #[serde(default = "default_cost_low")]
    pub cost_low: f64,
}

fn default_cost_high() -> f64 {
    4.0
}

fn default_cost_low() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn mixtures(&self) -> Vec<Mixture> {
        self.mixtures.iter().map(|&(l, h)| Mixture::new(l, h)).collect()
    }

    pub fn reference(&self) -> Result<Mixture> {
        match self.reference {
            Some((l, h)) => Ok(Mixture::new(l, h)),
            None => self
                .mixtures()
                .into_iter()
                .filter(|m| m.m_low == 0)
                .max_by_key(|m| m.m_high)
                .ok_or_else(|| {
                    Error::Config("no pure high-resolution mixture to use as reference".into())
                }),
        }
    }

    /// Group selection for one mixture, absent groups omitted.
    pub fn selection(&self, m: Mixture) -> Vec<(String, usize)> {
        let mut out = Vec::with_capacity(2);
        if m.m_high > 0 {
            out.push((self.high_group.clone(), m.m_high));
        }
        if m.m_low > 0 {
            out.push((self.low_group.clone(), m.m_low));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: ScopeMode,
    pub n_days: u32,
    /// Number of clusters, semi-local mode only.
    #[serde(default)]
    pub k_clusters: Option<usize>,
}

impl TrainingConfig {
    pub fn method(&self) -> Method {
        Method::Emos {
            mode: self.mode,
            n_days: self.n_days,
            k_clusters: if self.mode == ScopeMode::SemiLocal { self.k_clusters } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmosConfig {
    pub variant: VariantTag,
    pub max_iterations: usize,
    pub f_tol: f64,
    pub nonnegative_b: bool,
    /// Start each day's fit from the previous day's parameters.
    pub warm_start: bool,
}

impl Default for EmosConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            variant: VariantTag::Dual,
            max_iterations: fit.max_iterations,
            f_tol: fit.f_tol,
            nonnegative_b: fit.nonnegative_b,
            warm_start: true,
        }
    }
}

impl EmosConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            f_tol: self.f_tol,
            variance_floor: VARIANCE_FLOOR,
            nonnegative_b: self.nonnegative_b,
        }
    }

    pub fn variant(&self, scenario: &ScenarioConfig) -> Result<EmosVariant> {
        EmosVariant::from_tag(
            self.variant,
            &[scenario.high_group.clone(), scenario.low_group.clone()],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every station-day counts once.
    #[default]
    Case,
    /// Stations count equally regardless of availability.
    Station,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoresConfig {
    /// Climatological percentiles (in percent) defining Brier thresholds.
    pub bs_threshold_percent: Vec<f64>,
    /// Quantile levels in percent.
    pub qs_percent: Vec<f64>,
    pub weighting: Weighting,
}

impl Default for ScoresConfig {
    fn default() -> Self {
        let d = ScoreConfig::default();
        Self {
            bs_threshold_percent: d.bs_threshold_levels.iter().map(|l| (l * 100.0).round()).collect(),
            qs_percent: d.qs_levels.iter().map(|l| (l * 100.0).round()).collect(),
            weighting: Weighting::Case,
        }
    }
}

impl ScoresConfig {
    pub fn score_config(&self) -> Result<ScoreConfig> {
        ScoreConfig::from_percent(&self.bs_threshold_percent, &self.qs_percent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl VerificationConfig {
    pub fn days(&self) -> Vec<NaiveDate> {
        self.start.iter_days().take_while(|d| *d <= self.end).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    /// Defaults to the cube root of the number of days, rounded up.
    pub mean_block_length: Option<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 2000,
            level: 0.95,
            mean_block_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmConfig {
    /// Defaults to lead time minus one day.
    pub max_lag: Option<usize>,
    pub level: f64,
}

impl Default for DmConfig {
    fn default() -> Self {
        Self {
            max_lag: None,
            level: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn methods(&self) -> Vec<Method> {
        std::iter::once(Method::Raw)
            .chain(self.training.iter().map(TrainingConfig::method))
            .collect()
    }

    pub fn max_training_days(&self) -> u32 {
        self.training.iter().map(|t| t.n_days).max().unwrap_or(0)
    }

    /// Static checks; data-dependent checks happen when the run starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.scenario;
        if s.high_group == s.low_group {
            return bad("high_group and low_group must differ".into());
        }
        if s.mixtures.is_empty() {
            return bad("scenario.mixtures is empty".into());
        }
        let mixtures = s.mixtures();
        for (i, m) in mixtures.iter().enumerate() {
            if m.m_low + m.m_high == 0 {
                return bad("mixture (0,0) has no members".into());
            }
            if mixtures[..i].contains(m) {
                return bad(format!("mixture {m} listed twice"));
            }
        }
        if !mixtures.contains(&s.reference()?) {
            return bad(format!("reference mixture {} is not among the mixtures", s.reference()?));
        }
        if !(s.cost_high > 0.0 && s.cost_low > 0.0) {
            return bad("member costs must be positive".into());
        }
        if let Some(budget) = s.budget {
            for m in &mixtures {
                let cost = m.m_high as f64 * s.cost_high + m.m_low as f64 * s.cost_low;
                if cost > budget + 1e-9 * budget.abs().max(1.0) {
                    return bad(format!("mixture {m} costs {cost}, over the budget {budget}"));
                }
            }
        }
        for (i, t) in self.training.iter().enumerate() {
            if t.n_days == 0 {
                return bad("training n_days must be positive".into());
            }
            match (t.mode, t.k_clusters) {
                (ScopeMode::SemiLocal, None | Some(0)) => {
                    return bad("semi-local training needs k_clusters >= 1".into())
                }
                (ScopeMode::Local | ScopeMode::Regional, Some(_)) => {
                    return bad(format!("k_clusters only applies to semi-local training ({})", t.mode))
                }
                _ => {}
            }
            if self.training[..i].iter().any(|o| o.method() == t.method()) {
                return bad(format!("training {} listed twice", t.method()));
            }
        }
        let v = &self.verification;
        if v.end < v.start {
            return bad("verification end precedes start".into());
        }
        if v.days().len() < crate::inference::BOOTSTRAP_MIN_LENGTH {
            return bad(format!(
                "verification period needs at least {} days",
                crate::inference::BOOTSTRAP_MIN_LENGTH
            ));
        }
        if self.bootstrap.replicates < crate::inference::BOOTSTRAP_MIN_REPLICATES {
            return bad(format!(
                "bootstrap.replicates must be >= {}",
                crate::inference::BOOTSTRAP_MIN_REPLICATES
            ));
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return bad("bootstrap.level must lie in (0, 1)".into());
        }
        if let Some(l) = self.bootstrap.mean_block_length {
            if !(l >= 1.0) {
                return bad("bootstrap.mean_block_length must be >= 1".into());
            }
        }
        if !(self.dm.level > 0.0 && self.dm.level < 1.0) {
            return bad("dm.level must lie in (0, 1)".into());
        }
        self.scores.score_config()?;
        self.emos.variant(s)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [data]
        dir = "data"

        [scenario]
        high_group = "H"
        low_group = "L"
        mixtures = [[0, 50], [40, 40], [200, 0]]
        budget = 200

        [verification]
        start = "2016-07-01"
        end = "2016-08-31"
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.scenario.reference().unwrap(), Mixture::new(0, 50));
        assert_eq!(c.training.len(), 1);
        assert_eq!(c.training[0].k_clusters, Some(200));
        assert_eq!(c.bootstrap.replicates, 2000);
        assert_eq!(c.emos.variant, VariantTag::Dual);
        assert_eq!(c.verification.days().len(), 62);
        assert_eq!(c.scores.qs_percent, vec![2.0, 5.0, 10.0, 20.0, 50.0, 80.0, 90.0, 95.0, 98.0]);
        assert_eq!(c.methods().len(), 2);
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let over = MINIMAL.replace("[200, 0]", "[201, 0]");
        assert!(ExperimentConfig::from_toml_str(&over).is_err());
        let no_ref = MINIMAL.replace("[0, 50], ", "");
        assert!(ExperimentConfig::from_toml_str(&no_ref).is_err());
        let typo = MINIMAL.replace("budget", "budgett");
        assert!(ExperimentConfig::from_toml_str(&typo).is_err());
        let short = MINIMAL.replace("2016-08-31", "2016-07-02");
        assert!(ExperimentConfig::from_toml_str(&short).is_err());
    }
}
