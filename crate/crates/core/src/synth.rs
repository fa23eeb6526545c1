//! Synthetic station-matched dual-resolution ensembles with known truth.
//!
//! The verifying temperature at each station is an AR(1) anomaly around a
//! station climate. Every group's ensemble is centred on the truth plus a
//! group bias, a station-level bias and a centre error, and members scatter
//! around that centre with the group's spread. A per-case spread multiplier
//! scales both the centre error and the member spread, which gives the
//! spread-skill relation EMOS exploits.
//!
//! In exact-EMOS mode the observation for valid day `v` is drawn from
//! `N(a + Σ b_k f̄_k, c + d S²)` given the (orographically corrected)
//! forecast initialised at `v − lead₀`, where `lead₀` is the first
//! configured lead time. The truth parameters are then the population
//! minimiser of the mean CRPS for that lead.

use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    write_forecasts, write_observations, write_stations, write_text, Dataset,
    GroupedEnsembleForecast, MemberGroup, Observation, StationMeta, LAPSE_RATE_K_PER_M,
    MAX_LEAD_DAYS, MIN_LEAD_DAYS,
};
use crate::error::{Error, Result};

/// GRIB limit on members per group.
pub const MAX_GROUP_MEMBERS: usize = 254;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub members: usize,
    /// Mean error of the group, K.
    pub bias: f64,
    /// Standard deviation of the ensemble-centre error at lead 1, K.
    pub error_sd: f64,
    /// Member spread around the centre at lead 1, K.
    pub spread_sd: f64,
    pub cost_per_member: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthParams {
    pub a: f64,
    /// One coefficient per group, in group order.
    pub b: Vec<f64>,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub start_date: NaiveDate,
    /// Number of initialisation days.
    pub n_days: usize,
    pub lead_times: Vec<u32>,
    pub truth_ar1_coefficient: f64,
    pub climate_mean: f64,
    /// Spread of station climates around `climate_mean`, K.
    pub station_climate_sd: f64,
    /// Marginal standard deviation of the AR(1) anomaly, K.
    pub anomaly_sd: f64,
    /// Spread of per-station, per-group forecast biases, K.
    pub station_bias_spread: f64,
    /// Spread of the station minus model elevation mismatch, m.
    pub elevation_mismatch_sd: f64,
    pub groups: Vec<GroupSpec>,
    /// Correlation of ensemble-centre errors between groups.
    pub error_correlation: f64,
    /// Relative growth of error and spread per lead day.
    pub lead_growth: f64,
    /// Log-scale standard deviation of the per-case spread multiplier.
    pub spread_variability: f64,
    pub exact_emos: Option<GroundTruthParams>,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Fig.-1-style dual-resolution setup: the low-resolution group has
    /// 0.1 K² less ensemble variance and 0.05 K more centre error.
    fn default() -> Self {
        let high_spread: f64 = 0.8;
        Self {
            n_stations: 40,
            start_date: NaiveDate::from_ymd_opt(2016, 5, 1).expect("valid date"),
            n_days: 92,
            lead_times: vec![1, 5, 10],
            truth_ar1_coefficient: 0.7,
            climate_mean: 288.0,
            station_climate_sd: 5.0,
            anomaly_sd: 3.0,
            station_bias_spread: 0.5,
            elevation_mismatch_sd: 100.0,
            groups: vec![
                GroupSpec {
                    label: "H".into(),
                    members: 50,
                    bias: 0.5,
                    error_sd: 1.2,
                    spread_sd: high_spread,
                    cost_per_member: 4.0,
                },
                GroupSpec {
                    label: "L".into(),
                    members: 200,
                    bias: 0.5,
                    error_sd: 1.25,
                    spread_sd: (high_spread * high_spread - 0.1).sqrt(),
                    cost_per_member: 1.0,
                },
            ],
            error_correlation: 0.5,
            lead_growth: 0.1,
            spread_variability: 0.3,
            exact_emos: None,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stations == 0 || self.n_days == 0 {
            return bad("n_stations and n_days must be positive".into());
        }
        if self.lead_times.is_empty() {
            return bad("lead_times is empty".into());
        }
        for &l in &self.lead_times {
            if !(MIN_LEAD_DAYS..=MAX_LEAD_DAYS).contains(&l) {
                return bad(format!("lead time {l} outside {MIN_LEAD_DAYS}..={MAX_LEAD_DAYS}"));
            }
        }
        if !(self.truth_ar1_coefficient > -1.0 && self.truth_ar1_coefficient < 1.0) {
            return bad("truth_ar1_coefficient must lie in (-1, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.error_correlation) {
            return bad("error_correlation must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("climate_mean", self.climate_mean),
            ("station_climate_sd", self.station_climate_sd),
            ("anomaly_sd", self.anomaly_sd),
            ("station_bias_spread", self.station_bias_spread),
            ("elevation_mismatch_sd", self.elevation_mismatch_sd),
            ("lead_growth", self.lead_growth),
            ("spread_variability", self.spread_variability),
        ] {
            if !v.is_finite() || (name != "climate_mean" && v < 0.0) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if self.groups.iter().map(|g| g.members).sum::<usize>() == 0 {
            return bad("total member count must be at least 1".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].iter().any(|o| o.label == g.label) {
                return bad(format!("duplicate group label {:?}", g.label));
            }
            if !(g.error_sd > 0.0 && g.spread_sd > 0.0) {
                return bad(format!("group {:?}: error_sd and spread_sd must be positive", g.label));
            }
            if !g.bias.is_finite() || !(g.cost_per_member > 0.0) {
                return bad(format!("group {:?}: bad bias or cost", g.label));
            }
            if g.members > MAX_GROUP_MEMBERS {
                return bad(format!(
                    "group {:?} has {} members, limit is {MAX_GROUP_MEMBERS}",
                    g.label, g.members
                ));
            }
        }
        if let Some(t) = &self.exact_emos {
            if t.b.len() != self.groups.len() {
                return bad(format!(
                    "exact_emos has {} b coefficients for {} groups",
                    t.b.len(),
                    self.groups.len()
                ));
            }
            if !(t.c > 0.0 && t.d >= 0.0) {
                return bad("exact_emos needs c > 0 and d >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub stations: Vec<StationMeta>,
    pub observations: Vec<Observation>,
    pub forecasts: Vec<GroupedEnsembleForecast>,
    /// Present in exact-EMOS mode only.
    pub truth: Option<GroundTruthParams>,
}

impl SynthOutput {
    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(self.stations, self.observations, self.forecasts)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn station_id(i: usize) -> String {
    format!("S{:04}", i + 1)
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let max_lead = *config.lead_times.iter().max().expect("validated") as usize;
    let n_valid = config.n_days + max_lead;
    let phi = config.truth_ar1_coefficient;
    let innovation_sd = config.anomaly_sd * (1.0 - phi * phi).sqrt();
    let n_groups = config.groups.len();

    struct Site {
        meta: StationMeta,
        group_bias: Vec<f64>,
        truth: Vec<f64>,
    }

    let mut sites = Vec::with_capacity(config.n_stations);
    for s in 0..config.n_stations {
        let latitude = rng.random_range(35.0..70.0);
        let longitude = rng.random_range(-10.0..30.0);
        let station_elevation: f64 = rng.random_range(0.0..1500.0);
        let model_elevation = (station_elevation - config.elevation_mismatch_sd * normal(&mut rng)).max(0.0);
        let climate = config.climate_mean + config.station_climate_sd * normal(&mut rng);
        let group_bias = (0..n_groups)
            .map(|_| config.station_bias_spread * normal(&mut rng))
            .collect();
        let mut truth = Vec::with_capacity(n_valid);
        let mut anomaly = config.anomaly_sd * normal(&mut rng);
        for _ in 0..n_valid {
            truth.push(climate + anomaly);
            anomaly = phi * anomaly + innovation_sd * normal(&mut rng);
        }
        sites.push(Site {
            meta: StationMeta {
                station_id: station_id(s),
                latitude,
                longitude,
                station_elevation,
                model_elevation,
            },
            group_bias,
            truth,
        });
    }

    let init_time = |day: usize| -> NaiveDateTime {
        (config.start_date + Duration::days(day as i64))
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
    };
    let lead0 = config.lead_times[0];
    let rho = config.error_correlation;
    let mut forecasts = Vec::with_capacity(config.n_stations * config.n_days * config.lead_times.len());
    let mut exact_obs: Vec<Vec<Option<f64>>> = vec![vec![None; n_valid]; config.n_stations];

    for day in 0..config.n_days {
        for (s, site) in sites.iter().enumerate() {
            for &lead in &config.lead_times {
                let valid = day + lead as usize;
                let growth = 1.0 + config.lead_growth * (lead as f64 - 1.0);
                let sv = config.spread_variability;
                let multiplier = (sv * normal(&mut rng) - 0.5 * sv * sv).exp() * growth;
                let common = normal(&mut rng);
                let mut groups = Vec::with_capacity(n_groups);
                for (g, spec) in config.groups.iter().enumerate() {
                    if spec.members == 0 {
                        continue;
                    }
                    let z = rho.sqrt() * common + (1.0 - rho).sqrt() * normal(&mut rng);
                    let centre = site.truth[valid] + spec.bias + site.group_bias[g] + spec.error_sd * multiplier * z;
                    let members = (0..spec.members)
                        .map(|_| centre + spec.spread_sd * multiplier * normal(&mut rng))
                        .collect();
                    groups.push(MemberGroup {
                        label: spec.label.clone(),
                        members,
                    });
                }
                if let (Some(t), true) = (&config.exact_emos, lead == lead0) {
                    let all: Vec<f64> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
                    let m = all.len() as f64;
                    let mean_all = all.iter().sum::<f64>() / m;
                    let s2 = if all.len() < 2 {
                        0.0
                    } else {
                        all.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / (m - 1.0)
                    };
                    let mut mu = t.a;
                    let mut gi = 0;
                    for (spec, &bk) in config.groups.iter().zip(&t.b) {
                        if spec.members == 0 {
                            continue;
                        }
                        let g = &groups[gi];
                        mu += bk * g.members.iter().sum::<f64>() / g.members.len() as f64;
                        gi += 1;
                    }
                    let sd = (t.c + t.d * s2).sqrt();
                    exact_obs[s][valid] = Some(mu + sd * normal(&mut rng));
                }
                // stored members are raw model values; correction restores the
                // station-level values generated above
                let offset = LAPSE_RATE_K_PER_M * site.meta.delta_z();
                for g in &mut groups {
                    for v in &mut g.members {
                        *v += offset;
                    }
                }
                forecasts.push(GroupedEnsembleForecast {
                    station_id: site.meta.station_id.clone(),
                    init_time: init_time(day),
                    lead_days: lead,
                    groups,
                });
            }
        }
    }

    let mut observations = Vec::with_capacity(config.n_stations * n_valid);
    for (s, site) in sites.iter().enumerate() {
        for v in 0..n_valid {
            let value = match &config.exact_emos {
                Some(_) => match exact_obs[s][v] {
                    Some(x) => x,
                    None => continue,
                },
                None => site.truth[v],
            };
            observations.push(Observation {
                station_id: site.meta.station_id.clone(),
                valid_time: init_time(v),
                value,
            });
        }
    }

    Ok(SynthOutput {
        stations: sites.into_iter().map(|s| s.meta).collect(),
        observations,
        forecasts,
        truth: config.exact_emos.clone(),
    })
}

/// Member counts of one cost-equivalent mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mixture {
    pub m_low: usize,
    pub m_high: usize,
}

impl Mixture {
    pub fn new(m_low: usize, m_high: usize) -> Self {
        Self { m_low, m_high }
    }
}

impl std::fmt::Display for Mixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.m_low, self.m_high)
    }
}

/// All mixtures that spend at most `budget`: for each high-resolution count
/// from the maximum down to 0 the remaining budget is filled with
/// low-resolution members, capped at `cap`.
pub fn sweep(cost_high: f64, cost_low: f64, budget: f64, cap: usize) -> Result<Vec<Mixture>> {
    if !(cost_high > 0.0 && cost_low > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidInput("sweep costs must be positive".into()));
    }
    if budget < cost_high.min(cost_low) {
        return Err(Error::InvalidInput(format!(
            "budget {budget} buys no member (cheapest costs {})",
            cost_high.min(cost_low)
        )));
    }
    // tolerate budgets given as sums of decimal costs
    let eps = 1e-9 * budget.abs().max(1.0);
    let max_high = (((budget + eps) / cost_high).floor() as usize).min(cap);
    let mut out = Vec::with_capacity(max_high + 1);
    for m_high in (0..=max_high).rev() {
        let rest = budget - m_high as f64 * cost_high;
        let m_low = (((rest + eps) / cost_low).floor().max(0.0) as usize).min(cap);
        if m_low == 0 && m_high == 0 {
            continue;
        }
        out.push(Mixture { m_low, m_high });
    }
    Ok(out)
}

/// [`sweep`] over the two groups of `config`; the more expensive one is the
/// high-resolution group.
pub fn cost_equivalent_sweep(config: &SynthConfig, total_budget: f64) -> Result<Vec<Mixture>> {
    let [a, b] = config.groups.as_slice() else {
        return Err(Error::Config(format!(
            "cost-equivalent sweep needs exactly two groups, config has {}",
            config.groups.len()
        )));
    };
    let (high, low) = if a.cost_per_member >= b.cost_per_member { (a, b) } else { (b, a) };
    sweep(high.cost_per_member, low.cost_per_member, total_budget, MAX_GROUP_MEMBERS)
}

/// Writes `stations.csv`, `observations.csv`, `forecasts.csv` and, in exact
/// mode, `truth.json`.
pub fn write_synth_dir(dir: &Path, output: &SynthOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stations(&dir.join("stations.csv"), &output.stations)?;
    write_observations(&dir.join("observations.csv"), &output.observations)?;
    write_forecasts(&dir.join("forecasts.csv"), output.forecasts.iter())?;
    if let Some(t) = &output.truth {
        let json = serde_json::to_string_pretty(t).expect("plain struct serializes");
        write_text(&dir.join("truth.json"), &(json + "\n"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_stations: 3,
            n_days: 10,
            lead_times: vec![1, 2],
            groups: vec![
                GroupSpec {
                    label: "H".into(),
                    members: 4,
                    bias: 0.0,
                    error_sd: 1.0,
                    spread_sd: 1.0,
                    cost_per_member: 4.0,
                },
                GroupSpec {
                    label: "L".into(),
                    members: 6,
                    bias: 0.0,
                    error_sd: 1.0,
                    spread_sd: 1.0,
                    cost_per_member: 1.0,
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stations.len(), 3);
        assert_eq!(a.forecasts.len(), 3 * 10 * 2);
        assert_eq!(a.observations.len(), 3 * 12);
        assert!(a.truth.is_none());
        let mut other = small();
        other.seed = 2;
        assert_ne!(generate(&other).unwrap(), a);
        a.into_dataset().unwrap();
    }

    #[test]
    fn exact_mode_observes_first_lead_days_only() {
        let mut cfg = small();
        cfg.lead_times = vec![2, 1];
        cfg.exact_emos = Some(GroundTruthParams {
            a: 0.0,
            b: vec![0.5, 0.5],
            c: 1.0,
            d: 0.5,
        });
        let out = generate(&cfg).unwrap();
        assert_eq!(out.observations.len(), 3 * 10);
        assert_eq!(out.truth, cfg.exact_emos);
        let first = cfg.start_date + Duration::days(2);
        assert!(out.observations.iter().all(|o| o.valid_time.date() >= first));
    }

    #[test]
    fn validation() {
        let mut cfg = small();
        cfg.groups[0].spread_sd = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.groups[1].members = 255;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.truth_ar1_coefficient = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.lead_times = vec![16];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.groups.iter_mut().for_each(|g| g.members = 0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn orographic_offset_is_undone_by_correction() {
        let out = generate(&small()).unwrap();
        let ds = out.clone().into_dataset().unwrap();
        let corrected = ds.orographically_corrected();
        let st = &out.stations[0];
        let raw = out.forecasts.iter().find(|f| f.station_id == st.station_id).unwrap();
        let fixed = corrected
            .forecasts()
            .find(|f| f.station_id == st.station_id && f.init_time == raw.init_time && f.lead_days == raw.lead_days)
            .unwrap();
        let shift = LAPSE_RATE_K_PER_M * st.delta_z();
        for (r, c) in raw.members().zip(fixed.members()) {
            assert!((r - shift - c).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_minimal_budget() {
        assert_eq!(sweep(4.0, 1.0, 4.0, 254).unwrap(), vec![Mixture::new(0, 1), Mixture::new(4, 0)]);
        assert_eq!(sweep(16.0, 1.0, 16.0, 254).unwrap(), vec![Mixture::new(0, 1), Mixture::new(16, 0)]);
        assert!(sweep(4.0, 1.0, 0.5, 254).is_err());
    }

    #[test]
    fn sweep_within_budget() {
        for (ch, cl, budget) in [(4.0, 1.0, 200.0), (16.0, 1.0, 256.0), (3.0, 2.0, 37.0)] {
            for m in sweep(ch, cl, budget, 254).unwrap() {
                assert!(m.m_high as f64 * ch + m.m_low as f64 * cl <= budget + 1e-9);
            }
        }
    }
}
