//! Training-data selection across stations: local, regional and
//! clustering-based semi-local.
//!
//! Semi-local estimation groups stations by k-means on 24-dimensional
//! feature vectors: 12 quantiles of the station's observed climatology
//! followed by 12 quantiles of the ensemble-mean error (forecast minus
//! observation), both at levels `i/13`, `i = 1..=12`. Features are
//! standardised per dimension before clustering.

mod kmeans;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeansOptions, KMeansResult};

use crate::data::{build_training_window_for, write_text, Dataset, StationMeta, TrainingWindow};
use crate::error::{Error, Result};
use crate::scoring::empirical_quantiles;

pub const FEATURE_QUANTILES: usize = 12;
pub const FEATURE_DIM: usize = 2 * FEATURE_QUANTILES;

/// Equidistant interior levels `i/13`.
pub fn feature_levels() -> Vec<f64> {
    (1..=FEATURE_QUANTILES)
        .map(|i| i as f64 / (FEATURE_QUANTILES + 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeMode {
    Local,
    Regional,
    SemiLocal,
}

impl std::str::FromStr for ScopeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "local" => Ok(ScopeMode::Local),
            "regional" | "global" => Ok(ScopeMode::Regional),
            "semi-local" | "semilocal" => Ok(ScopeMode::SemiLocal),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScopeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScopeMode::Local => "local",
            ScopeMode::Regional => "regional",
            ScopeMode::SemiLocal => "semi-local",
        })
    }
}

/// Which stations pool their training cases.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingScope {
    pub mode: ScopeMode,
    /// Station id (local), `"global"` (regional) or cluster index (semi-local).
    pub scope_id: String,
}

impl TrainingScope {
    pub fn local(station_id: &str) -> Self {
        Self {
            mode: ScopeMode::Local,
            scope_id: station_id.to_string(),
        }
    }

    pub fn regional() -> Self {
        Self {
            mode: ScopeMode::Regional,
            scope_id: "global".into(),
        }
    }

    pub fn semi_local(cluster: usize) -> Self {
        Self {
            mode: ScopeMode::SemiLocal,
            scope_id: cluster.to_string(),
        }
    }

    /// Scope serving `station_id` under `mode`.
    pub fn for_station(
        station_id: &str,
        mode: ScopeMode,
        assignment: Option<&ClusterAssignment>,
    ) -> Result<Self> {
        match mode {
            ScopeMode::Local => Ok(Self::local(station_id)),
            ScopeMode::Regional => Ok(Self::regional()),
            ScopeMode::SemiLocal => {
                let a = assignment
                    .ok_or_else(|| Error::Config("semi-local training needs a cluster assignment".into()))?;
                let c = a.cluster_of(station_id).ok_or_else(|| Error::UnknownStation {
                    station_id: station_id.to_string(),
                    context: Some("cluster assignment".into()),
                })?;
                Ok(Self::semi_local(c))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationFeatures {
    pub station_id: String,
    pub vector: [f64; FEATURE_DIM],
}

pub fn station_features(
    station: &StationMeta,
    obs_history: &[f64],
    ensemble_mean_errors: &[f64],
) -> Result<StationFeatures> {
    if obs_history.is_empty() || ensemble_mean_errors.is_empty() {
        return Err(Error::InvalidInput(format!(
            "station {:?}: features need nonempty climatology and error series",
            station.station_id
        )));
    }
    let levels = feature_levels();
    let clim = empirical_quantiles(obs_history, &levels)?;
    let err = empirical_quantiles(ensemble_mean_errors, &levels)?;
    let mut vector = [0.0; FEATURE_DIM];
    vector[..FEATURE_QUANTILES].copy_from_slice(&clim);
    vector[FEATURE_QUANTILES..].copy_from_slice(&err);
    Ok(StationFeatures {
        station_id: station.station_id.clone(),
        vector,
    })
}

/// Features for every station from the cases of one training window: the
/// window's observations as climatology and ensemble-mean minus observation
/// as errors.
pub fn window_station_features(
    window: &TrainingWindow,
    stations: &[StationMeta],
) -> Result<Vec<StationFeatures>> {
    let mut per_station: HashMap<&str, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for case in &window.cases {
        let e = per_station.entry(case.forecast.station_id.as_str()).or_default();
        e.0.push(case.observation);
        e.1.push(case.forecast.ensemble_mean() - case.observation);
    }
    stations
        .iter()
        .map(|s| {
            let (obs, err) = per_station.get(s.station_id.as_str()).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "station {:?} has no cases in the clustering window",
                    s.station_id
                ))
            })?;
            station_features(s, obs, err)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
    /// Centroids in original feature units.
    pub centroids: Vec<[f64; FEATURE_DIM]>,
    /// Within-cluster sum of squares on standardised features.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub objective_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, station_id: &str) -> Option<usize> {
        self.assignment.get(station_id).copied()
    }

    /// Stations of one cluster.
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &c)| c == cluster)
            .map(|(s, _)| s.as_str())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignment.values() {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Standardise features per dimension and run seeded k-means.
pub fn kmeans_cluster(features: &[StationFeatures], k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_cluster_with(features, k, seed, &KMeansOptions::default())
}

pub fn kmeans_cluster_with(
    features: &[StationFeatures],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if features.len() < k {
        return Err(Error::TooFewStations {
            stations: features.len(),
            k,
        });
    }
    let mut seen = HashSet::new();
    for f in features {
        if !seen.insert(f.station_id.as_str()) {
            return Err(Error::Duplicate(format!("features for station {:?}", f.station_id)));
        }
    }
    let n = features.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    let mut sd = [0.0; FEATURE_DIM];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.vector) {
            *m += v / n;
        }
    }
    for f in features {
        for j in 0..FEATURE_DIM {
            sd[j] += (f.vector[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut sd {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let points: Vec<Vec<f64>> = features
        .iter()
        .map(|f| (0..FEATURE_DIM).map(|j| (f.vector[j] - mean[j]) / sd[j]).collect())
        .collect();

    let result = kmeans(&points, k, seed, opts);
    let centroids = result
        .centroids
        .iter()
        .map(|c| {
            let mut out = [0.0; FEATURE_DIM];
            for j in 0..FEATURE_DIM {
                out[j] = c[j] * sd[j] + mean[j];
            }
            out
        })
        .collect();
    Ok(ClusterAssignment {
        k,
        assignment: features
            .iter()
            .zip(&result.labels)
            .map(|(f, &l)| (f.station_id.clone(), l))
            .collect(),
        centroids,
        objective: result.objective,
        objective_history: result.history,
    })
}

/// Training window pooled over the stations belonging to `scope`.
pub fn assemble_scope_window(
    dataset: &Dataset,
    scope: &TrainingScope,
    assignment: Option<&ClusterAssignment>,
    target_init: NaiveDate,
    lead_days: u32,
    n: u32,
) -> Result<TrainingWindow> {
    match scope.mode {
        ScopeMode::Local => build_training_window_for(dataset, target_init, lead_days, n, |s| {
            s == scope.scope_id
        }),
        ScopeMode::Regional => build_training_window_for(dataset, target_init, lead_days, n, |_| true),
        ScopeMode::SemiLocal => {
            let a = assignment
                .ok_or_else(|| Error::Config("semi-local scope needs a cluster assignment".into()))?;
            let cluster: usize = scope
                .scope_id
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad cluster id {:?}", scope.scope_id)))?;
            if cluster >= a.k {
                return Err(Error::InvalidInput(format!("cluster {cluster} >= k = {}", a.k)));
            }
            build_training_window_for(dataset, target_init, lead_days, n, |s| {
                a.cluster_of(s) == Some(cluster)
            })
        }
    }
}

pub fn write_cluster_assignment(path: &Path, a: &ClusterAssignment) -> Result<()> {
    let mut out = String::from("station_id,cluster_idx\n");
    for (s, c) in &a.assignment {
        out.push_str(&format!("{s},{c}\n"));
    }
    write_text(path, &out)
}

pub fn write_centroids(path: &Path, a: &ClusterAssignment) -> Result<()> {
    let mut header: Vec<String> = (1..=FEATURE_QUANTILES).map(|i| format!("clim_q{i:02}")).collect();
    header.extend((1..=FEATURE_QUANTILES).map(|i| format!("err_q{i:02}")));
    let mut out = header.join(",");
    out.push('\n');
    for c in &a.centroids {
        let row: Vec<String> = c.iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read `station_id,cluster_idx` rows. Centroids are not restored.
pub fn read_cluster_assignment(path: &Path) -> Result<ClusterAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "station_id,cluster_idx" => {}
        other => {
            return Err(Error::BadHeader {
                path: path.into(),
                found: other.map(|(_, h)| h.to_string()).unwrap_or_default(),
                expected: "station_id,cluster_idx".into(),
            })
        }
    }
    let mut assignment = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::MalformedRow {
            path: path.into(),
            line: i as u64 + 1,
            message: m.into(),
        };
        let (s, c) = line.split_once(',').ok_or_else(|| bad("expected two fields"))?;
        let c: usize = c.trim().parse().map_err(|_| bad("cluster_idx is not an integer"))?;
        if assignment.insert(s.trim().to_string(), c).is_some() {
            return Err(Error::Duplicate(format!("station {s:?} in cluster file")));
        }
    }
    let k = assignment.values().max().map_or(0, |m| m + 1);
    Ok(ClusterAssignment {
        k,
        assignment,
        centroids: Vec::new(),
        objective: f64::NAN,
        objective_history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str) -> StationMeta {
        StationMeta {
            station_id: id.into(),
            latitude: 0.0,
            longitude: 0.0,
            station_elevation: 0.0,
            model_elevation: 0.0,
        }
    }

    fn feat(id: &str, base: f64) -> StationFeatures {
        let mut vector = [0.0; FEATURE_DIM];
        for (j, v) in vector.iter_mut().enumerate() {
            *v = base + j as f64 * 0.01;
        }
        StationFeatures {
            station_id: id.into(),
            vector,
        }
    }

    #[test]
    fn degenerate_features() {
        let f = station_features(&meta("A"), &[285.0; 30], &[0.0; 30]).unwrap();
        assert!(f.vector[..12].iter().all(|&v| v == 285.0));
        assert!(f.vector[12..].iter().all(|&v| v == 0.0));
        assert!(station_features(&meta("A"), &[], &[0.0]).is_err());
    }

    #[test]
    fn climatology_block_on_1_to_13() {
        let clim: Vec<f64> = (1..=13).map(f64::from).collect();
        let f = station_features(&meta("A"), &clim, &[0.0]).unwrap();
        let expected: Vec<f64> = (1..=12).map(f64::from).collect();
        assert_eq!(&f.vector[..12], expected.as_slice());
    }

    #[test]
    fn k_one_and_k_n() {
        let feats: Vec<StationFeatures> = (0..5).map(|i| feat(&format!("S{i}"), i as f64)).collect();
        let one = kmeans_cluster(&feats, 1, 3).unwrap();
        assert!(one.assignment.values().all(|&c| c == 0));
        let all = kmeans_cluster(&feats, 5, 3).unwrap();
        assert_eq!(all.sizes(), vec![1; 5]);
        assert_eq!(
            kmeans_cluster(&feats, 6, 3).unwrap_err().kind(),
            "too_few_stations"
        );
    }

    #[test]
    fn cluster_csv_round_trip() {
        let feats: Vec<StationFeatures> = (0..6).map(|i| feat(&format!("S{i}"), (i % 2) as f64 * 10.0)).collect();
        let a = kmeans_cluster(&feats, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clusters.csv");
        write_cluster_assignment(&p, &a).unwrap();
        let b = read_cluster_assignment(&p).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(b.k, 2);
        let c = dir.path().join("centroids.csv");
        write_centroids(&c, &a).unwrap();
        let text = std::fs::read_to_string(c).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 24);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("semi-local".parse::<ScopeMode>().unwrap(), ScopeMode::SemiLocal);
        assert_eq!("LOCAL".parse::<ScopeMode>().unwrap(), ScopeMode::Local);
        assert!("nearby".parse::<ScopeMode>().is_err());
        assert!(TrainingScope::for_station("A", ScopeMode::SemiLocal, None).is_err());
    }
}
