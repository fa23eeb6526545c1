//! Station-matched forecast and observation data.
//!
//! A [`Dataset`] is immutable once built: ingestion validates referential
//! integrity and builds lookup indices, after which the dataset can be
//! shared across worker threads. Training windows hold cheap `Arc` clones
//! of the forecasts they reference.
//!
//! Time handling is at daily granularity. Forecasts are initialised once per
//! day; the cycle hour carried by `init_time` is stored verbatim and only
//! used to derive `valid_time = init_time + lead_days`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard-atmosphere lapse rate used by the orographic correction (K/m).
pub const LAPSE_RATE_K_PER_M: f64 = 0.0065;

/// Accepted lead times in whole days.
pub const MIN_LEAD_DAYS: u32 = 1;
pub const MAX_LEAD_DAYS: u32 = 15;

pub const STATIONS_HEADER: &[&str] = &[
    "station_id",
    "lat",
    "lon",
    "station_elev_m",
    "model_elev_m",
];
pub const OBSERVATIONS_HEADER: &[&str] = &["station_id", "valid_time", "value_k"];
pub const FORECASTS_HEADER: &[&str] = &[
    "station_id",
    "init_time",
    "lead_days",
    "group",
    "member_idx",
    "value_k",
];

const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub station_elevation: f64,
    pub model_elevation: f64,
}

impl StationMeta {
    /// Elevation difference `station − model` in metres.
    pub fn delta_z(&self) -> f64 {
        self.station_elevation - self.model_elevation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station_id: String,
    pub valid_time: NaiveDateTime,
    pub value: f64,
}

/// One exchangeable group of ensemble members, e.g. all members of one
/// model resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberGroup {
    pub label: String,
    pub members: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedEnsembleForecast {
    pub station_id: String,
    pub init_time: NaiveDateTime,
    pub lead_days: u32,
    pub groups: Vec<MemberGroup>,
}

impl GroupedEnsembleForecast {
    pub fn valid_time(&self) -> NaiveDateTime {
        self.init_time + Duration::days(i64::from(self.lead_days))
    }

    pub fn init_date(&self) -> NaiveDate {
        self.init_time.date()
    }

    pub fn member_count(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    pub fn group(&self, label: &str) -> Option<&MemberGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// All members in group order.
    pub fn members(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().flat_map(|g| g.members.iter().copied())
    }

    pub fn ensemble_mean(&self) -> f64 {
        let m = self.member_count();
        self.members().sum::<f64>() / m as f64
    }

    /// Keep the first `count` members of each listed group, dropping groups
    /// whose count is zero or that are not listed.
    ///
    /// Fails when a group holds fewer members than requested.
    pub fn select_members(&self, selection: &[(String, usize)]) -> Result<Self> {
        let mut groups = Vec::with_capacity(selection.len());
        for (label, count) in selection {
            if *count == 0 {
                continue;
            }
            let group = self.group(label).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "forecast {}/{}/{}d has no group {label:?}",
                    self.station_id, self.init_time, self.lead_days
                ))
            })?;
            if group.members.len() < *count {
                return Err(Error::InvalidInput(format!(
                    "group {label:?} of forecast {}/{}/{}d has {} members, {count} requested",
                    self.station_id,
                    self.init_time,
                    self.lead_days,
                    group.members.len()
                )));
            }
            groups.push(MemberGroup {
                label: label.clone(),
                members: group.members[..*count].to_vec(),
            });
        }
        if groups.is_empty() {
            return Err(Error::InvalidInput("member selection is empty".into()));
        }
        Ok(Self {
            station_id: self.station_id.clone(),
            init_time: self.init_time,
            lead_days: self.lead_days,
            groups,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(MIN_LEAD_DAYS..=MAX_LEAD_DAYS).contains(&self.lead_days) {
            return Err(Error::InvalidInput(format!(
                "lead time {}d outside {MIN_LEAD_DAYS}..={MAX_LEAD_DAYS}",
                self.lead_days
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::InvalidInput(format!(
                "forecast {}/{} has no members",
                self.station_id, self.init_time
            )));
        }
        let mut seen = HashSet::new();
        for g in &self.groups {
            if g.members.is_empty() {
                return Err(Error::InvalidInput(format!("group {:?} is empty", g.label)));
            }
            if !seen.insert(g.label.as_str()) {
                return Err(Error::Duplicate(format!("group {:?} listed twice", g.label)));
            }
            if g.members.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("forecast member"));
            }
        }
        Ok(())
    }
}

/// Apply the lapse-rate correction for the station/model height mismatch.
///
/// `Δz = station_elevation − model_elevation`; a station below the model
/// surface (`Δz < 0`) is warmed.
pub fn orographic_correction(raw_member: f64, station_elevation: f64, model_elevation: f64) -> f64 {
    raw_member - LAPSE_RATE_K_PER_M * (station_elevation - model_elevation)
}

/// A forecast paired with its verifying observation.
#[derive(Debug, Clone)]
pub struct Case {
    pub forecast: Arc<GroupedEnsembleForecast>,
    pub observation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub target_init: NaiveDate,
    pub lead_days: u32,
    pub length_days: u32,
    pub cases: Vec<Case>,
    /// Forecasts inside the window skipped for lack of an observation.
    pub dropped: usize,
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// First init date covered by the window.
    pub fn first_day(&self) -> NaiveDate {
        self.target_init - Duration::days(i64::from(self.length_days))
    }
}

/// Validated, indexed collection of stations, observations and forecasts.
#[derive(Debug, Clone)]
pub struct Dataset {
    stations: Vec<StationMeta>,
    observations: Vec<Observation>,
    forecasts: Vec<Arc<GroupedEnsembleForecast>>,
    station_index: HashMap<String, usize>,
    obs_index: HashMap<(usize, NaiveDateTime), usize>,
    /// (init date, lead) -> forecast indices in station order.
    by_day: BTreeMap<(NaiveDate, u32), Vec<usize>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.stations == other.stations
            && self.observations == other.observations
            && self.forecasts == other.forecasts
    }
}

impl Dataset {
    pub fn new(
        stations: Vec<StationMeta>,
        observations: Vec<Observation>,
        forecasts: Vec<GroupedEnsembleForecast>,
    ) -> Result<Self> {
        Self::from_shared(
            stations,
            observations,
            forecasts.into_iter().map(Arc::new).collect(),
        )
    }

    fn from_shared(
        stations: Vec<StationMeta>,
        observations: Vec<Observation>,
        forecasts: Vec<Arc<GroupedEnsembleForecast>>,
    ) -> Result<Self> {
        let mut station_index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if !(-90.0..=90.0).contains(&s.latitude) {
                return Err(Error::InvalidInput(format!(
                    "station {:?}: latitude {} outside [-90, 90]",
                    s.station_id, s.latitude
                )));
            }
            if !(-180.0..180.0).contains(&s.longitude) {
                return Err(Error::InvalidInput(format!(
                    "station {:?}: longitude {} outside [-180, 180)",
                    s.station_id, s.longitude
                )));
            }
            if !s.station_elevation.is_finite() || !s.model_elevation.is_finite() {
                return Err(Error::NonFinite("station elevation"));
            }
            if station_index.insert(s.station_id.clone(), i).is_some() {
                return Err(Error::Duplicate(format!("station {:?}", s.station_id)));
            }
        }

        let mut obs_index = HashMap::with_capacity(observations.len());
        for (i, o) in observations.iter().enumerate() {
            if !o.value.is_finite() {
                return Err(Error::NonFinite("observation value"));
            }
            let s = *station_index
                .get(&o.station_id)
                .ok_or_else(|| Error::UnknownStation {
                    station_id: o.station_id.clone(),
                    context: Some("observation".into()),
                })?;
            if obs_index.insert((s, o.valid_time), i).is_some() {
                return Err(Error::Duplicate(format!(
                    "observation {}/{}",
                    o.station_id, o.valid_time
                )));
            }
        }

        let mut by_day: BTreeMap<(NaiveDate, u32), Vec<usize>> = BTreeMap::new();
        let mut seen = HashSet::with_capacity(forecasts.len());
        for (i, f) in forecasts.iter().enumerate() {
            f.validate()?;
            let s = *station_index
                .get(&f.station_id)
                .ok_or_else(|| Error::UnknownStation {
                    station_id: f.station_id.clone(),
                    context: Some("forecast".into()),
                })?;
            if !seen.insert((s, f.init_time, f.lead_days)) {
                return Err(Error::Duplicate(format!(
                    "forecast {}/{}/{}d",
                    f.station_id, f.init_time, f.lead_days
                )));
            }
            by_day.entry((f.init_date(), f.lead_days)).or_default().push(i);
        }
        for idx in by_day.values_mut() {
            idx.sort_by_key(|&i| {
                let f = &forecasts[i];
                (station_index[&f.station_id], f.init_time)
            });
        }

        Ok(Self {
            stations,
            observations,
            forecasts,
            station_index,
            obs_index,
            by_day,
        })
    }

    pub fn stations(&self) -> &[StationMeta] {
        &self.stations
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn forecasts(&self) -> impl ExactSizeIterator<Item = &GroupedEnsembleForecast> {
        self.forecasts.iter().map(|f| f.as_ref())
    }

    pub fn station(&self, station_id: &str) -> Option<&StationMeta> {
        self.station_index.get(station_id).map(|&i| &self.stations[i])
    }

    pub fn station_position(&self, station_id: &str) -> Option<usize> {
        self.station_index.get(station_id).copied()
    }

    pub fn observation(&self, station_id: &str, valid_time: NaiveDateTime) -> Option<f64> {
        let s = *self.station_index.get(station_id)?;
        self.obs_index
            .get(&(s, valid_time))
            .map(|&i| self.observations[i].value)
    }

    /// Distinct lead times present, ascending.
    pub fn lead_times(&self) -> Vec<u32> {
        let set: std::collections::BTreeSet<u32> = self.by_day.keys().map(|k| k.1).collect();
        set.into_iter().collect()
    }

    /// First and last forecast init dates.
    pub fn init_date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.by_day.keys().next()?.0;
        let last = self.by_day.keys().next_back()?.0;
        Some((first, last))
    }

    /// Forecasts initialised on `day` at `lead_days` whose station passes
    /// `keep`, paired with observations, in station order. Returns the cases
    /// and the number of forecasts without an observation.
    pub fn cases_on(
        &self,
        day: NaiveDate,
        lead_days: u32,
        keep: impl Fn(&str) -> bool,
    ) -> (Vec<Case>, usize) {
        let mut cases = Vec::new();
        let mut dropped = 0;
        if let Some(idx) = self.by_day.get(&(day, lead_days)) {
            for &i in idx {
                let f = &self.forecasts[i];
                if !keep(&f.station_id) {
                    continue;
                }
                match self.observation(&f.station_id, f.valid_time()) {
                    Some(obs) => cases.push(Case {
                        forecast: Arc::clone(f),
                        observation: obs,
                    }),
                    None => dropped += 1,
                }
            }
        }
        (cases, dropped)
    }

    /// A copy with every forecast member lapse-rate corrected to the station
    /// elevation.
    pub fn orographically_corrected(&self) -> Self {
        let forecasts = self
            .forecasts
            .iter()
            .map(|f| {
                let s = &self.stations[self.station_index[&f.station_id]];
                let mut f = GroupedEnsembleForecast::clone(f);
                for g in &mut f.groups {
                    for m in &mut g.members {
                        *m = orographic_correction(*m, s.station_elevation, s.model_elevation);
                    }
                }
                Arc::new(f)
            })
            .collect();
        Self {
            forecasts,
            ..self.clone()
        }
    }

    /// Rebuild the dataset with every forecast passed through `f`.
    pub fn map_forecasts(
        &self,
        f: impl Fn(&GroupedEnsembleForecast) -> Result<GroupedEnsembleForecast>,
    ) -> Result<Self> {
        let forecasts = self
            .forecasts
            .iter()
            .map(|fc| f(fc).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Self::from_shared(self.stations.clone(), self.observations.clone(), forecasts)
    }
}

/// Collect all cases initialised in the `n` days before `target_init` at the
/// given lead time, for stations passing `keep`.
pub fn build_training_window_for(
    dataset: &Dataset,
    target_init: NaiveDate,
    lead_days: u32,
    n: u32,
    keep: impl Fn(&str) -> bool,
) -> Result<TrainingWindow> {
    if n == 0 {
        return Err(Error::InvalidInput("training window length must be >= 1".into()));
    }
    let mut cases = Vec::new();
    let mut dropped = 0;
    for back in (1..=i64::from(n)).rev() {
        let day = target_init - Duration::days(back);
        let (mut day_cases, day_dropped) = dataset.cases_on(day, lead_days, &keep);
        cases.append(&mut day_cases);
        dropped += day_dropped;
    }
    if dropped > 0 {
        log::debug!(
            "training window {target_init} lead {lead_days}d: dropped {dropped} cases without observations"
        );
    }
    if cases.is_empty() {
        return Err(Error::EmptyWindow {
            target: target_init,
            lead_days,
            dropped,
        });
    }
    Ok(TrainingWindow {
        target_init,
        lead_days,
        length_days: n,
        cases,
        dropped,
    })
}

/// Rolling training window over all stations.
pub fn build_training_window(
    dataset: &Dataset,
    target_init: NaiveDate,
    lead_days: u32,
    n: u32,
) -> Result<TrainingWindow> {
    build_training_window_for(dataset, target_init, lead_days, n, |_| true)
}

// ---------------------------------------------------------------------------
// CSV ingestion and serialisation

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
}

pub fn format_datetime(t: NaiveDateTime) -> String {
    t.format(DATETIME_FORMAT).to_string()
}

pub(crate) struct CsvRows {
    path: std::path::PathBuf,
    reader: csv::Reader<File>,
}

impl CsvRows {
    pub(crate) fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let found = reader
            .headers()
            .map_err(|e| Error::MalformedRow {
                path: path.into(),
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(Error::BadHeader {
                path: path.into(),
                found: found.iter().collect::<Vec<_>>().join(","),
                expected: header.join(","),
            });
        }
        Ok(Self {
            path: path.into(),
            reader,
        })
    }

    /// Iterate rows as (line number, record).
    pub(crate) fn for_each(
        mut self,
        mut f: impl FnMut(&Row<'_>) -> Result<()>,
    ) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map(|p| p.line()).unwrap_or(0);
                    let row = Row {
                        path: &self.path,
                        line,
                        record: &record,
                    };
                    f(&row)?;
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    return Err(Error::MalformedRow {
                        path: self.path.clone(),
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
}

pub(crate) struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::MalformedRow {
            path: self.path.into(),
            line: self.line,
            message: message.into(),
        }
    }

    pub(crate) fn str(&self, i: usize, name: &str) -> Result<&str> {
        match self.record.get(i) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(self.error(format!("missing {name}"))),
        }
    }

    /// Optional field: empty means `None`. Infinities are accepted.
    pub(crate) fn opt_f64(&self, i: usize, name: &str) -> Result<Option<f64>> {
        match self.record.get(i) {
            None | Some("") => Ok(None),
            Some(s) => match s.parse::<f64>() {
                Ok(v) if !v.is_nan() => Ok(Some(v)),
                _ => Err(self.error(format!("{name}: {s:?} is not a number"))),
            },
        }
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T> {
        let s = self.str(i, name)?;
        s.parse::<T>()
            .map_err(|_| self.error(format!("{name}: cannot parse {s:?}")))
    }

    pub(crate) fn f64(&self, i: usize, name: &str) -> Result<f64> {
        let s = self.str(i, name)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("{name}: {s:?} is not a finite number"))),
        }
    }

    pub(crate) fn datetime(&self, i: usize, name: &str) -> Result<NaiveDateTime> {
        let s = self.str(i, name)?;
        parse_datetime(s).ok_or_else(|| self.error(format!("{name}: {s:?} is not an ISO-8601 date-time")))
    }
}

pub fn read_stations(path: &Path) -> Result<Vec<StationMeta>> {
    let mut out = Vec::new();
    CsvRows::open(path, STATIONS_HEADER)?.for_each(|row| {
        out.push(StationMeta {
            station_id: row.str(0, "station_id")?.to_string(),
            latitude: row.f64(1, "lat")?,
            longitude: row.f64(2, "lon")?,
            station_elevation: row.f64(3, "station_elev_m")?,
            model_elevation: row.f64(4, "model_elev_m")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    CsvRows::open(path, OBSERVATIONS_HEADER)?.for_each(|row| {
        out.push(Observation {
            station_id: row.str(0, "station_id")?.to_string(),
            valid_time: row.datetime(1, "valid_time")?,
            value: row.f64(2, "value_k")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Read member rows and assemble them into grouped forecasts.
///
/// Forecast and group order follow first appearance in the file; members
/// within a group are ordered by `member_idx`. Stations are checked against
/// `known_stations` so errors carry the offending line.
pub fn read_forecasts(
    path: &Path,
    known_stations: &HashSet<String>,
) -> Result<Vec<GroupedEnsembleForecast>> {
    type Key = (String, NaiveDateTime, u32);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<(String, Vec<(u32, f64)>)>> = HashMap::new();
    let mut seen: HashSet<(Key, String, u32)> = HashSet::new();

    CsvRows::open(path, FORECASTS_HEADER)?.for_each(|row| {
        let station_id = row.str(0, "station_id")?.to_string();
        if !known_stations.contains(&station_id) {
            return Err(Error::UnknownStation {
                station_id,
                context: Some(format!("{}:{}", path.display(), row.line)),
            });
        }
        let init_time = row.datetime(1, "init_time")?;
        let lead_str = row.str(2, "lead_days")?;
        let lead_days: u32 = lead_str.parse().map_err(|_| {
            row.error(format!(
                "lead_days: {lead_str:?} is not a whole number of days"
            ))
        })?;
        if !(MIN_LEAD_DAYS..=MAX_LEAD_DAYS).contains(&lead_days) {
            return Err(row.error(format!(
                "lead_days {lead_days} outside {MIN_LEAD_DAYS}..={MAX_LEAD_DAYS}"
            )));
        }
        let label = row.str(3, "group")?.to_string();
        let idx_str = row.str(4, "member_idx")?;
        let member_idx: u32 = idx_str
            .parse()
            .map_err(|_| row.error(format!("member_idx: {idx_str:?} is not a nonnegative integer")))?;
        let value = row.f64(5, "value_k")?;

        let key = (station_id, init_time, lead_days);
        if !seen.insert((key.clone(), label.clone(), member_idx)) {
            return Err(Error::Duplicate(format!(
                "{}:{}: member {member_idx} of group {label:?} for {}/{}/{}d",
                path.display(),
                row.line,
                key.0,
                format_datetime(key.1),
                key.2
            )));
        }
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        match entry.iter_mut().find(|(l, _)| *l == label) {
            Some((_, members)) => members.push((member_idx, value)),
            None => entry.push((label, vec![(member_idx, value)])),
        }
        Ok(())
    })?;

    Ok(order
        .into_iter()
        .map(|key| {
            let gs = groups.remove(&key).expect("every ordered key has groups");
            let (station_id, init_time, lead_days) = key;
            GroupedEnsembleForecast {
                station_id,
                init_time,
                lead_days,
                groups: gs
                    .into_iter()
                    .map(|(label, mut members)| {
                        members.sort_by_key(|m| m.0);
                        MemberGroup {
                            label,
                            members: members.into_iter().map(|m| m.1).collect(),
                        }
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Load and cross-reference the three CSV inputs.
pub fn load_dataset(
    observations_path: &Path,
    forecasts_path: &Path,
    stations_path: &Path,
) -> Result<Dataset> {
    let stations = read_stations(stations_path)?;
    let known: HashSet<String> = stations.iter().map(|s| s.station_id.clone()).collect();
    let observations = read_observations(observations_path)?;
    let forecasts = read_forecasts(forecasts_path, &known)?;
    Dataset::new(stations, observations, forecasts)
}

/// Load `stations.csv`, `observations.csv` and `forecasts.csv` from a directory.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(
        &dir.join("observations.csv"),
        &dir.join("forecasts.csv"),
        &dir.join("stations.csv"),
    )
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_stations(path: &Path, stations: &[StationMeta]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(STATIONS_HEADER).map_err(|e| csv_err(path, e))?;
    for s in stations {
        w.write_record([
            s.station_id.clone(),
            s.latitude.to_string(),
            s.longitude.to_string(),
            s.station_elevation.to_string(),
            s.model_elevation.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(OBSERVATIONS_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for o in observations {
        w.write_record([
            o.station_id.clone(),
            format_datetime(o.valid_time),
            o.value.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_forecasts<'a>(
    path: &Path,
    forecasts: impl IntoIterator<Item = &'a GroupedEnsembleForecast>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(FORECASTS_HEADER).map_err(|e| csv_err(path, e))?;
    for f in forecasts {
        let init = format_datetime(f.init_time);
        let lead = f.lead_days.to_string();
        for g in &f.groups {
            for (i, m) in g.members.iter().enumerate() {
                w.write_record([
                    f.station_id.as_str(),
                    init.as_str(),
                    lead.as_str(),
                    g.label.as_str(),
                    i.to_string().as_str(),
                    m.to_string().as_str(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the dataset as the three CSV files into `dir`.
pub fn write_dataset_dir(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stations(&dir.join("stations.csv"), dataset.stations())?;
    write_observations(&dir.join("observations.csv"), dataset.observations())?;
    write_forecasts(&dir.join("forecasts.csv"), dataset.forecasts())
}

/// Write a single text file, creating parent directories.
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dt(s: &str) -> NaiveDateTime {
        parse_datetime(s).unwrap()
    }

    fn station(id: &str) -> StationMeta {
        StationMeta {
            station_id: id.into(),
            latitude: 47.5,
            longitude: 19.0,
            station_elevation: 100.0,
            model_elevation: 150.0,
        }
    }

    fn fc(station: &str, init: &str, lead: u32, members: &[f64]) -> GroupedEnsembleForecast {
        GroupedEnsembleForecast {
            station_id: station.into(),
            init_time: dt(init),
            lead_days: lead,
            groups: vec![MemberGroup {
                label: "H".into(),
                members: members.to_vec(),
            }],
        }
    }

    #[test]
    fn orographic_correction_sign_convention() {
        assert_eq!(orographic_correction(290.0, 10.0, 10.0), 290.0);
        // station 100 m below the model surface is warmed
        assert!((orographic_correction(290.0, 0.0, 100.0) - 290.65).abs() < 1e-12);
        // station 200 m above: 290 - 0.0065 * 200 = 288.7
        assert!((orographic_correction(290.0, 300.0, 100.0) - 288.70).abs() < 1e-12);
    }

    #[test]
    fn datetime_parsing_variants() {
        let t = dt("2016-07-01T12:00:00");
        assert_eq!(dt("2016-07-01 12:00:00"), t);
        assert_eq!(dt("2016-07-01T12:00Z"), t);
        assert_eq!(dt("2016-07-01").date(), t.date());
        assert!(parse_datetime("01/07/2016").is_none());
        assert_eq!(format_datetime(t), "2016-07-01T12:00:00");
    }

    #[test]
    fn duplicate_station_rejected() {
        let err = Dataset::new(vec![station("A"), station("A")], vec![], vec![]).unwrap_err();
        assert_eq!(err.kind(), "duplicate");
    }

    #[test]
    fn bad_coordinates_rejected() {
        let mut s = station("A");
        s.longitude = 180.0;
        assert!(Dataset::new(vec![s], vec![], vec![]).is_err());
        let mut s = station("A");
        s.latitude = -91.0;
        assert!(Dataset::new(vec![s], vec![], vec![]).is_err());
    }

    #[test]
    fn forecast_with_unknown_station_rejected() {
        let err = Dataset::new(
            vec![station("A")],
            vec![],
            vec![fc("B", "2016-06-01T00:00:00", 1, &[1.0])],
        )
        .unwrap_err();
        assert_eq!(err.kind(), "unknown_station");
    }

    #[test]
    fn select_members_keeps_prefix_and_drops_zero_groups() {
        let f = GroupedEnsembleForecast {
            station_id: "A".into(),
            init_time: dt("2016-06-01"),
            lead_days: 1,
            groups: vec![
                MemberGroup {
                    label: "H".into(),
                    members: vec![1.0, 2.0, 3.0],
                },
                MemberGroup {
                    label: "L".into(),
                    members: vec![4.0, 5.0],
                },
            ],
        };
        let s = f
            .select_members(&[("H".into(), 2), ("L".into(), 0)])
            .unwrap();
        assert_eq!(s.groups.len(), 1);
        assert_eq!(s.groups[0].members, vec![1.0, 2.0]);
        assert!(f.select_members(&[("L".into(), 3)]).is_err());
    }

    fn daily_dataset(days: u32) -> Dataset {
        let start = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        let mut obs = Vec::new();
        let mut fcs = Vec::new();
        for d in 0..days + 2 {
            let day = start + Duration::days(i64::from(d));
            let t = day.and_hms_opt(0, 0, 0).unwrap();
            obs.push(Observation {
                station_id: "A".into(),
                valid_time: t,
                value: 280.0 + f64::from(d),
            });
            fcs.push(GroupedEnsembleForecast {
                station_id: "A".into(),
                init_time: t,
                lead_days: 1,
                groups: vec![MemberGroup {
                    label: "H".into(),
                    members: vec![280.0, 281.0],
                }],
            });
        }
        Dataset::new(vec![station("A")], obs, fcs).unwrap()
    }

    #[test]
    fn window_covers_preceding_days_only() {
        let ds = daily_dataset(40);
        let target = NaiveDate::from_ymd_opt(2016, 7, 1).unwrap();
        let w = build_training_window(&ds, target, 1, 30).unwrap();
        assert_eq!(w.len(), 30);
        let first = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        for c in &w.cases {
            let d = c.forecast.init_date();
            assert!(d >= first && d < target);
        }
        let w1 = build_training_window(&ds, target, 1, 1).unwrap();
        assert_eq!(w1.len(), 1);
        assert_eq!(w1.cases[0].forecast.init_date(), target.pred_opt().unwrap());
    }

    #[test]
    fn window_before_data_is_empty_error() {
        let ds = daily_dataset(10);
        let target = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        let err = build_training_window(&ds, target, 1, 30).unwrap_err();
        assert_eq!(err.kind(), "empty_window");
        assert!(build_training_window(&ds, target, 1, 0).is_err());
    }

    #[test]
    fn missing_observations_are_dropped_and_counted() {
        let ds = daily_dataset(10);
        let start = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
        // the last forecast (init day 11, valid day 12) has no observation
        let target = start + Duration::days(12);
        let w = build_training_window(&ds, target, 1, 2).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.dropped, 1);
    }
}
