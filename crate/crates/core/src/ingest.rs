//! Raw hourly file ingestion, gap filling, population weighting and alignment.
//!
//! The flow is `parse_*_csv` → [`regularize`] per series → [`weight_weather`]
//! across cities → [`align`] with the load series. Gaps are filled per city
//! before weighting, so an outage at one station cannot leak into the others
//! through the weighted sum.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{HourlyAxis, TimeError, Timestamp};

/// Default longest gap (hours) bridged by linear interpolation.
pub const DEFAULT_MAX_INTERP_GAP: usize = 3;

/// Weather variables carried per city.
pub const WEATHER_VARIABLES: [&str; 5] = ["tavg", "tmin", "tmax", "prcp", "snow"];

/// Name of the load column in an [`AlignedDataset`].
pub const LOAD_COLUMN: &str = "load";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, line {line}: {source}")]
    BadTimestamp {
        path: PathBuf,
        line: u64,
        #[source]
        source: TimeError,
    },
    #[error("{path}, line {line}: `{text}` in column `{column}` is not a number")]
    BadValue {
        path: PathBuf,
        line: u64,
        column: String,
        text: String,
    },
    #[error("{path}, line {line}: timestamp {timestamp} is not on an hour boundary")]
    NotHourAligned {
        path: PathBuf,
        line: u64,
        timestamp: Timestamp,
    },
    #[error("{series}: conflicting duplicate rows for {timestamp} ({first} vs {second})")]
    ConflictingDuplicate {
        series: String,
        timestamp: Timestamp,
        first: f64,
        second: f64,
    },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("{series}: series starts with a gap at {timestamp}; nothing to fill from")]
    LeadingGap { series: String, timestamp: Timestamp },
    #[error("{series}: every value is missing")]
    AllMissing { series: String },
    #[error("`{left}` and `{right}` are not on the same hourly axis")]
    MismatchedAxes { left: String, right: String },
    #[error("city `{city}` carries variables {found:?}, expected {expected:?}")]
    MismatchedVariables {
        city: String,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("city `{city}` has invalid population weight {weight}")]
    InvalidWeight { city: String, weight: f64 },
    #[error("population weights sum to zero")]
    ZeroWeights,
    #[error("no cities supplied")]
    NoCities,
    #[error("load and weather time ranges do not overlap")]
    EmptyIntersection,
    #[error("validation failed for `{series}` at {timestamp}: {reason}")]
    ValidationFailure {
        series: String,
        timestamp: Timestamp,
        reason: String,
    },
}

/// How a value in an [`HourlySeries`] came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillFlag {
    Observed,
    Interpolated,
    ForwardFilled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub at: Timestamp,
    pub value: Option<f64>,
    pub flag: FillFlag,
}

/// Sorted, deduplicated hourly observations that may still contain gaps,
/// either as missing rows or as rows with an empty value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub points: Vec<RawPoint>,
    /// Duplicate rows that carried identical values and were collapsed.
    pub duplicates_collapsed: usize,
}

impl RawSeries {
    /// Sorts and deduplicates `(timestamp, value)` observations.
    pub fn from_observations(
        name: impl Into<String>,
        mut obs: Vec<(Timestamp, Option<f64>)>,
    ) -> Result<Self, IngestError> {
        let name = name.into();
        obs.sort_by_key(|(t, _)| *t);
        let mut points: Vec<RawPoint> = Vec::with_capacity(obs.len());
        let mut duplicates_collapsed = 0;
        for (at, value) in obs {
            if let Some(prev) = points.last_mut().filter(|p| p.at == at) {
                match (prev.value, value) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(IngestError::ConflictingDuplicate {
                            series: name,
                            timestamp: at,
                            first: a,
                            second: b,
                        })
                    }
                    (None, Some(b)) => prev.value = Some(b),
                    _ => {}
                }
                duplicates_collapsed += 1;
                continue;
            }
            points.push(RawPoint { at, value, flag: FillFlag::Observed });
        }
        Ok(RawSeries { name, points, duplicates_collapsed })
    }
}

/// One value per hour on a contiguous axis, with per-value fill provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub name: String,
    axis: HourlyAxis,
    values: Vec<f64>,
    flags: Vec<FillFlag>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillCounts {
    pub observed: usize,
    pub interpolated: usize,
    pub forward_filled: usize,
}

impl HourlySeries {
    /// A fully observed series.
    pub fn new(name: impl Into<String>, start: Timestamp, values: Vec<f64>) -> Self {
        let flags = vec![FillFlag::Observed; values.len()];
        HourlySeries { name: name.into(), axis: HourlyAxis::new(start, values.len()), values, flags }
    }

    pub fn with_flags(
        name: impl Into<String>,
        start: Timestamp,
        values: Vec<f64>,
        flags: Vec<FillFlag>,
    ) -> Self {
        assert_eq!(values.len(), flags.len(), "one flag per value");
        HourlySeries { name: name.into(), axis: HourlyAxis::new(start, values.len()), values, flags }
    }

    pub fn axis(&self) -> HourlyAxis {
        self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flags(&self) -> &[FillFlag] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn counts(&self) -> FillCounts {
        let mut counts = FillCounts::default();
        for flag in &self.flags {
            match flag {
                FillFlag::Observed => counts.observed += 1,
                FillFlag::Interpolated => counts.interpolated += 1,
                FillFlag::ForwardFilled => counts.forward_filled += 1,
            }
        }
        counts
    }

    /// Restricts the series to `axis`, which must lie within it.
    pub fn restrict(&self, axis: HourlyAxis) -> Option<HourlySeries> {
        let offset = self.axis.index_of(axis.start)?;
        if offset + axis.len > self.len() {
            return None;
        }
        let range = offset..offset + axis.len;
        Some(HourlySeries {
            name: self.name.clone(),
            axis,
            values: self.values[range.clone()].to_vec(),
            flags: self.flags[range].to_vec(),
        })
    }

    /// Back to raw form, keeping fill flags, so that regularizing again is a no-op.
    pub fn to_raw(&self) -> RawSeries {
        let points = self
            .axis
            .iter()
            .zip(self.values.iter().zip(&self.flags))
            .map(|(at, (&v, &flag))| RawPoint { at, value: Some(v), flag })
            .collect();
        RawSeries { name: self.name.clone(), points, duplicates_collapsed: 0 }
    }
}

/// Column mapping for a two-column hourly CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSchema {
    pub timestamp_column: String,
    pub value_column: String,
}

fn is_missing_token(text: &str) -> bool {
    matches!(text.trim(), "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "M")
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Reads a timestamp column plus any number of numeric columns.
fn read_columns<R: Read>(
    reader: R,
    path: &Path,
    timestamp_column: &str,
    columns: &[&str],
) -> Result<(Vec<Timestamp>, Vec<Vec<Option<f64>>>), IngestError> {
    let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let ts_idx = find(timestamp_column)?;
    let idx: Vec<usize> = columns.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

    let mut stamps = Vec::new();
    let mut values = vec![Vec::new(); columns.len()];
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let ts = Timestamp::parse(record.get(ts_idx).unwrap_or("")).map_err(|source| {
            IngestError::BadTimestamp { path: path.to_path_buf(), line, source }
        })?;
        if !ts.is_hour_aligned() {
            return Err(IngestError::NotHourAligned { path: path.to_path_buf(), line, timestamp: ts });
        }
        stamps.push(ts);
        for (slot, (&i, col)) in values.iter_mut().zip(idx.iter().zip(columns)) {
            let text = record.get(i).unwrap_or("");
            let value = if is_missing_token(text) {
                None
            } else {
                let v: f64 = text.trim().parse().map_err(|_| IngestError::BadValue {
                    path: path.to_path_buf(),
                    line,
                    column: col.to_string(),
                    text: text.to_string(),
                })?;
                v.is_finite().then_some(v)
            };
            slot.push(value);
        }
    }
    if stamps.is_empty() {
        return Err(IngestError::Empty { path: path.to_path_buf() });
    }
    Ok((stamps, values))
}

/// Parses an hourly load CSV from any reader; `path` is used for diagnostics.
pub fn parse_load_reader<R: Read>(
    reader: R,
    path: &Path,
    schema: &SeriesSchema,
) -> Result<RawSeries, IngestError> {
    let (stamps, mut values) =
        read_columns(reader, path, &schema.timestamp_column, &[schema.value_column.as_str()])?;
    let obs = stamps.into_iter().zip(values.remove(0)).collect();
    RawSeries::from_observations(LOAD_COLUMN, obs)
}

pub fn parse_load_csv(path: &Path, schema: &SeriesSchema) -> Result<RawSeries, IngestError> {
    parse_load_reader(open(path)?, path, schema)
}

/// Parses a per-city weather CSV into one raw series per variable.
pub fn parse_weather_csv(
    path: &Path,
    timestamp_column: &str,
    variables: &[&str],
) -> Result<BTreeMap<String, RawSeries>, IngestError> {
    let (stamps, values) = read_columns(open(path)?, path, timestamp_column, variables)?;
    variables
        .iter()
        .zip(values)
        .map(|(var, vals)| {
            let obs = stamps.iter().copied().zip(vals).collect();
            Ok((var.to_string(), RawSeries::from_observations(*var, obs)?))
        })
        .collect()
}

/// Fills gaps: runs of at most `max_interp_gap` missing hours between two
/// observations are linearly interpolated, longer runs and trailing gaps are
/// forward-filled from the last known value.
pub fn regularize(series: &RawSeries, max_interp_gap: usize) -> Result<HourlySeries, IngestError> {
    let first = series
        .points
        .first()
        .ok_or_else(|| IngestError::AllMissing { series: series.name.clone() })?;
    if series.points.iter().all(|p| p.value.is_none()) {
        return Err(IngestError::AllMissing { series: series.name.clone() });
    }
    if first.value.is_none() {
        return Err(IngestError::LeadingGap { series: series.name.clone(), timestamp: first.at });
    }
    let last = series.points.last().expect("nonempty").at;
    let axis = HourlyAxis::spanning(first.at, last).expect("sorted, hour-aligned points");

    let mut slots: Vec<Option<(f64, FillFlag)>> = vec![None; axis.len()];
    for p in &series.points {
        let i = axis.index_of(p.at).expect("point on axis");
        slots[i] = p.value.map(|v| (v, p.flag));
    }

    let mut values = Vec::with_capacity(axis.len());
    let mut flags = Vec::with_capacity(axis.len());
    let mut i = 0;
    while i < slots.len() {
        if let Some((v, flag)) = slots[i] {
            values.push(v);
            flags.push(flag);
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < slots.len() && slots[i].is_none() {
            i += 1;
        }
        let gap_len = i - gap_start;
        let left = values[gap_start - 1];
        match slots.get(i).copied().flatten() {
            Some((right, _)) if gap_len <= max_interp_gap => {
                let step = (right - left) / (gap_len + 1) as f64;
                for k in 1..=gap_len {
                    values.push(left + step * k as f64);
                    flags.push(FillFlag::Interpolated);
                }
            }
            _ => {
                values.extend(std::iter::repeat(left).take(gap_len));
                flags.extend(std::iter::repeat(FillFlag::ForwardFilled).take(gap_len));
            }
        }
    }
    Ok(HourlySeries::with_flags(series.name.clone(), axis.start, values, flags))
}

/// One city's gap-free weather and its (unnormalized) population weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CityWeather {
    pub city: String,
    pub population_weight: f64,
    pub series: BTreeMap<String, HourlySeries>,
}

/// Population-weighted regional weather: `Σ_c (w_c / Σw) · city_c[v][t]`.
pub fn weight_weather(cities: &[CityWeather]) -> Result<BTreeMap<String, HourlySeries>, IngestError> {
    let reference = cities.first().ok_or(IngestError::NoCities)?;
    let variables: Vec<String> = reference.series.keys().cloned().collect();
    let axis = reference.series.values().next().map(|s| s.axis());
    for city in cities {
        let w = city.population_weight;
        if !(w.is_finite() && w >= 0.0) {
            return Err(IngestError::InvalidWeight { city: city.city.clone(), weight: w });
        }
        let found: Vec<String> = city.series.keys().cloned().collect();
        if found != variables {
            return Err(IngestError::MismatchedVariables {
                city: city.city.clone(),
                found,
                expected: variables.clone(),
            });
        }
        for (var, s) in &city.series {
            if Some(s.axis()) != axis {
                return Err(IngestError::MismatchedAxes {
                    left: format!("{}/{}", reference.city, variables[0]),
                    right: format!("{}/{}", city.city, var),
                });
            }
        }
    }
    let total: f64 = cities.iter().map(|c| c.population_weight).sum();
    if total <= 0.0 {
        return Err(IngestError::ZeroWeights);
    }
    let weights: Vec<f64> = cities.iter().map(|c| c.population_weight / total).collect();

    let mut out = BTreeMap::new();
    for var in &variables {
        let first = &reference.series[var];
        let mut values = Vec::with_capacity(first.len());
        let mut flags = Vec::with_capacity(first.len());
        for t in 0..first.len() {
            let mut acc = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut flag = FillFlag::Observed;
            for (city, &w) in cities.iter().zip(&weights) {
                let s = &city.series[var];
                let v = s.values()[t];
                acc += w * v;
                if w > 0.0 {
                    lo = lo.min(v);
                    hi = hi.max(v);
                    flag = flag.max(s.flags()[t]);
                }
            }
            // Rounding in the weighted sum must not escape the convex hull.
            values.push(if acc.is_nan() { acc } else { acc.clamp(lo, hi) });
            flags.push(flag);
        }
        out.insert(var.clone(), HourlySeries::with_flags(var.clone(), first.axis().start, values, flags));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub name: String,
    #[serde(flatten)]
    pub counts: FillCounts,
}

/// Provenance of an [`AlignedDataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
    pub rows: usize,
    /// Fill counts per input series (per city and variable), over the full input range.
    pub inputs: Vec<SeriesReport>,
    /// Fill counts per output series, within the aligned range.
    pub series: Vec<SeriesReport>,
    /// Rows of each output series dropped by trimming to the common range.
    pub trimmed: BTreeMap<String, usize>,
    pub duplicates_collapsed: usize,
    pub errors: Vec<String>,
}

/// Load and regional weather on one validated, contiguous hourly axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub axis: HourlyAxis,
    pub load: HourlySeries,
    pub weather: BTreeMap<String, HourlySeries>,
    pub provenance: IngestReport,
}

/// Trims load and weather to their common range and validates it.
pub fn align(
    load: &HourlySeries,
    weather: &BTreeMap<String, HourlySeries>,
) -> Result<AlignedDataset, IngestError> {
    let mut axis = load.axis();
    for s in weather.values() {
        axis = axis.intersect(&s.axis()).ok_or(IngestError::EmptyIntersection)?;
    }
    if axis.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    let mut trimmed = BTreeMap::new();
    let mut cut = |s: &HourlySeries| {
        trimmed.insert(s.name.clone(), s.len() - axis.len());
        s.restrict(axis).expect("intersection lies within every series")
    };
    let load_cut = cut(load);
    let weather_cut: BTreeMap<String, HourlySeries> =
        weather.iter().map(|(k, s)| (k.clone(), cut(s))).collect();

    let dataset = AlignedDataset {
        axis,
        provenance: IngestReport {
            start: axis.last().map(|_| axis.start),
            end: axis.last(),
            rows: axis.len(),
            inputs: Vec::new(),
            series: std::iter::once(&load_cut)
                .chain(weather_cut.values())
                .map(|s| SeriesReport { name: s.name.clone(), counts: s.counts() })
                .collect(),
            trimmed,
            duplicates_collapsed: 0,
            errors: Vec::new(),
        },
        load: load_cut,
        weather: weather_cut,
    };
    dataset.validate()?;
    Ok(dataset)
}

impl AlignedDataset {
    /// Checks the shared axis and that every value is finite.
    pub fn validate(&self) -> Result<(), IngestError> {
        for s in std::iter::once(&self.load).chain(self.weather.values()) {
            if s.axis() != self.axis {
                return Err(IngestError::MismatchedAxes { left: LOAD_COLUMN.into(), right: s.name.clone() });
            }
            if let Some(i) = s.values().iter().position(|v| !v.is_finite()) {
                return Err(IngestError::ValidationFailure {
                    series: s.name.clone(),
                    timestamp: self.axis.at(i),
                    reason: format!("non-finite value {}", s.values()[i]),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// `load` or a weather variable.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == LOAD_COLUMN {
            Some(self.load.values())
        } else {
            self.weather.get(name).map(|s| s.values())
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        std::iter::once(LOAD_COLUMN.to_string()).chain(self.weather.keys().cloned()).collect()
    }

    /// One CSV: `timestamp,load,<weather vars…>`.
    pub fn write_csv(&self, path: &Path) -> Result<(), IngestError> {
        let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.column_names());
        w.write_record(&header).map_err(csv_err)?;
        for (i, ts) in self.axis.iter().enumerate() {
            let mut row = vec![ts.to_string(), self.load.values()[i].to_string()];
            row.extend(self.weather.values().map(|s| s.values()[i].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
    }

    /// Reads a dataset CSV written by [`AlignedDataset::write_csv`].
    pub fn read_csv(path: &Path) -> Result<AlignedDataset, IngestError> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?
            .iter()
            .map(str::to_string)
            .collect();
        drop(rdr);
        let cols: Vec<&str> = headers.iter().skip(1).map(String::as_str).collect();
        if !cols.contains(&LOAD_COLUMN) {
            return Err(IngestError::MissingColumn { path: path.to_path_buf(), column: LOAD_COLUMN.into() });
        }
        let (stamps, values) = read_columns(open(path)?, path, &headers[0], &cols)?;
        let axis = HourlyAxis::new(stamps[0], stamps.len());
        for (i, ts) in stamps.iter().enumerate() {
            if axis.at(i) != *ts {
                return Err(IngestError::ValidationFailure {
                    series: "timestamp".into(),
                    timestamp: *ts,
                    reason: "dataset axis is not contiguous".into(),
                });
            }
        }
        let mut load = None;
        let mut weather = BTreeMap::new();
        for (name, vals) in cols.iter().zip(values) {
            let mut filled = Vec::with_capacity(vals.len());
            for (i, v) in vals.into_iter().enumerate() {
                filled.push(v.ok_or_else(|| IngestError::ValidationFailure {
                    series: name.to_string(),
                    timestamp: axis.at(i),
                    reason: "missing value".into(),
                })?);
            }
            let s = HourlySeries::new(*name, axis.start, filled);
            if *name == LOAD_COLUMN {
                load = Some(s);
            } else {
                weather.insert(name.to_string(), s);
            }
        }
        let dataset = AlignedDataset {
            axis,
            load: load.expect("checked above"),
            weather,
            provenance: IngestReport { start: Some(axis.start), end: axis.last(), rows: axis.len(), ..Default::default() },
        };
        dataset.validate()?;
        Ok(dataset)
    }
}
