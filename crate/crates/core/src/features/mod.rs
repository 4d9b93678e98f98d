//! Engineered feature matrices.
//!
//! A feature set is an ordered list of [`FeatureSpec`]s. Specs may read
//! dataset columns (`load`, `tavg`, …) or other specs by name; they are
//! evaluated in dependency order and emitted in list order. Rows where any
//! emitted column is undefined (lag and rolling warm-up) are dropped.
//!
//! In the default mode nothing may read `load` at the current hour: `load`
//! is only accepted as the operand of `lag`, `rolling` and `spike`, and those
//! must be shifted by at least one hour.

pub mod calendar;
pub mod ops;
mod spec;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use calendar::{CalendarField, HolidayCalendar};
pub use ops::{RollingStat, SpikeMode, TempSpikeMode};
pub use spec::{CyclicPart, DegreeSide, FeatureKind, FeatureSpec, FlagSide, HolidayField};

use crate::ingest::{AlignedDataset, LOAD_COLUMN};
use crate::time::{HourlyAxis, TimeRange, Timestamp};

/// Default CDD/HDD baseline temperature (°F).
pub const DEFAULT_DEGREE_BASELINE: f64 = 65.0;
/// Default quantile for the extreme-event flags.
pub const DEFAULT_EXTREME_QUANTILE: f64 = 0.95;
/// Default train quantile of `tmin` below which an hour counts as cold.
pub const DEFAULT_COLD_QUANTILE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature `{feature}` references unknown column `{column}`")]
    UnknownColumn { feature: String, column: String },
    #[error("cyclic feature dependency among {0:?}")]
    CyclicDependency(Vec<String>),
    #[error("feature name `{0}` is declared twice")]
    DuplicateName(String),
    #[error("feature `{feature}`: {reason}")]
    InvalidParameter { feature: String, reason: String },
    #[error("feature `{feature}` would read the target at the prediction hour: {reason} (pass --allow-leakage to permit)")]
    Leakage { feature: String, reason: String },
    #[error("feature `{feature}` needs a quantile over the train range, which has no defined rows")]
    EmptyTrainRange { feature: String },
    #[error("every row is consumed by warm-up ({warmup} of {rows})")]
    NoRows { warmup: usize, rows: usize },
    #[error("feature matrix is missing column `{0}`")]
    MissingFeature(String),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Permit features that read `load` at the current hour, such as spike
    /// features with shift 0. Diagnostic use only.
    pub allow_leakage: bool,
}

/// Row-per-hour matrix of named features plus the load target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub axis: HourlyAxis,
    pub names: Vec<String>,
    /// Column-major storage, one vector per name.
    pub columns: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// Leading dataset rows dropped because some operand was undefined.
    pub warmup: usize,
    /// Quantile thresholds fixed on the train range, by feature name.
    pub thresholds: BTreeMap<String, f64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn timestamp(&self, i: usize) -> Timestamp {
        self.axis.at(i)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// Contiguous rows `[start, start + len)`.
    pub fn slice_rows(&self, start: usize, len: usize) -> FeatureMatrix {
        let range = start..start + len;
        FeatureMatrix {
            axis: self.axis.slice(start, len),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
            target: self.target[range].to_vec(),
            warmup: self.warmup,
            thresholds: self.thresholds.clone(),
        }
    }

    /// Rows whose timestamps fall in `range`, as `(offset, len)`.
    pub fn row_span(&self, range: &TimeRange) -> (usize, usize) {
        let first = (0..self.n_rows()).find(|&i| range.contains(self.axis.at(i)));
        match first {
            None => (0, 0),
            Some(start) => {
                let len = (start..self.n_rows()).take_while(|&i| range.contains(self.axis.at(i))).count();
                (start, len)
            }
        }
    }

    /// The same rows with only `keep` columns, in the order given.
    pub fn select(&self, keep: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let mut columns = Vec::with_capacity(keep.len());
        for name in keep {
            columns.push(self.column(name).ok_or_else(|| FeatureError::MissingFeature(name.clone()))?.to_vec());
        }
        Ok(FeatureMatrix { names: keep.to_vec(), columns, ..self.clone() })
    }

    /// `timestamp,<features…>,target`.
    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let err = |e: csv::Error| FeatureError::File { path: path.to_path_buf(), reason: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("target".into());
        w.write_record(&header).map_err(err)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.axis.at(i).to_string()];
            rec.extend(self.columns.iter().map(|c| c[i].to_string()));
            rec.push(self.target[i].to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| FeatureError::File { path: path.to_path_buf(), reason: e.to_string() })
    }
}

/// Builds the feature matrix for `specs` over `dataset`. Quantile-based
/// features fix their thresholds using rows inside `train_range` only.
pub fn build_matrix(
    dataset: &AlignedDataset,
    specs: &[FeatureSpec],
    train_range: &TimeRange,
    options: BuildOptions,
) -> Result<FeatureMatrix, FeatureError> {
    let order = resolve(&dataset.column_names(), specs, options)?;
    let axis = dataset.axis;
    let n = axis.len();
    let calendar = HolidayCalendar::us_federal();
    let train_rows: Vec<usize> = (0..n).filter(|&i| train_range.contains(axis.at(i))).collect();

    let mut computed: HashMap<&str, (Vec<f64>, usize)> = HashMap::new();
    let mut thresholds = BTreeMap::new();
    for &idx in &order {
        let spec = &specs[idx];
        let get = |name: &str| -> (&[f64], usize) {
            match computed.get(name) {
                Some((v, from)) => (v.as_slice(), *from),
                None => (dataset.column(name).expect("resolved operand"), 0),
            }
        };
        let train_quantile = |col: &[f64], from: usize, q: f64| {
            let vals: Vec<f64> = train_rows.iter().filter(|&&i| i >= from).map(|&i| col[i]).collect();
            ops::quantile(&vals, q).ok_or_else(|| FeatureError::EmptyTrainRange { feature: spec.name.clone() })
        };
        let (values, from) = match &spec.kind {
            FeatureKind::Calendar { field } => (calendar::calendar_column(&axis, *field), 0),
            FeatureKind::Holiday { field, column, quantile } => {
                let is_holiday = calendar::holiday_column(&axis, &calendar);
                match field {
                    HolidayField::IsHoliday => (is_holiday, 0),
                    HolidayField::HolidayXHour => {
                        let hour = calendar::calendar_column(&axis, CalendarField::Hour);
                        (ops::interaction(&is_holiday, &hour), 0)
                    }
                    HolidayField::IsHolidayAndCold => {
                        let (tmin, from) = get(column);
                        let threshold = train_quantile(tmin, from, *quantile)?;
                        thresholds.insert(spec.name.clone(), threshold);
                        let cold = ops::threshold_flag(tmin, threshold, false);
                        (ops::interaction(&is_holiday, &cold), from)
                    }
                }
            }
            FeatureKind::Weather { column } => {
                let (v, from) = get(column);
                (v.to_vec(), from)
            }
            FeatureKind::Lag { column, hours } => {
                let (v, from) = get(column);
                (ops::lag(v, *hours), from + hours)
            }
            FeatureKind::Rolling { column, window, stat, shift } => {
                let (v, from) = get(column);
                (ops::rolling(v, *window, *stat, *shift), from + window + shift - 1)
            }
            FeatureKind::DegreeDay { column, side, baseline } => {
                let (v, from) = get(column);
                let (cdd, hdd) = ops::degree_days(v, *baseline);
                (if *side == DegreeSide::Cooling { cdd } else { hdd }, from)
            }
            FeatureKind::Spike { column, window, mode, shift } => {
                let shift = shift.unwrap_or(if options.allow_leakage { 0 } else { 1 });
                let (v, from) = get(column);
                (ops::spike_vs_mean(v, *window, *mode, shift), from + window + shift)
            }
            FeatureKind::TempSpike { tmax, tavg, mode } => {
                let (hi, from_hi) = get(tmax);
                let (avg, from_avg) = get(tavg);
                (ops::temp_spike_vs_mean(hi, avg, *mode), from_hi.max(from_avg))
            }
            FeatureKind::Interaction { left, right } => {
                let (a, from_a) = get(left);
                let (b, from_b) = get(right);
                (ops::interaction(a, b), from_a.max(from_b))
            }
            FeatureKind::Flag { column, side, quantile } => {
                let (v, from) = get(column);
                let (q, above) = match side {
                    FlagSide::Heat => (*quantile, true),
                    FlagSide::Cold => (1.0 - quantile, false),
                };
                let threshold = train_quantile(v, from, q)?;
                thresholds.insert(spec.name.clone(), threshold);
                (ops::threshold_flag(v, threshold, above), from)
            }
            FeatureKind::Cyclical { column, period, part } => {
                let (v, from) = get(column);
                let (sin, cos) = ops::cyclical(v, *period);
                (if *part == CyclicPart::Sin { sin } else { cos }, from)
            }
        };
        computed.insert(spec.name.as_str(), (values, from));
    }

    let emitted: Vec<&FeatureSpec> = specs.iter().filter(|s| s.emit).collect();
    let warmup = emitted.iter().map(|s| computed[s.name.as_str()].1).max().unwrap_or(0).min(n);
    if warmup >= n && n > 0 && !emitted.is_empty() {
        return Err(FeatureError::NoRows { warmup, rows: n });
    }
    let rows = n - warmup;
    let mut names = Vec::with_capacity(emitted.len());
    let mut columns = Vec::with_capacity(emitted.len());
    for spec in emitted {
        let col = computed[spec.name.as_str()].0[warmup..].to_vec();
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidParameter {
                feature: spec.name.clone(),
                reason: format!("non-finite value at {}", axis.at(warmup + i)),
            });
        }
        names.push(spec.name.clone());
        columns.push(col);
    }
    Ok(FeatureMatrix {
        axis: HourlyAxis::new(axis.at(warmup.min(n)), rows),
        names,
        columns,
        target: dataset.load.values()[warmup..].to_vec(),
        warmup,
        thresholds: thresholds.into_iter().filter(|(k, _)| specs.iter().any(|s| s.emit && &s.name == k)).collect(),
    })
}

/// Validates the spec list and returns a dependency-respecting evaluation order.
/// Checks names, parameters, operands, leakage and cycles against the
/// given dataset columns without computing anything.
pub fn validate_specs(columns: &[String], specs: &[FeatureSpec], options: BuildOptions) -> Result<(), FeatureError> {
    resolve(columns, specs, options).map(|_| ())
}

fn resolve(base: &[String], specs: &[FeatureSpec], options: BuildOptions) -> Result<Vec<usize>, FeatureError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, s) in specs.iter().enumerate() {
        if index.insert(s.name.as_str(), i).is_some() {
            return Err(FeatureError::DuplicateName(s.name.clone()));
        }
        s.validate()?;
    }
    let mut deps: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
    for (i, s) in specs.iter().enumerate() {
        for operand in s.operands() {
            // A spec named after its own operand (a weather passthrough)
            // reads the dataset column of that name.
            if let Some(&j) = index.get(operand).filter(|&&j| j != i) {
                deps[i].push(j);
            } else if base.iter().any(|b| b == operand) {
                if operand == LOAD_COLUMN && !options.allow_leakage {
                    check_target_use(s)?;
                }
            } else {
                return Err(FeatureError::UnknownColumn { feature: s.name.clone(), column: operand.to_string() });
            }
        }
        if !options.allow_leakage {
            match &s.kind {
                FeatureKind::Rolling { shift: 0, .. } | FeatureKind::Spike { shift: Some(0), .. } => {
                    return Err(FeatureError::Leakage {
                        feature: s.name.clone(),
                        reason: "shift must be at least one hour".into(),
                    })
                }
                _ => {}
            }
        }
    }

    // Kahn's algorithm, always taking the earliest ready spec.
    let mut remaining: Vec<usize> = deps.iter().map(Vec::len).collect();
    let mut done = vec![false; specs.len()];
    let mut order = Vec::with_capacity(specs.len());
    while order.len() < specs.len() {
        let Some(next) = (0..specs.len()).find(|&i| !done[i] && remaining[i] == 0) else {
            let stuck = (0..specs.len()).filter(|&i| !done[i]).map(|i| specs[i].name.clone()).collect();
            return Err(FeatureError::CyclicDependency(stuck));
        };
        done[next] = true;
        order.push(next);
        for (i, d) in deps.iter().enumerate() {
            remaining[i] -= d.iter().filter(|&&j| j == next).count();
        }
    }
    Ok(order)
}

fn check_target_use(spec: &FeatureSpec) -> Result<(), FeatureError> {
    match &spec.kind {
        FeatureKind::Lag { .. } | FeatureKind::Rolling { .. } | FeatureKind::Spike { .. } => Ok(()),
        _ => Err(FeatureError::Leakage {
            feature: spec.name.clone(),
            reason: format!("`{LOAD_COLUMN}` may only be read through lag, rolling or spike features"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::HourlySeries;

    fn dataset(n: usize) -> AlignedDataset {
        let start = Timestamp::from_central(2023, 1, 1, 0).unwrap();
        let load: Vec<f64> = (0..n).map(|i| 1000.0 + (i % 24) as f64 * 10.0 + (i / 24) as f64).collect();
        let tavg: Vec<f64> = (0..n).map(|i| 50.0 + (i % 37) as f64).collect();
        let mut weather = std::collections::BTreeMap::new();
        weather.insert("tavg".to_string(), HourlySeries::new("tavg", start, tavg.clone()));
        weather.insert("tmax".to_string(), HourlySeries::new("tmax", start, tavg.iter().map(|t| t + 8.0).collect()));
        weather.insert("tmin".to_string(), HourlySeries::new("tmin", start, tavg.iter().map(|t| t - 8.0).collect()));
        crate::ingest::align(&HourlySeries::new("load", start, load), &weather).unwrap()
    }

    fn all_rows(ds: &AlignedDataset) -> TimeRange {
        TimeRange::new(ds.axis.start, ds.axis.last().unwrap())
    }

    #[test]
    fn empty_spec_list_keeps_target() {
        let ds = dataset(50);
        let m = build_matrix(&ds, &[], &all_rows(&ds), BuildOptions::default()).unwrap();
        assert_eq!(m.n_features(), 0);
        assert_eq!(m.warmup, 0);
        assert_eq!(m.target, ds.load.values());
    }

    #[test]
    fn warmup_is_max_requirement() {
        let ds = dataset(100);
        let specs = vec![
            FeatureSpec::lag("load_lag_24", LOAD_COLUMN, 24),
            FeatureSpec::rolling("load_roll_mean_24", LOAD_COLUMN, 24, RollingStat::Mean),
        ];
        let m = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap();
        assert_eq!(m.warmup, 24);
        assert_eq!(m.n_rows(), 76);
        assert_eq!(m.column("load_lag_24").unwrap()[0], ds.load.values()[0]);
    }

    #[test]
    fn unknown_column_and_cycles() {
        let ds = dataset(30);
        let err = build_matrix(&ds, &[FeatureSpec::weather("x", "foo")], &all_rows(&ds), BuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, FeatureError::UnknownColumn { ref column, .. } if column == "foo"));
        let specs = vec![FeatureSpec::interaction("a", "b", "tavg"), FeatureSpec::interaction("b", "a", "tavg")];
        let err = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap_err();
        assert!(matches!(err, FeatureError::CyclicDependency(_)), "{err:?}");
        let dup = vec![FeatureSpec::weather("t", "tavg"), FeatureSpec::weather("t", "tmax")];
        assert!(matches!(
            build_matrix(&ds, &dup, &all_rows(&ds), BuildOptions::default()),
            Err(FeatureError::DuplicateName(_))
        ));
        let passthrough = vec![FeatureSpec::weather("tavg", "tavg"), FeatureSpec::lag("tavg_lag_1", "tavg", 1)];
        let m = build_matrix(&ds, &passthrough, &all_rows(&ds), BuildOptions::default()).unwrap();
        assert_eq!(m.column("tavg").unwrap(), &ds.column("tavg").unwrap()[1..]);
    }

    #[test]
    fn operands_may_come_later_in_the_list() {
        let ds = dataset(60);
        let specs = vec![
            FeatureSpec::interaction("CDD_x_hour", "CDD", "hour"),
            FeatureSpec::calendar("hour", CalendarField::Hour),
            FeatureSpec::degree_day("CDD", "tavg", DegreeSide::Cooling),
        ];
        let m = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap();
        assert_eq!(m.names, vec!["CDD_x_hour", "hour", "CDD"]);
        for i in 0..m.n_rows() {
            assert_eq!(m.columns[0][i], m.columns[1][i] * m.columns[2][i]);
        }
    }

    #[test]
    fn leakage_is_rejected_by_default() {
        let ds = dataset(60);
        let opts = BuildOptions::default();
        let raw_load = [FeatureSpec::weather("l", LOAD_COLUMN)];
        assert!(matches!(build_matrix(&ds, &raw_load, &all_rows(&ds), opts), Err(FeatureError::Leakage { .. })));
        let mut literal = FeatureSpec::spike("s", LOAD_COLUMN, 24, SpikeMode::Ratio);
        if let FeatureKind::Spike { shift, .. } = &mut literal.kind {
            *shift = Some(0);
        }
        assert!(matches!(
            build_matrix(&ds, &[literal.clone()], &all_rows(&ds), opts),
            Err(FeatureError::Leakage { .. })
        ));
        let permissive = BuildOptions { allow_leakage: true };
        let m = build_matrix(&ds, &[literal], &all_rows(&ds), permissive).unwrap();
        assert_eq!(m.warmup, 24);
    }

    #[test]
    fn holiday_columns() {
        let start = Timestamp::from_central(2024, 12, 24, 0).unwrap();
        let n = 72;
        let mut weather = std::collections::BTreeMap::new();
        let tmin: Vec<f64> = (0..n).map(|i| if i < 48 { 20.0 + i as f64 } else { 70.0 }).collect();
        weather.insert("tmin".to_string(), HourlySeries::new("tmin", start, tmin));
        let ds = crate::ingest::align(&HourlySeries::new("load", start, vec![1.0; n]), &weather).unwrap();
        let specs = vec![
            FeatureSpec::holiday("is_holiday", HolidayField::IsHoliday),
            FeatureSpec::holiday("holiday_x_hour", HolidayField::HolidayXHour),
            FeatureSpec::holiday("is_holiday_and_cold", HolidayField::IsHolidayAndCold),
        ];
        let m = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap();
        let h = m.column("is_holiday").unwrap();
        assert!(h[..24].iter().all(|&v| v == 0.0));
        assert!(h[24..48].iter().all(|&v| v == 1.0));
        let hx = m.column("holiday_x_hour").unwrap();
        assert_eq!(hx[24 + 17], 17.0);
        // tmin over the 72 rows: the train 5th percentile sits near 23.5.
        let cold = m.column("is_holiday_and_cold").unwrap();
        assert!(cold.iter().all(|&v| v == 0.0), "Christmas hours are above the cold threshold");
        assert!(m.thresholds["is_holiday_and_cold"] < 30.0);
    }

    #[test]
    fn deterministic_build() {
        let ds = dataset(400);
        let specs = presets_for_test();
        let a = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap();
        let b = build_matrix(&ds, &specs, &all_rows(&ds), BuildOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    fn presets_for_test() -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::calendar("hour", CalendarField::Hour),
            FeatureSpec::lag("load_lag_168", LOAD_COLUMN, 168),
            FeatureSpec::spike("load_spike_vs_mean", LOAD_COLUMN, 24, SpikeMode::Ratio),
            FeatureSpec::flag("is_extreme_heat_event", "tmax", FlagSide::Heat),
            FeatureSpec::cyclical("hour_sin", "hour", 24.0, CyclicPart::Sin),
        ]
    }
}
