//! Error metrics, the chronological train/test split and peak-window scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::time::{HourlyAxis, TimeRange, Timestamp};

pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;
pub const DEFAULT_PEAK_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {actual} actual values, {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("no rows to score")]
    Empty,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split leaves the {0} side empty")]
    EmptySide(&'static str),
    #[error("window `{0}` contains no rows")]
    EmptyWindow(String),
    #[error("peak fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
}

fn check(y: &[f64], yhat: &[f64]) -> Result<(), EvalError> {
    if y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch { actual: y.len(), predicted: yhat.len() });
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, EvalError> {
    check(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub percent: f64,
    /// Rows whose |y| fell below the floor.
    pub floored: usize,
}

pub fn mape(y: &[f64], yhat: &[f64], floor: f64) -> Result<Mape, EvalError> {
    check(y, yhat)?;
    let mut floored = 0;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let denom = if a.abs() < floor {
            floored += 1;
            floor
        } else {
            a.abs()
        };
        total += (a - b).abs() / denom;
    }
    Ok(Mape { percent: 100.0 * total / y.len() as f64, floored })
}

/// Indices of the `⌈fraction·n⌉` largest values; equal values go to the
/// earlier index first. Returned in ascending index order.
pub fn peak_slice(y: &[f64], fraction: f64) -> Vec<usize> {
    assert!(fraction > 0.0 && fraction < 1.0, "peak fraction must lie in (0, 1)");
    let k = peak_count(y.len(), fraction);
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

pub fn peak_count(n: usize, fraction: f64) -> usize {
    // Guard against 0.05·100 landing a hair above 5.
    let exact = fraction * n as f64;
    let rounded = exact.round();
    let k = if (exact - rounded).abs() < 1e-9 { rounded } else { exact.ceil() };
    (k as usize).min(n)
}

pub fn peak_mape(y: &[f64], yhat: &[f64], fraction: f64, floor: f64) -> Result<Mape, EvalError> {
    check(y, yhat)?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let idx = peak_slice(y, fraction);
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ps: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
    mape(&ys, &ps, floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub mape_floor: f64,
    pub peak_fraction: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { mape_floor: DEFAULT_MAPE_FLOOR, peak_fraction: DEFAULT_PEAK_FRACTION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    /// Percent, over the `k` highest-load rows.
    pub peak_mape: f64,
    pub n: usize,
    pub k: usize,
    /// Rows scored against the MAPE floor instead of |y|.
    pub floored: usize,
}

impl MetricSet {
    pub fn compute(y: &[f64], yhat: &[f64], options: MetricOptions) -> Result<MetricSet, EvalError> {
        let m = mape(y, yhat, options.mape_floor)?;
        let p = peak_mape(y, yhat, options.peak_fraction, options.mape_floor)?;
        Ok(MetricSet {
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            mape: m.percent,
            peak_mape: p.percent,
            n: y.len(),
            k: peak_count(y.len(), options.peak_fraction),
            floored: m.floored,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedWindow {
    pub name: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl NamedWindow {
    pub fn range(&self) -> TimeRange {
        TimeRange::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Earliest training instant; defaults to the start of the matrix.
    #[serde(default)]
    pub train_start: Option<Timestamp>,
    pub train_end: Timestamp,
    pub test_start: Timestamp,
    pub test_end: Timestamp,
    #[serde(default)]
    pub peak_windows: Vec<NamedWindow>,
}

impl SplitSpec {
    pub fn test_range(&self) -> TimeRange {
        TimeRange::new(self.test_start, self.test_end)
    }

    pub fn train_range(&self) -> TimeRange {
        TimeRange::new(self.train_start.unwrap_or(Timestamp::from_unix(i64::MIN / 4)), self.train_end)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.test_end < self.test_start {
            return Err(EvalError::InvalidSplit("test range ends before it starts".into()));
        }
        if self.test_start <= self.train_end {
            return Err(EvalError::InvalidSplit(format!(
                "test start {} does not follow train end {}",
                self.test_start, self.train_end
            )));
        }
        if let Some(start) = self.train_start {
            if self.train_end < start {
                return Err(EvalError::InvalidSplit("train range ends before it starts".into()));
            }
        }
        Ok(())
    }
}

/// Train and test rows of one matrix, with their offsets into it.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub train_offset: usize,
    pub test_offset: usize,
}

pub fn chronological_split(x: &FeatureMatrix, spec: &SplitSpec) -> Result<Split, EvalError> {
    spec.validate()?;
    let (train_offset, train_len) = x.row_span(&spec.train_range());
    let (test_offset, test_len) = x.row_span(&spec.test_range());
    if train_len == 0 {
        return Err(EvalError::EmptySide("train"));
    }
    if test_len == 0 {
        return Err(EvalError::EmptySide("test"));
    }
    Ok(Split {
        train: x.slice_rows(train_offset, train_len),
        test: x.slice_rows(test_offset, test_len),
        train_offset,
        test_offset,
    })
}

/// Scores each named window of `axis` separately. Windows may overlap.
pub fn window_report(
    y: &[f64],
    yhat: &[f64],
    axis: &HourlyAxis,
    windows: &[NamedWindow],
    options: MetricOptions,
) -> Result<BTreeMap<String, MetricSet>, EvalError> {
    check(y, yhat)?;
    if axis.len() != y.len() {
        return Err(EvalError::LengthMismatch { actual: axis.len(), predicted: y.len() });
    }
    let mut out = BTreeMap::new();
    for w in windows {
        let range = w.range();
        let idx: Vec<usize> = (0..axis.len()).filter(|&i| range.contains(axis.at(i))).collect();
        if idx.is_empty() {
            return Err(EvalError::EmptyWindow(w.name.clone()));
        }
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
        out.insert(w.name.clone(), MetricSet::compute(&ys, &ps, options)?);
    }
    Ok(out)
}

/// One labelled line of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub metrics: MetricSet,
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>8}  {:>9}", "Model", "RMSE", "MAE", "MAPE", "Peak-MAPE");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.2}  {:>10.2}  {:>8.2}  {:>9.2}",
            r.label, m.rmse, m.mae, m.mape, m.peak_mape
        );
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "rmse", "mae", "mape", "peak_mape", "n", "k"]).expect("in-memory write");
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.label.clone(),
            m.rmse.to_string(),
            m.mae.to_string(),
            m.mape.to_string(),
            m.peak_mape.to_string(),
            m.n.to_string(),
            m.k.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::matrix;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        let y = [100.0, 200.0];
        let p = [110.0, 180.0];
        assert_eq!(mae(&y, &p).unwrap(), 15.0);
        assert!((mape(&y, &p, 1.0).unwrap().percent - 10.0).abs() < 1e-12);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - (12.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(mae(&y, &[105.0, 205.0]).unwrap(), 5.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(mape(&y, &y, 1.0).unwrap().percent, 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(mae(&[], &[]), Err(EvalError::Empty));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn zero_load_uses_floor() {
        let m = mape(&[0.0, 100.0], &[0.5, 100.0], 1.0).unwrap();
        assert_eq!(m.floored, 1);
        assert!((m.percent - 25.0).abs() < 1e-12);
    }

    #[test]
    fn peak_slice_counts_and_ties() {
        let y: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let top = peak_slice(&y, 0.05);
        assert_eq!(top.len(), 5);
        assert!(top.iter().all(|&i| y[i] >= 95.0));
        assert_eq!(peak_slice(&[7.0; 60], 0.05), vec![0, 1, 2]);
        assert_eq!(peak_count(40, 0.05), 2);
        assert_eq!(peak_count(41, 0.05), 3);
        assert_eq!(peak_count(100, 0.05), 5);
    }

    #[test]
    fn peak_mape_restricts_rows() {
        let y: Vec<f64> = (0..200).map(|i| 1000.0 + ((i * 71) % 200) as f64).collect();
        let mut p: Vec<f64> = y.iter().map(|v| v * 1.1).collect();
        // Independent top-10 via a full sort of (value, index).
        let mut order: Vec<(f64, usize)> = y.iter().copied().zip(0..).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top: Vec<usize> = order[..10].iter().map(|t| t.1).collect();
        let hand = top.iter().map(|&i| (y[i] - p[i]).abs() / y[i]).sum::<f64>() * 100.0 / 10.0;
        assert!((peak_mape(&y, &p, 0.05, 1.0).unwrap().percent - hand).abs() < 1e-9);
        for &i in &top {
            p[i] = y[i];
        }
        assert_eq!(peak_mape(&y, &p, 0.05, 1.0).unwrap().percent, 0.0);
        assert!(mape(&y, &p, 1.0).unwrap().percent > 0.0);
        let flat = vec![500.0; 40];
        let q: Vec<f64> = (0..40).map(|i| 500.0 + i as f64).collect();
        assert_eq!(peak_mape(&flat, &q, 0.05, 1.0).unwrap(), mape(&flat[..2], &q[..2], 1.0).unwrap());
    }

    fn split_matrix(n: usize) -> FeatureMatrix {
        matrix(vec![(0..n).map(|i| i as f64).collect()], (0..n).map(|i| i as f64).collect())
    }

    #[test]
    fn split_partitions_by_timestamp() {
        let x = split_matrix(100);
        let spec = SplitSpec {
            train_start: None,
            train_end: x.timestamp(59),
            test_start: x.timestamp(60),
            test_end: x.timestamp(89),
            peak_windows: vec![],
        };
        let s = chronological_split(&x, &spec).unwrap();
        assert_eq!((s.train.n_rows(), s.test.n_rows()), (60, 30));
        assert!(s.train.axis.last().unwrap() < s.test.axis.start);
        // Every row assigned by its own timestamp, none twice.
        let mut seen = vec![0; 100];
        for v in s.train.target.iter().chain(&s.test.target) {
            seen[*v as usize] += 1;
        }
        assert!(seen[..90].iter().all(|&c| c == 1) && seen[90..].iter().all(|&c| c == 0));
        let bad = SplitSpec { test_start: x.timestamp(10), ..spec.clone() };
        assert!(matches!(chronological_split(&x, &bad), Err(EvalError::InvalidSplit(_))));
        let empty = SplitSpec { test_start: x.timestamp(100), test_end: x.timestamp(120), ..spec };
        assert_eq!(chronological_split(&x, &empty).unwrap_err(), EvalError::EmptySide("test"));
    }

    #[test]
    fn windows() {
        let x = split_matrix(48);
        let y: Vec<f64> = (0..48).map(|i| 1000.0 + (i as f64 * 0.7).sin() * 100.0).collect();
        let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + (i as f64) - 20.0).collect();
        let all = NamedWindow { name: "all".into(), start: x.timestamp(0), end: x.timestamp(47) };
        let a = NamedWindow { name: "a".into(), start: x.timestamp(0), end: x.timestamp(29) };
        let b = NamedWindow { name: "b".into(), start: x.timestamp(30), end: x.timestamp(47) };
        let opts = MetricOptions::default();
        let rep = window_report(&y, &p, &x.axis, &[all, a, b], opts).unwrap();
        assert_eq!(rep["all"], MetricSet::compute(&y, &p, opts).unwrap());
        let weighted = (rep["a"].mae * 30.0 + rep["b"].mae * 18.0) / 48.0;
        assert!((weighted - rep["all"].mae).abs() < 1e-9);
        let none = NamedWindow { name: "later".into(), start: x.timestamp(100), end: x.timestamp(110) };
        assert_eq!(window_report(&y, &p, &x.axis, &[none], opts), Err(EvalError::EmptyWindow("later".into())));
    }

    #[test]
    fn comparison_renders() {
        let m = MetricSet::compute(&[100.0, 200.0], &[110.0, 180.0], MetricOptions::default()).unwrap();
        let rows = vec![ComparisonRow { label: "gbdt-refined".into(), metrics: m }];
        let text = comparison_text(&rows);
        assert!(text.contains("gbdt-refined") && text.contains("15.00"));
        let csv = comparison_csv(&rows);
        assert!(csv.starts_with("model,rmse,mae,mape,peak_mape,n,k\n"));
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 1..200)) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = mae(&y, &p).unwrap();
            let r = rmse(&y, &p).unwrap();
            prop_assert!(r >= a - 1e-9 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn scaling_behaviour(pairs in prop::collection::vec((10.0f64..1e4, 10.0f64..1e4), 1..100), c in 1.0f64..50.0) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let m0 = mape(&y, &p, 1.0).unwrap().percent;
            let m1 = mape(&ys, &ps, 1.0).unwrap().percent;
            prop_assert!((m0 - m1).abs() <= 1e-9 * m0.max(1.0));
            prop_assert!((mae(&ys, &ps).unwrap() - c * mae(&y, &p).unwrap()).abs() <= 1e-9 * c * mae(&y, &p).unwrap().max(1.0));
            prop_assert!((rmse(&ys, &ps).unwrap() - c * rmse(&y, &p).unwrap()).abs() <= 1e-9 * c * rmse(&y, &p).unwrap().max(1.0));
        }

        #[test]
        fn permutation_invariance(vals in prop::collection::btree_set(0u32..100_000, 20..120), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let y: Vec<f64> = vals.iter().map(|&v| 1000.0 + v as f64).collect();
            let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + (i % 7) as f64 * 3.0 - 9.0).collect();
            let mut perm: Vec<usize> = (0..y.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let a = MetricSet::compute(&y, &p, MetricOptions::default()).unwrap();
            let b = MetricSet::compute(&yp, &pp, MetricOptions::default()).unwrap();
            prop_assert!((a.mae - b.mae).abs() < 1e-9 && (a.rmse - b.rmse).abs() < 1e-9);
            prop_assert!((a.mape - b.mape).abs() < 1e-9 && (a.peak_mape - b.peak_mape).abs() < 1e-9);
        }
    }
}
