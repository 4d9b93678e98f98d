//! Column transforms. Each returns a vector of the input length with `NaN`
//! in rows where the transform is undefined (the warm-up prefix).

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Guard added to rolling standard deviations in z-score spike features.
pub const ZSCORE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollingStat {
    Mean,
    Std,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeMode {
    /// `(x − mean) / (mean + 1)`
    Ratio,
    /// `(x − mean) / (std + ε)`
    Zscore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempSpikeMode {
    /// `(tmax − tavg) / (tavg + 1)`
    Ratio,
    /// `tmax − tavg`
    Diff,
}

/// `out[t] = col[t − k]`.
pub fn lag(col: &[f64], k: usize) -> Vec<f64> {
    let n = col.len();
    (0..n).map(|t| if t >= k { col[t - k] } else { f64::NAN }).collect()
}

/// `out[t] = stat(col[t − shift − window + 1 ..= t − shift])`; the standard
/// deviation is the population form.
pub fn rolling(col: &[f64], window: usize, stat: RollingStat, shift: usize) -> Vec<f64> {
    assert!(window >= 1, "rolling window must be at least one hour");
    let n = col.len();
    let mut out = vec![f64::NAN; n];
    let first = window + shift - 1;
    match stat {
        RollingStat::Mean | RollingStat::Std => {
            for t in first..n {
                let end = t - shift;
                let win = &col[end + 1 - window..=end];
                out[t] = match stat {
                    RollingStat::Mean => window_mean(win),
                    _ => window_std(win),
                };
            }
        }
        RollingStat::Max | RollingStat::Min => {
            // Monotonic deque of indices; front holds the current extreme.
            let better = |a: f64, b: f64| if stat == RollingStat::Max { a >= b } else { a <= b };
            let mut dq: VecDeque<usize> = VecDeque::new();
            for (i, &v) in col.iter().enumerate() {
                while dq.back().is_some_and(|&j| better(v, col[j])) {
                    dq.pop_back();
                }
                dq.push_back(i);
                if dq.front().is_some_and(|&j| j + window <= i) {
                    dq.pop_front();
                }
                let t = i + shift;
                if i + 1 >= window && t < n {
                    out[t] = col[*dq.front().expect("nonempty")];
                }
            }
        }
    }
    out
}

/// Mean computed about the first element so constant windows are exact.
fn window_mean(win: &[f64]) -> f64 {
    let pivot = win[0];
    pivot + win.iter().map(|v| v - pivot).sum::<f64>() / win.len() as f64
}

fn window_std(win: &[f64]) -> f64 {
    let m = window_mean(win);
    (win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / win.len() as f64).sqrt()
}

/// Cooling and heating degree values `(max(0, x − base), max(0, base − x))`.
pub fn degree_days(tavg: &[f64], baseline: f64) -> (Vec<f64>, Vec<f64>) {
    tavg.iter().map(|&t| ((t - baseline).max(0.0), (baseline - t).max(0.0))).unzip()
}

/// Deviation of `col[t − shift]` from the rolling mean of the `window`
/// hours before it, so with `shift ≥ 1` no operand touches hour `t`.
pub fn spike_vs_mean(col: &[f64], window: usize, mode: SpikeMode, shift: usize) -> Vec<f64> {
    let current = lag(col, shift);
    let mean = rolling(col, window, RollingStat::Mean, shift + 1);
    match mode {
        SpikeMode::Ratio => current.iter().zip(&mean).map(|(x, m)| (x - m) / (m + 1.0)).collect(),
        SpikeMode::Zscore => {
            let std = rolling(col, window, RollingStat::Std, shift + 1);
            current
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(x, (m, s))| (x - m) / (s + ZSCORE_EPSILON))
                .collect()
        }
    }
}

pub fn temp_spike_vs_mean(tmax: &[f64], tavg: &[f64], mode: TempSpikeMode) -> Vec<f64> {
    tmax.iter()
        .zip(tavg)
        .map(|(hi, avg)| match mode {
            TempSpikeMode::Ratio => (hi - avg) / (avg + 1.0),
            TempSpikeMode::Diff => hi - avg,
        })
        .collect()
}

pub fn interaction(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "interaction operands differ in length");
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `(sin(2π·x/period), cos(2π·x/period))`.
pub fn cyclical(col: &[f64], period: f64) -> (Vec<f64>, Vec<f64>) {
    col.iter()
        .map(|&x| {
            let angle = 2.0 * PI * x / period;
            (angle.sin(), angle.cos())
        })
        .unzip()
}

/// Linear-interpolation quantile between order statistics; `None` when
/// `values` is empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Heat flag `[x > threshold]` or cold flag `[x < threshold]`.
pub fn threshold_flag(col: &[f64], threshold: f64, above: bool) -> Vec<f64> {
    col.iter()
        .map(|&x| {
            let hit = if above { x > threshold } else { x < threshold };
            f64::from(u8::from(hit))
        })
        .collect()
}
