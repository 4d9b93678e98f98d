//! Shapley attributions under the interventional value function
//!
//! ```text
//! f(S, x) = (1/|B|) Σ_{b∈B} model(x_S, b_{F∖S})
//! φᵢ = Σ_{S⊆F∖{i}} |S|!(|F|−|S|−1)!/|F|! · [f(S∪{i}, x) − f(S, x)]
//! ```
//!
//! computed by subset enumeration, by permutation sampling, or, for tree
//! ensembles, by walking each tree once per background row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::eval::peak_slice;
use crate::features::FeatureMatrix;
use crate::models::{ModelArtifact, ModelPayload, TreeEnsemble, TreeNode};
use crate::time::Timestamp;

pub const MAX_EXACT_FEATURES: usize = 20;
pub const MAX_BACKGROUND: usize = 1024;
pub const DEFAULT_BACKGROUND: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("exact enumeration supports at most {MAX_EXACT_FEATURES} features, model has {0}")]
    TooManyFeatures(usize),
    #[error("background must hold between 1 and {MAX_BACKGROUND} rows, got {0}")]
    BackgroundSize(usize),
    #[error("tree attribution needs a gradient-boosted model")]
    WrongFamily,
    #[error("{0}")]
    Unsupported(String),
    #[error("row has {got} values, model expects {want}")]
    RowWidth { got: usize, want: usize },
    #[error("attributions disagree on the feature schema")]
    SchemaMismatch,
    #[error("no attributions to aggregate")]
    Empty,
    #[error("permutation count must be at least 1")]
    NoPermutations,
}

/// Row-wise predictor; recurrent models are deliberately not explainable.
#[derive(Debug, Clone, Copy)]
pub enum RowModel<'a> {
    Linear(&'a crate::models::LinearModel),
    Trees(&'a TreeEnsemble),
}

impl<'a> RowModel<'a> {
    pub fn from_artifact(model: &'a ModelArtifact) -> Result<Self, ExplainError> {
        match &model.payload {
            ModelPayload::Linear(m) => Ok(RowModel::Linear(m)),
            ModelPayload::Gbdt(e) => Ok(RowModel::Trees(e)),
            ModelPayload::Lstm(_) => {
                Err(ExplainError::Unsupported("attributions are only computed for linear and tree models".into()))
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            RowModel::Linear(m) => m.predict_row(row),
            RowModel::Trees(e) => e.predict_row(row),
        }
    }
}

/// `f(S, x)`: mean model output with features in `S` taken from `x` and the
/// rest from each background row.
#[derive(Debug, Clone)]
pub struct ValueFunction<'a> {
    pub model: RowModel<'a>,
    pub background: Vec<Vec<f64>>,
    pub n_features: usize,
}

impl<'a> ValueFunction<'a> {
    pub fn new(model: RowModel<'a>, background: Vec<Vec<f64>>, n_features: usize) -> Result<Self, ExplainError> {
        if background.is_empty() || background.len() > MAX_BACKGROUND {
            return Err(ExplainError::BackgroundSize(background.len()));
        }
        if let Some(b) = background.iter().find(|b| b.len() != n_features) {
            return Err(ExplainError::RowWidth { got: b.len(), want: n_features });
        }
        Ok(ValueFunction { model, background, n_features })
    }

    pub fn from_artifact(model: &'a ModelArtifact, background: Vec<Vec<f64>>) -> Result<Self, ExplainError> {
        Self::new(RowModel::from_artifact(model)?, background, model.feature_schema.len())
    }

    /// `in_s[j]` selects `x[j]` over the background value.
    pub fn value(&self, x: &[f64], in_s: impl Fn(usize) -> bool) -> f64 {
        let mut row = vec![0.0; self.n_features];
        let mut total = 0.0;
        for b in &self.background {
            for j in 0..self.n_features {
                row[j] = if in_s(j) { x[j] } else { b[j] };
            }
            total += self.model.predict(&row);
        }
        total / self.background.len() as f64
    }

    fn check_row(&self, x: &[f64]) -> Result<(), ExplainError> {
        if x.len() != self.n_features {
            return Err(ExplainError::RowWidth { got: x.len(), want: self.n_features });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub row_id: Timestamp,
    pub base_value: f64,
    pub prediction: f64,
    pub features: Vec<String>,
    pub phi: Vec<f64>,
    /// Per-feature standard error, for sampled estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<Vec<f64>>,
}

impl Attribution {
    pub fn phi_of(&self, name: &str) -> Option<f64> {
        self.features.iter().position(|f| f == name).map(|i| self.phi[i])
    }

    /// `base_value + Σφ − prediction`.
    pub fn local_accuracy_gap(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>() - self.prediction
    }
}

/// `C(n, k)` exactly for the sizes allowed here.
fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Enumerates all `2^|F|` coalitions.
pub fn shapley_exact(vf: &ValueFunction, x: &[f64], row_id: Timestamp, names: &[String]) -> Result<Attribution, ExplainError> {
    vf.check_row(x)?;
    let n = vf.n_features;
    if n > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures(n));
    }
    let masks = 1usize << n;
    let values: Vec<f64> = (0..masks).into_par_iter().map(|m| vf.value(x, |j| m >> j & 1 == 1)).collect();
    // |S|!(n−|S|−1)!/n! = 1 / (n · C(n−1, |S|)).
    let weights: Vec<f64> = (0..n.max(1)).map(|s| 1.0 / (n as f64 * binomial(n - 1, s.min(n - 1)) as f64)).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for m in 0..masks {
            if m & bit == 0 {
                acc += weights[m.count_ones() as usize] * (values[m | bit] - values[m]);
            }
        }
        *p = acc;
    }
    Ok(Attribution {
        row_id,
        base_value: values[0],
        prediction: vf.model.predict(x),
        features: names.to_vec(),
        phi,
        std_error: None,
    })
}

/// Monte-Carlo estimate from `n_permutations` random feature orderings.
pub fn shapley_sampled(
    vf: &ValueFunction,
    x: &[f64],
    n_permutations: usize,
    seed: u64,
    row_id: Timestamp,
    names: &[String],
) -> Result<Attribution, ExplainError> {
    vf.check_row(x)?;
    if n_permutations == 0 {
        return Err(ExplainError::NoPermutations);
    }
    let n = vf.n_features;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let base = vf.value(x, |_| false);
    let mut composite = vf.background.clone();
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        composite.clone_from(&vf.background);
        let mut previous = base;
        for &i in &order {
            let mut total = 0.0;
            for row in &mut composite {
                row[i] = x[i];
                total += vf.model.predict(row);
            }
            let current = total / composite.len() as f64;
            let delta = current - previous;
            sum[i] += delta;
            sum_sq[i] += delta * delta;
            previous = current;
        }
    }
    let k = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / k).collect();
    let std_error = (n_permutations > 1).then(|| {
        (0..n)
            .map(|i| {
                let var = (sum_sq[i] - k * phi[i] * phi[i]).max(0.0) / (k - 1.0);
                (var / k).sqrt()
            })
            .collect()
    });
    Ok(Attribution { row_id, base_value: base, prediction: vf.model.predict(x), features: names.to_vec(), phi, std_error })
}

/// `p! q! / (p+q+1)!`, the share one player gets in a coalition game where
/// it must arrive after `p` specific players and before `q` others.
fn path_weight(p: usize, q: usize) -> f64 {
    let n = p + q;
    let mut c = 1.0;
    for i in 0..p.min(q) {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((n + 1) as f64 * c)
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Unset,
    X,
    B,
}

fn walk(node: &TreeNode, x: &[f64], b: &[f64], sides: &mut [Side], path: &mut Vec<usize>, phi: &mut [f64]) {
    match node {
        TreeNode::Leaf { weight } => {
            let a = path.iter().filter(|&&f| sides[f] == Side::X).count();
            let nb = path.len() - a;
            if a > 0 {
                let w = weight * path_weight(a - 1, nb);
                path.iter().filter(|&&f| sides[f] == Side::X).for_each(|&f| phi[f] += w);
            }
            if nb > 0 {
                let w = weight * path_weight(a, nb - 1);
                path.iter().filter(|&&f| sides[f] == Side::B).for_each(|&f| phi[f] -= w);
            }
        }
        TreeNode::Split { feature, threshold, default_left, left, right } => {
            let f = *feature;
            let goes_left = |v: f64| if v.is_nan() { *default_left } else { v <= *threshold };
            let (xl, bl) = (goes_left(x[f]), goes_left(b[f]));
            let child = |l: bool| if l { left.as_ref() } else { right.as_ref() };
            match sides[f] {
                Side::X => walk(child(xl), x, b, sides, path, phi),
                Side::B => walk(child(bl), x, b, sides, path, phi),
                Side::Unset if xl == bl => walk(child(xl), x, b, sides, path, phi),
                Side::Unset => {
                    path.push(f);
                    sides[f] = Side::X;
                    walk(child(xl), x, b, sides, path, phi);
                    sides[f] = Side::B;
                    walk(child(bl), x, b, sides, path, phi);
                    sides[f] = Side::Unset;
                    path.pop();
                }
            }
        }
    }
}

/// Attribution of one tree's raw output (before the learning rate).
pub fn tree_phi(tree: &TreeNode, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let mut phi = vec![0.0; x.len()];
    let mut sides = vec![Side::Unset; x.len()];
    let mut path = Vec::new();
    for b in background {
        walk(tree, x, b, &mut sides, &mut path, &mut phi);
    }
    let scale = 1.0 / background.len() as f64;
    phi.iter_mut().for_each(|p| *p *= scale);
    phi
}

/// Tree-path algorithm for the same value function as [`shapley_exact`].
pub fn shapley_tree(
    model: &ModelArtifact,
    x: &[f64],
    background: &[Vec<f64>],
    row_id: Timestamp,
) -> Result<Attribution, ExplainError> {
    let ModelPayload::Gbdt(ensemble) = &model.payload else {
        return Err(ExplainError::WrongFamily);
    };
    shapley_tree_ensemble(ensemble, x, background, row_id)
}

pub fn shapley_tree_ensemble(
    ensemble: &TreeEnsemble,
    x: &[f64],
    background: &[Vec<f64>],
    row_id: Timestamp,
) -> Result<Attribution, ExplainError> {
    let n = ensemble.feature_schema.len();
    if x.len() != n {
        return Err(ExplainError::RowWidth { got: x.len(), want: n });
    }
    if background.is_empty() || background.len() > MAX_BACKGROUND {
        return Err(ExplainError::BackgroundSize(background.len()));
    }
    let mut phi = vec![0.0; n];
    for tree in &ensemble.trees {
        for (p, t) in phi.iter_mut().zip(tree_phi(tree, x, background)) {
            *p += ensemble.learning_rate * t;
        }
    }
    let base_value = background.iter().map(|b| ensemble.predict_row(b)).sum::<f64>() / background.len() as f64;
    Ok(Attribution {
        row_id,
        base_value,
        prediction: ensemble.predict_row(x),
        features: ensemble.feature_schema.clone(),
        phi,
        std_error: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tree,
    Exact,
    Sampled,
}

/// Attributions for several rows of `x`, in parallel.
pub fn explain_rows(
    model: &ModelArtifact,
    x: &FeatureMatrix,
    rows: &[usize],
    background: Vec<Vec<f64>>,
    method: Method,
    permutations: usize,
    seed: u64,
) -> Result<Vec<Attribution>, ExplainError> {
    let vf = ValueFunction::from_artifact(model, background)?;
    if method == Method::Tree && !matches!(model.payload, ModelPayload::Gbdt(_)) {
        return Err(ExplainError::WrongFamily);
    }
    if method == Method::Exact && vf.n_features > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures(vf.n_features));
    }
    rows.par_iter()
        .map(|&r| {
            let row = x.row(r);
            let ts = x.timestamp(r);
            match method {
                Method::Tree => shapley_tree(model, &row, &vf.background, ts),
                Method::Exact => shapley_exact(&vf, &row, ts, &x.names),
                Method::Sampled => shapley_sampled(&vf, &row, permutations, seed.wrapping_add(r as u64), ts, &x.names),
            }
        })
        .collect()
}

/// Up to `size` row indices spread evenly over each local hour of day.
pub fn stratified_background(x: &FeatureMatrix, size: usize) -> Vec<usize> {
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 24];
    for i in 0..x.n_rows() {
        strata[x.timestamp(i).local().hour as usize].push(i);
    }
    let nonempty: Vec<&Vec<usize>> = strata.iter().filter(|s| !s.is_empty()).collect();
    if nonempty.is_empty() || size == 0 {
        return Vec::new();
    }
    let per = size / nonempty.len();
    let extra = size % nonempty.len();
    let mut picked = Vec::with_capacity(size);
    for (h, s) in nonempty.iter().enumerate() {
        let want = (per + usize::from(h < extra)).min(s.len());
        for k in 0..want {
            // Midpoints of `want` equal slices.
            picked.push(s[(2 * k + 1) * s.len() / (2 * want)]);
        }
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "name")]
pub enum RowSet {
    Global,
    PeakWindow,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub rows: RowSet,
    pub n_rows: usize,
    pub mean_abs_phi: BTreeMap<String, f64>,
    /// Most important first; equal importances in name order.
    pub ranking: Vec<String>,
}

impl ImportanceReport {
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.ranking.iter().position(|n| n == name)
    }

    pub fn top(&self, k: usize) -> &[String] {
        &self.ranking[..k.min(self.ranking.len())]
    }
}

pub fn importance(attrs: &[Attribution], rows: RowSet) -> Result<ImportanceReport, ExplainError> {
    let first = attrs.first().ok_or(ExplainError::Empty)?;
    if attrs.iter().any(|a| a.features != first.features || a.phi.len() != first.features.len()) {
        return Err(ExplainError::SchemaMismatch);
    }
    let n = attrs.len() as f64;
    let means: Vec<f64> =
        (0..first.features.len()).map(|j| attrs.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n).collect();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then_with(|| first.features[a].cmp(&first.features[b])));
    Ok(ImportanceReport {
        rows,
        n_rows: attrs.len(),
        mean_abs_phi: first.features.iter().cloned().zip(means).collect(),
        ranking: order.into_iter().map(|i| first.features[i].clone()).collect(),
    })
}

/// `timestamp,base_value,prediction,<φ per feature>`.
pub fn attributions_csv(attrs: &[Attribution]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = attrs.first() {
        let mut header = vec!["timestamp".to_string(), "base_value".into(), "prediction".into()];
        header.extend(first.features.iter().cloned());
        w.write_record(&header).expect("in-memory write");
    }
    for a in attrs {
        let mut rec = vec![a.row_id.to_string(), a.base_value.to_string(), a.prediction.to_string()];
        rec.extend(a.phi.iter().map(|p| p.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub(crate) fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bar chart of mean |φ|, largest at the top.
pub fn importance_svg(report: &ImportanceReport, title: &str, max_bars: usize) -> String {
    let names = report.top(max_bars);
    let label_w = 190.0;
    let bar_w = 420.0;
    let row_h = 22.0;
    let top = 40.0;
    let height = top + row_h * names.len() as f64 + 20.0;
    let width = label_w + bar_w + 110.0;
    let max = names.iter().map(|n| report.mean_abs_phi[n]).fold(0.0, f64::max);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="10" y="22" font-size="15" font-weight="bold">{}</text>"#, escape_xml(title));
    for (i, name) in names.iter().enumerate() {
        let v = report.mean_abs_phi[name];
        let y = top + row_h * i as f64;
        let w = if max > 0.0 { bar_w * v / max } else { 0.0 };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            label_w - 8.0,
            y + 15.0,
            escape_xml(name)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{label_w}" y="{:.1}" width="{w:.2}" height="{:.1}" fill="#3b6ea5"/>"##,
            y + 3.0,
            row_h - 6.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{v:.2}</text>"#, label_w + w + 6.0, y + 15.0);
    }
    svg.push_str("</svg>\n");
    svg
}
