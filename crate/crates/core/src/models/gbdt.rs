//! Second-order gradient boosting of regression trees on quantile histograms.
//!
//! Under squared error the hessian is 1 for every row, but the split gain
//! and leaf weights keep the general `G²/(H+λ)` form:
//!
//! ```text
//! gain = ½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ
//! w*   = −G / (H + λ)
//! ```
//!
//! Level-wise growth splits every node of a depth before descending;
//! leaf-wise growth always splits the single leaf with the largest gain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    LevelWise,
    LeafWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    /// Depth limit for level-wise growth.
    pub max_depth: usize,
    /// Leaf limit for leaf-wise growth.
    pub max_leaves: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub bins: usize,
    pub growth: Growth,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 300,
            learning_rate: 0.1,
            max_depth: 6,
            max_leaves: 31,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            bins: 256,
            growth: Growth::LevelWise,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::InvalidParams(reason));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if !(2..=1024).contains(&self.bins) {
            return bad(format!("bins {} outside [2, 1024]", self.bins));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 || self.min_child_weight < 0.0 {
            return bad("lambda, gamma and min_child_weight must be nonnegative".into());
        }
        if self.growth == Growth::LeafWise && self.max_leaves < 2 {
            return bad("max_leaves must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Where a missing (`NaN`) value goes.
        default_left: bool,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split { feature, threshold, default_left, left, right } => {
                    let x = row[*feature];
                    let go_left = if x.is_nan() { *default_left } else { x <= *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Calls `f` with every split feature index.
    pub fn visit_features(&self, f: &mut impl FnMut(usize)) {
        if let TreeNode::Split { feature, left, right, .. } = self {
            f(*feature);
            left.visit_features(f);
            right.visit_features(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub growth: Growth,
    pub lambda: f64,
    pub gamma: f64,
    pub trees: Vec<TreeNode>,
    pub feature_schema: Vec<String>,
    /// Training RMSE before boosting and after each round.
    #[serde(default)]
    pub train_rmse: Vec<f64>,
}

impl TreeEnsemble {
    /// `base_score + η·Σ_k tree_k(row)`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    /// Prediction using only the first `rounds` trees.
    pub fn predict_row_truncated(&self, row: &[f64], rounds: usize) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().take(rounds).map(|t| t.predict(row)).sum::<f64>()
    }

    /// Indices of features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used = vec![false; self.feature_schema.len()];
        for t in &self.trees {
            t.visit_features(&mut |f| used[f] = true);
        }
        (0..used.len()).filter(|&i| used[i]).collect()
    }
}

/// Per-feature bin boundaries. Bin `b` holds `cuts[b−1] < x ≤ cuts[b]`; the
/// last bin holds everything above the final cut. Cuts are data values, so
/// bin membership depends only on the order of the training values.
#[derive(Debug, Clone)]
struct FeatureBins {
    cuts: Vec<f64>,
}

impl FeatureBins {
    fn from_values(values: &[f64], max_bins: usize) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let cuts = if distinct.len() <= max_bins {
            distinct[..distinct.len().saturating_sub(1)].to_vec()
        } else {
            let n = sorted.len();
            let top = *distinct.last().expect("nonempty");
            let mut cuts: Vec<f64> = Vec::with_capacity(max_bins);
            for j in 1..max_bins {
                let v = sorted[j * n / max_bins];
                if v < top && cuts.last().map_or(true, |&c| v > c) {
                    cuts.push(v);
                }
            }
            cuts
        };
        FeatureBins { cuts }
    }

    fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    fn bin(&self, x: f64) -> u16 {
        self.cuts.partition_point(|&c| c < x) as u16
    }
}

const MISSING_BIN: u16 = u16::MAX;

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
    default_left: bool,
}

struct Trainer<'a> {
    params: &'a GbdtParams,
    bins: Vec<FeatureBins>,
    /// Feature-major bin codes.
    codes: Vec<Vec<u16>>,
}

struct BuildNode {
    rows: Vec<u32>,
    depth: usize,
    best: Option<SplitCandidate>,
}

impl Trainer<'_> {
    fn split_gain(&self, gl: f64, hl: f64, gr: f64, hr: f64) -> f64 {
        let l = self.params.lambda;
        0.5 * (gl * gl / (hl + l) + gr * gr / (hr + l) - (gl + gr) * (gl + gr) / (hl + hr + l)) - self.params.gamma
    }

    fn best_split(&self, rows: &[u32], grad: &[f64], hess: &[f64]) -> Option<SplitCandidate> {
        let mcw = self.params.min_child_weight;
        let per_feature: Vec<Option<SplitCandidate>> = (0..self.codes.len())
            .into_par_iter()
            .map(|f| {
                let nb = self.bins[f].n_bins();
                if nb < 2 {
                    return None;
                }
                let mut hg = vec![0.0; nb];
                let mut hh = vec![0.0; nb];
                let (mut mg, mut mh) = (0.0, 0.0);
                let codes = &self.codes[f];
                for &r in rows {
                    let r = r as usize;
                    match codes[r] {
                        MISSING_BIN => {
                            mg += grad[r];
                            mh += hess[r];
                        }
                        b => {
                            hg[b as usize] += grad[r];
                            hh[b as usize] += hess[r];
                        }
                    }
                }
                let gt: f64 = hg.iter().sum::<f64>() + mg;
                let ht: f64 = hh.iter().sum::<f64>() + mh;
                let mut best: Option<SplitCandidate> = None;
                let (mut gl, mut hl) = (0.0, 0.0);
                for b in 0..nb - 1 {
                    gl += hg[b];
                    hl += hh[b];
                    let options: &[bool] = if mh > 0.0 { &[true, false] } else { &[true] };
                    for &missing_left in options {
                        let (gl2, hl2) = if missing_left { (gl + mg, hl + mh) } else { (gl, hl) };
                        let (gr2, hr2) = (gt - gl2, ht - hl2);
                        if hl2 < mcw || hr2 < mcw || hl2 <= 0.0 || hr2 <= 0.0 {
                            continue;
                        }
                        let gain = self.split_gain(gl2, hl2, gr2, hr2);
                        if best.map_or(true, |c| gain > c.gain) {
                            best = Some(SplitCandidate { gain, feature: f, bin: b, default_left: missing_left });
                        }
                    }
                }
                best
            })
            .collect();
        per_feature
            .into_iter()
            .flatten()
            .filter(|c| c.gain > 0.0)
            .fold(None, |acc: Option<SplitCandidate>, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            })
    }

    fn partition(&self, rows: &[u32], split: &SplitCandidate) -> (Vec<u32>, Vec<u32>) {
        let codes = &self.codes[split.feature];
        rows.iter().partition(|&&r| match codes[r as usize] {
            MISSING_BIN => split.default_left,
            b => (b as usize) <= split.bin,
        })
    }

    fn leaf_weight(&self, rows: &[u32], grad: &[f64], hess: &[f64]) -> f64 {
        let g: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
        if h + self.params.lambda == 0.0 {
            0.0
        } else {
            -g / (h + self.params.lambda)
        }
    }

    /// Grows one tree and returns it with the row sets of its leaves.
    fn grow(&self, n_rows: usize, grad: &[f64], hess: &[f64]) -> (TreeNode, Vec<(Vec<u32>, f64)>) {
        // Arena of nodes; `children[i]` is set once node `i` is split.
        let mut arena: Vec<BuildNode> = Vec::new();
        let mut children: Vec<Option<(usize, usize, SplitCandidate)>> = Vec::new();
        let root_rows: Vec<u32> = (0..n_rows as u32).collect();
        let best = self.best_split(&root_rows, grad, hess);
        arena.push(BuildNode { rows: root_rows, depth: 0, best });
        children.push(None);

        let can_split = |node: &BuildNode, params: &GbdtParams| match params.growth {
            Growth::LevelWise => node.depth < params.max_depth,
            Growth::LeafWise => true,
        };

        match self.params.growth {
            Growth::LevelWise => {
                let mut frontier = vec![0usize];
                while !frontier.is_empty() {
                    let mut next = Vec::new();
                    for id in frontier {
                        let Some(split) = arena[id].best.filter(|_| can_split(&arena[id], self.params)) else {
                            continue;
                        };
                        let (l, r) = self.split_node(&mut arena, &mut children, id, split, grad, hess);
                        next.push(l);
                        next.push(r);
                    }
                    frontier = next;
                }
            }
            Growth::LeafWise => {
                let mut leaves = 1;
                while leaves < self.params.max_leaves {
                    let candidate = (0..arena.len())
                        .filter(|&i| children[i].is_none())
                        .filter_map(|i| arena[i].best.map(|b| (i, b)))
                        .fold(None, |acc: Option<(usize, SplitCandidate)>, (i, b)| match acc {
                            Some((_, a)) if a.gain >= b.gain => acc,
                            _ => Some((i, b)),
                        });
                    let Some((id, split)) = candidate else { break };
                    self.split_node(&mut arena, &mut children, id, split, grad, hess);
                    leaves += 1;
                }
            }
        }

        let mut leaf_rows = Vec::new();
        let tree = self.assemble(0, &arena, &children, grad, hess, &mut leaf_rows);
        (tree, leaf_rows)
    }

    fn split_node(
        &self,
        arena: &mut Vec<BuildNode>,
        children: &mut Vec<Option<(usize, usize, SplitCandidate)>>,
        id: usize,
        split: SplitCandidate,
        grad: &[f64],
        hess: &[f64],
    ) -> (usize, usize) {
        let (lrows, rrows) = self.partition(&arena[id].rows, &split);
        let depth = arena[id].depth + 1;
        let mut ids = [0; 2];
        for (slot, rows) in ids.iter_mut().zip([lrows, rrows]) {
            let needs_search = match self.params.growth {
                Growth::LevelWise => depth < self.params.max_depth,
                Growth::LeafWise => true,
            };
            let best = if needs_search { self.best_split(&rows, grad, hess) } else { None };
            *slot = arena.len();
            arena.push(BuildNode { rows, depth, best });
            children.push(None);
        }
        children[id] = Some((ids[0], ids[1], split));
        (ids[0], ids[1])
    }

    fn assemble(
        &self,
        id: usize,
        arena: &[BuildNode],
        children: &[Option<(usize, usize, SplitCandidate)>],
        grad: &[f64],
        hess: &[f64],
        leaf_rows: &mut Vec<(Vec<u32>, f64)>,
    ) -> TreeNode {
        match children[id] {
            None => {
                let weight = self.leaf_weight(&arena[id].rows, grad, hess);
                leaf_rows.push((arena[id].rows.clone(), weight));
                TreeNode::Leaf { weight }
            }
            Some((l, r, split)) => TreeNode::Split {
                feature: split.feature,
                threshold: self.bins[split.feature].cuts[split.bin],
                default_left: split.default_left,
                left: Box::new(self.assemble(l, arena, children, grad, hess, leaf_rows)),
                right: Box::new(self.assemble(r, arena, children, grad, hess, leaf_rows)),
            },
        }
    }
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Mean taken about the first value, so a constant target is reproduced exactly.
fn pivot_mean(y: &[f64]) -> f64 {
    let pivot = y[0];
    pivot + y.iter().map(|v| v - pivot).sum::<f64>() / y.len() as f64
}

pub fn fit_gbdt(x: &FeatureMatrix, params: &GbdtParams) -> Result<TreeEnsemble, ModelError> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 {
        return Err(ModelError::EmptyMatrix);
    }
    let y = &x.target;
    let base_score = pivot_mean(y);
    let mut ensemble = TreeEnsemble {
        base_score,
        learning_rate: params.learning_rate,
        growth: params.growth,
        lambda: params.lambda,
        gamma: params.gamma,
        trees: Vec::new(),
        feature_schema: x.names.clone(),
        train_rmse: Vec::new(),
    };
    let mut pred = vec![base_score; n];
    ensemble.train_rmse.push(rmse(&pred, y));
    if y.iter().all(|&v| v == y[0]) {
        return Ok(ensemble);
    }

    let bins: Vec<FeatureBins> = x.columns.iter().map(|c| FeatureBins::from_values(c, params.bins)).collect();
    let codes: Vec<Vec<u16>> = x
        .columns
        .iter()
        .zip(&bins)
        .map(|(c, b)| c.iter().map(|&v| if v.is_nan() { MISSING_BIN } else { b.bin(v) }).collect())
        .collect();
    let trainer = Trainer { params, bins, codes };
    let hess = vec![1.0; n];
    for _ in 0..params.rounds {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let (tree, leaves) = trainer.grow(n, &grad, &hess);
        for (rows, weight) in leaves {
            for r in rows {
                pred[r as usize] += params.learning_rate * weight;
            }
        }
        ensemble.trees.push(tree);
        ensemble.train_rmse.push(rmse(&pred, y));
    }
    Ok(ensemble)
}
