use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShapError};
use crate::rng::child_rng;
use crate::types::{Dataset, Predictor};

/// A node of an axis-aligned binary tree. Points with `x[feature] < threshold`
/// go left, everything else (including ties) goes right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Flat node array; index 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(ShapError::InvalidInput("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                feature,
                left,
                right,
                threshold,
            } = *node
            {
                if feature >= d {
                    return Err(ShapError::InvalidInput(format!(
                        "node {i} splits on feature {feature} but d = {d}"
                    )));
                }
                // children strictly after parents rules out cycles
                if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len()
                {
                    return Err(ShapError::InvalidInput(format!(
                        "node {i} has invalid children ({left}, {right})"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(ShapError::InvalidInput(format!(
                        "node {i} has a non-finite threshold"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn leaf_range(&self) -> (f64, f64) {
        self.nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| match n {
            TreeNode::Leaf { value } => (lo.min(*value), hi.max(*value)),
            _ => (lo, hi),
        })
    }
}

/// Mean of the member trees' outputs. Piecewise constant in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl TreeEnsembleModel {
    pub fn new(n_features: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(ShapError::InvalidInput("ensemble has no trees".into()));
        }
        for t in &trees {
            t.validate(n_features)?;
        }
        Ok(Self { n_features, trees })
    }

    /// Smallest and largest leaf value across all trees.
    pub fn output_range(&self) -> (f64, f64) {
        self.trees.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            let (a, b) = t.leaf_range();
            (lo.min(a), hi.max(b))
        })
    }
}

impl Predictor for TreeEnsembleModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestTrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestTrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_samples_leaf: 5,
            max_features: None,
            seed: 0,
        }
    }
}

/// Random-forest-style ensemble: greedy variance-reduction CART trees grown on
/// bootstrap resamples with per-split feature subsampling.
pub fn train_random_forest(
    data: &Dataset,
    labels: &[f64],
    cfg: &ForestTrainConfig,
) -> Result<TreeEnsembleModel> {
    let n = data.n_rows();
    let d = data.n_features();
    check_dim(n, labels.len())?;
    if cfg.n_trees == 0 || cfg.min_samples_leaf == 0 {
        return Err(ShapError::Configuration(
            "forest needs at least one tree and a positive leaf size".into(),
        ));
    }
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| data.rows().column(j).iter().copied().collect())
        .collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = child_rng(cfg.seed, &[t as u64]);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut builder = TreeBuilder {
            columns: &columns,
            labels,
            cfg,
            mtry,
            nodes: Vec::new(),
            rng,
        };
        builder.grow(idx, 0);
        trees.push(DecisionTree {
            nodes: builder.nodes,
        });
    }
    TreeEnsembleModel::new(d, trees)
}

struct TreeBuilder<'a, R: Rng> {
    columns: &'a [Vec<f64>],
    labels: &'a [f64],
    cfg: &'a ForestTrainConfig,
    mtry: usize,
    nodes: Vec<TreeNode>,
    rng: R,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let mean = idx.iter().map(|&i| self.labels[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(TreeNode::Leaf { value: mean });
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.columns[feature][i] < threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let d = self.columns.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.labels[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.labels[i].powi(2)).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut features: Vec<usize> = sample(&mut self.rng, d, self.mtry).into_vec();
        features.sort_unstable();
        let mut order: Vec<usize> = idx.to_vec();
        for f in features {
            let col = &self.columns[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 0..n - 1 {
                let y = self.labels[order[k]];
                left_sum += y;
                left_sq += y * y;
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (a, b) = (col[order[k]], col[order[k + 1]]);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl as f64)
                    + (right_sq - right_sum * right_sum / nr as f64);
                if best.is_none_or(|(s, _, _)| sse < s) {
                    let mid = 0.5 * (a + b);
                    // guard against midpoint rounding onto the lower value
                    let threshold = if mid > a { mid } else { b };
                    best = Some((sse, f, threshold));
                }
            }
        }
        best.filter(|(sse, _, _)| *sse < parent_sse - 1e-12)
            .map(|(_, f, t)| (f, t))
    }
}
