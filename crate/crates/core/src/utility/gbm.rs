//! Gradient-boosted regression trees on logistic loss, built from scratch.
//!
//! Each round fits a depth-limited tree to the negative gradient
//! (label minus predicted probability) with Newton-step leaf values; raw
//! scores accumulate `learning_rate * leaf` on top of a log-odds prior.
//! Training is exact greedy over presorted feature columns and fully
//! deterministic given the config seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UtilityError;

/// L2 regularization on leaf weights (XGBoost-style lambda).
const LAMBDA: f64 = 1.0;
const MIN_GAIN: f64 = 1e-12;

/// Gradient boosting hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbmConfig {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_subsample")]
    pub subsample: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_n_trees() -> usize {
    200
}
fn default_max_depth() -> usize {
    4
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_min_leaf() -> usize {
    10
}
fn default_subsample() -> f64 {
    0.8
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: default_n_trees(),
            max_depth: default_max_depth(),
            learning_rate: default_learning_rate(),
            min_leaf: default_min_leaf(),
            subsample: default_subsample(),
            rng_seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<(), UtilityError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(UtilityError::BadConfig(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_depth < 1 {
            return Err(UtilityError::BadConfig("max_depth must be >= 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(UtilityError::BadConfig(format!(
                "subsample {} outside (0, 1]",
                self.subsample
            )));
        }
        Ok(())
    }
}

/// One node of a regression tree, stored in a flat array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Where rows with a missing split value go.
    pub default_left: bool,
    pub leaf_value: f64,
    pub is_leaf: bool,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        TreeNode {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            default_left: true,
            leaf_value: value,
            is_leaf: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Unscaled leaf value for one row of the feature matrix.
    pub fn predict_row(&self, row: usize, columns: &[Vec<f64>]) -> f64 {
        let mut idx = 0;
        loop {
            let node = &self.nodes[idx];
            if node.is_leaf {
                return node.leaf_value;
            }
            let v = columns[node.feature][row];
            idx = if v.is_nan() {
                if node.default_left {
                    node.left
                } else {
                    node.right
                }
            } else if v <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }
}

/// Trained boosted ensemble. Leaf values are unscaled; predictions apply the
/// learning rate, so `score = base_score + lr * sum(leaf_t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbmModel {
    pub version: String,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub learning_rate: f64,
    /// Total split gain per feature.
    pub feature_importance: BTreeMap<String, f64>,
    /// Mean training logistic loss after each boosting round.
    pub train_loss: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: &str = "gbm-v1";

impl GbmModel {
    /// Raw log-odds score for one row of a feature-major matrix whose columns
    /// follow `feature_names` order.
    pub fn raw_score(&self, row: usize, columns: &[Vec<f64>]) -> f64 {
        let mut score = self.base_score;
        for tree in &self.trees {
            score += self.learning_rate * tree.predict_row(row, columns);
        }
        score
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), UtilityError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| UtilityError::ModelFile(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, UtilityError> {
        let file = std::fs::File::open(path)?;
        let model: GbmModel = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| UtilityError::ModelFile(e.to_string()))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(UtilityError::ModelFile(format!(
                "unsupported model format {:?}",
                model.version
            )));
        }
        Ok(model)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logistic_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Fit a boosted ensemble on a feature-major matrix. `columns[f][row]` holds
/// the (already imputed) value of feature `f`; labels are 0/1.
pub(crate) fn fit(
    columns: &[Vec<f64>],
    labels: &[u8],
    feature_names: &[String],
    config: &GbmConfig,
) -> Result<GbmModel, UtilityError> {
    config.validate()?;
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos < 2 || n - n_pos < 2 {
        return Err(UtilityError::SingleClass);
    }

    let prior = (n_pos as f64 / n as f64).clamp(1e-7, 1.0 - 1.0e-7);
    let base_score = (prior / (1.0 - prior)).ln();

    // Presort each feature once; ties break by row index for determinism.
    let sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();

    let mut trees = Vec::with_capacity(config.n_trees);
    let mut importance: BTreeMap<String, f64> =
        feature_names.iter().map(|f| (f.clone(), 0.0)).collect();
    let mut train_loss = Vec::with_capacity(config.n_trees);

    let sample_size = ((n as f64) * config.subsample).round().max(1.0) as usize;
    let mut row_pool: Vec<u32> = (0..n as u32).collect();

    for _round in 0..config.n_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - y[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }

        // Row subsample for this round.
        let mut in_sample = vec![false; n];
        if sample_size == n {
            in_sample.fill(true);
        } else {
            row_pool.shuffle(&mut rng);
            for &r in &row_pool[..sample_size] {
                in_sample[r as usize] = true;
            }
        }

        let tree = grow_tree(
            columns,
            &sorted,
            &grad,
            &hess,
            &in_sample,
            config,
            &mut importance,
            feature_names,
        );

        for (i, r) in raw.iter_mut().enumerate() {
            *r += config.learning_rate * tree.predict_row(i, columns);
        }
        trees.push(tree);

        let loss =
            (0..n).map(|i| logistic_loss(sigmoid(raw[i]), y[i])).sum::<f64>() / n as f64;
        train_loss.push(loss);
    }

    Ok(GbmModel {
        version: MODEL_FORMAT_VERSION.to_string(),
        feature_names: feature_names.to_vec(),
        trees,
        base_score,
        learning_rate: config.learning_rate,
        feature_importance: importance,
        train_loss,
    })
}

struct NodeStats {
    g: f64,
    h: f64,
    count: usize,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[allow(clippy::too_many_arguments)]
fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    config: &GbmConfig,
    importance: &mut BTreeMap<String, f64>,
    feature_names: &[String],
) -> Tree {
    let n = grad.len();
    // node_of[row]: index of the tree node the row currently sits in, or -1
    // when the row is out of this round's subsample.
    let mut node_of: Vec<i32> = (0..n).map(|i| if in_sample[i] { 0 } else { -1 }).collect();

    let root_stats = {
        let mut g = 0.0;
        let mut h = 0.0;
        let mut count = 0;
        for i in 0..n {
            if in_sample[i] {
                g += grad[i];
                h += hess[i];
                count += 1;
            }
        }
        NodeStats { g, h, count }
    };

    let mut nodes: Vec<TreeNode> = vec![TreeNode::leaf(leaf_value(root_stats.g, root_stats.h))];
    let mut level_nodes: Vec<(usize, NodeStats)> = vec![(0, root_stats)];

    for _depth in 0..config.max_depth {
        if level_nodes.is_empty() {
            break;
        }
        let node_slot: std::collections::HashMap<usize, usize> = level_nodes
            .iter()
            .enumerate()
            .map(|(slot, (node_id, _))| (*node_id, slot))
            .collect();
        let mut best: Vec<Option<BestSplit>> = (0..level_nodes.len()).map(|_| None).collect();

        for (feature, order) in sorted.iter().enumerate() {
            // Running left-side stats per active node while scanning rows in
            // ascending feature order.
            let mut running: Vec<(f64, f64, usize, f64)> =
                vec![(0.0, 0.0, 0, f64::NAN); level_nodes.len()];
            for &row_u in order {
                let row = row_u as usize;
                let node = node_of[row];
                if node < 0 {
                    continue;
                }
                let Some(&slot) = node_slot.get(&(node as usize)) else {
                    continue;
                };
                let value = columns[feature][row];
                let (gl, hl, cl, prev_value) = running[slot];

                // Candidate split between the previous and current distinct values.
                if cl > 0 && value > prev_value {
                    let stats = &level_nodes[slot].1;
                    let cr = stats.count - cl;
                    if cl >= config.min_leaf && cr >= config.min_leaf {
                        let gr = stats.g - gl;
                        let hr = stats.h - hl;
                        let gain = split_gain(gl, hl, gr, hr, stats.g, stats.h);
                        let better = match &best[slot] {
                            Some(b) => gain > b.gain,
                            None => gain > MIN_GAIN,
                        };
                        if better {
                            best[slot] = Some(BestSplit {
                                gain,
                                feature,
                                threshold: (prev_value + value) / 2.0,
                            });
                        }
                    }
                }
                running[slot] = (gl + grad[row], hl + hess[row], cl + 1, value);
            }
        }

        // Materialize the accepted splits and route rows down a level.
        let mut next_level: Vec<(usize, NodeStats)> = Vec::new();
        let mut split_of_node: std::collections::HashMap<usize, (usize, f64, usize, usize)> =
            std::collections::HashMap::new();
        for (slot, (node_id, stats)) in level_nodes.iter().enumerate() {
            let Some(split) = &best[slot] else { continue };
            let left_id = nodes.len();
            let right_id = nodes.len() + 1;
            nodes.push(TreeNode::leaf(0.0));
            nodes.push(TreeNode::leaf(0.0));
            let node = &mut nodes[*node_id];
            node.is_leaf = false;
            node.feature = split.feature;
            node.threshold = split.threshold;
            node.left = left_id;
            node.right = right_id;
            *importance.get_mut(&feature_names[split.feature]).unwrap() += split.gain;
            split_of_node.insert(*node_id, (split.feature, split.threshold, left_id, right_id));
            let _ = stats;
        }
        if split_of_node.is_empty() {
            break;
        }

        let mut child_stats: std::collections::HashMap<usize, NodeStats> =
            std::collections::HashMap::new();
        for row in 0..n {
            let node = node_of[row];
            if node < 0 {
                continue;
            }
            if let Some(&(feature, threshold, left_id, right_id)) =
                split_of_node.get(&(node as usize))
            {
                let v = columns[feature][row];
                let child = if v.is_nan() || v <= threshold { left_id } else { right_id };
                node_of[row] = child as i32;
                let entry = child_stats.entry(child).or_insert(NodeStats {
                    g: 0.0,
                    h: 0.0,
                    count: 0,
                });
                entry.g += grad[row];
                entry.h += hess[row];
                entry.count += 1;
            }
        }

        // Missing values follow the majority side at fit time.
        for (node_id, (_f, _t, left_id, right_id)) in &split_of_node {
            let lc = child_stats.get(left_id).map_or(0, |s| s.count);
            let rc = child_stats.get(right_id).map_or(0, |s| s.count);
            nodes[*node_id].default_left = lc >= rc;
        }

        let mut children: Vec<usize> = child_stats.keys().copied().collect();
        children.sort_unstable();
        for child in children {
            let stats = child_stats.remove(&child).unwrap();
            nodes[child].leaf_value = leaf_value(stats.g, stats.h);
            next_level.push((child, stats));
        }
        level_nodes = next_level;
    }

    Tree { nodes }
}

fn leaf_value(g: f64, h: f64) -> f64 {
    -g / (h + LAMBDA)
}

fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, g: f64, h: f64) -> f64 {
    0.5 * (gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - g * g / (h + LAMBDA))
}
