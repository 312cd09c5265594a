//! Context-free baselines: each ego-star pair becomes one row of seven
//! categorical features (the six relation codes plus the neighbor's type),
//! classified by AdaBoost over decision stumps or by a random forest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeaturizedGraph;
use crate::qxg::EDGE_FEATURE_CARDINALITIES;
use crate::scene::ObjectType;
use crate::train::{derive_seed, kfold_split, Metrics, MetricsReport};

pub const ROW_FEATURES: usize = 7;

/// Category count of each row feature.
pub const ROW_CARDINALITIES: [usize; ROW_FEATURES] = [
    EDGE_FEATURE_CARDINALITIES[0],
    EDGE_FEATURE_CARDINALITIES[1],
    EDGE_FEATURE_CARDINALITIES[2],
    EDGE_FEATURE_CARDINALITIES[3],
    EDGE_FEATURE_CARDINALITIES[4],
    EDGE_FEATURE_CARDINALITIES[5],
    ObjectType::COUNT,
];

/// One ego-star pair. The relation codes are seen from the ego.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub features: [u8; ROW_FEATURES],
    pub label: u8,
}

/// One row per star pair, ordered by sample and then neighbor.
pub fn flatten_dataset<'a>(samples: impl IntoIterator<Item = &'a FeaturizedGraph>) -> Vec<EdgeRow> {
    let mut rows = Vec::new();
    for g in samples {
        for (s, (&e, &j)) in g.star_edges.iter().zip(&g.star_neighbors).enumerate() {
            let c = g.edge_codes[e];
            rows.push(EdgeRow {
                features: [
                    c[0] as u8,
                    c[1] as u8,
                    c[2] as u8,
                    c[3] as u8,
                    c[4] as u8,
                    c[5] as u8,
                    g.node_types[j] as u8,
                ],
                label: g.labels.get(s).copied().unwrap_or(0),
            });
        }
    }
    rows
}

fn check_rows(rows: &[EdgeRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("baseline training rows"));
    }
    for (i, r) in rows.iter().enumerate() {
        if let Some(f) = (0..ROW_FEATURES).find(|&f| r.features[f] as usize >= ROW_CARDINALITIES[f]) {
            return Err(Error::validation(
                format!("rows[{i}].features[{f}]"),
                format!("code {} exceeds cardinality {}", r.features[f], ROW_CARDINALITIES[f]),
            ));
        }
    }
    let pos = rows.iter().filter(|r| r.label == 1).count();
    if pos == 0 || pos == rows.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Votes `polarity` when the feature falls in `categories`, else the opposite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub categories: Vec<u8>,
    /// `1` or `-1`.
    pub polarity: i8,
    pub weight: f64,
}

impl Stump {
    pub fn vote(&self, row: &EdgeRow) -> i8 {
        if self.categories.contains(&row.features[self.feature]) {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stumps: Vec<Stump>,
}

fn sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Minimum-weighted-error stump on one feature: each category votes for the
/// class holding more weight in it. The set is kept a non-empty proper
/// subset of the categories that occur.
fn best_stump_on(feature: usize, rows: &[EdgeRow], w: &[f64]) -> Option<(f64, Stump)> {
    let card = ROW_CARDINALITIES[feature];
    let mut pos = vec![0.0; card];
    let mut neg = vec![0.0; card];
    let mut seen = vec![false; card];
    for (r, &wi) in rows.iter().zip(w) {
        let c = r.features[feature] as usize;
        seen[c] = true;
        if r.label == 1 {
            pos[c] += wi;
        } else {
            neg[c] += wi;
        }
    }
    let present: Vec<usize> = (0..card).filter(|&c| seen[c]).collect();
    if present.len() < 2 {
        return None;
    }
    let mut set: Vec<bool> = (0..card).map(|c| pos[c] > neg[c]).collect();
    let chosen = present.iter().filter(|&&c| set[c]).count();
    if chosen == 0 || chosen == present.len() {
        // flip the least decided category so both branches are used
        let c = *present
            .iter()
            .min_by(|&&a, &&b| (pos[a] - neg[a]).abs().total_cmp(&(pos[b] - neg[b]).abs()))
            .expect("at least two categories");
        set[c] = !set[c];
    }
    let err: f64 = (0..card).map(|c| if set[c] { neg[c] } else { pos[c] }).sum();
    let categories = (0..card).filter(|&c| set[c]).map(|c| c as u8).collect();
    Some((
        err,
        Stump {
            feature,
            categories,
            polarity: 1,
            weight: 0.0,
        },
    ))
}

/// Discrete AdaBoost. Stops early on a perfect stump or when no stump beats
/// chance.
pub fn train_adaboost(rows: &[EdgeRow], rounds: usize) -> Result<AdaBoostModel> {
    check_rows(rows)?;
    let n = rows.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut model = AdaBoostModel::default();
    for _ in 0..rounds {
        let best = (0..ROW_FEATURES)
            .filter_map(|f| best_stump_on(f, rows, &w))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((err, mut stump)) = best else { break };
        if err >= 0.5 {
            break;
        }
        let perfect = err <= 1e-12;
        let e = err.max(1e-10);
        stump.weight = 0.5 * ((1.0 - e) / e).ln();
        for (wi, r) in w.iter_mut().zip(rows) {
            *wi *= (-stump.weight * sign(r.label) * f64::from(stump.vote(r))).exp();
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        model.stumps.push(stump);
        if perfect {
            break;
        }
    }
    Ok(model)
}

impl AdaBoostModel {
    /// Weighted share of stump votes for class 1, in `[0, 1]`.
    pub fn score(&self, row: &EdgeRow) -> f64 {
        let total: f64 = self.stumps.iter().map(|s| s.weight).sum();
        if total <= 0.0 {
            return 0.5;
        }
        let yes: f64 = self.stumps.iter().filter(|s| s.vote(row) == 1).map(|s| s.weight).sum();
        yes / total
    }

    /// `(1/n) Σ exp(-y F(x))` of the first `k` stumps; an upper bound on the
    /// training error that AdaBoost never increases.
    pub fn exponential_loss(&self, rows: &[EdgeRow], k: usize) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|r| {
                let f: f64 = self.stumps[..k].iter().map(|s| s.weight * f64::from(s.vote(r))).sum();
                (-sign(r.label) * f).exp()
            })
            .sum();
        total / rows.len() as f64
    }
}

pub fn predict_adaboost(model: &AdaBoostModel, rows: &[EdgeRow]) -> (Vec<f64>, Vec<u8>) {
    let scores: Vec<f64> = rows.iter().map(|r| model.score(r)).collect();
    let labels = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
    (scores, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        negatives: u32,
        positives: u32,
    },
    /// Rows with `features[feature] == category` go to `matched`.
    Split {
        feature: usize,
        category: u8,
        matched: usize,
        rest: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Seed of this tree's bootstrap sample and feature draws.
    pub seed: u64,
}

impl ForestTree {
    /// Majority class of the leaf reached by `row`; ties vote 0.
    pub fn vote(&self, row: &EdgeRow) -> u8 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { negatives, positives } => return u8::from(positives > negatives),
                TreeNode::Split {
                    feature,
                    category,
                    matched,
                    rest,
                } => k = if row.features[*feature] == *category { *matched } else { *rest },
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub config: ForestConfig,
    pub trees: Vec<ForestTree>,
}

fn gini(neg: f64, pos: f64) -> f64 {
    let n = neg + pos;
    if n == 0.0 {
        0.0
    } else {
        1.0 - (neg / n).powi(2) - (pos / n).powi(2)
    }
}

/// Features tried at each split: ⌈√7⌉.
pub const FEATURES_PER_SPLIT: usize = 3;

fn bootstrap(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

struct TreeBuilder<'a> {
    rows: &'a [EdgeRow],
    cfg: ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| self.rows[i].label == 1).count();
        let neg = idx.len() - pos;
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            negatives: neg as u32,
            positives: pos as u32,
        });
        if depth >= self.cfg.max_depth || pos == 0 || neg == 0 || idx.len() < 2 * self.cfg.min_leaf {
            return slot;
        }
        // partial Fisher-Yates draw of the candidate features
        let mut features: Vec<usize> = (0..ROW_FEATURES).collect();
        for i in 0..FEATURES_PER_SPLIT {
            let j = self.rng.random_range(i..ROW_FEATURES);
            features.swap(i, j);
        }
        let parent = gini(neg as f64, pos as f64) * idx.len() as f64;
        let mut best: Option<(f64, usize, u8)> = None;
        for &f in &features[..FEATURES_PER_SPLIT] {
            let card = ROW_CARDINALITIES[f];
            let mut counts = vec![(0usize, 0usize); card];
            for &i in &idx {
                let r = &self.rows[i];
                let c = &mut counts[r.features[f] as usize];
                if r.label == 1 {
                    c.1 += 1;
                } else {
                    c.0 += 1;
                }
            }
            for (cat, &(cn, cp)) in counts.iter().enumerate() {
                let m = cn + cp;
                if m < self.cfg.min_leaf || idx.len() - m < self.cfg.min_leaf || m == 0 || m == idx.len() {
                    continue;
                }
                let (rn, rp) = (neg - cn, pos - cp);
                let impurity = gini(cn as f64, cp as f64) * m as f64 + gini(rn as f64, rp as f64) * (rn + rp) as f64;
                if impurity < parent - 1e-12 && best.is_none_or(|b| impurity < b.0) {
                    best = Some((impurity, f, cat as u8));
                }
            }
        }
        let Some((_, feature, category)) = best else {
            return slot;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.rows[i].features[feature] == category);
        let matched = self.grow(left, depth + 1);
        let rest = self.grow(right, depth + 1);
        self.nodes[slot] = TreeNode::Split {
            feature,
            category,
            matched,
            rest,
        };
        slot
    }
}

pub fn train_random_forest(rows: &[EdgeRow], cfg: &ForestConfig) -> Result<RandomForestModel> {
    check_rows(rows)?;
    if cfg.n_trees == 0 {
        return Err(Error::validation("forest.n_trees", "must be >= 1"));
    }
    if cfg.min_leaf == 0 {
        return Err(Error::validation("forest.min_leaf", "must be >= 1"));
    }
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let seed = derive_seed(cfg.seed, t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = bootstrap(rows.len(), &mut rng);
            let mut b = TreeBuilder {
                rows,
                cfg: *cfg,
                rng,
                nodes: Vec::new(),
            };
            b.grow(idx, 0);
            ForestTree { nodes: b.nodes, seed }
        })
        .collect();
    Ok(RandomForestModel { config: *cfg, trees })
}

impl RandomForestModel {
    /// Share of trees voting for class 1.
    pub fn score(&self, row: &EdgeRow) -> f64 {
        let yes = self.trees.iter().filter(|t| t.vote(row) == 1).count();
        yes as f64 / self.trees.len() as f64
    }

    /// Accuracy of each training row against the trees that did not draw it
    /// in their bootstrap sample; `None` if every row was drawn everywhere.
    pub fn oob_accuracy(&self, rows: &[EdgeRow]) -> Option<f64> {
        let mut yes = vec![0usize; rows.len()];
        let mut votes = vec![0usize; rows.len()];
        for t in &self.trees {
            let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
            let mut drawn = vec![false; rows.len()];
            for i in bootstrap(rows.len(), &mut rng) {
                drawn[i] = true;
            }
            for (i, r) in rows.iter().enumerate().filter(|(i, _)| !drawn[*i]) {
                votes[i] += 1;
                yes[i] += usize::from(t.vote(r) == 1);
            }
        }
        let (mut correct, mut counted) = (0usize, 0usize);
        for (i, r) in rows.iter().enumerate() {
            if votes[i] > 0 {
                counted += 1;
                let label = u8::from(2 * yes[i] >= votes[i]);
                correct += usize::from(label == r.label);
            }
        }
        (counted > 0).then(|| correct as f64 / counted as f64)
    }
}

pub fn predict_forest(model: &RandomForestModel, rows: &[EdgeRow]) -> (Vec<f64>, Vec<u8>) {
    let scores: Vec<f64> = rows.iter().map(|r| model.score(r)).collect();
    let labels = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
    (scores, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub adaboost_rounds: usize,
    pub forest: ForestConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            adaboost_rounds: 50,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub adaboost: MetricsReport,
    pub random_forest: MetricsReport,
}

/// Both baselines under the same sample-level folds as the graph model
/// (`kfold_split(n, folds, seed)` over samples with a non-empty star).
pub fn run_baseline_cv(
    samples: &[FeaturizedGraph],
    cfg: &BaselineConfig,
    folds: usize,
    seed: u64,
    threshold: f64,
) -> Result<BaselineReport> {
    let usable: Vec<&FeaturizedGraph> = samples.iter().filter(|g| g.star_len() > 0).collect();
    let splits = kfold_split(usable.len(), folds, seed)?;
    let mut ada = Vec::with_capacity(folds);
    let mut forest = Vec::with_capacity(folds);
    for (k, (train_idx, test_idx)) in splits.iter().enumerate() {
        let train_rows = flatten_dataset(train_idx.iter().map(|&i| usable[i]));
        let test_rows = flatten_dataset(test_idx.iter().map(|&i| usable[i]));
        let labels: Vec<u8> = test_rows.iter().map(|r| r.label).collect();

        let model = train_adaboost(&train_rows, cfg.adaboost_rounds)?;
        let (scores, _) = predict_adaboost(&model, &test_rows);
        ada.push(Metrics::from_scores(&scores, &labels, threshold));

        let fc = ForestConfig {
            seed: derive_seed(cfg.forest.seed, k as u64),
            ..cfg.forest
        };
        let model = train_random_forest(&train_rows, &fc)?;
        let (scores, _) = predict_forest(&model, &test_rows);
        forest.push(Metrics::from_scores(&scores, &labels, threshold));
    }
    Ok(BaselineReport {
        adaboost: MetricsReport::from_folds(ada),
        random_forest: MetricsReport::from_folds(forest),
    })
}
