//! Mini-batch training, k-fold cross-validation and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{class_weights, loss_on_tape, LossConfig, LossMode};
use crate::model::{init_model, FeaturizedGraph, Model, ModelConfig};
use crate::nn::{AdamConfig, AdamState, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Graphs per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub threshold: f64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 3e-4,
            batch_size: 32,
            seed: 0,
            loss: LossConfig::default(),
            threshold: 0.5,
            folds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("train.lr", "must be a positive real"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation("train.threshold", "must lie in [0, 1]"));
        }
        if self.folds < 2 {
            return Err(Error::validation("train.folds", "must be >= 2"));
        }
        self.loss.validate()
    }
}

/// Splitmix-style derivation of independent seeds for folds and streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded shuffle, then `k` contiguous folds whose sizes differ by at most
/// one. Returns `(train, test)` index lists, each ascending.
pub fn kfold_split(n_samples: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k-fold needs k >= 2, got {k}")));
    }
    if n_samples < k {
        return Err(Error::InvalidParameter(format!(
            "{n_samples} samples cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n_samples / k, n_samples % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut test = order[start..start + len].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        test.sort_unstable();
        train.sort_unstable();
        folds.push((train, test));
        start += len;
    }
    Ok(folds)
}

fn check_labeled(samples: &[&FeaturizedGraph]) -> Result<()> {
    for (i, g) in samples.iter().enumerate() {
        if g.labels.len() != g.star_len() {
            return Err(Error::validation(format!("samples[{i}]"), "missing star labels"));
        }
    }
    Ok(())
}

/// Trains a fresh model; returns it with the per-epoch mean loss (weighted
/// by star edges). Samples with an empty star are skipped.
pub fn train(samples: &[&FeaturizedGraph], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
    cfg.validate()?;
    let samples: Vec<&FeaturizedGraph> = samples.iter().copied().filter(|g| g.star_len() > 0).collect();
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_labeled(&samples)?;
    let labels: Vec<u8> = samples.iter().flat_map(|g| g.labels.iter().copied()).collect();
    let (w_p, w_n) = class_weights(&labels)?;
    let mut loss_cfg = cfg.loss;
    if loss_cfg.auto_class_weights {
        loss_cfg.w_p = w_p;
        loss_cfg.w_n = w_n;
    }

    let mut model = init_model(model_cfg)?;
    let mut adam = AdamState::new(model.params().tensors(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut edges) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = FeaturizedGraph::batch(chunk.iter().map(|&i| samples[i]));
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let (out, _) = model.forward_on_tape(&mut tape, &bound, &batch)?;
            let loss = loss_on_tape(&mut tape, out.logits, &batch.labels, &loss_cfg)?;
            total += tape.value(loss).item() * batch.labels.len() as f64;
            edges += batch.labels.len();
            let grads = tape.backward(loss)?;
            let g: Vec<Option<&[f64]>> = bound.vars.iter().map(|v| grads.get(*v)).collect();
            adam.step(model.params_mut().tensors_mut().iter_mut(), &g, cfg.lr);
        }
        history.push(total / edges as f64);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(labels: &[u8], predicted: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, _) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// One evaluation: percentages in `[0, 100]`. `roc_auc` is absent when the
/// labels hold a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: Option<f64>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let c = Confusion::from_predictions(labels, &predicted);
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            f1,
            precision,
            recall,
            roc_auc: roc_auc(scores, labels).ok().map(|a| 100.0 * a),
            confusion: c,
        }
    }
}

/// Mean metrics plus the per-fold breakdown; `confusion` sums the folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: Option<f64>,
    pub confusion: Confusion,
    pub folds: Vec<Metrics>,
}

impl MetricsReport {
    pub fn single(m: Metrics) -> Self {
        Self::from_folds(vec![m])
    }

    pub fn from_folds(folds: Vec<Metrics>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let aucs: Vec<f64> = folds.iter().filter_map(|m| m.roc_auc).collect();
        let mut confusion = Confusion::default();
        for m in &folds {
            confusion.add(&m.confusion);
        }
        Self {
            accuracy: mean(|m| m.accuracy),
            f1: mean(|m| m.f1),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            roc_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            confusion,
            folds,
        }
    }
}

/// Mann–Whitney AUC in `[0, 1]`; tied pairs count one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "roc_auc",
            detail: format!("{} scores for {} labels", scores.len(), labels.len()),
        });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps tied average ranks integral
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        let n_pos = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += rank2 * n_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Pooled star-edge scores and labels of a dataset.
pub fn score_dataset(model: &Model, samples: &[&FeaturizedGraph]) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for g in samples.iter().filter(|g| g.star_len() > 0) {
        scores.extend(model.probabilities(g)?);
        labels.extend_from_slice(&g.labels);
    }
    if scores.len() != labels.len() {
        return Err(Error::validation("samples", "missing star labels"));
    }
    Ok((scores, labels))
}

pub fn evaluate(model: &Model, samples: &[&FeaturizedGraph], threshold: f64) -> Result<Metrics> {
    let (scores, labels) = score_dataset(model, samples)?;
    if labels.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(Metrics::from_scores(&scores, &labels, threshold))
}

/// Trains on each fold's training part and evaluates on its held-out part.
/// Fold `k` uses seeds derived from `(seed, k)`, so `jobs > 1` runs folds in
/// parallel without changing any result.
pub fn run_cross_validation(
    samples: &[FeaturizedGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let usable: Vec<&FeaturizedGraph> = samples.iter().filter(|g| g.star_len() > 0).collect();
    let folds = kfold_split(usable.len(), cfg.folds, cfg.seed)?;
    let run_fold = |k: usize| -> Result<Metrics> {
        let (train_idx, test_idx) = &folds[k];
        let train_set: Vec<&FeaturizedGraph> = train_idx.iter().map(|&i| usable[i]).collect();
        let test_set: Vec<&FeaturizedGraph> = test_idx.iter().map(|&i| usable[i]).collect();
        let fold_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, k as u64),
            ..*cfg
        };
        let fold_model = ModelConfig {
            seed: derive_seed(model_cfg.seed, k as u64),
            ..*model_cfg
        };
        let (model, _) = train(&train_set, &fold_model, &fold_cfg)?;
        evaluate(&model, &test_set, cfg.threshold)
    };

    let jobs = jobs.clamp(1, folds.len());
    let results: Vec<Result<Metrics>> = if jobs == 1 {
        (0..folds.len()).map(run_fold).collect()
    } else {
        let mut slots: Vec<Option<Result<Metrics>>> = (0..folds.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run_fold = &run_fold;
                    let n = folds.len();
                    s.spawn(move || (j..n).step_by(jobs).map(|k| (k, run_fold(k))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("fold worker panicked") {
                    slots[k] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every fold ran")).collect()
    };
    let metrics = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_folds(metrics))
}

/// One cross-validation run per loss mode under an identical protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub wbce_fl: MetricsReport,
    pub wbce: MetricsReport,
    pub fl: MetricsReport,
    pub bce: MetricsReport,
}

impl AblationReport {
    pub fn get(&self, mode: LossMode) -> &MetricsReport {
        match mode {
            LossMode::WbceFl => &self.wbce_fl,
            LossMode::Wbce => &self.wbce,
            LossMode::Fl => &self.fl,
            LossMode::Bce => &self.bce,
        }
    }
}

pub fn ablate_losses(
    samples: &[FeaturizedGraph],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<AblationReport> {
    let run = |mode: LossMode| {
        let c = TrainConfig {
            loss: cfg.loss.with_mode(mode),
            ..*cfg
        };
        run_cross_validation(samples, model_cfg, &c, jobs)
    };
    Ok(AblationReport {
        wbce_fl: run(LossMode::WbceFl)?,
        wbce: run(LossMode::Wbce)?,
        fl: run(LossMode::Fl)?,
        bce: run(LossMode::Bce)?,
    })
}
