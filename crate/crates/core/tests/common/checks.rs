//! Model-level checks shared by the invariant tests and the acceptance suite.

use qxg_roi::losses::{loss_from_logits, loss_on_tape, LossConfig, LossMode};
use qxg_roi::model::{init_model, FeaturizedGraph, Model};
use qxg_roi::nn::Tape;
use rand::Rng;

use super::{permute_graph, random_graph, rng, small_model_config};

pub fn grad_loss_config() -> LossConfig {
    LossConfig {
        mode: LossMode::WbceFl,
        w_p: 3.0,
        w_n: 1.0,
        auto_class_weights: false,
        ..LossConfig::default()
    }
}

fn loss_value(model: &Model, g: &FeaturizedGraph, cfg: &LossConfig) -> f64 {
    let logits = model.forward(g).unwrap();
    loss_from_logits(&logits, &g.labels, cfg).unwrap().0
}

/// Denominator floor of the gradient comparison. With `h = 1e-6` a central
/// difference carries about `1e-10` of rounding noise, so gradients far below
/// this floor are compared absolutely (to `1e-9` at the `1e-5` bound).
pub const GRAD_FLOOR: f64 = 1e-4;

/// Largest relative gap between the analytic gradient and a central
/// difference with step `h`, over every parameter of a small random model.
/// Gaps are measured relative to `max(|analytic|, |numeric|, floor)`.
pub struct GradientCheck {
    pub params: usize,
    pub nodes: usize,
    pub max_rel_err: f64,
    /// Parameter name, element, analytic and numeric value at the worst gap.
    pub worst: (String, usize, f64, f64),
}

pub fn gradient_check(seed: u64, h: f64, floor: f64) -> GradientCheck {
    let mut r = rng(seed);
    let nodes = r.random_range(4..=8);
    let g = random_graph(&mut r, nodes);
    let cfg = grad_loss_config();
    let mut model = init_model(&small_model_config(seed)).unwrap();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let (out, _) = model.forward_on_tape(&mut tape, &bound, &g).unwrap();
    let loss = loss_on_tape(&mut tape, out.logits, &g.labels, &cfg).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = bound
        .vars
        .iter()
        .zip(model.params().tensors())
        .map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst: f64 = 0.0;
    let mut at = (String::new(), 0, 0.0, 0.0);
    for (p, a) in analytic.iter().enumerate() {
        for (i, &ai) in a.iter().enumerate() {
            let x = model.params().get(p).data()[i];
            model.params_mut().get_mut(p).data_mut()[i] = x + h;
            let up = loss_value(&model, &g, &cfg);
            model.params_mut().get_mut(p).data_mut()[i] = x - h;
            let down = loss_value(&model, &g, &cfg);
            model.params_mut().get_mut(p).data_mut()[i] = x;
            let num = (up - down) / (2.0 * h);
            let rel = (ai - num).abs() / ai.abs().max(num.abs()).max(floor);
            if rel > worst {
                worst = rel;
                at = (model.params().name(p).to_owned(), i, ai, num);
            }
        }
    }
    GradientCheck {
        params: model.params().count(),
        nodes,
        max_rel_err: worst,
        worst: at,
    }
}

/// Largest `|Σ α − 1|` over every node, head and layer.
pub fn attention_sum_error(model: &Model, g: &FeaturizedGraph) -> f64 {
    let heads = model.config().heads;
    let mut worst: f64 = 0.0;
    for alpha in model.attention(g).unwrap() {
        let mut sums = vec![0.0; g.num_nodes() * heads];
        for (k, &d) in g.dst.iter().enumerate() {
            for h in 0..heads {
                sums[d * heads + h] += alpha[k * heads + h];
            }
        }
        worst = sums.iter().fold(worst, |w, s| w.max((s - 1.0).abs()));
    }
    worst
}

/// Largest logit change under a random relabeling of `g`.
pub fn permutation_error(model: &Model, g: &FeaturizedGraph, seed: u64) -> f64 {
    let base = model.forward(g).unwrap();
    let (p, order) = permute_graph(&mut rng(seed), g);
    let moved = model.forward(&p).unwrap();
    order.iter().zip(&moved).map(|(&s, m)| (base[s] - m).abs()).fold(0.0, f64::max)
}

/// Largest gap between batched logits and the per-graph logits.
pub fn batching_error(model: &Model, parts: &[FeaturizedGraph]) -> f64 {
    let batched = model.forward(&FeaturizedGraph::batch(parts)).unwrap();
    let single: Vec<f64> = parts.iter().flat_map(|g| model.forward(g).unwrap()).collect();
    assert_eq!(batched.len(), single.len());
    batched.iter().zip(&single).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Scene generation, graph building and cross-validation of a tiny model;
/// returns the report JSON.
pub fn tiny_pipeline_report(seed: u64) -> String {
    use qxg_roi::experiment::{cross_validate, ExperimentConfig};
    use qxg_roi::qxg::build_samples;
    use qxg_roi::synth::{generate_synthetic_dataset, SynthParams};

    let mut cfg = ExperimentConfig {
        seed,
        synth: SynthParams { n_scenes: 12, objects_min: 3, objects_max: 6, ..SynthParams::default() },
        model: small_model_config(0),
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = 3;
    cfg.train.folds = 3;
    let scenes = generate_synthetic_dataset(cfg.seed, &cfg.synth).unwrap();
    let samples: Vec<FeaturizedGraph> = build_samples(&scenes, cfg.window, &cfg.calculi)
        .unwrap()
        .iter()
        .map(FeaturizedGraph::from_labeled)
        .collect();
    cross_validate(&cfg, &samples, 1).unwrap().to_json_string()
}
