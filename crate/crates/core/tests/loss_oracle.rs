//! Loss functions against an independent compensated-sum evaluation.

mod common;

use common::oracle::{oracle_focal, oracle_wbce};
use qxg_roi::losses::{combined, focal, loss_from_logits, wbce, LossConfig, LossMode};
use rand::Rng;

#[test]
fn random_batches_match_oracle() {
    let mut rng = common::rng(31);
    for _ in 0..200 {
        let n = rng.random_range(1..64);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let cfg = LossConfig {
            w_p: rng.random_range(0.5..20.0),
            alpha: rng.random_range(0.05..0.99),
            gamma: rng.random_range(0.0..3.0),
            w: rng.random_range(0.0..2.0),
            ..LossConfig::default()
        };
        let e = cfg.clamp_eps;
        let ow = oracle_wbce(&probs, &labels, cfg.w_p, cfg.w_n, e);
        let of = oracle_focal(&probs, &labels, cfg.alpha, cfg.gamma, e);
        assert!((wbce(&probs, &labels, cfg.w_p, cfg.w_n, e).unwrap() - ow).abs() <= 1e-9);
        assert!((focal(&probs, &labels, cfg.alpha, cfg.gamma, e).unwrap() - of).abs() <= 1e-9);
        assert!((combined(&probs, &labels, &cfg).unwrap() - (cfg.w * ow + of)).abs() <= 1e-9);
    }
}

#[test]
fn logit_form_matches_probability_form() {
    let mut rng = common::rng(32);
    for mode in LossMode::ALL {
        let cfg = LossConfig { mode, w_p: 4.0, ..LossConfig::default() };
        let logits: Vec<f64> = (0..40).map(|_| rng.random_range(-8.0..8.0)).collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 5 == 0)).collect();
        let probs: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        let (v, _) = loss_from_logits(&logits, &labels, &cfg).unwrap();
        assert!((v - combined(&probs, &labels, &cfg).unwrap()).abs() <= 1e-9, "{mode:?}");
    }
}

#[test]
fn worked_values() {
    let ln2 = std::f64::consts::LN_2;
    let e = 1e-7;
    assert!((wbce(&[0.8], &[1], 3.0, 1.0, e).unwrap() - 3.0 * -(0.8f64.ln())).abs() <= 1e-9);
    assert!((focal(&[0.5], &[1], 0.95, 0.5, e).unwrap() - 0.95 * 0.5f64.sqrt() * ln2).abs() <= 1e-9);
    assert!((focal(&[0.5], &[0], 0.95, 0.5, e).unwrap() - 0.05 * 0.5f64.sqrt() * ln2).abs() <= 1e-9);
    let cfg = LossConfig { w_p: 3.0, ..LossConfig::default() };
    let want = 0.5 * 3.0 * -(0.8f64.ln()) + 0.95 * 0.2f64.sqrt() * -(0.8f64.ln());
    assert!((combined(&[0.8], &[1], &cfg).unwrap() - want).abs() <= 1e-9);
}
