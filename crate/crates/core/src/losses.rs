//! Weighted binary cross-entropy, focal loss and their weighted sum.
//!
//! Training evaluates every loss from logits in a numerically stable form;
//! the probability-space functions clamp to `[eps, 1 - eps]` and serve
//! reporting and reference checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    WbceFl,
    Wbce,
    Fl,
    Bce,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [LossMode::WbceFl, LossMode::Wbce, LossMode::Fl, LossMode::Bce];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::WbceFl => "wbce_fl",
            LossMode::Wbce => "wbce",
            LossMode::Fl => "fl",
            LossMode::Bce => "bce",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation("loss.mode", format!("unknown loss mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Weight of positive examples in the weighted cross-entropy.
    pub w_p: f64,
    /// Weight of negative examples in the weighted cross-entropy.
    pub w_n: f64,
    /// Re-estimate `w_p`/`w_n` from each training set with [`class_weights`].
    pub auto_class_weights: bool,
    pub alpha: f64,
    pub gamma: f64,
    /// Weight of the cross-entropy term in the combined loss.
    pub w: f64,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::WbceFl,
            w_p: 1.0,
            w_n: 1.0,
            auto_class_weights: true,
            alpha: 0.95,
            gamma: 0.5,
            w: 0.5,
            clamp_eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation(format!("loss.{field}"), msg));
        if !(self.w_p > 0.0 && self.w_p.is_finite()) {
            return bad("w_p", "must be a positive real");
        }
        if !(self.w_n > 0.0 && self.w_n.is_finite()) {
            return bad("w_n", "must be a positive real");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", "must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be >= 0");
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad("w", "must be >= 0");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad("clamp_eps", "must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn with_mode(self, mode: LossMode) -> Self {
        Self { mode, ..self }
    }
}

fn check_batch(n_probs: usize, labels: &[u8]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if n_probs != labels.len() {
        return Err(Error::Shape {
            op: "loss",
            detail: format!("{n_probs} predictions for {} labels", labels.len()),
        });
    }
    Ok(())
}

/// `-(1/N) Σ [w_p y log ŷ + w_n (1-y) log(1-ŷ)]` with `ŷ` clamped.
pub fn wbce(probs: &[f64], labels: &[u8], w_p: f64, w_n: f64, eps: f64) -> Result<f64> {
    check_batch(probs.len(), labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -w_p * p.ln()
            } else {
                -w_n * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `-(1/N) Σ α_t (1 - p_t)^γ log p_t` with `α_t = α` for positives and
/// `1 - α` for negatives.
pub fn focal(probs: &[f64], labels: &[u8], alpha: f64, gamma: f64, eps: f64) -> Result<f64> {
    check_batch(probs.len(), labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            let (pt, at) = if y == 1 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn combined(probs: &[f64], labels: &[u8], cfg: &LossConfig) -> Result<f64> {
    let eps = cfg.clamp_eps;
    match cfg.mode {
        LossMode::WbceFl => Ok(cfg.w * wbce(probs, labels, cfg.w_p, cfg.w_n, eps)?
            + focal(probs, labels, cfg.alpha, cfg.gamma, eps)?),
        LossMode::Wbce => wbce(probs, labels, cfg.w_p, cfg.w_n, eps),
        LossMode::Fl => focal(probs, labels, cfg.alpha, cfg.gamma, eps),
        LossMode::Bce => wbce(probs, labels, 1.0, 1.0, eps),
    }
}

/// `(w_p, w_n) = (min(N_neg / N_pos, 100), 1)`.
pub fn class_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok(((neg as f64 / pos as f64).min(100.0), 1.0))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-sample value and derivative with respect to the logit.
///
/// With `s = ±1` for `y = 1/0` and `u = s·z`: `-log p_t = softplus(-u)` and
/// `1 - p_t = σ(-u)`.
fn sample_terms(z: f64, y: u8, cfg: &LossConfig) -> (f64, f64) {
    let s = if y == 1 { 1.0 } else { -1.0 };
    let u = s * z;
    let nll = softplus(-u);
    let q = sigmoid(-u);

    let wbce_term = |w_p: f64, w_n: f64| {
        let wt = if y == 1 { w_p } else { w_n };
        (wt * nll, -s * wt * q)
    };
    let focal_term = || {
        let at = if y == 1 { cfg.alpha } else { 1.0 - cfg.alpha };
        let qg = q.powf(cfg.gamma);
        let value = at * qg * nll;
        let du = -at * qg * (cfg.gamma * (1.0 - q) * nll + q);
        (value, s * du)
    };

    match cfg.mode {
        LossMode::WbceFl => {
            let (bv, bg) = wbce_term(cfg.w_p, cfg.w_n);
            let (fv, fg) = focal_term();
            (cfg.w * bv + fv, cfg.w * bg + fg)
        }
        LossMode::Wbce => wbce_term(cfg.w_p, cfg.w_n),
        LossMode::Fl => focal_term(),
        LossMode::Bce => wbce_term(1.0, 1.0),
    }
}

/// Mean loss over a batch of logits and its gradient with respect to each logit.
pub fn loss_from_logits(logits: &[f64], labels: &[u8], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_batch(logits.len(), labels)?;
    let n = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(labels.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let (v, g) = sample_terms(z, y, cfg);
        total += v;
        grad.push(g / n);
    }
    Ok((total / n, grad))
}

/// Records the configured loss over `logits` on the tape.
pub fn loss_on_tape(tape: &mut Tape, logits: Var, labels: &[u8], cfg: &LossConfig) -> Result<Var> {
    let (value, grad) = loss_from_logits(tape.value(logits).data(), labels, cfg)?;
    tape.reduce_with_grad(logits, value, grad)
}
