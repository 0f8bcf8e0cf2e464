//! Multi-label losses over logits with analytic gradients.
//!
//! Labels are `+1` (positive) / `-1` (negative) per class. Every loss here
//! takes one sample's logits `s` and labels `y` and returns a scalar; the
//! gradient functions return `dL/ds`.
//!
//! * LSE-Sign: `log(1 + sum_i exp(-y_i s_i))`, a smooth maximum over the
//!   per-class margins whose gradient is a softmax over all classes.
//! * BCE, weighted BCE and focal loss: independent per-class terms averaged
//!   over classes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::LabelMatrix;
use crate::error::{Error, Result};
use crate::numdiff::central_difference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    LseSign,
    Bce,
    Wbce,
    Focal,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::LseSign, LossKind::Bce, LossKind::Wbce, LossKind::Focal];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::LseSign => "lse-sign",
            LossKind::Bce => "bce",
            LossKind::Wbce => "wbce",
            LossKind::Focal => "focal",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}` (lse-sign, bce, wbce, focal)")))
    }
}

/// Per-class positive / negative counts over a training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl ClassStats {
    pub fn from_labels(labels: &LabelMatrix) -> Self {
        let c = labels.cols();
        let mut positives = vec![0; c];
        for r in 0..labels.rows() {
            for (p, &y) in positives.iter_mut().zip(labels.row(r)) {
                if y == 1 {
                    *p += 1;
                }
            }
        }
        let negatives = positives.iter().map(|p| labels.rows() - p).collect();
        Self {
            positives,
            negatives,
        }
    }

    pub fn classes(&self) -> usize {
        self.positives.len()
    }

    /// `N-/N+` per class; 1 for classes without positives.
    pub fn positive_weights(&self) -> Vec<f64> {
        self.positives
            .iter()
            .zip(&self.negatives)
            .map(|(&p, &n)| if p == 0 { 1.0 } else { n as f64 / p as f64 })
            .collect()
    }
}

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

/// A loss ready to evaluate, with any data-dependent state attached.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    LseSign,
    Bce,
    /// Per-class multiplier on the positive term.
    WeightedBce(Vec<f64>),
    Focal { gamma: f64, alpha: f64 },
}

impl Loss {
    /// Builds the loss for `kind`; weighted BCE needs training-split stats.
    pub fn new(kind: LossKind, stats: Option<&ClassStats>) -> Result<Self> {
        Ok(match kind {
            LossKind::LseSign => Loss::LseSign,
            LossKind::Bce => Loss::Bce,
            LossKind::Wbce => Loss::WeightedBce(
                stats
                    .ok_or_else(|| Error::Config("weighted BCE needs class statistics".into()))?
                    .positive_weights(),
            ),
            LossKind::Focal => Loss::Focal {
                gamma: FOCAL_GAMMA,
                alpha: FOCAL_ALPHA,
            },
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Loss::LseSign => LossKind::LseSign,
            Loss::Bce => LossKind::Bce,
            Loss::WeightedBce(_) => LossKind::Wbce,
            Loss::Focal { .. } => LossKind::Focal,
        }
    }

    pub fn value(&self, s: &[f64], y: &[i8]) -> Result<f64> {
        match self {
            Loss::LseSign => lse_sign_loss(s, y),
            Loss::Bce => bce_loss(s, y),
            Loss::WeightedBce(w) => weighted_bce_from_weights(s, y, w).map(|(v, _)| v),
            Loss::Focal { gamma, alpha } => focal_loss(s, y, *gamma, *alpha),
        }
    }

    pub fn grad(&self, s: &[f64], y: &[i8]) -> Result<Vec<f64>> {
        self.value_and_grad(s, y).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, s: &[f64], y: &[i8]) -> Result<(f64, Vec<f64>)> {
        match self {
            Loss::LseSign => lse_sign(s, y),
            Loss::Bce => Ok((bce_loss(s, y)?, bce_grad(s, y)?)),
            Loss::WeightedBce(w) => weighted_bce_from_weights(s, y, w),
            Loss::Focal { gamma, alpha } => focal(s, y, *gamma, *alpha),
        }
    }
}

fn check(s: &[f64], y: &[i8]) -> Result<()> {
    if s.len() != y.len() {
        return Err(Error::dims("logits", s.len(), "labels", y.len()));
    }
    if s.is_empty() {
        return Err(Error::Config("loss needs at least one class".into()));
    }
    if let Some(k) = y.iter().position(|&v| v != 1 && v != -1) {
        return Err(Error::BadLabel {
            index: k,
            value: y[k] as i64,
        });
    }
    Ok(())
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and gradient in one pass. With `t_i = -y_i s_i` and
/// `m = max(0, max_i t_i)`, the loss is `m + log(exp(-m) + sum exp(t_i - m))`.
fn lse_sign(s: &[f64], y: &[i8]) -> Result<(f64, Vec<f64>)> {
    check(s, y)?;
    let t: Vec<f64> = s.iter().zip(y).map(|(&si, &yi)| -(yi as f64) * si).collect();
    let m = t.iter().copied().fold(0.0, f64::max);
    let e: Vec<f64> = t.iter().map(|&ti| (ti - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let denom = (-m).exp() + sum;
    let loss = if m == 0.0 { (1.0 + sum).ln() } else { m + denom.ln() };
    let grad = e
        .iter()
        .zip(y)
        .map(|(&ei, &yi)| -(yi as f64) * ei / denom)
        .collect();
    Ok((loss, grad))
}

pub fn lse_sign_loss(s: &[f64], y: &[i8]) -> Result<f64> {
    lse_sign(s, y).map(|(l, _)| l)
}

/// `g_i = -y_i exp(-y_i s_i) / (1 + sum_j exp(-y_j s_j))`.
pub fn lse_sign_grad(s: &[f64], y: &[i8]) -> Result<Vec<f64>> {
    lse_sign(s, y).map(|(_, g)| g)
}

/// Mean over classes of the logistic loss; `-log sigmoid(y s)` per class.
pub fn bce_loss(s: &[f64], y: &[i8]) -> Result<f64> {
    check(s, y)?;
    let c = s.len() as f64;
    Ok(s.iter().zip(y).map(|(&si, &yi)| softplus(-(yi as f64) * si)).sum::<f64>() / c)
}

pub fn bce_grad(s: &[f64], y: &[i8]) -> Result<Vec<f64>> {
    check(s, y)?;
    let c = s.len() as f64;
    Ok(s.iter()
        .zip(y)
        .map(|(&si, &yi)| {
            let yf = yi as f64;
            -yf * sigmoid(-yf * si) / c
        })
        .collect())
}

/// BCE with the positive-class term of class `i` scaled by `N-_i / N+_i`.
pub fn weighted_bce_loss(s: &[f64], y: &[i8], stats: &ClassStats) -> Result<f64> {
    weighted_bce_from_weights(s, y, &stats.positive_weights()).map(|(v, _)| v)
}

pub fn weighted_bce_grad(s: &[f64], y: &[i8], stats: &ClassStats) -> Result<Vec<f64>> {
    weighted_bce_from_weights(s, y, &stats.positive_weights()).map(|(_, g)| g)
}

fn weighted_bce_from_weights(s: &[f64], y: &[i8], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(s, y)?;
    if w.len() != s.len() {
        return Err(Error::dims("class weights", w.len(), "logits", s.len()));
    }
    let c = s.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(s.len());
    for ((&si, &yi), &wi) in s.iter().zip(y).zip(w) {
        let yf = yi as f64;
        let k = if yi == 1 { wi } else { 1.0 };
        loss += k * softplus(-yf * si);
        grad.push(-k * yf * sigmoid(-yf * si) / c);
    }
    Ok((loss / c, grad))
}

/// Mean over classes of `-alpha_t (1 - p_t)^gamma log p_t`.
pub fn focal_loss(s: &[f64], y: &[i8], gamma: f64, alpha: f64) -> Result<f64> {
    focal(s, y, gamma, alpha).map(|(v, _)| v)
}

pub fn focal_grad(s: &[f64], y: &[i8], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    focal(s, y, gamma, alpha).map(|(_, g)| g)
}

fn focal(s: &[f64], y: &[i8], gamma: f64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    check(s, y)?;
    let c = s.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(s.len());
    for (&si, &yi) in s.iter().zip(y) {
        let yf = yi as f64;
        let z = yf * si;
        let alpha_t = if yi == 1 { alpha } else { 1.0 - alpha };
        let p = sigmoid(z);
        let q = sigmoid(-z); // 1 - p_t
        let nll = softplus(-z); // -log p_t
        let modulator = q.powf(gamma);
        loss += alpha_t * modulator * nll;
        // dq/dz = -p q and dnll/dz = -q
        let d_dz = -alpha_t * modulator * (gamma * p * nll + q);
        grad.push(yf * d_dz / c);
    }
    Ok((loss / c, grad))
}

/// Outcome of [`gradcheck`] for one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub trials: usize,
    pub max_classes: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub max_rel_err: f64,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} trials={:<6} c_max={:<4} eps={:<8e} seed={:<6} max_rel_err={:.3e}",
            self.loss.name(),
            self.trials,
            self.max_classes,
            self.epsilon,
            self.seed,
            self.max_rel_err
        )
    }
}

/// Compares analytic logit gradients with central differences on random
/// instances. Logits are drawn from `[-4, 4]`, labels uniformly from
/// `{+1, -1}`, and C uniformly from `1..=max_classes`. The error of a trial
/// is `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)` in the
/// Euclidean norm.
pub fn gradcheck(
    kind: LossKind,
    trials: usize,
    max_classes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    if max_classes == 0 {
        return Err(Error::Config("gradcheck needs C >= 1".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let c = rng.random_range(1..=max_classes);
        let s: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y: Vec<i8> = (0..c).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        let loss = match kind {
            LossKind::Wbce => {
                let n = 100;
                let positives: Vec<usize> = (0..c).map(|_| rng.random_range(0..=n)).collect();
                let negatives = positives.iter().map(|p| n - p).collect();
                Loss::new(
                    kind,
                    Some(&ClassStats {
                        positives,
                        negatives,
                    }),
                )?
            }
            _ => Loss::new(kind, None)?,
        };
        let analytic = loss.grad(&s, &y)?;
        let numeric = central_difference(|p| loss.value(p, &y).expect("valid instance"), &s, epsilon);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradcheckReport {
        loss: kind,
        trials,
        max_classes,
        epsilon,
        seed,
        max_rel_err: worst,
    })
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = crate::matrix::norm(a).max(crate::matrix::norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
