//! Per-head probabilities and the mean negative log-likelihood.

use super::real::Real;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// One two-outcome distribution per candidate pair: row `k` is
/// `(p_k(no edge), p_k(edge))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityHeads {
    probs: Vec<[f64; 2]>,
}

impl ProbabilityHeads {
    pub fn new(probs: Vec<[f64; 2]>) -> Result<Self> {
        for (k, p) in probs.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[1] < 0.0 {
                return Err(Error::invalid(format!("head {k} is not a distribution: {p:?}")));
            }
            if (p[0] + p[1] - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("head {k} sums to {}", p[0] + p[1])));
            }
        }
        Ok(Self { probs })
    }

    /// Softmax of each `(logit_0, logit_1)` pair.
    pub fn from_logits(logits: &[[f64; 2]]) -> Self {
        let probs = logits
            .iter()
            .map(|&[a, b]| {
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                [ea / (ea + eb), eb / (ea + eb)]
            })
            .collect();
        Self { probs }
    }

    pub(crate) fn from_flat<R: Real>(flat: &[R]) -> Self {
        Self {
            probs: flat
                .chunks(2)
                .map(|p| [p[0].as_f64(), p[1].as_f64()])
                .collect(),
        }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![[0.5, 0.5]; k],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn head(&self, k: usize) -> [f64; 2] {
        self.probs[k]
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.probs
    }
}

/// Mean of `−ln max(p_k(q_k), floor)` over every head of every sample.
pub fn nll_loss(heads: &[ProbabilityHeads], labels: &[&[bool]]) -> Result<f64> {
    if heads.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            heads.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (h, q) in heads.iter().zip(labels) {
        if h.len() != q.len() {
            return Err(Error::dim(format!("{} heads vs {} label bits", h.len(), q.len())));
        }
        for (p, &bit) in h.rows().iter().zip(q.iter()) {
            total -= p[bit as usize].max(PROB_FLOOR).ln();
        }
        count += q.len();
    }
    if count == 0 {
        return Err(Error::Empty("no heads to score".into()));
    }
    Ok(total / count as f64)
}

/// Loss and its gradient with respect to the logits, from flattened
/// `[sample][head][outcome]` probabilities.
pub(crate) fn nll_from_probs<R: Real>(probs: &[R], labels: &[&[bool]], k: usize) -> Result<(f64, Vec<R>)> {
    let b = labels.len();
    if probs.len() != b * 2 * k {
        return Err(Error::dim(format!(
            "{} probabilities for {b} samples of {k} heads",
            probs.len()
        )));
    }
    if b == 0 || k == 0 {
        return Err(Error::Empty("no heads to score".into()));
    }
    let scale = R::from_f64_lossy(1.0 / (b * k) as f64);
    let floor = R::from_f64_lossy(PROB_FLOOR);
    let mut total = 0.0;
    let mut grad = vec![R::zero(); probs.len()];
    for (s, q) in labels.iter().enumerate() {
        if q.len() != k {
            return Err(Error::dim(format!("label {s} has {} bits, expected {k}", q.len())));
        }
        for (h, &bit) in q.iter().enumerate() {
            let base = (s * k + h) * 2;
            let p = [probs[base], probs[base + 1]];
            let pq = p[bit as usize];
            total -= pq.max(floor).as_f64().ln();
            // d(−ln p_q)/dz_s = p_s − [s = q]; flat where the floor is active.
            if pq >= floor {
                for o in 0..2 {
                    let target = if o == bit as usize { R::one() } else { R::zero() };
                    grad[base + o] = (p[o] - target) * scale;
                }
            }
        }
    }
    Ok((total / (b * k) as f64, grad))
}
