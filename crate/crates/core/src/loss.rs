//! Focal loss and class-balanced weighting.
//!
//! Per-sample focal loss is `(1 - p_t)^gamma * -ln(p_t)`, where `p_t` is the
//! predicted probability of the true class. Class-balanced weights are
//! `(1 - beta) / (1 - beta^n)` for a class with `n` training samples.
//!
//! Losses take softmax probabilities and return the gradient with respect to
//! the pre-softmax logits, which is what `Network::backward` consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Floor applied to `p_t` before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

/// How raw class-balanced weights are rescaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightNorm {
    /// Rescale so the weights average to 1.
    #[default]
    Mean,
    /// Use the raw weights as-is.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub beta: Option<f64>,
    pub class_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub weight_norm: WeightNorm,
}

impl LossConfig {
    pub fn unweighted(gamma: f64) -> Self {
        LossConfig {
            gamma,
            beta: None,
            class_counts: None,
            weight_norm: WeightNorm::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma {} must be >= 0",
                self.gamma
            )));
        }
        if let Some(beta) = self.beta {
            check_beta(beta)?;
            match &self.class_counts {
                Some(c) if c.iter().all(|&n| n >= 1) => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "class-balanced loss needs counts >= 1 for every class".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Per-class weights, or `None` for the unweighted loss.
    pub fn class_weights(&self) -> Result<Option<Vec<f64>>> {
        self.validate()?;
        match (self.beta, &self.class_counts) {
            (Some(beta), Some(counts)) => Ok(Some(class_balanced_weights(
                counts,
                beta,
                self.weight_norm,
            )?)),
            _ => Ok(None),
        }
    }

    pub fn evaluate<T: Scalar>(
        &self,
        probs: &Tensor<T>,
        labels: &[usize],
    ) -> Result<LossOutput<T>> {
        match self.class_weights()? {
            Some(w) => weighted_focal_loss(probs, labels, self.gamma, &w),
            None => focal_loss(probs, labels, self.gamma),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "beta {beta} must lie in [0, 1)"
        )));
    }
    Ok(())
}

/// Batch loss and its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub logits_grad: Tensor<T>,
}

/// `(1 - p)^gamma * -ln(max(p, eps))`.
pub fn focal_term(p: f64, gamma: f64) -> f64 {
    let q = (1.0 - p).max(0.0);
    let focus = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    -focus * p.max(LOG_CLAMP).ln()
}

/// `p * d(focal_term)/dp`, written so it stays finite as `p -> 0` and `p -> 1`.
fn focal_slope(p: f64, gamma: f64) -> f64 {
    let q = (1.0 - p).max(0.0);
    let log_p = p.max(LOG_CLAMP).ln();
    let first = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p * log_p
    };
    let focus = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    // below the clamp the log is constant, so only the focus term varies
    let second = if p < LOG_CLAMP { 0.0 } else { focus };
    first - second
}

fn check_batch<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    if probs.rank() != 2 {
        return Err(Error::Shape(format!(
            "probabilities must be [N, K], got {:?}",
            probs.shape()
        )));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok((n, k))
}

fn weighted_impl<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    gamma: f64,
    weights: Option<&[f64]>,
) -> Result<LossOutput<T>> {
    let (n, k) = check_batch(probs, labels)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} must be >= 0"
        )));
    }
    let mut total = 0.0;
    let mut grad = Tensor::zeros(vec![n, k]);
    for (i, (&label, row)) in labels.iter().zip(probs.data().chunks(k)).enumerate() {
        let w = weights.map_or(1.0, |w| w[label]);
        let p_t = row[label].to_f64();
        total += w * focal_term(p_t, gamma);
        // d p_t / d z_j = p_t (delta_tj - p_j)
        let slope = w * focal_slope(p_t, gamma) / n as f64;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, (gj, &pj)) in g.iter_mut().zip(row).enumerate() {
            let delta = if j == label { 1.0 } else { 0.0 };
            *gj = T::from_f64(slope * (delta - pj.to_f64()));
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossOutput {
        loss,
        logits_grad: grad,
    })
}

/// Mean focal loss over the batch.
pub fn focal_loss<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    gamma: f64,
) -> Result<LossOutput<T>> {
    weighted_impl(probs, labels, gamma, None)
}

/// Focal loss with each sample scaled by the weight of its true class, then
/// averaged over the batch size.
pub fn weighted_focal_loss<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    gamma: f64,
    weights: &[f64],
) -> Result<LossOutput<T>> {
    let k = probs.shape().get(1).copied().unwrap_or(0);
    if weights.len() != k {
        return Err(Error::Shape(format!(
            "{} weights for {k} classes",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "class weights must be finite and >= 0".into(),
        ));
    }
    weighted_impl(probs, labels, gamma, Some(weights))
}

/// Un-normalised class-balanced weights `(1 - beta) / (1 - beta^n)`.
pub fn class_balanced_raw_weights(class_counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if class_counts.is_empty() || class_counts.contains(&0) {
        return Err(Error::InvalidArgument(
            "class counts must all be >= 1".into(),
        ));
    }
    Ok(class_counts
        .iter()
        .map(|&n| {
            if beta == 0.0 {
                return 1.0;
            }
            // 1 - beta^n without cancellation
            let denom = -(n as f64 * beta.ln()).exp_m1();
            (1.0 - beta) / denom
        })
        .collect())
}

pub fn class_balanced_weights(
    class_counts: &[usize],
    beta: f64,
    norm: WeightNorm,
) -> Result<Vec<f64>> {
    let raw = class_balanced_raw_weights(class_counts, beta)?;
    Ok(match norm {
        WeightNorm::None => raw,
        WeightNorm::Mean if raw.iter().all(|&w| w == raw[0]) => vec![1.0; raw.len()],
        WeightNorm::Mean => {
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            raw.iter().map(|w| w / mean).collect()
        }
    })
}
