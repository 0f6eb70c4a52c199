//! Sequence cross-entropy and the supervised character contrastive loss.

use serde::{Deserialize, Serialize};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over masked rows of `−log softmax(logits)[target]`.
///
/// `logits` may have any shape whose last axis is the vocabulary; `targets` and
/// `mask` index the flattened rows.
pub fn ce_loss(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
    let v = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::Dimension("ce_loss on a scalar".into()))?;
    let rows = logits.numel() / v;
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Dimension(format!(
            "ce_loss: {rows} logit rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract("ce_loss with an empty mask".into()));
    }
    if let Some(t) = targets.iter().zip(mask).find(|(&t, &m)| m && t >= v) {
        return Err(Error::Data(format!("target id {} outside vocabulary of {v}", t.0)));
    }
    let x = logits.data();
    let mut probs = vec![0.0; rows * v];
    let mut total = 0.0;
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let row = &x[r * v..(r + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|a| (a - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[targets[r]];
        for c in 0..v {
            probs[r * v + c] = (row[c] - lse).exp();
        }
    }
    let n = count as f64;
    let targets = targets.to_vec();
    let mask = mask.to_vec();
    Ok(Tensor::from_op(
        vec![],
        vec![total / n],
        vec![logits.clone()],
        Box::new(move |_, g| {
            let s = g[0] / n;
            let mut gx = vec![0.0; rows * v];
            for r in 0..rows {
                if !mask[r] {
                    continue;
                }
                for c in 0..v {
                    gx[r * v + c] = s * probs[r * v + c];
                }
                gx[r * v + targets[r]] -= s;
            }
            vec![Some(gx)]
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcOptions {
    pub tau: f64,
    /// Let PAD positions join anchors, positives and negatives.
    pub include_pad: bool,
    /// Sum over anchors instead of averaging over contributing anchors.
    pub raw_sum: bool,
}

impl Default for CcOptions {
    fn default() -> Self {
        Self {
            tau: 0.1,
            include_pad: false,
            raw_sum: false,
        }
    }
}

/// Positions that take part in the contrastive loss given ground-truth `labels`.
pub fn cc_valid(labels: &[usize], include_pad: bool) -> Vec<bool> {
    labels.iter().map(|&l| include_pad || l != PAD).collect()
}

/// Supervised contrastive loss over the rows of `features` (`[..., d]`, unit norm).
///
/// For each valid anchor `i` with at least one positive, contributes
/// `−(1/N_p) Σ_{p∈P(i)} log( exp(x_i·x_p/τ) / Σ_{j≠i} exp(x_i·x_j/τ) )`, where `j`
/// ranges over valid rows. Rows whose feature vector is exactly zero are dropped.
pub fn cc_loss(features: &Tensor, labels: &[usize], valid: &[bool], opts: &CcOptions) -> Result<Tensor> {
    if !(opts.tau > 0.0) || !opts.tau.is_finite() {
        return Err(Error::Param(format!("temperature must be positive, got {}", opts.tau)));
    }
    let d = *features
        .shape()
        .last()
        .ok_or_else(|| Error::Dimension("cc_loss on a scalar".into()))?;
    let rows = features.numel() / d;
    if labels.len() != rows || valid.len() != rows {
        return Err(Error::Dimension(format!(
            "cc_loss: {rows} feature rows, {} labels, {} flags",
            labels.len(),
            valid.len()
        )));
    }
    let x = features.data();
    let keep: Vec<usize> = (0..rows)
        .filter(|&r| valid[r] && x[r * d..(r + 1) * d].iter().any(|&v| v != 0.0))
        .collect();
    if keep.len() < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    let kept_labels: Vec<usize> = keep.iter().map(|&r| labels[r]).collect();
    let flat = features.reshape(&[rows, d])?.gather_rows(&keep)?;
    let sim = flat.matmul_t(&flat)?.scale(1.0 / opts.tau);
    supcon_from_similarity(&sim, &kept_labels, opts.raw_sum)
}

/// Contrastive loss from a precomputed `[n, n]` similarity matrix already divided by τ.
pub fn supcon_from_similarity(sim: &Tensor, labels: &[usize], raw_sum: bool) -> Result<Tensor> {
    let n = labels.len();
    if sim.shape() != [n, n] {
        return Err(Error::Dimension(format!(
            "similarity {:?} does not match {n} labels",
            sim.shape()
        )));
    }
    let s = sim.data();
    let mut grad_rows = vec![0.0; n * n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let row = &s[i * n..(i + 1) * n];
        let max = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + sum.ln();
        let np = positives.len() as f64;
        let mean_pos = positives.iter().map(|&p| row[p]).sum::<f64>() / np;
        total += lse - mean_pos;
        for j in (0..n).filter(|&j| j != i) {
            grad_rows[i * n + j] = (row[j] - lse).exp();
        }
        for &p in &positives {
            grad_rows[i * n + p] -= 1.0 / np;
        }
    }
    if anchors == 0 {
        return Ok(Tensor::scalar(0.0));
    }
    let norm = if raw_sum { 1.0 } else { anchors as f64 };
    Ok(Tensor::from_op(
        vec![],
        vec![total / norm],
        vec![sim.clone()],
        Box::new(move |_, g| {
            let k = g[0] / norm;
            vec![Some(grad_rows.iter().map(|v| v * k).collect())]
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub cc: f64,
    pub total: f64,
    pub lambda: f64,
    pub tau: f64,
}

pub fn total_loss(ce: f64, cc: f64, lambda: f64, tau: f64) -> LossReport {
    LossReport {
        ce,
        cc,
        total: ce + lambda * cc,
        lambda,
        tau,
    }
}

impl LossReport {
    /// `step<TAB>ce<TAB>cc<TAB>total`, full precision.
    pub fn log_line(&self, step: usize) -> String {
        format!("{step}\t{:?}\t{:?}\t{:?}", self.ce, self.cc, self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_uniform_is_log_k() {
        let logits = Tensor::zeros(&[3, 7]);
        let l = ce_loss(&logits, &[0, 4, 6], &[true, true, false]).unwrap();
        assert!((l.item().unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(ce_loss(&logits, &[0, 0, 0], &[false; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn ce_saturates() {
        let mut v = vec![-20.0; 5];
        v[2] = 20.0;
        let l = ce_loss(&Tensor::new(&[1, 5], v).unwrap(), &[2], &[true]).unwrap();
        assert!(l.item().unwrap() < 1e-8);
    }

    #[test]
    fn cc_three_vector_case() {
        let x = Tensor::new(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let opts = CcOptions::default();
        let l = cc_loss(&x, &[5, 5, 6], &[true; 3], &opts).unwrap().item().unwrap();
        assert!((l - (1.0 + (-10f64).exp()).ln()).abs() < 1e-12);
        let bad = CcOptions { tau: 0.0, ..opts };
        assert!(matches!(cc_loss(&x, &[5, 5, 6], &[true; 3], &bad), Err(Error::Param(_))));
    }

    #[test]
    fn report_arithmetic() {
        let r = total_loss(1.0, 2.0, 0.5, 0.1);
        assert_eq!(r.total, 2.0);
        assert_eq!(total_loss(1.5, 9.0, 0.0, 0.1).total, 1.5);
    }
}
