//! Scoring, transition counting, the FGSM baseline and curve export.

mod curves;

pub use curves::{export_curves, parse_curves, SummaryRow, SummaryTable, CURVE_HEADER};

use crate::diffcore::{sign, Tensor};
use crate::error::{Error, Result};
use crate::models::FrozenClassifier;

/// One epoch of training diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub l_d: f64,
    /// Adversarial part of the generator loss, without the regularizer.
    pub l_g: f64,
    pub l_r: f64,
    pub top1: f64,
    /// `None` when only labels are observable.
    pub map: Option<f64>,
    /// False-to-correct transitions relative to the vanilla predictions.
    pub pos: usize,
    /// Correct-to-false transitions.
    pub neg: usize,
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::contract(
            "eval-metrics",
            format!("{what}: lengths {a} and {b} differ"),
        ));
    }
    Ok(())
}

/// Fraction of `r[i] == l[i]`.
pub fn top1_accuracy(r: &[usize], l: &[usize]) -> Result<f64> {
    check_lengths(r.len(), l.len(), "top1_accuracy")?;
    if r.is_empty() {
        return Err(Error::contract(
            "eval-metrics",
            "top1_accuracy of an empty set",
        ));
    }
    Ok(r.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / r.len() as f64)
}

/// Average precision of one ranking: mean of precision at each positive.
/// Samples are ranked by descending score, ties by index.
pub fn average_precision(scores: &[f32], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut total) = (0usize, 0.0f64);
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// One-vs-rest AP per class over `N × K` scores, averaged over classes that
/// have at least one positive.
pub fn mean_average_precision(scores: &Tensor, l: &[usize]) -> Result<f64> {
    if scores.rank() != 2 {
        return Err(Error::shape(format!(
            "scores must be N x K, got {:?}",
            scores.shape()
        )));
    }
    let (n, k) = (scores.shape()[0], scores.shape()[1]);
    check_lengths(n, l.len(), "mean_average_precision")?;
    let mut aps = Vec::new();
    for class in 0..k {
        let column: Vec<f32> = (0..n).map(|i| scores.data()[i * k + class]).collect();
        let positive: Vec<bool> = l.iter().map(|&y| y == class).collect();
        if let Some(ap) = average_precision(&column, &positive) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(Error::contract(
            "eval-metrics",
            "no class has a positive sample",
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// `(pos, neg)`: false-to-correct and correct-to-false counts.
pub fn count_transitions(
    vanilla: &[usize],
    perturbed: &[usize],
    l: &[usize],
) -> Result<(usize, usize)> {
    check_lengths(vanilla.len(), l.len(), "count_transitions")?;
    check_lengths(perturbed.len(), l.len(), "count_transitions")?;
    let mut pos = 0;
    let mut neg = 0;
    for ((&v, &p), &y) in vanilla.iter().zip(perturbed).zip(l) {
        match (v == y, p == y) {
            (false, true) => pos += 1,
            (true, false) => neg += 1,
            _ => {}
        }
    }
    Ok((pos, neg))
}

/// Softmax of each row of `N × K` logits.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!(
            "logits must be N x K, got {:?}",
            logits.shape()
        )));
    }
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = row.iter().map(|&v| ((v - m) as f64).exp()).sum();
        for v in row.iter_mut() {
            *v = (((*v - m) as f64).exp() / z) as f32;
        }
    }
    Ok(out)
}

/// Top-1 and (white-box only) mAP of `f` on `images`.
pub fn score(
    f: &FrozenClassifier,
    images: &Tensor,
    l: &[usize],
) -> Result<(Vec<usize>, f64, Option<f64>)> {
    let r = f.classify(images)?;
    let top1 = top1_accuracy(&r, l)?;
    let map = match f.logits(images) {
        Ok(logits) => Some(mean_average_precision(&softmax_rows(&logits)?, l)?),
        Err(Error::Access(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((r, top1, map))
}

/// Perturbs `I` by `scale · sign(∇_I CE)` in the classifier's input space.
pub fn fgsm_images(
    f: &FrozenClassifier,
    images: &Tensor,
    l: &[usize],
    scale: &[f32],
) -> Result<Tensor> {
    let channels = images.shape().get(1).copied().unwrap_or(0);
    if scale.len() != channels {
        return Err(Error::shape(format!(
            "{} step sizes for {channels} channels",
            scale.len()
        )));
    }
    let mut out = images.clone();
    if scale.iter().all(|&s| s == 0.0) {
        return Ok(out);
    }
    let plane = images.item_len() / channels;
    const CHUNK: usize = 128;
    let n = images.batch();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let grad = f.input_gradient(&images.slice_batch(start, end)?, &l[start..end])?;
        let base = start * images.item_len();
        for (i, &gv) in grad.data().iter().enumerate() {
            let ch = (i / plane) % channels;
            out.data_mut()[base + i] += scale[ch] * sign(gv);
        }
    }
    Ok(out)
}

/// Fast-gradient-sign baseline: top-1 of `f` on `I + ε·sign(∇_I CE(f(I), l))`.
/// `pixel_std` converts `ε` from `[0, 1]` pixel units into the classifier's
/// input space (all ones for vanilla data).
pub fn fgsm_baseline(
    f: &FrozenClassifier,
    images: &Tensor,
    l: &[usize],
    epsilon: f32,
    pixel_std: &[f32],
) -> Result<f64> {
    let scale: Vec<f32> = pixel_std.iter().map(|s| epsilon / s).collect();
    let j = fgsm_images(f, images, l, &scale)?;
    top1_accuracy(&f.classify(&j)?, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_examples() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 0, 3]).unwrap(), 2.0 / 3.0);
        assert_eq!(top1_accuracy(&[4, 4], &[4, 4]).unwrap(), 1.0);
        assert!(top1_accuracy(&[], &[]).is_err());
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn ap_of_first_and_third() {
        let ap = average_precision(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.3], &[false]), None);
    }

    #[test]
    fn perfect_scores_give_unit_map() {
        let l = [0usize, 1, 2, 1];
        let mut s = Tensor::zeros(&[4, 3]);
        for (i, &y) in l.iter().enumerate() {
            s.data_mut()[i * 3 + y] = 1.0;
        }
        assert_eq!(mean_average_precision(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn transitions() {
        assert_eq!(
            count_transitions(&[0, 1, 2], &[0, 1, 2], &[0, 0, 0]).unwrap(),
            (0, 0)
        );
        assert_eq!(
            count_transitions(&[1, 1], &[0, 0], &[0, 0]).unwrap(),
            (2, 0)
        );
        assert_eq!(
            count_transitions(&[0, 1], &[1, 1], &[0, 1]).unwrap(),
            (0, 1)
        );
    }
}
