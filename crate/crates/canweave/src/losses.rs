//! The training objective: a supervised term plus two unsupervised terms.
//!
//! * `supervised_loss` is mean cross-entropy over the labeled source batch.
//! * `distribution_loss` rewards attention whose positive and negative
//!   category masses diverge: it is the negated batch-mean symmetric KL
//!   between the two masses, computed for the source and target batches
//!   separately and summed. Larger divergence means a lower loss, so the
//!   term is never positive; each sample's divergence is clipped so a
//!   single saturated sample cannot dominate the batch.
//! * `mmd_loss` is the distance between the mean penultimate feature
//!   vectors of the two domains (the linear-kernel maximum mean
//!   discrepancy), pulling the domains toward a shared representation.
//!
//! `combine` forms `total = supervised + alpha * distribution + beta *
//! alignment` and reports the pieces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Epsilon inside the cross-entropy log.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;
/// Epsilon inside the divergence logs, which see legitimate zeros.
pub const KL_EPS: f64 = 1e-8;
/// Per-sample cap on the symmetric divergence.
pub const KL_CLIP: f64 = 10.0;

/// Scalar values of the loss components for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub distribution: f64,
    pub alignment: f64,
    pub total: f64,
}

/// The K per-memory attention weight vectors for each category, for one
/// sample. Each tensor has the sentence length; padded positions are zero.
#[derive(Clone)]
pub struct SampleAttention {
    pub positive: Vec<Tensor>,
    pub negative: Vec<Tensor>,
}

/// Mean cross-entropy of predicted class distributions against labels.
pub fn supervised_loss(tape: &mut Tape, probs: &[Tensor], labels: &[usize]) -> Result<Tensor> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("supervised_loss: empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "supervised_loss: {} predictions against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut acc: Option<Tensor> = None;
    for (p, &label) in probs.iter().zip(labels) {
        let classes = p.numel();
        if label >= classes {
            return Err(Error::InvalidInput(format!(
                "supervised_loss: label {label} outside 0..{classes}"
            )));
        }
        let mut onehot = vec![0.0; classes];
        onehot[label] = 1.0;
        let y = Tensor::constant(vec![classes], onehot)?;
        let shifted = tape.add_scalar(p, CROSS_ENTROPY_EPS)?;
        let lp = tape.log(&shifted)?;
        let picked = tape.dot(&lp, &y)?;
        acc = Some(match acc {
            None => picked,
            Some(a) => tape.add(&a, &picked)?,
        });
    }
    let summed = acc.expect("non-empty batch");
    tape.scale(&summed, -1.0 / probs.len() as f64)
}

/// Symmetric KL divergence between two same-length mass vectors, with an
/// epsilon inside the logs so exact zeros (padded positions) contribute
/// exactly nothing.
pub fn sym_kl(tape: &mut Tape, p: &Tensor, q: &Tensor) -> Result<Tensor> {
    let lp = {
        let s = tape.add_scalar(p, KL_EPS)?;
        tape.log(&s)?
    };
    let lq = {
        let s = tape.add_scalar(q, KL_EPS)?;
        tape.log(&s)?
    };
    let fwd_ratio = tape.sub(&lp, &lq)?;
    let forward = tape.dot(p, &fwd_ratio)?;
    let rev_ratio = tape.neg(&fwd_ratio)?;
    let reverse = tape.dot(q, &rev_ratio)?;
    tape.add(&forward, &reverse)
}

fn batch_divergence(
    tape: &mut Tape,
    batch: &[SampleAttention],
    pins: Option<&[bool]>,
    gates: &mut Vec<bool>,
) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for sample in batch {
        let k = sample.positive.len();
        if k == 0 || sample.negative.len() != k {
            return Err(Error::InvalidInput(format!(
                "distribution_loss: {} positive against {} negative weight vectors",
                k,
                sample.negative.len()
            )));
        }
        let mut fold = |vecs: &[Tensor]| -> Result<Tensor> {
            let mut sum = vecs[0].clone();
            for v in &vecs[1..] {
                sum = tape.add(&sum, v)?;
            }
            tape.scale(&sum, 1.0 / k as f64)
        };
        let p = fold(&sample.positive)?;
        let q = fold(&sample.negative)?;
        let div = sym_kl(tape, &p, &q)?;
        let clipped = match pins {
            Some(pinned) => {
                let pass = pinned[gates.len()];
                gates.push(pass);
                tape.clip_max_pinned(&div, KL_CLIP, pass)?
            }
            None => {
                let (out, pass) = tape.clip_max(&div, KL_CLIP)?;
                gates.push(pass);
                out
            }
        };
        acc = Some(match acc {
            None => clipped,
            Some(a) => tape.add(&a, &clipped)?,
        });
    }
    let summed = acc.expect("non-empty batch");
    tape.scale(&summed, 1.0 / batch.len() as f64)
}

/// Negated mean clipped symmetric divergence between category attention
/// masses, over a source batch and a target batch.
///
/// Returns the scalar loss and the clip branches taken (source samples
/// first, then target), which callers pass back in to pin the branches
/// during finite-difference probes.
pub fn distribution_loss(
    tape: &mut Tape,
    source: &[SampleAttention],
    target: &[SampleAttention],
    pins: Option<&[bool]>,
) -> Result<(Tensor, Vec<bool>)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput(
            "distribution_loss: empty batch".into(),
        ));
    }
    if let Some(pinned) = pins {
        if pinned.len() != source.len() + target.len() {
            return Err(Error::InvalidInput(format!(
                "distribution_loss: {} pinned branches for {} samples",
                pinned.len(),
                source.len() + target.len()
            )));
        }
    }
    let mut gates = Vec::with_capacity(source.len() + target.len());
    let src = batch_divergence(tape, source, pins, &mut gates)?;
    let tgt = batch_divergence(tape, target, pins, &mut gates)?;
    let sum = tape.add(&src, &tgt)?;
    let loss = tape.neg(&sum)?;
    Ok((loss, gates))
}

/// Distance between domain means of penultimate feature vectors.
pub fn mmd_loss(tape: &mut Tape, source: &[Tensor], target: &[Tensor]) -> Result<Tensor> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("mmd_loss: empty batch".into()));
    }
    let mut mean = |batch: &[Tensor]| -> Result<Tensor> {
        let mut sum = batch[0].clone();
        for t in &batch[1..] {
            sum = tape.add(&sum, t)?;
        }
        tape.scale(&sum, 1.0 / batch.len() as f64)
    };
    let ms = mean(source)?;
    let mt = mean(target)?;
    let diff = tape.sub(&ms, &mt)?;
    tape.norm2(&diff)
}

/// `total = supervised + alpha * distribution + beta * alignment`.
///
/// Terms may be absent only when their weight is zero (the trainer skips
/// building them in that case); absent terms report as 0.
pub fn combine(
    tape: &mut Tape,
    supervised: &Tensor,
    distribution: Option<&Tensor>,
    alignment: Option<&Tensor>,
    alpha: f64,
    beta: f64,
) -> Result<(Tensor, LossBreakdown)> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::InvalidInput(format!(
            "combine: negative term weights alpha={alpha} beta={beta}"
        )));
    }
    if distribution.is_none() && alpha != 0.0 {
        return Err(Error::InvalidInput(
            "combine: alpha is nonzero but no distribution term was built".into(),
        ));
    }
    if alignment.is_none() && beta != 0.0 {
        return Err(Error::InvalidInput(
            "combine: beta is nonzero but no alignment term was built".into(),
        ));
    }
    let mut total = supervised.clone();
    if let Some(d) = distribution {
        let scaled = tape.scale(d, alpha)?;
        total = tape.add(&total, &scaled)?;
    }
    if let Some(a) = alignment {
        let scaled = tape.scale(a, beta)?;
        total = tape.add(&total, &scaled)?;
    }
    let breakdown = LossBreakdown {
        supervised: supervised.item(),
        distribution: distribution.map(Tensor::item).unwrap_or(0.0),
        alignment: alignment.map(Tensor::item).unwrap_or(0.0),
        total: total.item(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::tensor::check::compare_gradients;

    fn softmaxed(tape: &mut Tape, raw: &Tensor, valid: usize) -> Tensor {
        tape.masked_softmax(raw, valid).unwrap()
    }

    #[test]
    fn perfect_prediction_costs_nearly_nothing() {
        let mut tape = Tape::no_grad();
        let p = Tensor::constant(vec![2], vec![1.0, 0.0]).unwrap();
        let loss = supervised_loss(&mut tape, &[p], &[0]).unwrap();
        assert!(loss.item().abs() <= 1e-11);
    }

    #[test]
    fn uniform_prediction_costs_ln_two() {
        let mut tape = Tape::no_grad();
        let p = Tensor::constant(vec![2], vec![0.5, 0.5]).unwrap();
        let loss = supervised_loss(&mut tape, &[p], &[1]).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() <= 1e-9);
    }

    #[test]
    fn supervised_loss_rejects_bad_labels_and_empty_batches() {
        let mut tape = Tape::no_grad();
        let p = Tensor::constant(vec![2], vec![0.5, 0.5]).unwrap();
        assert!(supervised_loss(&mut tape, &[p], &[2]).is_err());
        assert!(supervised_loss(&mut tape, &[], &[]).is_err());
    }

    #[test]
    fn supervised_loss_falls_as_mass_moves_toward_the_true_class() {
        let mut prev = f64::INFINITY;
        for step in 0..10 {
            let t = step as f64 / 10.0;
            let mut tape = Tape::no_grad();
            let p = Tensor::constant(vec![2], vec![1.0 - t, t]).unwrap();
            let loss = supervised_loss(&mut tape, &[p], &[1]).unwrap().item();
            assert!(loss < prev, "not monotone at t={t}");
            prev = loss;
        }
    }

    #[test]
    fn symmetric_kl_matches_hand_computation() {
        let mut tape = Tape::no_grad();
        let p = Tensor::constant(vec![2], vec![0.5, 0.5]).unwrap();
        let q = Tensor::constant(vec![2], vec![0.9, 0.1]).unwrap();
        let kl = sym_kl(&mut tape, &p, &q).unwrap();
        assert!((kl.item() - 0.8789).abs() < 1e-4);
    }

    #[test]
    fn symmetric_kl_of_identical_masses_is_zero() {
        let mut tape = Tape::no_grad();
        let p = Tensor::constant(vec![3], vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(sym_kl(&mut tape, &p, &p).unwrap().item(), 0.0);
        let q = Tensor::constant(vec![3], vec![0.2, 0.5, 0.3]).unwrap();
        let forward = sym_kl(&mut tape, &p, &q).unwrap().item();
        let reverse = sym_kl(&mut tape, &q, &p).unwrap().item();
        assert!((forward - reverse).abs() <= 1e-15);
    }

    fn attn(tape: &mut Tape, raw_pos: Vec<f64>, raw_neg: Vec<f64>, valid: usize) -> SampleAttention {
        let n = raw_pos.len();
        let p = Tensor::constant(vec![n], raw_pos).unwrap();
        let q = Tensor::constant(vec![n], raw_neg).unwrap();
        SampleAttention {
            positive: vec![softmaxed(tape, &p, valid)],
            negative: vec![softmaxed(tape, &q, valid)],
        }
    }

    #[test]
    fn identical_category_attention_gives_zero_distribution_loss() {
        let mut tape = Tape::no_grad();
        let s = attn(&mut tape, vec![1.0, 2.0, 0.5], vec![1.0, 2.0, 0.5], 3);
        let t = attn(&mut tape, vec![0.3, 0.3, 0.1], vec![0.3, 0.3, 0.1], 3);
        let (loss, _) = distribution_loss(&mut tape, &[s], &[t], None).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn distribution_loss_is_never_positive_and_floored_by_the_clip() {
        for seed in 0..30 {
            let mut r = seeds::stream(seed, "dist-loss", 0);
            let mut tape = Tape::no_grad();
            let mut mk = |tape: &mut Tape| {
                let mut a = vec![0.0; 5];
                let mut b = vec![0.0; 5];
                seeds::fill_uniform(&mut r, &mut a, -8.0, 8.0);
                seeds::fill_uniform(&mut r, &mut b, -8.0, 8.0);
                attn(tape, a, b, 4)
            };
            let s = vec![mk(&mut tape), mk(&mut tape)];
            let t = vec![mk(&mut tape)];
            let (loss, _) = distribution_loss(&mut tape, &s, &t, None).unwrap();
            let v = loss.item();
            assert!(v <= 0.0, "positive distribution loss: {v}");
            assert!(v >= -2.0 * KL_CLIP, "clip floor violated: {v}");
        }
    }

    #[test]
    fn extreme_divergence_is_clipped_per_sample() {
        let mut tape = Tape::no_grad();
        // Near-disjoint masses over 40 positions drive the divergence far
        // beyond the cap.
        let mut raw_p = vec![-30.0; 40];
        let mut raw_q = vec![-30.0; 40];
        raw_p[0] = 30.0;
        raw_q[39] = 30.0;
        let s = attn(&mut tape, raw_p.clone(), raw_q.clone(), 40);
        let t = attn(&mut tape, raw_p, raw_q, 40);
        let (loss, gates) = distribution_loss(&mut tape, &[s], &[t], None).unwrap();
        assert_eq!(loss.item(), -2.0 * KL_CLIP);
        assert_eq!(gates, vec![false, false]);
    }

    #[test]
    fn distribution_loss_ignores_batch_order() {
        let mut tape = Tape::no_grad();
        let a = attn(&mut tape, vec![3.0, 1.0, 0.0], vec![0.0, 2.0, 1.0], 3);
        let b = attn(&mut tape, vec![0.5, 0.5, 2.0], vec![1.0, 1.0, 1.0], 3);
        let t = attn(&mut tape, vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], 3);
        let (l1, _) =
            distribution_loss(&mut tape, &[a.clone(), b.clone()], &[t.clone()], None).unwrap();
        let (l2, _) = distribution_loss(&mut tape, &[b, a], &[t], None).unwrap();
        assert!((l1.item() - l2.item()).abs() <= 1e-12);
    }

    #[test]
    fn mmd_of_singleton_unit_batches_is_sqrt_two() {
        let mut tape = Tape::no_grad();
        let a = Tensor::constant(vec![2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::constant(vec![2], vec![0.0, 1.0]).unwrap();
        let d = mmd_loss(&mut tape, &[a], &[b]).unwrap();
        assert!((d.item() - std::f64::consts::SQRT_2).abs() <= 1e-12);
    }

    #[test]
    fn mmd_is_zero_on_identical_batches_and_symmetric() {
        let mut r = seeds::stream(5, "mmd", 0);
        let batch = |r: &mut _| -> Vec<Tensor> {
            (0..3)
                .map(|_| {
                    let mut v = vec![0.0; 4];
                    seeds::fill_uniform(r, &mut v, -1.0, 1.0);
                    Tensor::constant(vec![4], v).unwrap()
                })
                .collect()
        };
        let a = batch(&mut r);
        let b = batch(&mut r);
        let mut tape = Tape::no_grad();
        assert_eq!(mmd_loss(&mut tape, &a, &a).unwrap().item(), 0.0);
        let ab = mmd_loss(&mut tape, &a, &b).unwrap().item();
        let ba = mmd_loss(&mut tape, &b, &a).unwrap().item();
        assert_eq!(ab, ba);
    }

    #[test]
    fn mmd_satisfies_the_triangle_inequality() {
        for seed in 0..50 {
            let mut r = seeds::stream(seed, "mmd-tri", 0);
            let batch = |r: &mut _| -> Vec<Tensor> {
                (0..2)
                    .map(|_| {
                        let mut v = vec![0.0; 3];
                        seeds::fill_uniform(r, &mut v, -2.0, 2.0);
                        Tensor::constant(vec![3], v).unwrap()
                    })
                    .collect()
            };
            let a = batch(&mut r);
            let b = batch(&mut r);
            let c = batch(&mut r);
            let mut tape = Tape::no_grad();
            let ab = mmd_loss(&mut tape, &a, &b).unwrap().item();
            let bc = mmd_loss(&mut tape, &b, &c).unwrap().item();
            let ac = mmd_loss(&mut tape, &a, &c).unwrap().item();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn combine_weights_the_terms() {
        let mut tape = Tape::no_grad();
        let c = Tensor::constant(vec![1], vec![1.0]).unwrap();
        let d = Tensor::constant(vec![1], vec![-2.0]).unwrap();
        let i = Tensor::constant(vec![1], vec![0.5]).unwrap();
        let (total, parts) = combine(&mut tape, &c, Some(&d), Some(&i), 0.05, 0.01).unwrap();
        assert!((total.item() - 0.905).abs() <= 1e-12);
        assert_eq!(parts.supervised, 1.0);
        assert_eq!(parts.distribution, -2.0);
        assert_eq!(parts.alignment, 0.5);
    }

    #[test]
    fn combine_with_zero_weights_reduces_to_the_supervised_term() {
        let mut tape = Tape::no_grad();
        let c = Tensor::constant(vec![1], vec![0.7]).unwrap();
        let (total, parts) = combine(&mut tape, &c, None, None, 0.0, 0.0).unwrap();
        assert_eq!(total.item(), 0.7);
        assert_eq!(parts.distribution, 0.0);
        assert_eq!(parts.alignment, 0.0);
        assert!(combine(&mut tape, &c, None, None, 0.1, 0.0).is_err());
        assert!(combine(&mut tape, &c, None, None, -0.1, 0.0).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut r = seeds::stream(seed, "loss-fd", 0);
            let mk = |r: &mut _, n: usize, lo: f64, hi: f64| {
                let mut v = vec![0.0; n];
                seeds::fill_uniform(r, &mut v, lo, hi);
                Tensor::param(vec![n], v).unwrap()
            };
            let raw_probs = mk(&mut r, 2, -1.0, 1.0);
            let raw_sp = mk(&mut r, 4, -2.0, 2.0);
            let raw_sn = mk(&mut r, 4, -2.0, 2.0);
            let raw_tp = mk(&mut r, 4, -2.0, 2.0);
            let raw_tn = mk(&mut r, 4, -2.0, 2.0);
            let feat_s = mk(&mut r, 3, -1.0, 1.0);
            let feat_t = mk(&mut r, 3, -1.0, 1.0);

            // Pin the clip branches at the base point.
            let pins;
            {
                let mut tape = Tape::no_grad();
                let sp = tape.masked_softmax(&raw_sp, 3).unwrap();
                let sn = tape.masked_softmax(&raw_sn, 3).unwrap();
                let tp = tape.masked_softmax(&raw_tp, 3).unwrap();
                let tn = tape.masked_softmax(&raw_tn, 3).unwrap();
                let s = SampleAttention {
                    positive: vec![sp],
                    negative: vec![sn],
                };
                let t = SampleAttention {
                    positive: vec![tp],
                    negative: vec![tn],
                };
                let (_, gates) = distribution_loss(&mut tape, &[s], &[t], None).unwrap();
                pins = gates;
            }

            let params = [
                raw_probs.clone(),
                raw_sp.clone(),
                raw_sn.clone(),
                raw_tp.clone(),
                raw_tn.clone(),
                feat_s.clone(),
                feat_t.clone(),
            ];
            let report = compare_gradients(
                &params,
                |tape| {
                    let probs = tape.masked_softmax(&raw_probs, 2)?;
                    let l_sup = supervised_loss(tape, &[probs], &[1])?;
                    let sp = tape.masked_softmax(&raw_sp, 3)?;
                    let sn = tape.masked_softmax(&raw_sn, 3)?;
                    let tp = tape.masked_softmax(&raw_tp, 3)?;
                    let tn = tape.masked_softmax(&raw_tn, 3)?;
                    let s = SampleAttention {
                        positive: vec![sp],
                        negative: vec![sn],
                    };
                    let t = SampleAttention {
                        positive: vec![tp],
                        negative: vec![tn],
                    };
                    let (l_dist, _) = distribution_loss(tape, &[s], &[t], Some(&pins))?;
                    let l_align = mmd_loss(tape, &[feat_s.clone()], &[feat_t.clone()])?;
                    let (total, _) =
                        combine(tape, &l_sup, Some(&l_dist), Some(&l_align), 0.05, 0.01)?;
                    Ok(total)
                },
                1e-5,
            )
            .unwrap();
            let err = report.max_relative_error(1e-3);
            assert!(err < 1e-6, "seed {seed}: fd mismatch {err}");
        }
    }
}
