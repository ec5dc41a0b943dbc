//! Category attention network: dynamic matching, per-query attention, and
//! feature aggregation.
//!
//! Dynamic matching scores each memory entry by its best cosine
//! similarity against any valid sentence position and keeps the top-K
//! entries per category. The selection is a pure value computation — no
//! gradient flows through picking the indices — but the selected vectors
//! then act as attention queries, so gradients reach them (and the
//! sentence embeddings) through the downstream attention and aggregation.
//!
//! Per query q, position l gets weight softmax_l(qᵀ tanh(W_a w_l + b))
//! over the valid prefix. The category feature v^c sums the weighted
//! sentence vectors over all K queries; the fused feature is
//! v = v^pos + v^neg.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// One selected memory entry: which slot and how well it matched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedQuery {
    pub memory_index: usize,
    pub score: f64,
}

/// Top-K selections for both categories of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub positive: Vec<MatchedQuery>,
    pub negative: Vec<MatchedQuery>,
}

fn cosine_values(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Scores one category's memory entries against the valid sentence prefix
/// and returns the K best by score descending, ties toward the lower
/// memory index. `sentence` is row-major valid_len x d.
pub fn match_category(
    sentence: &[f64],
    d: usize,
    valid_len: usize,
    entries: &[&[f64]],
    k: usize,
) -> Result<Vec<MatchedQuery>> {
    if valid_len == 0 {
        return Err(Error::InvalidInput(
            "dynamic matching needs at least one valid position".into(),
        ));
    }
    if k == 0 || k > entries.len() {
        return Err(Error::InvalidInput(format!(
            "K={k} outside 1..={} memory entries",
            entries.len()
        )));
    }
    if sentence.len() < valid_len * d {
        return Err(Error::shape(
            "match_category",
            format!(
                "sentence holds {} values, needs {valid_len}x{d}",
                sentence.len()
            ),
        ));
    }
    let mut scored: Vec<MatchedQuery> = entries
        .iter()
        .enumerate()
        .map(|(memory_index, entry)| {
            let mut best = f64::NEG_INFINITY;
            for l in 0..valid_len {
                let row = &sentence[l * d..(l + 1) * d];
                let sim = cosine_values(row, entry);
                if sim > best {
                    best = sim;
                }
            }
            MatchedQuery {
                memory_index,
                score: best,
            }
        })
        .collect();
    // Stable sort by score descending keeps the lower index first on ties.
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("cosine is finite"));
    scored.truncate(k);
    Ok(scored)
}

/// Runs `match_category` for both categories of a memory bank.
pub fn dynamic_match(
    sentence: &[f64],
    d: usize,
    valid_len: usize,
    positive_entries: &[&[f64]],
    negative_entries: &[&[f64]],
    k: usize,
) -> Result<MatchResult> {
    Ok(MatchResult {
        positive: match_category(sentence, d, valid_len, positive_entries, k)?,
        negative: match_category(sentence, d, valid_len, negative_entries, k)?,
    })
}

/// Attention weights of one query over the valid sentence positions:
/// softmax over l of qᵀ tanh(W_a w_l + b). `embeddings` is valid_len x d.
pub fn category_attention(
    tape: &mut Tape,
    embeddings: &Tensor,
    query: &Tensor,
    attn_w: &Tensor,
    attn_b: &Tensor,
    valid_len: usize,
) -> Result<Tensor> {
    if valid_len == 0 {
        return Err(Error::InvalidInput(
            "attention needs at least one valid position".into(),
        ));
    }
    // Row l of embeddings @ W_aᵀ is (W_a w_l)ᵀ; add b to every row.
    let projected = tape.matmul_bt(embeddings, attn_w)?;
    let shifted = tape.broadcast_add_row(&projected, attn_b)?;
    let hidden = tape.tanh(&shifted)?;
    let logits = tape.matvec(&hidden, query)?;
    tape.masked_softmax(&logits, valid_len)
}

/// v^c for one category: sum over queries of the weighted sentence sum.
pub fn aggregate_category(
    tape: &mut Tape,
    embeddings: &Tensor,
    weights: &[Tensor],
    valid_len: usize,
) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for w in weights {
        let partial = tape.attn_weighted_sum(embeddings, w, valid_len)?;
        total = Some(match total {
            Some(acc) => tape.add(&acc, &partial)?,
            None => partial,
        });
    }
    total.ok_or_else(|| Error::InvalidInput("aggregation needs at least one query".into()))
}
