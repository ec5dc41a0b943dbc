//! Category memory construction.
//!
//! The source-domain memory is extracted from labeled counts: each word
//! gets the smoothed log-count-ratio score `ln(T_pos+1) - ln(T_neg+1)`
//! over token occurrences, positive memory takes the top-M scores
//! descending, negative memory the top-M ascending, with ties broken by
//! lexicographic word order. Source entries stay tied to their embedding
//! rows, so they track optimizer updates for free.
//!
//! The target-domain memory has no labels to count, so it is a bank of
//! 2M free trainable vectors drawn uniformly from [-0.25, 0.25], one
//! seeded stream per slot. The initial values are snapshotted so reports
//! can contrast neighbors before and after training.

use crate::corpus::{RawDoc, Vocabulary};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

pub const TARGET_INIT_RANGE: f64 = 0.25;

/// Token-occurrence counts per word id, split by document label.
#[derive(Debug, Clone)]
pub struct CountTable {
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl CountTable {
    /// Tallies token occurrences (each appearance counts) per class.
    pub fn from_docs(docs: &[RawDoc], vocab: &Vocabulary) -> Result<CountTable> {
        let mut table = CountTable {
            pos: vec![0; vocab.len()],
            neg: vec![0; vocab.len()],
        };
        let mut seen = [false, false];
        for doc in docs {
            let label = doc.label.ok_or_else(|| {
                Error::InvalidInput("memory extraction needs labeled documents".into())
            })?;
            if label > 1 {
                return Err(Error::InvalidInput(format!(
                    "label {label} outside the binary classes"
                )));
            }
            seen[label] = true;
            let counts = match label {
                1 => &mut table.pos,
                _ => &mut table.neg,
            };
            for token in &doc.tokens {
                counts[vocab.id(token) as usize] += 1;
            }
        }
        if !seen[0] || !seen[1] {
            return Err(Error::InvalidInput(
                "memory extraction needs at least one document of each class".into(),
            ));
        }
        Ok(table)
    }

    pub fn positive(&self, id: u32) -> u64 {
        self.pos[id as usize]
    }

    pub fn negative(&self, id: u32) -> u64 {
        self.neg[id as usize]
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// Smoothed log-count-ratio score per word id (every word, including the
/// reserved ids, which score 0 from zero counts).
pub fn score_words(counts: &CountTable) -> Vec<f64> {
    counts
        .pos
        .iter()
        .zip(&counts.neg)
        .map(|(&p, &n)| ((p + 1) as f64).ln() - ((n + 1) as f64).ln())
        .collect()
}

/// One extracted source-memory entry: the word and its score.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MemoryWord {
    pub id: u32,
    pub score: f64,
}

/// Source memory: M word ids per category, vectors tied to embedding rows.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SourceMemory {
    pub positive: Vec<MemoryWord>,
    pub negative: Vec<MemoryWord>,
}

/// Ranks every content word (reserved ids excluded) and keeps the top-M
/// per category: highest scores positive, lowest negative, lexicographic
/// word order on ties.
pub fn build_source_cmm(counts: &CountTable, vocab: &Vocabulary, m: usize) -> Result<SourceMemory> {
    if m == 0 {
        return Err(Error::InvalidInput("memory size M must be positive".into()));
    }
    if vocab.content_len() < 2 * m {
        return Err(Error::InvalidInput(format!(
            "vocabulary has {} content words, need at least {} for M={m}",
            vocab.content_len(),
            2 * m
        )));
    }
    let scores = score_words(counts);
    let mut ranked: Vec<(u32, f64)> = (2..vocab.len() as u32)
        .map(|id| (id, scores[id as usize]))
        .collect();

    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| vocab.word(a.0).cmp(vocab.word(b.0)))
    });
    let positive = ranked[..m]
        .iter()
        .map(|&(id, score)| MemoryWord { id, score })
        .collect();

    ranked.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("scores are finite")
            .then_with(|| vocab.word(a.0).cmp(vocab.word(b.0)))
    });
    let negative = ranked[..m]
        .iter()
        .map(|&(id, score)| MemoryWord { id, score })
        .collect();

    Ok(SourceMemory { positive, negative })
}

/// Target memory: 2M free trainable vectors plus the initial snapshot.
#[derive(Debug, Clone)]
pub struct TargetMemory {
    pub positive: Vec<Tensor>,
    pub negative: Vec<Tensor>,
    /// Initial values in slot order (positive then negative), kept for
    /// before/after neighbor reports.
    pub initial: Vec<Vec<f64>>,
}

/// Draws 2M trainable d-vectors uniformly from the init range, one
/// independent stream per slot so M and d changes never cross-talk.
pub fn init_target_cmm(m: usize, d: usize, seed: u64) -> Result<TargetMemory> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "target memory needs positive M and dimension".into(),
        ));
    }
    let mut slots = Vec::with_capacity(2 * m);
    let mut initial = Vec::with_capacity(2 * m);
    for slot in 0..2 * m {
        let mut values = vec![0.0; d];
        let mut rng = seeds::stream(seed, "target-cmm", slot as u64);
        seeds::fill_uniform(&mut rng, &mut values, -TARGET_INIT_RANGE, TARGET_INIT_RANGE);
        initial.push(values.clone());
        slots.push(Tensor::param(vec![d], values)?);
    }
    let negative = slots.split_off(m);
    Ok(TargetMemory {
        positive: slots,
        negative,
        initial,
    })
}

impl TargetMemory {
    pub fn slot_count(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    /// Slot tensor by flat index (positive slots first).
    pub fn slot(&self, index: usize) -> &Tensor {
        let m = self.positive.len();
        if index < m {
            &self.positive[index]
        } else {
            &self.negative[index - m]
        }
    }
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

/// Top-n vocabulary words by cosine similarity to `entry` against the
/// embedding table, excluding the reserved ids; ties fall back to
/// lexicographic word order.
pub fn nearest_vocab_neighbors(
    entry: &[f64],
    table: &[f64],
    vocab: &Vocabulary,
    n: usize,
) -> Vec<(String, f64)> {
    let d = entry.len();
    let mut scored: Vec<(u32, f64)> = (2..vocab.len() as u32)
        .map(|id| {
            let row = &table[id as usize * d..(id as usize + 1) * d];
            (id, cosine_values(entry, row))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine is finite")
            .then_with(|| vocab.word(a.0).cmp(vocab.word(b.0)))
    });
    scored
        .into_iter()
        .take(n)
        .map(|(id, sim)| (vocab.word(id).to_string(), sim))
        .collect()
}
