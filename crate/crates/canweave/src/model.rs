//! The assembled classifier: embeddings, category memories, matching,
//! attention, convolutional encoding, and the softmax head, wired into a
//! single per-sample forward pass on a gradient tape.
//!
//! The source-domain memory is a list of word ids whose vectors are the
//! live embedding rows (updating the embedding updates the memory); the
//! target-domain memory is a bank of free trainable vectors. Both domains
//! share every other parameter.
//!
//! A forward pass can run in `Record` mode, which makes fresh discrete
//! choices (matched memory slots, pooling windows), or `Replay` mode,
//! which pins those choices from an earlier trace. Replay keeps
//! finite-difference probes on the same smooth branch as the base point.

use crate::can::{self, MatchResult};
use crate::cmm::{SourceMemory, TargetMemory};
use crate::cnn::{self, ConvBank};
use crate::corpus::{Domain, Sample, Vocabulary};
use crate::embeddings;
use crate::error::{Error, Result};
use crate::losses::SampleAttention;
use crate::seeds;
use crate::tensor::{ConvChoice, Tape, Tensor};

pub const ATTN_INIT_RANGE: f64 = 0.1;
pub const HEAD_INIT_RANGE: f64 = 0.1;
pub const CLASSES: usize = 2;

/// Width-and-depth settings for construction.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub dim: usize,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub memory_size: usize,
    pub matched_queries: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.filters_per_width == 0 || self.memory_size == 0 {
            return Err(Error::InvalidInput(
                "model dimensions must be positive".into(),
            ));
        }
        if self.matched_queries == 0 || self.matched_queries > self.memory_size {
            return Err(Error::InvalidInput(format!(
                "matched query count {} outside 1..=M={}",
                self.matched_queries, self.memory_size
            )));
        }
        Ok(())
    }
}

/// All trainable state plus the tied vocabulary.
#[derive(Debug, Clone)]
pub struct Model {
    pub vocab: Vocabulary,
    pub dims: ModelDims,
    pub embedding: Tensor,
    pub attn_w: Tensor,
    pub attn_b: Tensor,
    pub conv: ConvBank,
    pub classifier: Tensor,
    pub source_memory: SourceMemory,
    pub target_memory: TargetMemory,
}

/// Discrete choices of one forward pass, for exact replay.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub matches: MatchResult,
    pub conv_choices: Vec<Vec<ConvChoice>>,
}

/// Fresh choices or pinned ones.
pub enum TraceMode<'a> {
    Record,
    Replay(&'a SampleTrace),
}

/// Everything downstream consumers need from one sample.
pub struct SampleForward {
    /// Class distribution (length 2).
    pub probs: Tensor,
    /// Fused penultimate feature o = concat(v, m).
    pub feature: Tensor,
    /// Per-query attention distributions over the valid prefix.
    pub attention: SampleAttention,
    pub trace: SampleTrace,
}

impl Model {
    /// Builds a model with seeded parameters: embedding rows from the
    /// table builder, attention and head weights uniform in their ranges,
    /// zero attention bias, seeded conv bank and target memory.
    pub fn new(
        vocab: Vocabulary,
        source_memory: SourceMemory,
        pretrained: Option<&std::collections::HashMap<String, Vec<f64>>>,
        dims: ModelDims,
        seed: u64,
    ) -> Result<Model> {
        dims.validate()?;
        if source_memory.positive.len() != dims.memory_size
            || source_memory.negative.len() != dims.memory_size
        {
            return Err(Error::InvalidInput(format!(
                "source memory holds {}/{} entries, dims say M={}",
                source_memory.positive.len(),
                source_memory.negative.len(),
                dims.memory_size
            )));
        }
        let d = dims.dim;
        let table = embeddings::build_table(&vocab, d, pretrained, seed)?;
        let embedding = Tensor::param(vec![vocab.len(), d], table)?;

        // Identity backbone plus noise: the score transform starts
        // near-linear, so queries initially compare against (almost) raw
        // word vectors and free memory slots accumulate gradient in the
        // same space the matching step measures cosine in.
        let mut attn_w_values = vec![0.0; d * d];
        let mut rng = seeds::stream(seed, "w_a", 0);
        seeds::fill_uniform(&mut rng, &mut attn_w_values, -ATTN_INIT_RANGE, ATTN_INIT_RANGE);
        for row in 0..d {
            attn_w_values[row * d + row] += 1.0;
        }
        let attn_w = Tensor::param(vec![d, d], attn_w_values)?;
        let attn_b = Tensor::param(vec![d], vec![0.0; d])?;

        let conv = cnn::init_conv_bank(&dims.widths, dims.filters_per_width, d, seed)?;

        let feature_len = d + conv.feature_len();
        let mut head_values = vec![0.0; feature_len * CLASSES];
        let mut rng = seeds::stream(seed, "w_s", 0);
        seeds::fill_uniform(&mut rng, &mut head_values, -HEAD_INIT_RANGE, HEAD_INIT_RANGE);
        let classifier = Tensor::param(vec![feature_len, CLASSES], head_values)?;

        let target_memory = crate::cmm::init_target_cmm(dims.memory_size, d, seed)?;

        Ok(Model {
            vocab,
            dims,
            embedding,
            attn_w,
            attn_b,
            conv,
            classifier,
            source_memory,
            target_memory,
        })
    }

    /// Trainable parameters in a stable order: embedding, attention
    /// weight and bias, conv filters and biases (width ascending), head,
    /// then target memory slots (positive block first).
    pub fn params(&self) -> Vec<Tensor> {
        let mut params = vec![
            self.embedding.clone(),
            self.attn_w.clone(),
            self.attn_b.clone(),
        ];
        for layer in &self.conv.layers {
            params.push(layer.filters.clone());
            params.push(layer.bias.clone());
        }
        params.push(self.classifier.clone());
        for slot in self
            .target_memory
            .positive
            .iter()
            .chain(&self.target_memory.negative)
        {
            params.push(slot.clone());
        }
        params
    }

    /// Current values of every parameter, in `params()` order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(Tensor::values).collect()
    }

    /// Writes back a snapshot taken with `snapshot()`.
    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        let params = self.params();
        if params.len() != snapshot.len() {
            return Err(Error::InvalidInput(format!(
                "snapshot holds {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (param, values) in params.iter().zip(snapshot) {
            if param.numel() != values.len() {
                return Err(Error::InvalidInput(
                    "snapshot tensor sizes do not match the model".into(),
                ));
            }
            param.set_values(values);
        }
        Ok(())
    }

    /// Forces the padding embedding row back to zero.
    pub fn zero_pad_row(&self) {
        let d = self.dims.dim;
        let mut values = self.embedding.values();
        for v in &mut values[..d] {
            *v = 0.0;
        }
        self.embedding.set_values(&values);
    }

    fn memory_match(&self, sentence: &[f64], valid: usize, domain: Domain) -> Result<MatchResult> {
        let d = self.dims.dim;
        let k = self.dims.matched_queries;
        match domain {
            Domain::Source => self.embedding.with_values(|table| {
                let view = |words: &[crate::cmm::MemoryWord]| {
                    words
                        .iter()
                        .map(|w| &table[w.id as usize * d..(w.id as usize + 1) * d])
                        .collect::<Vec<&[f64]>>()
                };
                let pos = view(&self.source_memory.positive);
                let neg = view(&self.source_memory.negative);
                can::dynamic_match(sentence, d, valid, &pos, &neg, k)
            }),
            Domain::Target => {
                let collect = |slots: &[Tensor]| -> Vec<Vec<f64>> {
                    slots.iter().map(Tensor::values).collect()
                };
                let pos = collect(&self.target_memory.positive);
                let neg = collect(&self.target_memory.negative);
                let pos_views: Vec<&[f64]> = pos.iter().map(Vec::as_slice).collect();
                let neg_views: Vec<&[f64]> = neg.iter().map(Vec::as_slice).collect();
                can::dynamic_match(sentence, d, valid, &pos_views, &neg_views, k)
            }
        }
    }

    /// The query tensor for one matched memory slot. Source queries are
    /// live embedding rows (gradients reach the embedding); target
    /// queries are the free slot tensors.
    fn query_tensor(
        &self,
        tape: &mut Tape,
        domain: Domain,
        positive: bool,
        memory_index: usize,
    ) -> Result<Tensor> {
        match domain {
            Domain::Source => {
                let words = if positive {
                    &self.source_memory.positive
                } else {
                    &self.source_memory.negative
                };
                let id = words[memory_index].id as usize;
                let row = tape.gather_rows(&self.embedding, &[id])?;
                tape.reshape(&row, vec![self.dims.dim])
            }
            Domain::Target => {
                let slots = if positive {
                    &self.target_memory.positive
                } else {
                    &self.target_memory.negative
                };
                Ok(slots[memory_index].clone())
            }
        }
    }

    /// Runs one sample through matching, attention, convolution, and the
    /// head. The sample's `domain` field picks the memory bank.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        sample: &Sample,
        mode: TraceMode<'_>,
    ) -> Result<SampleForward> {
        let valid = sample.valid_len;
        if valid == 0 {
            return Err(Error::InvalidInput(
                "cannot run a sample with no valid tokens".into(),
            ));
        }
        if valid > sample.tokens.len() {
            return Err(Error::InvalidInput(format!(
                "valid_len {valid} exceeds the {}-token buffer",
                sample.tokens.len()
            )));
        }
        let ids: Vec<usize> = sample.tokens[..valid].iter().map(|t| *t as usize).collect();
        if let Some(bad) = ids.iter().find(|id| **id >= self.vocab.len()) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside the {}-word vocabulary",
                self.vocab.len()
            )));
        }
        let emb = tape.gather_rows(&self.embedding, &ids)?;

        let matches = match &mode {
            TraceMode::Record => {
                let sentence = emb.values();
                self.memory_match(&sentence, valid, sample.domain)?
            }
            TraceMode::Replay(trace) => trace.matches.clone(),
        };

        let attend = |tape: &mut Tape, model: &Model, positive: bool| -> Result<Vec<Tensor>> {
            let picks = if positive {
                &matches.positive
            } else {
                &matches.negative
            };
            picks
                .iter()
                .map(|pick| {
                    let q = model.query_tensor(tape, sample.domain, positive, pick.memory_index)?;
                    can::category_attention(tape, &emb, &q, &model.attn_w, &model.attn_b, valid)
                })
                .collect()
        };
        let pos_weights = attend(tape, self, true)?;
        let neg_weights = attend(tape, self, false)?;

        let v_pos = can::aggregate_category(tape, &emb, &pos_weights, valid)?;
        let v_neg = can::aggregate_category(tape, &emb, &neg_weights, valid)?;
        let v = tape.add(&v_pos, &v_neg)?;

        let (m, conv_choices) = match &mode {
            TraceMode::Record => cnn::encode(tape, &self.conv, &emb, valid)?,
            TraceMode::Replay(trace) => {
                let m = cnn::encode_pinned(tape, &self.conv, &emb, valid, &trace.conv_choices)?;
                (m, trace.conv_choices.clone())
            }
        };

        let (probs, feature) = cnn::classify(tape, &self.classifier, &v, &m)?;
        Ok(SampleForward {
            probs,
            feature,
            attention: SampleAttention {
                positive: pos_weights,
                negative: neg_weights,
            },
            trace: SampleTrace {
                matches,
                conv_choices,
            },
        })
    }
}
