//! Sentence encoder: parallel text convolutions with max-over-positions
//! pooling, and the softmax classification head.
//!
//! The bank holds, for each window width h (ascending), T filters with
//! per-filter biases and ReLU activation. Pooling considers every window
//! starting inside the valid prefix; windows may run past the end of a
//! short sentence, reading the overhang as zeros. Pooled features are
//! concatenated in (width ascending, filter index) order.
//!
//! The head has no bias: probabilities are softmax(W_sᵀ o) where
//! o = concat(v, m) joins the attention feature and the pooled feature.

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{ConvChoice, Tape, Tensor};

pub const FILTER_INIT_RANGE: f64 = 0.1;

/// Filters of one window width: `filters` is T x (h*d), `bias` is T.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub width: usize,
    pub filters: Tensor,
    pub bias: Tensor,
}

/// All widths, ascending.
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub layers: Vec<ConvLayer>,
}

impl ConvBank {
    /// Total pooled feature length: widths * filters-per-width.
    pub fn feature_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.filters.shape()[0])
            .sum()
    }

    pub fn max_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }
}

/// Seeds a bank of `t` filters per width, uniform in the init range with
/// zero biases; one stream per width so width-set changes never reshuffle
/// other widths.
pub fn init_conv_bank(widths: &[usize], t: usize, d: usize, seed: u64) -> Result<ConvBank> {
    if widths.is_empty() {
        return Err(Error::InvalidInput("need at least one filter width".into()));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) || widths[0] == 0 {
        return Err(Error::InvalidInput(format!(
            "filter widths must be positive and strictly increasing, got {widths:?}"
        )));
    }
    if t == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "filter count and dimension must be positive".into(),
        ));
    }
    let mut layers = Vec::with_capacity(widths.len());
    for &h in widths {
        let mut values = vec![0.0; t * h * d];
        let mut rng = seeds::stream(seed, "conv", h as u64);
        seeds::fill_uniform(&mut rng, &mut values, -FILTER_INIT_RANGE, FILTER_INIT_RANGE);
        layers.push(ConvLayer {
            width: h,
            filters: Tensor::param(vec![t, h * d], values)?,
            bias: Tensor::param(vec![t], vec![0.0; t])?,
        });
    }
    Ok(ConvBank { layers })
}

/// Encodes the valid sentence prefix to the pooled feature vector m,
/// returning the per-layer pooling choices so a later pass can replay the
/// exact same branches.
pub fn encode(
    tape: &mut Tape,
    bank: &ConvBank,
    embeddings: &Tensor,
    valid_len: usize,
) -> Result<(Tensor, Vec<Vec<ConvChoice>>)> {
    let mut pooled = Vec::with_capacity(bank.layers.len());
    let mut choices = Vec::with_capacity(bank.layers.len());
    for layer in &bank.layers {
        let (out, picks) =
            tape.text_conv_max(embeddings, &layer.filters, &layer.bias, layer.width, valid_len)?;
        pooled.push(out);
        choices.push(picks);
    }
    let views: Vec<&Tensor> = pooled.iter().collect();
    Ok((tape.concat(&views)?, choices))
}

/// Re-encodes with pooling branches pinned to an earlier recording.
pub fn encode_pinned(
    tape: &mut Tape,
    bank: &ConvBank,
    embeddings: &Tensor,
    valid_len: usize,
    choices: &[Vec<ConvChoice>],
) -> Result<Tensor> {
    if choices.len() != bank.layers.len() {
        return Err(Error::InvalidInput(format!(
            "{} pinned choice sets for {} conv layers",
            choices.len(),
            bank.layers.len()
        )));
    }
    let mut pooled = Vec::with_capacity(bank.layers.len());
    for (layer, picks) in bank.layers.iter().zip(choices) {
        pooled.push(tape.text_conv_max_pinned(
            embeddings,
            &layer.filters,
            &layer.bias,
            layer.width,
            valid_len,
            picks,
        )?);
    }
    let views: Vec<&Tensor> = pooled.iter().collect();
    tape.concat(&views)
}

/// Fuses the attention and pooled features and applies the softmax head.
/// Returns (probabilities, fused feature o).
pub fn classify(
    tape: &mut Tape,
    classifier: &Tensor,
    v: &Tensor,
    m: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let o = tape.concat(&[v, m])?;
    let logits = tape.matvec_t(classifier, &o)?;
    let classes = logits.numel();
    let probs = tape.masked_softmax(&logits, classes)?;
    Ok((probs, o))
}
