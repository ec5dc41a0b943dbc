//! Joint training: paired source/target mini-batches, the three-term
//! objective, Adam updates with global-norm clipping, and
//! validation-based checkpoint selection.
//!
//! Every run is a pure function of (seed, data, config): batch order,
//! domain pairing, and the validation split all come from named seed
//! streams, and the optimizer is plain arithmetic, so two runs with the
//! same inputs produce bitwise-identical parameters.

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Sample};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown};
use crate::model::{Model, ModelDims, TraceMode};
use crate::seeds;
use crate::tensor::{Tape, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Memory entries per category (M).
    pub memory_size: usize,
    /// Queries matched per category per sample (K).
    pub matched_queries: usize,
    /// Weight of the attention-separation term.
    pub alpha: f64,
    /// Weight of the feature-alignment term.
    pub beta: f64,
    /// Embedding dimension.
    pub dim: usize,
    /// Convolution window widths, ascending.
    pub widths: Vec<usize>,
    /// Filters per width (T).
    pub filters_per_width: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fixed encoded sentence length; longer documents lose their tail.
    pub max_len: usize,
    /// Share of labeled data held out for model selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            memory_size: 50,
            matched_queries: 5,
            alpha: 0.05,
            beta: 0.01,
            dim: 300,
            widths: vec![3, 4, 5],
            filters_per_width: 100,
            batch_size: 128,
            learning_rate: 0.001,
            epochs: 10,
            seed: 0,
            max_len: 256,
            val_fraction: 0.10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model_dims().validate()?;
        if self.widths.is_empty() || self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "widths must be non-empty and strictly increasing".into(),
            ));
        }
        if self.widths[0] == 0 {
            return Err(Error::InvalidInput("widths must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_len == 0 {
            return Err(Error::InvalidInput(
                "batch size, epochs, and max_len must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput("alpha must be non-negative".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput("beta must be non-negative".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidInput(
                "val_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            dim: self.dim,
            widths: self.widths.clone(),
            filters_per_width: self.filters_per_width,
            memory_size: self.memory_size,
            matched_queries: self.matched_queries,
        }
    }

    /// True when the target domain influences the objective at all.
    pub fn uses_target(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam {
    params: Vec<Tensor>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub learning_rate: f64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, learning_rate: f64) -> Adam {
        let first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            first,
            second,
            step: 0,
            learning_rate,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the current gradients. Moments advance
    /// even at zero learning rate, so schedules stay reproducible.
    pub fn step(&mut self) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, param) in self.params.iter().enumerate() {
            let grad = param.grad().ok_or_else(|| {
                Error::Autodiff("optimizer parameter lost its gradient buffer".into())
            })?;
            let mut values = param.values();
            for (j, g) in grad.iter().enumerate() {
                let m = &mut self.first[i][j];
                let v = &mut self.second[i][j];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                values[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            param.set_values(&values);
        }
        Ok(())
    }
}

/// Scales all gradients so their joint Euclidean norm is at most `cap`.
pub fn clip_global_norm(params: &[Tensor], cap: f64) -> Result<f64> {
    let mut total = 0.0;
    for param in params {
        let grad = param
            .grad()
            .ok_or_else(|| Error::Autodiff("parameter has no gradient to clip".into()))?;
        total += grad.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = total.sqrt();
    if norm > cap {
        let scale = cap / norm;
        for param in params {
            let scaled: Vec<f64> = param.grad().unwrap().iter().map(|g| g * scale).collect();
            param.set_grad(&scaled);
        }
    }
    Ok(norm)
}

fn forward_batch<'a>(
    tape: &mut Tape,
    model: &Model,
    batch: &[&'a Sample],
) -> Result<(Vec<crate::model::SampleForward>, Vec<usize>)> {
    let mut outputs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for sample in batch {
        outputs.push(model.forward_sample(tape, sample, TraceMode::Record)?);
        if let Some(label) = sample.label {
            labels.push(label);
        }
    }
    Ok((outputs, labels))
}

/// One optimization step over a paired mini-batch. Returns the pre-update
/// loss breakdown. When both extra weights are zero the target batch is
/// never touched, so it provably cannot influence the update.
pub fn train_step(
    model: &Model,
    optimizer: &mut Adam,
    source_batch: &[&Sample],
    target_batch: &[&Sample],
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    if source_batch.is_empty() {
        return Err(Error::InvalidInput("empty source batch".into()));
    }
    if config.uses_target() && target_batch.len() != source_batch.len() {
        return Err(Error::InvalidInput(format!(
            "paired batches must match: {} source vs {} target",
            source_batch.len(),
            target_batch.len()
        )));
    }
    let params = model.params();
    for param in &params {
        param.zero_grad();
    }

    let mut tape = Tape::new();
    let (source_out, labels) = forward_batch(&mut tape, model, source_batch)?;
    if labels.len() != source_batch.len() {
        return Err(Error::InvalidInput(
            "every source sample must carry a label".into(),
        ));
    }
    let probs: Vec<Tensor> = source_out.iter().map(|o| o.probs.clone()).collect();
    let supervised = losses::supervised_loss(&mut tape, &probs, &labels)?;

    let (distribution, alignment) = if config.uses_target() {
        let (target_out, _) = forward_batch(&mut tape, model, target_batch)?;
        let source_attn: Vec<_> = source_out.iter().map(|o| o.attention.clone()).collect();
        let target_attn: Vec<_> = target_out.iter().map(|o| o.attention.clone()).collect();
        let distribution = if config.alpha > 0.0 {
            let (l_d, _) = losses::distribution_loss(&mut tape, &source_attn, &target_attn, None)?;
            Some(l_d)
        } else {
            None
        };
        let alignment = if config.beta > 0.0 {
            let source_feat: Vec<_> = source_out.iter().map(|o| o.feature.clone()).collect();
            let target_feat: Vec<_> = target_out.iter().map(|o| o.feature.clone()).collect();
            Some(losses::mmd_loss(&mut tape, &source_feat, &target_feat)?)
        } else {
            None
        };
        (distribution, alignment)
    } else {
        (None, None)
    };

    let (total, breakdown) = losses::combine(
        &mut tape,
        &supervised,
        distribution.as_ref(),
        alignment.as_ref(),
        config.alpha,
        config.beta,
    )?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: optimizer.step_count() as usize,
            breakdown,
        });
    }

    tape.backward(&total)?;
    clip_global_norm(&params, GRAD_CLIP_NORM)?;
    optimizer.step()?;
    model.zero_pad_row();
    Ok(breakdown)
}

/// Loss and validation trajectory of one `fit` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<LossBreakdown>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

/// Splits labeled samples into train/validation index sets, seeded.
pub fn validation_split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidInput(
            "need at least two labeled samples to split off validation".into(),
        ));
    }
    let mut rng = seeds::stream(seed, "val-split", 0);
    let order = seeds::shuffled_indices(n, &mut rng);
    let mut val_count = ((n as f64) * val_fraction).round() as usize;
    val_count = val_count.clamp(1, n - 1);
    let val = order[..val_count].to_vec();
    let train = order[val_count..].to_vec();
    Ok((train, val))
}

/// Trains in place for the configured epochs, scoring each epoch on a
/// held-out labeled split, and leaves the model at the best-epoch
/// parameters (earliest epoch wins ties).
pub fn fit(model: &Model, source: &[Sample], target: &[Sample], config: &TrainConfig) -> Result<History> {
    config.validate()?;
    if config.uses_target() && target.is_empty() {
        return Err(Error::InvalidInput(
            "the objective weights require target samples".into(),
        ));
    }
    let (train_idx, val_idx) = validation_split(source.len(), config.val_fraction, config.seed)?;
    let train: Vec<&Sample> = train_idx.iter().map(|i| &source[*i]).collect();
    let val: Vec<Sample> = val_idx.iter().map(|i| source[*i].clone()).collect();

    let mut optimizer = Adam::new(model.params(), config.learning_rate);
    let mut history = History {
        steps: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;

    for epoch in 0..config.epochs {
        let batches = corpus::make_batches(train.len(), config.batch_size, config.seed, epoch as u64)?;
        let mut target_order = TargetCycle::new(target.len(), config.seed, epoch as u64);
        for batch in batches {
            let source_batch: Vec<&Sample> = batch.iter().map(|i| train[*i]).collect();
            let target_batch: Vec<&Sample> = if config.uses_target() {
                target_order
                    .take(source_batch.len())
                    .into_iter()
                    .map(|i| &target[i])
                    .collect()
            } else {
                Vec::new()
            };
            let breakdown = train_step(model, &mut optimizer, &source_batch, &target_batch, config)?;
            history.steps.push(breakdown);
        }

        let accuracy = crate::report::evaluate(model, &val)?;
        history.val_accuracy.push(accuracy);
        let better = match &best {
            Some((best_acc, _)) => accuracy > *best_acc,
            None => true,
        };
        if better {
            best = Some((accuracy, model.snapshot()));
            history.best_epoch = epoch;
        }
    }

    let (_, snapshot) = best.expect("epochs >= 1 guarantees a best checkpoint");
    model.restore(&snapshot)?;
    Ok(history)
}

/// Endless seeded walk over target indices: a fresh shuffle per
/// exhaustion, all derived from (seed, epoch, round).
struct TargetCycle {
    n: usize,
    seed: u64,
    epoch: u64,
    round: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl TargetCycle {
    fn new(n: usize, seed: u64, epoch: u64) -> TargetCycle {
        TargetCycle {
            n,
            seed,
            epoch,
            round: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor >= self.order.len() {
                let label = format!("target-cycle-{}", self.epoch);
                let mut rng = seeds::stream(self.seed, &label, self.round);
                self.order = seeds::shuffled_indices(self.n, &mut rng);
                self.cursor = 0;
                self.round += 1;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// A self-contained serialized model: everything needed to rebuild and
/// apply it, plus the vocabulary digest for integrity checks.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab_words: Vec<String>,
    pub vocab_hash: String,
    pub source_memory: crate::cmm::SourceMemory,
    pub target_initial: Vec<Vec<f64>>,
    pub params: Vec<Vec<f64>>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn capture(model: &Model, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            vocab_words: model.vocab.words().to_vec(),
            vocab_hash: model.vocab.hash_hex(),
            source_memory: model.source_memory.clone(),
            target_initial: model.target_memory.initial.clone(),
            params: model.snapshot(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let json = crate::error::read_file(path)?;
        let checkpoint: Checkpoint = serde_json::from_str(&json)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        Ok(checkpoint)
    }

    /// Reconstructs the model exactly as saved.
    pub fn rebuild(&self) -> Result<Model> {
        let words: Vec<String> = self
            .vocab_words
            .iter()
            .skip(2) // reserved entries are implicit
            .cloned()
            .collect();
        let vocab = crate::corpus::Vocabulary::from_words(words);
        if vocab.hash_hex() != self.vocab_hash {
            return Err(Error::Checkpoint(
                "vocabulary digest mismatch: checkpoint is corrupt".into(),
            ));
        }
        let model = Model::new(
            vocab,
            self.source_memory.clone(),
            None,
            self.config.model_dims(),
            self.config.seed,
        )?;
        model.restore(&self.params)?;
        let mut target = model.target_memory.clone();
        target.initial = self.target_initial.clone();
        let model = Model {
            target_memory: target,
            ..model
        };
        model.zero_pad_row();
        Ok(model)
    }
}
