//! Evaluation, cross-validation, and human-readable artifacts: accuracy
//! tables, attention heatmaps, and memory-neighbor reports.
//!
//! Every artifact is a pure function of (model, data): emitting twice
//! produces byte-identical files. Fixed filenames live under the chosen
//! output directory: `results.json`, `heatmap.html` (+ `heatmap.json`),
//! `cmm_neighbors.tsv`, `source_memory.tsv`, `training_log.jsonl`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmm::{build_source_cmm, nearest_vocab_neighbors, CountTable};
use crate::corpus::{encode_doc, Domain, RawDoc, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, TraceMode};
use crate::tensor::Tape;
use crate::trainer::{fit, History, TrainConfig};

pub const RESULTS_FILE: &str = "results.json";
pub const HEATMAP_FILE: &str = "heatmap.html";
pub const HEATMAP_JSON_FILE: &str = "heatmap.json";
pub const CMM_NEIGHBORS_FILE: &str = "cmm_neighbors.tsv";
pub const SOURCE_MEMORY_FILE: &str = "source_memory.tsv";
pub const TRAINING_LOG_FILE: &str = "training_log.jsonl";

/// Index of the winning class; ties go to the lower index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of one sample under a frozen model.
pub fn predict(model: &Model, sample: &Sample) -> Result<usize> {
    let mut tape = Tape::no_grad();
    let out = model.forward_sample(&mut tape, sample, TraceMode::Record)?;
    Ok(argmax_lowest(&out.probs.values()))
}

/// Fraction of labeled samples whose predicted class matches the label.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty set".into()));
    }
    let mut correct = 0usize;
    for sample in samples {
        let label = sample
            .label
            .ok_or_else(|| Error::InvalidInput("evaluation needs labeled samples".into()))?;
        if predict(model, sample)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Per-fold accuracies with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config_digest: String,
}

impl EvalResult {
    fn from_folds(folds: Vec<f64>, config_digest: String) -> EvalResult {
        let n = folds.len() as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let var = folds.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        EvalResult {
            folds,
            mean,
            std: var.sqrt(),
            config_digest,
        }
    }
}

fn digest_of(config: &TrainConfig, folds: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    hasher.update(folds.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Trains one model for one fold and scores the held-out target slice
/// (None when there is nothing to score). Everything (vocabulary,
/// memory, model) is rebuilt from the fold's training documents so no
/// test text leaks into construction.
fn run_fold(
    source_docs: &[RawDoc],
    target_train: &[RawDoc],
    target_test: &[RawDoc],
    pretrained: Option<&std::collections::HashMap<String, Vec<f64>>>,
    config: &TrainConfig,
) -> Result<(Model, History, Option<f64>)> {
    let stripped: Vec<RawDoc> = target_train
        .iter()
        .map(|doc| RawDoc {
            tokens: doc.tokens.clone(),
            label: None,
        })
        .collect();
    let vocab = Vocabulary::build(source_docs.iter().chain(&stripped));
    let counts = CountTable::from_docs(source_docs, &vocab)?;
    let memory = build_source_cmm(&counts, &vocab, config.memory_size)?;
    let model = Model::new(
        vocab.clone(),
        memory,
        pretrained,
        config.model_dims(),
        config.seed,
    )?;

    let source: Vec<Sample> = source_docs
        .iter()
        .map(|doc| encode_doc(doc, &vocab, config.max_len, Domain::Source))
        .collect();
    let target: Vec<Sample> = stripped
        .iter()
        .map(|doc| encode_doc(doc, &vocab, config.max_len, Domain::Target))
        .collect();
    let history = fit(&model, &source, &target, config)?;

    let accuracy = if target_test.is_empty() {
        None
    } else {
        let test: Vec<Sample> = target_test
            .iter()
            .map(|doc| encode_doc(doc, &vocab, config.max_len, Domain::Target))
            .collect();
        Some(evaluate(&model, &test)?)
    };
    Ok((model, history, accuracy))
}

/// Trains one model on the full corpora (no held-out target fold).
pub fn train_full(
    source_docs: &[RawDoc],
    target_docs: &[RawDoc],
    pretrained: Option<&std::collections::HashMap<String, Vec<f64>>>,
    config: &TrainConfig,
) -> Result<(Model, History)> {
    let (model, history, _) = run_fold(source_docs, target_docs, &[], pretrained, config)?;
    Ok((model, history))
}

/// K-fold cross-validation over the target documents: each fold trains on
/// the full labeled source corpus plus the remaining target documents
/// with labels stripped, then scores the held-out target fold. Folds are
/// independent jobs; `jobs` bounds how many run at once, and results are
/// always collected in fold order. With a checkpoint directory, each
/// fold's trained model lands in `fold_<i>.ckpt.json`.
pub fn cross_validate(
    source_docs: &[RawDoc],
    target_docs: &[RawDoc],
    pretrained: Option<&std::collections::HashMap<String, Vec<f64>>>,
    config: &TrainConfig,
    folds: usize,
    jobs: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<EvalResult> {
    if folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs k >= 2".into()));
    }
    if jobs == 0 {
        return Err(Error::InvalidInput("jobs must be positive".into()));
    }
    if target_docs.iter().any(|d| d.label.is_none()) {
        return Err(Error::InvalidInput(
            "cross-validation needs labeled target documents for testing".into(),
        ));
    }
    config.validate()?;
    let plan = crate::corpus::make_folds(target_docs.len(), folds, config.seed)?;

    let mut accuracies = vec![0.0; folds];
    let mut wave_start = 0;
    while wave_start < folds {
        let wave_end = (wave_start + jobs).min(folds);
        let results: Vec<Result<(f64, Option<String>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (wave_start..wave_end)
                .map(|fold| {
                    let plan = &plan;
                    let config = config.clone();
                    let want_checkpoint = checkpoint_dir.is_some();
                    scope.spawn(move || -> Result<(f64, Option<String>)> {
                        let train_docs: Vec<RawDoc> = plan
                            .train_indices(fold)
                            .into_iter()
                            .map(|i| target_docs[i].clone())
                            .collect();
                        let test_docs: Vec<RawDoc> = plan
                            .test_indices(fold)
                            .into_iter()
                            .map(|i| target_docs[i].clone())
                            .collect();
                        let (model, _, accuracy) =
                            run_fold(source_docs, &train_docs, &test_docs, pretrained, &config)?;
                        let accuracy = accuracy.expect("cv folds always hold out test documents");
                        let checkpoint = if want_checkpoint {
                            let ckpt = crate::trainer::Checkpoint::capture(&model, &config);
                            Some(serde_json::to_string(&ckpt)?)
                        } else {
                            None
                        };
                        Ok((accuracy, checkpoint))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold job panicked"))
                .collect()
        });
        for (offset, result) in results.into_iter().enumerate() {
            let fold = wave_start + offset;
            let (accuracy, checkpoint) = result?;
            accuracies[fold] = accuracy;
            if let (Some(dir), Some(json)) = (checkpoint_dir, checkpoint) {
                std::fs::write(dir.join(format!("fold_{fold}.ckpt.json")), json)?;
            }
        }
        wave_start = wave_end;
    }
    Ok(EvalResult::from_folds(accuracies, digest_of(config, folds)))
}

/// One heatmap row: tokens with per-category averaged attention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub tokens: Vec<String>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub predicted: usize,
    pub label: Option<usize>,
}

/// Averages the K per-query attention distributions of one category.
fn mean_attention(weights: &[crate::tensor::Tensor], valid: usize) -> Vec<f64> {
    let k = weights.len() as f64;
    let mut mean = vec![0.0; valid];
    for w in weights {
        for (slot, value) in mean.iter_mut().zip(w.values()) {
            *slot += value / k;
        }
    }
    mean
}

/// Runs the model over the samples and collects heatmap rows.
pub fn heatmap_records(model: &Model, samples: &[Sample]) -> Result<Vec<HeatmapRecord>> {
    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut tape = Tape::no_grad();
        let out = model.forward_sample(&mut tape, sample, TraceMode::Record)?;
        let tokens: Vec<String> = sample.tokens[..sample.valid_len]
            .iter()
            .map(|id| model.vocab.word(*id).to_string())
            .collect();
        records.push(HeatmapRecord {
            tokens,
            positive: mean_attention(&out.attention.positive, sample.valid_len),
            negative: mean_attention(&out.attention.negative, sample.valid_len),
            predicted: argmax_lowest(&out.probs.values()),
            label: sample.label,
        });
    }
    Ok(records)
}

fn heatmap_html(records: &[HeatmapRecord]) -> String {
    let mut html = String::new();
    html.push_str(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Category attention</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         .sample { margin-bottom: 1.5em; }\n\
         .row { margin: 0.2em 0; line-height: 1.9; }\n\
         .tag { color: #555; font-size: 0.85em; margin-right: 0.6em; }\n\
         span.tok { padding: 0.1em 0.25em; border-radius: 3px; margin-right: 0.15em; }\n\
         </style>\n</head>\n<body>\n<h1>Category attention weights</h1>\n",
    );
    for (i, record) in records.iter().enumerate() {
        let label = match record.label {
            Some(l) => l.to_string(),
            None => "?".to_string(),
        };
        let _ = write!(
            html,
            "<div class=\"sample\">\n<div class=\"tag\">#{i} predicted={} label={label}</div>\n",
            record.predicted
        );
        for (name, rgb, weights) in [
            ("positive", "46,125,50", &record.positive),
            ("negative", "21,101,192", &record.negative),
        ] {
            let max = weights.iter().cloned().fold(0.0f64, f64::max);
            let _ = write!(html, "<div class=\"row\"><span class=\"tag\">{name}</span>");
            for (token, weight) in record.tokens.iter().zip(weights) {
                // The heaviest token gets full intensity.
                let intensity = if max > 0.0 { weight / max } else { 0.0 };
                let _ = write!(
                    html,
                    "<span class=\"tok\" style=\"background: rgba({rgb},{intensity})\" \
                     title=\"{weight}\">{}</span>",
                    html_escape(token)
                );
            }
            html.push_str("</div>\n");
        }
        html.push_str("</div>\n");
    }
    html.push_str("</body>\n</html>\n");
    html
}

fn html_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `heatmap.html` and the exact-valued `heatmap.json` sidecar.
pub fn emit_heatmap(model: &Model, samples: &[Sample], out_dir: &Path) -> Result<()> {
    let records = heatmap_records(model, samples)?;
    std::fs::write(out_dir.join(HEATMAP_FILE), heatmap_html(&records))?;
    let json = serde_json::to_string_pretty(&records)?;
    std::fs::write(out_dir.join(HEATMAP_JSON_FILE), json)?;
    Ok(())
}

/// Writes `cmm_neighbors.tsv` (target slots: before/after neighbor
/// columns against the current embedding table) and `source_memory.tsv`
/// (ranked extracted words per category).
pub fn emit_cmm_report(model: &Model, n: usize, out_dir: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("neighbor count must be positive".into()));
    }
    let table = model.embedding.values();
    let mut tsv = String::from(
        "category\tslot\trank\tbefore_word\tbefore_similarity\tafter_word\tafter_similarity\n",
    );
    let m = model.target_memory.positive.len();
    for (flat, slot) in (0..model.target_memory.slot_count()).map(|i| (i, model.target_memory.slot(i))) {
        let category = if flat < m { "positive" } else { "negative" };
        let index = if flat < m { flat } else { flat - m };
        let before = nearest_vocab_neighbors(
            &model.target_memory.initial[flat],
            &table,
            &model.vocab,
            n,
        );
        let after = nearest_vocab_neighbors(&slot.values(), &table, &model.vocab, n);
        for (rank, (b, a)) in before.iter().zip(&after).enumerate() {
            let _ = writeln!(
                tsv,
                "{category}\t{index}\t{}\t{}\t{}\t{}\t{}",
                rank + 1,
                b.0,
                b.1,
                a.0,
                a.1
            );
        }
    }
    std::fs::write(out_dir.join(CMM_NEIGHBORS_FILE), tsv)?;

    let mut source = String::from("category\trank\tword\tscore\n");
    for (category, words) in [
        ("positive", &model.source_memory.positive),
        ("negative", &model.source_memory.negative),
    ] {
        for (rank, word) in words.iter().enumerate() {
            let _ = writeln!(
                source,
                "{category}\t{}\t{}\t{}",
                rank + 1,
                model.vocab.word(word.id),
                word.score
            );
        }
    }
    std::fs::write(out_dir.join(SOURCE_MEMORY_FILE), source)?;
    Ok(())
}

/// One line per step: the loss terms under their short schema names.
#[derive(Serialize)]
struct LogLine {
    step: usize,
    l_c: f64,
    l_d: f64,
    l_i: f64,
    total: f64,
}

/// Writes `training_log.jsonl`, one JSON object per step.
pub fn write_training_log(history: &History, out_dir: &Path) -> Result<()> {
    let mut out = String::new();
    for (step, b) in history.steps.iter().enumerate() {
        let line = LogLine {
            step,
            l_c: b.supervised,
            l_d: b.distribution,
            l_i: b.alignment,
            total: b.total,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    std::fs::write(out_dir.join(TRAINING_LOG_FILE), out)?;
    Ok(())
}

/// Writes `results.json` from any serializable result payload.
pub fn write_results<T: Serialize>(payload: &T, out_dir: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(payload)?;
    std::fs::write(out_dir.join(RESULTS_FILE), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::model::ModelDims;

    fn toy_config() -> TrainConfig {
        TrainConfig {
            memory_size: 3,
            matched_queries: 2,
            alpha: 0.05,
            beta: 0.01,
            dim: 5,
            widths: vec![2, 3],
            filters_per_width: 2,
            batch_size: 4,
            learning_rate: 0.01,
            epochs: 2,
            seed: 3,
            max_len: 10,
            val_fraction: 0.25,
        }
    }

    fn docs(pairs: &[(usize, &str)]) -> Vec<RawDoc> {
        pairs
            .iter()
            .map(|(label, text)| RawDoc {
                tokens: tokenize(text),
                label: Some(*label),
            })
            .collect()
    }

    fn source_docs() -> Vec<RawDoc> {
        docs(&[
            (1, "good fun great movie with a fine cast"),
            (1, "great plot and a good ending"),
            (1, "fun and fine and great"),
            (1, "good good fun plot"),
            (0, "bad sad awful movie with a poor cast"),
            (0, "poor plot and a bad ending"),
            (0, "sad and awful and poor"),
            (0, "bad bad sad plot"),
        ])
    }

    fn target_docs() -> Vec<RawDoc> {
        docs(&[
            (1, "fine show with good drama"),
            (1, "great drama show"),
            (0, "awful show with bad drama"),
            (0, "sad drama show"),
        ])
    }

    fn toy_model() -> Model {
        let source = source_docs();
        let vocab = Vocabulary::build(&source);
        let counts = CountTable::from_docs(&source, &vocab).unwrap();
        let memory = build_source_cmm(&counts, &vocab, 3).unwrap();
        let dims = ModelDims {
            dim: 4,
            widths: vec![2],
            filters_per_width: 2,
            memory_size: 3,
            matched_queries: 2,
        };
        Model::new(vocab, memory, None, dims, 1).unwrap()
    }

    #[test]
    fn argmax_prefers_the_lower_index_on_ties() {
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[0.2, 0.8]), 1);
        assert_eq!(argmax_lowest(&[0.4, 0.2, 0.4]), 0);
    }

    #[test]
    fn evaluation_counts_correct_predictions() {
        let model = toy_model();
        // Zero classifier → uniform probabilities → tie → class 0 always.
        model
            .classifier
            .set_values(&vec![0.0; model.classifier.numel()]);
        let vocab = &model.vocab;
        let mk = |label: usize| {
            let doc = RawDoc {
                tokens: tokenize("good movie plot"),
                label: Some(label),
            };
            encode_doc(&doc, vocab, 6, Domain::Source)
        };
        let samples = vec![mk(0), mk(0), mk(0), mk(1)];
        let accuracy = evaluate(&model, &samples).unwrap();
        assert!((accuracy - 0.75).abs() < 1e-12);

        assert!(evaluate(&model, &[]).is_err());
        let mut unlabeled = mk(0);
        unlabeled.label = None;
        assert!(evaluate(&model, &[unlabeled]).is_err());
    }

    #[test]
    fn cross_validation_is_deterministic_and_structured() {
        let config = toy_config();
        let result = cross_validate(&source_docs(), &target_docs(), None, &config, 2, 1, None).unwrap();
        assert_eq!(result.folds.len(), 2);
        assert!((result.mean - result.folds.iter().sum::<f64>() / 2.0).abs() < 1e-15);
        assert!(result.folds.iter().all(|a| (0.0..=1.0).contains(a)));
        assert_eq!(result.config_digest.len(), 64);

        let again = cross_validate(&source_docs(), &target_docs(), None, &config, 2, 1, None).unwrap();
        assert_eq!(result, again);
    }

    #[test]
    fn parallel_folds_match_serial_folds() {
        let config = toy_config();
        let serial = cross_validate(&source_docs(), &target_docs(), None, &config, 4, 1, None).unwrap();
        let parallel = cross_validate(&source_docs(), &target_docs(), None, &config, 4, 3, None).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn cross_validation_rejects_degenerate_requests() {
        let config = toy_config();
        assert!(cross_validate(&source_docs(), &target_docs(), None, &config, 1, 1, None).is_err());
        assert!(cross_validate(&source_docs(), &target_docs(), None, &config, 2, 0, None).is_err());
        let mut unlabeled = target_docs();
        unlabeled[0].label = None;
        assert!(cross_validate(&source_docs(), &unlabeled, None, &config, 2, 1, None).is_err());
    }

    #[test]
    fn heatmap_outputs_round_trip_and_re_emit_identically() {
        let model = toy_model();
        let doc = RawDoc {
            tokens: tokenize("good movie with bad plot"),
            label: Some(1),
        };
        let samples = vec![encode_doc(&doc, &model.vocab, 8, Domain::Source)];
        let records = heatmap_records(&model, &samples).unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        assert_eq!(record.tokens.len(), samples[0].valid_len);
        let sum_pos: f64 = record.positive.iter().sum();
        let sum_neg: f64 = record.negative.iter().sum();
        assert!((sum_pos - 1.0).abs() < 1e-6);
        assert!((sum_neg - 1.0).abs() < 1e-6);

        let dir = tempfile::tempdir().unwrap();
        emit_heatmap(&model, &samples, dir.path()).unwrap();
        let json = std::fs::read_to_string(dir.path().join(HEATMAP_JSON_FILE)).unwrap();
        let parsed: Vec<HeatmapRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0].positive, record.positive, "exact float round-trip");
        assert_eq!(parsed[0].negative, record.negative);

        let html_once = std::fs::read(dir.path().join(HEATMAP_FILE)).unwrap();
        emit_heatmap(&model, &samples, dir.path()).unwrap();
        let html_twice = std::fs::read(dir.path().join(HEATMAP_FILE)).unwrap();
        assert_eq!(html_once, html_twice, "re-emission must be byte-identical");
        let html = String::from_utf8(html_once).unwrap();
        assert!(html.contains("rgba(46,125,50,1)"), "max token gets full intensity");
    }

    #[test]
    fn cmm_report_lists_known_neighbors_first() {
        let model = toy_model();
        // Point slot 0 of the positive bank at the embedding row of "good".
        let good = model.vocab.id("good") as usize;
        let d = model.dims.dim;
        let row = model.embedding.values()[good * d..(good + 1) * d].to_vec();
        model.target_memory.positive[0].set_values(&row);

        let dir = tempfile::tempdir().unwrap();
        emit_cmm_report(&model, 3, dir.path()).unwrap();
        let tsv = std::fs::read_to_string(dir.path().join(CMM_NEIGHBORS_FILE)).unwrap();
        let first_data_line = tsv.lines().nth(1).unwrap();
        let fields: Vec<&str> = first_data_line.split('\t').collect();
        assert_eq!(fields[0], "positive");
        assert_eq!(fields[1], "0");
        assert_eq!(fields[2], "1");
        assert_eq!(fields[5], "good", "after column starts at the planted word");

        let source_tsv = std::fs::read_to_string(dir.path().join(SOURCE_MEMORY_FILE)).unwrap();
        assert!(source_tsv.starts_with("category\trank\tword\tscore\n"));
        assert!(source_tsv.lines().count() > 1);

        emit_cmm_report(&model, 3, dir.path()).unwrap();
        let tsv_again = std::fs::read_to_string(dir.path().join(CMM_NEIGHBORS_FILE)).unwrap();
        assert_eq!(tsv, tsv_again);
        assert!(emit_cmm_report(&model, 0, dir.path()).is_err());
    }

    #[test]
    fn training_log_is_one_json_object_per_step() {
        let history = History {
            steps: vec![
                crate::losses::LossBreakdown {
                    supervised: 0.7,
                    distribution: -0.1,
                    alignment: 0.2,
                    total: 0.697,
                },
                crate::losses::LossBreakdown {
                    supervised: 0.6,
                    distribution: -0.2,
                    alignment: 0.1,
                    total: 0.591,
                },
            ],
            val_accuracy: vec![0.5],
            best_epoch: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        write_training_log(&history, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(TRAINING_LOG_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["step"], 0);
        assert_eq!(first["l_c"], 0.7);
        assert_eq!(first["l_d"], -0.1);
        assert_eq!(first["l_i"], 0.2);
        assert_eq!(first["total"], 0.697);
    }
}
