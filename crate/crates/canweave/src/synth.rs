//! Synthetic two-domain sentiment corpus generator.
//!
//! The vocabulary is partitioned into a shared pivot lexicon (positive
//! and negative halves), one domain-specific sentiment lexicon per
//! domain (again split by polarity, disjoint across domains), and
//! neutral filler words. Every document mixes sentiment tokens with
//! fillers; each sentiment token comes from the domain lexicon with
//! probability `shift_ratio`, otherwise from the shared pivots. The
//! label is the planted polarity majority among the sentiment tokens.
//!
//! Word shapes are plain lowercase alphanumerics (`pivp03`, `srcn12`,
//! `tgtp07`, `fil042`) so they pass through tokenization untouched.
//! Generation is a pure function of the generator parameters, including
//! the seed, and the ground-truth lexicons are written alongside the
//! corpora.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::RawDoc;
use crate::error::{Error, Result};
use crate::seeds;

pub const SOURCE_FILE: &str = "source.tsv";
pub const TARGET_FILE: &str = "target.tsv";
pub const LEXICON_FILE: &str = "lexicons.json";

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total vocabulary size across all partitions.
    pub vocab_size: usize,
    /// Shared sentiment words, split evenly between polarities.
    pub pivot_lexicon: usize,
    /// Domain-specific sentiment words per domain, split evenly.
    pub domain_lexicon: usize,
    pub docs_per_domain: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// How many of those tokens carry sentiment.
    pub sentiment_per_doc: usize,
    /// Probability a sentiment token uses the domain lexicon instead of
    /// a pivot; 0 makes both domains draw from identical lexicons.
    pub shift_ratio: f64,
    /// Probability a sentiment token contradicts the document's polarity.
    pub polarity_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 200,
            pivot_lexicon: 20,
            domain_lexicon: 40,
            docs_per_domain: 500,
            doc_len: 12,
            sentiment_per_doc: 6,
            shift_ratio: 0.7,
            polarity_noise: 0.2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pivot_lexicon < 2 || self.pivot_lexicon % 2 != 0 {
            return Err(Error::InvalidInput(
                "pivot lexicon must be even and at least 2".into(),
            ));
        }
        if self.domain_lexicon < 2 || self.domain_lexicon % 2 != 0 {
            return Err(Error::InvalidInput(
                "domain lexicon must be even and at least 2".into(),
            ));
        }
        let sentiment_words = self.pivot_lexicon + 2 * self.domain_lexicon;
        if self.vocab_size <= sentiment_words {
            return Err(Error::InvalidInput(format!(
                "vocab size {} leaves no filler words after {} sentiment words",
                self.vocab_size, sentiment_words
            )));
        }
        if self.docs_per_domain < 2 {
            return Err(Error::InvalidInput(
                "need at least two documents per domain".into(),
            ));
        }
        if self.sentiment_per_doc == 0 || self.sentiment_per_doc > self.doc_len {
            return Err(Error::InvalidInput(
                "sentiment tokens per document must be in 1..=doc_len".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.shift_ratio) {
            return Err(Error::InvalidInput("shift ratio must be in [0, 1]".into()));
        }
        if !(0.0..=0.5).contains(&self.polarity_noise) {
            return Err(Error::InvalidInput(
                "polarity noise must be in [0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth word partitions, written next to the corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub pivot_positive: Vec<String>,
    pub pivot_negative: Vec<String>,
    pub source_positive: Vec<String>,
    pub source_negative: Vec<String>,
    pub target_positive: Vec<String>,
    pub target_negative: Vec<String>,
    pub fillers: Vec<String>,
}

impl Lexicons {
    fn build(spec: &SynthSpec) -> Lexicons {
        let half_pivot = spec.pivot_lexicon / 2;
        let half_domain = spec.domain_lexicon / 2;
        let filler_count = spec.vocab_size - spec.pivot_lexicon - 2 * spec.domain_lexicon;
        let series = |prefix: &str, count: usize| -> Vec<String> {
            (0..count).map(|i| format!("{prefix}{i:03}")).collect()
        };
        Lexicons {
            pivot_positive: series("pivp", half_pivot),
            pivot_negative: series("pivn", half_pivot),
            source_positive: series("srcp", half_domain),
            source_negative: series("srcn", half_domain),
            target_positive: series("tgtp", half_domain),
            target_negative: series("tgtn", half_domain),
            fillers: series("fil", filler_count),
        }
    }

    /// Polarity of a word: +1 planted positive, -1 planted negative, 0 filler.
    pub fn polarity(&self, word: &str) -> i32 {
        if self.pivot_positive.iter().any(|w| w == word)
            || self.source_positive.iter().any(|w| w == word)
            || self.target_positive.iter().any(|w| w == word)
        {
            1
        } else if self.pivot_negative.iter().any(|w| w == word)
            || self.source_negative.iter().any(|w| w == word)
            || self.target_negative.iter().any(|w| w == word)
        {
            -1
        } else {
            0
        }
    }
}

/// A generated pair of corpora plus their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub source: Vec<RawDoc>,
    pub target: Vec<RawDoc>,
    pub lexicons: Lexicons,
}

#[derive(Clone, Copy)]
enum Side {
    Source,
    Target,
}

fn pick<'a>(rng: &mut rand_chacha::ChaCha8Rng, words: &'a [String]) -> &'a str {
    &words[seeds::below(rng, words.len())]
}

fn generate_domain(spec: &SynthSpec, lex: &Lexicons, side: Side) -> Vec<RawDoc> {
    let (label_stream, domain_pos, domain_neg) = match side {
        Side::Source => ("synth-source", &lex.source_positive, &lex.source_negative),
        Side::Target => ("synth-target", &lex.target_positive, &lex.target_negative),
    };
    let mut docs = Vec::with_capacity(spec.docs_per_domain);
    for index in 0..spec.docs_per_domain {
        let mut rng = seeds::stream(spec.seed, label_stream, index as u64);
        // The first two documents pin one example of each class so tiny
        // corpora still cover both.
        let intent_positive = match index {
            0 => true,
            1 => false,
            _ => seeds::unit_f64(&mut rng) < 0.5,
        };

        let mut sentiment_tokens: Vec<String> = (0..spec.sentiment_per_doc)
            .map(|_| {
                let aligned = seeds::unit_f64(&mut rng) >= spec.polarity_noise;
                let positive = aligned == intent_positive;
                let domain_specific = seeds::unit_f64(&mut rng) < spec.shift_ratio;
                let pool = match (domain_specific, positive) {
                    (true, true) => domain_pos,
                    (true, false) => domain_neg,
                    (false, true) => &lex.pivot_positive,
                    (false, false) => &lex.pivot_negative,
                };
                pick(&mut rng, pool).to_string()
            })
            .collect();

        // The label is the planted majority; break exact ties by forcing
        // the first sentiment slot to the intended polarity (a pivot, so
        // both domains stay comparable).
        let score: i32 = sentiment_tokens.iter().map(|w| lex.polarity(w)).sum();
        let label = if score > 0 {
            1
        } else if score < 0 {
            0
        } else {
            let pool = if intent_positive {
                &lex.pivot_positive
            } else {
                &lex.pivot_negative
            };
            sentiment_tokens[0] = pick(&mut rng, pool).to_string();
            usize::from(intent_positive)
        };

        let mut tokens: Vec<String> = sentiment_tokens;
        tokens.extend(
            (0..spec.doc_len - spec.sentiment_per_doc)
                .map(|_| pick(&mut rng, &lex.fillers).to_string()),
        );
        // Shuffle positions so planted words carry no positional signal.
        for i in (1..tokens.len()).rev() {
            let j = seeds::below(&mut rng, i + 1);
            tokens.swap(i, j);
        }
        docs.push(RawDoc {
            tokens,
            label: Some(label),
        });
    }
    docs
}

/// Generates both corpora and the ground-truth lexicons.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let lexicons = Lexicons::build(spec);
    let source = generate_domain(spec, &lexicons, Side::Source);
    let target = generate_domain(spec, &lexicons, Side::Target);
    Ok(SynthCorpus {
        source,
        target,
        lexicons,
    })
}

/// Builds word vectors from document-level co-occurrence statistics of an
/// unlabeled document pool: positive pointwise mutual information between
/// all word pairs sharing a document, factorized by a symmetric
/// eigendecomposition, keeping the `dim` strongest components scaled by
/// the square root of their eigenvalues. The result plays the role of
/// externally pretrained embeddings at desk scale; labels are never read.
pub fn cooccurrence_embeddings(
    docs: &[RawDoc],
    dim: usize,
) -> Result<std::collections::HashMap<String, Vec<f64>>> {
    if docs.is_empty() {
        return Err(Error::InvalidInput(
            "co-occurrence embeddings need at least one document".into(),
        ));
    }
    let mut words: Vec<String> = docs
        .iter()
        .flat_map(|doc| doc.tokens.iter().cloned())
        .collect();
    words.sort();
    words.dedup();
    let n = words.len();
    if dim == 0 || dim > n {
        return Err(Error::InvalidInput(format!(
            "embedding dimension must be in 1..={n}, got {dim}"
        )));
    }
    let index: std::collections::HashMap<&str, usize> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();

    // Unordered pair counts over each document, both orientations.
    let mut counts = vec![0.0f64; n * n];
    for doc in docs {
        for (a, first) in doc.tokens.iter().enumerate() {
            let i = index[first.as_str()];
            for second in &doc.tokens[a + 1..] {
                let j = index[second.as_str()];
                counts[i * n + j] += 1.0;
                counts[j * n + i] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput(
            "co-occurrence embeddings need documents with at least two tokens".into(),
        ));
    }
    let row_sums: Vec<f64> = (0..n)
        .map(|i| counts[i * n..(i + 1) * n].iter().sum())
        .collect();
    let mut ppmi = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let joint = counts[i * n + j];
            if joint > 0.0 && row_sums[i] > 0.0 && row_sums[j] > 0.0 {
                let pmi = (joint * total / (row_sums[i] * row_sums[j])).ln();
                ppmi[i * n + j] = pmi.max(0.0);
            }
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(ppmi, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let mut table = vec![0.0f64; n * dim];
    for (k, &component) in order.iter().take(dim).enumerate() {
        let weight = eigenvalues[component].max(0.0).sqrt();
        for i in 0..n {
            table[i * dim + k] = eigenvectors[i * n + component] * weight;
        }
    }
    // Bound magnitudes to the scale of randomly initialized rows so the
    // rest of the pipeline sees familiar ranges.
    let peak = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.25 / peak;
        for value in &mut table {
            *value *= scale;
        }
    }
    Ok(words
        .into_iter()
        .enumerate()
        .map(|(i, word)| (word, table[i * dim..(i + 1) * dim].to_vec()))
        .collect())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns (eigenvalues, eigenvector matrix with eigenvector `k` stored in
/// column `k`).
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-20 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    (eigenvalues, v)
}

/// Writes `source.tsv`, `target.tsv` (label<TAB>text), and
/// `lexicons.json` into the directory.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    let render = |docs: &[RawDoc]| -> String {
        let mut out = String::new();
        for doc in docs {
            let label = doc.label.expect("generated documents are labeled");
            out.push_str(&label.to_string());
            out.push('\t');
            out.push_str(&doc.tokens.join(" "));
            out.push('\n');
        }
        out
    };
    std::fs::write(dir.join(SOURCE_FILE), render(&corpus.source))?;
    std::fs::write(dir.join(TARGET_FILE), render(&corpus.target))?;
    let json = serde_json::to_string_pretty(&corpus.lexicons)?;
    std::fs::write(dir.join(LEXICON_FILE), json)?;
    Ok(())
}
