//! Embedding table construction.
//!
//! The table has one row per vocabulary entry. Row 0 (padding) is always
//! zero and stays zero during training. Words found in an optional
//! pretrained vector file take the stored vector; every other row,
//! including the unknown-word row, is drawn uniformly from
//! [-0.25, 0.25] with an independent stream per row id so the values for
//! one word never depend on which other words were covered by the file.
//!
//! The pretrained file format is textual: a `count dim` header line, then
//! one `word v1 .. v_dim` line per vector, whitespace separated.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::seeds;

pub const INIT_RANGE: f64 = 0.25;

/// Parses a pretrained vector file into word → vector.
pub fn load_pretrained(path: &Path) -> Result<(HashMap<String, Vec<f64>>, usize)> {
    let content = crate::error::read_file(path)?;
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };

    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `count dim` header".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad vector count in header {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad dimension in header {header:?}")))?;
    if parts.next().is_some() {
        return Err(parse_err(1, format!("header {header:?} has extra fields")));
    }
    if dim == 0 {
        return Err(parse_err(1, "dimension must be positive".into()));
    }

    let mut vectors = HashMap::with_capacity(count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "blank vector line".into()))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad float {f:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite vector value".into()));
        }
        vectors.insert(word.to_string(), values);
    }
    if vectors.len() != count {
        return Err(Error::InvalidInput(format!(
            "{display}: header promises {count} vectors, file has {}",
            vectors.len()
        )));
    }
    Ok((vectors, dim))
}

/// Builds the |V| x d table: zero padding row, pretrained rows where the
/// file covers the word, per-row seeded uniform rows otherwise.
pub fn build_table(
    vocab: &Vocabulary,
    dim: usize,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    seed: u64,
) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidInput(
            "embedding dimension must be positive".into(),
        ));
    }
    if let Some(map) = pretrained {
        if let Some(vec) = map.values().next() {
            if vec.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "pretrained vectors have dimension {}, model wants {dim}",
                    vec.len()
                )));
            }
        }
    }
    let rows = vocab.len();
    let mut table = vec![0.0; rows * dim];
    for row in 1..rows {
        let dst = &mut table[row * dim..(row + 1) * dim];
        let stored = pretrained.and_then(|map| map.get(vocab.word(row as u32)));
        match stored {
            Some(vec) => dst.copy_from_slice(vec),
            None => {
                let mut rng = seeds::stream(seed, "emb-init", row as u64);
                seeds::fill_uniform(&mut rng, dst, -INIT_RANGE, INIT_RANGE);
            }
        }
    }
    Ok(table)
}
