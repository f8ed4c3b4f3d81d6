//! Word-level senses for multi-token words, and the span-limit keep rate.
//!
//! For a word tokenized as `(t_1, ..., t_m)`, every sense of `t_1` starts one
//! path. Each later token contributes the sense row nearest (squared L2) to
//! the mean of the rows aligned so far, and the composed sense is the mean
//! of the aligned rows.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::VocabSpec;
use crate::error::{Error, Result};
use crate::lexicon::{Label, RelationSet};
use crate::sensedict::SenseDict;
use crate::toylm::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionConfig {
    pub m_max: usize,
    pub k: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self { m_max: 3, k: 5 }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_max == 0 || self.k == 0 {
            return Err(Error::Config("m_max and k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    UnknownWord,
    TooLong { tokens: usize, m_max: usize },
    MissingToken(u32),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::UnknownWord => write!(f, "word not in vocabulary"),
            SkipReason::TooLong { tokens, m_max } => write!(f, "{tokens} tokens exceeds m_max={m_max}"),
            SkipReason::MissingToken(t) => write!(f, "token {t} has no senses"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Composition {
    Composed(Matrix<f32>),
    Skipped(SkipReason),
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Composes sense rows. `senses[h]` holds the rows of the h-th token; the
/// output has one row per row of `senses[0]`.
pub fn compose_rows(senses: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let Some(first) = senses.first() else {
        return Vec::new();
    };
    let m = senses.len() as f64;
    first
        .iter()
        .map(|start| {
            let d = start.len();
            let mut sum = start.clone();
            for (h, rows) in senses.iter().enumerate().skip(1) {
                let mean: Vec<f64> = sum.iter().map(|s| s / h as f64).collect();
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, r) in rows.iter().enumerate() {
                    let dist = squared_l2(&mean, r);
                    if dist < best_d {
                        best = i;
                        best_d = dist;
                    }
                }
                for c in 0..d {
                    sum[c] += rows[best][c];
                }
            }
            sum.into_iter().map(|s| s / m).collect()
        })
        .collect()
}

fn to_rows(m: &Matrix<f32>) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&x| x as f64).collect())
        .collect()
}

/// Composed senses of `word`, or the reason it is left out of the dictionary.
pub fn compose_word(word: &str, dict: &SenseDict, spec: &VocabSpec, cfg: &CompositionConfig) -> Composition {
    let Ok(tokens) = spec.tokenize(word) else {
        return Composition::Skipped(SkipReason::UnknownWord);
    };
    if tokens.len() > cfg.m_max {
        return Composition::Skipped(SkipReason::TooLong {
            tokens: tokens.len(),
            m_max: cfg.m_max,
        });
    }
    let mut mats = Vec::with_capacity(tokens.len());
    for &t in tokens {
        match dict.lookup(t) {
            Some(m) => mats.push(m),
            None => return Composition::Skipped(SkipReason::MissingToken(t)),
        }
    }
    if let [only] = mats.as_slice() {
        return Composition::Composed((*only).clone());
    }
    let rows = compose_rows(&mats.iter().map(|m| to_rows(m)).collect::<Vec<_>>());
    let data = rows.iter().flatten().map(|&x| x as f32).collect();
    Composition::Composed(Matrix::from_vec(rows.len(), dict.dim(), data))
}

/// Adds a word entry for every multi-token relation word that composes.
/// Returns the skipped words with their reasons, ordered by word.
pub fn populate_word_senses(
    dict: &mut SenseDict,
    rels: &RelationSet,
    spec: &VocabSpec,
    cfg: &CompositionConfig,
) -> Result<Vec<(String, SkipReason)>> {
    cfg.validate()?;
    let words: Vec<&str> = rels
        .words()
        .filter(|w| spec.tokenize(w).map_or(true, |t| t.len() > 1))
        .collect();
    let results: Vec<(&str, Composition)> = words
        .par_iter()
        .map(|&w| (w, compose_word(w, dict, spec, cfg)))
        .collect();
    let mut skipped = Vec::new();
    for (w, c) in results {
        match c {
            Composition::Composed(m) => dict.insert_word(w, m)?,
            Composition::Skipped(reason) => {
                log::info!("skipping word {w:?}: {reason}");
                skipped.push((w.to_string(), reason));
            }
        }
    }
    Ok(skipped)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LabelCount {
    pub kept: usize,
    pub total: usize,
}

impl LabelCount {
    /// Percentage kept; 100 when there is nothing to keep.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            self.kept as f64 / self.total as f64 * 100.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KeepRate {
    pub m: usize,
    pub synonym: LabelCount,
    pub antonym: LabelCount,
    /// Pairs with a word outside the vocabulary; excluded from both totals.
    pub untokenizable: usize,
}

impl KeepRate {
    pub fn get(&self, label: Label) -> LabelCount {
        match label {
            Label::Synonym => self.synonym,
            Label::Antonym => self.antonym,
        }
    }

    /// True when a reported rate is 100 only because its label has no pairs.
    pub fn is_vacuous(&self) -> bool {
        self.synonym.total == 0 || self.antonym.total == 0
    }
}

/// Share of relation pairs, per label, whose words both span at most `m` tokens.
pub fn keep_rate(rels: &RelationSet, spec: &VocabSpec, m: usize) -> Result<KeepRate> {
    if m == 0 {
        return Err(Error::Config("span limit m must be at least 1".into()));
    }
    let mut out = KeepRate {
        m,
        ..Default::default()
    };
    for (a, b, label) in rels.pairs() {
        let (Ok(ta), Ok(tb)) = (spec.tokenize(a), spec.tokenize(b)) else {
            out.untokenizable += 1;
            continue;
        };
        let slot = match label {
            Label::Synonym => &mut out.synonym,
            Label::Antonym => &mut out.antonym,
        };
        slot.total += 1;
        if ta.len() <= m && tb.len() <= m {
            slot.kept += 1;
        }
    }
    Ok(out)
}

/// Writes `m,label,kept,total,rate` rows, synonyms before antonyms for each m.
pub fn write_keep_rate_csv<W: Write>(mut w: W, rates: &[KeepRate]) -> Result<()> {
    writeln!(w, "m,label,kept,total,rate")?;
    for r in rates {
        for label in [Label::Synonym, Label::Antonym] {
            let c = r.get(label);
            writeln!(w, "{},{},{},{},{:.2}", r.m, label.as_str(), c.kept, c.total, c.rate())?;
        }
    }
    Ok(())
}
