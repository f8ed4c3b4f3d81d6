//! Per-token sense embeddings: k-means centroids of a token's contextual
//! embeddings, plus composed entries for multi-token words.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::VocabSpec;
use crate::embed_store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_f32s, read_u16, read_u32, read_u8, write_f32s};
use crate::kmeans::kmeans;
use crate::mix_seed;
use crate::toylm::Matrix;

pub const MAGIC: &[u8; 8] = b"DSKDSNSE";
pub const VERSION: u16 = 1;
pub const MAX_ITER: usize = 100;
/// Centroid rows closer than this (max-abs) are collapsed into one.
pub const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SenseDict {
    d: usize,
    k: usize,
    tokens: BTreeMap<u32, Matrix<f32>>,
    words: BTreeMap<String, Matrix<f32>>,
}

impl SenseDict {
    pub fn empty(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            tokens: BTreeMap::new(),
            words: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.words.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    /// Total number of sense rows over token and word entries.
    pub fn num_senses(&self) -> usize {
        self.tokens.values().chain(self.words.values()).map(Matrix::rows).sum()
    }

    pub fn lookup(&self, token: u32) -> Option<&Matrix<f32>> {
        self.tokens.get(&token)
    }

    pub fn lookup_word(&self, word: &str) -> Option<&Matrix<f32>> {
        self.words.get(word)
    }

    /// Senses of a word: its token entry when it is a single token, its
    /// composed entry otherwise.
    pub fn senses_of_word(&self, word: &str, spec: &VocabSpec) -> Option<&Matrix<f32>> {
        match spec.tokenize(word).ok()? {
            [t] => self.lookup(*t),
            _ => self.lookup_word(word),
        }
    }

    pub fn token_entries(&self) -> impl Iterator<Item = (u32, &Matrix<f32>)> {
        self.tokens.iter().map(|(&t, m)| (t, m))
    }

    pub fn word_entries(&self) -> impl Iterator<Item = (&str, &Matrix<f32>)> {
        self.words.iter().map(|(w, m)| (w.as_str(), m))
    }

    pub fn insert_token(&mut self, token: u32, senses: Matrix<f32>) -> Result<()> {
        self.check_entry(&senses)?;
        self.tokens.insert(token, senses);
        Ok(())
    }

    pub fn insert_word(&mut self, word: &str, senses: Matrix<f32>) -> Result<()> {
        self.check_entry(&senses)?;
        self.words.insert(word.to_string(), senses);
        Ok(())
    }

    fn check_entry(&self, senses: &Matrix<f32>) -> Result<()> {
        if senses.cols() != self.d || senses.rows() == 0 {
            return Err(Error::Dimension(format!(
                "sense matrix {}x{} does not fit dictionary dimension {}",
                senses.rows(),
                senses.cols(),
                self.d
            )));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&((self.tokens.len() + self.words.len()) as u32).to_le_bytes())?;
        for (&t, m) in &self.tokens {
            w.write_all(&[0u8])?;
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            write_f32s(&mut w, m.data())?;
        }
        for (word, m) in &self.words {
            w.write_all(&[1u8])?;
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            write_f32s(&mut w, m.data())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        if read_bytes(&mut r, 8)? != MAGIC {
            return Err(Error::format("sense dictionary", "bad magic"));
        }
        let v = read_u16(&mut r)?;
        if v != VERSION {
            return Err(Error::format("sense dictionary", format!("unsupported version {v}")));
        }
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)?;
        let mut dict = Self::empty(d, k);
        for _ in 0..n {
            let kind = read_u8(&mut r)?;
            let key = match kind {
                0 => Key::Token(read_u32(&mut r)?),
                1 => {
                    let len = read_u32(&mut r)? as usize;
                    let w = String::from_utf8(read_bytes(&mut r, len)?)
                        .map_err(|_| Error::format("sense dictionary", "word key is not UTF-8"))?;
                    Key::Word(w)
                }
                other => return Err(Error::format("sense dictionary", format!("unknown key kind {other}"))),
            };
            let rows = read_u32(&mut r)? as usize;
            let m = Matrix::from_vec(rows, d, read_f32s(&mut r, rows * d)?);
            match key {
                Key::Token(t) => dict.tokens.insert(t, m),
                Key::Word(w) => dict.words.insert(w, m),
            };
        }
        Ok(dict)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

enum Key {
    Token(u32),
    Word(String),
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn collapse_duplicates(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let dup = kept
            .iter()
            .any(|k| k.iter().zip(&r).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL));
        if !dup {
            kept.push(r);
        }
    }
    kept
}

/// Sense centroids of one token's embeddings. The embeddings are sorted
/// lexicographically first, so the result does not depend on their order.
pub fn cluster_token(embeddings: &[Vec<f32>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .collect();
    points.sort_by(|a, b| lex_cmp(a, b));
    let centroids = if points.len() <= k {
        points
    } else {
        kmeans(&points, k, seed, MAX_ITER).centroids
    };
    collapse_duplicates(centroids)
}

/// Clusters every token of the store into at most `k` senses.
pub fn build(store: &EmbeddingStore, k: usize, seed: u64) -> Result<SenseDict> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let d = store.dim();
    let work: Vec<(u32, &[Vec<f32>])> = store.tokens().filter(|(_, v)| !v.is_empty()).collect();
    let built: Vec<(u32, Matrix<f32>)> = work
        .par_iter()
        .map(|&(t, embs)| {
            let rows = cluster_token(embs, k, mix_seed(seed, t as u64));
            let data = rows.iter().flatten().map(|&x| x as f32).collect();
            (t, Matrix::from_vec(rows.len(), d, data))
        })
        .collect();
    let mut dict = SenseDict::empty(d, k);
    for (t, m) in built {
        if m.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Dimension(format!("non-finite centroid for token {t}")));
        }
        dict.tokens.insert(t, m);
    }
    Ok(dict)
}

fn squared_l2_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Indices of the `count` rows of `candidates` nearest to `query` under
/// squared L2, ordered by (distance, row index).
pub fn nearest(query: &[f32], candidates: &Matrix<f32>, count: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..candidates.rows())
        .map(|i| (squared_l2_f32(query, candidates.row(i)), i))
        .collect();
    let take = count.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(take);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}
