//! Per-token contextual embeddings collected from the teacher's last layer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_f32s, read_u16, read_u32, write_f32s};
use crate::toylm::{Matrix, Scalar, ToyDecoder};

pub const MAGIC: &[u8; 8] = b"DSKDEMBS";
pub const VERSION: u16 = 1;
pub const DEFAULT_CAP: usize = 2000;

/// Sequences per forward pass during collection.
const COLLECT_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    d: usize,
    cap: usize,
    vectors: BTreeMap<u32, Vec<Vec<f32>>>,
    seen: BTreeMap<u32, u64>,
}

impl EmbeddingStore {
    pub fn new(d: usize, cap: usize) -> Self {
        Self {
            d,
            cap,
            vectors: BTreeMap::new(),
            seen: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn get(&self, token: u32) -> Option<&[Vec<f32>]> {
        self.vectors.get(&token).map(Vec::as_slice)
    }

    /// Occurrences observed for `token`, including those not retained.
    pub fn occurrences(&self, token: u32) -> u64 {
        self.seen.get(&token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u32, &[Vec<f32>])> {
        self.vectors.iter().map(|(&t, v)| (t, v.as_slice()))
    }

    pub fn total_stored(&self) -> usize {
        self.vectors.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds one occurrence. Below the cap it is appended; above it, reservoir
    /// sampling keeps a uniform sample of all occurrences.
    pub fn offer(&mut self, token: u32, vector: &[f32], rng: &mut impl Rng) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::Dimension(format!(
                "embedding of dimension {} offered to store of dimension {}",
                vector.len(),
                self.d
            )));
        }
        let seen = self.seen.entry(token).or_insert(0);
        let list = self.vectors.entry(token).or_default();
        if list.len() < self.cap {
            list.push(vector.to_vec());
        } else if self.cap > 0 {
            let j = rng.random_range(0..=*seen);
            if (j as usize) < self.cap {
                list[j as usize] = vector.to_vec();
            }
        }
        *seen += 1;
        Ok(())
    }

    /// Runs the teacher over every sequence and offers each position's hidden
    /// state, in (sequence, position) order.
    pub fn collect_from<S: Scalar>(
        &mut self,
        teacher: &ToyDecoder<S>,
        corpus: &Corpus,
        seed: u64,
    ) -> Result<()> {
        let cfg = teacher.config();
        if cfg.hidden_dim != self.d {
            return Err(Error::Dimension(format!(
                "teacher hidden dim {} differs from store dim {}",
                cfg.hidden_dim, self.d
            )));
        }
        if cfg.vocab_size != corpus.vocab_size {
            return Err(Error::Dimension(format!(
                "teacher vocab {} differs from corpus vocab {}",
                cfg.vocab_size, corpus.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for group in corpus.sequences.chunks(COLLECT_BATCH * 8) {
            let hidden: Vec<Matrix<S>> = group
                .par_chunks(COLLECT_BATCH)
                .map(|chunk| {
                    let batch: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
                    teacher.forward_batch(&batch).map(|(h, _)| h)
                })
                .collect::<Result<_>>()?;
            let seqs = group.iter().flat_map(|s| s.iter());
            let rows = hidden.iter().flat_map(|h| (0..h.rows()).map(move |r| h.row(r)));
            let mut buf = vec![0f32; self.d];
            for (&tok, row) in seqs.zip(rows) {
                for (b, v) in buf.iter_mut().zip(row) {
                    *b = v.to_f32_lossy();
                }
                self.offer(tok, &buf, &mut rng)?;
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.vectors.len() as u32).to_le_bytes())?;
        for (&tok, list) in &self.vectors {
            w.write_all(&tok.to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for v in list {
                write_f32s(&mut w, v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a store file. The cap is not persisted; the reloaded store's cap
    /// is the largest per-token count.
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        if read_bytes(&mut r, 8)? != MAGIC {
            return Err(Error::format("embedding store", "bad magic"));
        }
        let v = read_u16(&mut r)?;
        if v != VERSION {
            return Err(Error::format("embedding store", format!("unsupported version {v}")));
        }
        let d = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let mut store = Self::new(d, 0);
        for _ in 0..n {
            let tok = read_u32(&mut r)?;
            let count = read_u32(&mut r)? as usize;
            let flat = read_f32s(&mut r, count * d)?;
            let list: Vec<Vec<f32>> = flat.chunks(d.max(1)).map(<[f32]>::to_vec).collect();
            store.cap = store.cap.max(count);
            store.seen.insert(tok, count as u64);
            store.vectors.insert(tok, list);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Collects at most `cap` contextual embeddings per token.
pub fn collect<S: Scalar>(
    teacher: &ToyDecoder<S>,
    corpus: &Corpus,
    cap: usize,
    seed: u64,
) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(teacher.config().hidden_dim, cap);
    store.collect_from(teacher, corpus, seed)?;
    Ok(store)
}
