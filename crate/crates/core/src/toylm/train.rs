use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ToyDecoder;
use super::optim::{Adam, AdamConfig};
use super::tape::Tape;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Epoch-wise shuffled mini-batches over sequence indices.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    num_sequences: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(num_sequences: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if num_sequences == 0 || batch_size == 0 {
            return Err(Error::Config("batch sampler needs sequences and a positive batch size".into()));
        }
        let mut s = Self {
            num_sequences,
            batch_size: batch_size.min(num_sequences),
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order = (0..self.num_sequences).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    /// Next batch and the epoch it belongs to. A batch never straddles epochs.
    pub fn next_batch(&mut self) -> (u64, Vec<usize>) {
        if self.cursor + self.batch_size > self.num_sequences {
            self.epoch += 1;
            self.reshuffle();
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        (self.epoch, batch)
    }
}

/// Next-token targets for row-major batched sequences (no target at the last position).
pub fn next_token_targets(batch: &[&[u32]]) -> Vec<Option<usize>> {
    batch
        .iter()
        .flat_map(|seq| {
            (0..seq.len()).map(move |t| seq.get(t + 1).map(|&id| id as usize))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

/// Plain next-token cross-entropy training of the non-frozen parameters.
/// Returns the per-step training loss.
pub fn train_lm<S: Scalar>(
    model: &mut ToyDecoder<S>,
    sequences: &[Vec<u32>],
    cfg: &LmTrainConfig,
) -> Result<Vec<f64>> {
    let mut sampler = BatchSampler::new(sequences.len(), cfg.batch_size, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone());
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (_, idx) = sampler.next_batch();
        let batch: Vec<&[u32]> = idx.iter().map(|&i| sequences[i].as_slice()).collect();
        let mut tape = Tape::new();
        let vars = model.forward_on_tape(&mut tape, &batch)?;
        let targets = next_token_targets(&batch);
        let ce = tape.cross_entropy(vars.logits, &targets);
        let loss = tape.combine(&[(ce, S::one())]);
        trace.push(tape.value(loss).item().as_f64());
        let mut grads = tape.backward(loss);
        adam.step(model, &mut grads, &vars.params);
    }
    Ok(trace)
}

/// Mean next-token cross-entropy of `model` over `sequences` (no updates).
pub fn mean_cross_entropy<S: Scalar>(
    model: &ToyDecoder<S>,
    sequences: &[Vec<u32>],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in sequences.chunks(batch_size.max(1)) {
        let batch: Vec<&[u32]> = chunk.iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::new();
        let vars = model.forward_on_tape(&mut tape, &batch)?;
        let targets = next_token_targets(&batch);
        let n = targets.iter().filter(|t| t.is_some()).count();
        let ce = tape.cross_entropy(vars.logits, &targets);
        total += tape.value(ce).item().as_f64() * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
