use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("vocab_size, hidden_dim and ffn_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Matrix<S>,
    pub frozen: bool,
}

/// Tensors per decoder block, in declaration order.
const BLOCK_TENSORS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.w_qkv", "attn.b_qkv", "attn.w_out", "attn.b_out", "ln2.gain",
    "ln2.bias", "ffn.w_in", "ffn.b_in", "ffn.w_out", "ffn.b_out",
];

const TOK_EMB: usize = 0;
const POS_EMB: usize = 1;
const BLOCK_BASE: usize = 2;

/// Decoder-only transformer: token + learned position embeddings, pre-norm
/// causal blocks, final layer norm and an untied output head.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDecoder<S> {
    config: ModelConfig,
    params: Vec<Param<S>>,
}

/// Tape handles produced by [`ToyDecoder::forward_on_tape`].
pub struct ForwardVars {
    /// Last-layer hidden states (after the final layer norm), one row per position.
    pub hidden: Var,
    pub logits: Var,
    /// One leaf per parameter, in declaration order.
    pub params: Vec<Var>,
}

fn block_shapes(cfg: &ModelConfig) -> [(usize, usize); 12] {
    let d = cfg.hidden_dim;
    let f = cfg.ffn_dim;
    [
        (1, d),
        (1, d),
        (d, 3 * d),
        (1, 3 * d),
        (d, d),
        (1, d),
        (1, d),
        (1, d),
        (d, f),
        (1, f),
        (f, d),
        (1, d),
    ]
}

impl<S: Scalar> ToyDecoder<S> {
    /// Randomly initialised model (normal(0, 0.02), residual projections scaled by depth).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.num_layers.max(1) as f64).sqrt();
        let mut model = Self::zeros(config)?;
        for p in &mut model.params {
            let leaf = p.name.rsplit('.').next().unwrap_or("");
            let sd = match leaf {
                "gain" => {
                    p.value.data_mut().iter_mut().for_each(|v| *v = S::one());
                    continue;
                }
                "bias" | "b_qkv" | "b_out" | "b_in" => continue,
                "w_out" => resid_std,
                _ => std,
            };
            let normal = Normal::new(0.0, sd).expect("valid std");
            for v in p.value.data_mut() {
                *v = S::of(normal.sample(&mut rng));
            }
        }
        Ok(model)
    }

    /// All-zero parameters (layer-norm gains included), so every logit is zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut params = vec![
            Param {
                name: "tok_emb".into(),
                value: Matrix::zeros(config.vocab_size, d),
                frozen: false,
            },
            Param {
                name: "pos_emb".into(),
                value: Matrix::zeros(config.max_seq_len, d),
                frozen: false,
            },
        ];
        let shapes = block_shapes(&config);
        for layer in 0..config.num_layers {
            for (name, &(r, c)) in BLOCK_TENSORS.iter().zip(&shapes) {
                params.push(Param {
                    name: format!("layers.{layer}.{name}"),
                    value: Matrix::zeros(r, c),
                    frozen: false,
                });
            }
        }
        params.push(Param {
            name: "ln_f.gain".into(),
            value: Matrix::zeros(1, d),
            frozen: false,
        });
        params.push(Param {
            name: "ln_f.bias".into(),
            value: Matrix::zeros(1, d),
            frozen: false,
        });
        params.push(Param {
            name: "head".into(),
            value: Matrix::zeros(d, config.vocab_size),
            frozen: false,
        });
        Ok(Self { config, params })
    }

    /// Rebuild from named tensors (checkpoint loading); names and shapes must match the layout.
    pub fn from_params(config: ModelConfig, tensors: Vec<(String, Matrix<S>)>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if tensors.len() != model.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} tensors, found {}", model.params.len(), tensors.len()),
            ));
        }
        for (p, (name, value)) in model.params.iter_mut().zip(tensors) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {name} {:?} does not match expected {} {:?}",
                        value.shape(),
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
            p.value = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    fn block_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = BLOCK_BASE + layer * BLOCK_TENSORS.len();
        start..start + BLOCK_TENSORS.len()
    }

    fn head_range(&self) -> std::ops::Range<usize> {
        let start = BLOCK_BASE + self.config.num_layers * BLOCK_TENSORS.len();
        start..start + 3
    }

    /// Parameters of one decoder block, in declaration order.
    pub fn block_params(&self, layer: usize) -> &[Param<S>] {
        &self.params[self.block_range(layer)]
    }

    pub fn is_block_frozen(&self, layer: usize) -> bool {
        self.block_params(layer).iter().all(|p| p.frozen)
    }

    pub fn set_block_frozen(&mut self, layer: usize, frozen: bool) {
        let range = self.block_range(layer);
        self.params[range].iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn set_embeddings_frozen(&mut self, frozen: bool) {
        self.params[TOK_EMB].frozen = frozen;
        self.params[POS_EMB].frozen = frozen;
    }

    /// Final layer norm and output head.
    pub fn set_head_frozen(&mut self, frozen: bool) {
        let range = self.head_range();
        self.params[range].iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    pub fn cast<T: Scalar>(&self) -> ToyDecoder<T> {
        ToyDecoder {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &[&[u32]]) -> Result<usize> {
        let Some(first) = batch.first() else {
            return Err(Error::Dimension("empty batch".into()));
        };
        let t = first.len();
        if t == 0 {
            return Err(Error::Dimension("empty sequence".into()));
        }
        if t > self.config.max_seq_len {
            return Err(Error::Dimension(format!(
                "sequence length {t} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        for seq in batch {
            if seq.len() != t {
                return Err(Error::Dimension("sequences in a batch must share a length".into()));
            }
            if let Some(&bad) = seq.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(Error::Dimension(format!(
                    "token id {bad} out of range for vocab {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(t)
    }

    /// Records a forward pass over equal-length sequences. Rows of the hidden
    /// and logit matrices are laid out sequence by sequence.
    pub fn forward_on_tape(&self, tape: &mut Tape<S>, batch: &[&[u32]]) -> Result<ForwardVars> {
        let t = self.check_batch(batch)?;
        let cfg = &self.config;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), !p.frozen))
            .collect();

        let ids: Vec<usize> = batch
            .iter()
            .flat_map(|s| s.iter().map(|&id| id as usize))
            .collect();
        let positions: Vec<usize> = (0..batch.len()).flat_map(|_| 0..t).collect();
        let tok = tape.gather(params[TOK_EMB], &ids);
        let pos = tape.gather(params[POS_EMB], &positions);
        let mut x = tape.add(tok, pos);

        for layer in 0..cfg.num_layers {
            let p = &params[self.block_range(layer)];
            let h = tape.layer_norm(x, p[0], p[1]);
            let qkv = tape.matmul(h, p[2]);
            let qkv = tape.add_bias(qkv, p[3]);
            let att = tape.causal_attention(qkv, t, cfg.num_heads);
            let proj = tape.matmul(att, p[4]);
            let proj = tape.add_bias(proj, p[5]);
            x = tape.add(x, proj);

            let h = tape.layer_norm(x, p[6], p[7]);
            let up = tape.matmul(h, p[8]);
            let up = tape.add_bias(up, p[9]);
            let act = tape.gelu(up);
            let down = tape.matmul(act, p[10]);
            let down = tape.add_bias(down, p[11]);
            x = tape.add(x, down);
        }

        let hr = self.head_range();
        let hidden = tape.layer_norm(x, params[hr.start], params[hr.start + 1]);
        let logits = tape.matmul(hidden, params[hr.start + 2]);
        Ok(ForwardVars {
            hidden,
            logits,
            params,
        })
    }

    /// Untaped convenience forward for one sequence: `(hidden T×d, logits T×vocab)`.
    pub fn forward(&self, tokens: &[u32]) -> Result<(Matrix<S>, Matrix<S>)> {
        self.forward_batch(&[tokens])
    }

    pub fn forward_batch(&self, batch: &[&[u32]]) -> Result<(Matrix<S>, Matrix<S>)> {
        let mut tape = Tape::new();
        let vars = self.forward_on_tape(&mut tape, batch)?;
        Ok((tape.value(vars.hidden).clone(), tape.value(vars.logits).clone()))
    }
}

/// Truncated student: the teacher's first `total_layers` blocks, of which the
/// first `total_layers - trainable_layers` are frozen together with the
/// embeddings, the final norm and the output head.
pub fn make_student<S: Scalar>(
    teacher: &ToyDecoder<S>,
    total_layers: usize,
    trainable_layers: usize,
) -> Result<ToyDecoder<S>> {
    if total_layers > teacher.config.num_layers {
        return Err(Error::Config(format!(
            "student total_layers {total_layers} exceeds teacher depth {}",
            teacher.config.num_layers
        )));
    }
    if trainable_layers > total_layers {
        return Err(Error::Config(format!(
            "trainable_layers {trainable_layers} exceeds total_layers {total_layers}"
        )));
    }
    let config = ModelConfig {
        num_layers: total_layers,
        ..teacher.config.clone()
    };
    let mut student = ToyDecoder::<S>::zeros(config)?;
    student.params[TOK_EMB].value = teacher.params[TOK_EMB].value.clone();
    student.params[POS_EMB].value = teacher.params[POS_EMB].value.clone();
    for layer in 0..total_layers {
        let src = teacher.block_range(layer);
        let dst = student.block_range(layer);
        for (s, t) in dst.zip(src) {
            student.params[s].value = teacher.params[t].value.clone();
        }
    }
    for (s, t) in student.head_range().zip(teacher.head_range()) {
        student.params[s].value = teacher.params[t].value.clone();
    }
    student.set_embeddings_frozen(true);
    student.set_head_frozen(true);
    let frozen_blocks = total_layers - trainable_layers;
    for layer in 0..total_layers {
        student.set_block_frozen(layer, layer < frozen_blocks);
    }
    Ok(student)
}
