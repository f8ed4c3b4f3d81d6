use serde::{Deserialize, Serialize};

use super::model::ToyDecoder;
use super::tape::{Gradients, Var};
use super::tensor::{Matrix, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam over the non-frozen parameters of a [`ToyDecoder`].
pub struct Adam<S> {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<Option<(Matrix<S>, Matrix<S>)>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients of the parameter leaves `params`.
    pub fn step(&mut self, model: &mut ToyDecoder<S>, grads: &mut Gradients<S>, params: &[Var]) {
        let n = model.params().len();
        if self.moments.len() != n {
            self.moments = (0..n).map(|_| None).collect();
        }
        let mut collected: Vec<Option<Matrix<S>>> = params
            .iter()
            .zip(model.params())
            .map(|(&v, p)| if p.frozen { None } else { grads.take(v) })
            .collect();

        if let Some(max_norm) = self.cfg.clip_norm {
            let sq: f64 = collected
                .iter()
                .flatten()
                .flat_map(|g| g.data().iter())
                .map(|v| {
                    let x = v.as_f64();
                    x * x
                })
                .sum();
            let norm = sq.sqrt();
            if norm > max_norm {
                let factor = S::of(max_norm / norm);
                collected.iter_mut().flatten().for_each(|g| g.scale(factor));
            }
        }

        self.step += 1;
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let one = S::one();
        let bc1 = one - S::of(self.cfg.beta1.powi(self.step as i32));
        let bc2 = one - S::of(self.cfg.beta2.powi(self.step as i32));
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);

        for (i, (param, grad)) in model.params_mut().iter_mut().zip(collected).enumerate() {
            if param.frozen {
                continue;
            }
            let Some(grad) = grad else { continue };
            let (rows, cols) = grad.shape();
            let (m, v) = self.moments[i]
                .get_or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
            for (((w, &g), mv), vv) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * g;
                *vv = b2 * *vv + (one - b2) * g * g;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
