use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dskd::toylm::{next_token_targets, Matrix, ModelConfig, SemTarget, Tape, ToyDecoder};

use crate::{ensure, Check};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Central differences carry a rounding error of about ε·|L|/H ≈ 1e-10, so a
/// derivative must exceed this to be resolved to `TOL`; smaller ones are
/// redrawn.
const FLOOR: f64 = 1e-5;
const PROBES_PER_LOSS: usize = 40;

#[derive(Clone, Copy, Debug)]
enum Loss {
    Ce,
    Kl,
    Sem,
}

struct Fixture {
    batch: Vec<Vec<u32>>,
    teacher_logits: Matrix<f64>,
    pulls: Vec<SemTarget<f64>>,
    pushes: Vec<SemTarget<f64>>,
    gamma: f64,
}

impl Fixture {
    fn new(rng: &mut ChaCha8Rng, model: &ToyDecoder<f64>) -> Self {
        let (vocab, d) = (model.config().vocab_size, model.config().hidden_dim);
        let batch: Vec<Vec<u32>> = (0..2)
            .map(|_| (0..6).map(|_| rng.random_range(0..vocab as u32)).collect())
            .collect();
        let rows = 12;
        let teacher_logits = Matrix::from_vec(rows, vocab, (0..rows * vocab).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mut vecs = |n: usize, spread: f64| {
            Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-spread..spread)).collect())
        };
        let pulls = (0..4)
            .map(|r| SemTarget {
                row: r * 3,
                vectors: vecs(3, 1.5),
            })
            .collect();
        // Antonyms are the hidden row plus uniform noise of half-width s, so
        // their expected MSE is s²/3: about 0.5, 1.0 and 1.6 against γ = 1.
        let refs: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
        let (hidden, _) = model.forward_batch(&refs).expect("forward");
        let pushes = (0..4)
            .map(|r| {
                let row = r * 3 + 1;
                let data = [1.2, 1.75, 2.2]
                    .iter()
                    .flat_map(|&s| hidden.row(row).iter().map(move |&h| (h, s)).collect::<Vec<_>>())
                    .map(|(h, s)| h + rng.random_range(-s..s))
                    .collect();
                SemTarget {
                    row,
                    vectors: Matrix::from_vec(3, d, data),
                }
            })
            .collect();
        Self {
            batch,
            teacher_logits,
            pulls,
            pushes,
            gamma: 1.0,
        }
    }

    /// Loss value and, when `grad` is set, gradients of every parameter.
    fn eval(&self, model: &ToyDecoder<f64>, loss: Loss, grad: bool) -> (f64, Vec<Matrix<f64>>) {
        let batch: Vec<&[u32]> = self.batch.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let vars = model.forward_on_tape(&mut tape, &batch).expect("forward");
        let targets = next_token_targets(&batch);
        let root = match loss {
            Loss::Ce => tape.cross_entropy(vars.logits, &targets),
            Loss::Kl => {
                let rows: Vec<usize> = (0..targets.len()).filter(|&r| targets[r].is_some()).collect();
                tape.kl_distill(vars.logits, &self.teacher_logits, &rows, 2.0)
            }
            Loss::Sem => {
                let pull = tape.sem_pull(vars.hidden, self.pulls.clone(), 0.25);
                let push = tape.sem_push(vars.hidden, self.pushes.clone(), 0.25, self.gamma);
                tape.combine(&[(pull, 1.0), (push, 1.0)])
            }
        };
        let value = tape.value(root).item();
        if !grad {
            return (value, Vec::new());
        }
        let g = tape.backward(root);
        let grads = vars
            .params
            .iter()
            .zip(model.params())
            .map(|(&v, p)| {
                g.get(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
            })
            .collect();
        (value, grads)
    }

    /// Whether any hinge changes activity between the two perturbed models.
    fn hinge_flips(&self, a: &ToyDecoder<f64>, b: &ToyDecoder<f64>) -> bool {
        let batch: Vec<&[u32]> = self.batch.iter().map(Vec::as_slice).collect();
        let (ha, _) = a.forward_batch(&batch).expect("forward");
        let (hb, _) = b.forward_batch(&batch).expect("forward");
        let mse = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
        self.pushes.iter().any(|t| {
            (0..t.vectors.rows()).any(|i| {
                let va = mse(ha.row(t.row), t.vectors.row(i)) < self.gamma;
                let vb = mse(hb.row(t.row), t.vectors.row(i)) < self.gamma;
                va != vb
            })
        })
    }

    fn active_hinges(&self, model: &ToyDecoder<f64>) -> (usize, usize) {
        let batch: Vec<&[u32]> = self.batch.iter().map(Vec::as_slice).collect();
        let (h, _) = model.forward_batch(&batch).expect("forward");
        let mut active = 0;
        let mut total = 0;
        for t in &self.pushes {
            for i in 0..t.vectors.rows() {
                let m = h.row(t.row).iter().zip(t.vectors.row(i)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
                    / h.cols() as f64;
                active += usize::from(m < self.gamma);
                total += 1;
            }
        }
        (active, total)
    }
}

pub fn suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = ModelConfig {
        num_layers: 2,
        hidden_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        vocab_size: 20,
        max_seq_len: 8,
        seed: 11,
    };
    let mut model = ToyDecoder::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
    // Move layer-norm gains and biases off their initial values so their
    // gradients are generic.
    for p in model.params_mut() {
        if p.name.contains("ln") || p.name.contains(".b_") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let fx = Fixture::new(&mut rng, &model);
    let (active, total) = fx.active_hinges(&model);
    ensure!(
        active > 0 && active < total,
        "fixture should straddle the hinge: {active}/{total} active"
    );

    let mut probes = 0;
    let mut skipped = 0;
    let mut zeros = 0;
    let mut worst: f64 = 0.0;
    for loss in [Loss::Ce, Loss::Kl, Loss::Sem] {
        let (_, grads) = fx.eval(&model, loss, true);
        let mut done = 0;
        while done < PROBES_PER_LOSS {
            let pi = rng.random_range(0..model.params().len());
            let n = model.params()[pi].value.len();
            let j = rng.random_range(0..n);
            let mut plus = model.clone();
            plus.params_mut()[pi].value.data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params_mut()[pi].value.data_mut()[j] -= H;
            if matches!(loss, Loss::Sem) && fx.hinge_flips(&plus, &minus) {
                skipped += 1;
                continue;
            }
            let numeric = (fx.eval(&plus, loss, false).0 - fx.eval(&minus, loss, false).0) / (2.0 * H);
            let analytic = grads[pi].data()[j];
            let scale = analytic.abs().max(numeric.abs());
            if scale < FLOOR {
                zeros += 1;
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            ensure!(
                rel < TOL,
                "{loss:?} d/d {}[{j}]: analytic {analytic:e}, numeric {numeric:e}, rel err {rel:e}",
                model.params()[pi].name
            );
            worst = worst.max(rel);
            done += 1;
            probes += 1;
        }
    }
    Ok(format!(
        "{probes} probes on a 2-layer d=16 vocab=20 model, worst rel err {worst:.2e}, {active}/{total} hinges active, {skipped} kink-crossing and {zeros} near-zero-gradient probes resampled"
    ))
}
