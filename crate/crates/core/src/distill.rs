//! Distillation objectives and the KD / DSKD training loops.
//!
//! Per position `t` with next token `x_{t+1}`:
//!
//! * `L_KD = L_CE + α·L_KL`, with `L_KL = T²·KL(softmax(z_teacher/T) ‖ softmax(z_student/T))`.
//! * `L_sem = β_p·mean_{p∈P_κ} MSE(n_t, p) + β_n·mean_{a∈A_κ} [γ − MSE(n_t, a)]₊`,
//!   where `P` holds the senses of `x_{t+1}` and of its synonyms, `A` the senses
//!   of its antonyms, and `P_κ`, `A_κ` are the κ rows nearest to the teacher's
//!   hidden state `m_t`. `n_t` is the student's hidden state.
//! * `L_DSKD = L_KD + L_sem`.
//!
//! Batch losses are means over positions. `L_sem` is averaged over the
//! supervised positions of the batch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::VocabSpec;
use crate::error::{Error, Result};
use crate::lexicon::RelationSet;
use crate::mix_seed;
use crate::sensedict::{nearest, SenseDict};
use crate::toylm::{
    next_token_targets, Adam, AdamConfig, BatchSampler, Matrix, Scalar, SemTarget, Tape, ToyDecoder, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Kd,
    Dskd,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Kd => "kd",
            Mode::Dskd => "dskd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kd" => Ok(Mode::Kd),
            "dskd" => Ok(Mode::Dskd),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub kappa: usize,
    pub beta_p: f64,
    pub beta_n: f64,
    pub gamma: f64,
    /// Share of eligible positions that receive `L_sem`, resampled each epoch.
    pub supervision_fraction: f64,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            temperature: 2.0,
            kappa: 5,
            beta_p: 1.0,
            beta_n: 1.0,
            gamma: 1.0,
            supervision_fraction: 1.0,
            seed: 0,
            steps: 500,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta_p, self.beta_n];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("alpha, beta_p and beta_n must be finite and >= 0".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be finite and > 0".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config("gamma must be finite and > 0".into()));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be at least 1".into()));
        }
        if !(self.supervision_fraction > 0.0 && self.supervision_fraction <= 1.0) {
            return Err(Error::Config("supervision_fraction must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a candidate row comes from: a row of a token entry, or of a word's
/// senses as resolved by [`SenseDict::senses_of_word`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Token(u32),
    Word(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub origin: Origin,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSets {
    /// Senses of the target token followed by senses of its synonyms.
    pub positives: Matrix<f32>,
    pub positive_sources: Vec<Provenance>,
    pub antonyms: Matrix<f32>,
    pub antonym_sources: Vec<Provenance>,
    /// Row indices into `positives`, nearest first. Empty until selection.
    pub p_kappa: Vec<usize>,
    pub a_kappa: Vec<usize>,
}

fn append_rows(
    data: &mut Vec<f32>,
    sources: &mut Vec<Provenance>,
    m: &Matrix<f32>,
    origin: Origin,
) {
    data.extend_from_slice(m.data());
    sources.extend((0..m.rows()).map(|row| Provenance {
        origin: origin.clone(),
        row,
    }));
}

/// Candidate sets for next token `target`, or `None` when it has no senses.
pub fn build_candidates(
    target: u32,
    dict: &SenseDict,
    rels: &RelationSet,
    spec: &VocabSpec,
) -> Option<CandidateSets> {
    let own = dict.lookup(target)?;
    let d = dict.dim();
    let (mut p, mut ps) = (Vec::new(), Vec::new());
    let (mut a, mut as_) = (Vec::new(), Vec::new());
    append_rows(&mut p, &mut ps, own, Origin::Token(target));
    if let Some(word) = spec.word_of_token(target) {
        let (syns, ants) = rels.relations_of(word);
        for w in syns {
            if let Some(m) = dict.senses_of_word(&w, spec) {
                append_rows(&mut p, &mut ps, m, Origin::Word(w));
            }
        }
        for w in ants {
            if let Some(m) = dict.senses_of_word(&w, spec) {
                append_rows(&mut a, &mut as_, m, Origin::Word(w));
            }
        }
    }
    Some(CandidateSets {
        positives: Matrix::from_vec(ps.len(), d, p),
        positive_sources: ps,
        antonyms: Matrix::from_vec(as_.len(), d, a),
        antonym_sources: as_,
        p_kappa: Vec::new(),
        a_kappa: Vec::new(),
    })
}

impl CandidateSets {
    /// Fills `p_kappa` and `a_kappa` with the κ rows nearest to `query`.
    pub fn select_topk(&mut self, query: &[f32], kappa: usize) {
        self.p_kappa = nearest(query, &self.positives, kappa);
        self.a_kappa = nearest(query, &self.antonyms, kappa);
    }

    pub fn selected_positives(&self) -> Vec<&[f32]> {
        self.p_kappa.iter().map(|&i| self.positives.row(i)).collect()
    }

    pub fn selected_antonyms(&self) -> Vec<&[f32]> {
        self.a_kappa.iter().map(|&i| self.antonyms.row(i)).collect()
    }

    /// Checks that every row equals the row its provenance names.
    pub fn verify_provenance(&self, dict: &SenseDict, spec: &VocabSpec) -> bool {
        let check = |m: &Matrix<f32>, src: &[Provenance]| {
            src.len() == m.rows()
                && src.iter().enumerate().all(|(i, p)| {
                    let entry = match &p.origin {
                        Origin::Token(t) => dict.lookup(*t),
                        Origin::Word(w) => dict.senses_of_word(w, spec),
                    };
                    entry.is_some_and(|e| p.row < e.rows() && e.row(p.row) == m.row(i))
                })
        };
        check(&self.positives, &self.positive_sources) && check(&self.antonyms, &self.antonym_sources)
    }
}

/// Selects κ nearest rows of `sets` for `query`.
pub fn select_topk(mut sets: CandidateSets, query: &[f32], kappa: usize) -> CandidateSets {
    sets.select_topk(query, kappa);
    sets
}

/// `(1/d)·‖x − y‖²`.
pub fn mse(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemLoss {
    /// `β_p`-weighted positive term.
    pub pos: f64,
    /// `β_n`-weighted hinge term.
    pub neg: f64,
}

impl SemLoss {
    pub fn total(&self) -> f64 {
        self.pos + self.neg
    }
}

/// Per-position `L_sem`. An empty set contributes zero.
pub fn semantic_loss(
    n_t: &[f64],
    positives: &[Vec<f64>],
    antonyms: &[Vec<f64>],
    beta_p: f64,
    beta_n: f64,
    gamma: f64,
) -> Result<SemLoss> {
    if positives.iter().chain(antonyms).any(|v| v.len() != n_t.len()) {
        return Err(Error::Dimension("candidate dimension differs from hidden state".into()));
    }
    let mean = |vs: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64| {
        if vs.is_empty() {
            0.0
        } else {
            vs.iter().map(|v| f(v)).sum::<f64>() / vs.len() as f64
        }
    };
    Ok(SemLoss {
        pos: beta_p * mean(positives, &|p| mse(n_t, p)),
        neg: beta_n * mean(antonyms, &|a| (gamma - mse(n_t, a)).max(0.0)),
    })
}

fn log_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / t));
    let lse = z.iter().map(|&x| (x / t - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|&x| x / t - lse).collect()
}

/// `T²·mean_rows KL(softmax(teacher/T) ‖ softmax(student/T))`.
pub fn kl_distill(student: &[Vec<f64>], teacher: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if student.len() != teacher.len() || student.iter().zip(teacher).any(|(s, t)| s.len() != t.len()) {
        return Err(Error::Dimension("student and teacher logits differ in shape".into()));
    }
    if student.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        let lq = log_softmax(s, temperature);
        let lp = log_softmax(t, temperature);
        total += lp
            .iter()
            .zip(&lq)
            .map(|(&p, &q)| if p.exp() > 0.0 { p.exp() * (p - q) } else { 0.0 })
            .sum::<f64>();
    }
    Ok(temperature * temperature * total / student.len() as f64)
}

/// Mean `−log softmax(z)[target]` over rows.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::Dimension("logits and targets differ in length".into()));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(z, &t)| -log_softmax(z, 1.0)[t])
        .sum();
    Ok(total / logits.len() as f64)
}

pub fn kd_loss(ce: f64, kl: f64, alpha: f64) -> f64 {
    ce + alpha * kl
}

pub fn dskd_loss(kd: f64, sem: SemLoss) -> f64 {
    kd + sem.total()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub l_ce: f64,
    pub l_kl: f64,
    pub l_sem_pos: f64,
    pub l_sem_neg: f64,
    pub l_kd: f64,
    pub l_dskd: f64,
    pub supervised: usize,
}

pub fn write_loss_csv<W: Write>(mut w: W, reports: &[LossReport]) -> Result<()> {
    writeln!(w, "step,l_ce,l_kl,l_sem_pos,l_sem_neg,l_kd,l_dskd,supervised")?;
    for r in reports {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.step, r.l_ce, r.l_kl, r.l_sem_pos, r.l_sem_neg, r.l_kd, r.l_dskd, r.supervised
        )?;
    }
    Ok(())
}

/// Candidate sets for every token id, before selection.
pub fn candidate_table(
    vocab_size: usize,
    dict: &SenseDict,
    rels: &RelationSet,
    spec: &VocabSpec,
) -> Vec<Option<CandidateSets>> {
    (0..vocab_size as u32)
        .map(|t| {
            let sets = build_candidates(t, dict, rels, spec);
            debug_assert!(sets.as_ref().is_none_or(|c| c.verify_provenance(dict, spec)));
            sets
        })
        .collect()
}

fn is_supervised(seed: u64, epoch: u64, sequence: usize, position: usize, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let h = mix_seed(mix_seed(mix_seed(seed, epoch), sequence as u64), position as u64);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

fn matrix_of_rows<S: Scalar>(rows: &[&[f32]], d: usize) -> Matrix<S> {
    let data = rows.iter().flat_map(|r| r.iter().map(|&x| S::from_f32_lossy(x))).collect();
    Matrix::from_vec(rows.len(), d, data)
}

/// One mini-batch with the teacher's outputs on it.
pub struct StepInputs<'a, S> {
    pub batch: &'a [&'a [u32]],
    /// Corpus index of each batch row, for supervision sampling.
    pub sequence_ids: &'a [usize],
    pub epoch: u64,
    pub teacher_hidden: &'a Matrix<S>,
    pub teacher_logits: &'a Matrix<S>,
}

/// Tape nodes of one step's objective.
pub struct Objective {
    pub root: Var,
    pub ce: Var,
    pub kl: Var,
    pub kd: Var,
    pub sem_pos: Option<Var>,
    pub sem_neg: Option<Var>,
    pub supervised: usize,
    pub params: Vec<Var>,
}

impl Objective {
    pub fn report<S: Scalar>(&self, tape: &Tape<S>, step: usize) -> LossReport {
        let value = |v: Var| tape.value(v).item().as_f64();
        LossReport {
            step,
            l_ce: value(self.ce),
            l_kl: value(self.kl),
            l_sem_pos: self.sem_pos.map_or(0.0, value),
            l_sem_neg: self.sem_neg.map_or(0.0, value),
            l_kd: value(self.kd),
            l_dskd: value(self.root),
            supervised: self.supervised,
        }
    }
}

/// Records the student forward pass and the KD objective, plus `L_sem` when a
/// candidate table is given, on `tape`.
pub fn record_objective<S: Scalar>(
    tape: &mut Tape<S>,
    student: &ToyDecoder<S>,
    inputs: &StepInputs<'_, S>,
    table: Option<&[Option<CandidateSets>]>,
    cfg: &DistillConfig,
) -> Result<Objective> {
    let d = student.config().hidden_dim;
    let vars = student.forward_on_tape(tape, inputs.batch)?;
    let targets = next_token_targets(inputs.batch);
    let rows: Vec<usize> = (0..targets.len()).filter(|&r| targets[r].is_some()).collect();
    let ce = tape.cross_entropy(vars.logits, &targets);
    let kl = tape.kl_distill(vars.logits, inputs.teacher_logits, &rows, S::of(cfg.temperature));
    let kd = tape.combine(&[(ce, S::one()), (kl, S::of(cfg.alpha))]);
    let Some(table) = table else {
        return Ok(Objective {
            root: kd,
            ce,
            kl,
            kd,
            sem_pos: None,
            sem_neg: None,
            supervised: 0,
            params: vars.params,
        });
    };

    let mut pulls = Vec::new();
    let mut pushes = Vec::new();
    let mut query = vec![0f32; d];
    let mut row = 0;
    for (b, seq) in inputs.batch.iter().enumerate() {
        for pos in 0..seq.len() {
            let r = row + pos;
            let Some(&next) = seq.get(pos + 1) else { continue };
            let Some(Some(sets)) = table.get(next as usize) else { continue };
            if !is_supervised(cfg.seed, inputs.epoch, inputs.sequence_ids[b], pos, cfg.supervision_fraction) {
                continue;
            }
            for (q, v) in query.iter_mut().zip(inputs.teacher_hidden.row(r)) {
                *q = v.to_f32_lossy();
            }
            let p_rows: Vec<&[f32]> = nearest(&query, &sets.positives, cfg.kappa)
                .into_iter()
                .map(|i| sets.positives.row(i))
                .collect();
            let a_rows: Vec<&[f32]> = nearest(&query, &sets.antonyms, cfg.kappa)
                .into_iter()
                .map(|i| sets.antonyms.row(i))
                .collect();
            pulls.push(SemTarget {
                row: r,
                vectors: matrix_of_rows(&p_rows, d),
            });
            if !a_rows.is_empty() {
                pushes.push(SemTarget {
                    row: r,
                    vectors: matrix_of_rows(&a_rows, d),
                });
            }
        }
        row += seq.len();
    }
    let supervised = pulls.len();
    let n = S::of(supervised.max(1) as f64);
    let pull = tape.sem_pull(vars.hidden, pulls, S::of(cfg.beta_p) / n);
    let push = tape.sem_push(vars.hidden, pushes, S::of(cfg.beta_n) / n, S::of(cfg.gamma));
    let root = tape.combine(&[(kd, S::one()), (pull, S::one()), (push, S::one())]);
    Ok(Objective {
        root,
        ce,
        kl,
        kd,
        sem_pos: Some(pull),
        sem_neg: Some(push),
        supervised,
        params: vars.params,
    })
}

/// Trains the non-frozen parameters of `student` against `teacher`.
/// Returns one report per step.
#[allow(clippy::too_many_arguments)]
pub fn train<S: Scalar>(
    teacher: &ToyDecoder<S>,
    student: &mut ToyDecoder<S>,
    sequences: &[Vec<u32>],
    dict: &SenseDict,
    rels: &RelationSet,
    spec: &VocabSpec,
    cfg: &DistillConfig,
    mode: Mode,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    let tc = teacher.config();
    let sc = student.config();
    if tc.vocab_size != sc.vocab_size || tc.hidden_dim != sc.hidden_dim {
        return Err(Error::Dimension("teacher and student disagree on vocab or hidden size".into()));
    }
    if mode == Mode::Dskd {
        if dict.is_empty() {
            return Err(Error::Config("DSKD training needs a non-empty sense dictionary".into()));
        }
        if dict.dim() != tc.hidden_dim {
            return Err(Error::Dimension(format!(
                "sense dictionary dimension {} differs from hidden size {}",
                dict.dim(),
                tc.hidden_dim
            )));
        }
    }
    let table = match mode {
        Mode::Dskd => Some(candidate_table(tc.vocab_size, dict, rels, spec)),
        Mode::Kd => None,
    };
    let mut sampler = BatchSampler::new(sequences.len(), cfg.batch_size, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone());
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (epoch, idx) = sampler.next_batch();
        let batch: Vec<&[u32]> = idx.iter().map(|&i| sequences[i].as_slice()).collect();
        let (teacher_hidden, teacher_logits) = teacher.forward_batch(&batch)?;
        let inputs = StepInputs {
            batch: &batch,
            sequence_ids: &idx,
            epoch,
            teacher_hidden: &teacher_hidden,
            teacher_logits: &teacher_logits,
        };
        let mut tape = Tape::new();
        let obj = record_objective(&mut tape, student, &inputs, table.as_deref(), cfg)?;
        reports.push(obj.report(&tape, step));
        let mut grads = tape.backward(obj.root);
        adam.step(student, &mut grads, &obj.params);
    }
    Ok(reports)
}
