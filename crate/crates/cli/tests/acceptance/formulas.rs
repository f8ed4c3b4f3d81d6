use std::collections::BTreeMap;

use dskd::distill::{cross_entropy, dskd_loss, kd_loss, kl_distill, mse, semantic_loss, SemLoss};
use dskd::lexicon::{Label, RelationSet};
use dskd::toylm::{Matrix, SemTarget, Tape};

use crate::{ensure, Check};

pub fn table1() -> Check {
    use Label::{Antonym as Ant, Synonym as Syn};
    let original = [
        ("quit", "discontinue", Syn),
        ("accurate", "faultless", Syn),
        ("opposite", "dissimilar", Syn),
        ("variable", "unchangeable", Ant),
        ("unkind", "friendly", Ant),
        ("disinterest", "zeal", Ant),
    ];
    let base: BTreeMap<String, String> = [
        ("discontinue", "continue"),
        ("faultless", "fault"),
        ("dissimilar", "similar"),
        ("unchangeable", "changeable"),
        ("unkind", "kind"),
        ("disinterest", "interest"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    // New pairs in order-normalized form (smaller word first).
    let mut expected = vec![
        ("continue", "quit", Ant),
        ("accurate", "fault", Ant),
        ("opposite", "similar", Ant),
        ("changeable", "variable", Syn),
        ("friendly", "kind", Syn),
        ("interest", "zeal", Syn),
    ];
    expected.sort();

    let rels = RelationSet::from_pairs(
        original.iter().map(|&(a, b, l)| (a.to_string(), b.to_string(), l)),
        base,
    )
    .map_err(|e| e.to_string())?;
    let (expanded, report) = rels.expand_morphological_with_report();
    let mut added: Vec<(&str, &str, Label)> = report.added.iter().map(|(a, b, l)| (a.as_str(), b.as_str(), *l)).collect();
    added.sort();
    ensure!(added == expected, "derived pairs {added:?}, expected {expected:?}");
    ensure!(
        report.conflicts.is_empty() && report.self_pairs.is_empty(),
        "unexpected conflicts {:?} or self-pairs {:?}",
        report.conflicts,
        report.self_pairs
    );
    ensure!(expanded.len() == 12, "expanded set has {} pairs, expected 12", expanded.len());
    for (a, b, l) in original {
        ensure!(expanded.label(a, b) == Some(l), "original pair ({a}, {b}) lost or relabelled");
    }
    let (syn, ant) = expanded.relations_of("quit");
    ensure!(
        syn == ["discontinue"] && ant == ["continue"],
        "relations_of(quit) = ({syn:?}, {ant:?})"
    );
    Ok("6/6 derived pairs with flipped labels, nothing else added".into())
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-10 * want.abs().max(1.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary KL(p ‖ q) of Bernoulli parameters, in nats.
fn bernoulli_kl(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

struct Instance {
    x: Vec<f64>,
    pos_shifts: Vec<f64>,
    ant_shifts: Vec<f64>,
    beta_p: f64,
    beta_n: f64,
    gamma: f64,
    /// Two-class rows: student logit `w`, teacher logit `z` (second logit 0), target.
    rows: Vec<(f64, f64, usize)>,
    alpha: f64,
    t: f64,
}

impl Instance {
    fn new(i: usize) -> Self {
        let d = 1 + i % 4;
        let x: Vec<f64> = (0..d).map(|j| 0.5 * j as f64 - 0.25 * i as f64).collect();
        let gamma = [1.0, 0.5, 2.0][i % 3];
        let ant = if i == 0 { 0.5 } else { 0.15 * i as f64 };
        let pos_shifts = match i % 3 {
            0 => vec![0.0],
            1 => vec![0.1 * i as f64, -0.2],
            _ => vec![0.3, 0.0, -0.05 * i as f64],
        };
        let ant_shifts = match i % 4 {
            3 => Vec::new(),
            2 => vec![ant, 2.0],
            _ => vec![ant],
        };
        let rows = (0..1 + i % 3)
            .map(|r| (0.3 * i as f64 - 0.7 * r as f64, 1.1 - 0.2 * (i + r) as f64, (i + r) % 2))
            .collect();
        Self {
            x,
            pos_shifts,
            ant_shifts,
            beta_p: 0.5 + 0.25 * (i % 4) as f64,
            beta_n: 1.5 - 0.25 * (i % 3) as f64,
            gamma,
            rows,
            alpha: 0.5 * (i % 5) as f64,
            t: 1.0 + 0.5 * (i % 4) as f64,
        }
    }

    fn shifted(&self, c: f64) -> Vec<f64> {
        self.x.iter().map(|v| v + c).collect()
    }

    // Closed forms: a constant shift c in every coordinate has MSE c².
    fn want_pos(&self) -> f64 {
        self.beta_p * self.pos_shifts.iter().map(|c| c * c).sum::<f64>() / self.pos_shifts.len() as f64
    }

    fn want_neg(&self) -> f64 {
        if self.ant_shifts.is_empty() {
            return 0.0;
        }
        self.beta_n * self.ant_shifts.iter().map(|c| (self.gamma - c * c).max(0.0)).sum::<f64>()
            / self.ant_shifts.len() as f64
    }

    fn want_ce(&self) -> f64 {
        let nll = |&(w, _, t): &(f64, f64, usize)| if t == 0 { -sigmoid(w).ln() } else { -(1.0 - sigmoid(w)).ln() };
        self.rows.iter().map(nll).sum::<f64>() / self.rows.len() as f64
    }

    fn want_kl(&self) -> f64 {
        let t = self.t;
        let kl = |&(w, z, _): &(f64, f64, usize)| bernoulli_kl(sigmoid(z / t), sigmoid(w / t));
        t * t * self.rows.iter().map(kl).sum::<f64>() / self.rows.len() as f64
    }

    fn logits(&self, teacher: bool) -> Vec<Vec<f64>> {
        self.rows.iter().map(|&(w, z, _)| vec![if teacher { z } else { w }, 0.0]).collect()
    }
}

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

/// `(mse, pos, neg, ce, kl, kd, dskd)` recorded on the autodiff tape.
fn on_tape(inst: &Instance) -> [f64; 7] {
    let mut tape = Tape::<f64>::new();
    let hidden = tape.leaf(matrix(std::slice::from_ref(&inst.x)), true);
    let positives: Vec<Vec<f64>> = inst.pos_shifts.iter().map(|&c| inst.shifted(c)).collect();
    let antonyms: Vec<Vec<f64>> = inst.ant_shifts.iter().map(|&c| inst.shifted(c)).collect();
    let pull = tape.sem_pull(
        hidden,
        vec![SemTarget {
            row: 0,
            vectors: matrix(&positives),
        }],
        inst.beta_p,
    );
    let push_targets = if antonyms.is_empty() {
        Vec::new()
    } else {
        vec![SemTarget {
            row: 0,
            vectors: matrix(&antonyms),
        }]
    };
    let push = tape.sem_push(hidden, push_targets, inst.beta_n, inst.gamma);
    let logits = tape.leaf(matrix(&inst.logits(false)), true);
    let targets: Vec<Option<usize>> = inst.rows.iter().map(|r| Some(r.2)).collect();
    let ce = tape.cross_entropy(logits, &targets);
    let all: Vec<usize> = (0..inst.rows.len()).collect();
    let kl = tape.kl_distill(logits, &matrix(&inst.logits(true)), &all, inst.t);
    let kd = tape.combine(&[(ce, 1.0), (kl, inst.alpha)]);
    let root = tape.combine(&[(kd, 1.0), (pull, 1.0), (push, 1.0)]);
    let single = tape.sem_pull(
        hidden,
        vec![SemTarget {
            row: 0,
            vectors: matrix(&positives[..1]),
        }],
        1.0,
    );
    let v = |x| tape.value(x).item();
    [v(single), v(pull), v(push), v(ce), v(kl), v(kd), v(root)]
}

pub fn loss_oracles() -> Check {
    const N: usize = 24;
    let mut checked = 0usize;
    for i in 0..N {
        let inst = Instance::new(i);
        let positives: Vec<Vec<f64>> = inst.pos_shifts.iter().map(|&c| inst.shifted(c)).collect();
        let antonyms: Vec<Vec<f64>> = inst.ant_shifts.iter().map(|&c| inst.shifted(c)).collect();

        let want_mse = inst.pos_shifts[0] * inst.pos_shifts[0];
        let (want_pos, want_neg) = (inst.want_pos(), inst.want_neg());
        let (want_ce, want_kl) = (inst.want_ce(), inst.want_kl());
        let want_kd = want_ce + inst.alpha * want_kl;
        let want_dskd = want_kd + want_pos + want_neg;

        let sem = semantic_loss(&inst.x, &positives, &antonyms, inst.beta_p, inst.beta_n, inst.gamma)
            .map_err(|e| e.to_string())?;
        let targets: Vec<usize> = inst.rows.iter().map(|r| r.2).collect();
        let ce = cross_entropy(&inst.logits(false), &targets).map_err(|e| e.to_string())?;
        let kl = kl_distill(&inst.logits(false), &inst.logits(true), inst.t).map_err(|e| e.to_string())?;
        let kd = kd_loss(ce, kl, inst.alpha);
        let reference = [
            ("MSE", mse(&inst.x, &positives[0]), want_mse),
            ("pull", sem.pos, want_pos),
            ("hinge", sem.neg, want_neg),
            ("L_sem", sem.total(), want_pos + want_neg),
            ("L_CE", ce, want_ce),
            ("L_KL", kl, want_kl),
            ("L_KD", kd, want_kd),
            ("L_DSKD", dskd_loss(kd, sem), want_dskd),
        ];
        let tape = on_tape(&inst);
        let taped = [
            ("tape MSE", tape[0], want_mse),
            ("tape pull", tape[1], want_pos),
            ("tape hinge", tape[2], want_neg),
            ("tape L_CE", tape[3], want_ce),
            ("tape L_KL", tape[4], want_kl),
            ("tape L_KD", tape[5], want_kd),
            ("tape L_DSKD", tape[6], want_dskd),
        ];
        for (name, got, want) in reference.into_iter().chain(taped) {
            ensure!(close(got, want), "instance {i}: {name} = {got:e}, oracle {want:e}");
            checked += 1;
        }
    }

    // The worked hinge case: one antonym at MSE 0.25 with γ = 1.
    let x = [0.0, 0.0];
    let a = vec![vec![0.5, -0.5]];
    let sem = semantic_loss(&x, &[], &a, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure!(sem.neg == 0.75 && sem.pos == 0.0, "[1 - 0.25]+ gave {sem:?}");

    // Identities.
    let p = vec![vec![0.3, -1.2, 4.0]];
    let sem = semantic_loss(&p[0], &p, &[], 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure!(sem == SemLoss::default(), "n_t equal to its only positive gave {sem:?}");
    let far = vec![vec![0.3 + 1.0, -1.2 + 1.0, 4.0 + 1.0]];
    let sem = semantic_loss(&p[0], &[], &far, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure!(sem.neg == 0.0, "antonym at MSE = gamma left hinge {}", sem.neg);
    let z = vec![vec![0.1, 2.0, -3.0, 0.5], vec![1.0, 1.0, 0.0, -1.0]];
    let kl = kl_distill(&z, &z, 2.0).map_err(|e| e.to_string())?;
    ensure!(kl.abs() < 1e-15, "KL of identical logits = {kl:e}");
    let ce = cross_entropy(&[vec![0.7; 4]], &[2]).map_err(|e| e.to_string())?;
    ensure!(close(ce, 4f64.ln()), "uniform CE over 4 classes = {ce}");
    ensure!(kd_loss(ce, 5.0, 0.0) == ce, "alpha = 0 does not reduce L_KD to L_CE");
    ensure!(dskd_loss(1.25, SemLoss::default()) == 1.25, "zero L_sem changes L_DSKD");
    checked += 8;

    // Vocabulary of five, one-hot teacher at high temperature, direct Σ p log(p/q).
    for (case, t) in [5.0, 10.0, 50.0].into_iter().enumerate() {
        let teacher = vec![(0..5).map(|c| if c == case { 10.0 } else { 0.0 }).collect::<Vec<f64>>()];
        let student = vec![vec![0.2, -0.4, 1.0, 0.0, 0.3]];
        let soft = |z: &[f64]| {
            let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let (p, q) = (soft(&teacher[0]), soft(&student[0]));
        let want = t * t * p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
        let got = kl_distill(&student, &teacher, t).map_err(|e| e.to_string())?;
        ensure!(close(got, want), "one-hot teacher at T={t}: {got:e} vs direct sum {want:e}");
        checked += 1;
    }
    Ok(format!("{N} crafted instances, {checked} comparisons within 1e-10"))
}
