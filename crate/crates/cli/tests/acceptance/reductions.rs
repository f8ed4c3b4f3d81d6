use dskd::composer::{populate_word_senses, CompositionConfig};
use dskd::corpus::{generate_corpus, SyntheticConfig};
use dskd::distill::{train, DistillConfig, LossReport, Mode};
use dskd::embed_store::collect;
use dskd::sensedict::build;
use dskd::toylm::{make_student, train_lm, LmTrainConfig, ModelConfig, ToyDecoder};

use crate::{ensure, Check};

const STEPS: usize = 60;

fn same_params(a: &ToyDecoder<f32>, b: &ToyDecoder<f32>) -> bool {
    a.params()
        .iter()
        .zip(b.params())
        .all(|(x, y)| x.value.data().iter().zip(y.value.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

fn bits(r: &LossReport) -> [u64; 4] {
    [r.l_ce.to_bits(), r.l_kl.to_bits(), r.l_kd.to_bits(), r.l_dskd.to_bits()]
}

pub fn identities() -> Check {
    let e = |e: dskd::Error| e.to_string();
    let spec = SyntheticConfig::default().build().map_err(e)?;
    let corpus = generate_corpus(&spec, 160, 16).map_err(e)?;
    let mut teacher = ToyDecoder::<f32>::new(ModelConfig {
        num_layers: 3,
        hidden_dim: 32,
        num_heads: 2,
        ffn_dim: 64,
        vocab_size: spec.vocab_size,
        max_seq_len: 16,
        seed: 1,
    })
    .map_err(e)?;
    let lm = LmTrainConfig {
        steps: 40,
        batch_size: 8,
        seed: 3,
        adam: Default::default(),
    };
    train_lm(&mut teacher, &corpus.sequences, &lm).map_err(e)?;
    let store = collect(&teacher, &corpus, 2000, 4).map_err(e)?;
    let mut dict = build(&store, 3, 4).map_err(e)?;
    let rels = spec.synthetic_resource().map_err(e)?.expand_morphological();
    populate_word_senses(&mut dict, &rels, &spec, &CompositionConfig { m_max: 3, k: 3 }).map_err(e)?;
    let base = make_student(&teacher, 2, 1).map_err(e)?;

    let cfg = DistillConfig {
        steps: STEPS,
        batch_size: 8,
        seed: 21,
        ..DistillConfig::default()
    };
    let mut kd_student = base.clone();
    let kd = train(&teacher, &mut kd_student, &corpus.sequences, &dict, &rels, &spec, &cfg, Mode::Kd).map_err(e)?;
    let zero_beta = DistillConfig {
        beta_p: 0.0,
        beta_n: 0.0,
        ..cfg.clone()
    };
    let mut dskd_student = base.clone();
    let dskd = train(&teacher, &mut dskd_student, &corpus.sequences, &dict, &rels, &spec, &zero_beta, Mode::Dskd)
        .map_err(e)?;
    let supervised: usize = dskd.iter().map(|r| r.supervised).sum();
    ensure!(supervised > 0, "no position received L_sem; the reduction would be vacuous");
    for (a, b) in kd.iter().zip(&dskd) {
        ensure!(bits(a) == bits(b), "step {}: KD {a:?} vs DSKD(beta=0) {b:?}", a.step);
        ensure!(b.l_sem_pos == 0.0 && b.l_sem_neg == 0.0, "step {}: L_sem not zero", b.step);
    }
    ensure!(kd.len() == STEPS && dskd.len() == STEPS, "trace lengths differ");
    ensure!(same_params(&kd_student, &dskd_student), "final students differ");

    let ce_only = DistillConfig {
        alpha: 0.0,
        ..zero_beta
    };
    let mut dskd_ce = base.clone();
    let ce_trace = train(&teacher, &mut dskd_ce, &corpus.sequences, &dict, &rels, &spec, &ce_only, Mode::Dskd)
        .map_err(e)?;
    let mut lm_student = base.clone();
    let lm_trace = train_lm(
        &mut lm_student,
        &corpus.sequences,
        &LmTrainConfig {
            steps: STEPS,
            batch_size: ce_only.batch_size,
            seed: ce_only.seed,
            adam: ce_only.adam.clone(),
        },
    )
    .map_err(e)?;
    for (r, l) in ce_trace.iter().zip(&lm_trace) {
        ensure!(
            r.l_dskd.to_bits() == l.to_bits(),
            "step {}: alpha=beta=0 loss {} vs CE trainer {l}",
            r.step,
            r.l_dskd
        );
    }
    ensure!(same_params(&dskd_ce, &lm_student), "alpha=0 student differs from CE-trained student");
    Ok(format!(
        "{STEPS} steps bitwise equal ({supervised} supervised positions zeroed); alpha=0 trace equals CE training"
    ))
}
