#![allow(dead_code)]

use dskd::composer::{populate_word_senses, CompositionConfig};
use dskd::corpus::{generate_corpus, Corpus, SyntheticConfig, VocabSpec};
use dskd::embed_store::collect;
use dskd::lexicon::RelationSet;
use dskd::sensedict::{build, SenseDict};
use dskd::toylm::{train_lm, LmTrainConfig, ModelConfig, ToyDecoder};

/// A small trained teacher with its dictionary and relations.
pub struct Fixture {
    pub spec: VocabSpec,
    pub corpus: Corpus,
    pub teacher: ToyDecoder<f32>,
    pub dict: SenseDict,
    pub rels: RelationSet,
}

pub fn teacher_config(vocab_size: usize, num_layers: usize, hidden_dim: usize) -> ModelConfig {
    ModelConfig {
        num_layers,
        hidden_dim,
        num_heads: 2,
        ffn_dim: 2 * hidden_dim,
        vocab_size,
        max_seq_len: 16,
        seed: 5,
    }
}

pub fn fixture(teacher_steps: usize) -> Fixture {
    let spec = SyntheticConfig::default().build().unwrap();
    let corpus = generate_corpus(&spec, 200, 16).unwrap();
    let mut teacher = ToyDecoder::<f32>::new(teacher_config(spec.vocab_size, 3, 32)).unwrap();
    let lm = LmTrainConfig {
        steps: teacher_steps,
        batch_size: 8,
        seed: 9,
        adam: Default::default(),
    };
    train_lm(&mut teacher, &corpus.sequences, &lm).unwrap();
    let store = collect(&teacher, &corpus, 200, 2).unwrap();
    let mut dict = build(&store, 3, 4).unwrap();
    let rels = spec.synthetic_resource().unwrap().expand_morphological();
    populate_word_senses(&mut dict, &rels, &spec, &CompositionConfig { m_max: spec.m_max, k: 3 }).unwrap();
    Fixture {
        spec,
        corpus,
        teacher,
        dict,
        rels,
    }
}

pub fn bits_equal(a: &ToyDecoder<f32>, b: &ToyDecoder<f32>) -> bool {
    a.params().len() == b.params().len()
        && a.params().iter().zip(b.params()).all(|(x, y)| {
            x.value.data().len() == y.value.data().len()
                && x.value.data().iter().zip(y.value.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}
