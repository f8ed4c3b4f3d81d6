//! Synthetic corpora with planted polysemy, synonym groups and antonym frames.
//!
//! A [`VocabSpec`] registers every surface word with its token sequence and
//! optionally carries a [`Grammar`]: a set of concepts, each owning a pool of
//! "signal" context tokens and the words that express it. Words sharing a
//! concept are synonyms; concepts are paired into antonym pairs that show up
//! in contrast frames (`... w MARKER w' ...`); polysemous tokens belong to two
//! concepts, and the concept a given occurrence was drawn from is its sense
//! label.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_bytes, read_u16, read_u32, read_u32s, write_u32s};
use crate::lexicon::{Label, RelationSet};

pub const CORPUS_MAGIC: &[u8; 8] = b"DSKDCORP";
pub const LABELS_MAGIC: &[u8; 8] = b"DSKDLABL";
pub const CORPUS_VERSION: u16 = 1;
const NO_LABEL: u32 = u32::MAX;

/// Latent generative structure behind a synthetic vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub marker: u32,
    pub noise: Vec<u32>,
    pub concepts: Vec<Concept>,
    /// `antonym_of[c]` is the concept contrasted with `c`, if any.
    pub antonym_of: Vec<Option<usize>>,
    /// Concepts of each polysemous token; the index into this list is the sense label.
    pub token_concepts: BTreeMap<u32, Vec<usize>>,
    /// Negated words and their base forms (`unX -> X`).
    pub negations: BTreeMap<String, String>,
    pub signal_ratio: f64,
    pub contrast_prob: f64,
    pub ctx_min: usize,
    pub ctx_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub signal: Vec<u32>,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub vocab_size: usize,
    /// Surface string of every token id.
    pub token_strings: Vec<String>,
    /// All words, sorted.
    pub words: Vec<String>,
    pub word_tokens: BTreeMap<String, Vec<u32>>,
    pub multi_token_words: BTreeMap<String, Vec<u32>>,
    /// Number of planted senses for tokens with more than one.
    pub planted_senses: BTreeMap<u32, usize>,
    pub m_max: usize,
    pub seed: u64,
    pub grammar: Option<Grammar>,
    #[serde(skip)]
    token_word: BTreeMap<u32, String>,
}

impl VocabSpec {
    /// Registers `words` (surface string and token ids). Multi-token words
    /// must have between 2 and `m_max` tokens.
    pub fn new(
        vocab_size: usize,
        token_strings: Vec<String>,
        words: Vec<(String, Vec<u32>)>,
        planted_senses: BTreeMap<u32, usize>,
        m_max: usize,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size == 0 || words.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if token_strings.len() != vocab_size {
            return Err(Error::Config(format!(
                "{} token strings for vocab_size {vocab_size}",
                token_strings.len()
            )));
        }
        let mut word_tokens = BTreeMap::new();
        let mut multi = BTreeMap::new();
        for (word, ids) in words {
            if ids.is_empty() {
                return Err(Error::Config(format!("word {word:?} has no tokens")));
            }
            if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::Config(format!("word {word:?} uses token {bad} >= vocab_size")));
            }
            if ids.len() > 1 {
                if ids.len() > m_max {
                    return Err(Error::Config(format!(
                        "word {word:?} has {} tokens, more than m_max {m_max}",
                        ids.len()
                    )));
                }
                multi.insert(word.clone(), ids.clone());
            }
            if word_tokens.insert(word.clone(), ids).is_some() {
                return Err(Error::Config(format!("word {word:?} registered twice")));
            }
        }
        for (&tok, &n) in &planted_senses {
            if n == 0 || tok as usize >= vocab_size {
                return Err(Error::Config(format!("invalid planted senses for token {tok}")));
            }
        }
        let mut spec = Self {
            vocab_size,
            token_strings,
            words: word_tokens.keys().cloned().collect(),
            word_tokens,
            multi_token_words: multi,
            planted_senses,
            m_max,
            seed,
            grammar: None,
            token_word: BTreeMap::new(),
        };
        spec.index();
        Ok(spec)
    }

    fn index(&mut self) {
        self.token_word = self
            .word_tokens
            .iter()
            .filter(|(_, ids)| ids.len() == 1)
            .map(|(w, ids)| (ids[0], w.clone()))
            .collect();
    }

    /// Restores derived lookup tables after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index();
        self
    }

    pub fn tokenize(&self, word: &str) -> Result<&[u32]> {
        self.word_tokens
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("unknown word {word:?}")))
    }

    /// The single-token word spelled by `token`, if any.
    pub fn word_of_token(&self, token: u32) -> Option<&str> {
        self.token_word.get(&token).map(String::as_str)
    }

    pub fn senses_of(&self, token: u32) -> usize {
        self.planted_senses.get(&token).copied().unwrap_or(1)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Ground-truth relations implied by the grammar: every pair of words
    /// sharing a concept is a synonym pair, every pair across contrasted
    /// concepts an antonym pair.
    pub fn true_relations(&self) -> Result<BTreeMap<(String, String), Label>> {
        let g = self.require_grammar()?;
        let mut out = BTreeMap::new();
        for (c, concept) in g.concepts.iter().enumerate() {
            for (i, a) in concept.words.iter().enumerate() {
                for b in &concept.words[i + 1..] {
                    out.insert(ordered(a, b), Label::Synonym);
                }
            }
            if let Some(o) = g.antonym_of[c] {
                for a in &concept.words {
                    for b in &g.concepts[o].words {
                        if a != b {
                            out.insert(ordered(a, b), Label::Antonym);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// An incomplete lexical resource in the style of a thesaurus: within-
    /// concept synonym pairs (except those touching negation bases), aligned
    /// antonym pairs, and relations of negated words whose base-form
    /// counterparts are left for morphological expansion to recover.
    pub fn synthetic_resource(&self) -> Result<RelationSet> {
        let g = self.require_grammar()?;
        let bases: BTreeSet<&String> = g.negations.values().collect();
        let negated: BTreeSet<&String> = g.negations.keys().collect();
        let mut pairs = Vec::new();
        for (c, concept) in g.concepts.iter().enumerate() {
            let plain: Vec<&String> = concept
                .words
                .iter()
                .filter(|w| !bases.contains(w) && !negated.contains(w))
                .collect();
            for (i, a) in plain.iter().enumerate() {
                for b in &plain[i + 1..] {
                    pairs.push(((*a).clone(), (*b).clone(), Label::Synonym));
                }
            }
            if let Some(o) = g.antonym_of[c] {
                if c < o {
                    let other: Vec<&String> = g.concepts[o]
                        .words
                        .iter()
                        .filter(|w| !bases.contains(w) && !negated.contains(w))
                        .collect();
                    for (a, b) in plain.iter().zip(&other) {
                        if a != b {
                            pairs.push(((*a).clone(), (*b).clone(), Label::Antonym));
                        }
                    }
                }
            }
        }
        for (neg, base) in &g.negations {
            let own = concept_of_word(g, neg);
            let base_c = concept_of_word(g, base);
            if let (Some(own), Some(base_c)) = (own, base_c) {
                for w in &g.concepts[base_c].words {
                    if w != base && !negated.contains(w) && !bases.contains(w) {
                        pairs.push((neg.clone(), w.clone(), Label::Antonym));
                    }
                }
                for w in &g.concepts[own].words {
                    if w != neg && !negated.contains(w) && !bases.contains(w) {
                        pairs.push((neg.clone(), w.clone(), Label::Synonym));
                    }
                }
            }
        }
        RelationSet::from_pairs(pairs, g.negations.clone())
    }

    fn require_grammar(&self) -> Result<&Grammar> {
        self.grammar
            .as_ref()
            .ok_or_else(|| Error::Config("vocabulary has no generative grammar".into()))
    }
}

fn concept_of_word(g: &Grammar, word: &str) -> Option<usize> {
    g.concepts.iter().position(|c| c.words.iter().any(|w| w == word))
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Shape of a synthetic vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_concepts: usize,
    /// Concepts `(2i, 2i+1)` for `i < antonym_pairs` are contrasted.
    pub antonym_pairs: usize,
    pub signal_per_concept: usize,
    pub words_per_concept: usize,
    /// Single-token words shared by two concepts.
    pub polysemous_words: usize,
    /// `un`-prefixed two-token words, one per antonym pair at most.
    pub negated_words: usize,
    pub three_token_words: usize,
    pub four_token_words: usize,
    pub noise_tokens: usize,
    pub m_max: usize,
    pub signal_ratio: f64,
    pub contrast_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_concepts: 12,
            antonym_pairs: 4,
            signal_per_concept: 8,
            words_per_concept: 3,
            polysemous_words: 6,
            negated_words: 4,
            three_token_words: 4,
            four_token_words: 2,
            noise_tokens: 26,
            m_max: 4,
            signal_ratio: 0.7,
            contrast_prob: 0.25,
            seed: 7,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

fn syllables(i: usize, count: usize) -> Vec<String> {
    let n = CONSONANTS.len() * VOWELS.len();
    let mut parts = Vec::with_capacity(count);
    let mut rest = i;
    for _ in 0..count {
        parts.push(syllable(rest % n));
        rest /= n;
    }
    parts
}

struct Builder {
    token_strings: Vec<String>,
    words: Vec<(String, Vec<u32>)>,
}

impl Builder {
    fn token(&mut self, s: String) -> u32 {
        self.token_strings.push(s);
        (self.token_strings.len() - 1) as u32
    }

    fn word(&mut self, s: String) -> u32 {
        let id = self.token(s.clone());
        self.words.push((s, vec![id]));
        id
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_concepts < 2 {
            return bad("need at least two concepts");
        }
        if 2 * self.antonym_pairs > self.num_concepts {
            return bad("antonym_pairs exceeds num_concepts / 2");
        }
        if self.negated_words > self.antonym_pairs {
            return bad("negated_words exceeds antonym_pairs");
        }
        if self.signal_per_concept == 0 || self.words_per_concept == 0 {
            return bad("concepts need signal tokens and words");
        }
        if self.three_token_words > 0 && self.m_max < 3 || self.four_token_words > 0 && self.m_max < 4 {
            return bad("multi-token words longer than m_max");
        }
        if self.m_max < 2 && self.negated_words > 0 {
            return bad("negated words need m_max >= 2");
        }
        if !(0.0..=1.0).contains(&self.signal_ratio) || !(0.0..=1.0).contains(&self.contrast_prob) {
            return bad("signal_ratio and contrast_prob must lie in [0, 1]");
        }
        Ok(())
    }

    /// Builds the vocabulary and its grammar. Names are deterministic; the
    /// seed only drives sampling.
    pub fn build(&self) -> Result<VocabSpec> {
        self.validate()?;
        let n = self.num_concepts;
        let mut b = Builder {
            token_strings: Vec::new(),
            words: Vec::new(),
        };
        let mut counter = 0usize;
        let mut next_name = |parts: usize| {
            counter += 1;
            syllables(counter, parts).concat()
        };

        let marker = b.word("versus".into());
        let un = b.token("un".into());
        let noise: Vec<u32> = (0..self.noise_tokens).map(|i| b.word(format!("the{i}"))).collect();

        let mut concepts: Vec<Concept> = (0..n)
            .map(|_| Concept {
                signal: Vec::new(),
                words: Vec::new(),
            })
            .collect();
        for concept in concepts.iter_mut() {
            for _ in 0..self.signal_per_concept {
                let name = next_name(2);
                concept.signal.push(b.word(name));
            }
        }
        for concept in concepts.iter_mut() {
            for _ in 0..self.words_per_concept {
                let name = next_name(2);
                b.word(name.clone());
                concept.words.push(name);
            }
        }

        let mut antonym_of = vec![None; n];
        for i in 0..self.antonym_pairs {
            antonym_of[2 * i] = Some(2 * i + 1);
            antonym_of[2 * i + 1] = Some(2 * i);
        }

        let mut token_concepts = BTreeMap::new();
        let mut planted = BTreeMap::new();
        for i in 0..self.polysemous_words {
            let a = (2 * i) % n;
            let mut other = (a + n / 2 + 1) % n;
            while other == a || antonym_of[a] == Some(other) {
                other = (other + 1) % n;
            }
            let name = next_name(2);
            let id = b.word(name.clone());
            concepts[a].words.push(name.clone());
            concepts[other].words.push(name);
            token_concepts.insert(id, vec![a, other]);
            planted.insert(id, 2);
        }

        let mut negations = BTreeMap::new();
        for i in 0..self.negated_words {
            let (pos, neg) = (2 * i, 2 * i + 1);
            let base = concepts[pos].words[0].clone();
            let stem = b.token(format!("##{base}"));
            let word = format!("un{base}");
            b.words.push((word.clone(), vec![un, stem]));
            concepts[neg].words.push(word.clone());
            negations.insert(word, base);
        }

        let long = |count: usize, parts: usize, offset: usize, b: &mut Builder, concepts: &mut Vec<Concept>| {
            for i in 0..count {
                let pieces = syllables(1000 + offset + i, parts);
                let word = pieces.concat();
                let ids: Vec<u32> = pieces
                    .iter()
                    .enumerate()
                    .map(|(j, p)| b.token(if j == 0 { p.clone() } else { format!("##{p}") }))
                    .collect();
                b.words.push((word.clone(), ids));
                concepts[(5 * (offset + i) + 3) % n].words.push(word);
            }
        };
        long(self.three_token_words, 3, 0, &mut b, &mut concepts);
        long(self.four_token_words, 4, self.three_token_words, &mut b, &mut concepts);

        let vocab_size = b.token_strings.len();
        let mut spec = VocabSpec::new(
            vocab_size,
            b.token_strings,
            b.words,
            planted,
            self.m_max,
            self.seed,
        )?;
        spec.grammar = Some(Grammar {
            marker,
            noise,
            concepts,
            antonym_of,
            token_concepts,
            negations,
            signal_ratio: self.signal_ratio,
            contrast_prob: self.contrast_prob,
            ctx_min: 2,
            ctx_max: 4,
        });
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub sequences: Vec<Vec<u32>>,
    /// Generator-side sense index per position; never used for training.
    pub sense_labels: Vec<Vec<Option<u32>>>,
}

impl Corpus {
    pub fn num_positions(&self) -> usize {
        self.sequences.len() * self.seq_len
    }

    /// Occurrence count per token id.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab_size];
        for s in &self.sequences {
            for &t in s {
                counts[t as usize] += 1;
            }
        }
        counts
    }

    pub fn validate(&self, spec: &VocabSpec) -> Result<()> {
        for (seq, labels) in self.sequences.iter().zip(&self.sense_labels) {
            for (&t, l) in seq.iter().zip(labels) {
                if t as usize >= self.vocab_size {
                    return Err(Error::Dimension(format!("token {t} >= vocab {}", self.vocab_size)));
                }
                if let Some(l) = l {
                    if *l as usize >= spec.senses_of(t) {
                        return Err(Error::Dimension(format!("sense label {l} for token {t}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Round-robin bag: every item is drawn once per reshuffled cycle.
struct Bag<T> {
    items: Vec<T>,
    pos: usize,
}

impl<T: Clone> Bag<T> {
    fn new(items: Vec<T>) -> Self {
        let pos = items.len();
        Self { items, pos }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.pos >= self.items.len() {
            self.items.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1].clone()
    }
}

struct Emitter<'a> {
    spec: &'a VocabSpec,
    g: &'a Grammar,
    rng: ChaCha8Rng,
    anchors: Bag<(String, usize)>,
    words_of: Vec<Bag<String>>,
    signal: Vec<Bag<u32>>,
    noise: Bag<u32>,
    tokens: Vec<u32>,
    labels: Vec<Option<u32>>,
}

impl<'a> Emitter<'a> {
    fn new(spec: &'a VocabSpec, g: &'a Grammar, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let anchors = g
            .concepts
            .iter()
            .enumerate()
            .flat_map(|(c, con)| con.words.iter().map(move |w| (w.clone(), c)))
            .collect();
        let noise = if g.noise.is_empty() {
            g.concepts.iter().flat_map(|c| c.signal.clone()).collect()
        } else {
            g.noise.clone()
        };
        Self {
            spec,
            g,
            rng,
            anchors: Bag::new(anchors),
            words_of: g.concepts.iter().map(|c| Bag::new(c.words.clone())).collect(),
            signal: g.concepts.iter().map(|c| Bag::new(c.signal.clone())).collect(),
            noise: Bag::new(noise),
            tokens: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn label(&self, token: u32, concept: usize) -> u32 {
        self.g
            .token_concepts
            .get(&token)
            .and_then(|cs| cs.iter().position(|&c| c == concept))
            .unwrap_or(0) as u32
    }

    fn emit_context(&mut self, concept: usize, len: usize) {
        for _ in 0..len {
            let tok = if self.rng.random_bool(self.g.signal_ratio) {
                self.signal[concept].draw(&mut self.rng)
            } else {
                self.noise.draw(&mut self.rng)
            };
            self.tokens.push(tok);
            self.labels.push(Some(0));
        }
    }

    fn emit_word(&mut self, word: &str, concept: usize) {
        let ids = self.spec.word_tokens[word].clone();
        let single = ids.len() == 1;
        for id in ids {
            let l = if single { self.label(id, concept) } else { 0 };
            self.tokens.push(id);
            self.labels.push(Some(l));
        }
    }

    fn context_len(&mut self) -> usize {
        self.rng.random_range(self.g.ctx_min..=self.g.ctx_max)
    }

    fn segment(&mut self) {
        let (word, concept) = self.anchors.draw(&mut self.rng);
        let len = self.context_len();
        self.emit_context(concept, len);
        self.emit_word(&word, concept);
        if let Some(other) = self.g.antonym_of[concept] {
            if self.rng.random_bool(self.g.contrast_prob) {
                self.tokens.push(self.g.marker);
                self.labels.push(Some(0));
                let w = self.words_of[other].draw(&mut self.rng);
                self.emit_word(&w, other);
                self.emit_context(other, 1);
            }
        }
    }
}

/// Generates `num_sequences` sequences of `seq_len` tokens from the vocabulary's grammar
/// using `spec.seed`.
pub fn generate_corpus(spec: &VocabSpec, num_sequences: usize, seq_len: usize) -> Result<Corpus> {
    generate_corpus_with_seed(spec, num_sequences, seq_len, spec.seed)
}

pub fn generate_corpus_with_seed(
    spec: &VocabSpec,
    num_sequences: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if spec.vocab_size == 0 || spec.words.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    if seq_len < 2 || num_sequences == 0 {
        return Err(Error::Config("need seq_len >= 2 and at least one sequence".into()));
    }
    let g = spec.require_grammar()?;
    let total = num_sequences * seq_len;
    let mut em = Emitter::new(spec, g, seed, 0);
    while em.tokens.len() < total {
        em.segment();
    }
    em.tokens.truncate(total);
    em.labels.truncate(total);
    let sequences = em.tokens.chunks(seq_len).map(<[u32]>::to_vec).collect();
    let sense_labels = em.labels.chunks(seq_len).map(<[Option<u32>]>::to_vec).collect();
    Ok(Corpus {
        vocab_size: spec.vocab_size,
        seq_len,
        sequences,
        sense_labels,
    })
}

/// Multiple-choice next-word item: which option best continues the prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeItem {
    pub prefix: Vec<u32>,
    pub options: Vec<Vec<u32>>,
    pub answer: usize,
    pub concept: usize,
}

/// Held-out cloze items: a distractor segment, then a context drawn from
/// concept `c`; the answer is a word of `c`, distractors are words outside `c`.
pub fn generate_cloze(
    spec: &VocabSpec,
    num_items: usize,
    num_choices: usize,
    seed: u64,
) -> Result<Vec<ClozeItem>> {
    if num_choices < 2 {
        return Err(Error::Config("cloze items need at least two choices".into()));
    }
    let g = spec.require_grammar()?;
    let all_words: Vec<&String> = g.concepts.iter().flat_map(|c| c.words.iter()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut em = Emitter::new(spec, g, seed, 1);
    let mut items = Vec::with_capacity(num_items);
    for i in 0..num_items {
        let concept = i % g.concepts.len();
        em.tokens.clear();
        em.labels.clear();
        em.segment();
        let len = em.context_len();
        em.emit_context(concept, len);
        let prefix = em.tokens.clone();

        let own = &g.concepts[concept].words;
        let answer_word = own
            .choose(&mut em.rng)
            .ok_or_else(|| Error::Config(format!("concept {concept} has no words")))?
            .clone();
        let outside: Vec<&String> = all_words.iter().copied().filter(|w| !own.contains(*w)).collect();
        if outside.len() + 1 < num_choices {
            return Err(Error::Config("not enough distractor words".into()));
        }
        let mut options: Vec<String> = outside
            .choose_multiple(&mut em.rng, num_choices - 1)
            .map(|w| (*w).clone())
            .collect();
        let answer = em.rng.random_range(0..num_choices);
        options.insert(answer, answer_word);
        items.push(ClozeItem {
            prefix,
            options: options
                .iter()
                .map(|w| spec.word_tokens[w].clone())
                .collect(),
            answer,
            concept,
        });
    }
    Ok(items)
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], c: &Corpus) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&CORPUS_VERSION.to_le_bytes())?;
    w.write_all(&(c.vocab_size as u32).to_le_bytes())?;
    w.write_all(&(c.sequences.len() as u32).to_le_bytes())?;
    w.write_all(&(c.seq_len as u32).to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<(usize, usize, usize)> {
    if read_bytes(r, 8)? != magic {
        return Err(Error::format("corpus", "bad magic"));
    }
    let v = read_u16(r)?;
    if v != CORPUS_VERSION {
        return Err(Error::format("corpus", format!("unsupported version {v}")));
    }
    let vocab = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let t = read_u32(r)? as usize;
    Ok((vocab, n, t))
}

pub fn write_corpus<W: Write, L: Write>(c: &Corpus, mut tokens: W, mut labels: L) -> Result<()> {
    write_header(&mut tokens, CORPUS_MAGIC, c)?;
    for s in &c.sequences {
        write_u32s(&mut tokens, s)?;
    }
    tokens.flush()?;
    write_header(&mut labels, LABELS_MAGIC, c)?;
    for s in &c.sense_labels {
        let raw: Vec<u32> = s.iter().map(|l| l.unwrap_or(NO_LABEL)).collect();
        write_u32s(&mut labels, &raw)?;
    }
    labels.flush()?;
    Ok(())
}

pub fn read_corpus<R: Read, L: Read>(mut tokens: R, mut labels: L) -> Result<Corpus> {
    let (vocab, n, t) = read_header(&mut tokens, CORPUS_MAGIC)?;
    let (lv, ln, lt) = read_header(&mut labels, LABELS_MAGIC)?;
    if (lv, ln, lt) != (vocab, n, t) {
        return Err(Error::format("corpus", "label sidecar shape differs from corpus"));
    }
    let mut sequences = Vec::with_capacity(n);
    let mut sense_labels = Vec::with_capacity(n);
    for _ in 0..n {
        let s = read_u32s(&mut tokens, t)?;
        if let Some(bad) = s.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::format("corpus", format!("token id {bad} >= vocab {vocab}")));
        }
        sequences.push(s);
        let l = read_u32s(&mut labels, t)?;
        sense_labels.push(l.into_iter().map(|v| (v != NO_LABEL).then_some(v)).collect());
    }
    Ok(Corpus {
        vocab_size: vocab,
        seq_len: t,
        sequences,
        sense_labels,
    })
}

pub fn save_corpus(c: &Corpus, tokens: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    write_corpus(
        c,
        BufWriter::new(File::create(tokens)?),
        BufWriter::new(File::create(labels)?),
    )
}

pub fn load_corpus(tokens: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(
        BufReader::new(File::open(tokens)?),
        BufReader::new(File::open(labels)?),
    )
}
