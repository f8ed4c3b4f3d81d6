//! Word-level synonym/antonym relations and morphological-negation expansion.
//!
//! Relations TSV: `word1<TAB>word2<TAB>syn|ant`, base-form TSV:
//! `word<TAB>base`. Blank lines and lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Synonym,
    Antonym,
}

impl Label {
    pub fn flip(self) -> Self {
        match self {
            Label::Synonym => Label::Antonym,
            Label::Antonym => Label::Synonym,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Synonym => "syn",
            Label::Antonym => "ant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "syn" => Some(Label::Synonym),
            "ant" => Some(Label::Antonym),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Synonym => "synonym",
            Label::Antonym => "antonym",
        })
    }
}

/// Order-normalized labeled word pairs plus a base-form map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationSet {
    pairs: BTreeMap<(String, String), Label>,
    base_map: BTreeMap<String, String>,
    partners: BTreeMap<String, [BTreeSet<String>; 2]>,
}

/// What [`RelationSet::expand_morphological_with_report`] did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExpansionReport {
    pub added: Vec<(String, String, Label)>,
    /// Derived pairs dropped because an existing or competing pair disagrees.
    pub conflicts: Vec<(String, String)>,
    /// Derived pairs that collapsed to a self-pair.
    pub self_pairs: Vec<String>,
}

fn normalize(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl RelationSet {
    /// Builds a set from raw pairs. Self-pairs and contradictory labels are errors.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (String, String, Label)>,
        base_map: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut out: BTreeMap<(String, String), Label> = BTreeMap::new();
        for (a, b, l) in pairs {
            if a == b {
                return Err(Error::Config(format!("self-pair ({a}, {b})")));
            }
            let key = normalize(&a, &b);
            if let Some(&prev) = out.get(&key) {
                if prev != l {
                    return Err(Error::Conflict {
                        a: key.0,
                        b: key.1,
                        first: prev.to_string(),
                        second: l.to_string(),
                    });
                }
            }
            out.insert(key, l);
        }
        Ok(Self::build(out, base_map))
    }

    fn build(pairs: BTreeMap<(String, String), Label>, base_map: BTreeMap<String, String>) -> Self {
        let mut partners: BTreeMap<String, [BTreeSet<String>; 2]> = BTreeMap::new();
        for ((a, b), l) in &pairs {
            let slot = *l as usize;
            partners.entry(a.clone()).or_default()[slot].insert(b.clone());
            partners.entry(b.clone()).or_default()[slot].insert(a.clone());
        }
        Self {
            pairs,
            base_map,
            partners,
        }
    }

    /// Parses both TSV streams; `*_name` is used in error messages.
    pub fn ingest<R: BufRead, B: BufRead>(
        relations: R,
        relations_name: &str,
        base: B,
        base_name: &str,
    ) -> Result<Self> {
        let mut pairs: BTreeMap<(String, String), (Label, usize)> = BTreeMap::new();
        for (i, line) in relations.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: relations_name.to_string(),
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [a, b, l] = fields.as_slice() else {
                return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let (a, b) = (a.trim(), b.trim());
            if a.is_empty() || b.is_empty() {
                return Err(parse_err("empty word".into()));
            }
            let label = Label::parse(l.trim())
                .ok_or_else(|| parse_err(format!("unknown label {:?}, expected syn or ant", l.trim())))?;
            if a == b {
                return Err(parse_err(format!("self-pair ({a}, {b})")));
            }
            let key = normalize(a, b);
            match pairs.get(&key) {
                Some(&(prev, prev_line)) if prev != label => {
                    return Err(Error::Conflict {
                        a: key.0,
                        b: key.1,
                        first: format!("{prev} at {relations_name}:{prev_line}"),
                        second: format!("{label} at {relations_name}:{line_no}"),
                    });
                }
                Some(_) => {}
                None => {
                    pairs.insert(key, (label, line_no));
                }
            }
        }

        let mut base_map = BTreeMap::new();
        for (i, line) in base.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: base_name.to_string(),
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [w, b] = fields.as_slice() else {
                return Err(parse_err(format!("expected 2 tab-separated fields, got {}", fields.len())));
            };
            let (w, b) = (w.trim(), b.trim());
            if w.is_empty() || b.is_empty() || w == b {
                return Err(parse_err("base form must be a different, non-empty word".into()));
            }
            if let Some(prev) = base_map.get(w) {
                if prev != b {
                    return Err(parse_err(format!("{w} already has base {prev}")));
                }
            }
            base_map.insert(w.to_string(), b.to_string());
        }

        Ok(Self::build(
            pairs.into_iter().map(|(k, (l, _))| (k, l)).collect(),
            base_map,
        ))
    }

    pub fn ingest_files(relations: impl AsRef<Path>, base: impl AsRef<Path>) -> Result<Self> {
        let rp = relations.as_ref();
        let bp = base.as_ref();
        Self::ingest(
            BufReader::new(File::open(rp)?),
            &rp.display().to_string(),
            BufReader::new(File::open(bp)?),
            &bp.display().to_string(),
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, Label)> {
        self.pairs.iter().map(|((a, b), &l)| (a.as_str(), b.as_str(), l))
    }

    pub fn label(&self, a: &str, b: &str) -> Option<Label> {
        self.pairs.get(&normalize(a, b)).copied()
    }

    pub fn base_map(&self) -> &BTreeMap<String, String> {
        &self.base_map
    }

    /// Every word that takes part in at least one pair, sorted.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.partners.keys().map(String::as_str)
    }

    /// `(synonyms, antonyms)` of `word`, each sorted.
    pub fn relations_of(&self, word: &str) -> (Vec<String>, Vec<String>) {
        match self.partners.get(word) {
            Some([syn, ant]) => (syn.iter().cloned().collect(), ant.iter().cloned().collect()),
            None => (Vec::new(), Vec::new()),
        }
    }

    /// One hop of morphological negation: for each pair whose word has a base
    /// form, relate the base form to the partner with the flipped label.
    pub fn expand_morphological(&self) -> RelationSet {
        self.expand_morphological_with_report().0
    }

    pub fn expand_morphological_with_report(&self) -> (RelationSet, ExpansionReport) {
        let mut report = ExpansionReport::default();
        let mut derived: BTreeMap<(String, String), Option<Label>> = BTreeMap::new();
        for ((a, b), &label) in &self.pairs {
            for (negated, partner) in [(a, b), (b, a)] {
                let Some(base) = self.base_map.get(negated) else { continue };
                if base == partner {
                    warn!("expansion of ({a}, {b}) collapses to self-pair on {base}; skipped");
                    report.self_pairs.push(base.clone());
                    continue;
                }
                let key = normalize(base, partner);
                let flipped = label.flip();
                derived
                    .entry(key)
                    .and_modify(|slot| {
                        if *slot != Some(flipped) {
                            *slot = None;
                        }
                    })
                    .or_insert(Some(flipped));
            }
        }

        let mut pairs = self.pairs.clone();
        for ((a, b), label) in derived {
            match (label, self.pairs.get(&(a.clone(), b.clone()))) {
                (None, _) => {
                    warn!("derived pairs disagree on ({a}, {b}); dropped");
                    report.conflicts.push((a, b));
                }
                (Some(l), Some(&existing)) if existing != l => {
                    warn!("derived {l} ({a}, {b}) contradicts existing {existing}; dropped");
                    report.conflicts.push((a, b));
                }
                (Some(_), Some(_)) => {}
                (Some(l), None) => {
                    report.added.push((a.clone(), b.clone(), l));
                    pairs.insert((a, b), l);
                }
            }
        }
        (Self::build(pairs, self.base_map.clone()), report)
    }

    pub fn write_relations_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for ((a, b), l) in &self.pairs {
            writeln!(w, "{a}\t{b}\t{}", l.as_str())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_base_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (word, base) in &self.base_map {
            writeln!(w, "{word}\t{base}")?;
        }
        w.flush()?;
        Ok(())
    }
}
