//! One-axis ablation sweeps over a shared corpus, teacher and dictionary.
//!
//! Each point trains DSKD students with the axis value substituted into the
//! run configuration. Points on the `k` axis cluster and compose their own
//! dictionary. Artifacts of a point live under `sweep_<axis>/<axis>_<value>/`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dskd::composer::populate_word_senses;
use dskd::corpus::{ClozeItem, Corpus, VocabSpec};
use dskd::distill::Mode;
use dskd::embed_store::EmbeddingStore;
use dskd::eval::Metrics;
use dskd::lexicon::RelationSet;
use dskd::sensedict::{self, SenseDict};
use dskd::toylm::{load_checkpoint, ToyDecoder};

use crate::pipeline::{student_name, Workspace, STORE};
use crate::report::line_chart;
use crate::{Axis, CliError, CliResult, RunConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed_index: usize,
    /// `Err` holds the failure message of a point that did not complete.
    pub outcome: Result<Metrics, String>,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    /// Mean cloze accuracy of the completed seeds at `value`.
    pub fn mean_accuracy(&self, value: f64) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.value == value)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.cloze_accuracy))
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.value) {
                v.push(r.value);
            }
        }
        v
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{},seed,status,cloze_accuracy,next_token_accuracy,perplexity\n", self.axis);
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(
                        s,
                        "{},{},ok,{:.6},{:.6},{:.6}",
                        r.value, r.seed_index, m.cloze_accuracy, m.next_token_accuracy, m.perplexity
                    );
                }
                Err(e) => {
                    let msg: String = e.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                    let _ = writeln!(s, "{},{},failed: {msg},,,", r.value, r.seed_index);
                }
            }
        }
        s
    }

    pub fn svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .values()
            .into_iter()
            .filter_map(|v| self.mean_accuracy(v).map(|a| (v, a)))
            .collect();
        line_chart(
            &format!("DSKD cloze accuracy vs {}", self.axis),
            self.axis.key(),
            "held-out cloze accuracy",
            &[("DSKD".to_string(), pts)],
        )
    }

    pub fn markdown(&self) -> String {
        let mut s = format!("# Sweep over {}\n\n| {} | mean cloze acc | completed |\n|---|---|---|\n", self.axis, self.axis);
        for v in self.values() {
            let done = self.rows.iter().filter(|r| r.value == v && r.outcome.is_ok()).count();
            let total = self.rows.iter().filter(|r| r.value == v).count();
            let acc = self.mean_accuracy(v).map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(s, "| {v} | {acc} | {done}/{total} |");
        }
        if self.axis == Axis::Kappa {
            if let (Some(a1), Some(a5)) = (self.mean_accuracy(1.0), self.mean_accuracy(5.0)) {
                let rel = if a1 < a5 {
                    "lower than"
                } else if a1 > a5 {
                    "higher than"
                } else {
                    "equal to"
                };
                let _ = writeln!(
                    s,
                    "\nObservation: kappa=1 accuracy {a1:.4} is {rel} kappa=5 accuracy {a5:.4}. Restricting supervision to a single candidate per set is expected to hurt."
                );
            }
        }
        s
    }
}

struct Shared {
    spec: VocabSpec,
    corpus: Corpus,
    heldout: Corpus,
    cloze: Vec<ClozeItem>,
    teacher: ToyDecoder<f32>,
    rels: RelationSet,
    dict: SenseDict,
    store: Option<EmbeddingStore>,
}

/// Runs every value of `axis`. Shared artifacts are reused when the manifest
/// shows them unchanged and rebuilt otherwise. Writes `sweep_<axis>.csv`,
/// `sweep_<axis>.svg` and `sweep_<axis>.md`.
pub fn run_sweep(cfg: &RunConfig, axis: Axis, dir: &Path) -> CliResult<SweepSummary> {
    cfg.validate()?;
    let values = cfg.axis_values(axis)?.to_vec();
    let points: Vec<(f64, RunConfig)> = values
        .iter()
        .map(|&v| cfg.with_axis(axis, v).map(|c| (v, c)))
        .collect::<CliResult<_>>()?;
    let mut ws = Workspace::open(cfg, dir)?;
    ws.ensure_shared()?;
    const S: &str = "sweep";
    let shared = Shared {
        spec: ws.load_spec(S)?,
        corpus: ws.load_corpus(S, false)?,
        heldout: ws.load_corpus(S, true)?,
        cloze: ws.load_cloze(S)?,
        teacher: ws.load_teacher(S)?,
        rels: ws.load_relations(S, true)?,
        dict: ws.load_dict(S, true)?,
        store: if axis.rebuilds_dict() {
            Some(EmbeddingStore::load(ws.path(STORE)).map_err(|e| CliError::runtime(S, e))?)
        } else {
            None
        },
    };

    let mut rows = Vec::new();
    for (value, point_cfg) in &points {
        let prefix = format!("sweep_{axis}/{axis}_{value}/");
        log::info!("sweep {axis}={value}");
        if let Err(e) = fs::create_dir_all(ws.path(&prefix)) {
            return Err(CliError::runtime(S, e));
        }
        let dict = match point_dict(&mut ws, &shared, point_cfg, &prefix) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("sweep point {axis}={value} failed: {e}");
                for seed_index in 0..cfg.sweep_seeds {
                    rows.push(SweepRow {
                        value: *value,
                        seed_index,
                        outcome: Err(e.to_string()),
                    });
                }
                continue;
            }
        };
        let dict = dict.as_ref().unwrap_or(&shared.dict);
        for seed_index in 0..cfg.sweep_seeds {
            let outcome = run_point(&mut ws, &shared, dict, point_cfg, seed_index, &prefix).map_err(|e| {
                log::warn!("sweep point {axis}={value} seed {seed_index} failed: {e}");
                e.to_string()
            });
            rows.push(SweepRow {
                value: *value,
                seed_index,
                outcome,
            });
        }
    }

    let summary = SweepSummary { axis, rows };
    let stem = format!("sweep_{axis}");
    let files = [
        (format!("{stem}.csv"), summary.csv()),
        (format!("{stem}.svg"), summary.svg()),
        (format!("{stem}.md"), summary.markdown()),
    ];
    for (name, body) in &files {
        fs::write(ws.path(name), body).map_err(|e| CliError::runtime(S, e))?;
        ws.manifest.record(&ws.dir, name, S)?;
    }
    ws.manifest.save(&ws.dir)?;
    Ok(summary)
}

fn point_dict(ws: &mut Workspace<'_>, shared: &Shared, cfg: &RunConfig, prefix: &str) -> CliResult<Option<SenseDict>> {
    const S: &str = "sweep";
    let Some(store) = &shared.store else {
        return Ok(None);
    };
    let err = |e: dskd::Error| CliError::runtime(S, e);
    let mut dict = sensedict::build(store, cfg.k, cfg.seed).map_err(err)?;
    populate_word_senses(&mut dict, &shared.rels, &shared.spec, &cfg.composition()).map_err(err)?;
    let name = format!("{prefix}dict_composed.bin");
    dict.save(ws.path(&name)).map_err(err)?;
    ws.manifest.record(&ws.dir, &name, S)?;
    Ok(Some(dict))
}

fn run_point(
    ws: &mut Workspace<'_>,
    shared: &Shared,
    dict: &SenseDict,
    cfg: &RunConfig,
    seed_index: usize,
    prefix: &str,
) -> CliResult<Metrics> {
    let stage = "sweep";
    let ckpt = ws.train_with(
        stage,
        &shared.spec,
        &shared.corpus,
        &shared.teacher,
        dict,
        &shared.rels,
        cfg,
        Mode::Dskd,
        seed_index,
        prefix,
    )?;
    let model: ToyDecoder<f32> = load_checkpoint(ws.path(&ckpt)).map_err(|e| CliError::runtime(stage, e))?;
    let name = format!("{prefix}{}", student_name(Mode::Dskd, seed_index));
    ws.eval_model(&model, &shared.heldout, &shared.cloze, name.trim_end_matches('/'))
}
