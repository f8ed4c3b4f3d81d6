use std::fs;
use std::path::{Path, PathBuf};

use dskd::distill::Mode;
use dskd_cli::pipeline::{run_pipeline, PipelineSummary, COMPOSED, DICT, TEACHER_LOSS};
use dskd_cli::sweep::{run_sweep, SweepSummary};
use dskd_cli::{Axis, RunConfig};

use crate::{ensure, Check};

const STUDENT_SEEDS: usize = 7;
const SIGN_TEST_ALPHA: f64 = 0.1;

/// State carried between the end-to-end criteria.
pub struct Shared {
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
    first_run: Option<PipelineSummary>,
}

impl Shared {
    pub fn new() -> Self {
        match std::env::var_os("DSKD_ACCEPTANCE_OUT") {
            Some(dir) => Self {
                root: PathBuf::from(dir),
                _temp: None,
                first_run: None,
            },
            None => {
                let temp = tempfile::tempdir().expect("temporary directory");
                Self {
                    root: temp.path().to_path_buf(),
                    _temp: Some(temp),
                    first_run: None,
                }
            }
        }
    }

    fn run_a(&self) -> PathBuf {
        self.root.join("run_a")
    }

    fn ensure_first_run(&mut self) -> Result<&PipelineSummary, String> {
        if self.first_run.is_none() {
            let summary = run_pipeline(&config(), &self.run_a()).map_err(|e| e.to_string())?;
            self.first_run = Some(summary);
        }
        Ok(self.first_run.as_ref().expect("just set"))
    }
}

/// Default run configuration with enough student seeds for the sign test.
fn config() -> RunConfig {
    RunConfig {
        student_seeds: STUDENT_SEEDS,
        ..RunConfig::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn directional(shared: &mut Shared) -> Check {
    let cfg = config();
    let baseline = 1.0 / cfg.num_choices as f64;
    let s = shared.ensure_first_run()?;
    let kd = s.accuracies(Mode::Kd);
    let dskd = s.accuracies(Mode::Dskd);
    ensure!(kd.len() == STUDENT_SEEDS && dskd.len() == STUDENT_SEEDS, "missing student runs");
    let (wins, decided, p) = s.sign_test();
    let (mk, md) = (mean(&kd), mean(&dskd));
    let ntp = |m: Mode| mean(&s.runs.iter().filter(|r| r.mode == m).map(|r| r.metrics.next_token_accuracy).collect::<Vec<_>>());
    let detail = format!(
        "cloze KD {mk:.4} vs DSKD {md:.4} (teacher {:.4}, baseline {baseline:.2}); DSKD wins {wins}/{decided}, p = {p:.4}; next-token KD {:.4} vs DSKD {:.4}; per seed KD {kd:.3?} DSKD {dskd:.3?}",
        s.teacher.cloze_accuracy,
        ntp(Mode::Kd),
        ntp(Mode::Dskd)
    );
    ensure!(s.teacher.cloze_accuracy > baseline, "teacher at or below baseline: {detail}");
    ensure!(mk > baseline && md > baseline, "a student is at or below baseline: {detail}");
    ensure!(md > mk, "DSKD mean not above KD: {detail}");
    ensure!(p < SIGN_TEST_ALPHA, "sign test not significant: {detail}");
    Ok(detail)
}

fn compared_files(dir: &Path) -> Result<Vec<String>, String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("loss_"))
        .collect();
    names.sort();
    names.extend([DICT, COMPOSED, TEACHER_LOSS].map(String::from));
    Ok(names)
}

pub fn determinism(shared: &mut Shared) -> Check {
    shared.ensure_first_run()?;
    let run_b = shared.root.join("run_b");
    run_pipeline(&config(), &run_b).map_err(|e| e.to_string())?;
    let names = compared_files(&shared.run_a())?;
    ensure!(
        names.iter().filter(|n| n.starts_with("loss_")).count() == 2 * STUDENT_SEEDS,
        "expected {} loss CSVs, found {names:?}",
        2 * STUDENT_SEEDS
    );
    for n in &names {
        let a = fs::read(shared.run_a().join(n)).map_err(|e| format!("{n}: {e}"))?;
        let b = fs::read(run_b.join(n)).map_err(|e| format!("{n}: {e}"))?;
        ensure!(a == b, "{n} differs between reruns");
    }
    Ok(format!("{} files bit-identical across reruns", names.len()))
}

fn check_outputs(dir: &Path, s: &SweepSummary, values: &[f64]) -> Result<(), String> {
    let axis = s.axis;
    let csv = fs::read_to_string(dir.join(format!("sweep_{axis}.csv"))).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    ensure!(
        header == format!("{axis},seed,status,cloze_accuracy,next_token_accuracy,perplexity"),
        "bad header {header:?}"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure!(rows.len() == values.len(), "{} rows for {} values", rows.len(), values.len());
    for (row, &v) in rows.iter().zip(values) {
        ensure!(row.len() == 6, "row {row:?} has {} fields", row.len());
        ensure!(row[0].parse::<f64>() == Ok(v), "row {row:?} is not for value {v}");
        ensure!(row[2] == "ok", "point {axis}={v} failed: {}", row[2]);
        for f in &row[3..] {
            let x: f64 = f.parse().map_err(|_| format!("non-numeric field {f:?}"))?;
            ensure!(x.is_finite(), "non-finite metric in {row:?}");
        }
    }
    let svg = fs::read_to_string(dir.join(format!("sweep_{axis}.svg"))).map_err(|e| e.to_string())?;
    ensure!(
        svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>") && svg.contains("<polyline"),
        "malformed SVG for {axis}"
    );
    ensure!(
        svg.matches("<circle").count() == values.len(),
        "SVG for {axis} does not plot one point per value"
    );
    Ok(())
}

pub fn sweeps(shared: &mut Shared) -> Check {
    shared.ensure_first_run()?;
    let dir = shared.run_a();
    let mut cfg = config();
    let kappas = vec![1.0, 5.0, 10.0];
    let ks = vec![2.0, 5.0, 10.0];
    cfg.sweep.insert(Axis::Kappa, kappas.clone());
    cfg.sweep.insert(Axis::K, ks.clone());
    cfg.sweep_seeds = 1;

    let kappa = run_sweep(&cfg, Axis::Kappa, &dir).map_err(|e| e.to_string())?;
    check_outputs(&dir, &kappa, &kappas)?;
    let k = run_sweep(&cfg, Axis::K, &dir).map_err(|e| e.to_string())?;
    check_outputs(&dir, &k, &ks)?;

    let acc = |s: &SweepSummary, v: f64| s.mean_accuracy(v).unwrap_or(f64::NAN);
    let (a1, a5) = (acc(&kappa, 1.0), acc(&kappa, 5.0));
    let trend = if a1 < a5 { "kappa=1 lower" } else { "kappa=1 not lower" };
    Ok(format!(
        "observation: kappa=1 {a1:.4} vs kappa=5 {a5:.4} ({trend}); kappa=10 {:.4}; k=2/5/10 {:.4}/{:.4}/{:.4}",
        acc(&kappa, 10.0),
        acc(&k, 2.0),
        acc(&k, 5.0),
        acc(&k, 10.0)
    ))
}
