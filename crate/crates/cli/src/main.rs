use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dskd::distill::Mode;
use dskd_cli::pipeline::{run_pipeline, Workspace};
use dskd_cli::sweep::run_sweep;
use dskd_cli::{Axis, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "dskd", version, about = "Sense-dictionary distillation on toy decoder LMs")]
struct Cli {
    /// Flat key = value run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding every artifact and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the vocabulary, training and held-out corpora, cloze items and relations.
    GenCorpus,
    /// Trains the teacher on the training corpus.
    TrainTeacher,
    /// Stores the teacher's hidden states per token, capped per token.
    Collect,
    /// Clusters each token's stored states into sense vectors.
    BuildDict,
    /// Adds relations implied by morphological negation.
    ExpandRelations,
    /// Adds sense vectors for multi-token words and writes keep rates.
    Compose,
    /// Trains one student from the teacher checkpoint.
    Train {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
    },
    /// Scores a checkpoint on the held-out corpus and cloze items.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report name; defaults to the checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Trains and scores DSKD students for every configured value of one axis.
    Sweep {
        #[arg(long)]
        axis: Axis,
    },
    /// Runs every stage, trains KD and DSKD students and writes the summary.
    Pipeline,
}

fn config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::validation)?;
    }
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Pipeline => {
            let summary = run_pipeline(&cfg, &cli.out)?;
            print!("{}", summary.markdown(&cfg));
            return Ok(());
        }
        Command::Sweep { axis } => {
            print!("{}", run_sweep(&cfg, *axis, &cli.out)?.markdown());
            return Ok(());
        }
        _ => {}
    }
    let mut ws = Workspace::open(&cfg, &cli.out)?;
    match &cli.command {
        Command::GenCorpus => ws.gen_corpus(),
        Command::TrainTeacher => ws.train_teacher(),
        Command::Collect => ws.collect(),
        Command::BuildDict => ws.build_dict(),
        Command::ExpandRelations => ws.expand_relations(),
        Command::Compose => ws.compose(),
        Command::Train { mode, seed_index } => ws.train_student(*mode, *seed_index).map(|ckpt| println!("{ckpt}")),
        Command::Eval { checkpoint, name } => {
            let name = name.clone().unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map_or("model".into(), |s| s.to_string_lossy().into_owned())
            });
            let metrics = ws.eval(checkpoint, &name)?;
            let json = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::runtime("eval", e))?;
            println!("{json}");
            Ok(())
        }
        Command::Pipeline | Command::Sweep { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
