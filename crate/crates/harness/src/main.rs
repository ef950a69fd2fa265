use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use visemekl::metrics::ver;
use visemekl::models::{predict_visemes, Checkpoint, VisualModel};
use visemekl::synth::{load_dataset, save_dataset, Dataset, SpeechType};

use visemekl_harness::campaign::{self, ExperimentSpec};
use visemekl_harness::config::{load_campaign, load_run};
use visemekl_harness::report::{self, Format};
use visemekl_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "visemekl", version, about = "Viseme KL loss experiments on synthetic lip features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [gen] section of a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one visual model with the [loss] terms of a config.
    Train {
        #[arg(long)]
        spec: PathBuf,
        /// Dataset directory; generated from [gen] when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to `run/` next to the spec file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Viseme error rates of a visual checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the 13-row loss ablation table.
    Table {
        #[arg(long)]
        campaign: PathBuf,
        /// Worker threads; overrides [campaign] workers.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the silent-data fraction sweep for the baseline and full losses.
    Sweep {
        #[arg(long)]
        campaign: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rebuild a report from a campaign directory.
    Report {
        #[arg(long)]
        campaign_dir: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out } => {
            let cfg = load_run(&config)?;
            let ds = campaign::generate(&cfg)?;
            save_dataset(&ds, &out)?;
            println!("wrote {} utterances to {}", ds.train.len() + ds.val.len() + ds.test.len(), out.display());
            Ok(())
        }
        Command::Train { spec, data, out } => {
            let cfg = load_run(&spec)?;
            let ds = match data {
                Some(d) => load_dataset(&d)?,
                None => campaign::generate(&cfg)?,
            };
            let out = out.unwrap_or_else(|| spec.parent().unwrap_or(Path::new(".")).join("run"));
            let exp = ExperimentSpec::new(&cfg.weighted(&cfg.terms), cfg.silent_fraction, vec![cfg.train.seed]);
            let run = campaign::run_visual(&cfg, &ds, &exp, cfg.train.seed);
            campaign::write_run(&out, &run, 0)?;
            match &run.result.outcome {
                Ok(r) => {
                    println!("{}: VER normal {:.4} silent {:.4} (best epoch {})", exp.name, r.ver_normal, r.ver_silent, run.result.best_epoch);
                    println!("outputs in {}", out.display());
                    Ok(())
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    Err(HarnessError::RunFailures(1))
                }
            }
        }
        Command::Eval { checkpoint, data } => {
            let model = VisualModel::<f64>::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let ds: Dataset<f64> = load_dataset(&data)?;
            let first = ds.test.first().ok_or(visemekl::Error::EmptySplit("test"))?;
            let fpv = first.frames.rows() / first.labels.len();
            println!("speech_type,utterances,ver");
            for ty in [SpeechType::Normal, SpeechType::Silent] {
                let utts = Dataset::split_by_type(&ds.test, ty);
                let refs: Vec<_> = utts.iter().map(|u| u.labels.clone()).collect();
                let hyps = predict_visemes(&model, &utts, fpv)?;
                println!("{ty},{},{}", utts.len(), ver(&refs, &hyps)?);
            }
            Ok(())
        }
        Command::Table { campaign: path, workers } => run_campaign(&path, workers, false),
        Command::Sweep { campaign: path, workers } => run_campaign(&path, workers, true),
        Command::Report { campaign_dir, format } => {
            let f = match format {
                ReportFormat::Csv => Format::Csv,
                ReportFormat::Md => Format::Md,
            };
            print!("{}", report::report_from_dir(&campaign_dir, f)?);
            Ok(())
        }
    }
}

fn run_campaign(path: &Path, workers: Option<usize>, sweep: bool) -> Result<()> {
    let mut c = load_campaign(path)?;
    if let Some(w) = workers {
        c.workers = w;
    }
    let outcome = if sweep {
        campaign::run_silent_sweep(&c)?
    } else {
        campaign::run_table_matrix(&c)?
    };
    let kind = if sweep { "sweep" } else { "table" };
    print!("{}", std::fs::read_to_string(outcome.dir.join(format!("{kind}.md")))?);
    println!("reports in {}", outcome.dir.display());
    if outcome.failures > 0 {
        return Err(HarnessError::RunFailures(outcome.failures));
    }
    Ok(())
}
