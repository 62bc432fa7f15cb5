use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use expobracket::error::Result;
use expobracket::report::Report;
use expobracket::run::{self, Scheduler};
use expobracket::RunConfig;

#[derive(Parser)]
#[command(name = "expobracket", version, about = "Exposure-bracketing simulator, trainer and benchmark harness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the seeded scene specs of the training and evaluation corpora.
    GenerateCorpus,
    /// Train the agent and the shutter-only ablation.
    Train,
    /// Evaluate schedulers on the held-out corpus.
    Compare {
        /// Directory holding the checkpoints; defaults to the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of agent, fixed, heuristic, snr, shutter_only, random.
        #[arg(long, value_delimiter = ',')]
        schedulers: Vec<String>,
    },
    /// Compare the agent with the exhaustive oracle on reduced grids.
    Gap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-emit plots from a report JSON.
    Plot {
        report: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn stem_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into())
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.output_dir.clone();
    match cli.cmd {
        Cmd::GenerateCorpus => report_paths(&run::run_generate_corpus(&cfg, &out)?),
        Cmd::Train => {
            let (trained, paths) = run::run_train(&cfg, &out)?;
            if let Some(last) = trained.agent.curve.last() {
                eprintln!("epoch {} mean PSNR-mu {:.2} dB", last.epoch, last.mean_psnr);
            }
            report_paths(&paths);
        }
        Cmd::Compare { checkpoint, schedulers } => {
            let which = if schedulers.is_empty() {
                run::default_schedulers(&cfg)
            } else {
                schedulers.iter().map(|s| s.parse()).collect::<Result<Vec<Scheduler>>>()?
            };
            let trained = run::load_trained(checkpoint.as_deref().unwrap_or(&out), &cfg)?;
            let report = run::run_compare(&cfg, &trained, &which, &run::eval_scenes(&cfg)?)?;
            for a in report.aggregates.iter().filter(|a| a.subset == "dynamic") {
                eprintln!("{:<13} dynamic PSNR-mu {:.2} dB", a.scheduler, a.mean_psnr);
            }
            report_paths(&run::write_report(&report, &out, "compare")?);
        }
        Cmd::Gap { checkpoint } => {
            let trained = run::load_trained(checkpoint.as_deref().unwrap_or(&out), &cfg)?;
            let report = run::run_gap(&cfg, &trained, &run::eval_scenes(&cfg)?)?;
            report_paths(&run::write_report(&report, &out, "gap")?);
        }
        Cmd::Plot { report } => {
            let r = Report::read_json(&report)?;
            let dir = report.parent().map(Path::to_path_buf).unwrap_or_default();
            let dir = cli.common.out.unwrap_or(dir);
            report_paths(&expobracket::plot::emit_plots(&r, &dir, &stem_of(&report))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
