mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alda_core::harness::{
    ablation_suite, build_domains, export_features, load_models, run_grad_check_suite, train, write_run_outputs,
    HarnessError,
};
use alda_core::io::write_string_atomic;
use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "alda", version, about = "Adversarial-learned loss domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled defaults applied before the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key=value` overrides applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run; writes record.csv, metrics.json and model.json.
    Train(RunArgs),
    /// Train every method on every seed; writes ablation.csv.
    Ablate(RunArgs),
    /// Write generator features of both domains to features.csv.
    ExportFeatures {
        #[command(flatten)]
        run: RunArgs,
        /// Trained model (defaults to <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check every op and objective gradient against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the source and target sets to source.csv and target.csv.
    GenData(RunArgs),
}

enum Outcome {
    Ok,
    CheckFailed,
}

/// Bad config or overrides; reported with exit status 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn load(args: &RunArgs) -> Result<config::Loaded> {
    config::load(args.preset.as_deref(), args.config.as_deref(), &args.overrides).map_err(|e| UsageError(e).into())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Train(args) => {
            let cfg = load(&args)?.run;
            ensure_dir(&args.out)?;
            let out = match train(&cfg) {
                Ok(out) => out,
                Err(HarnessError::Aborted { step, reason, record }) => {
                    record.write_csv(&args.out.join("record.csv"))?;
                    anyhow::bail!("run aborted at step {step}: {reason} (partial record written)");
                }
                Err(e) => return Err(e.into()),
            };
            let m = write_run_outputs(&args.out, &cfg, &out)?;
            println!(
                "{} steps={} src_acc={:.4} tgt_acc={:.4} accepted_frac={:.4} mmd={:.6}",
                m.method, m.steps, m.src_acc, m.tgt_acc, m.accepted_frac, m.mmd
            );
            Ok(Outcome::Ok)
        }
        Command::Ablate(args) => {
            let loaded = load(&args)?;
            ensure_dir(&args.out)?;
            let table = ablation_suite(&loaded.run, &loaded.methods, &loaded.seeds)?;
            for cell in &table.cells {
                if let Err(e) = &cell.outcome {
                    eprintln!("{} seed {} failed: {e}", cell.method, cell.seed);
                }
            }
            let csv = table.to_csv();
            write_string_atomic(&args.out.join("ablation.csv"), &csv)?;
            print!("{csv}");
            Ok(Outcome::Ok)
        }
        Command::ExportFeatures { run, model } => {
            let cfg = load(&run)?.run;
            ensure_dir(&run.out)?;
            let model_path = model.unwrap_or_else(|| run.out.join("model.json"));
            let models = load_models(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
            let (source, target, _) = build_domains(&cfg)?;
            let path = run.out.join("features.csv");
            let rows = export_features(&models, &[&source, &target], &path)?;
            println!("{rows} feature rows written to {}", path.display());
            Ok(Outcome::Ok)
        }
        Command::GradCheck { seed } => {
            let report = run_grad_check_suite(seed)?;
            for e in &report.entries {
                println!("{e}");
            }
            if report.all_passed() {
                println!("all {} checks passed", report.entries.len());
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailed)
            }
        }
        Command::GenData(args) => {
            let cfg = load(&args)?.run;
            ensure_dir(&args.out)?;
            let (source, target, _) = build_domains(&cfg)?;
            source.write_csv(&args.out.join("source.csv"))?;
            target.write_csv(&args.out.join("target.csv"))?;
            println!("{} source and {} target rows written", source.len(), target.len());
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    let keys = config::help_text();
    let mut command = Cli::command().after_long_help(keys.clone());
    for verb in ["train", "ablate", "export-features", "gen-data"] {
        let keys = keys.clone();
        command = command.mut_subcommand(verb, move |c| c.after_long_help(keys));
    }
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
