//! patchforge: sequential model editing with patch neurons on a compact
//! multilingual classifier — corpus generation, base training, editing,
//! and evaluation, driven by a single JSON config.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use patchforge_core::editing::EditMethodKind;
use patchforge_core::pipeline::{
    apply_override, cmd_edit, cmd_error_set, cmd_eval, cmd_gen_data, cmd_reproduce,
    cmd_train_base, RunConfig,
};

#[derive(Parser)]
#[command(name = "patchforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multilingual corpus files.
    GenData(ConfigArgs),
    /// Train the base classifier and checkpoint the best validation epoch.
    TrainBase(ConfigArgs),
    /// Apply one editing method to the stored base checkpoint.
    Edit {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: fine-tune, t-patcher, mpn-only, mpn-all.
        #[arg(long)]
        method: String,
    },
    /// Evaluate a checkpoint against the stored corpus.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full pipeline: gen-data, train-base, edit with every configured
    /// method, evaluate, and emit one comparison CSV.
    Reproduce(ConfigArgs),
    /// Run the editing comparison on the subset of edit examples the base
    /// model gets wrong in every language.
    ErrorSet(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run-config JSON document.
    #[arg(long)]
    config: PathBuf,
    /// Override any config leaf by dotted path, e.g. --set gen.n_facts=500
    /// (repeatable).
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    set: Vec<String>,
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("config {} is not valid JSON", args.config.display()))?;
    for assignment in &args.set {
        apply_override(&mut value, assignment)?;
    }
    if let Ok(seed) = std::env::var("PATCHFORGE_SEED") {
        let seed: u64 = seed
            .parse()
            .context("PATCHFORGE_SEED must be an unsigned 64-bit integer")?;
        apply_override(&mut value, &format!("seed={seed}"))?;
    }
    Ok(RunConfig::from_value(value)?)
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(args) => {
            let cfg = load_config(args)?;
            let dataset = cmd_gen_data(&cfg)?;
            println!(
                "corpus written to {} ({} train / {} val / {} edit / {} test examples, {} languages)",
                cfg.paths.corpus_dir.display(),
                dataset.train().len(),
                dataset.val().len(),
                dataset.edit().len(),
                dataset.test().len(),
                dataset.language_codes().len(),
            );
        }
        Command::TrainBase(args) => {
            let cfg = load_config(args)?;
            let outcome = cmd_train_base(&cfg)?;
            let best = outcome.val_accuracy.iter().cloned().fold(0.0, f64::max);
            println!(
                "trained {} epochs; best validation accuracy {:.4}; checkpoint at {}",
                outcome.val_accuracy.len(),
                best,
                patchforge_core::pipeline::base_checkpoint_path(&cfg).display(),
            );
        }
        Command::Edit { config, method } => {
            let cfg = load_config(config)?;
            let Some(kind) = EditMethodKind::from_slug(method) else {
                bail!(
                    "unknown method `{method}`; expected one of fine-tune, t-patcher, mpn-only, mpn-all"
                );
            };
            let (edited, report) = cmd_edit(&cfg, kind)?;
            let triggered = report.records.iter().filter(|r| r.triggered).count();
            println!(
                "{}: {} of {} examples triggered, {} patches, {:.1}s",
                report.method,
                triggered,
                report.records.len(),
                edited.bank.len(),
                report.wall_time_secs,
            );
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load_config(config)?;
            let report = cmd_eval(&cfg, checkpoint)?;
            println!(
                "{}: reliability {:.4}, CLG avg {:.4}, locality {:.4}/{:.4}",
                report.method,
                report.reliability,
                report.clg_avg,
                report.locality_train,
                report.locality_test,
            );
        }
        Command::Reproduce(args) => {
            let cfg = load_config(args)?;
            let summary = cmd_reproduce(&cfg)?;
            print!(
                "{}",
                patchforge_core::eval::render_csv(&summary.reports, None)?
            );
            println!("reports written to {}", summary.files.csv.display());
        }
        Command::ErrorSet(args) => {
            let cfg = load_config(args)?;
            let summary = cmd_error_set(&cfg)?;
            println!("error set size: {}", summary.subset_ids.len());
            print!(
                "{}",
                patchforge_core::eval::render_csv(&summary.reports, None)?
            );
            println!("reports written to {}", summary.files.csv.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
