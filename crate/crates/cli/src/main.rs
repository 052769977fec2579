//! Command-line front end for the semantic-communication link simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semlink::harness::{
    compare_allocators, export_importance_map, importance_csv, run_sweep, selftest, train_knowledge_base,
    train_policy, Allocator, Experiment, ExperimentConfig, KnowledgeBase, Profile, SweepAxis,
};
use semlink::{Error, Result};

#[derive(Parser)]
#[command(name = "semlink", version, about = "OFDM digital semantic communication link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; its keys override the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for episodes and policy training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; a relative knowledge-base path resolves against it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default configuration: desk or full.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Allocator for single-allocator commands; restricts sweeps and
    /// comparisons to it.
    #[arg(long, global = true)]
    allocator: Option<String>,
    /// Sweep axis: snr_db, n_paths, n_pilots, budget or bsc_p.
    #[arg(long, global = true)]
    axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    /// Episodes per sweep point or comparison.
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the codec and its task relevance; writes the knowledge base.
    TrainCodec,
    /// Train the bit-allocation policy; writes training_curve.csv and adds
    /// the policy to the knowledge base.
    TrainDppo,
    /// Sweep one axis for every configured allocator; writes sweep.csv.
    RunSweep,
    /// Paired comparison of allocators; writes compare_summary.csv and
    /// win_rate.csv.
    Compare,
    /// Importance weights and allocated bits per semantic; writes
    /// importance.csv.
    ExportImportance {
        /// Test-sample index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Small end-to-end run with invariant checks; writes selftest.csv.
    Selftest,
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::profile(c.profile.parse::<Profile>()?);
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load_over(&base, path)?,
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.dppo.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output = out.clone();
    }
    if let Some(name) = &c.allocator {
        let a: Allocator = name.parse()?;
        cfg.allocator = a;
        cfg.allocators = vec![a];
    }
    if let Some(axis) = &c.axis {
        cfg.sweep.axis = axis.parse::<SweepAxis>()?;
    }
    if let Some(values) = &c.values {
        cfg.sweep.values = values.clone();
    }
    if let Some(trials) = c.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn kb_path(cfg: &ExperimentConfig) -> PathBuf {
    if cfg.knowledge_base.is_absolute() {
        cfg.knowledge_base.clone()
    } else {
        cfg.output.join(&cfg.knowledge_base)
    }
}

fn write(cfg: &ExperimentConfig, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

fn experiment(cfg: ExperimentConfig) -> Result<Experiment> {
    let kb = KnowledgeBase::load(&kb_path(&cfg))?;
    Experiment::new(cfg, kb)
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::TrainCodec => {
            let (kb, r) = train_knowledge_base(&cfg)?;
            let path = kb_path(&cfg);
            kb.save(&path)?;
            println!(
                "train accuracy {:.4}, test accuracy {:.4}, final loss {:.6}",
                r.train_accuracy, r.test_accuracy, r.final_loss
            );
            report(&path);
        }
        Command::TrainDppo => {
            let mut exp = experiment(cfg)?;
            let (policy, curve) = train_policy(&exp)?;
            exp.policy = Some(policy);
            println!(
                "{} iterations, final-50 mean reward {:.6}",
                curve.iterations.len(),
                curve.tail_mean(50)
            );
            report(&write(&exp.cfg, "training_curve.csv", &curve.to_csv())?);
            let path = kb_path(&exp.cfg);
            exp.knowledge_base().save(&path)?;
            report(&path);
        }
        Command::RunSweep => {
            let exp = experiment(cfg)?;
            let table = run_sweep(&exp)?;
            report(&write(&exp.cfg, "sweep.csv", &table.to_csv())?);
        }
        Command::Compare => {
            let exp = experiment(cfg)?;
            let cmp = compare_allocators(&exp)?;
            print!("{}", cmp.summary_csv());
            report(&write(&exp.cfg, "compare_summary.csv", &cmp.summary_csv())?);
            report(&write(&exp.cfg, "win_rate.csv", &cmp.win_rate_csv())?);
        }
        Command::ExportImportance { index } => {
            let exp = experiment(cfg)?;
            let rows = export_importance_map(&exp, index)?;
            report(&write(&exp.cfg, "importance.csv", &importance_csv(&rows))?);
        }
        Command::Selftest => {
            let csv = selftest(cfg.seed)?;
            print!("{csv}");
            report(&write(&cfg, "selftest.csv", &csv)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}
