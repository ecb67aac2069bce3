use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cldnn::experiment::{load_augmented, run_experiment, run_sweep, run_synth, Experiment};
use cldnn::{Config, Error, Result};

#[derive(Parser)]
#[command(name = "cldnn", version, about = "Train and probe LDNN / X-CLDNN utterance classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output root (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Dump log-Mel or MFCC features for every manifest entry.
    Features(Common),
    /// Draw the augmented manifest (noise clip, SNR, offset per mix).
    Augment(Common),
    /// Write the speaker-independent partition.
    Partition(Common),
    /// Train and save the best-validation checkpoint and history.
    Train(Common),
    /// Evaluate a checkpoint on the validation and test splits.
    Eval(Common),
    /// Probe every module of a checkpoint.
    Probe(Common),
    /// Train one model per value of a conv parameter under both conditions.
    Sweep(Common),
    /// Write a synthetic corpus and noise pool.
    Synth(Common),
    /// Features, partition, augmentation, training, evaluation and probing.
    Run(Common),
}

fn load(c: &Common) -> Result<Config> {
    let mut cfg = Config::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.set("out", out.display());
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", seed);
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Features(c) => {
            let exp = Experiment::load(&load(&c)?)?;
            let n = exp.write_features()?;
            println!("wrote {n} feature dumps to {}", exp.layout.features().display());
        }
        Command::Augment(c) => {
            let mut exp = Experiment::load(&load(&c)?)?;
            let path = exp.write_augmented()?;
            println!("wrote {}", path.display());
        }
        Command::Partition(c) => {
            let exp = Experiment::load(&load(&c)?)?;
            let path = exp.write_partition()?;
            let p = &exp.partition;
            println!(
                "{} train / {} val / {} test speakers -> {}",
                p.train.len(),
                p.validation.len(),
                p.test.len(),
                path.display()
            );
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let mut exp = Experiment::load(&cfg)?;
            if let Some(path) = cfg.get_str("augmented") {
                exp.set_augmented(load_augmented(path)?);
            }
            let out = exp.train()?;
            println!(
                "best epoch {} of {}, checkpoint {}",
                out.best_epoch,
                out.history.len(),
                exp.layout.best_checkpoint().display()
            );
        }
        Command::Eval(c) => {
            let mut exp = Experiment::load(&load(&c)?)?;
            let model = exp.load_model()?;
            for (split, cond, ua) in exp.evaluate(&model)? {
                println!("{} {} ua={ua:.4}", split.name(), cond.name());
            }
        }
        Command::Probe(c) => {
            let mut exp = Experiment::load(&load(&c)?)?;
            let model = exp.load_model()?;
            let report = exp.probe(&model)?;
            for r in &report.rows {
                let rho = r.rho.map_or("inf".to_string(), |v| format!("{v:.4}"));
                println!("{} {} ua={:.4} rho={rho}", r.tap, r.label_type.name(), r.probe_ua);
            }
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let param = cfg.get_str("sweep_param").unwrap_or("h1").to_string();
            let values = cfg.get_list::<usize>("sweep_values")?.unwrap_or_else(|| (4..=12).collect());
            let window = cfg.get_or("median_window", 5)?;
            for r in run_sweep(&cfg, &param, &values, window)? {
                println!(
                    "{param}={} clean={:.4} noisy={:.4} seed={}",
                    r.value, r.val_ua_clean, r.val_ua_noisy, r.seed
                );
            }
        }
        Command::Synth(c) => {
            let cfg = load(&c)?;
            let dir = cfg.get_str("out").unwrap_or("synth").to_string();
            let corpus = run_synth(&cfg, &dir)?;
            println!("wrote {} utterances, manifest {}", corpus.entries.len(), corpus.manifest.display());
        }
        Command::Run(c) => {
            let summary = run_experiment(&load(&c)?)?;
            for (split, cond, ua) in &summary.eval {
                println!("{} {} ua={ua:.4}", split.name(), cond.name());
            }
            println!("artifacts in {}", summary.layout.root.display());
        }
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
