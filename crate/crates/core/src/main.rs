use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_rom::io::{cmd_evaluate, cmd_generate, cmd_predict, cmd_train, parse_mu, RunConfig};
use latent_rom::Result;

#[derive(Parser)]
#[command(name = "latent-rom", version, about = "Latent-dynamics reduced-order models with greedy sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order model and write snapshot files plus a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model with greedy acquisition and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predictions with full-order solves over the whole grid.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the field and its variance at one parameter.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated parameter values, e.g. 0.8,1.0
        #[arg(long, allow_hyphen_values = true)]
        mu: String,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "prediction")]
        out: PathBuf,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load(&config, out)?;
            let m = cmd_generate(&cfg)?;
            println!(
                "wrote {} snapshots to {} ({:.3} s, mean solve {:.3e} s)",
                m.entries.len(),
                cfg.output_dir.display(),
                m.total_secs,
                m.mean_runtime()
            );
        }
        Command::Train { config, seed, out } => {
            let mut cfg = load(&config, out)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let r = cmd_train(&cfg)?;
            for a in &r.acquisitions {
                println!("epoch {:>7}  acquired {}  max std {:.4e}", a.epoch, a.mu, a.max_std);
            }
            if let Some(l) = r.final_loss {
                println!("final loss {:.6e} (ae {:.6e}, sindy {:.6e})", l.total, l.l_ae, l.l_sindy);
            }
            println!("{} epochs, {} snapshots, checkpoint {}", r.epochs, r.dataset_len, r.checkpoint.display());
        }
        Command::Evaluate { config, checkpoint, samples, seed, out } => {
            let cfg = load(&config, out)?;
            let n_s = samples.unwrap_or(cfg.trainer.n_samples);
            let (s, _) = cmd_evaluate(&cfg, &checkpoint, n_s, seed)?;
            println!("worst max relative error {:.4}% at {:?}", 100.0 * s.worst_error, s.worst_mu);
            println!("mean max relative error  {:.4}%", 100.0 * s.mean_error);
            println!(
                "mean speed-up {:.2}x (full-order {:.3e} s, reduced {:.3e} s, {} samples)",
                s.speedup, s.mean_fom_secs, s.mean_rom_secs, s.n_samples
            );
        }
        Command::Predict { checkpoint, mu, samples, seed, out } => {
            let mu = parse_mu(&mu)?;
            let s = cmd_predict(&checkpoint, &mu, samples, seed, &out)?;
            println!("max std {:.6e}, {:.3e} s, written to {}", s.max_std, s.runtime_secs, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
