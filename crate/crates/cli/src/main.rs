//! `adr` command-line tool: training runs, sweeps, label-noise experiments,
//! gradient audits and curve emission.
//!
//! Exit status: 0 when every hard gate passes, 1 when a run diverges or a
//! hard gate fails, 2 for invalid configuration or arguments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adr::audit::AuditOptions;
use adr::config::{parse_f64_list, parse_seed_list, parse_usize_list, ExperimentConfig};
use adr::experiment::{cmd_curves, cmd_gradcheck, cmd_noise, cmd_sweep, cmd_train};
use adr::losses::LossKind;
use adr::simplex::PhiKind;

#[derive(Parser, Debug)]
#[command(name = "adr", version, about = "Adaptive discriminative regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the training commands. Flags override the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, as `0,1,2` or the half-open range `0..5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Loss: ce, ce+adr, ls, ls+adr or ce+entropy.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    /// Uncertainty measure: entropy or variance.
    #[arg(long, value_parser = parse_phi)]
    phi: Option<PhiKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn parse_phi(s: &str) -> Result<PhiKind, String> {
    PhiKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every seed and print a mean ± std summary.
    Train(Common),
    /// Train a γ × τ grid plus a cross-entropy baseline.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated γ values.
        #[arg(long, default_value = "0.01,0.05,0.1")]
        gammas: String,
        /// Comma-separated τ values.
        #[arg(long, default_value = "2,3,5")]
        taus: String,
    },
    /// Train ce and ce+adr under symmetric label noise.
    Noise {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise rates in [0, 1].
        #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
        rates: String,
    },
    /// Audit analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds; the first one is used when given.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "out/gradcheck")]
        out: PathBuf,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Negative control: scale the ADR gradient by (1 + DELTA).
        #[arg(long, hide = true)]
        perturb_adr: Option<f64>,
    },
    /// Write the regularizer curves along the uniform to one-hot slice.
    Curves {
        #[arg(long, default_value_t = 10)]
        c: usize,
        #[arg(long, default_value_t = 3)]
        tau: usize,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value = "out/curves")]
        out: PathBuf,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        seeds: Option<String>,
    },
}

enum Failure {
    Usage(String),
    Gate(String),
}

impl From<adr::Error> for Failure {
    fn from(e: adr::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        cfg.run.seeds = parse_seed_list(seeds)?;
    }
    if let Some(loss) = common.loss {
        cfg.loss.kind = loss;
    }
    if let Some(gamma) = common.gamma {
        cfg.loss.gamma = gamma;
    }
    if let Some(tau) = common.tau {
        cfg.loss.tau = Some(tau);
    }
    if let Some(phi) = common.phi {
        cfg.loss.phi = phi;
    }
    if let Some(epochs) = common.epochs {
        cfg.run.epochs = epochs;
    }
    if let Some(lr) = common.lr {
        cfg.optim.lr = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(common) => {
            let cfg = resolve(&common)?;
            let summary = cmd_train(&cfg)?;
            print!("{}", summary.render());
            println!("records written to {}", cfg.run.out.display());
            if summary.diverged() {
                return Err(Failure::Gate("training diverged".into()));
            }
        }
        Command::Sweep {
            common,
            gammas,
            taus,
        } => {
            let cfg = resolve(&common)?;
            let gammas = parse_f64_list(&gammas)?;
            let taus = parse_usize_list(&taus)?;
            let sweep = cmd_sweep(&cfg, &gammas, &taus)?;
            print!("{}", sweep.render());
            println!("sweep.csv written to {}", cfg.run.out.display());
            if sweep.diverged() {
                return Err(Failure::Gate("a sweep run diverged".into()));
            }
        }
        Command::Noise { common, rates } => {
            let cfg = resolve(&common)?;
            let rates = parse_f64_list(&rates)?;
            let noise = cmd_noise(&cfg, &rates)?;
            print!("{}", noise.render());
            println!("noise.csv written to {}", cfg.run.out.display());
            if noise.diverged() {
                return Err(Failure::Gate("a noise run diverged".into()));
            }
        }
        Command::Gradcheck {
            samples,
            seed,
            seeds,
            out,
            config: _,
            perturb_adr,
        } => {
            let seed = match seeds {
                Some(s) => parse_seed_list(&s)?[0],
                None => seed,
            };
            let options = AuditOptions {
                perturb_adr,
                ..AuditOptions::new(samples, seed)
            };
            let report = cmd_gradcheck(options, &out)?;
            print!("{}", report.render());
            if !report.gradients_passed() {
                let worst = report
                    .worst_check()
                    .and_then(|c| c.worst.map(|w| (c.name, w)))
                    .map_or(String::new(), |(name, w)| {
                        format!(
                            "; worst: {name} at point {} (c={}, tau={}, index {}): analytic {:e} vs numeric {:e}",
                            w.point, w.c, w.tau, w.index, w.analytic, w.numeric
                        )
                    });
                return Err(Failure::Gate(format!("gradient check failed{worst}")));
            }
        }
        Command::Curves {
            c, tau, grid, out, ..
        } => {
            let gates = cmd_curves(c, tau, grid, &out)?;
            for g in &gates {
                println!("{g}");
            }
            println!("curves.csv written to {}", out.display());
            if gates.iter().any(|g| !g.passed) {
                return Err(Failure::Gate("a curve shape gate failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
