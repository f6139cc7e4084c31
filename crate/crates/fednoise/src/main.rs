use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fednoise::analysis::{
    attacker_effective_variance, empirical_aggregate_variance, min_tau_sq, simulate_collusion,
    CollusionScenario, ExchangeSetup,
};
use fednoise::config::ExperimentConfig;
use fednoise::dp::{compute_c, compute_sigma, PrivacySpec};
use fednoise::error::Error;
use fednoise::experiment::run_experiment;
use fednoise::protocol::{DistortionMode, ShareConfig};

#[derive(Parser)]
#[command(
    name = "fednoise",
    about = "Federated DP noise-offsetting simulator and analysis harnesses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured federated training scenario matrix and write CSVs.
    Train(TrainArgs),
    /// Monte Carlo check of the aggregate-noise variance closed form.
    Variance(VarianceArgs),
    /// Monte Carlo check of the attacker-view variance under collusion.
    Collusion(CollusionArgs),
    /// Print the calibrated Gaussian noise scale for a privacy budget.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (flat key = value format).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VarianceArgs {
    /// Optional config file supplying unit_sigma_sq / tau_sq / k defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of clients in the exchange.
    #[arg(long)]
    clients: Option<usize>,
    /// Per-client noise variances, comma separated; a single value is
    /// replicated to all clients.
    #[arg(long, value_delimiter = ',')]
    client_sigma_sq: Option<Vec<f64>>,
    /// Per-client distortion variances, comma separated or one shared value.
    #[arg(long, value_delimiter = ',')]
    tau_sq: Option<Vec<f64>>,
    #[arg(long)]
    unit_sigma_sq: Option<f64>,
    /// Payload dimension per share.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a one-row CSV with the theoretical and empirical variances.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollusionArgs {
    /// Fraction of the target's neighbors colluding with the server.
    #[arg(long)]
    rho: f64,
    /// Distortion variance; defaults to the safety threshold max(2*rho-1, 0).
    #[arg(long)]
    tau_sq: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    client_sigma_sq: f64,
    #[arg(long, default_value_t = 0.01)]
    unit_sigma_sq: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// L2 sensitivity of the released update (the clipping threshold).
    #[arg(long)]
    sensitivity: f64,
}

fn run(cli: Cli) -> fednoise::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut cfg = ExperimentConfig::from_file(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_experiment(&cfg)?;
            for result in &outcome.scenarios {
                if let Some(last) = result.reports.last() {
                    println!(
                        "{}: final accuracy {:.4}, mean noise var {:.6}",
                        result.scenario.id,
                        last.accuracy,
                        result.reports.iter().map(|r| r.noise_var).sum::<f64>()
                            / result.reports.len() as f64
                    );
                }
            }
            println!("wrote {}", outcome.rounds_csv.display());
            println!("wrote {}", outcome.summary_csv.display());
            Ok(())
        }
        Command::Variance(args) => {
            let file_cfg = match &args.config {
                Some(path) => Some(ExperimentConfig::from_file(path)?),
                None => None,
            };
            let defaults = ExperimentConfig::default();
            let base = file_cfg.as_ref().unwrap_or(&defaults);
            let clients = args.clients.unwrap_or(base.k);
            let unit = args.unit_sigma_sq.unwrap_or(base.unit_sigma_sq);
            let seed = args.seed.unwrap_or(base.seed);
            let sigmas = broadcast(
                args.client_sigma_sq
                    .unwrap_or_else(|| vec![compute_sigma_sq_or(base)]),
                clients,
                "client-sigma-sq",
            )?;
            let taus = broadcast(
                args.tau_sq.unwrap_or_else(|| base.tau_sq.clone()),
                clients,
                "tau-sq",
            )?;
            let configs: Vec<ShareConfig> = sigmas
                .iter()
                .zip(&taus)
                .map(|(&s, &t)| ShareConfig::new(unit, t, s))
                .collect::<fednoise::Result<_>>()?;
            let setup = ExchangeSetup::new(configs, args.dim, DistortionMode::PerShare)?;
            let theoretical = setup.theoretical_variance();
            let empirical = empirical_aggregate_variance(&setup, args.trials, seed)?;
            println!("clients={clients} trials={} dim={}", args.trials, args.dim);
            println!("theoretical_variance={theoretical}");
            println!("empirical_variance={empirical}");
            if theoretical > 0.0 {
                println!(
                    "relative_error={}",
                    (empirical - theoretical).abs() / theoretical
                );
            }
            if let Some(out) = args.out {
                let mut text = String::from(
                    "clients,dim,trials,unit_sigma_sq,theoretical_variance,empirical_variance\n",
                );
                text.push_str(&format!(
                    "{clients},{},{},{unit},{theoretical},{empirical}\n",
                    args.dim, args.trials
                ));
                std::fs::write(&out, text)?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Collusion(args) => {
            let tau_sq = match args.tau_sq {
                Some(t) => t,
                None => min_tau_sq(args.rho)?,
            };
            let cfg = ShareConfig::new(args.unit_sigma_sq, tau_sq, args.client_sigma_sq)?;
            let scenario = CollusionScenario::new(args.rho, tau_sq, args.client_sigma_sq)?;
            let analytic = attacker_effective_variance(&scenario);
            let simulated = simulate_collusion(&cfg, args.rho, args.trials, args.seed)?;
            println!("rho={} tau_sq={tau_sq} trials={}", args.rho, args.trials);
            println!("min_tau_sq={}", min_tau_sq(args.rho)?);
            println!("attacker_variance_analytic={analytic}");
            println!("attacker_variance_simulated={simulated}");
            Ok(())
        }
        Command::Calibrate(args) => {
            let spec = PrivacySpec::new(args.epsilon, args.delta, args.sensitivity)?;
            let scale = compute_sigma(&spec)?;
            println!("c={}", compute_c(args.delta)?);
            println!("sigma={}", scale.sigma);
            println!("sigma_sq={}", scale.sigma_sq);
            Ok(())
        }
    }
}

fn compute_sigma_sq_or(cfg: &ExperimentConfig) -> f64 {
    PrivacySpec::new(cfg.epsilon, cfg.delta, cfg.sensitivity)
        .and_then(|s| compute_sigma(&s))
        .map(|s| s.sigma_sq)
        .unwrap_or(1.0)
}

fn broadcast(values: Vec<f64>, clients: usize, flag: &str) -> fednoise::Result<Vec<f64>> {
    if values.len() == 1 {
        Ok(vec![values[0]; clients])
    } else if values.len() == clients {
        Ok(values)
    } else {
        Err(Error::Config(format!(
            "--{flag} needs 1 or {clients} values, got {}",
            values.len()
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Parameter(_) | Error::Format { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
