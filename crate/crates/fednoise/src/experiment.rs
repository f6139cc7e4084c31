//! Scenario-matrix experiment runner and CSV reporting.
//!
//! One `train` invocation expands its config into a scenario per
//! (mode, distortion variance) combination, runs every scenario against the
//! same dataset, partition and seed, and writes two CSVs into `out_dir`:
//!
//! - `rounds.csv`: scenario_id, round, mode, tau_sq, partition,
//!   test_accuracy, aggregate_noise_var_empirical,
//!   aggregate_noise_var_theoretical, wall_ms
//! - `summary.csv`: scenario_id, final_accuracy, mean_noise_var, config_hash
//!
//! Every column except the measured `wall_ms` is deterministic for a fixed
//! config and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{load_idx, partition, synth_centers, synth_from_centers, Dataset};
use crate::dp::PrivacySpec;
use crate::error::{Error, Result};
use crate::federation::{run_training, ClientProfile, FederationConfig, Mode, RoundReport};
use crate::models::ModelSpec;
use crate::numerics::{RngStream, StreamPurpose};
use crate::protocol::ClientId;

/// 64-bit FNV-1a, used for the summary config hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub mode: Mode,
    /// Distortion variance label for this scenario (the paper's X axis:
    /// 0 for plain FedAVG, 1 for the DP-FedAVG noise level).
    pub tau_sq: f64,
}

#[derive(Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub reports: Vec<RoundReport>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub scenarios: Vec<ScenarioResult>,
    pub rounds_csv: PathBuf,
    pub summary_csv: PathBuf,
}

fn expand_scenarios(cfg: &ExperimentConfig) -> Vec<Scenario> {
    let mut scenarios = Vec::new();
    for &mode in &cfg.mode {
        match mode {
            Mode::PlainFedAvg => scenarios.push((mode, 0.0)),
            Mode::DpFedAvg => scenarios.push((mode, 1.0)),
            Mode::Niss => {
                for &tau in &cfg.tau_sq {
                    scenarios.push((mode, tau));
                }
            }
        }
    }
    scenarios
        .into_iter()
        .enumerate()
        .map(|(i, (mode, tau_sq))| Scenario {
            id: format!("s{i:03}_{mode}_tau{tau_sq}"),
            mode,
            tau_sq,
        })
        .collect()
}

fn build_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let mut rng = RngStream::derive(cfg.seed, StreamPurpose::DataGen, 0, 0);
            let centers = synth_centers(
                cfg.synth_classes,
                cfg.synth_dim,
                cfg.synth_separation,
                &mut rng,
            )?;
            let train = synth_from_centers(&centers, cfg.synth_train_n, &mut rng)?;
            let test = synth_from_centers(&centers, cfg.synth_test_n, &mut rng)?;
            Ok((train, test))
        }
        DatasetKind::Mnist => {
            let train = load_idx(
                cfg.mnist_train_images.as_ref().unwrap(),
                cfg.mnist_train_labels.as_ref().unwrap(),
            )?;
            let test = load_idx(
                cfg.mnist_test_images.as_ref().unwrap(),
                cfg.mnist_test_labels.as_ref().unwrap(),
            )?;
            Ok((train, test))
        }
    }
}

fn build_profiles(
    cfg: &ExperimentConfig,
    client_data: &[Dataset],
    tau_sq: f64,
) -> Result<Vec<ClientProfile>> {
    let privacy = PrivacySpec::new(cfg.epsilon, cfg.delta, cfg.sensitivity)?;
    client_data
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            let tau = cfg
                .tau_sq_per_client
                .as_ref()
                .map_or(tau_sq, |pc| pc[i]);
            ClientProfile::new(ClientId(i as u64), ds.clone(), privacy, cfg.unit_sigma_sq, tau)
        })
        .collect()
}

/// Execute the configured scenario matrix and write the CSV artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (train, test) = build_datasets(cfg)?;
    let spec = ModelSpec::new(
        cfg.model,
        train.input_dim(),
        train.num_classes.max(test.num_classes),
    )?;
    // Partition once so every scenario sees identical client datasets.
    let mut part_rng = RngStream::derive(cfg.seed, StreamPurpose::DataGen, 1, 0);
    let client_data = partition(
        &train,
        cfg.k,
        cfg.partition,
        cfg.shards_per_client,
        &mut part_rng,
    )?;

    let scenarios = expand_scenarios(cfg);
    let mut results = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let profiles = build_profiles(cfg, &client_data, scenario.tau_sq)?;
        let fed_cfg = FederationConfig {
            clients: cfg.k,
            fraction: cfg.c,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            rounds: cfg.rounds,
            mode: scenario.mode,
            clip_threshold: cfg.clip_threshold,
            distortion: cfg.distortion,
        };
        let reports = run_training(&fed_cfg, &profiles, &spec, &test, cfg.seed).map_err(|e| {
            Error::Protocol(format!("scenario {}: {e}", scenario.id))
        })?;
        results.push(ScenarioResult { scenario, reports });
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let rounds_csv = cfg.out_dir.join("rounds.csv");
    let summary_csv = cfg.out_dir.join("summary.csv");
    write_rounds_csv(&rounds_csv, cfg, &results)?;
    write_summary_csv(&summary_csv, cfg, &results)?;
    Ok(ExperimentOutcome {
        scenarios: results,
        rounds_csv,
        summary_csv,
    })
}

fn write_rounds_csv(
    path: &PathBuf,
    cfg: &ExperimentConfig,
    results: &[ScenarioResult],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "scenario_id,round,mode,tau_sq,partition,test_accuracy,\
         aggregate_noise_var_empirical,aggregate_noise_var_theoretical,wall_ms"
    )?;
    for result in results {
        for r in &result.reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                result.scenario.id,
                r.round,
                result.scenario.mode,
                result.scenario.tau_sq,
                cfg.partition,
                r.accuracy,
                r.noise_var,
                r.noise_var_theoretical,
                r.wall_ms
            )?;
        }
    }
    Ok(())
}

fn write_summary_csv(
    path: &PathBuf,
    cfg: &ExperimentConfig,
    results: &[ScenarioResult],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "scenario_id,final_accuracy,mean_noise_var,config_hash")?;
    let hash = fnv1a64(cfg.canonical().as_bytes());
    for result in results {
        let Some(last) = result.reports.last() else {
            continue; // rounds = 0: header-only summary
        };
        let mean_var = result.reports.iter().map(|r| r.noise_var).sum::<f64>()
            / result.reports.len() as f64;
        writeln!(
            out,
            "{},{},{},{hash:016x}",
            result.scenario.id, last.accuracy, mean_var
        )?;
    }
    Ok(())
}
