//! Flat key-value experiment configuration.
//!
//! Format: one `key = value` pair per line, `#` starts a comment. Unknown keys
//! and malformed values are rejected with the offending line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::federation::Mode;
use crate::models::ModelKind;
use crate::protocol::DistortionMode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Mnist,
}

/// Everything a `train` invocation needs. Defaults mirror the common
/// desk-scale configuration; any key can be overridden in the file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub k: usize,
    pub c: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub unit_sigma_sq: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub clip_threshold: f64,
    /// Defaults to the clipping threshold when absent.
    pub sensitivity: f64,
    /// Distortion-variance sweep; each value becomes one scenario in niss mode.
    pub tau_sq: Vec<f64>,
    /// Optional per-client distortion variances, overriding the sweep value.
    pub tau_sq_per_client: Option<Vec<f64>>,
    pub mode: Vec<Mode>,
    pub model: ModelKind,
    pub dataset: DatasetKind,
    pub partition: PartitionScheme,
    pub shards_per_client: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub distortion: DistortionMode,
    // Synthetic-dataset shape.
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_train_n: usize,
    pub synth_test_n: usize,
    pub synth_separation: f64,
    // IDX file locations, required when dataset = mnist.
    pub mnist_train_images: Option<PathBuf>,
    pub mnist_train_labels: Option<PathBuf>,
    pub mnist_test_images: Option<PathBuf>,
    pub mnist_test_labels: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k: 20,
            c: 0.5,
            rounds: 50,
            local_epochs: 5,
            batch_size: 10,
            learning_rate: 0.01,
            unit_sigma_sq: 0.01,
            epsilon: 10.0,
            delta: 1e-4,
            clip_threshold: 3.0,
            sensitivity: 3.0,
            tau_sq: vec![0.0],
            tau_sq_per_client: None,
            mode: vec![Mode::Niss],
            model: ModelKind::SoftmaxRegression,
            dataset: DatasetKind::Synthetic,
            partition: PartitionScheme::Iid,
            shards_per_client: 2,
            seed: 0,
            out_dir: PathBuf::from("out"),
            distortion: DistortionMode::PerShare,
            synth_classes: 10,
            synth_dim: 20,
            synth_train_n: 2000,
            synth_test_n: 500,
            synth_separation: 8.0,
            mnist_train_images: None,
            mnist_train_labels: None,
            mnist_test_images: None,
            mnist_test_labels: None,
        }
    }
}

fn bad(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config(format!("line {line}, key '{key}': {}", message.into()))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(line, key, format!("cannot parse '{value}'")))
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|p| parse_num(line, key, p.trim()))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut sensitivity_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected 'key = value', got '{line}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "k" => cfg.k = parse_num(line_no, key, value)?,
                "c" => cfg.c = parse_num(line_no, key, value)?,
                "rounds" => cfg.rounds = parse_num(line_no, key, value)?,
                "local_epochs" => cfg.local_epochs = parse_num(line_no, key, value)?,
                "batch_size" => cfg.batch_size = parse_num(line_no, key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(line_no, key, value)?,
                "unit_sigma_sq" => cfg.unit_sigma_sq = parse_num(line_no, key, value)?,
                "epsilon" => cfg.epsilon = parse_num(line_no, key, value)?,
                "delta" => cfg.delta = parse_num(line_no, key, value)?,
                "clip_threshold" => cfg.clip_threshold = parse_num(line_no, key, value)?,
                "sensitivity" => {
                    cfg.sensitivity = parse_num(line_no, key, value)?;
                    sensitivity_set = true;
                }
                "tau_sq" => cfg.tau_sq = parse_list(line_no, key, value)?,
                "tau_sq_per_client" => {
                    cfg.tau_sq_per_client = Some(parse_list(line_no, key, value)?)
                }
                "mode" => {
                    cfg.mode = value
                        .split(',')
                        .map(|m| m.trim().parse())
                        .collect::<Result<_>>()
                        .map_err(|e| bad(line_no, key, e.to_string()))?
                }
                "model" => {
                    cfg.model = match value {
                        "softmax" | "softmax-regression" => ModelKind::SoftmaxRegression,
                        "mlp" | "mlp-2x200" => ModelKind::Mlp2x200,
                        other => return Err(bad(line_no, key, format!("unknown model '{other}'"))),
                    }
                }
                "dataset" => {
                    cfg.dataset = match value {
                        "synthetic" => DatasetKind::Synthetic,
                        "mnist" => DatasetKind::Mnist,
                        other => {
                            return Err(bad(line_no, key, format!("unknown dataset '{other}'")))
                        }
                    }
                }
                "partition" => {
                    cfg.partition = match value {
                        "iid" => PartitionScheme::Iid,
                        "non-iid" | "noniid" => PartitionScheme::NonIid,
                        other => {
                            return Err(bad(line_no, key, format!("unknown partition '{other}'")))
                        }
                    }
                }
                "shards_per_client" => cfg.shards_per_client = parse_num(line_no, key, value)?,
                "seed" => cfg.seed = parse_num(line_no, key, value)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "distortion" => {
                    cfg.distortion = match value {
                        "per-share" => DistortionMode::PerShare,
                        "per-dimension" => DistortionMode::PerDimension,
                        other => {
                            return Err(bad(line_no, key, format!("unknown distortion '{other}'")))
                        }
                    }
                }
                "synth_classes" => cfg.synth_classes = parse_num(line_no, key, value)?,
                "synth_dim" => cfg.synth_dim = parse_num(line_no, key, value)?,
                "synth_train_n" => cfg.synth_train_n = parse_num(line_no, key, value)?,
                "synth_test_n" => cfg.synth_test_n = parse_num(line_no, key, value)?,
                "synth_separation" => cfg.synth_separation = parse_num(line_no, key, value)?,
                "mnist_train_images" => cfg.mnist_train_images = Some(PathBuf::from(value)),
                "mnist_train_labels" => cfg.mnist_train_labels = Some(PathBuf::from(value)),
                "mnist_test_images" => cfg.mnist_test_images = Some(PathBuf::from(value)),
                "mnist_test_labels" => cfg.mnist_test_labels = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::Config(format!(
                        "line {line_no}: unknown key '{other}'"
                    )))
                }
            }
        }
        if !sensitivity_set {
            cfg.sensitivity = cfg.clip_threshold;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::Config(format!("c must lie in (0, 1], got {}", self.c)));
        }
        if self.tau_sq.is_empty() || self.mode.is_empty() {
            return Err(Error::Config("tau_sq and mode must be nonempty".into()));
        }
        if self.tau_sq.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("tau_sq values must be nonnegative".into()));
        }
        if let Some(per_client) = &self.tau_sq_per_client {
            if per_client.len() != self.k {
                return Err(Error::Config(format!(
                    "tau_sq_per_client has {} entries for k = {}",
                    per_client.len(),
                    self.k
                )));
            }
        }
        if self.dataset == DatasetKind::Mnist {
            for (name, path) in [
                ("mnist_train_images", &self.mnist_train_images),
                ("mnist_train_labels", &self.mnist_train_labels),
                ("mnist_test_images", &self.mnist_test_images),
                ("mnist_test_labels", &self.mnist_test_labels),
            ] {
                if path.is_none() {
                    return Err(Error::Config(format!(
                        "dataset = mnist requires key '{name}'"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical key-value rendering, used for the summary config hash.
    pub fn canonical(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("k", self.k.to_string());
        map.insert("c", self.c.to_string());
        map.insert("rounds", self.rounds.to_string());
        map.insert("local_epochs", self.local_epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("learning_rate", self.learning_rate.to_string());
        map.insert("unit_sigma_sq", self.unit_sigma_sq.to_string());
        map.insert("epsilon", self.epsilon.to_string());
        map.insert("delta", self.delta.to_string());
        map.insert("clip_threshold", self.clip_threshold.to_string());
        map.insert("sensitivity", self.sensitivity.to_string());
        map.insert(
            "tau_sq",
            self.tau_sq
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some(pc) = &self.tau_sq_per_client {
            map.insert(
                "tau_sq_per_client",
                pc.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            );
        }
        map.insert(
            "mode",
            self.mode
                .iter()
                .map(Mode::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert(
            "model",
            match self.model {
                ModelKind::SoftmaxRegression => "softmax-regression".into(),
                ModelKind::Mlp2x200 => "mlp-2x200".into(),
            },
        );
        map.insert(
            "dataset",
            match self.dataset {
                DatasetKind::Synthetic => "synthetic".into(),
                DatasetKind::Mnist => "mnist".into(),
            },
        );
        map.insert("partition", self.partition.to_string());
        map.insert("shards_per_client", self.shards_per_client.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert(
            "distortion",
            match self.distortion {
                DistortionMode::PerShare => "per-share".into(),
                DistortionMode::PerDimension => "per-dimension".into(),
            },
        );
        map.insert("synth_classes", self.synth_classes.to_string());
        map.insert("synth_dim", self.synth_dim.to_string());
        map.insert("synth_train_n", self.synth_train_n.to_string());
        map.insert("synth_test_n", self.synth_test_n.to_string());
        map.insert("synth_separation", self.synth_separation.to_string());
        map.into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# experiment
k = 10
c = 0.5
rounds = 3
tau_sq = 0, 0.3, 1.0
mode = plain-fedavg, niss
model = mlp
partition = non-iid
seed = 42
out_dir = /tmp/run
";
        let cfg = ExperimentConfig::from_str_contents(text).unwrap();
        assert_eq!(cfg.k, 10);
        assert_eq!(cfg.tau_sq, vec![0.0, 0.3, 1.0]);
        assert_eq!(cfg.mode, vec![Mode::PlainFedAvg, Mode::Niss]);
        assert_eq!(cfg.model, ModelKind::Mlp2x200);
        assert_eq!(cfg.partition, PartitionScheme::NonIid);
        assert_eq!(cfg.seed, 42);
        // sensitivity defaults to the clip threshold
        assert_eq!(cfg.sensitivity, cfg.clip_threshold);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = ExperimentConfig::from_str_contents("k = 5\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn bad_value_names_key_and_line() {
        let err = ExperimentConfig::from_str_contents("c = not-a-number\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("'c'"), "{msg}");
    }

    #[test]
    fn mnist_requires_paths() {
        let err = ExperimentConfig::from_str_contents("dataset = mnist\n").unwrap_err();
        assert!(err.to_string().contains("mnist_train_images"));
    }

    #[test]
    fn explicit_sensitivity_wins_over_default() {
        let cfg =
            ExperimentConfig::from_str_contents("clip_threshold = 5\nsensitivity = 2\n").unwrap();
        assert_eq!(cfg.sensitivity, 2.0);
        assert_eq!(cfg.clip_threshold, 5.0);
    }

    #[test]
    fn canonical_is_stable() {
        let a = ExperimentConfig::default().canonical();
        let b = ExperimentConfig::default().canonical();
        assert_eq!(a, b);
        assert!(a.contains("seed=0\n"));
    }
}
