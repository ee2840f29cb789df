//! Run configuration files (TOML or JSON, detected by extension), strict
//! key checking, dotted-path overrides, and construction of the simulator
//! configuration.
//!
//! Unknown keys are rejected. Validation errors name the offending key so
//! that a typo in `compressor.ratio` points at `compressor.ratio`.

use std::fs;
use std::path::{Path, PathBuf};

use compams_core::compressor::{resolve_k, spans_from_lens, AccountingMode, CompressorSpec};
use compams_core::objectives::{Activation, PartitionMode, StochasticObjective};
use compams_core::server::{AmsHyper, LearningRateSchedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{OptimizerKind, SimConfig, ThetaInit};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("override `{expr}`: {message}")]
    Override { expr: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

/// Top-level config file. Mirrors the simulator configuration plus the
/// output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub workers: usize,
    /// Total rounds. Alternative: `epochs` (with `steps_per_epoch`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    pub compressor: CompressorConfig,
    pub optimizer: OptimizerConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default = "default_accounting")]
    pub accounting: AccountingChoice,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<u64>,
    #[serde(default)]
    pub theta0: ThetaInitConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_batch() -> usize {
    1
}

fn default_record_every() -> u64 {
    1
}

fn default_accounting() -> AccountingChoice {
    AccountingChoice::ValuesPlusIndices
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountingChoice {
    ValuesOnly,
    ValuesPlusIndices,
}

impl From<AccountingChoice> for AccountingMode {
    fn from(choice: AccountingChoice) -> Self {
        match choice {
            AccountingChoice::ValuesOnly => AccountingMode::ValuesOnly,
            AccountingChoice::ValuesPlusIndices => AccountingMode::ValuesPlusIndices,
        }
    }
}

/// `kind = "identity" | "topk" | "blocksign"`. Top-k takes `k` or
/// `ratio`; block-sign takes `blocks` (a list of block lengths) or, when
/// omitted, the objective's parameter groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressorConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
}

impl CompressorConfig {
    fn build(&self, objective: &StochasticObjective) -> Result<CompressorSpec, ConfigError> {
        let d = objective.dim();
        let spec = match self.kind.as_str() {
            "identity" => CompressorSpec::Identity,
            "topk" => {
                let k = match (self.k, self.ratio) {
                    (Some(k), None) => k,
                    (None, Some(ratio)) => resolve_k(ratio, d)
                        .map_err(|e| invalid("compressor.ratio", e.to_string()))?,
                    (Some(_), Some(_)) => {
                        return Err(invalid("compressor", "give either `k` or `ratio`, not both"))
                    }
                    (None, None) => {
                        return Err(invalid("compressor", "topk needs `k` or `ratio`"))
                    }
                };
                CompressorSpec::TopK { k }
            }
            "blocksign" => {
                let blocks = match &self.blocks {
                    Some(lens) => spans_from_lens(lens),
                    None => objective.param_groups().to_vec(),
                };
                CompressorSpec::BlockSign { blocks }
            }
            other => {
                return Err(invalid(
                    "compressor.kind",
                    format!("unknown compressor `{other}` (identity, topk, blocksign)"),
                ))
            }
        };
        spec.validate(d).map_err(|e| invalid("compressor", e.to_string()))?;
        Ok(spec)
    }
}

/// `kind = "amsgrad" | "sgd"` plus hyperparameters and the step-size rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_opt_kind")]
    pub kind: String,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub lr: LrConfig,
}

fn default_opt_kind() -> String {
    "amsgrad".into()
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// `schedule = "constant" | "sqrt_scaled" | "step_decay"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrConfig {
    pub schedule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
}

impl OptimizerConfig {
    fn build(&self, workers: usize) -> Result<(OptimizerKind, AmsHyper, LearningRateSchedule), ConfigError> {
        let kind = match self.kind.as_str() {
            "amsgrad" => OptimizerKind::AmsGrad,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(invalid(
                    "optimizer.kind",
                    format!("unknown optimizer `{other}` (amsgrad, sgd)"),
                ))
            }
        };
        let hyper = AmsHyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps };
        hyper.validate().map_err(|e| invalid("optimizer", e.to_string()))?;
        let schedule = match self.lr.schedule.as_str() {
            "constant" => LearningRateSchedule::Constant {
                eta: self.lr.eta.ok_or_else(|| invalid("optimizer.lr.eta", "required"))?,
            },
            "sqrt_scaled" => LearningRateSchedule::SqrtScaled {
                c: self.lr.c.ok_or_else(|| invalid("optimizer.lr.c", "required"))?,
                n: workers,
            },
            "step_decay" => LearningRateSchedule::StepDecay {
                eta0: self.lr.eta0.ok_or_else(|| invalid("optimizer.lr.eta0", "required"))?,
                milestones: self
                    .lr
                    .milestones
                    .clone()
                    .ok_or_else(|| invalid("optimizer.lr.milestones", "required"))?,
                factor: self
                    .lr
                    .factor
                    .ok_or_else(|| invalid("optimizer.lr.factor", "required"))?,
            },
            other => {
                return Err(invalid(
                    "optimizer.lr.schedule",
                    format!("unknown schedule `{other}` (constant, sqrt_scaled, step_decay)"),
                ))
            }
        };
        schedule.validate().map_err(|e| invalid("optimizer.lr", e.to_string()))?;
        Ok((kind, hyper, schedule))
    }
}

/// `kind = "quadratic" | "logistic" | "tiny_mlp"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: String,
    // quadratic: diagonal spectrum linearly spaced in [a_min, a_max],
    // constant center, additive Gaussian gradient noise
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_region: Option<f64>,
    // logistic / tiny_mlp
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_reg: Option<f64>,
    /// CSV with a header row: feature columns, then a final `label`
    /// column holding -1 or +1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

impl ObjectiveConfig {
    fn build(&self, seed: u64) -> Result<StochasticObjective, ConfigError> {
        match self.kind.as_str() {
            "quadratic" => {
                let dim = self.dim.ok_or_else(|| invalid("objective.dim", "required"))?;
                if dim == 0 {
                    return Err(invalid("objective.dim", "must be >= 1"));
                }
                let a_min = self.a_min.unwrap_or(1.0);
                let a_max = self.a_max.unwrap_or(a_min);
                if a_min <= 0.0 || a_max < a_min {
                    return Err(invalid("objective.a_min", "need 0 < a_min <= a_max"));
                }
                let a_diag: Vec<f64> = (0..dim)
                    .map(|j| {
                        if dim == 1 {
                            a_min
                        } else {
                            a_min + (a_max - a_min) * j as f64 / (dim - 1) as f64
                        }
                    })
                    .collect();
                let center = vec![self.center.unwrap_or(0.0); dim];
                let noise = self.noise_std.unwrap_or(0.0);
                if noise < 0.0 {
                    return Err(invalid("objective.noise_std", "must be >= 0"));
                }
                let mut obj = StochasticObjective::quadratic(a_diag, center, noise);
                if let Some(radius) = self.trust_region {
                    if radius <= 0.0 {
                        return Err(invalid("objective.trust_region", "must be > 0"));
                    }
                    obj = obj.with_trust_region(radius);
                }
                Ok(obj)
            }
            "logistic" => {
                let l2 = self.l2_reg.unwrap_or(0.0);
                if let Some(path) = &self.data_csv {
                    let (features, labels, dim) = read_logistic_csv(path)?;
                    StochasticObjective::logistic(features, labels, dim, l2)
                        .map_err(|e| invalid("objective.data_csv", e.to_string()))
                } else {
                    let dim = self.dim.ok_or_else(|| invalid("objective.dim", "required"))?;
                    let samples =
                        self.samples.ok_or_else(|| invalid("objective.samples", "required"))?;
                    let sep = self.sep.unwrap_or(1.0);
                    Ok(StochasticObjective::logistic_synthetic(dim, samples, sep, l2, seed))
                }
            }
            "tiny_mlp" => {
                let layers =
                    self.layers.clone().ok_or_else(|| invalid("objective.layers", "required"))?;
                if layers.len() < 2 {
                    return Err(invalid("objective.layers", "need at least input and output sizes"));
                }
                let samples =
                    self.samples.ok_or_else(|| invalid("objective.samples", "required"))?;
                let activation = match self.activation.as_deref().unwrap_or("tanh") {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    other => {
                        return Err(invalid(
                            "objective.activation",
                            format!("unknown activation `{other}` (tanh, relu)"),
                        ))
                    }
                };
                Ok(StochasticObjective::mlp_synthetic(layers, activation, samples, seed))
            }
            other => Err(invalid(
                "objective.kind",
                format!("unknown objective `{other}` (quadratic, logistic, tiny_mlp)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "default_partition_mode")]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

fn default_partition_mode() -> String {
    "iid".into()
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { mode: default_partition_mode(), spread: None }
    }
}

impl PartitionConfig {
    fn build(&self) -> Result<PartitionMode, ConfigError> {
        match self.mode.as_str() {
            "iid" => Ok(PartitionMode::IidShuffle),
            "heterogeneous" => Ok(PartitionMode::Heterogeneous {
                spread: self
                    .spread
                    .ok_or_else(|| invalid("partition.spread", "required for heterogeneous"))?,
            }),
            other => Err(invalid(
                "partition.mode",
                format!("unknown mode `{other}` (iid, heterogeneous)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaInitConfig {
    #[serde(default = "default_theta_init")]
    pub init: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

fn default_theta_init() -> String {
    "zeros".into()
}

impl Default for ThetaInitConfig {
    fn default() -> Self {
        Self { init: default_theta_init(), value: None, std: None }
    }
}

impl ThetaInitConfig {
    fn build(&self) -> Result<ThetaInit, ConfigError> {
        match self.init.as_str() {
            "zeros" => Ok(ThetaInit::Zeros),
            "constant" => Ok(ThetaInit::Constant(
                self.value.ok_or_else(|| invalid("theta0.value", "required for constant"))?,
            )),
            "gaussian" => Ok(ThetaInit::Gaussian {
                std: self.std.ok_or_else(|| invalid("theta0.std", "required for gaussian"))?,
            }),
            other => Err(invalid(
                "theta0.init",
                format!("unknown init `{other}` (zeros, constant, gaussian)"),
            )),
        }
    }
}

impl RunConfigFile {
    /// Builds the simulator configuration. `threads` comes from the CLI
    /// (the `COMPAMS_THREADS` environment variable), not the file.
    pub fn build(&self, threads: usize) -> Result<SimConfig, ConfigError> {
        if self.workers == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        let objective = self.objective.build(self.seed)?;
        let compressor = self.compressor.build(&objective)?;
        let (optimizer, hyper, schedule) = self.optimizer.build(self.workers)?;
        let partition_mode = self.partition.build()?;
        let theta0 = self.theta0.build()?;

        let steps_per_epoch = self.steps_per_epoch.unwrap_or(0);
        let iters = match (self.iters, self.epochs) {
            (Some(iters), None) => iters,
            (None, Some(epochs)) => {
                let spe = if steps_per_epoch > 0 {
                    steps_per_epoch
                } else if let Some(samples) = objective.n_samples() {
                    (samples as u64).div_ceil((self.workers * self.batch) as u64).max(1)
                } else {
                    return Err(invalid(
                        "epochs",
                        "quadratic objectives need `steps_per_epoch` to use epochs",
                    ));
                };
                epochs * spe
            }
            (Some(_), Some(_)) => {
                return Err(invalid("iters", "give either `iters` or `epochs`, not both"))
            }
            (None, None) => return Err(invalid("iters", "give `iters` or `epochs`")),
        };

        Ok(SimConfig {
            n: self.workers,
            iters,
            batch: self.batch,
            seed: self.seed,
            compressor,
            optimizer,
            hyper,
            schedule,
            objective,
            partition_mode,
            accounting: self.accounting.into(),
            record_every: self.record_every,
            steps_per_epoch,
            error_feedback: true,
            threads,
            theta0,
            record_theta: false,
        })
    }
}

/// Reads a logistic-regression dataset: header row with feature columns
/// and a trailing `label` column of -1/+1 values.
fn read_logistic_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize), ConfigError> {
    let key = "objective.data_csv";
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| invalid(key, "empty file"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.last().copied() != Some("label") {
        return Err(invalid(key, "last header column must be `label`"));
    }
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(invalid(key, "no feature columns"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dim + 1 {
            return Err(invalid(
                key,
                format!("line {}: expected {} cells, got {}", lineno + 1, dim + 1, cells.len()),
            ));
        }
        for cell in &cells[..dim] {
            let value: f64 = cell.parse().map_err(|_| {
                invalid(key, format!("line {}: `{cell}` is not a number", lineno + 1))
            })?;
            features.push(value);
        }
        let label: f64 = cells[dim]
            .parse()
            .map_err(|_| invalid(key, format!("line {}: bad label", lineno + 1)))?;
        if label != 1.0 && label != -1.0 {
            return Err(invalid(key, format!("line {}: label must be -1 or +1", lineno + 1)));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(invalid(key, "no data rows"));
    }
    Ok((features, labels, dim))
}

/// Loads a config file, applies `--set key=value` overrides (dotted
/// paths), and deserializes strictly.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfigFile, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut tree: serde_json::Value = match ext {
        "toml" => {
            let value: toml::Value = toml::from_str(&text).map_err(|e| {
                let (line, column) = line_col(&text, e.span().map(|s| s.start));
                ConfigError::Parse {
                    path: path.to_path_buf(),
                    line,
                    column,
                    message: e.message().to_string(),
                }
            })?;
            serde_json::to_value(value).expect("toml values map to json")
        }
        "json" => serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?,
        other => {
            return Err(invalid(
                "config",
                format!("unsupported config extension `.{other}` (use .toml or .json)"),
            ))
        }
    };
    for expr in overrides {
        apply_override(&mut tree, expr)?;
    }
    let deserializer = tree;
    serde_path_to_error::deserialize(deserializer).map_err(|e| ConfigError::Invalid {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn line_col(text: &str, offset: Option<usize>) -> (usize, usize) {
    let offset = match offset {
        Some(o) => o.min(text.len()),
        None => return (1, 1),
    };
    let mut line = 1;
    let mut column = 1;
    for ch in text[..offset].chars() {
        if ch == '\n' {
            line += 1;
            column = 1;
        } else {
            column += 1;
        }
    }
    (line, column)
}

/// `key.path=value`; the value is parsed as JSON when possible and falls
/// back to a bare string.
fn apply_override(tree: &mut serde_json::Value, expr: &str) -> Result<(), ConfigError> {
    let overr = |message: &str| ConfigError::Override { expr: expr.into(), message: message.into() };
    let (key, raw) = expr.split_once('=').ok_or_else(|| overr("expected KEY=VALUE"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(overr("empty key"));
    }
    let value: serde_json::Value = serde_json::from_str(raw.trim())
        .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(overr(&format!("`{part}` is not a table")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(overr("path does not end in a table")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(ext: &str, contents: &str) -> tempfile::TempPath {
        let mut file = tempfile::Builder::new().suffix(&format!(".{ext}")).tempfile().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file.into_temp_path()
    }

    const BASE_TOML: &str = r#"
workers = 2
iters = 10
seed = 5

[compressor]
kind = "topk"
ratio = 0.5

[optimizer]
lr = { schedule = "constant", eta = 0.05 }

[objective]
kind = "quadratic"
dim = 8
"#;

    #[test]
    fn toml_config_round_trips_to_sim_config() {
        let path = write_temp("toml", BASE_TOML);
        let cfg = load(Path::new(&*path), &[]).unwrap();
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.batch, 1);
        let sim = cfg.build(1).unwrap();
        assert_eq!(sim.iters, 10);
        assert_eq!(sim.compressor, CompressorSpec::TopK { k: 4 });
        assert_eq!(sim.hyper, AmsHyper::default());
    }

    #[test]
    fn json_config_parses_too() {
        let json = serde_json::json!({
            "workers": 1,
            "iters": 5,
            "compressor": {"kind": "identity"},
            "optimizer": {"lr": {"schedule": "constant", "eta": 0.1}},
            "objective": {"kind": "quadratic", "dim": 3},
        });
        let path = write_temp("json", &json.to_string());
        let cfg = load(Path::new(&*path), &[]).unwrap();
        assert!(cfg.build(0).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let path = write_temp("toml", &format!("{BASE_TOML}\nbogus_key = 1\n"));
        let err = load(Path::new(&*path), &[]).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("bogus_key"), "{text}");
    }

    #[test]
    fn bad_ratio_names_the_key() {
        let path = write_temp("toml", BASE_TOML);
        let cfg = load(Path::new(&*path), &["compressor.ratio=2.0".into()]).unwrap();
        let err = cfg.build(1).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("compressor.ratio"), "{text}");
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let path = write_temp("toml", "workers = = 2\n");
        match load(Path::new(&*path), &[]) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_replace_nested_values() {
        let path = write_temp("toml", BASE_TOML);
        let cfg = load(
            Path::new(&*path),
            &["seed=99".into(), "compressor.ratio=0.25".into(), "optimizer.lr.eta=0.2".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.compressor.ratio, Some(0.25));
        let sim = cfg.build(1).unwrap();
        assert_eq!(sim.compressor, CompressorSpec::TopK { k: 2 });
    }

    #[test]
    fn blocksign_defaults_to_objective_param_groups() {
        let toml = r#"
workers = 1
iters = 2
[compressor]
kind = "blocksign"
[optimizer]
lr = { schedule = "constant", eta = 0.01 }
[objective]
kind = "tiny_mlp"
layers = [3, 4, 1]
samples = 8
"#;
        let path = write_temp("toml", toml);
        let cfg = load(Path::new(&*path), &[]).unwrap();
        let sim = cfg.build(1).unwrap();
        match sim.compressor {
            CompressorSpec::BlockSign { blocks } => assert_eq!(blocks.len(), 4),
            other => panic!("expected blocksign, got {other:?}"),
        }
    }

    #[test]
    fn logistic_csv_ingestion() {
        let csv = "x0,x1,label\n0.5,1.5,1\n-0.5,2.0,-1\n0.1,0.2,1\n";
        let data = write_temp("csv", csv);
        let toml = format!(
            r#"
workers = 1
iters = 2
[compressor]
kind = "identity"
[optimizer]
lr = {{ schedule = "constant", eta = 0.1 }}
[objective]
kind = "logistic"
data_csv = "{}"
"#,
            data.display()
        );
        let path = write_temp("toml", &toml);
        let cfg = load(Path::new(&*path), &[]).unwrap();
        let sim = cfg.build(1).unwrap();
        assert_eq!(sim.objective.dim(), 2);
        assert_eq!(sim.objective.n_samples(), Some(3));
    }

    #[test]
    fn bad_csv_labels_are_rejected() {
        let csv = "x0,label\n0.5,2\n";
        let data = write_temp("csv", csv);
        let toml = format!(
            r#"
workers = 1
iters = 2
[compressor]
kind = "identity"
[optimizer]
lr = {{ schedule = "constant", eta = 0.1 }}
[objective]
kind = "logistic"
data_csv = "{}"
"#,
            data.display()
        );
        let path = write_temp("toml", &toml);
        let cfg = load(Path::new(&*path), &[]).unwrap();
        assert!(cfg.build(1).is_err());
    }

    #[test]
    fn epochs_need_steps_for_quadratics() {
        let toml = BASE_TOML.replace("iters = 10", "epochs = 3");
        let path = write_temp("toml", &toml);
        let cfg = load(Path::new(&*path), &[]).unwrap();
        assert!(cfg.build(1).is_err());
        let cfg2 = load(Path::new(&*path), &["steps_per_epoch=5".into()]).unwrap();
        assert_eq!(cfg2.build(1).unwrap().iters, 15);
    }
}
