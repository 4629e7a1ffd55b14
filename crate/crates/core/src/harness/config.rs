//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//! trials = 6
//!
//! [topology]
//! G = 18
//! N = 20
//! R_c = 3.0        # `inf` (or "inf") for a fully connected network
//!
//! [mobility]
//! mode = "dcm"
//! C_m = 5
//! R_m = 5.0
//!
//! [data]
//! source = "idx"   # or "synthetic"
//! path = "data/mnist"
//! train_limit = 2000
//! test_limit = 1000
//! alpha = 0.1
//!
//! [training]
//! eta = 0.03
//! T = 1000
//! batch = "full"   # or a mini-batch size
//! model = "softmax" # or "mlp" with `hidden`
//!
//! [[sweep]]
//! param = "mode"
//! values = ["static", "random", "dam", "dcm"]
//! ```
//!
//! Every omitted key takes the default listed on [`ExperimentConfig::default`].

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{self, Dataset, PartitionSpec};
use crate::mobility::MobilityMode;
use crate::model::ModelKind;
use crate::seed::{self, tag};
use crate::topology::TopologyConfig;
use crate::training::{BatchMode, ExperimentSetup, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        dim: usize,
        train_samples: usize,
        test_samples: usize,
        separation: f64,
    },
    /// Directory holding the MNIST IDX quartet.
    Idx {
        path: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub alpha: f64,
    /// Seeds the synthetic data and the per-trial partitions.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityConfig {
    pub mode: MobilityMode,
    pub num_mobile: usize,
    pub max_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub eta: f64,
    pub rounds: usize,
    pub batch: BatchMode,
    pub model: ModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    CommRadius,
    MaxStep,
    NumMobile,
    Alpha,
    Mode,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::CommRadius => "R_c",
            SweepParam::MaxStep => "R_m",
            SweepParam::NumMobile => "C_m",
            SweepParam::Alpha => "alpha",
            SweepParam::Mode => "mode",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "R_c" => SweepParam::CommRadius,
            "R_m" => SweepParam::MaxStep,
            "C_m" => SweepParam::NumMobile,
            "alpha" => SweepParam::Alpha,
            "mode" => SweepParam::Mode,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Number(f64),
    Mode(MobilityMode),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(v) if v.is_infinite() => f.write_str("inf"),
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Mode(m) => f.write_str(m.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub mobility: MobilityConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentConfig {
    /// 18x18 grid, 20 clients, 5 mobile, `R_c = 3`, `R_m = 5`, `eta = 0.03`,
    /// 1000 full-batch rounds, 6 trials, DCM, `alpha = 0.1`, synthetic data.
    fn default() -> Self {
        ExperimentConfig {
            topology: TopologyConfig {
                grid: 18,
                clients: 20,
                comm_radius: 3.0,
            },
            mobility: MobilityConfig {
                mode: MobilityMode::Dcm,
                num_mobile: 5,
                max_step: 5.0,
            },
            data: DataConfig {
                source: DataSource::Synthetic {
                    classes: 10,
                    dim: 20,
                    train_samples: 2000,
                    test_samples: 1000,
                    separation: 3.0,
                },
                alpha: 0.1,
                seed: 0,
            },
            training: TrainingConfig {
                eta: 0.03,
                rounds: 1000,
                batch: BatchMode::Full,
                model: ModelKind::SoftmaxRegression,
            },
            trials: 6,
            seed: 0,
            sweep: Vec::new(),
        }
    }
}

/// One concrete configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// `param=value` pairs joined by `,`; `"base"` without a sweep.
    pub label: String,
    pub assignments: Vec<(SweepParam, SweepValue)>,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate().map_err(|e| retag(e, "topology"))?;
        if self.trials < 1 {
            return Err(Error::config("trials", "at least one trial is required"));
        }
        if !(self.data.alpha > 0.0) || !self.data.alpha.is_finite() {
            return Err(Error::config("data.alpha", "must be finite and > 0"));
        }
        match &self.data.source {
            DataSource::Synthetic {
                classes,
                dim,
                train_samples,
                test_samples,
                separation,
            } => {
                if *classes < 1 || *dim < 1 {
                    return Err(Error::config("data.classes", "classes and dim must be >= 1"));
                }
                if *train_samples < 1 || *test_samples < 1 {
                    return Err(Error::config("data.train_samples", "sample counts must be >= 1"));
                }
                if !separation.is_finite() {
                    return Err(Error::config("data.separation", "must be finite"));
                }
            }
            DataSource::Idx {
                train_limit,
                test_limit,
                ..
            } => {
                if *train_limit == Some(0) || *test_limit == Some(0) {
                    return Err(Error::config("data.train_limit", "limits must be >= 1"));
                }
            }
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(Error::config(format!("sweep[{i}].values"), "empty value list"));
            }
            if self.sweep[..i].iter().any(|a| a.param == axis.param) {
                return Err(Error::config(
                    format!("sweep[{i}].param"),
                    format!("`{}` is swept twice", axis.param.key()),
                ));
            }
        }
        for point in self.expand_sweep() {
            point.config.setup(0).validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, last axis varying fastest.
    pub fn expand_sweep(&self) -> Vec<SweepPoint> {
        let mut base = self.clone();
        base.sweep.clear();
        let mut points = vec![(Vec::new(), base)];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for (assign, cfg) in &points {
                for &v in &axis.values {
                    let mut cfg = cfg.clone();
                    apply(&mut cfg, axis.param, v);
                    let mut a: Vec<(SweepParam, SweepValue)> = assign.clone();
                    a.push((axis.param, v));
                    next.push((a, cfg));
                }
            }
            points = next;
        }
        points
            .into_iter()
            .enumerate()
            .map(|(index, (assignments, config))| SweepPoint {
                index,
                label: if assignments.is_empty() {
                    "base".to_string()
                } else {
                    assignments
                        .iter()
                        .map(|(p, v)| format!("{}={v}", p.key()))
                        .collect::<Vec<_>>()
                        .join(",")
                },
                assignments,
                config,
            })
            .collect()
    }

    /// Seed of the run environment for `trial`. It does not depend on the
    /// sweep point, so all points of a sweep share placements and mobility
    /// streams trial by trial.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        seed::derive_seed(self.seed, &[tag::TRIAL, trial as u64])
    }

    /// Fully specified run parameters for `trial` (sweep assumed expanded).
    pub fn setup(&self, trial: usize) -> ExperimentSetup {
        ExperimentSetup {
            topology: self.topology,
            mode: self.mobility.mode,
            train: TrainConfig {
                eta: self.training.eta,
                rounds: self.training.rounds,
                batch: self.training.batch,
                model: self.training.model,
                seed: seed::derive_seed(self.trial_seed(trial), &[tag::INIT]),
            },
            partition: PartitionSpec {
                alpha: self.data.alpha,
                clients: self.topology.clients,
                seed: seed::derive_seed(self.data.seed, &[tag::PARTITION, trial as u64]),
            },
            max_step: self.mobility.max_step,
            num_mobile: if self.mobility.mode == MobilityMode::Static {
                0
            } else {
                self.mobility.num_mobile
            },
        }
    }

    /// Loads or generates the train and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data.source {
            DataSource::Synthetic {
                classes,
                dim,
                train_samples,
                test_samples,
                separation,
            } => {
                let all = data::synthetic_dataset(
                    *classes,
                    *dim,
                    train_samples + test_samples,
                    *separation,
                    self.data.seed,
                );
                let train: Vec<usize> = (0..*train_samples).collect();
                let test: Vec<usize> = (*train_samples..train_samples + test_samples).collect();
                Ok((all.subset(&train), all.subset(&test)))
            }
            DataSource::Idx {
                path,
                train_limit,
                test_limit,
            } => {
                let (train, test) = data::load_mnist_dir(path)?;
                let train = train_limit.map_or(train.clone(), |n| train.take(n));
                let test = test_limit.map_or(test.clone(), |n| test.take(n));
                Ok((train, test))
            }
        }
    }
}

fn retag(e: Error, section: &str) -> Error {
    match e {
        Error::Config { path, message } if !path.contains('.') => Error::config(format!("{section}.{path}"), message),
        other => other,
    }
}

fn apply(cfg: &mut ExperimentConfig, param: SweepParam, value: SweepValue) {
    match (param, value) {
        (SweepParam::CommRadius, SweepValue::Number(v)) => cfg.topology.comm_radius = v,
        (SweepParam::MaxStep, SweepValue::Number(v)) => cfg.mobility.max_step = v,
        (SweepParam::NumMobile, SweepValue::Number(v)) => cfg.mobility.num_mobile = v as usize,
        (SweepParam::Alpha, SweepValue::Number(v)) => cfg.data.alpha = v,
        (SweepParam::Mode, SweepValue::Mode(m)) => cfg.mobility.mode = m,
        // parse_config never pairs a parameter with the other value kind
        _ => unreachable!("sweep value kind checked at parse time"),
    }
}

// ---- raw document ----------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    trials: Option<usize>,
    #[serde(default)]
    topology: RawTopology,
    #[serde(default)]
    mobility: RawMobility,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    sweep: Vec<RawSweep>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    #[serde(rename = "G")]
    grid: Option<u32>,
    #[serde(rename = "N")]
    clients: Option<usize>,
    #[serde(rename = "R_c")]
    comm_radius: Option<Radius>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMobility {
    mode: Option<MobilityMode>,
    #[serde(rename = "C_m")]
    num_mobile: Option<usize>,
    #[serde(rename = "R_m")]
    max_step: Option<Radius>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<RawSource>,
    path: Option<PathBuf>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    classes: Option<usize>,
    dim: Option<usize>,
    train_samples: Option<usize>,
    test_samples: Option<usize>,
    separation: Option<f64>,
    alpha: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    eta: Option<f64>,
    #[serde(rename = "T")]
    rounds: Option<usize>,
    batch: Option<RawBatch>,
    model: Option<RawModel>,
    hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum RawBatch {
    Size(usize),
    Word(BatchWord),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BatchWord {
    Full,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawModel {
    Softmax,
    Mlp,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    param: String,
    values: Vec<toml::Value>,
}

/// A radius given as a number, a TOML `inf`, or the string `"inf"`.
#[derive(Debug, Clone, Copy)]
struct Radius(f64);

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(Radius(v as f64)),
            Repr::Float(v) => Ok(Radius(v)),
            Repr::Text(s) => parse_radius(&s)
                .map(Radius)
                .ok_or_else(|| serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

fn parse_radius(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Some(f64::INFINITY),
        other => other.parse().ok(),
    }
}

fn sweep_value(param: SweepParam, v: &toml::Value) -> Option<SweepValue> {
    match (param, v) {
        (SweepParam::Mode, toml::Value::String(s)) => s.parse().ok().map(SweepValue::Mode),
        (SweepParam::Mode, _) => None,
        (SweepParam::NumMobile, toml::Value::Integer(i)) if *i >= 0 => Some(SweepValue::Number(*i as f64)),
        (SweepParam::NumMobile, _) => None,
        (_, toml::Value::Integer(i)) => Some(SweepValue::Number(*i as f64)),
        (_, toml::Value::Float(f)) => Some(SweepValue::Number(*f)),
        (SweepParam::CommRadius | SweepParam::MaxStep, toml::Value::String(s)) => {
            parse_radius(s).map(SweepValue::Number)
        }
        _ => None,
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Parse {
        offset: e.span().map_or(0, |s| s.start),
        message: e.message().to_string(),
    })?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." { "<root>".to_string() } else { path },
            e.into_inner().message().to_string(),
        )
    })?;
    let cfg = from_raw(raw)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file; a relative `data.path` is resolved against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    if let DataSource::Idx { path: data_path, .. } = &mut cfg.data.source {
        if data_path.is_relative() {
            if let Some(dir) = path.parent() {
                *data_path = dir.join(&*data_path);
            }
        }
    }
    Ok(cfg)
}

fn from_raw(raw: RawConfig) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = raw.seed {
        cfg.seed = v;
    }
    if let Some(v) = raw.trials {
        cfg.trials = v;
    }
    let t = raw.topology;
    cfg.topology.grid = t.grid.unwrap_or(cfg.topology.grid);
    cfg.topology.clients = t.clients.unwrap_or(cfg.topology.clients);
    cfg.topology.comm_radius = t.comm_radius.map_or(cfg.topology.comm_radius, |r| r.0);

    let m = raw.mobility;
    cfg.mobility.mode = m.mode.unwrap_or(cfg.mobility.mode);
    cfg.mobility.num_mobile = m.num_mobile.unwrap_or(cfg.mobility.num_mobile);
    cfg.mobility.max_step = m.max_step.map_or(cfg.mobility.max_step, |r| r.0);

    let d = raw.data;
    cfg.data.alpha = d.alpha.unwrap_or(cfg.data.alpha);
    cfg.data.seed = d.seed.unwrap_or(cfg.data.seed);
    let source = d.source.unwrap_or(if d.path.is_some() {
        RawSource::Idx
    } else {
        RawSource::Synthetic
    });
    cfg.data.source = match source {
        RawSource::Idx => {
            if [d.classes, d.dim, d.train_samples, d.test_samples]
                .iter()
                .any(Option::is_some)
                || d.separation.is_some()
            {
                return Err(Error::config("data", "synthetic-only keys given for an idx source"));
            }
            DataSource::Idx {
                path: d
                    .path
                    .ok_or_else(|| Error::config("data.path", "an idx source needs a path"))?,
                train_limit: d.train_limit,
                test_limit: d.test_limit,
            }
        }
        RawSource::Synthetic => {
            if d.path.is_some() || d.train_limit.is_some() || d.test_limit.is_some() {
                return Err(Error::config("data", "idx-only keys given for a synthetic source"));
            }
            let DataSource::Synthetic {
                classes,
                dim,
                train_samples,
                test_samples,
                separation,
            } = ExperimentConfig::default().data.source
            else {
                unreachable!()
            };
            DataSource::Synthetic {
                classes: d.classes.unwrap_or(classes),
                dim: d.dim.unwrap_or(dim),
                train_samples: d.train_samples.unwrap_or(train_samples),
                test_samples: d.test_samples.unwrap_or(test_samples),
                separation: d.separation.unwrap_or(separation),
            }
        }
    };

    let tr = raw.training;
    cfg.training.eta = tr.eta.unwrap_or(cfg.training.eta);
    cfg.training.rounds = tr.rounds.unwrap_or(cfg.training.rounds);
    cfg.training.batch = match tr.batch {
        None | Some(RawBatch::Word(BatchWord::Full)) => BatchMode::Full,
        Some(RawBatch::Size(b)) => BatchMode::MiniBatch(b),
    };
    cfg.training.model = match (tr.model, tr.hidden) {
        (None | Some(RawModel::Softmax), None) => ModelKind::SoftmaxRegression,
        (None | Some(RawModel::Softmax), Some(_)) => {
            return Err(Error::config("training.hidden", "only meaningful with model = \"mlp\""))
        }
        (Some(RawModel::Mlp), h) => ModelKind::Mlp {
            hidden: h.unwrap_or(64),
        },
    };

    for (i, s) in raw.sweep.into_iter().enumerate() {
        let param = SweepParam::parse(&s.param).ok_or_else(|| {
            Error::config(
                format!("sweep[{i}].param"),
                format!(
                    "unknown sweep parameter `{}` (expected R_c, R_m, C_m, alpha or mode)",
                    s.param
                ),
            )
        })?;
        let values = s
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                sweep_value(param, v).ok_or_else(|| {
                    Error::config(
                        format!("sweep[{i}].values[{j}]"),
                        format!("invalid value {v} for `{}`", s.param),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cfg.sweep.push(SweepAxis { param, values });
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.topology.grid, 18);
        assert_eq!(cfg.topology.clients, 20);
        assert_eq!(cfg.mobility.num_mobile, 5);
        assert_eq!(cfg.topology.comm_radius, 3.0);
        assert_eq!(cfg.mobility.max_step, 5.0);
        assert_eq!(cfg.training.eta, 0.03);
        assert_eq!(cfg.training.rounds, 1000);
        assert_eq!(cfg.trials, 6);
    }

    #[test]
    fn too_many_mobile_clients_names_field() {
        let err = parse_config("[mobility]\nC_m = 25\n").unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "mobility.C_m"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_and_type_errors_carry_paths() {
        match parse_config("[topology]\nGG = 3\n").unwrap_err() {
            Error::Config { path, message } => {
                assert_eq!(path, "topology.GG");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        match parse_config("[training]\nT = \"many\"\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "training.T"),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(parse_config("[topology\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn sweep_expands_cartesian() {
        let cfg = parse_config("[[sweep]]\nparam = \"R_c\"\nvalues = [1, 2, 3, 4, 5]\n").unwrap();
        let points = cfg.expand_sweep();
        assert_eq!(points.len(), 5);
        for (k, p) in points.iter().enumerate() {
            let mut expected = cfg.clone();
            expected.sweep.clear();
            expected.topology.comm_radius = (k + 1) as f64;
            assert_eq!(p.config, expected);
            assert_eq!(p.label, format!("R_c={}", k + 1));
        }

        let cfg = parse_config(
            "[[sweep]]\nparam = \"mode\"\nvalues = [\"random\", \"dcm\"]\n\
             [[sweep]]\nparam = \"R_c\"\nvalues = [2, \"inf\"]\n",
        )
        .unwrap();
        let labels: Vec<String> = cfg.expand_sweep().into_iter().map(|p| p.label).collect();
        assert_eq!(
            labels,
            [
                "mode=random,R_c=2",
                "mode=random,R_c=inf",
                "mode=dcm,R_c=2",
                "mode=dcm,R_c=inf"
            ]
        );
    }

    #[test]
    fn bad_sweeps_rejected() {
        assert!(parse_config("[[sweep]]\nparam = \"eta\"\nvalues = [1]\n").is_err());
        assert!(parse_config("[[sweep]]\nparam = \"mode\"\nvalues = [1]\n").is_err());
        assert!(parse_config("[[sweep]]\nparam = \"R_c\"\nvalues = []\n").is_err());
        // a swept C_m beyond N is caught at validation
        match parse_config("[[sweep]]\nparam = \"C_m\"\nvalues = [3, 30]\n").unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "mobility.C_m"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn infinite_radius_forms() {
        for text in ["[topology]\nR_c = inf\n", "[topology]\nR_c = \"inf\"\n"] {
            assert!(parse_config(text).unwrap().topology.comm_radius.is_infinite());
        }
    }

    #[test]
    fn idx_source_and_model_options() {
        let cfg = parse_config(
            "[data]\npath = \"mnist\"\ntrain_limit = 100\n[training]\nmodel = \"mlp\"\nhidden = 8\nbatch = 32\n",
        )
        .unwrap();
        assert!(matches!(
            cfg.data.source,
            DataSource::Idx {
                train_limit: Some(100),
                ..
            }
        ));
        assert_eq!(cfg.training.model, ModelKind::Mlp { hidden: 8 });
        assert_eq!(cfg.training.batch, BatchMode::MiniBatch(32));
        assert!(parse_config("[data]\nsource = \"idx\"\n").is_err());
        assert!(parse_config("[training]\nhidden = 8\n").is_err());
    }

    #[test]
    fn trial_seeds_ignore_sweep_point() {
        let cfg = parse_config("seed = 5\n[[sweep]]\nparam = \"alpha\"\nvalues = [0.05, 0.1]\n").unwrap();
        let pts = cfg.expand_sweep();
        assert_eq!(pts[0].config.trial_seed(2), pts[1].config.trial_seed(2));
        assert_ne!(cfg.trial_seed(0), cfg.trial_seed(1));
    }
}
