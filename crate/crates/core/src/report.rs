//! Experiment driver: config files, presets, CSV traces and SVG plots.
//!
//! A config is a list of `key = value` lines; `#` starts a comment. Keys:
//!
//! | key            | default                    | meaning                                        |
//! |----------------|----------------------------|------------------------------------------------|
//! | `name`         | preset name                | prefix of output files                         |
//! | `preset`       | `custom`                   | `exp1_sampling`, `exp2_vr`, `exp3_ht_vs_topk`, `custom` |
//! | `dataset`      | preset's synthetic dataset | LIBSVM path or `synth:` descriptor             |
//! | `workers`      | 20                         | number of workers `n`                          |
//! | `epochs`       | required                   | passes over the local data                     |
//! | `seeds`        | `0`                        | `0,1,2` or `0..10`                             |
//! | `shuffle_seed` | 0                          | seed of the shuffle before partitioning        |
//! | `l2`           |                            | absolute regularisation weight                 |
//! | `l2_rel`       | `1e-4`                     | `l2 = l2_rel · max_i L̄_i` of the data          |
//! | `epsilon`      | `1e-3`                     | target accuracy in the threshold rule          |
//! | `alpha`        | 5000                       | multiplier in the threshold rule               |
//! | `lambda`       | rule                       | explicit hard threshold                        |
//! | `gamma`        | rule                       | explicit stepsize (wins over the rule)         |
//! | `topk`         | `max(1, round(d/100))`     | TopK sparsity                                  |
//! | `p`            | `1/m`                      | EC-LSVRG reference-update probability          |
//! | `record_every` | `max(1, K/500)`            | trace cadence in iterations                    |
//! | `normalize`    | `none`                     | `none` or `unit` (unit-norm rows)              |
//! | `dimension`    | from data                  | feature dimension for LIBSVM input             |
//! | `ref_tol`      | `1e-10`                    | gradient-norm tolerance of the reference solve |
//! | `parallel`     | `false`                    | run workers and runs on the thread pool        |
//! | `method`       | preset's methods           | repeatable: `<estimator> <sampling> <compressor> [rule=cap\|maxlij]` |
//!
//! Method tokens: estimator `ec-sgd` or `ec-lsvrg`; sampling `us`, `is` or
//! `full`; compressor `id`, `ht`, `ht=<λ>`, `topk`, `topk=<k>`, `randk=<k>`,
//! `round=<step>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::compressors::{absolute_delta, CompressorSpec};
use crate::data::{load, DatasetManifest, DatasetSource, LoadOptions};
use crate::engine::{run_with_constants, write_trace_csv, RunConfig, RunOutput, TraceRecord};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::problem::{Loss, Objective, ReferenceSolution, SmoothnessConstants};
use crate::sampling::{expected_smoothness, make_scheme, sigma_star_sq, SamplingKind};
use crate::theory::{self, TheoryParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Exp1Sampling,
    Exp2Vr,
    Exp3HtVsTopk,
    Custom,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exp1_sampling" => Some(Preset::Exp1Sampling),
            "exp2_vr" => Some(Preset::Exp2Vr),
            "exp3_ht_vs_topk" => Some(Preset::Exp3HtVsTopk),
            "custom" => Some(Preset::Custom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Exp1Sampling => "exp1_sampling",
            Preset::Exp2Vr => "exp2_vr",
            Preset::Exp3HtVsTopk => "exp3_ht_vs_topk",
            Preset::Custom => "custom",
        }
    }

    pub fn default_dataset(&self) -> Option<&'static str> {
        match self {
            Preset::Exp1Sampling => Some("synth:m=50,d=20,seed=1,heavy=1,scale=4.5,margin=0.3"),
            Preset::Exp2Vr => Some("synth:m=50,d=20,seed=1,sep=2"),
            Preset::Exp3HtVsTopk => Some("synth:m=50,d=100,seed=1,sep=2"),
            Preset::Custom => None,
        }
    }

    pub fn default_methods(&self) -> Vec<MethodSpec> {
        let ht = CompressorChoice::HardThresholdRule;
        match self {
            Preset::Exp1Sampling => vec![
                MethodSpec::new(MethodKind::EcSgd, SamplingKind::Uniform, ht, StepRule::SamplingCap),
                MethodSpec::new(MethodKind::EcSgd, SamplingKind::Importance, ht, StepRule::SamplingCap),
            ],
            Preset::Exp2Vr => vec![
                MethodSpec::new(MethodKind::EcSgd, SamplingKind::Uniform, ht, StepRule::InverseMaxSample),
                MethodSpec::new(
                    MethodKind::EcLsvrg,
                    SamplingKind::Uniform,
                    ht,
                    StepRule::InverseMaxSample,
                ),
            ],
            Preset::Exp3HtVsTopk => vec![
                MethodSpec::new(
                    MethodKind::EcLsvrg,
                    SamplingKind::Uniform,
                    ht,
                    StepRule::InverseMaxSample,
                ),
                MethodSpec::new(
                    MethodKind::EcLsvrg,
                    SamplingKind::Uniform,
                    CompressorChoice::TopKRule,
                    StepRule::InverseMaxSample,
                ),
            ],
            Preset::Custom => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    EcSgd,
    EcLsvrg,
}

/// How the stepsize is derived from the smoothness constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    /// `1/(L + 𝓛/n)` with `𝓛` of the method's sampling.
    SamplingCap,
    /// `1/max_ij L_ij`.
    InverseMaxSample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorChoice {
    Identity,
    /// λ from the `alpha`/`epsilon` rule (or the `lambda` key).
    HardThresholdRule,
    HardThreshold(f64),
    /// `k` from the `topk` key, else `max(1, round(d/100))`.
    TopKRule,
    TopK(usize),
    RandK(usize),
    Rounding(f64),
}

impl CompressorChoice {
    fn token(&self) -> String {
        match self {
            CompressorChoice::Identity => "id".into(),
            CompressorChoice::HardThresholdRule => "ht".into(),
            CompressorChoice::HardThreshold(l) => format!("ht={l}"),
            CompressorChoice::TopKRule => "topk".into(),
            CompressorChoice::TopK(k) => format!("topk={k}"),
            CompressorChoice::RandK(k) => format!("randk={k}"),
            CompressorChoice::Rounding(s) => format!("round={s}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub sampling: SamplingKind,
    pub compressor: CompressorChoice,
    pub step_rule: StepRule,
}

impl MethodSpec {
    pub fn new(kind: MethodKind, sampling: SamplingKind, compressor: CompressorChoice, step_rule: StepRule) -> Self {
        MethodSpec {
            kind,
            sampling,
            compressor,
            step_rule,
        }
    }

    /// Parses `ec-lsvrg us ht [rule=cap|maxlij]`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if !(3..=4).contains(&tokens.len()) {
            return Err(format!(
                "method needs `<estimator> <sampling> <compressor> [rule=...]`, got `{text}`"
            ));
        }
        let kind = match tokens[0] {
            "ec-sgd" | "sgd" => MethodKind::EcSgd,
            "ec-lsvrg" | "lsvrg" => MethodKind::EcLsvrg,
            other => return Err(format!("unknown estimator `{other}`")),
        };
        let sampling = match tokens[1] {
            "us" => SamplingKind::Uniform,
            "is" => SamplingKind::Importance,
            "full" => SamplingKind::FullBatch,
            other => return Err(format!("unknown sampling `{other}`")),
        };
        let compressor = parse_compressor(tokens[2])?;
        let step_rule = match tokens.get(3) {
            None => match kind {
                MethodKind::EcSgd => StepRule::SamplingCap,
                MethodKind::EcLsvrg => StepRule::InverseMaxSample,
            },
            Some(&"rule=cap") => StepRule::SamplingCap,
            Some(&"rule=maxlij") => StepRule::InverseMaxSample,
            Some(other) => return Err(format!("unknown method option `{other}`")),
        };
        Ok(MethodSpec::new(kind, sampling, compressor, step_rule))
    }

    pub fn label(&self) -> String {
        let est = match self.kind {
            MethodKind::EcSgd => "ec-sgd",
            MethodKind::EcLsvrg => "ec-lsvrg",
        };
        format!(
            "{est}-{}-{}",
            self.sampling.label(),
            self.compressor.token().replace('=', "")
        )
    }
}

fn parse_compressor(tok: &str) -> std::result::Result<CompressorChoice, String> {
    let (name, arg) = match tok.split_once('=') {
        Some((n, a)) => (n, Some(a)),
        None => (tok, None),
    };
    let num = |a: &str| a.parse::<f64>().map_err(|_| format!("invalid number `{a}` in `{tok}`"));
    let int = |a: &str| {
        a.parse::<usize>()
            .map_err(|_| format!("invalid integer `{a}` in `{tok}`"))
    };
    match (name, arg) {
        ("id", None) => Ok(CompressorChoice::Identity),
        ("ht", None) => Ok(CompressorChoice::HardThresholdRule),
        ("ht", Some(a)) => Ok(CompressorChoice::HardThreshold(num(a)?)),
        ("topk", None) => Ok(CompressorChoice::TopKRule),
        ("topk", Some(a)) => Ok(CompressorChoice::TopK(int(a)?)),
        ("randk", Some(a)) => Ok(CompressorChoice::RandK(int(a)?)),
        ("round", Some(a)) => Ok(CompressorChoice::Rounding(num(a)?)),
        _ => Err(format!("unknown compressor `{tok}`")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    Absolute(f64),
    /// Multiple of `max_i L̄_i` of the unregularised data.
    RelativeToMaxLbar(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Preset,
    pub dataset: Option<String>,
    pub workers: usize,
    pub epochs: Option<u64>,
    pub seeds: Vec<u64>,
    pub shuffle_seed: u64,
    pub l2: Regularization,
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub topk: Option<usize>,
    pub lsvrg_p: Option<f64>,
    pub record_every: Option<u64>,
    pub normalize: bool,
    pub dimension: Option<usize>,
    pub ref_tol: f64,
    pub parallel: bool,
    pub methods: Vec<MethodSpec>,
    /// Line of each key in the source text, for positioned resolution errors.
    lines: BTreeMap<String, usize>,
    end_line: usize,
}

impl ExperimentConfig {
    /// All defaults for `preset`.
    pub fn new(preset: Preset) -> Self {
        ExperimentConfig {
            name: preset.name().to_string(),
            preset,
            dataset: None,
            workers: 20,
            epochs: None,
            seeds: vec![0],
            shuffle_seed: 0,
            l2: Regularization::RelativeToMaxLbar(1e-4),
            epsilon: theory::DEFAULT_LAMBDA_EPSILON,
            alpha: theory::DEFAULT_LAMBDA_ALPHA,
            lambda: None,
            gamma: None,
            topk: None,
            lsvrg_p: None,
            record_every: None,
            normalize: false,
            dimension: None,
            ref_tol: 1e-10,
            parallel: false,
            methods: Vec::new(),
            lines: BTreeMap::new(),
            end_line: 0,
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(self.end_line)
    }

    fn config_error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.line_of(key),
            message: message.into(),
        }
    }

    pub fn dataset_descriptor(&self) -> Result<String> {
        self.dataset
            .clone()
            .or_else(|| self.preset.default_dataset().map(str::to_string))
            .ok_or_else(|| self.config_error("dataset", "missing required key `dataset`"))
    }

    pub fn effective_methods(&self) -> Vec<MethodSpec> {
        if self.methods.is_empty() {
            self.preset.default_methods()
        } else {
            self.methods.clone()
        }
    }
}

fn parse_seeds(v: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("invalid seed range `{v}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("invalid seed range `{v}`"))?;
        if b <= a {
            return Err(format!("empty seed range `{v}`"));
        }
        return Ok((a..b).collect());
    }
    let seeds = v
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| format!("invalid seed `{s}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(seeds)
}

/// Parses the key/value config format documented at the top of this module.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut end_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        end_line = line_no;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        entries.push((line_no, k.trim().to_string(), v.trim().to_string()));
    }

    // the preset decides defaults, so read it first
    let preset = match entries.iter().find(|(_, k, _)| k == "preset") {
        Some((line, _, v)) => Preset::parse(v).ok_or_else(|| Error::Config {
            line: *line,
            message: format!("unknown preset `{v}`"),
        })?,
        None => Preset::Custom,
    };
    let mut cfg = ExperimentConfig::new(preset);
    cfg.end_line = end_line + 1;

    for (line, key, value) in entries {
        let err = |message: String| Error::Config { line, message };
        if key != "method" && cfg.lines.insert(key.clone(), line).is_some() {
            return Err(err(format!("duplicate key `{key}`")));
        }
        let float = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("invalid number `{v}` for `{key}`")))
        };
        let positive = |v: &str| -> Result<f64> {
            let x = float(v)?;
            if x > 0.0 {
                Ok(x)
            } else {
                Err(err(format!("`{key}` must be positive, got {v}")))
            }
        };
        let nonneg = |v: &str| -> Result<f64> {
            let x = float(v)?;
            if x >= 0.0 {
                Ok(x)
            } else {
                Err(err(format!("`{key}` must be nonnegative, got {v}")))
            }
        };
        let count = |v: &str| -> Result<u64> {
            match v.parse::<u64>() {
                Ok(x) if x >= 1 => Ok(x),
                _ => Err(err(format!("`{key}` must be a positive integer, got `{v}`"))),
            }
        };
        let value = value.as_str();
        match key.as_str() {
            "name" => {
                if value.is_empty() || !value.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                    return Err(err(format!("name `{value}` must be nonempty and use [A-Za-z0-9._-]")));
                }
                cfg.name = value.to_string();
            }
            "preset" => {}
            "dataset" => cfg.dataset = Some(value.to_string()),
            "workers" => cfg.workers = count(value)? as usize,
            "epochs" => cfg.epochs = Some(count(value)?),
            "seeds" => cfg.seeds = parse_seeds(value).map_err(err)?,
            "shuffle_seed" => cfg.shuffle_seed = value.parse().map_err(|_| err(format!("invalid seed `{value}`")))?,
            "l2" => cfg.l2 = Regularization::Absolute(nonneg(value)?),
            "l2_rel" => cfg.l2 = Regularization::RelativeToMaxLbar(nonneg(value)?),
            "epsilon" => cfg.epsilon = nonneg(value)?,
            "alpha" => cfg.alpha = nonneg(value)?,
            "lambda" => cfg.lambda = Some(nonneg(value)?),
            "gamma" => cfg.gamma = Some(positive(value)?),
            "topk" => cfg.topk = Some(count(value)? as usize),
            "p" => {
                let p = float(value)?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(err(format!("`p` must lie in (0,1], got {value}")));
                }
                cfg.lsvrg_p = Some(p);
            }
            "record_every" => cfg.record_every = Some(count(value)?),
            "normalize" => {
                cfg.normalize = match value {
                    "none" => false,
                    "unit" => true,
                    _ => return Err(err(format!("`normalize` must be `none` or `unit`, got `{value}`"))),
                }
            }
            "dimension" => cfg.dimension = Some(count(value)? as usize),
            "ref_tol" => cfg.ref_tol = positive(value)?,
            "parallel" => {
                cfg.parallel = match value {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    _ => return Err(err(format!("`parallel` must be true or false, got `{value}`"))),
                }
            }
            "method" => {
                cfg.methods.push(MethodSpec::parse(value).map_err(err)?);
                cfg.lines.insert(format!("method#{}", cfg.methods.len() - 1), line);
            }
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    if cfg.preset == Preset::Custom && cfg.methods.is_empty() {
        return Err(cfg.config_error("preset", "preset `custom` needs at least one `method` line"));
    }
    Ok(cfg)
}

/// A method with every rule evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedMethod {
    pub spec: MethodSpec,
    pub label: String,
    pub estimator: EstimatorKind,
    pub compressor: CompressorSpec,
    /// Stepsize given by the method's rule.
    pub rule_gamma: f64,
    /// Stepsize used (explicit `gamma` if set).
    pub gamma: f64,
    /// Stepsize fed to the threshold rule.
    pub lambda_gamma: f64,
    pub expected_smoothness: f64,
    pub iterations: u64,
    pub record_every: u64,
}

/// Dataset, objective and reference solution shared by all runs of an experiment.
#[derive(Clone, Debug)]
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub manifest: DatasetManifest,
    pub content_hash: String,
    pub objective: Objective,
    pub constants: SmoothnessConstants,
    pub reference: ReferenceSolution,
    pub epochs: u64,
    pub methods: Vec<ResolvedMethod>,
}

/// Loads the data, solves for the reference point and resolves every method.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment> {
    let epochs = config
        .epochs
        .ok_or_else(|| config.config_error("epochs", "missing required key `epochs`"))?;
    let descriptor = config.dataset_descriptor()?;
    let source = DatasetSource::parse(&descriptor).map_err(|e| config.config_error("dataset", e.to_string()))?;
    // fail before anything runs if the file is missing
    let source = source.resolve()?;
    let loaded = load(
        &source,
        config.workers,
        config.shuffle_seed,
        &LoadOptions {
            dim: config.dimension,
            normalize: config.normalize,
            ..LoadOptions::default()
        },
    )?;
    let d = loaded.d;
    let l2 = match config.l2 {
        Regularization::Absolute(v) => v,
        Regularization::RelativeToMaxLbar(rel) => {
            // L̄_i without regularisation is the mean of ‖a‖²/4 over the shard
            let max_bar = loaded
                .shards
                .iter()
                .map(|s| {
                    s.rows
                        .iter()
                        .map(|r| Loss::Logistic.curvature() * r.norm_sq())
                        .sum::<f64>()
                        / s.len() as f64
                })
                .fold(0.0, f64::max);
            rel * max_bar
        }
    };
    let objective = Objective::new(loaded.shards, d, l2, Loss::Logistic)?;
    let constants = objective.smoothness_constants();
    let reference = objective.solve_reference(config.ref_tol)?;
    let n = objective.n();
    let m = objective.m();

    let mut methods = Vec::new();
    let specs = config.effective_methods();
    let us_cap = 1.0 / (constants.l + constants.max_l_ij() / n as f64);
    for (idx, spec) in specs.into_iter().enumerate() {
        let scheme = make_scheme(spec.sampling, &constants)?;
        let lexp = expected_smoothness(&scheme, &constants);
        let rule_gamma = match spec.step_rule {
            StepRule::SamplingCap => 1.0 / (constants.l + lexp / n as f64),
            StepRule::InverseMaxSample => 1.0 / constants.max_l_ij(),
        };
        let gamma = config.gamma.unwrap_or(rule_gamma);
        // the sampling comparison fixes λ from the uniform-sampling stepsize
        let lambda_gamma = match config.preset {
            Preset::Exp1Sampling => config.gamma.unwrap_or(us_cap),
            _ => gamma,
        };
        let compressor = match spec.compressor {
            CompressorChoice::Identity => CompressorSpec::Identity,
            CompressorChoice::HardThresholdRule => CompressorSpec::HardThreshold {
                lambda: match config.lambda {
                    Some(l) => l,
                    None => theory::ht_lambda_rule(config.epsilon, d, lambda_gamma, config.alpha)?,
                },
            },
            CompressorChoice::HardThreshold(lambda) => CompressorSpec::HardThreshold { lambda },
            CompressorChoice::TopKRule => CompressorSpec::TopK {
                k: config
                    .topk
                    .unwrap_or_else(|| ((d as f64 / 100.0).round() as usize).max(1))
                    .min(d),
            },
            CompressorChoice::TopK(k) => CompressorSpec::TopK { k },
            CompressorChoice::RandK(k) => CompressorSpec::RandK { k },
            CompressorChoice::Rounding(step) => CompressorSpec::ScaledIntegerRounding { step },
        };
        compressor
            .validate(d)
            .map_err(|e| config.config_error(&format!("method#{idx}"), e.to_string()))?;
        let estimator = match spec.kind {
            MethodKind::EcSgd => EstimatorKind::SgdAs,
            MethodKind::EcLsvrg => EstimatorKind::Lsvrg {
                p: config.lsvrg_p.unwrap_or(1.0 / m as f64),
            },
        };
        let iterations = match spec.sampling {
            SamplingKind::FullBatch => epochs,
            _ => epochs * m as u64,
        };
        methods.push(ResolvedMethod {
            spec,
            label: spec.label(),
            estimator,
            compressor,
            rule_gamma,
            gamma,
            lambda_gamma,
            expected_smoothness: lexp,
            iterations,
            record_every: config.record_every.unwrap_or((iterations / 500).max(1)),
        });
    }
    Ok(PreparedExperiment {
        config: config.clone(),
        dataset: descriptor,
        manifest: loaded.manifest,
        content_hash: loaded.content_hash,
        objective,
        constants,
        reference,
        epochs,
        methods,
    })
}

impl PreparedExperiment {
    pub fn run_config(&self, method: &ResolvedMethod, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(
            method.gamma,
            method.iterations,
            method.compressor,
            method.estimator,
            method.spec.sampling,
            seed,
        );
        cfg.record_every = method.record_every;
        cfg.parallel = self.config.parallel;
        cfg
    }

    /// Comment lines written at the top of every CSV. Execution details that
    /// do not affect results (thread use, output paths) are left out.
    pub fn audit_header(&self, method: &ResolvedMethod, seed: u64) -> Vec<String> {
        let c = &self.config;
        let obj = &self.objective;
        let k = &self.constants;
        let fmt_opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
        let mut h = vec![
            format!("experiment = {}", c.name),
            format!("preset = {}", c.preset.name()),
            format!("dataset = {}", self.dataset),
            format!("dataset_name = {}", self.manifest.name),
            format!("dataset_hash = {}", self.content_hash),
            format!(
                "samples_total = {}, samples_used = {}, d = {}",
                self.manifest.total_samples,
                self.manifest.truncation,
                obj.d()
            ),
            format!("workers = {}, samples_per_worker = {}", obj.n(), obj.m()),
            format!("shuffle_seed = {}", c.shuffle_seed),
            format!("normalize = {}", if c.normalize { "unit" } else { "none" }),
            match c.l2 {
                Regularization::Absolute(v) => format!("l2 = {:e} (explicit {v:e})", obj.l2()),
                Regularization::RelativeToMaxLbar(r) => format!("l2 = {:e} ({r:e} * max Lbar of the data)", obj.l2()),
            },
            format!(
                "epsilon = {:e}, alpha = {:e}, lambda_explicit = {}",
                c.epsilon,
                c.alpha,
                fmt_opt(c.lambda)
            ),
            format!(
                "L = {:e}, max_Lij = {:e}, max_Lbar = {:e}, max_Li = {:e}",
                k.l,
                k.max_l_ij(),
                k.max_l_bar(),
                k.max_l_worker()
            ),
            format!(
                "f_star = {:e}, ref_grad_norm = {:e}, ref_tol = {:e}, ref_iterations = {}",
                self.reference.f_star, self.reference.grad_norm, c.ref_tol, self.reference.iterations
            ),
            format!("seeds = {:?}", c.seeds),
            format!("method = {}", method.label),
            format!("estimator = {:?}", method.estimator),
            format!("sampling = {:?}", method.spec.sampling),
            format!("compressor = {:?}", method.compressor),
            format!("expected_smoothness = {:e}", method.expected_smoothness),
            format!(
                "gamma = {:e} (rule {:?} = {:e}, explicit = {})",
                method.gamma,
                method.spec.step_rule,
                method.rule_gamma,
                fmt_opt(c.gamma)
            ),
            format!("lambda_rule_gamma = {:e}", method.lambda_gamma),
            format!(
                "epochs = {}, iterations = {}, record_every = {}",
                self.epochs, method.iterations, method.record_every
            ),
        ];
        h.push(match (method.estimator, method.spec.sampling) {
            (_, SamplingKind::FullBatch) => {
                "epoch_accounting = one epoch is one round (a full local gradient per worker)".into()
            }
            (EstimatorKind::SgdAs, _) => {
                "epoch_accounting = one epoch is m rounds of one stochastic gradient per worker".into()
            }
            (EstimatorKind::Lsvrg { p }, _) => format!(
                "epoch_accounting = one epoch is m rounds of two stochastic gradients per worker; \
                 expected reference refreshes add p*m = {:e} local full gradients per epoch",
                p * obj.m() as f64
            ),
        });
        h.push(format!("seed = {seed}"));
        h.push("bits_cum = cumulative payload bits per worker (mean over workers)".into());
        h
    }
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: ResolvedMethod,
    /// `(seed, output)` in config order.
    pub runs: Vec<(u64, RunOutput)>,
}

impl MethodResult {
    pub fn traces(&self) -> impl Iterator<Item = &[TraceRecord]> {
        self.runs.iter().map(|(_, r)| r.traces.as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub results: Vec<MethodResult>,
    pub csv_paths: Vec<PathBuf>,
    pub svg_path: Option<PathBuf>,
}

/// Executes every `(method, seed)` run. With `out_dir` set, writes one CSV per
/// run and one SVG for the dataset.
pub fn execute(prepared: &PreparedExperiment, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    let jobs: Vec<(usize, u64)> = (0..prepared.methods.len())
        .flat_map(|mi| prepared.config.seeds.iter().map(move |&s| (mi, s)))
        .collect();
    let run_job = |&(mi, seed): &(usize, u64)| -> Result<RunOutput> {
        let method = &prepared.methods[mi];
        run_with_constants(
            &prepared.run_config(method, seed),
            &prepared.objective,
            &prepared.reference,
            &prepared.constants,
        )
    };
    let outputs: Vec<RunOutput> = if prepared.config.parallel {
        jobs.par_iter().map(run_job).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_job).collect::<Result<_>>()?
    };
    let mut results: Vec<MethodResult> = prepared
        .methods
        .iter()
        .map(|m| MethodResult {
            method: m.clone(),
            runs: Vec::new(),
        })
        .collect();
    for ((mi, seed), out) in jobs.into_iter().zip(outputs) {
        results[mi].runs.push((seed, out));
    }

    let mut csv_paths = Vec::new();
    let mut svg_path = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &results {
            for (seed, out) in &r.runs {
                let path = dir.join(format!("{}__{}__seed{seed}.csv", prepared.config.name, r.method.label));
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_trace_csv(
                    BufWriter::new(file),
                    &prepared.audit_header(&r.method, *seed),
                    &out.traces,
                )
                .map_err(|e| Error::io(&path, e))?;
                csv_paths.push(path);
            }
        }
        let path = dir.join(format!("{}__{}.svg", prepared.config.name, prepared.manifest.name));
        let svg = render_svg(
            &format!("{} on {}", prepared.config.name, prepared.manifest.name),
            &results,
        );
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        svg_path = Some(path);
    }
    Ok(ExperimentResult {
        results,
        csv_paths,
        svg_path,
    })
}

/// `prepare` followed by `execute`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    execute(&prepare(config)?, out_dir)
}

/// Mean over seeds of `(bits per worker, f(x^k) − f*)` at each recorded step.
pub fn mean_curve(result: &MethodResult) -> Vec<(f64, f64)> {
    let runs: Vec<&[TraceRecord]> = result.traces().collect();
    let len = runs.iter().map(|t| t.len()).min().unwrap_or(0);
    let s = runs.len() as f64;
    (0..len)
        .map(|i| {
            let bits = runs.iter().map(|t| t[i].bits_per_worker).sum::<f64>() / s;
            let gap = runs.iter().map(|t| t[i].f_gap_x).sum::<f64>() / s;
            (bits, gap)
        })
        .collect()
}

/// Bits per worker at the first record whose `f(x^k) − f*` is at most `target`.
pub fn bits_to_reach(traces: &[TraceRecord], target: f64) -> Option<f64> {
    traces.iter().find(|t| t.f_gap_x <= target).map(|t| t.bits_per_worker)
}

/// `f(x^k) − f*` at the last record whose bit count does not exceed `budget`.
pub fn gap_at_bits(traces: &[TraceRecord], budget: f64) -> Option<f64> {
    traces
        .iter()
        .take_while(|t| t.bits_per_worker <= budget)
        .last()
        .map(|t| t.f_gap_x)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Static line plot of mean f-gap (log scale) against mean bits per worker.
pub fn render_svg(title: &str, results: &[MethodResult]) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 200.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let curves: Vec<(String, Vec<(f64, f64)>)> = results
        .iter()
        .map(|r| {
            let pts = mean_curve(r)
                .into_iter()
                .map(|(b, g)| (b, g.max(1e-16).log10()))
                .collect();
            (r.method.label.clone(), pts)
        })
        .collect();
    let all = curves.iter().flat_map(|(_, p)| p.iter());
    let x_max = all.clone().map(|p| p.0).fold(0.0, f64::max).max(1.0);
    let y_lo = all.clone().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let y_hi = all.map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    let (y_lo, y_hi) = if y_lo.is_finite() && y_hi > y_lo {
        (y_lo, y_hi)
    } else {
        (-1.0, 0.0)
    };
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (y_hi - y) / (y_hi - y_lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let decades = (y_hi - y_lo) as i64;
    let step = ((decades as f64) / 8.0).ceil().max(1.0) as i64;
    let mut e = y_lo as i64;
    while e <= y_hi as i64 {
        let y = sy(e as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        e += step;
    }
    for i in 0..=5 {
        let xv = x_max * i as f64 / 5.0;
        let x = sx(xv);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{xv:.3e}</text>"#,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bits per worker</text>"#,
        left + pw / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">f(x) - f*</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Theory constants of a resolved method on the prepared problem.
pub fn method_theory(prepared: &PreparedExperiment, method: &ResolvedMethod) -> Result<TheoryParams> {
    let obj = &prepared.objective;
    let c = &prepared.constants;
    let n = obj.n();
    let params = match method.estimator {
        EstimatorKind::SgdAs => {
            let scheme = make_scheme(method.spec.sampling, c)?;
            let s2 = sigma_star_sq(&scheme, obj, &prepared.reference.x_star)?;
            theory::params_ecsgd_as(c.l, method.expected_smoothness, n, s2)?
        }
        EstimatorKind::Lsvrg { p } => theory::params_eclsvrg(c.l, method.expected_smoothness, n, p)?,
    };
    let delta = absolute_delta(&method.compressor, obj.d()).unwrap_or(0.0);
    params.with_delta(delta)?.with_mu(obj.mu())
}

/// One row of the calculator table.
#[derive(Clone, Debug, PartialEq)]
pub struct CalcRow {
    pub label: String,
    pub params: TheoryParams,
    pub gamma: f64,
    pub t0: f64,
    pub bound: Option<f64>,
}

/// Theory table for every method of a prepared experiment, evaluated at `x⁰ = 0`.
pub fn calc_rows(prepared: &PreparedExperiment) -> Result<Vec<CalcRow>> {
    let obj = &prepared.objective;
    let f_star = prepared.reference.f_star;
    let dist_sq = prepared.reference.x_star.norm_sq();
    prepared
        .methods
        .iter()
        .map(|m| {
            let params = method_theory(prepared, m)?;
            let sigma0_sq = match m.estimator {
                EstimatorKind::SgdAs => 0.0,
                EstimatorKind::Lsvrg { .. } => {
                    2.0 * m.expected_smoothness * (obj.f_value(&vec![0.0; obj.d()])? - f_star)
                }
            };
            let t0 = theory::t0(dist_sq, &params, m.gamma, sigma0_sq);
            let bound = theory::bound_rhs(&params, m.gamma, m.iterations, t0, obj.mu()).ok();
            Ok(CalcRow {
                label: m.label.clone(),
                params,
                gamma: m.gamma,
                t0,
                bound,
            })
        })
        .collect()
}

/// Renders name/value tables, one column per entry, as aligned text or CSV.
pub fn render_table(columns: &[(String, Vec<(&'static str, f64)>)], csv: bool) -> String {
    let mut out = String::new();
    let Some((_, first)) = columns.first() else {
        return out;
    };
    let names: Vec<&str> = first.iter().map(|(n, _)| *n).collect();
    if csv {
        let _ = writeln!(
            out,
            "quantity,{}",
            columns.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(",")
        );
        for (i, name) in names.iter().enumerate() {
            let vals: Vec<String> = columns.iter().map(|(_, rows)| format!("{:e}", rows[i].1)).collect();
            let _ = writeln!(out, "{name},{}", vals.join(","));
        }
    } else {
        let width = columns.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(14);
        let _ = write!(out, "{:<12}", "quantity");
        for (l, _) in columns {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (i, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:<12}");
            for (_, rows) in columns {
                let _ = write!(out, " {:>width$.6e}", rows[i].1);
            }
            out.push('\n');
        }
    }
    out
}
