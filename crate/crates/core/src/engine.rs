//! The synchronous error-compensated round loop.
//!
//! Each round every worker `i`
//!
//! 1. computes its estimator `g_i` at the broadcast iterate `x`,
//! 2. compresses `u_i = (e_i + γ g_i)/γ` and sends `v_i = γ C(u_i)`,
//! 3. keeps the residual `e_i ← γ (u_i − C(u_i))`,
//!
//! after which the server applies `x ← x − mean_i v_i`. Alongside the iterate
//! the engine tracks the virtual sequence `x̃ ← x̃ − γ ḡ`, which must coincide
//! with `x − ē`, and the geometrically weighted average `x̄`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;

use crate::compressors::{absolute_delta, compress, encode, payload_bits, reconstruct, CompressorSpec};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorState};
use crate::problem::{Objective, ReferenceSolution, SmoothnessConstants};
use crate::rng::{stream, Purpose, StreamRng};
use crate::sampling::{expected_smoothness, make_scheme, SamplingKind, SamplingScheme};
use crate::theory;
use crate::vector::{norm_sq, pairwise_mean, DenseVector};

/// Iterates whose norm exceeds this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Relative tolerance of the virtual-iterate identity.
pub const VIRTUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub iterations: u64,
    pub compressor: CompressorSpec,
    pub estimator: EstimatorKind,
    pub sampling: SamplingKind,
    pub seed: u64,
    /// Weight decay of `x̄`; defaults to `min{γμ/2, ρ/4}`.
    pub eta_override: Option<f64>,
    pub record_every: u64,
    /// Run workers on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Assert the error-bound and virtual-iterate invariants every round.
    pub check_invariants: bool,
    pub x0: Option<Vec<f64>>,
    /// Append every compressed message to this file.
    pub message_dump: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(
        gamma: f64,
        iterations: u64,
        compressor: CompressorSpec,
        estimator: EstimatorKind,
        sampling: SamplingKind,
        seed: u64,
    ) -> Self {
        RunConfig {
            gamma,
            iterations,
            compressor,
            estimator,
            sampling,
            seed,
            eta_override: None,
            record_every: 1,
            parallel: false,
            check_invariants: false,
            x0: None,
            message_dump: None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::usage(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(Error::usage("iterations must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::usage("record_every must be at least 1"));
        }
        if let Some(eta) = self.eta_override {
            if !(0.0..1.0).contains(&eta) {
                return Err(Error::usage(format!("eta must lie in [0,1), got {eta}")));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != d || !x0.iter().all(|v| v.is_finite()) {
                return Err(Error::usage("x0 must be finite with length d"));
            }
        }
        self.compressor.validate(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    /// `f(x^k) − f*`.
    pub f_gap_x: f64,
    /// `f(x̄^k) − f*`.
    pub f_gap_avg: f64,
    /// Cumulative payload bits summed over workers.
    pub bits_total: u64,
    /// Cumulative payload bits, mean over workers.
    pub bits_per_worker: f64,
    /// `‖ē^k‖²` with `ē` the mean error.
    pub err_norm_sq: f64,
    /// `‖x̃^k − (x^k − ē^k)‖`.
    pub virtual_residual: f64,
    pub sigma_k_sq: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub traces: Vec<TraceRecord>,
    pub x_final: DenseVector,
    pub x_bar: DenseVector,
    pub eta: f64,
    pub bits_per_worker: Vec<u64>,
    /// `∇f_ij` evaluations summed over workers, excluding reference refreshes.
    pub sample_grad_evals: u64,
    /// Local full-gradient evaluations (`∇f_i`) summed over workers.
    pub full_grad_evals: u64,
    pub reference_updates: u64,
    pub max_virtual_residual: f64,
}

/// Running weighted mean with weights `w_k = (1−η)^{−(k+1)}`.
///
/// Only the ratio `W_K / w_K` is stored, as `s_K = ln(W_K/w_K)`, which obeys
/// `s_K = ln(1 + (1−η) e^{s_{K−1}})` and stays bounded by `ln(1/η)`.
#[derive(Clone, Debug)]
pub struct WeightedAverage {
    mean: DenseVector,
    log_ratio: f64,
    eta: f64,
}

impl WeightedAverage {
    pub fn new(x0: &[f64], eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::usage(format!("eta must lie in [0,1), got {eta}")));
        }
        Ok(WeightedAverage {
            mean: DenseVector::from_vec(x0.to_vec()),
            log_ratio: 0.0,
            eta,
        })
    }

    /// Folds in the next iterate.
    pub fn update(&mut self, x: &[f64]) {
        self.log_ratio = ((1.0 - self.eta) * self.log_ratio.exp()).ln_1p();
        let r = (-self.log_ratio).exp();
        for (m, &xi) in self.mean.iter_mut().zip(x) {
            *m += r * (xi - *m);
        }
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

struct Worker {
    error: DenseVector,
    sampler: StreamRng,
    compressor_rng: StreamRng,
    bits: u64,
}

/// Mutable state of a run between rounds.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub x: DenseVector,
    pub errors: Vec<DenseVector>,
    pub virtual_x: DenseVector,
    pub average: WeightedAverage,
    pub bits_sent: Vec<u64>,
}

impl RoundState {
    pub fn new(x0: &[f64], n: usize, eta: f64) -> Result<Self> {
        Ok(RoundState {
            x: DenseVector::from_vec(x0.to_vec()),
            errors: vec![DenseVector::zeros(x0.len()); n],
            virtual_x: DenseVector::from_vec(x0.to_vec()),
            average: WeightedAverage::new(x0, eta)?,
            bits_sent: vec![0; n],
        })
    }

    pub fn mean_error(&self) -> DenseVector {
        pairwise_mean(&self.errors)
    }

    /// Advances `x̃` by `−γ g` and returns `‖x̃ − (x − ē)‖`.
    ///
    /// Call after `x` and the errors have been moved to the next round.
    pub fn virtual_iterate_check(&mut self, gamma: f64, g: &[f64]) -> f64 {
        self.virtual_x.axpy(-gamma, g);
        self.virtual_residual()
    }

    pub fn virtual_residual(&self) -> f64 {
        let e = self.mean_error();
        self.virtual_x
            .iter()
            .zip(self.x.iter().zip(e.iter()))
            .map(|(v, (x, e))| {
                let r = v - (x - e);
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }
}

struct WorkerOutput {
    grad: DenseVector,
    sent: DenseVector,
    bytes: Option<Vec<u8>>,
}

#[allow(clippy::too_many_arguments)]
fn worker_round(
    worker: &mut Worker,
    i: usize,
    config: &RunConfig,
    obj: &Objective,
    scheme: &SamplingScheme,
    estimator: &EstimatorState,
    x: &[f64],
    want_bytes: bool,
) -> Result<WorkerOutput> {
    let gamma = config.gamma;
    let grad = estimator.estimate(obj, scheme, i, x, &mut worker.sampler)?;
    let u: Vec<f64> = worker
        .error
        .iter()
        .zip(grad.iter())
        .map(|(e, g)| (e + gamma * g) / gamma)
        .collect();
    let msg = compress(&config.compressor, &u, &mut worker.compressor_rng)?;
    let compressed = reconstruct(&msg);
    for ((e, &uj), &cj) in worker.error.iter_mut().zip(&u).zip(compressed.iter()) {
        *e = gamma * (uj - cj);
    }
    let mut sent = compressed;
    sent.scale(gamma);
    worker.bits += payload_bits(&msg);
    Ok(WorkerOutput {
        grad,
        sent,
        bytes: want_bytes.then(|| encode(&msg)),
    })
}

/// Per-worker bound `γ²Δ²` evaluated with the same summation as `norm_sq`
/// over `d` copies of `fl(γ·c)²`, so the comparison is exact in floating point.
fn error_bound(spec: &CompressorSpec, gamma: f64, d: usize) -> Option<f64> {
    let c = spec.coordinate_bound()?;
    Some(norm_sq(&vec![gamma * c; d]))
}

/// Runs with constants computed from the objective.
pub fn run(config: &RunConfig, obj: &Objective, reference: &ReferenceSolution) -> Result<RunOutput> {
    run_with_constants(config, obj, reference, &obj.smoothness_constants())
}

/// Runs `config.iterations` rounds; `constants` must belong to `obj`.
pub fn run_with_constants(
    config: &RunConfig,
    obj: &Objective,
    reference: &ReferenceSolution,
    constants: &SmoothnessConstants,
) -> Result<RunOutput> {
    let d = obj.d();
    let n = obj.n();
    config.validate(d)?;
    if reference.x_star.len() != d {
        return Err(Error::usage("reference solution has the wrong dimension"));
    }
    let scheme = make_scheme(config.sampling, constants)?;
    let lexp = expected_smoothness(&scheme, constants);
    let x0 = config.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut estimator = EstimatorState::new(config.estimator, obj, &x0, lexp)?;
    let rho = match config.estimator {
        EstimatorKind::SgdAs => 1.0,
        EstimatorKind::Lsvrg { p } => p,
    };
    let eta = config
        .eta_override
        .unwrap_or_else(|| theory::eta(config.gamma, obj.mu(), rho));
    let mut state = RoundState::new(&x0, n, eta)?;
    let mut workers: Vec<Worker> = (0..n as u64)
        .map(|i| Worker {
            error: DenseVector::zeros(d),
            sampler: stream(config.seed, Purpose::Sampler, i),
            compressor_rng: stream(config.seed, Purpose::Compressor, i),
            bits: 0,
        })
        .collect();
    let mut coin = stream(config.seed, Purpose::Coin, 0);
    let bound = if config.check_invariants {
        absolute_delta(&config.compressor, d).and_then(|_| error_bound(&config.compressor, config.gamma, d))
    } else {
        None
    };
    let mut dump = match &config.message_dump {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?)),
        None => None,
    };
    let per_round_samples: u64 = match (config.estimator, config.sampling) {
        (_, SamplingKind::FullBatch) => 0,
        (EstimatorKind::SgdAs, _) => n as u64,
        (EstimatorKind::Lsvrg { .. }, _) => 2 * n as u64,
    };
    let mut sample_grad_evals = 0u64;
    let mut full_grad_extra = 0u64;

    let mut traces = Vec::new();
    let mut max_residual = 0.0f64;
    let record = |k: u64, state: &RoundState, estimator: &EstimatorState, residual: f64| -> TraceRecord {
        let bits_total: u64 = state.bits_sent.iter().sum();
        TraceRecord {
            k,
            f_gap_x: obj.value_unchecked(&state.x) - reference.f_star,
            f_gap_avg: obj.value_unchecked(state.average.mean()) - reference.f_star,
            bits_total,
            bits_per_worker: bits_total as f64 / n as f64,
            err_norm_sq: state.mean_error().norm_sq(),
            virtual_residual: residual,
            sigma_k_sq: estimator.sigma_k_sq(reference.f_star),
        }
    };
    traces.push(record(0, &state, &estimator, 0.0));

    for k in 0..config.iterations {
        let x_k = state.x.clone();
        let want_bytes = dump.is_some();
        let outputs: Vec<WorkerOutput> = if config.parallel {
            workers
                .par_iter_mut()
                .enumerate()
                .map(|(i, w)| worker_round(w, i, config, obj, &scheme, &estimator, &x_k, want_bytes))
                .collect::<Result<_>>()?
        } else {
            workers
                .iter_mut()
                .enumerate()
                .map(|(i, w)| worker_round(w, i, config, obj, &scheme, &estimator, &x_k, want_bytes))
                .collect::<Result<_>>()?
        };
        sample_grad_evals += per_round_samples;
        if config.sampling == SamplingKind::FullBatch {
            // each worker touched its whole shard (twice for LSVRG)
            let passes = if matches!(config.estimator, EstimatorKind::Lsvrg { .. }) {
                2
            } else {
                1
            };
            full_grad_extra += passes * n as u64;
        }
        if let Some(out) = dump.as_mut() {
            for (i, o) in outputs.iter().enumerate() {
                let bytes = o.bytes.as_deref().unwrap_or_default();
                let write = out
                    .write_all(&k.to_le_bytes())
                    .and_then(|_| out.write_all(&(i as u32).to_le_bytes()))
                    .and_then(|_| out.write_all(&(bytes.len() as u32).to_le_bytes()))
                    .and_then(|_| out.write_all(bytes));
                write.map_err(|e| Error::io(config.message_dump.clone().unwrap_or_default(), e))?;
            }
        }

        let sent: Vec<&[f64]> = outputs.iter().map(|o| &o.sent[..]).collect();
        let grads: Vec<&[f64]> = outputs.iter().map(|o| &o.grad[..]).collect();
        let v = pairwise_mean(&sent);
        let g = pairwise_mean(&grads);
        state.x.axpy(-1.0, &v);
        for (slot, w) in state.errors.iter_mut().zip(&workers) {
            slot.clone_from(&w.error);
        }
        for (slot, w) in state.bits_sent.iter_mut().zip(&workers) {
            *slot = w.bits;
        }
        let residual = state.virtual_iterate_check(config.gamma, &g);
        max_residual = max_residual.max(residual);
        state.average.update(&state.x);
        estimator.maybe_update_reference(obj, &x_k, &mut coin);

        let norm = state.x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            traces.push(record(k + 1, &state, &estimator, residual));
            return Err(Error::Diverged {
                iteration: (k + 1) as usize,
                norm,
                trace: traces,
            });
        }
        if config.check_invariants {
            if residual > VIRTUAL_TOL * (1.0 + norm) {
                return Err(Error::Internal(format!(
                    "virtual iterate residual {residual:e} at round {}",
                    k + 1
                )));
            }
            if let Some(bound) = bound {
                for (i, e) in state.errors.iter().enumerate() {
                    let e2 = e.norm_sq();
                    if e2 > bound {
                        return Err(Error::Internal(format!(
                            "worker {i} error {e2:e} exceeds bound {bound:e} at round {}",
                            k + 1
                        )));
                    }
                }
            }
            estimator.validate_cache(obj)?;
        }
        let step = k + 1;
        if step % config.record_every == 0 || step == config.iterations {
            traces.push(record(step, &state, &estimator, residual));
        }
    }
    if let Some(mut out) = dump {
        out.flush()
            .map_err(|e| Error::io(config.message_dump.clone().unwrap_or_default(), e))?;
    }
    Ok(RunOutput {
        traces,
        x_bar: state.average.mean().clone(),
        x_final: state.x,
        eta,
        bits_per_worker: state.bits_sent,
        sample_grad_evals,
        full_grad_evals: estimator.full_grad_evals() + full_grad_extra,
        reference_updates: estimator.reference_updates(),
        max_virtual_residual: max_residual,
    })
}

pub const TRACE_CSV_HEADER: &str = "k,f_gap_x,f_gap_avg,bits_cum,err_norm_sq,sigma_k_sq";

/// Writes traces as CSV, preceded by `# `-prefixed comment lines.
pub fn write_trace_csv<W: Write>(mut out: W, comments: &[String], traces: &[TraceRecord]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for t in traces {
        writeln!(
            out,
            "{},{:e},{:e},{},{:e},{:e}",
            t.k, t.f_gap_x, t.f_gap_avg, t.bits_per_worker, t.err_norm_sq, t.sigma_k_sq
        )?;
    }
    Ok(())
}

/// Draws `x0` uniformly from `[-scale, scale]^d`; used by tests and benches.
pub fn random_start<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..=scale)).collect()
}
