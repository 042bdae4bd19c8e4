//! Sampling distributions of the stochastic reformulation.
//!
//! Each worker holds a table of probabilities `p_ij` and multipliers `w_ij`;
//! drawing `j` yields the stochastic gradient `w_ij ∇f_ij(x)`. Unbiasedness
//! is `Σ_j p_ij w_ij ∇f_ij = ∇f_i`, i.e. `p_ij w_ij = 1/m`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::{Objective, SmoothnessConstants};
use crate::vector::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplingKind {
    Uniform,
    Importance,
    FullBatch,
}

impl SamplingKind {
    pub fn label(&self) -> &'static str {
        match self {
            SamplingKind::Uniform => "us",
            SamplingKind::Importance => "is",
            SamplingKind::FullBatch => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerTable {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Cumulative probabilities; the last entry is exactly 1.
    cdf: Vec<f64>,
}

impl WorkerTable {
    fn new(probs: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // pin the tail to 1 so every u in [0,1) lands on a positive-probability index
        if let Some(last_pos) = probs.iter().rposition(|&p| p > 0.0) {
            for c in &mut cdf[last_pos..] {
                *c = 1.0;
            }
        }
        WorkerTable { probs, weights, cdf }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingScheme {
    kind: SamplingKind,
    tables: Vec<WorkerTable>,
}

/// Outcome of a draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Draw {
    Sample {
        index: usize,
        weight: f64,
    },
    /// Full-batch schemes use the whole local gradient.
    Full,
}

impl SamplingScheme {
    pub fn kind(&self) -> SamplingKind {
        self.kind
    }

    pub fn table(&self, i: usize) -> &WorkerTable {
        &self.tables[i]
    }

    pub fn n(&self) -> usize {
        self.tables.len()
    }
}

/// Builds the per-worker tables.
///
/// Importance sampling uses `p_ij = L_ij/(m L̄_i)`, `w_ij = L̄_i/L_ij`.
/// Samples with `L_ij = 0` (constant summands) get `p = w = 0`; a worker whose
/// constants are all zero falls back to uniform sampling.
pub fn make_scheme(kind: SamplingKind, constants: &SmoothnessConstants) -> Result<SamplingScheme> {
    let tables = constants
        .l_ij
        .iter()
        .zip(&constants.l_bar)
        .enumerate()
        .map(|(i, (l_row, &l_bar))| {
            let m = l_row.len();
            if m == 0 {
                return Err(Error::usage(format!("worker {i} has no samples")));
            }
            let uniform = || WorkerTable::new(vec![1.0 / m as f64; m], vec![1.0; m]);
            match kind {
                SamplingKind::Uniform | SamplingKind::FullBatch => Ok(uniform()),
                SamplingKind::Importance => {
                    if let Some(bad) = l_row.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
                        return Err(Error::domain(format!(
                            "worker {i} has invalid smoothness constant {bad}"
                        )));
                    }
                    if l_bar == 0.0 {
                        return Ok(uniform());
                    }
                    let mf = m as f64;
                    let probs = l_row.iter().map(|&l| l / (mf * l_bar)).collect();
                    let weights = l_row.iter().map(|&l| if l > 0.0 { l_bar / l } else { 0.0 }).collect();
                    Ok(WorkerTable::new(probs, weights))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplingScheme { kind, tables })
}

/// Draws a sample index for worker `i` by inverse-CDF lookup.
pub fn draw<R: Rng + ?Sized>(scheme: &SamplingScheme, i: usize, rng: &mut R) -> Draw {
    if scheme.kind == SamplingKind::FullBatch {
        return Draw::Full;
    }
    let t = &scheme.tables[i];
    let u: f64 = rng.random();
    let index = t.cdf.partition_point(|&c| c <= u).min(t.cdf.len() - 1);
    Draw::Sample {
        index,
        weight: t.weights[index],
    }
}

/// Expected-smoothness constant `𝓛` for the scheme.
pub fn expected_smoothness(scheme: &SamplingScheme, constants: &SmoothnessConstants) -> f64 {
    match scheme.kind {
        SamplingKind::Uniform => constants.max_l_ij(),
        SamplingKind::Importance => constants.max_l_bar(),
        SamplingKind::FullBatch => constants.max_l_worker(),
    }
}

/// `σ*² = 1/n Σ_i Σ_j p_ij ‖w_ij ∇f_ij(x*) − ∇f_i(x*)‖²`, summed exactly over the tables.
pub fn sigma_star_sq(scheme: &SamplingScheme, obj: &Objective, x_star: &[f64]) -> Result<f64> {
    if scheme.kind == SamplingKind::FullBatch {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..obj.n() {
        let gi = obj.worker_grad(i, x_star)?;
        let t = &scheme.tables[i];
        for j in 0..obj.m() {
            if t.probs[j] == 0.0 {
                continue;
            }
            let mut g = DenseVector::zeros(obj.d());
            obj.add_sample_grad(i, j, x_star, t.weights[j], &mut g);
            total += t.probs[j] * g.dist_sq(&gi);
        }
    }
    Ok(total / obj.n() as f64)
}
