//! Distributed finite-sum objectives.
//!
//! `f(x) = 1/n Σ_i f_i(x)`, `f_i(x) = 1/m Σ_j f_ij(x)` where each summand is
//! either the logistic loss `ln(1 + exp(−y⟨a,x⟩)) + l2/2‖x‖²` or, for tests,
//! the ridge least-squares loss `½(⟨a,x⟩ − b)² + l2/2‖x‖²`.

use rand_distr::{Distribution, StandardNormal};

use crate::data::{SparseRow, WorkerShard};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::vector::{norm_sq, DenseVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Labels must be ±1.
    Logistic,
    /// Labels are real regression targets.
    LeastSquares,
}

impl Loss {
    /// Upper bound on the second derivative of the scalar loss in the margin.
    pub fn curvature(self) -> f64 {
        match self {
            Loss::Logistic => 0.25,
            Loss::LeastSquares => 1.0,
        }
    }

    /// Value and derivative with respect to the margin `t = ⟨a,x⟩`.
    #[inline]
    fn value_and_slope(self, t: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Logistic => {
                let z = -y * t;
                (softplus(z), -y * sigmoid(z))
            }
            Loss::LeastSquares => {
                let r = t - y;
                (0.5 * r * r, r)
            }
        }
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e^{−z})` without overflow.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The distributed objective: `n` shards of `m` samples each in dimension `d`.
#[derive(Clone, Debug)]
pub struct Objective {
    shards: Vec<WorkerShard>,
    l2: f64,
    d: usize,
    loss: Loss,
}

/// Per-sample, per-worker and global smoothness constants.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessConstants {
    /// `L_ij = l2 + c‖a_ij‖²` (c = 1/4 for logistic).
    pub l_ij: Vec<Vec<f64>>,
    /// `L̄_i = 1/m Σ_j L_ij`.
    pub l_bar: Vec<f64>,
    /// Smoothness of each local `f_i`: `l2 + c λ_max(A_iᵀA_i)/m`.
    pub l_worker: Vec<f64>,
    /// Smoothness of `f`: `l2 + c λ_max(AᵀA)/(nm)`.
    pub l: f64,
}

impl SmoothnessConstants {
    pub fn max_l_ij(&self) -> f64 {
        self.l_ij.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn max_l_bar(&self) -> f64 {
        self.l_bar.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_l_worker(&self) -> f64 {
        self.l_worker.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: DenseVector,
    pub f_star: f64,
    /// Achieved `‖∇f(x_star)‖`.
    pub grad_norm: f64,
    pub iterations: u64,
}

pub const REFERENCE_MAX_ITER: u64 = 10_000_000;
pub const POWER_ITER_TOL: f64 = 1e-8;
pub const POWER_ITER_MAX: usize = 10_000;

impl Objective {
    pub fn new(shards: Vec<WorkerShard>, d: usize, l2: f64, loss: Loss) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::usage("objective needs at least one worker"));
        }
        if d == 0 {
            return Err(Error::usage("dimension must be positive"));
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(Error::domain(format!("l2 must be finite and >= 0, got {l2}")));
        }
        let m = shards[0].len();
        if m == 0 {
            return Err(Error::usage("workers must hold at least one sample"));
        }
        for (i, shard) in shards.iter().enumerate() {
            if shard.len() != m || shard.labels.len() != m {
                return Err(Error::usage(format!(
                    "worker {i} has {} samples, expected {m}",
                    shard.len()
                )));
            }
            for (j, (row, &y)) in shard.rows.iter().zip(&shard.labels).enumerate() {
                if row.min_dim() > d {
                    return Err(Error::usage(format!("sample ({i},{j}) has index beyond dimension {d}")));
                }
                if !row.values().iter().all(|v| v.is_finite()) || !y.is_finite() {
                    return Err(Error::domain(format!("sample ({i},{j}) is not finite")));
                }
                if loss == Loss::Logistic && y != 1.0 && y != -1.0 {
                    return Err(Error::domain(format!(
                        "sample ({i},{j}) has label {y}; logistic loss needs ±1"
                    )));
                }
            }
        }
        Ok(Objective { shards, l2, d, loss })
    }

    pub fn n(&self) -> usize {
        self.shards.len()
    }

    pub fn m(&self) -> usize {
        self.shards[0].len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    /// Quasi-strong convexity constant guaranteed by the regulariser.
    pub fn mu(&self) -> f64 {
        self.l2
    }

    pub fn shards(&self) -> &[WorkerShard] {
        &self.shards
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::usage(format!(
                "vector has length {}, expected {}",
                x.len(),
                self.d
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("point has non-finite entries"));
        }
        Ok(())
    }

    fn check_worker(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::usage(format!("worker {i} out of range (n = {})", self.n())));
        }
        Ok(())
    }

    /// `∇f_ij(x)`.
    pub fn sample_grad(&self, i: usize, j: usize, x: &[f64]) -> Result<DenseVector> {
        self.check_worker(i)?;
        if j >= self.m() {
            return Err(Error::usage(format!("sample {j} out of range (m = {})", self.m())));
        }
        self.check_x(x)?;
        let mut out = DenseVector::zeros(self.d);
        self.add_sample_grad(i, j, x, 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale · ∇f_ij(x)` without argument checks.
    #[inline]
    pub(crate) fn add_sample_grad(&self, i: usize, j: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        let row = &self.shards[i].rows[j];
        let y = self.shards[i].labels[j];
        let (_, slope) = self.loss.value_and_slope(row.dot(x), y);
        row.axpy_into(scale * slope, out);
        if self.l2 != 0.0 {
            for (o, xv) in out.iter_mut().zip(x) {
                *o += scale * self.l2 * xv;
            }
        }
    }

    pub fn sample_value(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check_worker(i)?;
        if j >= self.m() {
            return Err(Error::usage(format!("sample {j} out of range (m = {})", self.m())));
        }
        self.check_x(x)?;
        let row = &self.shards[i].rows[j];
        let (v, _) = self.loss.value_and_slope(row.dot(x), self.shards[i].labels[j]);
        Ok(v + 0.5 * self.l2 * norm_sq(x))
    }

    /// `∇f_i(x)` and `f_i(x)` in one pass over worker `i`'s samples.
    pub(crate) fn worker_value_grad(&self, i: usize, x: &[f64]) -> (f64, DenseVector) {
        let shard = &self.shards[i];
        let m = shard.len() as f64;
        let mut g = DenseVector::zeros(self.d);
        let mut value = 0.0;
        for (row, &y) in shard.rows.iter().zip(&shard.labels) {
            let (v, slope) = self.loss.value_and_slope(row.dot(x), y);
            value += v;
            row.axpy_into(slope, &mut g);
        }
        g.scale(1.0 / m);
        value /= m;
        if self.l2 != 0.0 {
            g.axpy(self.l2, x);
            value += 0.5 * self.l2 * norm_sq(x);
        }
        (value, g)
    }

    /// `∇f_i(x)`.
    pub fn worker_grad(&self, i: usize, x: &[f64]) -> Result<DenseVector> {
        self.check_worker(i)?;
        self.check_x(x)?;
        Ok(self.worker_value_grad(i, x).1)
    }

    pub fn worker_value(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_worker(i)?;
        self.check_x(x)?;
        Ok(self.worker_value_grad(i, x).0)
    }

    pub(crate) fn value_grad(&self, x: &[f64]) -> (f64, DenseVector) {
        let n = self.n() as f64;
        let mut g = DenseVector::zeros(self.d);
        let mut value = 0.0;
        for i in 0..self.n() {
            let (v, gi) = self.worker_value_grad(i, x);
            value += v;
            g.axpy(1.0, &gi);
        }
        g.scale(1.0 / n);
        (value / n, g)
    }

    /// `∇f(x) = 1/n Σ_i ∇f_i(x)`.
    pub fn full_grad(&self, x: &[f64]) -> Result<DenseVector> {
        self.check_x(x)?;
        Ok(self.value_grad(x).1)
    }

    /// `f(x)`.
    pub fn f_value(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        let n = self.n() as f64;
        let mut total = 0.0;
        for shard in &self.shards {
            let mut s = 0.0;
            for (row, &y) in shard.rows.iter().zip(&shard.labels) {
                s += self.loss.value_and_slope(row.dot(x), y).0;
            }
            total += s / shard.len() as f64;
        }
        total / n + 0.5 * self.l2 * norm_sq(x)
    }

    pub fn smoothness_constants(&self) -> SmoothnessConstants {
        let c = self.loss.curvature();
        let l_ij: Vec<Vec<f64>> = self
            .shards
            .iter()
            .map(|s| s.rows.iter().map(|r| self.l2 + c * r.norm_sq()).collect())
            .collect();
        let l_bar = l_ij
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect();
        let m = self.m() as f64;
        let l_worker = self
            .shards
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rows: Vec<&SparseRow> = s.rows.iter().collect();
                self.l2 + c * gram_lambda_max(&rows, self.d, i as u64 + 1) / m
            })
            .collect();
        let all: Vec<&SparseRow> = self.shards.iter().flat_map(|s| s.rows.iter()).collect();
        let l = self.l2 + c * gram_lambda_max(&all, self.d, 0) / (self.n() as f64 * m);
        SmoothnessConstants {
            l_ij,
            l_bar,
            l_worker,
            l,
        }
    }

    /// Gradient descent with stepsize `1/L` until `‖∇f‖ <= tol`.
    pub fn solve_reference(&self, tol: f64) -> Result<ReferenceSolution> {
        self.solve_reference_with(tol, REFERENCE_MAX_ITER, None, |_| {})
    }

    /// Reference solver with an explicit iteration cap, optional `L`, and a
    /// per-iteration callback receiving `f(x_k)`.
    pub fn solve_reference_with(
        &self,
        tol: f64,
        max_iter: u64,
        l: Option<f64>,
        mut on_iter: impl FnMut(f64),
    ) -> Result<ReferenceSolution> {
        if !(tol > 0.0) {
            return Err(Error::usage("reference tolerance must be positive"));
        }
        let l = l.unwrap_or_else(|| self.smoothness_constants().l);
        let mut x = DenseVector::zeros(self.d);
        if l == 0.0 {
            // f is constant: every point is a minimiser
            let (f, g) = self.value_grad(&x);
            return Ok(ReferenceSolution {
                x_star: x,
                f_star: f,
                grad_norm: g.norm(),
                iterations: 0,
            });
        }
        let step = 1.0 / l;
        let (mut f, mut g) = self.value_grad(&x);
        on_iter(f);
        let mut iterations = 0u64;
        loop {
            let gn = g.norm();
            if gn <= tol {
                return Ok(ReferenceSolution {
                    x_star: x,
                    f_star: f,
                    grad_norm: gn,
                    iterations,
                });
            }
            if iterations >= max_iter {
                return Err(Error::Unconverged {
                    tol,
                    iterations,
                    best: Box::new(ReferenceSolution {
                        x_star: x,
                        f_star: f,
                        grad_norm: gn,
                        iterations,
                    }),
                });
            }
            x.axpy(-step, &g);
            (f, g) = self.value_grad(&x);
            on_iter(f);
            iterations += 1;
        }
    }
}

/// Largest eigenvalue of `AᵀA` for the stacked `rows`, by power iteration on
/// the Rayleigh quotient `‖Av‖²` with relative tolerance [`POWER_ITER_TOL`].
pub fn gram_lambda_max(rows: &[&SparseRow], d: usize, seed: u64) -> f64 {
    if rows.iter().all(|r| r.nnz() == 0) {
        return 0.0;
    }
    let mut rng = rng::stream(seed, Purpose::Probe, 0);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    let mut av = vec![0.0; rows.len()];
    for _ in 0..POWER_ITER_MAX {
        for (k, r) in rows.iter().enumerate() {
            av[k] = r.dot(&v);
        }
        let rayleigh = norm_sq(&av);
        let mut w = vec![0.0; d];
        for (r, &s) in rows.iter().zip(&av) {
            r.axpy_into(s, &mut w);
        }
        let converged = (rayleigh - lambda).abs() <= POWER_ITER_TOL * rayleigh;
        lambda = rayleigh;
        if converged || norm_sq(&w) == 0.0 {
            break;
        }
        v = w;
        normalize(&mut v);
    }
    lambda
}

fn normalize(v: &mut [f64]) {
    let n = norm_sq(v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
