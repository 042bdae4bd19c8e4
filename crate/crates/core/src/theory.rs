//! Parameter calculus for the unified analysis of error-compensated methods.
//!
//! A method is summarised by constants `(A, B, C, D₁, D₂, ρ)` bounding the
//! second moment of its gradient estimator and the decay of an auxiliary
//! variance sequence `σ_k²`:
//!
//! ```text
//! E‖g^k‖²       ≤ 2A (f(x^k) − f*) + B σ_k² + D₁
//! E σ_{k+1}²    ≤ (1 − ρ) σ_k² + 2C (f(x^k) − f*) + D₂
//! ```
//!
//! Together with the compression level `Δ` these determine the stepsize cap,
//! the weighting of the averaged output and the right-hand side of the
//! convergence bound.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryParams {
    /// `A`: multiplies the function gap in the second-moment bound.
    pub gap_coeff: f64,
    /// `B`: multiplies `σ_k²`.
    pub sigma_coeff: f64,
    /// `C`: function-gap term of the `σ_k²` recursion.
    pub sigma_gap_coeff: f64,
    /// `D₁`: constant noise floor of the estimator.
    pub noise: f64,
    /// `D₂`: constant term of the `σ_k²` recursion.
    pub sigma_noise: f64,
    /// `ρ ∈ (0, 1]`: contraction of `σ_k²`.
    pub sigma_decay: f64,
    /// `F = 4B/(3ρ)`.
    pub lyapunov_weight: f64,
    /// `Δ` of the absolute compressor (0 without compression).
    pub compression_delta: f64,
    pub mu: f64,
    /// `L` of the full objective.
    pub smoothness: f64,
    /// Expected-smoothness constant `𝓛` (0 when not applicable).
    pub expected_smoothness: f64,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

fn check_workers(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::usage("number of workers must be positive"));
    }
    Ok(())
}

impl TheoryParams {
    /// Builds a parameter set from its primary constants; `F` is derived.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gap_coeff: f64,
        sigma_coeff: f64,
        sigma_gap_coeff: f64,
        noise: f64,
        sigma_noise: f64,
        sigma_decay: f64,
        smoothness: f64,
        expected_smoothness: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("A", gap_coeff),
            ("B", sigma_coeff),
            ("C", sigma_gap_coeff),
            ("D1", noise),
            ("D2", sigma_noise),
            ("L", smoothness),
            ("expected smoothness", expected_smoothness),
        ] {
            check_nonneg(name, v)?;
        }
        if !(sigma_decay > 0.0 && sigma_decay <= 1.0) {
            return Err(Error::usage(format!("rho must lie in (0,1], got {sigma_decay}")));
        }
        Ok(TheoryParams {
            gap_coeff,
            sigma_coeff,
            sigma_gap_coeff,
            noise,
            sigma_noise,
            sigma_decay,
            lyapunov_weight: 4.0 * sigma_coeff / (3.0 * sigma_decay),
            compression_delta: 0.0,
            mu: 0.0,
            smoothness,
            expected_smoothness,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        check_nonneg("Delta", delta)?;
        self.compression_delta = delta;
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        check_nonneg("mu", mu)?;
        self.mu = mu;
        Ok(self)
    }

    /// `h = 4(A + C·F)`; admissible stepsizes satisfy `γ ≤ 1/h`.
    pub fn cap_denominator(&self) -> f64 {
        4.0 * (self.gap_coeff + self.sigma_gap_coeff * self.lyapunov_weight)
    }

    pub fn max_stepsize(&self) -> f64 {
        1.0 / self.cap_denominator()
    }

    /// `c₁ = 2(D₁ + F·D₂)`.
    pub fn linear_noise(&self) -> f64 {
        2.0 * (self.noise + self.lyapunov_weight * self.sigma_noise)
    }

    /// `c₂ = 6LΔ²`.
    pub fn quadratic_noise(&self) -> f64 {
        6.0 * self.smoothness * self.compression_delta * self.compression_delta
    }

    /// Name/value pairs for tabular output.
    pub fn table_rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("A", self.gap_coeff),
            ("B", self.sigma_coeff),
            ("C", self.sigma_gap_coeff),
            ("D1", self.noise),
            ("D2", self.sigma_noise),
            ("rho", self.sigma_decay),
            ("F", self.lyapunov_weight),
            ("Delta", self.compression_delta),
            ("mu", self.mu),
            ("L", self.smoothness),
            ("Lexp", self.expected_smoothness),
            ("h", self.cap_denominator()),
            ("gamma_max", self.max_stepsize()),
        ]
    }
}

/// EC-SGD with arbitrary sampling.
pub fn params_ecsgd_as(
    smoothness: f64,
    expected_smoothness: f64,
    n: usize,
    sigma_star_sq: f64,
) -> Result<TheoryParams> {
    check_workers(n)?;
    check_nonneg("sigma*^2", sigma_star_sq)?;
    let nf = n as f64;
    TheoryParams::new(
        smoothness + 2.0 * expected_smoothness / nf,
        0.0,
        0.0,
        2.0 * sigma_star_sq / nf,
        0.0,
        1.0,
        smoothness,
        expected_smoothness,
    )
}

/// EC-LSVRG with reference-update probability `p`.
pub fn params_eclsvrg(smoothness: f64, expected_smoothness: f64, n: usize, p: f64) -> Result<TheoryParams> {
    check_workers(n)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::usage(format!(
            "reference probability must lie in (0,1], got {p}"
        )));
    }
    let nf = n as f64;
    TheoryParams::new(
        smoothness + 2.0 * expected_smoothness / nf,
        2.0 / nf,
        p * expected_smoothness,
        0.0,
        0.0,
        p,
        smoothness,
        expected_smoothness,
    )
}

/// Bounded-noise model `E‖∇f_ξ(x) − ∇f_i(x)‖² ≤ M‖∇f_i(x)‖² + σ²`.
pub fn params_msigma(
    smoothness: f64,
    max_worker_smoothness: f64,
    noise_multiplier: f64,
    sigma_sq: f64,
    zeta_star_sq: f64,
    n: usize,
) -> Result<TheoryParams> {
    check_workers(n)?;
    check_nonneg("M", noise_multiplier)?;
    check_nonneg("sigma^2", sigma_sq)?;
    check_nonneg("zeta*^2", zeta_star_sq)?;
    check_nonneg("max L_i", max_worker_smoothness)?;
    let nf = n as f64;
    TheoryParams::new(
        smoothness + noise_multiplier * max_worker_smoothness / nf,
        0.0,
        0.0,
        (2.0 * noise_multiplier * zeta_star_sq + sigma_sq) / nf,
        0.0,
        1.0,
        smoothness,
        0.0,
    )
}

fn check_iterations(k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::usage("iteration count must be at least 1"));
    }
    Ok(k as f64)
}

/// Stepsize for `μ > 0`:
/// `γ = min{1/h, ln(max{2, min{aμ²K²/(4c₁), aμ³K³/(8c₂)}})/(μK)}`.
///
/// A term whose denominator constant is zero is dropped; if both are, the inner
/// max is 2.
pub fn stepsize_strongly_convex(params: &TheoryParams, mu: f64, k: u64, a: f64, c1: f64, c2: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::usage(format!("mu must be positive, got {mu}")));
    }
    let kf = check_iterations(k)?;
    for (name, v) in [("a", a), ("c1", c1), ("c2", c2)] {
        check_nonneg(name, v)?;
    }
    let mut inner = f64::INFINITY;
    if c1 > 0.0 {
        inner = inner.min(a * mu * mu * kf * kf / (4.0 * c1));
    }
    if c2 > 0.0 {
        inner = inner.min(a * mu.powi(3) * kf.powi(3) / (8.0 * c2));
    }
    let inner = if inner.is_infinite() { 2.0 } else { inner.max(2.0) };
    Ok(params.max_stepsize().min(inner.ln() / (mu * kf)))
}

/// Stepsize for `μ = 0`: `γ = min{1/h, √(a/b), √(a/(c₁K)), ∛(a/(c₂K))}`.
pub fn stepsize_convex(params: &TheoryParams, k: u64, a: f64, b: f64, c1: f64, c2: f64) -> Result<f64> {
    let kf = check_iterations(k)?;
    for (name, v) in [("a", a), ("b", b), ("c1", c1), ("c2", c2)] {
        check_nonneg(name, v)?;
    }
    let mut gamma = params.max_stepsize();
    if b > 0.0 {
        gamma = gamma.min((a / b).sqrt());
    }
    if c1 > 0.0 {
        gamma = gamma.min((a / (c1 * kf)).sqrt());
    }
    if c2 > 0.0 {
        gamma = gamma.min((a / (c2 * kf)).cbrt());
    }
    Ok(gamma)
}

/// `η = min{γμ/2, ρ/4}`.
pub fn eta(gamma: f64, mu: f64, rho: f64) -> f64 {
    (gamma * mu / 2.0).min(rho / 4.0)
}

/// `T₀ = ‖x⁰ − x*‖² + F γ² σ₀²`.
pub fn t0(dist_sq: f64, params: &TheoryParams, gamma: f64, sigma0_sq: f64) -> f64 {
    dist_sq + params.lyapunov_weight * gamma * gamma * sigma0_sq
}

/// `T̂₀ = R₀² + F σ₀² / (16 (A + C F)²)`, a diagnostic only.
pub fn t_hat0(dist_sq: f64, params: &TheoryParams, sigma0_sq: f64) -> f64 {
    let s = params.gap_coeff + params.sigma_gap_coeff * params.lyapunov_weight;
    dist_sq + params.lyapunov_weight * sigma0_sq / (16.0 * s * s)
}

/// Right-hand side of the convergence bound for the weighted average `x̄ᴷ`:
///
/// * `μ > 0`: `(1−η)^{K+1}·2T₀/γ + 2γ(D₁ + F·D₂ + 3LγΔ²)`
/// * `μ = 0`: `2T₀/(γ(K+1)) + 2γ(D₁ + F·D₂ + 3LγΔ²)`
pub fn bound_rhs(params: &TheoryParams, gamma: f64, k: u64, t0: f64, mu: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma > params.max_stepsize() {
        return Err(Error::usage(format!(
            "stepsize {gamma} outside (0, {}]; bound does not apply",
            params.max_stepsize()
        )));
    }
    check_nonneg("T0", t0)?;
    check_nonneg("mu", mu)?;
    let rounds = k as f64 + 1.0;
    let tail = 2.0
        * gamma
        * (params.noise
            + params.lyapunov_weight * params.sigma_noise
            + 3.0 * params.smoothness * gamma * params.compression_delta * params.compression_delta);
    let head = if mu > 0.0 {
        let eta = eta(gamma, mu, params.sigma_decay);
        (rounds * (-eta).ln_1p()).exp() * 2.0 * t0 / gamma
    } else {
        2.0 * t0 / (gamma * rounds)
    };
    Ok(head + tail)
}

pub const DEFAULT_LAMBDA_ALPHA: f64 = 5000.0;
pub const DEFAULT_LAMBDA_EPSILON: f64 = 1e-3;

/// Hard-threshold level `λ = α √(ε / (d² γ))`.
pub fn ht_lambda_rule(epsilon: f64, d: usize, gamma: f64, alpha: f64) -> Result<f64> {
    check_nonneg("epsilon", epsilon)?;
    check_nonneg("alpha", alpha)?;
    if d == 0 || !(gamma > 0.0) {
        return Err(Error::usage("lambda rule needs d ≥ 1 and gamma > 0"));
    }
    let df = d as f64;
    Ok(alpha * (epsilon / (df * df * gamma)).sqrt())
}
