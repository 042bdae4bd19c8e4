//! Per-worker stochastic gradient estimators.
//!
//! * EC-SGD-AS: `g_i = w_ij ∇f_ij(x)` for `j` drawn from the worker's table.
//! * EC-LSVRG: `g_i = w_ij (∇f_ij(x) − ∇f_ij(w)) + ∇f_i(w)` with the same `j`
//!   at both points, and a global reference `w` refreshed to the current
//!   iterate by a single shared Bernoulli(p) coin per round.

use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::Objective;
use crate::sampling::{draw, Draw, SamplingScheme};
use crate::vector::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorKind {
    SgdAs,
    Lsvrg { p: f64 },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::SgdAs => "ec-sgd",
            EstimatorKind::Lsvrg { .. } => "ec-lsvrg",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorState {
    kind: EstimatorKind,
    /// Expected-smoothness constant used for `σ_k²`.
    expected_smoothness: f64,
    w_ref: DenseVector,
    f_ref: f64,
    cached_full_grads: Vec<DenseVector>,
    ref_checksum: u64,
    full_grad_evals: u64,
    reference_updates: u64,
}

fn checksum(v: &[f64]) -> u64 {
    // FNV-1a over the raw bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in v {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl EstimatorState {
    /// Initialises the estimator at `x0` (`w⁰ = x⁰`).
    pub fn new(kind: EstimatorKind, obj: &Objective, x0: &[f64], expected_smoothness: f64) -> Result<Self> {
        if let EstimatorKind::Lsvrg { p } = kind {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::usage(format!("LSVRG probability must lie in [0,1], got {p}")));
            }
        }
        if x0.len() != obj.d() || !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::usage("starting point must be finite with length d"));
        }
        let mut state = EstimatorState {
            kind,
            expected_smoothness,
            w_ref: DenseVector::from_vec(x0.to_vec()),
            f_ref: 0.0,
            cached_full_grads: Vec::new(),
            ref_checksum: 0,
            full_grad_evals: 0,
            reference_updates: 0,
        };
        if matches!(kind, EstimatorKind::Lsvrg { .. }) {
            state.refresh(obj);
        }
        Ok(state)
    }

    fn refresh(&mut self, obj: &Objective) {
        let mut f = 0.0;
        self.cached_full_grads = (0..obj.n())
            .map(|i| {
                let (fi, gi) = obj.worker_value_grad(i, &self.w_ref);
                f += fi;
                gi
            })
            .collect();
        self.f_ref = f / obj.n() as f64;
        self.ref_checksum = checksum(&self.w_ref);
        self.full_grad_evals += obj.n() as u64;
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn w_ref(&self) -> &DenseVector {
        &self.w_ref
    }

    pub fn cached_full_grad(&self, i: usize) -> Option<&DenseVector> {
        self.cached_full_grads.get(i)
    }

    /// Number of local full-gradient evaluations (`∇f_i(w)`), summed over workers.
    pub fn full_grad_evals(&self) -> u64 {
        self.full_grad_evals
    }

    pub fn reference_updates(&self) -> u64 {
        self.reference_updates
    }

    /// The estimator for worker `i` at `x` given an already drawn sample.
    pub fn estimate_with_draw(&self, obj: &Objective, i: usize, x: &[f64], sample: Draw) -> Result<DenseVector> {
        let mut g = DenseVector::zeros(obj.d());
        match (self.kind, sample) {
            (EstimatorKind::SgdAs, Draw::Sample { index, weight }) => {
                obj.add_sample_grad(i, index, x, weight, &mut g);
            }
            (EstimatorKind::SgdAs, Draw::Full) => {
                g = obj.worker_value_grad(i, x).1;
            }
            (EstimatorKind::Lsvrg { .. }, sample) => {
                if checksum(&self.w_ref) != self.ref_checksum {
                    return Err(Error::Internal("LSVRG reference cache is stale".into()));
                }
                match sample {
                    Draw::Sample { index, weight } => {
                        obj.add_sample_grad(i, index, x, weight, &mut g);
                        obj.add_sample_grad(i, index, &self.w_ref, -weight, &mut g);
                    }
                    Draw::Full => {
                        g = obj.worker_value_grad(i, x).1;
                        g.axpy(-1.0, &obj.worker_value_grad(i, &self.w_ref).1);
                    }
                }
                g.axpy(1.0, &self.cached_full_grads[i]);
            }
        }
        Ok(g)
    }

    /// Draws from worker `i`'s table with its own stream and returns `g_i`.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        obj: &Objective,
        scheme: &SamplingScheme,
        i: usize,
        x: &[f64],
        rng: &mut R,
    ) -> Result<DenseVector> {
        if i >= obj.n() {
            return Err(Error::usage(format!("worker {i} out of range")));
        }
        let sample = draw(scheme, i, rng);
        self.estimate_with_draw(obj, i, x, sample)
    }

    /// Flips the shared coin; on success `w ← x` and all local full gradients are recomputed.
    pub fn maybe_update_reference<R: Rng + ?Sized>(&mut self, obj: &Objective, x: &[f64], rng: &mut R) -> bool {
        match self.kind {
            EstimatorKind::SgdAs => false,
            EstimatorKind::Lsvrg { p } => {
                let coin = rng.random::<f64>() < p;
                self.apply_coin(obj, x, coin)
            }
        }
    }

    /// Applies a given coin outcome; used by the engine and by exact-expectation checks.
    pub fn apply_coin(&mut self, obj: &Objective, x: &[f64], coin: bool) -> bool {
        if !coin || !matches!(self.kind, EstimatorKind::Lsvrg { .. }) {
            return false;
        }
        self.w_ref = DenseVector::from_vec(x.to_vec());
        self.refresh(obj);
        self.reference_updates += 1;
        true
    }

    /// `σ_k² = 2𝓛(f(w) − f*)` for LSVRG, `0` for EC-SGD-AS.
    pub fn sigma_k_sq(&self, f_star: f64) -> f64 {
        match self.kind {
            EstimatorKind::SgdAs => 0.0,
            EstimatorKind::Lsvrg { .. } => 2.0 * self.expected_smoothness * (self.f_ref - f_star),
        }
    }

    /// Recomputes every cached local gradient and compares bit-for-bit.
    pub fn validate_cache(&self, obj: &Objective) -> Result<()> {
        if !matches!(self.kind, EstimatorKind::Lsvrg { .. }) {
            return Ok(());
        }
        for (i, cached) in self.cached_full_grads.iter().enumerate() {
            if obj.worker_value_grad(i, &self.w_ref).1 != *cached {
                return Err(Error::Internal(format!("cached gradient of worker {i} is stale")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_logreg, SynthSpec};
    use crate::problem::Loss;
    use crate::rng::{stream, Purpose};
    use crate::sampling::{make_scheme, SamplingKind};

    fn tiny() -> Objective {
        let s = synth_logreg(&SynthSpec::new(3, 5, 4, 2)).unwrap();
        Objective::new(s.shards, 4, 0.05, Loss::Logistic).unwrap()
    }

    #[test]
    fn lsvrg_at_reference_is_exact_local_gradient() {
        let obj = tiny();
        let c = obj.smoothness_constants();
        let scheme = make_scheme(SamplingKind::Uniform, &c).unwrap();
        let x0 = vec![0.3, -0.1, 0.2, 0.5];
        let st = EstimatorState::new(EstimatorKind::Lsvrg { p: 0.2 }, &obj, &x0, c.max_l_ij()).unwrap();
        let mut rng = stream(0, Purpose::Sampler, 0);
        for i in 0..obj.n() {
            for _ in 0..10 {
                let g = st.estimate(&obj, &scheme, i, &x0, &mut rng).unwrap();
                assert!(g.dist_sq(&obj.worker_grad(i, &x0).unwrap()) < 1e-28);
            }
        }
    }

    #[test]
    fn full_batch_sgd_is_local_gradient() {
        let obj = tiny();
        let c = obj.smoothness_constants();
        let scheme = make_scheme(SamplingKind::FullBatch, &c).unwrap();
        let x = vec![0.1; 4];
        let st = EstimatorState::new(EstimatorKind::SgdAs, &obj, &x, 1.0).unwrap();
        let g = st
            .estimate(&obj, &scheme, 1, &x, &mut stream(0, Purpose::Sampler, 1))
            .unwrap();
        assert_eq!(g, obj.worker_grad(1, &x).unwrap());
    }

    #[test]
    fn reference_probability_extremes() {
        let obj = tiny();
        let x0 = vec![0.0; 4];
        let x1 = vec![1.0; 4];
        let mut rng = stream(0, Purpose::Coin, 0);
        let mut st = EstimatorState::new(EstimatorKind::Lsvrg { p: 1.0 }, &obj, &x0, 1.0).unwrap();
        assert_eq!(st.full_grad_evals(), 3);
        assert!(st.maybe_update_reference(&obj, &x1, &mut rng));
        assert_eq!(&**st.w_ref(), &x1[..]);
        assert_eq!(st.full_grad_evals(), 6);
        st.validate_cache(&obj).unwrap();

        let mut st = EstimatorState::new(EstimatorKind::Lsvrg { p: 0.0 }, &obj, &x0, 1.0).unwrap();
        for _ in 0..1000 {
            assert!(!st.maybe_update_reference(&obj, &x1, &mut rng));
        }
        assert_eq!(&**st.w_ref(), &x0[..]);
    }

    #[test]
    fn sigma_k() {
        let obj = tiny();
        let sol = obj.solve_reference(1e-10).unwrap();
        let lexp = 2.5;
        let mut st = EstimatorState::new(EstimatorKind::Lsvrg { p: 0.5 }, &obj, &sol.x_star, lexp).unwrap();
        assert!(st.sigma_k_sq(sol.f_star).abs() < 1e-15);
        let x = vec![0.4, 0.4, -0.2, 0.0];
        st.apply_coin(&obj, &x, true);
        let expect = 2.0 * lexp * (obj.f_value(&x).unwrap() - sol.f_star);
        assert!((st.sigma_k_sq(sol.f_star) - expect).abs() <= 1e-12);
        let sgd = EstimatorState::new(EstimatorKind::SgdAs, &obj, &x, lexp).unwrap();
        assert_eq!(sgd.sigma_k_sq(sol.f_star), 0.0);
    }

    #[test]
    fn invalid_probability() {
        let obj = tiny();
        assert!(EstimatorState::new(EstimatorKind::Lsvrg { p: 1.5 }, &obj, &[0.0; 4], 1.0).is_err());
    }
}
