//! Shared inputs for the benchmarks.

use ecsim::data::{synth_logreg, SynthSpec};
use ecsim::{Loss, Objective, ReferenceSolution};

/// A separable-ish synthetic logistic problem and its optimum.
pub fn instance(workers: usize, samples: usize, dim: usize) -> (Objective, ReferenceSolution) {
    let mut spec = SynthSpec::new(workers, samples, dim, 7);
    spec.separation = 2.0;
    let data = synth_logreg(&spec).expect("valid synthetic spec");
    let obj = Objective::new(data.shards, dim, 1e-3, Loss::Logistic).expect("valid objective");
    let reference = obj.solve_reference(1e-9).expect("reference solve converges");
    (obj, reference)
}

/// Deterministic dense vector with a spread of magnitudes.
pub fn wavy(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| ((j as f64) * 0.7).sin() * (1.0 + (j % 13) as f64))
        .collect()
}
