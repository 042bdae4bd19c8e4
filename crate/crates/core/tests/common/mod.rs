#![allow(dead_code)]

use ecsim::data::{synth_logreg, SynthSpec};
use ecsim::rng::{stream, Purpose, StreamRng};
use ecsim::{Loss, Objective, SparseRow, WorkerShard};
use rand::Rng;

/// Builds an objective from dense rows; `workers[i]` lists `(features, label)`.
pub fn dense_objective(workers: &[Vec<(Vec<f64>, f64)>], l2: f64, loss: Loss) -> Objective {
    let d = workers[0][0].0.len();
    let shards = workers
        .iter()
        .map(|rows| WorkerShard {
            rows: rows.iter().map(|(a, _)| SparseRow::from_dense(a)).collect(),
            labels: rows.iter().map(|(_, y)| *y).collect(),
        })
        .collect();
    Objective::new(shards, d, l2, loss).unwrap()
}

pub fn synth_objective(n: usize, m: usize, d: usize, seed: u64, l2: f64) -> Objective {
    let mut spec = SynthSpec::new(n, m, d, seed);
    spec.separation = 2.0;
    let data = synth_logreg(&spec).unwrap();
    Objective::new(data.shards, d, l2, Loss::Logistic).unwrap()
}

pub fn probe_rng(seed: u64) -> StreamRng {
    stream(seed, Purpose::Probe, 0)
}

pub fn random_point(rng: &mut StreamRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}
