mod common;

use common::probe_rng;
use ecsim::compressors::{
    absolute_delta, compress, decode, encode, estimate_second_moment, payload_bits, reconstruct, CompressedMessage,
    MomentMode,
};
use ecsim::vector::norm_sq;
use ecsim::{CompressorSpec, Error};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn apply(spec: CompressorSpec, x: &[f64]) -> Vec<f64> {
    reconstruct(&compress(&spec, x, &mut probe_rng(0)).unwrap()).into_vec()
}

#[test]
fn hard_threshold_example() {
    let msg = compress(
        &CompressorSpec::HardThreshold { lambda: 1.0 },
        &[0.5, 2.0, -1.5],
        &mut probe_rng(0),
    )
    .unwrap();
    assert_eq!(msg.entries(), &[(1, 2.0), (2, -1.5)]);
}

#[test]
fn hard_threshold_keeps_boundary() {
    let msg = compress(
        &CompressorSpec::HardThreshold { lambda: 1.0 },
        &[1.0, -1.0, 0.999],
        &mut probe_rng(0),
    )
    .unwrap();
    assert_eq!(msg.entries(), &[(0, 1.0), (1, -1.0)]);
}

#[test]
fn zero_threshold_is_identity() {
    let x = [0.3, -1e-300, 5.0, 0.0];
    assert_eq!(apply(CompressorSpec::HardThreshold { lambda: 0.0 }, &x), x.to_vec());
}

#[test]
fn topk_example_and_ties() {
    let msg = compress(&CompressorSpec::TopK { k: 2 }, &[3.0, -1.0, 2.0], &mut probe_rng(0)).unwrap();
    assert_eq!(msg.entries(), &[(0, 3.0), (2, 2.0)]);
    let msg = compress(
        &CompressorSpec::TopK { k: 2 },
        &[1.0, -2.0, 2.0, 1.0],
        &mut probe_rng(0),
    )
    .unwrap();
    assert_eq!(msg.entries(), &[(1, -2.0), (2, 2.0)]);
    let msg = compress(&CompressorSpec::TopK { k: 1 }, &[1.0, -1.0], &mut probe_rng(0)).unwrap();
    assert_eq!(msg.entries(), &[(0, 1.0)]);
}

#[test]
fn reconstruct_and_identity() {
    let msg = CompressedMessage::new(vec![(1, 2.0)], 3).unwrap();
    assert_eq!(&*reconstruct(&msg), &[0.0, 2.0, 0.0]);
    let x = [0.1, -7.25, 3e-8];
    assert_eq!(apply(CompressorSpec::Identity, &x), x.to_vec());
}

#[test]
fn k_larger_than_d_is_rejected() {
    let err = compress(&CompressorSpec::TopK { k: 4 }, &[1.0; 3], &mut probe_rng(0));
    assert!(matches!(err, Err(Error::Usage(_))));
    let err = compress(&CompressorSpec::RandK { k: 4 }, &[1.0; 3], &mut probe_rng(0));
    assert!(matches!(err, Err(Error::Usage(_))));
}

#[test]
fn deltas() {
    assert_eq!(
        absolute_delta(&CompressorSpec::HardThreshold { lambda: 2.0 }, 9),
        Some(6.0)
    );
    assert_eq!(absolute_delta(&CompressorSpec::Identity, 9), Some(0.0));
    assert_eq!(absolute_delta(&CompressorSpec::TopK { k: 1 }, 9), None);
    assert_eq!(absolute_delta(&CompressorSpec::RandK { k: 1 }, 9), None);
    assert_eq!(
        absolute_delta(&CompressorSpec::ScaledIntegerRounding { step: 0.5 }, 4),
        Some(1.0)
    );
}

#[test]
fn payload_sizes() {
    let two = CompressedMessage::new(vec![(0, 1.0), (5, 2.0)], 10).unwrap();
    assert_eq!(payload_bits(&two), 160);
    assert_eq!(payload_bits(&CompressedMessage::new(vec![], 10).unwrap()), 32);
    // d = 4, two entries: sparse 160 ties dense 160 and stays sparse
    let tie = CompressedMessage::new(vec![(0, 1.0), (3, 2.0)], 4).unwrap();
    assert_eq!(payload_bits(&tie), 160);
    assert_eq!(encode(&tie)[..4], 2u32.to_le_bytes());
    let full = CompressedMessage::new(vec![(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)], 4).unwrap();
    assert_eq!(payload_bits(&full), 160);
    let id = compress(&CompressorSpec::Identity, &[1.0; 7], &mut probe_rng(0)).unwrap();
    assert_eq!(payload_bits(&id), 32 * 7 + 32);
}

#[test]
fn rounding_lands_on_neighbouring_grid_points() {
    let spec = CompressorSpec::ScaledIntegerRounding { step: 0.25 };
    let mut rng = probe_rng(4);
    let x = [0.3, -0.6, 0.0, 1.0];
    let mut up = 0usize;
    let trials = 40_000;
    for _ in 0..trials {
        let c = reconstruct(&compress(&spec, &x, &mut rng).unwrap());
        assert!(c[0] == 0.25 || c[0] == 0.5);
        assert!(c[1] == -0.5 || c[1] == -0.75);
        assert_eq!(c[2], 0.0);
        assert_eq!(c[3], 1.0);
        up += (c[0] == 0.5) as usize;
    }
    // P(up) = 0.2; 3σ band
    let p = up as f64 / trials as f64;
    let sigma = (0.2f64 * 0.8 / trials as f64).sqrt();
    assert!((p - 0.2).abs() <= 3.0 * sigma, "{p}");
}

#[test]
fn ht_second_moment_on_uniform_cube() {
    let spec = CompressorSpec::HardThreshold { lambda: 1.0 };
    let est = estimate_second_moment(
        &spec,
        |r| (0..10).map(|_| r.random_range(-1.0..1.0)).collect(),
        100_000,
        MomentMode::Absolute,
        &mut probe_rng(5),
    )
    .unwrap();
    assert!(est.mean <= 10.0 + 3.0 * est.std_err);
}

#[test]
fn topk_relative_moment() {
    let gauss = |r: &mut ecsim::rng::StreamRng| (0..4).map(|_| r.sample(StandardNormal)).collect::<Vec<f64>>();
    let full = estimate_second_moment(
        &CompressorSpec::TopK { k: 4 },
        gauss,
        1000,
        MomentMode::Relative,
        &mut probe_rng(6),
    )
    .unwrap();
    assert_eq!(full.mean, 0.0);
    let one = estimate_second_moment(
        &CompressorSpec::TopK { k: 1 },
        gauss,
        100_000,
        MomentMode::Relative,
        &mut probe_rng(7),
    )
    .unwrap();
    assert!(one.mean <= 0.75);
}

#[test]
fn randk_scaled_identity_in_expectation() {
    // E‖C(x) − x‖² = (d/k − 1)‖x‖² for the scaled operator
    let (d, k) = (6usize, 2usize);
    let x: Vec<f64> = (0..d).map(|j| j as f64 - 2.5).collect();
    let est = estimate_second_moment(
        &CompressorSpec::RandK { k },
        |_| x.clone(),
        200_000,
        MomentMode::Absolute,
        &mut probe_rng(8),
    )
    .unwrap();
    let expect = (d as f64 / k as f64 - 1.0) * norm_sq(&x);
    assert!(
        (est.mean - expect).abs() <= 3.0 * est.std_err,
        "{} vs {}",
        est.mean,
        expect
    );
    // the unscaled operator (k/d)·C is (1 − k/d)-contractive in expectation
    let scale = k as f64 / d as f64;
    let mut rng = probe_rng(9);
    let trials = 100_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let c = reconstruct(&compress(&CompressorSpec::RandK { k }, &x, &mut rng).unwrap());
        let e: f64 = c.iter().zip(&x).map(|(c, x)| (scale * c - x).powi(2)).sum::<f64>() / norm_sq(&x);
        sum += e;
        sum_sq += e * e;
    }
    let mean = sum / trials as f64;
    let se = ((sum_sq / trials as f64 - mean * mean) / trials as f64).sqrt();
    assert!(mean <= 1.0 - scale + 3.0 * se);
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-10.0f64..10.0, Just(0.0), -1e-3f64..1e-3], d)
}

/// Entries sitting just inside and outside `±λ`.
fn boundary_vector(lambda: f64, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((any::<bool>(), 0u32..4, any::<bool>()), d).prop_map(move |spec| {
        spec.into_iter()
            .map(|(neg, ulps, inside)| {
                let mut v = lambda;
                for _ in 0..ulps {
                    v = if inside { v.next_down() } else { v.next_up() };
                }
                if neg {
                    -v
                } else {
                    v
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn ht_pointwise_bound(x in vector(12), lambda in 0.0f64..5.0) {
        let spec = CompressorSpec::HardThreshold { lambda };
        let c = apply(spec, &x);
        let delta = absolute_delta(&spec, 12).unwrap();
        let err: f64 = c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!(err <= delta * delta * (1.0 + 1e-12));
        for (&ci, &xi) in c.iter().zip(&x) {
            prop_assert!(ci == 0.0 || (ci == xi && xi.abs() >= lambda));
        }
    }

    #[test]
    fn ht_boundary_cases(x in boundary_vector(0.7, 9)) {
        let spec = CompressorSpec::HardThreshold { lambda: 0.7 };
        let c = apply(spec, &x);
        let err: f64 = c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let delta = absolute_delta(&spec, 9).unwrap();
        prop_assert!(err <= delta * delta * (1.0 + 1e-12));
        for (&ci, &xi) in c.iter().zip(&x) {
            if xi.abs() >= 0.7 { prop_assert_eq!(ci, xi); } else { prop_assert_eq!(ci, 0.0); }
        }
    }

    #[test]
    fn rounding_pointwise_bound(x in vector(10), step in 1e-3f64..2.0, seed in any::<u64>()) {
        let spec = CompressorSpec::ScaledIntegerRounding { step };
        let c = reconstruct(&compress(&spec, &x, &mut probe_rng(seed)).unwrap());
        let delta = absolute_delta(&spec, 10).unwrap();
        prop_assert!(c.dist_sq(&x) <= delta * delta * (1.0 + 1e-12));
    }

    #[test]
    fn topk_contractive_and_sparse(x in vector(8), k in 1usize..=8) {
        let spec = CompressorSpec::TopK { k };
        let msg = compress(&spec, &x, &mut probe_rng(0)).unwrap();
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(msg.nnz(), k.min(nnz));
        for &(j, v) in msg.entries() {
            prop_assert_eq!(v.to_bits(), x[j].to_bits());
        }
        let c = reconstruct(&msg);
        prop_assert!(c.dist_sq(&x) <= (1.0 - k as f64 / 8.0) * norm_sq(&x) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn randk_keeps_scaled_values(x in vector(8), k in 1usize..=8, seed in any::<u64>()) {
        let msg = compress(&CompressorSpec::RandK { k }, &x, &mut probe_rng(seed)).unwrap();
        prop_assert!(msg.nnz() <= k);
        for &(j, v) in msg.entries() {
            prop_assert_eq!(v.to_bits(), (x[j] * (8.0 / k as f64)).to_bits());
        }
    }

    #[test]
    fn encode_decode_round_trip(x in vector(16), lambda in 0.0f64..3.0) {
        let msg = compress(&CompressorSpec::HardThreshold { lambda }, &x, &mut probe_rng(0)).unwrap();
        let bytes = encode(&msg);
        prop_assert_eq!(bytes.len() as u64 * 8, payload_bits(&msg));
        let back = decode(&bytes, 16).unwrap();
        // a dense payload decodes to all d coordinates, so compare vectors
        let narrowed: Vec<f64> = reconstruct(&msg).iter().map(|v| *v as f32 as f64).collect();
        prop_assert_eq!(reconstruct(&back).into_vec(), narrowed);
    }
}

#[test]
fn decode_rejects_truncated() {
    let msg = CompressedMessage::new(vec![(1, 2.0), (3, 1.0)], 8).unwrap();
    let bytes = encode(&msg);
    assert!(matches!(decode(&bytes[..bytes.len() - 1], 8), Err(Error::Parse { .. })));
}
