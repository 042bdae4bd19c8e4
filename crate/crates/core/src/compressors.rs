//! Compression operators and wire accounting.
//!
//! Absolute compressors satisfy `E‖C(x) − x‖² ≤ Δ²` for every `x`
//! (hard-threshold, stochastic integer rounding, identity). TopK and RandK are
//! kept as contractive comparators.
//!
//! Messages are sparse `(index, value)` lists. Their cost is the cheaper of two
//! encodings, both little-endian:
//!
//! * sparse: `u32 count` followed by `count × (u32 index, f32 value)`: `64·nnz + 32` bits;
//! * dense: `u32 count = d` followed by `d × f32`: `32·d + 32` bits.
//!
//! Ties go to the sparse encoding. A sparse message never has `count == d`
//! when it is the cheaper choice, so the count word alone identifies the layout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::vector::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorSpec {
    Identity,
    /// Keeps coordinates with `|x_j| >= lambda`.
    HardThreshold {
        lambda: f64,
    },
    /// Keeps the `k` largest magnitudes, ties to the lower index.
    TopK {
        k: usize,
    },
    /// Keeps `k` uniformly chosen coordinates scaled by `d/k`.
    RandK {
        k: usize,
    },
    /// Stochastic rounding to the grid `step·ℤ`.
    ScaledIntegerRounding {
        step: f64,
    },
}

impl CompressorSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            CompressorSpec::Identity => Ok(()),
            CompressorSpec::HardThreshold { lambda } => {
                if lambda >= 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::usage(format!(
                        "hard-threshold λ must be finite and >= 0, got {lambda}"
                    )))
                }
            }
            CompressorSpec::TopK { k } | CompressorSpec::RandK { k } => {
                if k == 0 {
                    Err(Error::usage("k must be at least 1"))
                } else if k > d {
                    Err(Error::usage(format!("k = {k} exceeds dimension {d}")))
                } else {
                    Ok(())
                }
            }
            CompressorSpec::ScaledIntegerRounding { step } => {
                if step > 0.0 && step.is_finite() {
                    Ok(())
                } else {
                    Err(Error::usage(format!(
                        "rounding step must be finite and > 0, got {step}"
                    )))
                }
            }
        }
    }

    /// Whether `compress` consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            CompressorSpec::RandK { .. } | CompressorSpec::ScaledIntegerRounding { .. }
        )
    }

    /// Pointwise bound on `|C(x)_j − x_j|` for absolute compressors.
    pub fn coordinate_bound(&self) -> Option<f64> {
        match *self {
            CompressorSpec::Identity => Some(0.0),
            CompressorSpec::HardThreshold { lambda } => Some(lambda),
            CompressorSpec::ScaledIntegerRounding { step } => Some(step),
            CompressorSpec::TopK { .. } | CompressorSpec::RandK { .. } => None,
        }
    }

    /// Short label used in file names and plot legends.
    pub fn label(&self) -> String {
        match *self {
            CompressorSpec::Identity => "id".into(),
            CompressorSpec::HardThreshold { lambda } => format!("ht{lambda:.4e}"),
            CompressorSpec::TopK { k } => format!("top{k}"),
            CompressorSpec::RandK { k } => format!("rand{k}"),
            CompressorSpec::ScaledIntegerRounding { step } => format!("round{step:.4e}"),
        }
    }
}

/// Sparse wire representation; indices strictly increasing and `< d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMessage {
    entries: Vec<(usize, f64)>,
    d: usize,
}

impl CompressedMessage {
    pub fn new(entries: Vec<(usize, f64)>, d: usize) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::usage("message indices must be strictly increasing"));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last >= d {
                return Err(Error::usage(format!("message index {last} out of range for d = {d}")));
            }
        }
        Ok(CompressedMessage { entries, d })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Applies the compressor. Deterministic kinds leave `rng` untouched.
pub fn compress<R: Rng + ?Sized>(spec: &CompressorSpec, x: &[f64], rng: &mut R) -> Result<CompressedMessage> {
    let d = x.len();
    spec.validate(d)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("cannot compress a non-finite vector"));
    }
    let entries = match *spec {
        CompressorSpec::Identity => x.iter().copied().enumerate().collect(),
        CompressorSpec::HardThreshold { lambda } => x
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0 && v.abs() >= lambda)
            .collect(),
        CompressorSpec::TopK { k } => top_k(x, k),
        CompressorSpec::RandK { k } => {
            let scale = d as f64 / k as f64;
            let mut picked = rand::seq::index::sample(rng, d, k).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .filter(|&j| x[j] != 0.0)
                .map(|j| (j, x[j] * scale))
                .collect()
        }
        CompressorSpec::ScaledIntegerRounding { step } => {
            let mut out = Vec::new();
            for (j, &v) in x.iter().enumerate() {
                let u = v / step;
                let lo = u.floor();
                let frac = u - lo;
                let level = if frac > 0.0 && rng.random::<f64>() < frac {
                    lo + 1.0
                } else {
                    lo
                };
                if level != 0.0 {
                    out.push((j, level * step));
                }
            }
            out
        }
    };
    Ok(CompressedMessage { entries, d })
}

fn top_k(x: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..x.len()).filter(|&j| x[j] != 0.0).collect();
    if order.len() > k {
        let cmp = |a: &usize, b: &usize| x[*b].abs().total_cmp(&x[*a].abs()).then(a.cmp(b));
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    order.into_iter().map(|j| (j, x[j])).collect()
}

/// Dense vector with the message entries and zeros elsewhere.
pub fn reconstruct(msg: &CompressedMessage) -> DenseVector {
    let mut out = DenseVector::zeros(msg.d);
    for &(j, v) in &msg.entries {
        out[j] = v;
    }
    out
}

/// `Δ` such that `E‖C(x) − x‖² <= Δ²` for all `x`, or `None` for contractive kinds.
///
/// Rounding returns the pointwise bound `step·√d`; in expectation stochastic
/// rounding also satisfies the tighter `step·√d / 2`.
pub fn absolute_delta(spec: &CompressorSpec, d: usize) -> Option<f64> {
    spec.coordinate_bound().map(|c| c * (d as f64).sqrt())
}

const WORD: u64 = 32;

/// Bits needed to send the message in the cheaper of the sparse and dense encodings.
pub fn payload_bits(msg: &CompressedMessage) -> u64 {
    let sparse = 2 * WORD * msg.nnz() as u64 + WORD;
    let dense = WORD * msg.d as u64 + WORD;
    sparse.min(dense)
}

fn uses_dense(msg: &CompressedMessage) -> bool {
    let sparse = 2 * WORD * msg.nnz() as u64 + WORD;
    let dense = WORD * msg.d as u64 + WORD;
    dense < sparse
}

/// Serialises the message (values narrowed to `f32`). `bytes.len() * 8 == payload_bits(msg)`.
pub fn encode(msg: &CompressedMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity((payload_bits(msg) / 8) as usize);
    if uses_dense(msg) {
        out.extend_from_slice(&(msg.d as u32).to_le_bytes());
        for v in reconstruct(msg).iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&(msg.nnz() as u32).to_le_bytes());
        for &(j, v) in &msg.entries {
            out.extend_from_slice(&(j as u32).to_le_bytes());
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Inverse of [`encode`] for a known dimension `d`.
pub fn decode(bytes: &[u8], d: usize) -> Result<CompressedMessage> {
    let word = |k: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|s| s.try_into().expect("slice of length 4"))
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("message truncated at word {k}"),
            })
    };
    let count = u32::from_le_bytes(word(0)?) as usize;
    let expected_words = if count == d && d > 0 { 1 + d } else { 1 + 2 * count };
    if bytes.len() != 4 * expected_words {
        return Err(Error::Parse {
            line: 0,
            message: format!("message has {} bytes, expected {}", bytes.len(), 4 * expected_words),
        });
    }
    let entries = if count == d && d > 0 {
        (0..d)
            .map(|j| Ok((j, f32::from_le_bytes(word(1 + j)?) as f64)))
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..count)
            .map(|k| {
                let j = u32::from_le_bytes(word(1 + 2 * k)?) as usize;
                let v = f32::from_le_bytes(word(2 + 2 * k)?) as f64;
                Ok((j, v))
            })
            .collect::<Result<Vec<_>>>()?
    };
    CompressedMessage::new(entries, d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentMode {
    /// `‖C(x) − x‖²`
    Absolute,
    /// `‖C(x) − x‖² / ‖x‖²` (trials with `x = 0` contribute 0)
    Relative,
    /// `‖C(x) − x‖² − factor·‖x‖²`, for paired checks of `E‖C(x)−x‖² <= factor·E‖x‖²`
    Excess { factor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub trials: usize,
}

/// Monte-Carlo estimate of the compression error's second moment.
///
/// `draw_x` produces the test vectors; the same `rng` feeds both the vector
/// distribution and stochastic compressors.
pub fn estimate_second_moment<R, F>(
    spec: &CompressorSpec,
    mut draw_x: F,
    trials: usize,
    mode: MomentMode,
    rng: &mut R,
) -> Result<MomentEstimate>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<f64>,
{
    if trials == 0 {
        return Err(Error::usage("need at least one trial"));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let x = draw_x(rng);
        let c = reconstruct(&compress(spec, &x, rng)?);
        let err = c.dist_sq(&x);
        let xn = crate::vector::norm_sq(&x);
        let sample = match mode {
            MomentMode::Absolute => err,
            MomentMode::Relative if xn > 0.0 => err / xn,
            MomentMode::Relative => 0.0,
            MomentMode::Excess { factor } => err - factor * xn,
        };
        sum += sample;
        sum_sq += sample * sample;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 {
        ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MomentEstimate {
        mean,
        std_err: (var / t).sqrt(),
        trials,
    })
}
