//! Dataset ingestion and partitioning.
//!
//! LIBSVM text (`<label> <index>:<value> ...`, 1-based ascending indices,
//! optionally gzip-compressed) is parsed into sparse rows, shuffled with a
//! seeded Fisher-Yates pass, truncated to a multiple of the worker count and
//! cut into contiguous equal shards. Synthetic logistic-regression instances
//! are generated directly per worker.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha1::{Digest, Sha1};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// A sparse feature row with strictly increasing 0-based column indices and no stored zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRow {
    /// Builds a row from `(index, value)` pairs; zeros are dropped.
    ///
    /// Panics if indices are not strictly increasing.
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut row = SparseRow::default();
        for (i, v) in entries {
            if let Some(&last) = row.indices.last() {
                assert!(i > last, "sparse row indices must be strictly increasing");
            }
            if v != 0.0 {
                row.indices.push(i);
                row.values.push(v);
            }
        }
        row
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseRow::new(values.iter().copied().enumerate())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Largest index + 1, or 0 for an empty row.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * x[i]).sum()
    }

    /// `out += alpha * row`
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.axpy_into(1.0, &mut out);
        out
    }

    pub fn scaled(&self, factor: f64) -> SparseRow {
        SparseRow::new(self.indices.iter().copied().zip(self.values.iter().map(|v| v * factor)))
    }
}

/// One worker's local samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerShard {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
}

impl WorkerShard {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A pooled labelled dataset prior to partitioning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
    pub d: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scales every nonzero row to unit Euclidean norm.
    pub fn normalize_rows(&mut self) {
        for row in &mut self.rows {
            let norm = row.norm_sq().sqrt();
            if norm > 0.0 {
                *row = row.scaled(1.0 / norm);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub total_samples: usize,
    pub d: usize,
    /// Number of samples kept so that it is a multiple of the worker count.
    pub truncation: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelMap {
    /// `label > 0 → +1`, otherwise `−1` (handles ±1 and 0/1 encodings).
    #[default]
    Binary,
    /// Keep the parsed value (regression targets).
    Raw,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Overrides the dimension; must be at least the largest index seen.
    pub dim: Option<usize>,
    pub labels: LabelMap,
}

/// Parses LIBSVM text. Blank lines are skipped and `#` starts a comment.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<Dataset> {
    let mut data = Dataset::default();
    let mut max_dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: lineno, message };

        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| perr(format!("label `{label_tok}` is not a number")))?;
        if !label.is_finite() {
            return Err(perr(format!("label `{label_tok}` is not finite")));
        }
        let label = match opts.labels {
            LabelMap::Binary if label > 0.0 => 1.0,
            LabelMap::Binary => -1.0,
            LabelMap::Raw => label,
        };

        let mut entries = Vec::new();
        let mut prev: Option<usize> = None;
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("feature `{tok}` is not of the form index:value")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| perr(format!("feature index `{idx_s}` is not a positive integer")))?;
            if idx == 0 {
                return Err(perr("feature indices are 1-based; found 0".into()));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| perr(format!("feature value `{val_s}` is not a number")))?;
            if !val.is_finite() {
                return Err(perr(format!("feature value `{val_s}` is not finite")));
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(perr(format!(
                        "feature indices must be strictly ascending; {idx} follows {p}"
                    )));
                }
            }
            if let Some(d) = opts.dim {
                if idx > d {
                    return Err(perr(format!("feature index {idx} exceeds dimension {d}")));
                }
            }
            prev = Some(idx);
            max_dim = max_dim.max(idx);
            entries.push((idx - 1, val));
        }
        data.rows.push(SparseRow::new(entries));
        data.labels.push(label);
    }
    data.d = opts.dim.unwrap_or(max_dim);
    Ok(data)
}

/// Writes LIBSVM text that [`parse_libsvm`] reads back to identical rows and labels.
pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    let mut line = String::new();
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        line.clear();
        if label == 1.0 {
            line.push_str("+1");
        } else if label == -1.0 {
            line.push_str("-1");
        } else {
            let _ = write!(line, "{label}");
        }
        for (&i, &v) in row.indices().iter().zip(row.values()) {
            let _ = write!(line, " {}:{}", i + 1, v);
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Reads a whole file, transparently gunzipping when it carries the gzip magic bytes.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut decoded = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut decoded)
            .map_err(|e| Error::io(path, e))?;
        Ok(decoded)
    } else {
        Ok(raw)
    }
}

/// Git-style blob hash (`sha1("blob <len>\0" ++ bytes)`), lowercase hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Shuffles, truncates to a multiple of `n` and splits into `n` contiguous shards.
pub fn partition(data: &Dataset, n: usize, seed: u64) -> Result<(Vec<WorkerShard>, usize)> {
    if n == 0 {
        return Err(Error::usage("number of workers must be positive"));
    }
    let count = data.len();
    if count < n {
        return Err(Error::usage(format!(
            "{count} samples cannot be split across {n} workers"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = rng::stream(seed, Purpose::Shuffle, 0);
    for i in (1..count).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let m = count / n;
    let kept = m * n;
    let shards = order[..kept]
        .chunks(m)
        .map(|block| WorkerShard {
            rows: block.iter().map(|&k| data.rows[k].clone()).collect(),
            labels: block.iter().map(|&k| data.labels[k]).collect(),
        })
        .collect();
    Ok((shards, kept))
}

/// Parameters of a synthetic logistic-regression instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    /// Inverse label-noise scale: labels are `sign(⟨a,u⟩ + ε/separation)`, ε ~ N(0,1).
    /// `f64::INFINITY` gives noiseless labels.
    pub separation: f64,
    /// Rows per worker whose features are multiplied by `heavy_scale`
    /// (spreads the per-sample smoothness constants).
    pub heavy_rows: usize,
    pub heavy_scale: f64,
    /// Each row is pushed by `y·margin` along the hidden direction (scaled with the row).
    pub margin: f64,
}

impl SynthSpec {
    pub fn new(n: usize, m: usize, d: usize, seed: u64) -> Self {
        SynthSpec {
            n,
            m,
            d,
            seed,
            separation: f64::INFINITY,
            heavy_rows: 0,
            heavy_scale: 1.0,
            margin: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub shards: Vec<WorkerShard>,
    pub true_direction: Vec<f64>,
}

/// Generates standard-normal feature rows with labels from a hidden unit direction.
pub fn synth_logreg(spec: &SynthSpec) -> Result<SynthData> {
    let SynthSpec { n, m, d, .. } = *spec;
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::usage("synthetic instance needs n, m, d >= 1"));
    }
    if spec.heavy_rows > m {
        return Err(Error::usage("heavy_rows cannot exceed samples per worker"));
    }
    if !(spec.separation > 0.0) || !(spec.heavy_scale > 0.0) || !spec.heavy_scale.is_finite() {
        return Err(Error::usage("separation and heavy_scale must be positive"));
    }
    if !(spec.margin >= 0.0) || !spec.margin.is_finite() {
        return Err(Error::usage("margin must be finite and nonnegative"));
    }

    let mut rng = rng::stream(spec.seed, Purpose::Synth, 0);
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= norm);
    }

    let mut shards = Vec::with_capacity(n);
    for _ in 0..n {
        // choose heavy positions by a partial Fisher-Yates over the shard
        let mut slots: Vec<usize> = (0..m).collect();
        for t in 0..spec.heavy_rows {
            let j = rng.random_range(t..m);
            slots.swap(t, j);
        }
        let mut heavy = vec![false; m];
        for &s in &slots[..spec.heavy_rows] {
            heavy[s] = true;
        }

        let mut shard = WorkerShard::default();
        for &is_heavy in &heavy {
            let scale = if is_heavy { spec.heavy_scale } else { 1.0 };
            let mut a: Vec<f64> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let score = crate::vector::dot(&a, &u)
                + if spec.separation.is_finite() {
                    noise / spec.separation
                } else {
                    0.0
                };
            let y = if score >= 0.0 { 1.0 } else { -1.0 };
            if spec.margin > 0.0 {
                for (aj, uj) in a.iter_mut().zip(&u) {
                    *aj += y * spec.margin * scale * uj;
                }
            }
            shard.labels.push(y);
            shard.rows.push(SparseRow::from_dense(&a));
        }
        shards.push(shard);
    }
    Ok(SynthData {
        shards,
        true_direction: u,
    })
}

/// Where a dataset comes from: a LIBSVM file or a `synth:` descriptor.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    File(PathBuf),
    /// Synthetic instance; the worker count is supplied at load time.
    Synth {
        m: usize,
        d: usize,
        seed: u64,
        separation: f64,
        heavy_rows: usize,
        heavy_scale: f64,
        margin: f64,
    },
}

/// Environment variable naming the directory searched for relative dataset paths.
pub const DATA_DIR_ENV: &str = "ECSIM_DATA_DIR";

impl DatasetSource {
    /// Parses `synth:m=50,d=20,seed=1,sep=4,heavy=1,scale=10,margin=0.5` or a file path.
    ///
    /// Synthetic keys: `m`, `d` (required), `seed` (0), `sep` (inf),
    /// `heavy` (0), `scale` (1), `margin` (0).
    pub fn parse(desc: &str) -> Result<Self> {
        let Some(rest) = desc.strip_prefix("synth:") else {
            return Ok(DatasetSource::File(PathBuf::from(desc)));
        };
        let (mut m, mut d) = (None, None);
        let mut seed = 0u64;
        let mut separation = f64::INFINITY;
        let mut heavy_rows = 0usize;
        let mut heavy_scale = 1.0;
        let mut margin = 0.0;
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("synth descriptor entry `{kv}` is not key=value")))?;
            let bad = || Error::usage(format!("synth descriptor: invalid value `{v}` for `{k}`"));
            match k.trim() {
                "m" => m = Some(v.parse().map_err(|_| bad())?),
                "d" => d = Some(v.parse().map_err(|_| bad())?),
                "seed" => seed = v.parse().map_err(|_| bad())?,
                "sep" => separation = v.parse().map_err(|_| bad())?,
                "heavy" => heavy_rows = v.parse().map_err(|_| bad())?,
                "scale" => heavy_scale = v.parse().map_err(|_| bad())?,
                "margin" => margin = v.parse().map_err(|_| bad())?,
                other => return Err(Error::usage(format!("synth descriptor: unknown key `{other}`"))),
            }
        }
        Ok(DatasetSource::Synth {
            m: m.ok_or_else(|| Error::usage("synth descriptor needs m="))?,
            d: d.ok_or_else(|| Error::usage("synth descriptor needs d="))?,
            seed,
            separation,
            heavy_rows,
            heavy_scale,
            margin,
        })
    }

    /// Resolves a relative file path against the working directory, then `ECSIM_DATA_DIR`.
    pub fn resolve(&self) -> Result<DatasetSource> {
        match self {
            DatasetSource::File(p) => {
                if p.exists() {
                    return Ok(self.clone());
                }
                if p.is_relative() {
                    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
                        let candidate = Path::new(&dir).join(p);
                        if candidate.exists() {
                            return Ok(DatasetSource::File(candidate));
                        }
                    }
                }
                Err(Error::io(
                    p.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                ))
            }
            synth => Ok(synth.clone()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DatasetSource::File(p) => p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSource::Synth { m, d, seed, .. } => format!("synth-m{m}-d{d}-s{seed}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub dim: Option<usize>,
    pub normalize: bool,
    pub labels: LabelMap,
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub shards: Vec<WorkerShard>,
    pub d: usize,
    pub manifest: DatasetManifest,
    pub content_hash: String,
}

/// Loads and partitions a dataset across `n` workers.
pub fn load(source: &DatasetSource, n: usize, seed: u64, opts: &LoadOptions) -> Result<LoadedData> {
    let source = source.resolve()?;
    match &source {
        DatasetSource::File(path) => {
            let bytes = read_maybe_gzip(path)?;
            let hash = content_hash(&bytes);
            let mut data = parse_libsvm(
                &bytes[..],
                &ParseOptions {
                    dim: opts.dim,
                    labels: opts.labels,
                },
            )?;
            if opts.normalize {
                data.normalize_rows();
            }
            let (shards, kept) = partition(&data, n, seed)?;
            Ok(LoadedData {
                shards,
                d: data.d,
                manifest: DatasetManifest {
                    name: source.name(),
                    total_samples: data.len(),
                    d: data.d,
                    truncation: kept,
                },
                content_hash: hash,
            })
        }
        DatasetSource::Synth {
            m,
            d,
            seed: dseed,
            separation,
            heavy_rows,
            heavy_scale,
            margin,
        } => {
            let synth = synth_logreg(&SynthSpec {
                n,
                m: *m,
                d: *d,
                seed: *dseed,
                separation: *separation,
                heavy_rows: *heavy_rows,
                heavy_scale: *heavy_scale,
                margin: *margin,
            })?;
            let mut shards = synth.shards;
            if opts.normalize {
                for shard in &mut shards {
                    let mut tmp = Dataset {
                        rows: std::mem::take(&mut shard.rows),
                        labels: Vec::new(),
                        d: *d,
                    };
                    tmp.normalize_rows();
                    shard.rows = tmp.rows;
                }
            }
            let pooled = Dataset {
                rows: shards.iter().flat_map(|s| s.rows.iter().cloned()).collect(),
                labels: shards.iter().flat_map(|s| s.labels.iter().copied()).collect(),
                d: *d,
            };
            let mut bytes = Vec::new();
            write_libsvm(&pooled, &mut bytes).expect("writing to a Vec cannot fail");
            Ok(LoadedData {
                shards,
                d: *d,
                manifest: DatasetManifest {
                    name: source.name(),
                    total_samples: n * m,
                    d: *d,
                    truncation: n * m,
                },
                content_hash: content_hash(&bytes),
            })
        }
    }
}
