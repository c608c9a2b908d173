//! Hashed character n-gram featurizer and a linear projection encoder.
//!
//! A sentence is wrapped as `^sentence$`, every character n-gram of the
//! configured orders is hashed into one of `bucket_count` buckets, and the
//! bucket counts are projected by a `bucket_count x dim` weight matrix. The
//! projection is L2-normalized to give the sentence embedding.
//!
//! The n-gram hash is 64-bit FNV-1a over the n-gram's UTF-8 bytes, started
//! from `FNV_OFFSET ^ splitmix64(hash_seed)` and finished with a splitmix64
//! avalanche. The bucket is the hash modulo `bucket_count`. This function is
//! part of the on-disk contract: changing it invalidates saved encoders.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::{dot_f64, Embedding, EmbeddingMatrix, NORM_FLOOR};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const STUDENT_SEED_SALT: u64 = 0x5eed_5eed_0000_0001;

/// Students start from `U[-0.1, 0.1]`. Plain gradient descent on a
/// normalized output moves the direction at a rate of roughly
/// `step / ‖z‖²`, so a small initial scale keeps the default step useful.
pub const STUDENT_INIT_SCALE: f64 = 0.1;

pub const BEGIN_SENTINEL: char = '^';
pub const END_SENTINEL: char = '$';

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit hash of an n-gram.
pub fn ngram_hash(ngram: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for &b in ngram.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturizerConfig {
    pub ngram_orders: Vec<usize>,
    pub bucket_count: usize,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ngram_orders: vec![2, 3],
            bucket_count: 4096,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::config("orders", "need one or more orders, each >= 1"));
        }
        if self.bucket_count < 2 {
            return Err(Error::config("buckets", "must be >= 2"));
        }
        if self.bucket_count > u32::MAX as usize {
            return Err(Error::config("buckets", "must fit in 32 bits"));
        }
        Ok(())
    }
}

/// Sparse bucket counts, sorted by bucket index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatures {
    entries: Vec<(u32, f64)>,
}

impl SparseFeatures {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bucket: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(bucket as u32), |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, bucket_count: usize) -> Vec<f64> {
        let mut v = vec![0.0; bucket_count];
        for &(b, c) in &self.entries {
            v[b as usize] = c;
        }
        v
    }
}

/// Counts of hashed character n-grams over `^sentence$`.
pub fn featurize(sentence: &str, cfg: &FeaturizerConfig) -> SparseFeatures {
    if sentence.is_empty() {
        return SparseFeatures::default();
    }
    let chars: Vec<char> = std::iter::once(BEGIN_SENTINEL)
        .chain(sentence.chars())
        .chain(std::iter::once(END_SENTINEL))
        .collect();
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut gram = String::new();
    for &n in &cfg.ngram_orders {
        if n == 0 || n > chars.len() {
            continue;
        }
        for window in chars.windows(n) {
            gram.clear();
            gram.extend(window);
            let bucket = (ngram_hash(&gram, cfg.hash_seed) % cfg.bucket_count as u64) as u32;
            *counts.entry(bucket).or_default() += 1;
        }
    }
    SparseFeatures {
        entries: counts.into_iter().map(|(b, c)| (b, c as f64)).collect(),
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Forward {
    pub unit: Vec<f64>,
    pub norm: f64,
}

/// Gradient with respect to the weight matrix, stored by touched bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrad {
    dim: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl WeightGrad {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, bucket: usize, col: usize) -> f64 {
        self.rows
            .get(&(bucket as u32))
            .map(|r| r[col])
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|&g| g == 0.0)
    }

    /// Adds `features ⊗ dz` (outer product).
    pub(crate) fn add_outer(&mut self, features: &SparseFeatures, dz: &[f64]) {
        for &(b, c) in features.entries() {
            let row = self.rows.entry(b).or_insert_with(|| vec![0.0; self.dim]);
            for (g, d) in row.iter_mut().zip(dz) {
                *g += c * d;
            }
        }
    }

    pub fn to_dense(&self, bucket_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; bucket_count * self.dim];
        for (&b, row) in &self.rows {
            out[b as usize * self.dim..(b as usize + 1) * self.dim].copy_from_slice(row);
        }
        out
    }
}

/// Linear encoder over hashed features. Frozen instances act as teachers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    featurizer: FeaturizerConfig,
    dim: usize,
    weights: Vec<f64>,
    frozen: bool,
}

impl EncoderParams {
    pub fn from_weights(
        featurizer: FeaturizerConfig,
        dim: usize,
        weights: Vec<f64>,
        frozen: bool,
    ) -> Result<Self> {
        featurizer.validate()?;
        if dim < 2 {
            return Err(Error::config("dim", "must be >= 2"));
        }
        if weights.len() != featurizer.bucket_count * dim {
            return Err(Error::DimMismatch {
                left: weights.len(),
                right: featurizer.bucket_count * dim,
            });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            featurizer,
            dim,
            weights,
            frozen,
        })
    }

    /// Weights drawn uniformly from `[-1, 1]` by a seeded ChaCha8 stream.
    pub fn random(featurizer: FeaturizerConfig, dim: usize, seed: u64, frozen: bool) -> Result<Self> {
        Self::random_scaled(featurizer, dim, seed, 1.0, frozen)
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random_scaled(
        featurizer: FeaturizerConfig,
        dim: usize,
        seed: u64,
        scale: f64,
        frozen: bool,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = featurizer.bucket_count * dim;
        let weights = (0..n).map(|_| scale * rng.random_range(-1.0..=1.0)).collect();
        Self::from_weights(featurizer, dim, weights, frozen)
    }

    /// A trainable encoder with the teacher's shape and a different hash seed.
    pub fn student_for(teacher: &EncoderParams, seed: u64) -> Result<Self> {
        let featurizer = FeaturizerConfig {
            hash_seed: teacher.featurizer.hash_seed ^ STUDENT_SEED_SALT,
            ..teacher.featurizer.clone()
        };
        Self::random_scaled(featurizer, teacher.dim, seed, STUDENT_INIT_SCALE, false)
    }

    pub fn featurizer(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_count(&self) -> usize {
        self.featurizer.bucket_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, bucket: usize, col: usize) -> f64 {
        self.weights[bucket * self.dim + col]
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_weight(&mut self, bucket: usize, col: usize, value: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenEncoder);
        }
        self.weights[bucket * self.dim + col] = value;
        Ok(())
    }

    pub fn featurize(&self, sentence: &str) -> SparseFeatures {
        featurize(sentence, &self.featurizer)
    }

    /// Unnormalized projection `weightsᵀ · features`.
    pub fn project(&self, features: &SparseFeatures) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for &(b, c) in features.entries() {
            let row = &self.weights[b as usize * self.dim..(b as usize + 1) * self.dim];
            for (zi, w) in z.iter_mut().zip(row) {
                *zi += c * w;
            }
        }
        z
    }

    pub fn forward(&self, features: &SparseFeatures) -> Result<Forward> {
        let z = self.project(features);
        let norm = dot_f64(&z, &z).sqrt();
        if norm <= NORM_FLOOR {
            return Err(Error::ZeroVector { norm });
        }
        Ok(Forward {
            unit: z.iter().map(|v| v / norm).collect(),
            norm,
        })
    }

    pub fn encode_f64(&self, sentence: &str) -> Result<Vec<f64>> {
        Ok(self.forward(&self.featurize(sentence))?.unit)
    }

    pub fn encode(&self, sentence: &str) -> Result<Embedding> {
        Embedding::from_f64(&self.encode_f64(sentence)?)
    }

    /// Encodes every sentence in parallel; row order follows the input.
    pub fn encode_batch<S: AsRef<str> + Sync>(&self, sentences: &[S]) -> Result<EmbeddingMatrix> {
        let encoded: Vec<Result<Embedding>> = sentences
            .par_iter()
            .map(|s| self.encode(s.as_ref()))
            .collect();
        let mut m = EmbeddingMatrix::new(self.dim)?;
        for (i, e) in encoded.into_iter().enumerate() {
            let e = e.map_err(|err| Error::at_pair(i, err))?;
            m.push(e.as_slice())?;
        }
        Ok(m)
    }

    /// Gradient of `upstream · normalize(weightsᵀ f)` with respect to the
    /// weights: `f ⊗ (I − qqᵀ) upstream / ‖z‖`.
    pub(crate) fn backprop(
        &self,
        features: &SparseFeatures,
        fwd: &Forward,
        upstream: &[f64],
        into: &mut WeightGrad,
    ) {
        let radial = dot_f64(&fwd.unit, upstream);
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&fwd.unit)
            .map(|(g, q)| (g - radial * q) / fwd.norm)
            .collect();
        into.add_outer(features, &dz);
    }

    pub fn backprop_encode(&self, sentence: &str, upstream: &[f64]) -> Result<WeightGrad> {
        if self.frozen {
            return Err(Error::FrozenEncoder);
        }
        if upstream.len() != self.dim {
            return Err(Error::DimMismatch {
                left: upstream.len(),
                right: self.dim,
            });
        }
        let features = self.featurize(sentence);
        let fwd = self.forward(&features)?;
        let mut grad = WeightGrad::zeros(self.dim);
        self.backprop(&features, &fwd, upstream, &mut grad);
        Ok(grad)
    }

    /// `weights -= step * grad`.
    pub fn apply_gradient(&mut self, grad: &WeightGrad, step: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenEncoder);
        }
        if grad.dim != self.dim {
            return Err(Error::DimMismatch {
                left: grad.dim,
                right: self.dim,
            });
        }
        for (&b, row) in &grad.rows {
            let w = &mut self.weights[b as usize * self.dim..(b as usize + 1) * self.dim];
            for (wi, g) in w.iter_mut().zip(row) {
                *wi -= step * g;
            }
        }
        Ok(())
    }

    /// Weights as a `bucket_count x dim` matrix, rounded to `f32`.
    pub fn weight_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_flat(self.dim, self.weights.iter().map(|&w| w as f32).collect())
    }

    /// Sidecar header: `dim=<d> buckets=<b> orders=<o,..> seed=<s> frozen=<0|1>`.
    pub fn header_line(&self) -> String {
        let orders: Vec<String> = self
            .featurizer
            .ngram_orders
            .iter()
            .map(|o| o.to_string())
            .collect();
        format!(
            "dim={} buckets={} orders={} seed={} frozen={}",
            self.dim,
            self.featurizer.bucket_count,
            orders.join(","),
            self.featurizer.hash_seed,
            u8::from(self.frozen)
        )
    }

    /// Rebuilds an encoder from a sidecar header and its weight matrix.
    /// Lines starting with `#` are ignored; the first other line is the header.
    pub fn from_header_and_weights(header: &str, weights: &EmbeddingMatrix) -> Result<Self> {
        let (line_no, line) = header
            .lines()
            .enumerate()
            .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .ok_or(Error::Format {
                line: 1,
                reason: "missing encoder header".into(),
            })?;
        let bad = |reason: String| Error::Format {
            line: line_no + 1,
            reason,
        };
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{tok}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse::<u64>()
                .map_err(|e| bad(format!("`{k}`: {e}")))
        };
        let dim = num("dim")? as usize;
        let buckets = num("buckets")? as usize;
        let seed = num("seed")?;
        let orders = get("orders")?
            .split(',')
            .map(|o| o.parse::<usize>().map_err(|e| bad(format!("`orders`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let frozen = match get("frozen")? {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("`frozen` must be 0 or 1, got `{other}`"))),
        };
        if weights.dim() != dim || weights.rows() != buckets {
            return Err(bad(format!(
                "header says {buckets}x{dim} but weights are {}x{}",
                weights.rows(),
                weights.dim()
            )));
        }
        let featurizer = FeaturizerConfig {
            ngram_orders: orders,
            bucket_count: buckets,
            hash_seed: seed,
        };
        Self::from_weights(
            featurizer,
            dim,
            weights.as_flat().iter().map(|&w| w as f64).collect(),
            frozen,
        )
    }
}
