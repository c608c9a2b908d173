//! Queue-based contrastive distillation.
//!
//! A frozen teacher embeds target sentences; a trainable student embeds the
//! aligned source sentences. Each student embedding `q` is pulled toward its
//! teacher target `k+` and pushed away from negatives `k_i`, which come from a
//! FIFO queue of earlier teacher targets (or, for comparison, from the other
//! targets of the same batch). The loss is softmax cross-entropy over the
//! logits `[q·k+, q·k_1, ..] / τ`, so the positive term is part of the
//! normalizer.
//!
//! With pre-filtering enabled, queue entries whose cosine to `k+` is at least
//! `σ` are dropped for that sample. Every sample in the batch is then cut down
//! to the same number `M` of negatives (the batch minimum) by uniform random
//! subsampling, so losses stay comparable across the batch.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{count_tokens, SentencePair};
use crate::embedding::{dot_f64, unit_f64, Embedding, EmbeddingMatrix};
use crate::encoder::{splitmix64, EncoderParams, SparseFeatures, WeightGrad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativesSource {
    Queue,
    InBatch,
}

impl fmt::Display for NegativesSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Queue => "queue",
            Self::InBatch => "in-batch",
        })
    }
}

impl FromStr for NegativesSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "queue" => Ok(Self::Queue),
            "in-batch" | "in_batch" | "inbatch" => Ok(Self::InBatch),
            _ => Err(Error::config("negatives", format!("expected queue or in-batch, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub filter_threshold: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub negatives_source: NegativesSource,
    pub shuffle: bool,
    pub prefilter_enabled: bool,
    pub step_size: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            filter_threshold: 0.9,
            queue_capacity: 4096,
            batch_size: 32,
            negatives_source: NegativesSource::Queue,
            shuffle: true,
            prefilter_enabled: false,
            step_size: 0.05,
            epochs: 10,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Length-sorted batches and pre-filtering on top of the defaults.
    pub fn filtered() -> Self {
        Self {
            shuffle: false,
            prefilter_enabled: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("tau", "must be > 0"));
        }
        if !(self.filter_threshold > 0.0 && self.filter_threshold <= 1.5) {
            return Err(Error::config("sigma", "must be in (0, 1.5]"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("queue_size", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.negatives_source == NegativesSource::InBatch && self.batch_size < 2 {
            return Err(Error::config("batch_size", "in-batch negatives need batch_size >= 2"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size", "must be > 0"));
        }
        Ok(())
    }

    /// Flat `key=value` rendering, used to stamp output artifacts.
    pub fn describe(&self) -> String {
        format!(
            "tau={} sigma={} queue_size={} batch_size={} negatives={} shuffle={} prefilter={} step_size={} epochs={} seed={}",
            self.temperature,
            self.filter_threshold,
            self.queue_capacity,
            self.batch_size,
            self.negatives_source,
            on_off(self.shuffle),
            on_off(self.prefilter_enabled),
            self.step_size,
            self.epochs,
            self.rng_seed
        )
    }
}

pub(crate) fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Bounded FIFO of teacher embeddings, oldest first. Rows are normalized
/// where they are used, not on entry.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    entries: VecDeque<Embedding>,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("queue_size", "must be >= 1"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Embedding> + '_ {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Embedding> {
        self.entries.get(i)
    }

    /// Appends rows in order, then drops the oldest until within capacity.
    pub fn enqueue(&mut self, rows: &EmbeddingMatrix) -> Result<()> {
        if let Some(first) = self.entries.front() {
            if first.dim() != rows.dim() {
                return Err(Error::DimMismatch {
                    left: rows.dim(),
                    right: first.dim(),
                });
            }
        }
        // Rows that would be evicted immediately are skipped.
        let skip = rows.rows().saturating_sub(self.capacity);
        for row in rows.iter().skip(skip) {
            self.entries.push_back(Embedding::new(row.to_vec())?);
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Option<EmbeddingMatrix> {
        let dim = self.entries.front()?.dim();
        EmbeddingMatrix::from_rows(dim, self.entries.iter().map(|e| e.as_slice())).ok()
    }

    fn unit_rows(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| unit_or_raw(e.as_slice())).collect()
    }
}

pub fn queue_update(mut queue: NegativeQueue, new_targets: &EmbeddingMatrix) -> Result<NegativeQueue> {
    queue.enqueue(new_targets)?;
    Ok(queue)
}

fn unit_or_raw(row: &[f32]) -> Vec<f64> {
    unit_f64(row).unwrap_or_else(|| row.iter().map(|&v| v as f64).collect())
}

/// Loss and its gradient with respect to `q` for a single sample.
#[derive(Debug, Clone)]
pub(crate) struct SampleLoss {
    pub loss: f64,
    pub grad_q: Vec<f64>,
}

/// `-log softmax([q·k+, q·k_1, ..] / τ)[0]` and its gradient in `q`.
///
/// With no negatives the loss is identically zero.
pub(crate) fn infonce_sample<'a, I>(q: &[f64], k_pos: &[f64], negatives: I, tau: f64) -> SampleLoss
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    let pos = dot_f64(q, k_pos) / tau;
    // Differences to the positive logit; the loss is ln(1 + Σ exp(d_i)).
    let diffs: Vec<f64> = negatives
        .clone()
        .into_iter()
        .map(|k| dot_f64(q, k) / tau - pos)
        .collect();
    let mut grad_q = vec![0.0; q.len()];
    if diffs.is_empty() {
        return SampleLoss { loss: 0.0, grad_q };
    }
    let dmax = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let loss = if dmax <= 0.0 {
        diffs.iter().map(|d| d.exp()).sum::<f64>().ln_1p()
    } else {
        let s: f64 = diffs.iter().map(|d| (d - dmax).exp()).sum::<f64>() + (-dmax).exp();
        dmax + s.ln()
    };
    // p_i = exp(d_i - loss); ∂L/∂q = Σ p_i (k_i - k+) / τ.
    for (d, k) in diffs.iter().zip(negatives) {
        let p = (d - loss).exp();
        for ((g, ki), kp) in grad_q.iter_mut().zip(k).zip(k_pos) {
            *g += p * (ki - kp) / tau;
        }
    }
    SampleLoss {
        loss: loss.max(0.0),
        grad_q,
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config("tau", "must be > 0"))
    }
}

/// InfoNCE loss of one sample against every row of `negatives`.
pub fn infonce_loss(
    q: &Embedding,
    k_pos: &Embedding,
    negatives: &EmbeddingMatrix,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    for d in [k_pos.dim(), negatives.dim()] {
        if d != q.dim() {
            return Err(Error::DimMismatch { left: q.dim(), right: d });
        }
    }
    let q = unit_or_raw(q.as_slice());
    let k = unit_or_raw(k_pos.as_slice());
    let negs: Vec<Vec<f64>> = negatives.iter().map(unit_or_raw).collect();
    Ok(infonce_sample(&q, &k, negs.iter().map(Vec::as_slice), tau).loss)
}

/// Kept-negative mask: `mask[j][i]` is true iff `cos(k+_j, queue_i) < σ`.
pub fn prefilter_mask(
    k_pos_batch: &EmbeddingMatrix,
    queue: &NegativeQueue,
    sigma: f64,
) -> Result<Vec<Vec<bool>>> {
    if let Some(e) = queue.get(0) {
        if e.dim() != k_pos_batch.dim() {
            return Err(Error::DimMismatch {
                left: k_pos_batch.dim(),
                right: e.dim(),
            });
        }
    }
    let kpos: Vec<Vec<f64>> = k_pos_batch.iter().map(unit_or_raw).collect();
    Ok(mask_rows(&kpos, &queue.unit_rows(), sigma, false))
}

fn mask_rows(kpos: &[Vec<f64>], pool: &[Vec<f64>], sigma: f64, exclude_self: bool) -> Vec<Vec<bool>> {
    kpos.iter()
        .enumerate()
        .map(|(j, k)| {
            pool.iter()
                .enumerate()
                .map(|(i, n)| !(exclude_self && i == j) && dot_f64(k, n).clamp(-1.0, 1.0) < sigma)
                .collect()
        })
        .collect()
}

/// Per-sample kept negatives, all of size `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSet {
    pub kept: Vec<Vec<usize>>,
    pub m: usize,
}

/// Cuts every sample's kept set down to the batch minimum `M` by uniform
/// random subsampling. Sets already of size `M` are left as they are.
pub fn equalize_negatives<R: Rng + ?Sized>(mask: &[Vec<bool>], rng: &mut R) -> Result<FilterSet> {
    let sets: Vec<Vec<usize>> = mask
        .iter()
        .map(|row| row.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
        .collect();
    equalize_sets(sets, rng)
}

fn equalize_sets<R: Rng + ?Sized>(sets: Vec<Vec<usize>>, rng: &mut R) -> Result<FilterSet> {
    let Some(m) = sets.iter().map(Vec::len).min() else {
        return Ok(FilterSet { kept: sets, m: 0 });
    };
    if m == 0 {
        let sample = sets.iter().position(Vec::is_empty).unwrap();
        return Err(Error::AllFiltered { sample });
    }
    let kept = sets
        .into_iter()
        .map(|set| {
            if set.len() == m {
                return set;
            }
            let mut picked = index::sample(rng, set.len(), m).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| set[i]).collect()
        })
        .collect();
    Ok(FilterSet { kept, m })
}

type Rows = Vec<Vec<f64>>;

fn batch_rows(q_batch: &EmbeddingMatrix, k_pos_batch: &EmbeddingMatrix) -> Result<(Rows, Rows)> {
    if q_batch.rows() != k_pos_batch.rows() {
        return Err(Error::SizeMismatch {
            left: q_batch.rows(),
            right: k_pos_batch.rows(),
        });
    }
    if q_batch.dim() != k_pos_batch.dim() {
        return Err(Error::DimMismatch {
            left: q_batch.dim(),
            right: k_pos_batch.dim(),
        });
    }
    Ok((
        q_batch.iter().map(unit_or_raw).collect(),
        k_pos_batch.iter().map(unit_or_raw).collect(),
    ))
}

/// Mean InfoNCE loss over a batch where sample `j` uses the negatives
/// `negatives[filterset.kept[j]]`.
pub fn filtered_infonce_loss(
    q_batch: &EmbeddingMatrix,
    k_pos_batch: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    filterset: &FilterSet,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let (q, k) = batch_rows(q_batch, k_pos_batch)?;
    if filterset.kept.len() != q.len() {
        return Err(Error::SizeMismatch {
            left: q.len(),
            right: filterset.kept.len(),
        });
    }
    if let Some(sample) = filterset.kept.iter().position(Vec::is_empty) {
        return Err(Error::AllFiltered { sample });
    }
    if negatives.dim() != q_batch.dim() {
        return Err(Error::DimMismatch {
            left: q_batch.dim(),
            right: negatives.dim(),
        });
    }
    let pool: Vec<Vec<f64>> = negatives.iter().map(unit_or_raw).collect();
    if filterset.kept.iter().flatten().any(|&i| i >= pool.len()) {
        return Err(Error::SizeMismatch {
            left: pool.len(),
            right: filterset.kept.iter().flatten().max().copied().unwrap_or(0) + 1,
        });
    }
    Ok(batch_objective(&q, &k, &pool, &filterset.kept, tau).loss)
}

/// Mean filtered InfoNCE loss of `student` encoding `sources`, and its
/// gradient with respect to the student weights. Sample `j` is scored
/// against `k_pos_batch` row `j` and `negatives[filterset.kept[j]]`.
pub fn student_loss_and_grad<S: AsRef<str>>(
    student: &EncoderParams,
    sources: &[S],
    k_pos_batch: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    filterset: &FilterSet,
    tau: f64,
) -> Result<(f64, WeightGrad)> {
    check_tau(tau)?;
    if sources.len() != k_pos_batch.rows() || filterset.kept.len() != sources.len() {
        return Err(Error::SizeMismatch {
            left: sources.len(),
            right: k_pos_batch.rows().min(filterset.kept.len()),
        });
    }
    for d in [k_pos_batch.dim(), negatives.dim()] {
        if d != student.dim() {
            return Err(Error::DimMismatch {
                left: student.dim(),
                right: d,
            });
        }
    }
    let pool: Vec<Vec<f64>> = negatives.iter().map(unit_or_raw).collect();
    if let Some(&i) = filterset.kept.iter().flatten().find(|&&i| i >= pool.len()) {
        return Err(Error::SizeMismatch {
            left: pool.len(),
            right: i + 1,
        });
    }
    if let Some(sample) = filterset.kept.iter().position(Vec::is_empty) {
        return Err(Error::AllFiltered { sample });
    }
    let kpos: Vec<Vec<f64>> = k_pos_batch.iter().map(unit_or_raw).collect();
    let features: Vec<SparseFeatures> = sources.iter().map(|s| student.featurize(s.as_ref())).collect();
    let forwards = features
        .iter()
        .enumerate()
        .map(|(i, f)| student.forward(f).map_err(|e| Error::at_pair(i, e)))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<Vec<f64>> = forwards.iter().map(|f| f.unit.clone()).collect();
    let objective = batch_objective(&q, &kpos, &pool, &filterset.kept, tau);
    let mut grad = WeightGrad::zeros(student.dim());
    for ((f, fwd), g) in features.iter().zip(&forwards).zip(&objective.grads) {
        student.backprop(f, fwd, g, &mut grad);
    }
    Ok((objective.loss, grad))
}

/// Mean InfoNCE loss over a batch with every row of `negatives` for every sample.
pub fn batch_infonce_loss(
    q_batch: &EmbeddingMatrix,
    k_pos_batch: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let (q, k) = batch_rows(q_batch, k_pos_batch)?;
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let pool: Vec<Vec<f64>> = negatives.iter().map(unit_or_raw).collect();
    let all: Vec<usize> = (0..pool.len()).collect();
    let kept = vec![all; q.len()];
    Ok(batch_objective(&q, &k, &pool, &kept, tau).loss)
}

pub(crate) struct BatchObjective {
    pub loss: f64,
    /// Gradient of the mean loss with respect to each `q_j`.
    pub grads: Vec<Vec<f64>>,
}

pub(crate) fn batch_objective(
    q: &[Vec<f64>],
    k_pos: &[Vec<f64>],
    pool: &[Vec<f64>],
    kept: &[Vec<usize>],
    tau: f64,
) -> BatchObjective {
    let b = q.len() as f64;
    let per: Vec<SampleLoss> = q
        .iter()
        .zip(k_pos)
        .zip(kept)
        .map(|((q, k), set)| {
            let negs = set.iter().map(|&i| pool[i].as_slice());
            infonce_sample(q, k, negs, tau)
        })
        .collect();
    let loss = per.iter().map(|s| s.loss).sum::<f64>() / b;
    let grads = per
        .into_iter()
        .map(|s| s.grad_q.into_iter().map(|g| g / b).collect())
        .collect();
    BatchObjective { loss, grads }
}

/// Batch index lists. Without shuffling, pairs are stably sorted by target
/// token count so neighbouring batches hold similar lengths; with shuffling
/// a seeded uniform permutation is used.
pub fn make_batches<R: Rng + ?Sized>(
    pairs: &[SentencePair],
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    if shuffle {
        order.shuffle(rng);
    } else {
        order.sort_by_key(|&i| count_tokens(&pairs[i].target));
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// `None` when the step had no negatives (queue warm-up).
    pub loss: Option<f64>,
    pub updated: bool,
    pub filtered_out: usize,
    pub kept: usize,
    pub candidates: usize,
    pub m_zero_fallback: bool,
}

/// Inputs shared by every step of a run: student source features and
/// teacher target embeddings, indexed by corpus position.
pub(crate) struct Prepared {
    pub features: Vec<SparseFeatures>,
    pub targets: Vec<Embedding>,
    pub target_units: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(pairs: &[SentencePair], student: &EncoderParams, teacher: &EncoderParams) -> Result<Self> {
        let features = pairs.par_iter().map(|p| student.featurize(&p.source)).collect();
        let targets: Vec<Embedding> = teacher
            .encode_batch(&pairs.iter().map(|p| p.target.as_str()).collect::<Vec<_>>())?
            .iter()
            .map(|r| Embedding::new(r.to_vec()))
            .collect::<Result<_>>()?;
        let target_units = targets.iter().map(|e| unit_or_raw(e.as_slice())).collect();
        Ok(Self {
            features,
            targets,
            target_units,
        })
    }
}

fn check_roles(student: &EncoderParams, teacher: &EncoderParams) -> Result<()> {
    if !teacher.is_frozen() {
        return Err(Error::config("teacher", "teacher encoder must be frozen"));
    }
    if student.is_frozen() {
        return Err(Error::FrozenEncoder);
    }
    if student.dim() != teacher.dim() {
        return Err(Error::DimMismatch {
            left: student.dim(),
            right: teacher.dim(),
        });
    }
    Ok(())
}

/// One optimization step on a batch, followed by enqueueing its targets.
pub fn train_step<R: Rng + ?Sized>(
    student: &mut EncoderParams,
    teacher: &EncoderParams,
    batch: &[SentencePair],
    queue: &mut NegativeQueue,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    check_roles(student, teacher)?;
    let prepared = Prepared::new(batch, student, teacher)?;
    let ids: Vec<usize> = (0..batch.len()).collect();
    step_prepared(student, &prepared, &ids, queue, cfg, rng)
}

pub(crate) fn step_prepared<R: Rng + ?Sized>(
    student: &mut EncoderParams,
    prepared: &Prepared,
    ids: &[usize],
    queue: &mut NegativeQueue,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    let mut report = StepReport::default();
    let kpos: Vec<Vec<f64>> = ids.iter().map(|&i| prepared.target_units[i].clone()).collect();
    let in_batch = cfg.negatives_source == NegativesSource::InBatch;
    let pool: Vec<Vec<f64>> = if in_batch { kpos.clone() } else { queue.unit_rows() };

    let base: Vec<Vec<usize>> = (0..ids.len())
        .map(|j| (0..pool.len()).filter(|&i| !(in_batch && i == j)).collect())
        .collect();
    let has_negatives = base.iter().all(|s| !s.is_empty()) && !ids.is_empty();

    if has_negatives {
        let kept = if cfg.prefilter_enabled {
            let mask = mask_rows(&kpos, &pool, cfg.filter_threshold, in_batch);
            let candidates: usize = base.iter().map(Vec::len).sum();
            let kept_count: usize = mask.iter().flatten().filter(|&&k| k).count();
            report.candidates = candidates;
            report.kept = kept_count;
            report.filtered_out = candidates - kept_count;
            match equalize_negatives(&mask, rng) {
                Ok(fs) => fs.kept,
                Err(Error::AllFiltered { sample }) => {
                    log::warn!(
                        "sample {sample} of batch has no negatives below sigma={}; using the unfiltered pool",
                        cfg.filter_threshold
                    );
                    report.m_zero_fallback = true;
                    base
                }
                Err(e) => return Err(e),
            }
        } else {
            base
        };

        let forwards = ids
            .iter()
            .map(|&i| {
                student
                    .forward(&prepared.features[i])
                    .map_err(|e| Error::at_pair(i, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let q: Vec<Vec<f64>> = forwards.iter().map(|f| f.unit.clone()).collect();
        let objective = batch_objective(&q, &kpos, &pool, &kept, cfg.temperature);
        report.loss = Some(objective.loss);

        let mut grad = WeightGrad::zeros(student.dim());
        for ((&i, fwd), g) in ids.iter().zip(&forwards).zip(&objective.grads) {
            student.backprop(&prepared.features[i], fwd, g, &mut grad);
        }
        student.apply_gradient(&grad, cfg.step_size)?;
        report.updated = true;
    }

    let dim = prepared.targets.first().map(Embedding::dim).unwrap_or(student.dim());
    let rows = EmbeddingMatrix::from_rows(dim, ids.iter().map(|&i| prepared.targets[i].as_slice()))?;
    queue.enqueue(&rows)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over steps that computed a loss; NaN if none did.
    pub mean_loss: f64,
    pub steps: usize,
    pub updates: usize,
    pub filtered_out: usize,
    pub kept: usize,
    pub candidates: usize,
    pub m_zero_fallbacks: usize,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} filtered_out={} m_zero_fallbacks={}",
            self.epoch, self.mean_loss, self.filtered_out, self.m_zero_fallbacks
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: EncoderParams,
    pub trace: Vec<EpochStats>,
}

impl TrainOutcome {
    /// Fraction of candidate negatives that survived pre-filtering over the
    /// whole run; 1.0 when nothing was filtered.
    pub fn kept_fraction(&self) -> f64 {
        let kept: usize = self.trace.iter().map(|e| e.kept).sum();
        let cand: usize = self.trace.iter().map(|e| e.candidates).sum();
        if cand == 0 {
            1.0
        } else {
            kept as f64 / cand as f64
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.last().map(|e| e.mean_loss).unwrap_or(f64::NAN)
    }
}

/// Seed of the student initialization stream for a run seed.
pub fn student_init_seed(rng_seed: u64) -> u64 {
    splitmix64(rng_seed ^ 0x00c0_ffee)
}

/// Trains a fresh student for `teacher` on `corpus`.
pub fn train_distill(
    corpus: &[SentencePair],
    teacher: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let student = EncoderParams::student_for(teacher, student_init_seed(cfg.rng_seed))?;
    train_from(student, corpus, teacher, cfg)
}

/// Trains an existing student. All randomness comes from `cfg.rng_seed`.
pub fn train_from(
    mut student: EncoderParams,
    corpus: &[SentencePair],
    teacher: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_roles(&student, teacher)?;
    if student.featurizer().hash_seed == teacher.featurizer().hash_seed {
        return Err(Error::config(
            "seed",
            "student and teacher must not share a featurizer hash seed",
        ));
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { student, trace });
    }
    let prepared = Prepared::new(corpus, &student, teacher)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut queue = NegativeQueue::new(cfg.queue_capacity)?;

    for epoch in 0..cfg.epochs {
        let batches = make_batches(corpus, cfg.batch_size, cfg.shuffle, &mut rng);
        let mut stats = EpochStats {
            epoch,
            mean_loss: f64::NAN,
            steps: 0,
            updates: 0,
            filtered_out: 0,
            kept: 0,
            candidates: 0,
            m_zero_fallbacks: 0,
        };
        let mut loss_sum = 0.0;
        for ids in &batches {
            let r = step_prepared(&mut student, &prepared, ids, &mut queue, cfg, &mut rng)?;
            stats.steps += 1;
            if let Some(l) = r.loss {
                loss_sum += l;
                stats.updates += 1;
            }
            stats.filtered_out += r.filtered_out;
            stats.kept += r.kept;
            stats.candidates += r.candidates;
            stats.m_zero_fallbacks += usize::from(r.m_zero_fallback);
        }
        if stats.updates > 0 {
            stats.mean_loss = loss_sum / stats.updates as f64;
        }
        log::info!("{stats}");
        trace.push(stats);
    }
    Ok(TrainOutcome { student, trace })
}
