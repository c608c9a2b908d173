//! Diagnostics: how similar queue negatives are to their targets under each
//! batching mode, and how the pre-filter threshold affects training.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::contrastive::{make_batches, train_distill, NegativeQueue, TrainConfig};
use crate::corpus::SentencePair;
use crate::embedding::{cosine, Embedding, EmbeddingMatrix};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::margin::{xsim_error_rate, SearchConfig};

/// Uniform bins over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub const LO: f64 = -1.0;
    pub const HI: f64 = 1.0;

    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("bins", "must be >= 1"));
        }
        Ok(Self {
            counts: vec![0; bins],
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (Self::HI - Self::LO) / self.bins() as f64;
        (0..=self.bins()).map(|i| Self::LO + w * i as f64).collect()
    }

    /// Values outside the range are clamped into the end bins.
    pub fn add(&mut self, value: f64) {
        let n = self.bins();
        let t = (value - Self::LO) / (Self::HI - Self::LO) * n as f64;
        let bin = if t.is_nan() { 0 } else { (t.floor().max(0.0) as usize).min(n - 1) };
        self.counts[bin] += 1;
        self.total += 1;
    }

    /// `bin_lo,bin_hi,count` rows after a `# total=<n> shuffle=<0|1>` line.
    pub fn write_csv<W: Write>(&self, shuffle: bool, extra_comment: Option<&str>, mut w: W) -> Result<()> {
        writeln!(w, "# total={} shuffle={}", self.total, u8::from(shuffle))?;
        if let Some(c) = extra_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "bin_lo,bin_hi,count")?;
        let e = self.edges();
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:.4},{:.4},{}", e[i], e[i + 1], c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean cosine between `x` and every queue entry.
pub fn avg_target_similarity(x: &Embedding, queue: &NegativeQueue) -> Result<f64> {
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    let mut sum = 0.0;
    for e in queue.iter() {
        sum += cosine(x, e)?;
    }
    Ok(sum / queue.len() as f64)
}

/// Replays batching and queue updates with the teacher alone and records the
/// average target similarity of every target at the time its batch is
/// processed. Targets seen while the queue is still empty are skipped.
pub fn average_target_similarities(
    targets: &[String],
    teacher: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let emb = teacher.encode_batch(targets)?;
    let pairs: Vec<SentencePair> = targets
        .iter()
        .map(|t| SentencePair::new("", t.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut queue = NegativeQueue::new(cfg.queue_capacity)?;
    let mut values = Vec::with_capacity(targets.len());
    for ids in make_batches(&pairs, cfg.batch_size, cfg.shuffle, &mut rng) {
        if !queue.is_empty() {
            let sims = ids
                .par_iter()
                .map(|&i| avg_target_similarity(&emb.embedding(i), &queue))
                .collect::<Result<Vec<_>>>()?;
            values.extend(sims);
        }
        let rows = EmbeddingMatrix::from_rows(emb.dim(), ids.iter().map(|&i| emb.row(i)))?;
        queue.enqueue(&rows)?;
    }
    Ok(values)
}

pub fn similarity_distribution(
    targets: &[String],
    teacher: &EncoderParams,
    cfg: &TrainConfig,
    bins: usize,
) -> Result<Histogram> {
    let mut h = Histogram::new(bins)?;
    for v in average_target_similarities(targets, teacher, cfg)? {
        h.add(v);
    }
    Ok(h)
}

pub fn fraction_above(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetrics {
    pub error_rate: f64,
    pub kept_fraction: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    /// Training or evaluation failure for this row, as text.
    pub outcome: std::result::Result<SweepMetrics, String>,
}

/// Held-out xsim error rate of `student` on aligned `eval` pairs.
pub fn evaluate(
    student: &EncoderParams,
    teacher: &EncoderParams,
    eval: &[SentencePair],
    search: SearchConfig,
) -> Result<f64> {
    let src: Vec<&str> = eval.iter().map(|p| p.source.as_str()).collect();
    let tgt: Vec<&str> = eval.iter().map(|p| p.target.as_str()).collect();
    xsim_error_rate(&student.encode_batch(&src)?, &teacher.encode_batch(&tgt)?, search)
}

/// One pre-filtered training run per threshold, all from the same seed.
pub fn threshold_sweep(
    sigmas: &[f64],
    base: &TrainConfig,
    corpus: &[SentencePair],
    teacher: &EncoderParams,
    eval: &[SentencePair],
    search: SearchConfig,
) -> Result<Vec<SweepRow>> {
    for (i, s) in sigmas.iter().enumerate() {
        if sigmas[..i].contains(s) {
            return Err(Error::config("sigma", format!("duplicate value {s} in sweep")));
        }
    }
    Ok(sigmas
        .par_iter()
        .map(|&sigma| {
            let cfg = TrainConfig {
                filter_threshold: sigma,
                prefilter_enabled: true,
                ..base.clone()
            };
            let outcome = train_distill(corpus, teacher, &cfg).and_then(|run| {
                Ok(SweepMetrics {
                    error_rate: evaluate(&run.student, teacher, eval, search)?,
                    kept_fraction: run.kept_fraction(),
                    final_loss: run.final_loss(),
                })
            });
            SweepRow {
                sigma,
                seed: base.rng_seed,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect())
}

/// `sigma,error_rate,kept_fraction,seed`; failed rows have empty metrics.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], extra_comment: Option<&str>, mut w: W) -> Result<()> {
    if let Some(c) = extra_comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "sigma,error_rate,kept_fraction,seed")?;
    for r in rows {
        match &r.outcome {
            Ok(m) => writeln!(
                w,
                "{},{:.4},{:.6},{}",
                r.sigma, m.error_rate, m.kept_fraction, r.seed
            )?,
            Err(e) => {
                writeln!(w, "# sigma={} failed: {e}", r.sigma)?;
                writeln!(w, "{},,,{}", r.sigma, r.seed)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FeaturizerConfig;

    fn e(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn queue(rows: &[&[f32]]) -> NegativeQueue {
        let mut q = NegativeQueue::new(16).unwrap();
        q.enqueue(&EmbeddingMatrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap())
            .unwrap();
        q
    }

    #[test]
    fn avg_similarity_examples() {
        let x = e(&[1.0, 0.0]);
        assert_eq!(avg_target_similarity(&x, &queue(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(avg_target_similarity(&x, &queue(&[&[0.0, 1.0], &[0.0, -1.0]])).unwrap(), 0.0);
        let v = avg_target_similarity(&x, &queue(&[&[0.6, 0.8], &[0.0, 1.0]])).unwrap();
        assert!((v - 0.3).abs() < 1e-7);
        assert!(matches!(
            avg_target_similarity(&x, &NegativeQueue::new(2).unwrap()),
            Err(Error::EmptyQueue)
        ));
    }

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::new(40).unwrap();
        for v in [-1.0, -0.99, 0.0, 0.4, 0.999, 1.0] {
            h.add(v);
        }
        assert_eq!(h.total(), 6);
        assert_eq!(h.counts()[0], 2);
        assert_eq!(h.counts()[20], 1);
        assert_eq!(h.counts()[28], 1);
        assert_eq!(h.counts()[39], 2);
        assert_eq!(h.counts().iter().sum::<u64>(), h.total());
        let edges = h.edges();
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(edges.len(), 41);
    }

    #[test]
    fn histogram_csv_layout() {
        let mut h = Histogram::new(2).unwrap();
        h.add(0.5);
        let mut buf = Vec::new();
        h.write_csv(false, None, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# total=1 shuffle=0\nbin_lo,bin_hi,count\n-1.0000,0.0000,0\n0.0000,1.0000,1\n"
        );
    }

    fn teacher() -> EncoderParams {
        EncoderParams::random(FeaturizerConfig::default(), 16, 4, true).unwrap()
    }

    #[test]
    fn constant_corpus_fills_top_bin() {
        let targets = vec!["the same sentence".to_string(); 40];
        let cfg = TrainConfig {
            batch_size: 4,
            queue_capacity: 8,
            ..TrainConfig::default()
        };
        let h = similarity_distribution(&targets, &teacher(), &cfg, 40).unwrap();
        assert_eq!(h.total(), 36);
        assert_eq!(h.counts()[39], 36);
    }

    #[test]
    fn distribution_is_seeded() {
        let targets: Vec<String> = (0..60).map(|i| format!("t{} t{}", i, i * 7 % 13)).collect();
        let cfg = TrainConfig {
            batch_size: 5,
            queue_capacity: 10,
            rng_seed: 9,
            ..TrainConfig::default()
        };
        let a = similarity_distribution(&targets, &teacher(), &cfg, 40).unwrap();
        let b = similarity_distribution(&targets, &teacher(), &cfg, 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_rejects_duplicate_sigmas() {
        let err = threshold_sweep(
            &[0.5, 0.5],
            &TrainConfig::default(),
            &[],
            &teacher(),
            &[],
            SearchConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![
            SweepRow {
                sigma: 0.9,
                seed: 3,
                outcome: Ok(SweepMetrics {
                    error_rate: 1.5,
                    kept_fraction: 0.75,
                    final_loss: 0.1,
                }),
            },
            SweepRow {
                sigma: 0.5,
                seed: 3,
                outcome: Err("boom".into()),
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, None, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sigma,error_rate,kept_fraction,seed\n0.9,1.5000,0.750000,3\n# sigma=0.5 failed: boom\n0.5,,,3\n"
        );
    }
}
