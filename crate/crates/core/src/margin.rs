//! Margin-scored (xsim) similarity search between two embedded sentence sets.
//!
//! For a source `x` and target `y`,
//!
//! ```text
//! xsim(x, y) = margin(cos(x, y), Σ_{z∈NN_k(x)} cos(x, z)/2k + Σ_{z∈NN_k(y)} cos(y, z)/2k)
//! ```
//!
//! where `NN_k(x)` are the `k` nearest targets of `x` and `NN_k(y)` the `k`
//! nearest sources of `y`. Search is exact brute force.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embedding::{dot_f64, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginKind {
    Absolute,
    Distance,
    #[default]
    Ratio,
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Absolute => "absolute",
            Self::Distance => "distance",
            Self::Ratio => "ratio",
        })
    }
}

impl FromStr for MarginKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "distance" => Ok(Self::Distance),
            "ratio" => Ok(Self::Ratio),
            _ => Err(Error::config(
                "margin",
                format!("expected absolute, distance or ratio, got `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub k: usize,
    pub margin_kind: MarginKind,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 4,
            margin_kind: MarginKind::Ratio,
        }
    }
}

impl SearchConfig {
    pub fn describe(&self) -> String {
        format!("k={} margin={}", self.k, self.margin_kind)
    }
}

pub fn margin(a: f64, b: f64, kind: MarginKind) -> Result<f64> {
    match kind {
        MarginKind::Absolute => Ok(a),
        MarginKind::Distance => Ok(a - b),
        MarginKind::Ratio if b == 0.0 => Err(Error::DivisionByZero),
        MarginKind::Ratio => Ok(a / b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub cosine: f64,
}

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

fn cos_unit(a: &[f64], b: &[f64]) -> f64 {
    dot_f64(a, b).clamp(-1.0, 1.0)
}

/// Top-`k` by cosine, descending; equal cosines keep the lower index first.
fn top_k(query: &[f64], candidates: &[Vec<f64>], k: usize) -> Vec<Neighbor> {
    let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
    for (index, c) in candidates.iter().enumerate() {
        let cosine = cos_unit(query, c);
        if best.len() == k && cosine <= best[k - 1].cosine {
            continue;
        }
        let at = best.partition_point(|n| n.cosine >= cosine);
        best.insert(at, Neighbor { index, cosine });
        best.truncate(k);
    }
    best
}

fn knn_units(queries: &[Vec<f64>], candidates: &[Vec<f64>], k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if k > candidates.len() || k == 0 {
        return Err(Error::KTooLarge {
            k,
            candidates: candidates.len(),
        });
    }
    Ok(queries.par_iter().map(|q| top_k(q, candidates, k)).collect())
}

/// Exact k-nearest neighbours of every query among `candidates`.
pub fn knn(queries: &EmbeddingMatrix, candidates: &EmbeddingMatrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    check_dims(queries, candidates)?;
    knn_units(&queries.unit_rows_f64()?, &candidates.unit_rows_f64()?, k)
}

/// xsim from a pair's cosine and the two neighbourhoods.
pub fn xsim_score(cos_xy: f64, fwd_nn: &[Neighbor], bwd_nn: &[Neighbor], kind: MarginKind) -> Result<f64> {
    let denom = neighborhood_term(fwd_nn) + neighborhood_term(bwd_nn);
    margin(cos_xy, denom, kind)
}

fn neighborhood_term(nn: &[Neighbor]) -> f64 {
    if nn.is_empty() {
        return 0.0;
    }
    nn.iter().map(|n| n.cosine).sum::<f64>() / (2 * nn.len()) as f64
}

/// Normalized source/target rows plus each row's neighbourhood term.
pub struct XsimIndex {
    src: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    cfg: SearchConfig,
}

impl XsimIndex {
    pub fn new(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, cfg: SearchConfig) -> Result<Self> {
        check_dims(src, tgt)?;
        Self::from_units(src.unit_rows_f64()?, tgt.unit_rows_f64()?, cfg)
    }

    pub(crate) fn from_units(src: Vec<Vec<f64>>, tgt: Vec<Vec<f64>>, cfg: SearchConfig) -> Result<Self> {
        let fwd = knn_units(&src, &tgt, cfg.k)?
            .iter()
            .map(|nn| neighborhood_term(nn))
            .collect();
        let bwd = knn_units(&tgt, &src, cfg.k)?
            .iter()
            .map(|nn| neighborhood_term(nn))
            .collect();
        Ok(Self {
            src,
            tgt,
            fwd,
            bwd,
            cfg,
        })
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        cos_unit(&self.src[i], &self.tgt[j])
    }

    pub fn score(&self, i: usize, j: usize) -> Result<f64> {
        margin(self.cosine(i, j), self.fwd[i] + self.bwd[j], self.cfg.margin_kind)
    }

    /// Best target for source `i`; ties go to the lowest target index.
    pub fn best_target(&self, i: usize) -> Result<(usize, f64)> {
        let mut best = (0, self.score(i, 0)?);
        for j in 1..self.tgt.len() {
            let s = self.score(i, j)?;
            if s > best.1 {
                best = (j, s);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Per source: best target index and its xsim score.
    pub best: Vec<(usize, f64)>,
    pub errors: usize,
    pub error_rate: f64,
}

pub fn align(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, cfg: SearchConfig) -> Result<AlignmentResult> {
    check_dims(src, tgt)?;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::SizeMismatch {
            left: src.rows(),
            right: tgt.rows(),
        });
    }
    let index = XsimIndex::new(src, tgt, cfg)?;
    let best = (0..src.rows())
        .into_par_iter()
        .map(|i| index.best_target(i))
        .collect::<Result<Vec<_>>>()?;
    let errors = best.iter().enumerate().filter(|(i, b)| b.0 != *i).count();
    Ok(AlignmentResult {
        error_rate: 100.0 * errors as f64 / best.len() as f64,
        best,
        errors,
    })
}

/// Percentage of sources whose best-scoring target is not the aligned one.
pub fn xsim_error_rate(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, cfg: SearchConfig) -> Result<f64> {
    if src.rows() != tgt.rows() {
        return Err(Error::SizeMismatch {
            left: src.rows(),
            right: tgt.rows(),
        });
    }
    Ok(align(src, tgt, cfg)?.error_rate)
}

/// `n=<n> k=<k> margin=<kind> errors=<m> error_rate=<pct>` report line.
pub fn report_line(result: &AlignmentResult, cfg: &SearchConfig) -> String {
    format!(
        "n={} k={} margin={} errors={} error_rate={:.2}",
        result.best.len(),
        cfg.k,
        cfg.margin_kind,
        result.errors,
        result.error_rate
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows[0].len(), rows.iter().copied()).unwrap()
    }

    #[test]
    fn margin_examples() {
        assert!((margin(0.8, 0.4, MarginKind::Ratio).unwrap() - 2.0).abs() < 1e-15);
        assert!((margin(0.8, 0.4, MarginKind::Distance).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(margin(0.8, 0.4, MarginKind::Absolute).unwrap(), 0.8);
        assert!(matches!(margin(0.8, 0.0, MarginKind::Ratio), Err(Error::DivisionByZero)));
    }

    #[test]
    fn knn_examples() {
        let nn = knn(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]]), 1).unwrap();
        assert_eq!(nn[0], vec![Neighbor { index: 0, cosine: 1.0 }]);

        let cands = m(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let nn = knn(&m(&[&[1.0, 0.0]]), &cands, 3).unwrap();
        let idx: Vec<usize> = nn[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2, 0]);

        assert!(matches!(
            knn(&m(&[&[1.0, 0.0]]), &cands, 4),
            Err(Error::KTooLarge { k: 4, candidates: 3 })
        ));
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let cands = m(&[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]]);
        let nn = knn(&m(&[&[1.0, 0.0]]), &cands, 2).unwrap();
        let idx: Vec<usize> = nn[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    fn two_by_two() -> (EmbeddingMatrix, EmbeddingMatrix) {
        (
            m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            m(&[&[0.8, 0.6], &[0.6, 0.8]]),
        )
    }

    #[test]
    fn hand_evaluated_xsim() {
        let (src, tgt) = two_by_two();
        let cfg = SearchConfig {
            k: 1,
            margin_kind: MarginKind::Ratio,
        };
        let idx = XsimIndex::new(&src, &tgt, cfg).unwrap();
        assert!((idx.score(0, 0).unwrap() - 1.0).abs() < 1e-7);
        assert!((idx.score(0, 1).unwrap() - 0.75).abs() < 1e-7);
        assert_eq!(idx.best_target(0).unwrap().0, 0);

        // Free-function form over explicit neighbourhoods.
        let fwd = knn(&src, &tgt, 1).unwrap();
        let bwd = knn(&tgt, &src, 1).unwrap();
        let s = xsim_score(0.6, &fwd[0], &bwd[1], MarginKind::Ratio).unwrap();
        assert!((s - 0.75).abs() < 1e-7);

        let abs = SearchConfig {
            k: 1,
            margin_kind: MarginKind::Absolute,
        };
        let idx = XsimIndex::new(&src, &tgt, abs).unwrap();
        assert!((idx.score(0, 1).unwrap() - idx.cosine(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn align_identity_and_reversed() {
        let rows: Vec<[f32; 3]> = (0..6)
            .map(|i| {
                let t = i as f32;
                [t.cos(), t.sin(), 0.3 * t]
            })
            .collect();
        let src = EmbeddingMatrix::from_rows(3, &rows).unwrap();
        let rev = EmbeddingMatrix::from_rows(3, rows.iter().rev()).unwrap();
        let cfg = SearchConfig { k: 2, ..Default::default() };

        let r = align(&src, &src, cfg).unwrap();
        assert!(r.best.iter().enumerate().all(|(i, b)| b.0 == i));
        assert_eq!(xsim_error_rate(&src, &src, cfg).unwrap(), 0.0);

        let r = align(&src, &rev, cfg).unwrap();
        assert!(r.best.iter().enumerate().all(|(i, b)| b.0 == 5 - i));
        assert_eq!(xsim_error_rate(&src, &rev, cfg).unwrap(), 100.0);
        assert_eq!(report_line(&r, &cfg), "n=6 k=2 margin=ratio errors=6 error_rate=100.00");
    }

    #[test]
    fn size_and_dim_errors() {
        let (src, tgt) = two_by_two();
        let three = m(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            align(&src, &three, SearchConfig::default()),
            Err(Error::DimMismatch { .. })
        ));
        let one = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            xsim_error_rate(&src, &one, SearchConfig { k: 1, ..Default::default() }),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(matches!(
            xsim_error_rate(&src, &tgt, SearchConfig { k: 3, ..Default::default() }),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn kind_parsing() {
        for k in [MarginKind::Absolute, MarginKind::Distance, MarginKind::Ratio] {
            assert_eq!(k.to_string().parse::<MarginKind>().unwrap(), k);
        }
        assert!("cosine".parse::<MarginKind>().is_err());
    }
}
