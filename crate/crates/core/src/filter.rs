//! Scoring a mined corpus with an encoder pair and selecting token-budgeted
//! subsets of its best pairs.

use std::io::Write;

use rayon::prelude::*;

use crate::corpus::{check_field, count_tokens, SentencePair};
use crate::embedding::EmbeddingMatrix;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::margin::{SearchConfig, XsimIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    /// Position of the pair in the input corpus.
    pub index: usize,
    pub source: String,
    pub target: String,
    pub score: f64,
    pub target_tokens: usize,
}

/// Target-token budget for a selected subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetSpec {
    pub budget: u64,
}

impl BudgetSpec {
    /// 1, 2, 3, 5 and 7 million tokens.
    pub const PRESETS: [u64; 5] = [1_000_000, 2_000_000, 3_000_000, 5_000_000, 7_000_000];

    pub fn new(budget: u64) -> Self {
        Self { budget }
    }

    pub fn presets() -> Vec<BudgetSpec> {
        Self::PRESETS.iter().map(|&b| Self::new(b)).collect()
    }
}

/// Source-side language-ID hook: returns true when the source sentence looks
/// like the target language and the pair should be dropped.
pub type LangIdHook<'a> = &'a (dyn Fn(&str) -> bool + Sync);

/// xsim score of each aligned row pair `(src_i, tgt_i)`, with neighbourhoods
/// taken over the full source and target sets.
pub fn score_aligned(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, cfg: SearchConfig) -> Result<Vec<f64>> {
    if src.rows() != tgt.rows() {
        return Err(Error::SizeMismatch {
            left: src.rows(),
            right: tgt.rows(),
        });
    }
    if src.is_empty() {
        return Ok(Vec::new());
    }
    let index = XsimIndex::new(src, tgt, cfg)?;
    (0..src.rows()).map(|i| index.score(i, i)).collect()
}

/// Scores every kept pair. Pairs with a sentence that cannot be encoded get
/// `-inf` and are left out of every neighbourhood.
pub fn score_corpus(
    pairs: &[SentencePair],
    student: &EncoderParams,
    teacher: &EncoderParams,
    cfg: SearchConfig,
    langid_hook: Option<LangIdHook<'_>>,
) -> Result<Vec<ScoredPair>> {
    if !teacher.is_frozen() {
        return Err(Error::config("teacher", "teacher encoder must be frozen"));
    }
    if student.dim() != teacher.dim() {
        return Err(Error::DimMismatch {
            left: student.dim(),
            right: teacher.dim(),
        });
    }
    let kept: Vec<usize> = (0..pairs.len())
        .filter(|&i| langid_hook.is_none_or(|hook| !hook(&pairs[i].source)))
        .collect();

    let encoded: Vec<Option<(Vec<f64>, Vec<f64>)>> = kept
        .par_iter()
        .map(|&i| -> Result<_> {
            let p = &pairs[i];
            let s = student.encode_f64(&p.source);
            let t = teacher.encode_f64(&p.target);
            match (s, t) {
                (Ok(s), Ok(t)) => Ok(Some((s, t))),
                (Err(Error::ZeroVector { .. }), _) | (_, Err(Error::ZeroVector { .. })) => Ok(None),
                (Err(e), _) | (_, Err(e)) => Err(Error::at_pair(i, e)),
            }
        })
        .collect::<Result<_>>()?;

    let (src, tgt): (Vec<Vec<f64>>, Vec<Vec<f64>>) = encoded.iter().flatten().cloned().unzip();
    let scores = if src.is_empty() {
        Vec::new()
    } else {
        let index = XsimIndex::from_units(src, tgt, cfg)?;
        (0..encoded.iter().flatten().count())
            .map(|r| index.score(r, r))
            .collect::<Result<Vec<_>>>()?
    };

    let mut next = scores.into_iter();
    Ok(kept
        .iter()
        .zip(&encoded)
        .map(|(&i, enc)| {
            let p = &pairs[i];
            ScoredPair {
                index: i,
                source: p.source.clone(),
                target: p.target.clone(),
                score: if enc.is_some() {
                    next.next().unwrap()
                } else {
                    f64::NEG_INFINITY
                },
                target_tokens: count_tokens(&p.target),
            }
        })
        .collect())
}

/// Indices of `scored` sorted by descending score; ties keep input order.
pub fn rank_by_score(scored: &[ScoredPair]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    order
}

/// Greedy top-score prefix whose target tokens fit in the budget. Stops at
/// the first pair that would overflow; `-inf` pairs are never selected.
pub fn select_by_token_budget(scored: &[ScoredPair], spec: BudgetSpec) -> Vec<ScoredPair> {
    let mut used = 0u64;
    let mut out = Vec::new();
    for i in rank_by_score(scored) {
        let p = &scored[i];
        if p.score == f64::NEG_INFINITY || p.score.is_nan() {
            break;
        }
        let next = used + p.target_tokens as u64;
        if next > spec.budget {
            break;
        }
        used = next;
        out.push(p.clone());
    }
    out
}

/// `score<TAB>source<TAB>target` lines in descending score order.
pub fn write_scored_tsv<W: Write>(scored: &[ScoredPair], mut w: W) -> Result<()> {
    for i in rank_by_score(scored) {
        let p = &scored[i];
        check_field(&p.source)?;
        check_field(&p.target)?;
        writeln!(w, "{:.6}\t{}\t{}", p.score, p.source, p.target)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_pairs(scored: &[ScoredPair]) -> Vec<SentencePair> {
    scored
        .iter()
        .map(|p| SentencePair::new(p.source.clone(), p.target.clone()))
        .collect()
}
