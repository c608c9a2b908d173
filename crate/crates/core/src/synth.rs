//! Synthetic parallel data with known ground truth.
//!
//! A cipher language is a word-for-word bijection between a source
//! vocabulary `s0, s1, ..` and a target vocabulary `t0, t1, ..`. Every
//! generated pair is an exact translation, so misalignments injected later
//! are the only noise in the corpus.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::SentencePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherSpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub map_seed: u64,
    pub corpus_size: usize,
    pub corpus_seed: u64,
}

impl Default for CipherSpec {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            min_len: 3,
            max_len: 12,
            map_seed: 1,
            corpus_size: 1000,
            corpus_seed: 2,
        }
    }
}

impl CipherSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab", "must be >= 2"));
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::config("len", "need 1 <= min_len <= max_len"));
        }
        Ok(())
    }

    pub fn language(&self) -> Result<CipherLanguage> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.map_seed);
        let mut map: Vec<usize> = (0..self.vocab_size).collect();
        map.shuffle(&mut rng);
        Ok(CipherLanguage { map })
    }
}

/// The word bijection `s<i> -> t<map[i]>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherLanguage {
    map: Vec<usize>,
}

impl CipherLanguage {
    pub fn vocab_size(&self) -> usize {
        self.map.len()
    }

    pub fn source_word(&self, i: usize) -> String {
        format!("s{i}")
    }

    pub fn translate_word(&self, word: &str) -> Option<String> {
        let i: usize = word.strip_prefix('s')?.parse().ok()?;
        self.map.get(i).map(|t| format!("t{t}"))
    }

    /// Word-by-word translation; `None` if any word is outside the vocabulary.
    pub fn translate(&self, sentence: &str) -> Option<String> {
        let words = sentence
            .split_whitespace()
            .map(|w| self.translate_word(w))
            .collect::<Option<Vec<_>>>()?;
        Some(words.join(" "))
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> SentencePair {
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..self.map.len())).collect();
        let source: Vec<String> = ids.iter().map(|&i| self.source_word(i)).collect();
        let target: Vec<String> = ids.iter().map(|&i| format!("t{}", self.map[i])).collect();
        SentencePair::new(source.join(" "), target.join(" "))
    }
}

pub fn gen_cipher_corpus(spec: &CipherSpec) -> Result<Vec<SentencePair>> {
    let lang = spec.language()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.corpus_seed);
    Ok((0..spec.corpus_size)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            lang.sample_pair(len, &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCorpus {
    pub pairs: Vec<SentencePair>,
    /// True where the target was swapped for another pair's target.
    pub labels: Vec<bool>,
}

/// Misaligns `⌊rate·n⌋` seeded-random pairs by deranging their targets.
pub fn inject_noise(pairs: &[SentencePair], rate: f64, seed: u64) -> Result<NoisyCorpus> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config("noise_rate", "must be in [0, 1]"));
    }
    let n = pairs.len();
    let count = (rate * n as f64).floor() as usize;
    let mut out = pairs.to_vec();
    let mut labels = vec![false; n];
    if count == 0 {
        return Ok(NoisyCorpus { pairs: out, labels });
    }
    if count < 2 {
        return Err(Error::TooFewPairs { count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    // Uniform derangement by rejection; acceptance is about 1/e per draw.
    let mut perm: Vec<usize> = (0..count).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(a, &b)| a != b) {
            break;
        }
    }
    for (a, &b) in perm.iter().enumerate() {
        out[chosen[a]].target = pairs[chosen[b]].target.clone();
        labels[chosen[a]] = true;
    }
    Ok(NoisyCorpus { pairs: out, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> CipherSpec {
        CipherSpec {
            corpus_size: n,
            ..CipherSpec::default()
        }
    }

    #[test]
    fn cipher_is_deterministic_and_exact() {
        let a = gen_cipher_corpus(&spec(100)).unwrap();
        assert_eq!(a, gen_cipher_corpus(&spec(100)).unwrap());
        assert_eq!(a.len(), 100);
        let lang = spec(100).language().unwrap();
        for p in &a {
            assert_eq!(lang.translate(&p.source).unwrap(), p.target);
            let len = p.source.split_whitespace().count();
            assert!((3..=12).contains(&len));
        }
    }

    #[test]
    fn cipher_map_is_bijective() {
        let lang = spec(1).language().unwrap();
        let mut targets: Vec<String> = (0..lang.vocab_size())
            .map(|i| lang.translate_word(&lang.source_word(i)).unwrap())
            .collect();
        targets.sort();
        targets.dedup();
        assert_eq!(targets.len(), lang.vocab_size());
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_cipher_corpus(&CipherSpec { vocab_size: 1, ..spec(3) }).is_err());
        assert!(gen_cipher_corpus(&CipherSpec { min_len: 0, ..spec(3) }).is_err());
        assert!(gen_cipher_corpus(&CipherSpec { min_len: 5, max_len: 4, ..spec(3) }).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let clean = gen_cipher_corpus(&spec(20)).unwrap();
        let noisy = inject_noise(&clean, 0.0, 1).unwrap();
        assert_eq!(noisy.pairs, clean);
        assert!(noisy.labels.iter().all(|l| !l));
    }

    #[test]
    fn full_rate_is_a_derangement() {
        let clean = gen_cipher_corpus(&spec(4)).unwrap();
        let noisy = inject_noise(&clean, 1.0, 5).unwrap();
        assert!(noisy.labels.iter().all(|&l| l));
        for (n, c) in noisy.pairs.iter().zip(&clean) {
            assert_eq!(n.source, c.source);
            assert_ne!(n.target, c.target);
        }
        let mut a: Vec<_> = noisy.pairs.iter().map(|p| p.target.clone()).collect();
        let mut b: Vec<_> = clean.iter().map(|p| p.target.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn thirty_percent_of_a_thousand() {
        let clean = gen_cipher_corpus(&spec(1000)).unwrap();
        let noisy = inject_noise(&clean, 0.3, 42).unwrap();
        assert_eq!(noisy.labels.iter().filter(|&&l| l).count(), 300);
        assert_eq!(noisy, inject_noise(&clean, 0.3, 42).unwrap());
        for ((n, c), &l) in noisy.pairs.iter().zip(&clean).zip(&noisy.labels) {
            if l {
                assert_ne!(n.target, c.target);
            } else {
                assert_eq!(n, c);
            }
        }
    }

    #[test]
    fn single_selected_pair_is_rejected() {
        let clean = gen_cipher_corpus(&spec(3)).unwrap();
        assert!(matches!(
            inject_noise(&clean, 0.5, 1),
            Err(Error::TooFewPairs { count: 1 })
        ));
        assert!(inject_noise(&clean, 1.5, 1).is_err());
    }
}
