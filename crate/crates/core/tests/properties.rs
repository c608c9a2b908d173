use codistill::analysis::{average_target_similarities, similarity_distribution};
use codistill::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(dim: usize, flat: &[f32]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_flat(dim, flat[..flat.len() / dim * dim].to_vec()).unwrap()
}

/// Rows with norm well away from zero.
fn rows(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = EmbeddingMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0f32..1.0, dim), n)
        .prop_filter("nonzero rows", |rs| {
            rs.iter().all(|r| r.iter().map(|x| x * x).sum::<f32>() > 1e-3)
        })
        .prop_map(move |rs| EmbeddingMatrix::from_rows(dim, rs.iter().map(Vec::as_slice)).unwrap())
}

fn queue_of(m: &EmbeddingMatrix) -> NegativeQueue {
    let mut q = NegativeQueue::new(m.rows().max(1)).unwrap();
    q.enqueue(m).unwrap();
    q
}

proptest! {
    #[test]
    fn loss_is_finite_and_nonnegative(
        q in rows(4, 1..2), k in rows(4, 1..2), negs in rows(4, 1..20), tau in 0.01f64..2.0,
    ) {
        let l = infonce_loss(&q.embedding(0), &k.embedding(0), &negs, tau).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn large_sigma_reduces_to_plain_loss(
        q in rows(6, 1..6), negs in rows(6, 1..24), sigma in 1.0001f64..10.0, seed in any::<u64>(),
    ) {
        let kpos = q.scaled(0.5).unwrap();
        let mask = prefilter_mask(&kpos, &queue_of(&negs), sigma).unwrap();
        let fs = equalize_negatives(&mask, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(fs.m, negs.rows());
        let a = filtered_infonce_loss(&q, &kpos, &negs, &fs, 0.05).unwrap();
        let b = batch_infonce_loss(&q, &kpos, &negs, 0.05).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn kept_count_monotone_in_sigma(
        kpos in rows(5, 1..6), negs in rows(5, 1..30), s1 in -1.5f64..1.5, s2 in -1.5f64..1.5,
    ) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let q = queue_of(&negs);
        let count = |s| prefilter_mask(&kpos, &q, s).unwrap().iter().flatten().filter(|&&k| k).count();
        prop_assert!(count(lo) <= count(hi));
    }

    #[test]
    fn equalized_sets_are_kept_and_equal(kpos in rows(3, 1..6), negs in rows(3, 1..20), seed in any::<u64>()) {
        let mask = prefilter_mask(&kpos, &queue_of(&negs), 0.3).unwrap();
        match equalize_negatives(&mask, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(fs) => {
                let min = mask.iter().map(|r| r.iter().filter(|&&k| k).count()).min().unwrap();
                prop_assert_eq!(fs.m, min);
                for (set, row) in fs.kept.iter().zip(&mask) {
                    prop_assert_eq!(set.len(), fs.m);
                    prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
                    prop_assert!(set.iter().all(|&i| row[i]));
                }
            }
            Err(Error::AllFiltered { sample }) => {
                prop_assert!(mask[sample].iter().all(|&k| !k));
            }
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn queue_holds_last_n_in_order(cap in 1usize..10, b in 1usize..5, t in 0usize..12) {
        let mut q = NegativeQueue::new(cap).unwrap();
        let mut all = Vec::new();
        for step in 0..t {
            let flat: Vec<f32> = (0..b).map(|i| (step * b + i) as f32 + 1.0).collect();
            q = queue_update(q, &matrix(1, &flat)).unwrap();
            all.extend(flat);
            prop_assert!(q.len() <= cap);
        }
        let keep = all.len().min(cap);
        let got: Vec<f32> = q.iter().map(|e| e.as_slice()[0]).collect();
        prop_assert_eq!(&got[..], &all[all.len() - keep..]);
    }

    #[test]
    fn argmax_survives_positive_scaling(src in rows(4, 5..12), c in 0.01f32..50.0, k in 1usize..4) {
        let tgt = src.scaled(-0.3).unwrap();
        let tgt = EmbeddingMatrix::from_flat(4, tgt.as_flat().iter().zip(src.as_flat()).map(|(a, b)| a + b * b).collect()).unwrap();
        prop_assume!(tgt.iter().all(|r| r.iter().map(|x| x * x).sum::<f32>() > 1e-3));
        let cfg = SearchConfig { k, margin_kind: MarginKind::Ratio };
        let base = align(&src, &tgt, cfg);
        let scaled = align(&src.scaled(c).unwrap(), &tgt, cfg);
        match (base, scaled) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(
                    a.best.iter().map(|x| x.0).collect::<Vec<_>>(),
                    b.best.iter().map(|x| x.0).collect::<Vec<_>>()
                );
                prop_assert!((0.0..=100.0).contains(&a.error_rate));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn absolute_margin_is_cosine_nearest_neighbour(
        (src, tgt) in (2usize..10).prop_flat_map(|n| (rows(3, n..n + 1), rows(3, n..n + 1))),
    ) {
        let k = 2;
        let cfg = SearchConfig { k, margin_kind: MarginKind::Absolute };
        let res = align(&src, &tgt, cfg).unwrap();
        for (i, &(j, s)) in res.best.iter().enumerate() {
            let cos: Vec<f64> = (0..tgt.rows()).map(|t| cosine(&src.embedding(i), &tgt.embedding(t)).unwrap()).collect();
            let best = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(j, cos.iter().position(|&c| c == best).unwrap());
            prop_assert!((s - best).abs() < 1e-9);
        }
    }

    #[test]
    fn budget_adherence_and_nesting(
        items in prop::collection::vec((-5.0f64..5.0, 0usize..20), 0..40), b1 in 0u64..200, b2 in 0u64..200,
    ) {
        let scored: Vec<ScoredPair> = items
            .iter()
            .enumerate()
            .map(|(index, &(score, target_tokens))| ScoredPair {
                index, source: String::new(), target: String::new(), score, target_tokens,
            })
            .collect();
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let small = select_by_token_budget(&scored, BudgetSpec::new(lo));
        let large = select_by_token_budget(&scored, BudgetSpec::new(hi));
        for (sel, b) in [(&small, lo), (&large, hi)] {
            prop_assert!(sel.iter().map(|p| p.target_tokens as u64).sum::<u64>() <= b);
        }
        prop_assert!(small.len() <= large.len());
        prop_assert!(small.iter().zip(&large).all(|(a, b)| a.index == b.index));
    }

    #[test]
    fn noise_is_a_derangement_of_the_labeled_pairs(rate in 0.0f64..=1.0, seed in any::<u64>(), n in 2usize..60) {
        let clean = gen_cipher_corpus(&CipherSpec { corpus_size: n, ..CipherSpec::default() }).unwrap();
        let Ok(noisy) = inject_noise(&clean, rate, seed) else {
            prop_assert_eq!((rate * n as f64).floor() as usize, 1);
            return Ok(());
        };
        prop_assert_eq!(noisy.labels.iter().filter(|&&l| l).count(), (rate * n as f64).floor() as usize);
        for ((p, c), &l) in noisy.pairs.iter().zip(&clean).zip(&noisy.labels) {
            if l {
                prop_assert_eq!(&p.source, &c.source);
                prop_assert_ne!(&p.target, &c.target);
            } else {
                prop_assert_eq!(p, c);
            }
        }
    }
}

#[test]
fn prefilter_off_never_reads_sigma() {
    let corpus = gen_cipher_corpus(&CipherSpec {
        corpus_size: 300,
        ..CipherSpec::default()
    })
    .unwrap();
    let teacher = EncoderParams::random(FeaturizerConfig::default(), 16, 2, true).unwrap();
    let cfg = |sigma| TrainConfig {
        filter_threshold: sigma,
        queue_capacity: 64,
        epochs: 2,
        ..TrainConfig::default()
    };
    let a = train_distill(&corpus, &teacher, &cfg(0.1)).unwrap();
    let b = train_distill(&corpus, &teacher, &cfg(0.99)).unwrap();
    assert_eq!(a.student, b.student);
    assert!(a.trace.iter().all(|s| s.filtered_out == 0 && s.candidates == 0));
}

#[test]
fn histogram_counts_post_warmup_targets() {
    let corpus = gen_cipher_corpus(&CipherSpec {
        corpus_size: 500,
        ..CipherSpec::default()
    })
    .unwrap();
    let targets: Vec<String> = corpus.into_iter().map(|p| p.target).collect();
    let teacher = EncoderParams::random(FeaturizerConfig::default(), 16, 2, true).unwrap();
    let before = teacher.clone();
    let cfg = TrainConfig {
        queue_capacity: 100,
        ..TrainConfig::default()
    };
    let h = similarity_distribution(&targets, &teacher, &cfg, 10).unwrap();
    // The first batch of 32 meets an empty queue.
    assert_eq!(h.total(), 500 - 32);
    assert_eq!(h.total() as usize, average_target_similarities(&targets, &teacher, &cfg).unwrap().len());
    assert_eq!(teacher, before);
}
