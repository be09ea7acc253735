mod common;

use ppt::data::synthetic::{generate_shape, Augment, ShapeKind};
use ppt::data::{synthetic_dataset, Split, SyntheticConfig};
use ppt::encoders::{fps, knn_group, PointCloud, TextEncoder, TextEncoderConfig, Vocabulary};
use ppt::objectives::{class_distribution, class_logits, one_hot, pairwise_contrastive, tuning_loss, LossForm};
use ppt::prompt::{InitMode, InsertPosition, PromptLearner};
use ppt::tensor::GeluMode;
use ppt::train::steps::argmax_rows;
use ppt::train::{metrics_from_predictions, OptimConfig};
use ppt::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Double loop over plain slices; no tensor ops.
fn brute_force_contrastive(a: &[f64], b: &[f64], bsz: usize, d: usize, tau: f64) -> f64 {
    let cos = |i: usize, k: usize| {
        let (u, v) = (&a[i * d..(i + 1) * d], &b[k * d..(k + 1) * d]);
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (nu * nv)
    };
    let mut total = 0.0;
    for i in 0..bsz {
        let mut row = 0.0;
        let mut col = 0.0;
        for k in 0..bsz {
            row += (cos(i, k) / tau).exp();
            col += (cos(k, i) / tau).exp();
        }
        let pos = cos(i, i) / tau;
        total += -0.5 * (pos - row.ln()) - 0.5 * (pos - col.ln());
    }
    total / bsz as f64
}

fn features(max_b: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=max_b, 2usize..6).prop_flat_map(|(b, d)| {
        (
            Just(b),
            Just(d),
            prop::collection::vec(-2.0f64..2.0, b * d),
            prop::collection::vec(-2.0f64..2.0, b * d),
        )
    })
}

fn away_from_zero(v: &[f64], d: usize) -> bool {
    v.chunks(d).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrastive_matches_brute_force((b, d, x, y) in features(8), tau in 0.05f64..2.0) {
        prop_assume!(away_from_zero(&x, d) && away_from_zero(&y, d));
        let got = pairwise_contrastive(
            &Tensor::matrix(b, d, x.clone()).unwrap(),
            &Tensor::matrix(b, d, y.clone()).unwrap(),
            tau,
        ).unwrap().item().unwrap();
        let want = brute_force_contrastive(&x, &y, b, d, tau);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn contrastive_is_symmetric((b, d, x, y) in features(6)) {
        prop_assume!(away_from_zero(&x, d) && away_from_zero(&y, d));
        let a = Tensor::matrix(b, d, x).unwrap();
        let c = Tensor::matrix(b, d, y).unwrap();
        let ab = pairwise_contrastive(&a, &c, 0.3).unwrap().item().unwrap();
        let ba = pairwise_contrastive(&c, &a, 0.3).unwrap().item().unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn single_pair_loss_is_zero(v in prop::collection::vec(-3.0f64..3.0, 4), w in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(away_from_zero(&v, 4) && away_from_zero(&w, 4));
        let loss = pairwise_contrastive(&Tensor::matrix(1, 4, v).unwrap(), &Tensor::matrix(1, 4, w).unwrap(), 0.07)
            .unwrap().item().unwrap();
        prop_assert_eq!(loss, 0.0);
    }

    #[test]
    fn class_distribution_is_a_distribution(
        p in prop::collection::vec(-2.0f64..2.0, 6),
        t in prop::collection::vec(-2.0f64..2.0, 24),
        tau in 0.01f64..5.0,
    ) {
        prop_assume!(away_from_zero(&p, 6) && away_from_zero(&t, 6));
        let y = class_distribution(&Tensor::vector(p).unwrap(), &Tensor::matrix(4, 6, t).unwrap(), tau).unwrap();
        let total: f64 = y.values().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(y.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn argmax_ignores_temperature_and_feature_scale(
        p in prop::collection::vec(-2.0f64..2.0, 5),
        t in prop::collection::vec(-2.0f64..2.0, 15),
        tau in 0.01f64..5.0,
        s in 0.01f64..100.0,
    ) {
        prop_assume!(away_from_zero(&p, 5) && away_from_zero(&t, 5));
        let text = Tensor::matrix(3, 5, t).unwrap();
        let base = argmax_rows(&class_logits(&Tensor::vector(p.clone()).unwrap(), &text, 1.0).unwrap());
        let scaled: Vec<f64> = p.iter().map(|v| v * s).collect();
        let other = argmax_rows(&class_logits(&Tensor::vector(scaled).unwrap(), &text, tau).unwrap());
        prop_assert_eq!(base, other);
    }

    #[test]
    fn categorical_loss_is_mean_negative_log_likelihood(
        rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..6),
        seed in any::<u64>(),
    ) {
        let b = rows.len();
        let probs: Vec<f64> = rows.iter().flat_map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(move |v| v / s)
        }).collect();
        let labels: Vec<usize> = (0..b).map(|i| ((seed >> (i * 2)) % 4) as usize).collect();
        let want = -labels.iter().enumerate().map(|(i, &l)| probs[i * 4 + l].ln()).sum::<f64>() / b as f64;
        let bce_want = -(0..b).map(|i| (0..4).map(|j| {
            let p = probs[i * 4 + j];
            if j == labels[i] { p.ln() } else { (1.0 - p).ln() }
        }).sum::<f64>()).sum::<f64>() / b as f64;
        let p = Tensor::matrix(b, 4, probs).unwrap();
        let t = one_hot(&labels, 4).unwrap();
        let got = tuning_loss(&p, &t, LossForm::Categorical).unwrap().item().unwrap();
        let got_bce = tuning_loss(&p, &t, LossForm::Bce).unwrap().item().unwrap();
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!((got_bce - bce_want).abs() < 1e-12);
    }

    #[test]
    fn confusion_accounts_for_every_sample(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40),
    ) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = metrics_from_predictions(&pred, &labels, 5).unwrap();
        prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), labels.len());
        let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        prop_assert!((m.overall_accuracy - correct as f64 / labels.len() as f64).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&m.mean_class_accuracy));
    }

    #[test]
    fn lr_schedule_stays_in_range(lr in 1e-5f64..1e-1, steps in 1usize..500) {
        let cfg = OptimConfig::new(lr, steps);
        let warmup = (cfg.warmup_fraction * steps as f64).round() as usize;
        let mut prev = 0.0;
        for s in 0..steps {
            let v = cfg.lr_at(s);
            prop_assert!((0.0..=lr * (1.0 + 1e-12)).contains(&v));
            if s < warmup {
                prop_assert!(v >= prev);
            } else if s > warmup {
                prop_assert!(v <= prev + 1e-15);
            }
            prev = v;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_keeps_clouds_normalized(seed in any::<u64>(), kind in 0usize..8, jitter in 0.0f64..0.5) {
        let cloud = generate_shape(ShapeKind::ALL[kind], 64, 0.01, seed).unwrap().with_label(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = Augment::random(&mut rng, jitter).apply(&cloud).unwrap();
        prop_assert_eq!(out.label, Some(kind));
        prop_assert_eq!(out.len(), 64);
        let c = out.centroid();
        prop_assert!(c.iter().all(|v| v.abs() < 1e-9));
        prop_assert!((out.max_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fps_and_knn_shapes(seed in any::<u64>(), n in 16usize..80, count in 1usize..8, k in 1usize..8) {
        let cloud = generate_shape(ShapeKind::Sphere, n, 0.0, seed).unwrap();
        let centers = fps(&cloud.points, count, 0).unwrap();
        let mut sorted = centers.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), count);
        let groups = knn_group(&cloud.points, &centers, k).unwrap();
        prop_assert_eq!(groups.len(), count);
        prop_assert!(groups.iter().all(|g| g.len() == k));
    }

    #[test]
    fn composed_prompts_place_the_class_token(m in 1usize..12, pos in 0usize..3, seed in any::<u64>()) {
        let vocab = Vocabulary::default();
        let cfg = TextEncoderConfig {
            width: 8,
            heads: 2,
            depth: 1,
            context_len: 16,
            mlp_ratio: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = TextEncoder::new(cfg, vocab.len(), GeluMode::Tanh, &mut rng).unwrap();
        let names = vec!["cube".to_string(), "night stand".to_string()];
        let position = InsertPosition::ALL[pos];
        let prompt = PromptLearner::new(&text, &vocab, &names, m, position, InitMode::Random, None, &mut rng).unwrap();
        let slot = match position {
            InsertPosition::Front => 0,
            InsertPosition::Middle => m / 2,
            InsertPosition::End => m,
        };
        prop_assert_eq!(prompt.class_slot(), slot);
        for j in 0..2 {
            let seq = prompt.compose(&text, j).unwrap();
            prop_assert_eq!(seq.class_index, Some(slot + 1));
            let d = 8;
            let class_row = &seq.embeddings.values()[(slot + 1) * d..(slot + 2) * d];
            prop_assert_eq!(class_row, prompt.class_embeddings.tensor().row(j));
        }
    }
}

#[test]
fn subsets_nest_and_leave_the_test_split_alone() {
    let ds = synthetic_dataset(&SyntheticConfig {
        train_per_class: 20,
        test_per_class: 3,
        points: 16,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let test_ids = ds.ids(Split::Test);
    let fractions = [0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0];
    let subsets: Vec<_> = fractions.iter().map(|&f| ds.fraction(f, 3).unwrap()).collect();
    for pair in subsets.windows(2) {
        let small = pair[0].ids(Split::Train);
        let big = pair[1].ids(Split::Train);
        assert!(small.iter().all(|id| big.contains(id)));
    }
    for (f, s) in fractions.iter().zip(&subsets) {
        assert_eq!(s.ids(Split::Test), test_ids);
        let mut ids = s.ids(Split::Train);
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n, "duplicates at fraction {f}");
        let want = ((f * 20.0) - 1e-9).ceil() as usize;
        assert!(s.class_counts(Split::Train).iter().all(|&c| c == want));
    }
    let shots: Vec<_> = [1, 2, 4, 8, 16].iter().map(|&k| ds.few_shot(k, 3).unwrap()).collect();
    for pair in shots.windows(2) {
        let small = pair[0].ids(Split::Train);
        assert!(small.iter().all(|id| pair[1].ids(Split::Train).contains(id)));
    }
    assert_eq!(shots[4].ids(Split::Train).len(), 16 * 8);
}

#[test]
fn point_clouds_from_every_generator_are_finite() {
    for kind in ShapeKind::ALL {
        let c: PointCloud = generate_shape(kind, 128, 0.01, 11).unwrap();
        assert!(c.points.iter().flatten().all(|v| v.is_finite()));
    }
}
