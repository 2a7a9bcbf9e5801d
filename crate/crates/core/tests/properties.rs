mod common;

use std::collections::HashSet;

use gefl_core::corpus::{Corpus, SparseDocument};
use gefl_core::knowledge::{self, ReferenceDistribution};
use gefl_core::model::ModelParameters;
use gefl_core::objective::{kl, AbsentFeaturePolicy, Method, Objective};
use gefl_core::optimizer::{minimize, OptimizerConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    })
}

fn distribution_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|n| (distribution(n), distribution(n)))
}

fn instance(seed: u64, method: Method, beta: f64) -> common::Instance {
    common::random_instance(&mut ChaCha8Rng::seed_from_u64(seed), method, beta)
}

fn labeled_corpus() -> impl Strategy<Value = Corpus> {
    (2usize..4, 2usize..8).prop_flat_map(|(n_classes, n_features)| {
        prop::collection::vec(
            (prop::collection::btree_map(0..n_features, 1u32..4, 0..n_features), 0..n_classes),
            1..30,
        )
        .prop_map(move |docs| {
            let docs = docs
                .into_iter()
                .enumerate()
                .map(|(i, (entries, label))| SparseDocument::new(entries, label, format!("d{i}")))
                .collect();
            Corpus::new(docs, common::terms(n_features), common::class_names(n_classes)).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_identity((p, q) in distribution_pair()) {
        prop_assert!(kl(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn predictions_are_distributions(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let inst = instance(seed, Method::GeFl, 0.0);
        let params = ModelParameters { theta: inst.theta * scale, sigma: 1.0 };
        for d in inst.corpus.documents() {
            let p = params.predict(d).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn conditionals_match_brute_force(seed in any::<u64>()) {
        let inst = instance(seed, Method::GeFl, 0.0);
        let params = ModelParameters { theta: inst.theta.clone(), sigma: 1.0 };
        let c = &inst.corpus;
        let preds: Vec<Vec<f64>> = c.documents().iter().map(|d| {
            let mut s: Vec<f64> = (0..c.n_classes())
                .map(|y| d.entries().iter().map(|&(i, x)| inst.theta[[y, i]] * x as f64).sum())
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            s.iter_mut().for_each(|v| *v = v.exp() / z);
            s
        }).collect();
        for k in 0..c.n_features() {
            let docs: Vec<usize> = (0..c.len()).filter(|&i| c.documents()[i].contains(k)).collect();
            match params.feature_conditional(c, k) {
                Ok((q, n)) => {
                    prop_assert_eq!(n, docs.len());
                    for y in 0..c.n_classes() {
                        let expected = docs.iter().map(|&i| preds[i][y]).sum::<f64>() / n as f64;
                        prop_assert!((q[y] - expected).abs() < 1e-12);
                    }
                }
                Err(_) => prop_assert!(docs.is_empty()),
            }
        }
        let marginal = params.class_marginal(c).unwrap();
        for y in 0..c.n_classes() {
            let expected = preds.iter().map(|p| p[y]).sum::<f64>() / c.len() as f64;
            prop_assert!((marginal[y] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), m in 0usize..4, beta in 0.0f64..10.0) {
        let method = Method::ALL[m];
        let inst = instance(seed, method, beta);
        let obj = Objective::new(&inst.corpus, &inst.labeled, &inst.config, AbsentFeaturePolicy::Skip).unwrap();
        let value = |t: &Array2<f64>| obj.evaluate_view(t.view(), inst.sigma).unwrap().total;
        let g = obj.evaluate_view(inst.theta.view(), inst.sigma).unwrap().gradient;
        let h = 1e-5;
        for (idx, &a) in g.indexed_iter() {
            let (mut plus, mut minus) = (inst.theta.clone(), inst.theta.clone());
            plus[idx] += h;
            minus[idx] -= h;
            let n = (value(&plus) - value(&minus)) / (2.0 * h);
            prop_assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4, "{method} {idx:?}: {a} vs {n}");
        }
    }

    #[test]
    fn objective_decomposes(seed in any::<u64>(), m in 0usize..4, beta in 0.0f64..10.0) {
        let method = Method::ALL[m];
        let inst = instance(seed, method, beta);
        let obj = Objective::new(&inst.corpus, &inst.labeled, &inst.config, AbsentFeaturePolicy::Skip).unwrap();
        let r = obj.evaluate_view(inst.theta.view(), inst.sigma).unwrap();
        prop_assert_eq!(obj.lambda(), beta * inst.labeled.len() as f64);
        let l2 = inst.theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * inst.sigma * inst.sigma);
        prop_assert!((r.l2 - l2).abs() < 1e-12);
        prop_assert!((r.total - (r.ge_fl_kl + r.l2 + r.regularizer)).abs() < 1e-12);

        let params = ModelParameters { theta: inst.theta.clone(), sigma: inst.sigma };
        let mut ge = 0.0;
        for (k, target) in inst.labeled.entries() {
            let (q, _) = params.feature_conditional(&inst.corpus, *k).unwrap();
            ge += kl(target.probs(), &q).unwrap();
        }
        prop_assert!((r.ge_fl_kl - ge).abs() < 1e-10);

        let marginal = params.class_marginal(&inst.corpus).unwrap();
        let expected = match method {
            Method::GeFl => 0.0,
            Method::Neutral => {
                let set = inst.config.neutral.as_ref().unwrap();
                set.entries().iter().map(|(k, u)| {
                    kl(u.probs(), &params.feature_conditional(&inst.corpus, *k).unwrap().0).unwrap()
                }).sum()
            }
            Method::MaxEntropy => obj.lambda() * marginal.iter().map(|p| p * p.ln()).sum::<f64>(),
            Method::KlDivergence => {
                obj.lambda() * kl(inst.config.reference.as_ref().unwrap().probs(), &marginal).unwrap()
            }
        };
        prop_assert!((r.regularizer - expected).abs() < 1e-10, "{method}: {} vs {expected}", r.regularizer);
    }

    #[test]
    fn lbfgs_never_increases_the_objective(seed in any::<u64>(), m in 0usize..4) {
        let inst = instance(seed, Method::ALL[m], 5.0);
        let obj = Objective::new(&inst.corpus, &inst.labeled, &inst.config, AbsentFeaturePolicy::Skip).unwrap();
        let shape = obj.shape();
        let f = |x: &[f64]| {
            let t = ndarray::ArrayView2::from_shape(shape, x).unwrap();
            let r = obj.evaluate_view(t, inst.sigma)?;
            Ok((r.total, r.gradient.into_iter().collect()))
        };
        let config = OptimizerConfig { max_iterations: 50, ..OptimizerConfig::default() };
        let (_, trace) = minimize(f, vec![0.0; shape.0 * shape.1], &config).unwrap();
        for w in trace.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn mutual_information_is_bounded(corpus in labeled_corpus()) {
        let h: f64 = -corpus.label_distribution().iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        for mi in knowledge::mutual_information(&corpus) {
            prop_assert!(mi >= -1e-12 && mi <= h + 1e-9, "{mi} vs H(Y) = {h}");
        }
    }

    #[test]
    fn unbalance_removes_the_requested_share(corpus in labeled_corpus(), frac in 0.0f64..0.99, seed in any::<u64>()) {
        let before = corpus.label_counts();
        let Some(target) = (0..corpus.n_classes()).find(|&c| before[c] > 0) else { return Ok(()); };
        let after = corpus.unbalance(target, frac, seed).unwrap().label_counts();
        prop_assert_eq!(after[target], before[target] - (frac * before[target] as f64 + 1e-9).floor() as usize);
        for c in (0..corpus.n_classes()).filter(|&c| c != target) {
            prop_assert_eq!(after[c], before[c]);
        }
    }

    #[test]
    fn folds_partition_the_corpus(corpus in labeled_corpus(), k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(corpus.len() >= k);
        let folds = corpus.cv_folds(k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = HashSet::new();
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), corpus.len());
            prop_assert!(f.test.len() >= corpus.len() / k && f.test.len() <= corpus.len() / k + 1);
            for d in f.test.documents() {
                prop_assert!(seen.insert(d.source.clone()));
                prop_assert!(f.train.documents().iter().all(|t| t.source != d.source));
            }
        }
        prop_assert_eq!(seen.len(), corpus.len());
    }

    #[test]
    fn corpus_file_round_trips(corpus in labeled_corpus()) {
        let text = corpus.to_text(&[("seed".into(), "1".into())]);
        prop_assert_eq!(Corpus::parse(&text).unwrap(), corpus);
    }

    #[test]
    fn reference_heuristic_is_a_distribution(n in 2usize..8, picks in prop::collection::btree_set(0usize..8, 1..8)) {
        let assoc: Vec<usize> = picks.into_iter().filter(|&c| c < n).collect();
        prop_assume!(!assoc.is_empty());
        let r: ReferenceDistribution = knowledge::reference_heuristic(&assoc, n).unwrap();
        prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if assoc.len() < n {
            let each = r.probs()[assoc[0]];
            prop_assert!(assoc.iter().all(|&c| (r.probs()[c] - each).abs() < 1e-15));
            prop_assert!((each * assoc.len() as f64 - knowledge::ASSOCIATED_MASS).abs() < 1e-12);
        }
    }
}
