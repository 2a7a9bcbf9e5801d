#![allow(dead_code)]

use gefl_core::corpus::{Corpus, SparseDocument, Vocabulary};
use gefl_core::knowledge::{FeatureRole, LabeledFeatureSet, ReferenceDistribution};
use gefl_core::objective::{Method, RegularizationConfig};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn terms(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| format!("w{i:02}")).collect()).unwrap()
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("c{c}")).collect()
}

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// A small corpus with labeled features, a neutral set and a regularizer
/// configuration for `method`.
pub struct Instance {
    pub corpus: Corpus,
    pub labeled: LabeledFeatureSet,
    pub config: RegularizationConfig,
    pub theta: Array2<f64>,
    pub sigma: f64,
}

pub fn random_instance<R: Rng>(rng: &mut R, method: Method, beta: f64) -> Instance {
    let n_classes = rng.gen_range(2..=4);
    let n_features = rng.gen_range(2..=10);
    let n_docs = rng.gen_range(1..=5);
    let docs: Vec<SparseDocument> = (0..n_docs)
        .map(|d| {
            let k = rng.gen_range(1..=n_features);
            let mut ids: Vec<usize> = (0..n_features).collect();
            ids.shuffle(rng);
            let pairs: Vec<(usize, u32)> = ids[..k].iter().map(|&i| (i, rng.gen_range(1..=3))).collect();
            SparseDocument::new(pairs, rng.gen_range(0..n_classes), format!("d{d}"))
        })
        .collect();
    let corpus = Corpus::new(docs, terms(n_features), class_names(n_classes)).unwrap();
    let mut present: Vec<usize> = (0..n_features)
        .filter(|&k| corpus.documents().iter().any(|d| d.contains(k)))
        .collect();
    present.shuffle(rng);
    let n_labeled = rng.gen_range(1..=present.len().min(4));
    let labeled = LabeledFeatureSet::new(
        present[..n_labeled]
            .iter()
            .map(|&k| (k, ReferenceDistribution::new(random_distribution(rng, n_classes)).unwrap()))
            .collect(),
        FeatureRole::Labeled,
    )
    .unwrap();
    let n_neutral = rng.gen_range(1..=present.len().min(3));
    let neutral = LabeledFeatureSet::new(
        present[present.len() - n_neutral..]
            .iter()
            .map(|&k| (k, ReferenceDistribution::uniform(n_classes)))
            .collect(),
        FeatureRole::Neutral,
    )
    .unwrap();
    let config = RegularizationConfig {
        method,
        beta,
        reference: Some(ReferenceDistribution::new(random_distribution(rng, n_classes)).unwrap()),
        neutral: Some(neutral),
    };
    let theta = Array2::from_shape_fn((n_classes, n_features), |_| rng.gen_range(-1.0..=1.0));
    let sigma = rng.gen_range(0.5..2.0);
    Instance {
        corpus,
        labeled,
        config,
        theta,
        sigma,
    }
}

/// Two classes, each drawing every token from its own block of words, mixed
/// with a small share of the other block.
pub fn planted_topics<R: Rng>(rng: &mut R, docs_per_topic: usize, words_per_topic: usize) -> Corpus {
    let mut docs = Vec::new();
    for t in 0..2 {
        for i in 0..docs_per_topic {
            let mut counts = vec![0u32; 2 * words_per_topic];
            for _ in 0..30 {
                let topic = if rng.gen::<f64>() < 0.9 { t } else { 1 - t };
                counts[topic * words_per_topic + rng.gen_range(0..words_per_topic)] += 1;
            }
            let pairs = counts.iter().enumerate().filter(|(_, &n)| n > 0).map(|(w, &n)| (w, n));
            docs.push(SparseDocument::new(pairs, t, format!("{t}-{i}")));
        }
    }
    Corpus::new(docs, terms(2 * words_per_topic), class_names(2)).unwrap()
}
