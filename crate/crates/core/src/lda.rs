//! Collapsed Gibbs sampling for LDA, used to pick labeled features without
//! looking at instance labels.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::knowledge::FeaturePool;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaConfig {
    /// Defaults to the number of classes when `None`.
    pub n_topics: Option<usize>,
    pub iterations: usize,
    /// Symmetric document-topic prior; `None` means 50 / T.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: None,
            iterations: 500,
            alpha: None,
            eta: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub n_topics: usize,
    pub alpha: f64,
    pub eta: f64,
    /// `[topic][word]`
    pub topic_word_counts: Vec<Vec<u32>>,
    pub topic_totals: Vec<u64>,
    /// `[doc][topic]`
    pub doc_topic_counts: Vec<Vec<u32>>,
    /// `[doc][token position]`, tokens expanded from counts in entry order.
    pub assignments: Vec<Vec<u16>>,
}

impl LdaModel {
    pub fn fit(corpus: &Corpus, config: &LdaConfig) -> Result<LdaModel> {
        let n_topics = config.n_topics.unwrap_or(corpus.n_classes());
        let alpha = config.alpha.unwrap_or(50.0 / n_topics as f64);
        fit(corpus, n_topics, config.iterations, alpha, config.eta, config.seed)
    }

    pub fn n_words(&self) -> usize {
        self.topic_word_counts.first().map_or(0, Vec::len)
    }

    /// Smoothed topic-word distribution `(n_tw + eta) / (n_t + V eta)`.
    pub fn phi(&self) -> Vec<Vec<f64>> {
        let v = self.n_words() as f64;
        self.topic_word_counts
            .iter()
            .zip(&self.topic_totals)
            .map(|(row, &total)| {
                let denom = total as f64 + v * self.eta;
                row.iter().map(|&n| (n as f64 + self.eta) / denom).collect()
            })
            .collect()
    }

    /// Word ids of topic `t` by descending phi, ties by id.
    pub fn top_words(&self, t: usize, n: usize) -> Vec<(usize, f64)> {
        let phi = &self.phi()[t];
        let mut ids: Vec<usize> = (0..phi.len()).collect();
        ids.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
        ids.into_iter().take(n).map(|w| (w, phi[w])).collect()
    }

    /// TSV dump: `topic<TAB>rank<TAB>word<TAB>phi`.
    pub fn top_words_tsv(&self, corpus: &Corpus, n: usize) -> String {
        let mut out = String::new();
        for t in 0..self.n_topics {
            for (rank, (w, p)) in self.top_words(t, n).into_iter().enumerate() {
                let _ = writeln!(out, "{t}\t{}\t{}\t{p}", rank + 1, corpus.vocabulary().term(w));
            }
        }
        out
    }

    /// Class carrying the largest share of each topic's token assignments.
    /// Reads document labels, standing in for a human naming each topic.
    pub fn topic_classes(&self, corpus: &Corpus) -> Vec<usize> {
        (0..self.n_topics)
            .map(|t| {
                let mut mass = vec![0u64; corpus.n_classes()];
                for (d, counts) in corpus.documents().iter().zip(&self.doc_topic_counts) {
                    mass[d.label] += counts[t] as u64;
                }
                (0..mass.len()).fold(0, |b, c| if mass[c] > mass[b] { c } else { b })
            })
            .collect()
    }
}

pub fn fit(corpus: &Corpus, n_topics: usize, iterations: usize, alpha: f64, eta: f64, seed: u64) -> Result<LdaModel> {
    if n_topics == 0 || n_topics > u16::MAX as usize {
        return Err(Error::Config(format!("topic count {n_topics} out of range")));
    }
    if iterations == 0 {
        return Err(Error::Config("LDA needs at least one iteration".into()));
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return Err(Error::Config("LDA priors must be positive".into()));
    }
    let tokens: Vec<Vec<u32>> = corpus
        .documents()
        .iter()
        .map(|d| {
            d.entries()
                .iter()
                .flat_map(|&(w, c)| std::iter::repeat_n(w as u32, c as usize))
                .collect()
        })
        .collect();
    if tokens.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let n_words = corpus.n_features();
    let mut rng = rng::seeded(seed);
    let mut model = LdaModel {
        n_topics,
        alpha,
        eta,
        topic_word_counts: vec![vec![0; n_words]; n_topics],
        topic_totals: vec![0; n_topics],
        doc_topic_counts: vec![vec![0; n_topics]; tokens.len()],
        assignments: Vec::with_capacity(tokens.len()),
    };
    for (d, doc) in tokens.iter().enumerate() {
        let z: Vec<u16> = doc.iter().map(|_| rng.gen_range(0..n_topics) as u16).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            model.topic_word_counts[t as usize][w as usize] += 1;
            model.topic_totals[t as usize] += 1;
            model.doc_topic_counts[d][t as usize] += 1;
        }
        model.assignments.push(z);
    }

    let v_eta = n_words as f64 * eta;
    let mut weights = vec![0.0; n_topics];
    for _ in 0..iterations {
        for (d, doc) in tokens.iter().enumerate() {
            for (pos, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = model.assignments[d][pos] as usize;
                model.topic_word_counts[old][w] -= 1;
                model.topic_totals[old] -= 1;
                model.doc_topic_counts[d][old] -= 1;

                let mut total = 0.0;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (model.doc_topic_counts[d][t] as f64 + alpha) * (model.topic_word_counts[t][w] as f64 + eta)
                        / (model.topic_totals[t] as f64 + v_eta);
                    total += *wt;
                }
                let mut u = rng.gen::<f64>() * total;
                let mut new = n_topics - 1;
                for (t, wt) in weights.iter().enumerate() {
                    if u < *wt {
                        new = t;
                        break;
                    }
                    u -= wt;
                }

                model.topic_word_counts[new][w] += 1;
                model.topic_totals[new] += 1;
                model.doc_topic_counts[d][new] += 1;
                model.assignments[d][pos] = new as u16;
            }
        }
    }
    Ok(model)
}

/// Result of turning topics into a class-keyed feature pool.
#[derive(Debug, Clone)]
pub struct LdaPool {
    pub pool: FeaturePool,
    pub topic_classes: Vec<usize>,
    /// Classes that no topic was mapped to.
    pub unmapped_classes: Vec<usize>,
}

/// Top `per_topic` words of each topic, pooled under the class each topic
/// maps to. Topics sharing a class merge; a word keeps its best phi.
pub fn lda_feature_pool(model: &LdaModel, corpus: &Corpus, per_topic: usize) -> Result<LdaPool> {
    if per_topic == 0 {
        return Err(Error::Input("per-topic feature count must be at least 1".into()));
    }
    if model.n_words() != corpus.n_features() || model.doc_topic_counts.len() != corpus.len() {
        return Err(Error::Input("LDA model was fitted on a different corpus".into()));
    }
    let topic_classes = model.topic_classes(corpus);
    let mut merged: Vec<HashMap<usize, f64>> = vec![HashMap::new(); corpus.n_classes()];
    for (t, &c) in topic_classes.iter().enumerate() {
        for (w, p) in model.top_words(t, per_topic) {
            let e = merged[c].entry(w).or_insert(p);
            *e = e.max(p);
        }
    }
    let mapped_topics: Vec<usize> = (0..corpus.n_classes())
        .map(|c| topic_classes.iter().filter(|&&x| x == c).count())
        .collect();
    let unmapped_classes = (0..corpus.n_classes()).filter(|&c| mapped_topics[c] == 0).collect();
    let lists: Vec<Vec<(usize, f64)>> = merged.into_iter().map(|m| m.into_iter().collect()).collect();
    let capacity = mapped_topics.iter().max().copied().unwrap_or(1).max(1) * per_topic;
    Ok(LdaPool {
        pool: FeaturePool::new(lists, capacity),
        topic_classes,
        unmapped_classes,
    })
}
