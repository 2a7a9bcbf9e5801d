//! Prior knowledge handed to the trainer: labeled features with reference
//! class distributions, neutral features, and information-gain feature pools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;

/// Mass given to the associated classes by [`reference_heuristic`].
pub const ASSOCIATED_MASS: f64 = 0.9;
/// Mass spread over the remaining classes.
pub const OTHER_MASS: f64 = 0.1;

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution(Vec<f64>);

impl ReferenceDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!("invalid distribution {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("distribution {probs:?} sums to {total}")));
        }
        Ok(ReferenceDistribution(probs))
    }

    /// Normalizes non-negative weights, e.g. a class ratio like `1:2`.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Input(format!("invalid class weights {weights:?}")));
        }
        Ok(ReferenceDistribution(weights.iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n_classes: usize) -> Self {
        ReferenceDistribution(vec![1.0 / n_classes as f64; n_classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reference distribution for a feature associated with `assoc_classes`:
/// 0.9/n on each associated class, 0.1/(|C| - n) on the rest, uniform when
/// every class is associated.
pub fn reference_heuristic(assoc_classes: &[usize], n_classes: usize) -> Result<ReferenceDistribution> {
    let mut assoc = assoc_classes.to_vec();
    assoc.sort_unstable();
    assoc.dedup();
    if assoc.is_empty() {
        return Err(Error::Input("feature has no associated class".into()));
    }
    if let Some(&c) = assoc.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidClass(c));
    }
    let n = assoc.len();
    if n == n_classes {
        return Ok(ReferenceDistribution::uniform(n_classes));
    }
    let on = ASSOCIATED_MASS / n as f64;
    let off = OTHER_MASS / (n_classes - n) as f64;
    let probs = (0..n_classes)
        .map(|c| if assoc.binary_search(&c).is_ok() { on } else { off })
        .collect();
    Ok(ReferenceDistribution(probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Labeled,
    Neutral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    entries: Vec<(usize, ReferenceDistribution)>,
    role: FeatureRole,
}

impl LabeledFeatureSet {
    pub fn new(entries: Vec<(usize, ReferenceDistribution)>, role: FeatureRole) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (id, dist) in &entries {
            if !seen.insert(*id) {
                return Err(Error::Input(format!("feature {id} listed twice")));
            }
            if role == FeatureRole::Neutral && dist != &ReferenceDistribution::uniform(dist.len()) {
                return Err(Error::Input(format!("neutral feature {id} must carry the uniform distribution")));
            }
        }
        Ok(LabeledFeatureSet { entries, role })
    }

    pub fn empty(role: FeatureRole) -> Self {
        LabeledFeatureSet {
            entries: Vec::new(),
            role,
        }
    }

    pub fn entries(&self) -> &[(usize, ReferenceDistribution)] {
        &self.entries
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks ids and distribution lengths against a corpus.
    pub fn validate_for(&self, corpus: &Corpus) -> Result<()> {
        for (id, dist) in &self.entries {
            if *id >= corpus.n_features() {
                return Err(Error::Input(format!("feature id {id} beyond vocabulary")));
            }
            if dist.len() != corpus.n_classes() {
                return Err(Error::Input(format!(
                    "feature {} carries {} probabilities for {} classes",
                    corpus.vocabulary().term(*id),
                    dist.len(),
                    corpus.n_classes()
                )));
            }
        }
        Ok(())
    }
}

/// Per-class ranked candidate features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    per_class: Vec<Vec<(usize, f64)>>,
    requested: usize,
}

impl FeaturePool {
    /// Sorts each class list by descending score (ties by feature id) and
    /// truncates it to `requested`.
    pub fn new(mut per_class: Vec<Vec<(usize, f64)>>, requested: usize) -> Self {
        for list in &mut per_class {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            list.truncate(requested);
        }
        FeaturePool { per_class, requested }
    }

    pub fn class(&self, c: usize) -> &[(usize, f64)] {
        &self.per_class[c]
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn requested(&self) -> usize {
        self.requested
    }

    /// Classes whose list came up short of the requested size.
    pub fn underfilled(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].len() < self.requested)
            .collect()
    }

    /// TSV dump: `class<TAB>rank<TAB>token<TAB>score`.
    pub fn to_tsv(&self, corpus: &Corpus) -> String {
        let mut out = String::new();
        for (c, list) in self.per_class.iter().enumerate() {
            for (rank, (id, score)) in list.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    corpus.classes()[c],
                    rank + 1,
                    corpus.vocabulary().term(*id),
                    score
                );
            }
        }
        out
    }
}

/// Mutual information (nats) between binary occurrence of each feature and
/// the class label, over documents.
pub fn mutual_information(corpus: &Corpus) -> Vec<f64> {
    let n_classes = corpus.n_classes();
    let n = corpus.len() as f64;
    let class_counts = corpus.label_counts();
    let joint = occurrence_by_class(corpus);
    joint
        .iter()
        .map(|row| {
            let df: usize = row.iter().sum();
            let mut mi = 0.0;
            for c in 0..n_classes {
                let p_c = class_counts[c] as f64 / n;
                for (n_fc, n_f) in [(row[c], df), (class_counts[c] - row[c], corpus.len() - df)] {
                    if n_fc > 0 {
                        let p_fc = n_fc as f64 / n;
                        mi += p_fc * (p_fc / (n_f as f64 / n * p_c)).ln();
                    }
                }
            }
            mi.max(0.0)
        })
        .collect()
}

/// `[feature][class]` counts of documents containing the feature.
fn occurrence_by_class(corpus: &Corpus) -> Vec<Vec<usize>> {
    let mut joint = vec![vec![0usize; corpus.n_classes()]; corpus.n_features()];
    for d in corpus.documents() {
        for &(id, _) in d.entries() {
            joint[id][d.label] += 1;
        }
    }
    joint
}

/// Ranks features by mutual information with the label and assigns each one
/// to the class maximizing p(class | feature occurs), lower id on ties.
/// Features absent from `corpus` are not candidates.
pub fn info_gain_pool(corpus: &Corpus, per_class: usize) -> Result<FeaturePool> {
    if per_class == 0 {
        return Err(Error::Input("pool size must be at least 1".into()));
    }
    let mi = mutual_information(corpus);
    let joint = occurrence_by_class(corpus);
    let mut lists = vec![Vec::new(); corpus.n_classes()];
    for (id, row) in joint.iter().enumerate() {
        if row.iter().all(|&n| n == 0) {
            continue;
        }
        // p(c | f) is proportional to the joint count
        let best = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
        lists[best].push((id, mi[id]));
    }
    Ok(FeaturePool::new(lists, per_class))
}

/// The `count` features with highest document frequency, each pinned to the
/// uniform class distribution.
pub fn neutral_features(corpus: &Corpus, count: usize) -> Result<LabeledFeatureSet> {
    if count > corpus.n_features() {
        return Err(Error::Input(format!(
            "{count} neutral features requested from a vocabulary of {}",
            corpus.n_features()
        )));
    }
    let df = corpus.document_frequency();
    let mut ids: Vec<usize> = (0..corpus.n_features()).collect();
    ids.sort_by(|&a, &b| df[b].cmp(&df[a]).then(a.cmp(&b)));
    let uniform = ReferenceDistribution::uniform(corpus.n_classes());
    LabeledFeatureSet::new(
        ids.into_iter().take(count).map(|id| (id, uniform.clone())).collect(),
        FeatureRole::Neutral,
    )
}

/// Draws `per_class_counts[c]` features without replacement from each class
/// list of the pool. A feature drawn for several classes is associated with
/// all of them.
pub fn draw_labeled(pool: &FeaturePool, per_class_counts: &[usize], seed: u64) -> Result<LabeledFeatureSet> {
    if per_class_counts.len() != pool.n_classes() {
        return Err(Error::Input(format!(
            "{} per-class counts given for {} classes",
            per_class_counts.len(),
            pool.n_classes()
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut assoc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (c, &want) in per_class_counts.iter().enumerate() {
        let list = pool.class(c);
        if want > list.len() {
            return Err(Error::PoolUnderflow {
                class: c,
                requested: want,
                available: list.len(),
            });
        }
        let mut picks = index::sample(&mut rng, list.len(), want).into_vec();
        picks.sort_unstable();
        for p in picks {
            let id = list[p].0;
            let classes = assoc.entry(id).or_insert_with(|| {
                order.push(id);
                Vec::new()
            });
            classes.push(c);
        }
    }
    let entries = order
        .into_iter()
        .map(|id| Ok((id, reference_heuristic(&assoc[&id], pool.n_classes())?)))
        .collect::<Result<Vec<_>>>()?;
    LabeledFeatureSet::new(entries, FeatureRole::Labeled)
}

/// Marker used in the class column of knowledge files for neutral features.
pub const NEUTRAL_MARKER: &str = "@neutral";

/// Serializes labeled and neutral features as
/// `token<TAB>class<TAB>p0,p1,...` lines.
pub fn knowledge_to_text(
    corpus: &Corpus,
    labeled: &LabeledFeatureSet,
    neutral: &LabeledFeatureSet,
    provenance: &[(String, String)],
) -> String {
    let mut out = String::from("#gefl-knowledge v1\n");
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k}={v}");
    }
    for (id, dist) in labeled.entries() {
        // the dominant class names the line; the distribution column is authoritative
        let top = dist.probs().iter().enumerate().fold(0, |b, (c, p)| if *p > dist.probs()[b] { c } else { b });
        let probs: Vec<String> = dist.probs().iter().map(|p| p.to_string()).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            corpus.vocabulary().term(*id),
            corpus.classes()[top],
            probs.join(",")
        );
    }
    for (id, _) in neutral.entries() {
        let _ = writeln!(out, "{}\t{NEUTRAL_MARKER}", corpus.vocabulary().term(*id));
    }
    out
}

/// Parses a knowledge file against `corpus`. Lines without a distribution
/// column get [`reference_heuristic`]; repeated tokens merge their classes.
pub fn knowledge_from_text(corpus: &Corpus, text: &str) -> Result<(LabeledFeatureSet, LabeledFeatureSet)> {
    let mut explicit: Vec<(usize, ReferenceDistribution)> = Vec::new();
    let mut assoc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut assoc_order = Vec::new();
    let mut neutral = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(bad("expected `token<TAB>class[<TAB>distribution]`".into()));
        }
        let id = corpus
            .vocabulary()
            .id(cols[0])
            .ok_or_else(|| bad(format!("token {:?} not in vocabulary", cols[0])))?;
        if cols[1] == NEUTRAL_MARKER {
            neutral.push((id, ReferenceDistribution::uniform(corpus.n_classes())));
            continue;
        }
        let class = corpus
            .class_id(cols[1])
            .ok_or_else(|| bad(format!("unknown class {:?}", cols[1])))?;
        match cols.get(2).filter(|s| !s.trim().is_empty()) {
            Some(dist) => {
                let probs = dist
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("bad distribution: {e}")))?;
                if probs.len() != corpus.n_classes() {
                    return Err(bad(format!("distribution has {} entries", probs.len())));
                }
                explicit.push((id, ReferenceDistribution::new(probs).map_err(|e| bad(e.to_string()))?));
            }
            None => {
                assoc
                    .entry(id)
                    .or_insert_with(|| {
                        assoc_order.push(id);
                        Vec::new()
                    })
                    .push(class);
            }
        }
    }
    for id in assoc_order {
        explicit.push((id, reference_heuristic(&assoc[&id], corpus.n_classes())?));
    }
    Ok((
        LabeledFeatureSet::new(explicit, FeatureRole::Labeled)?,
        LabeledFeatureSet::new(neutral, FeatureRole::Neutral)?,
    ))
}

pub fn load_knowledge(corpus: &Corpus, path: &Path) -> Result<(LabeledFeatureSet, LabeledFeatureSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    knowledge_from_text(corpus, &text)
}
