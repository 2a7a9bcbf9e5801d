//! Corpus ingestion and derived corpora.
//!
//! Text is lowercased and split on runs of non-alphabetic characters; tokens
//! shorter than two characters, stopwords and words below a document-frequency
//! floor are dropped. Documents are stored as sorted sparse count vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub type Stopwords = HashSet<String>;

/// The English stopword list shipped with the crate.
pub fn default_stopwords() -> Stopwords {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn read_stopwords(path: &Path) -> Result<Stopwords> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

fn parse_stopwords(text: &str) -> Stopwords {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Lowercase alphabetic runs of length >= 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary term {t:?}")));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> &str {
        &self.terms[id]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseDocument {
    entries: Vec<(usize, u32)>,
    /// Gold class. Only evaluation and knowledge simulation read it.
    pub label: usize,
    pub source: String,
}

impl SparseDocument {
    /// Builds a document from arbitrary (id, count) pairs; duplicates are summed
    /// and zero counts dropped.
    pub fn new(pairs: impl IntoIterator<Item = (usize, u32)>, label: usize, source: impl Into<String>) -> Self {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for (id, c) in pairs {
            if c > 0 {
                *counts.entry(id).or_default() += c;
            }
        }
        SparseDocument {
            entries: counts.into_iter().collect(),
            label,
            source: source.into(),
        }
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.entries.binary_search_by_key(&feature, |e| e.0).is_ok()
    }

    pub fn token_count(&self) -> usize {
        self.entries.iter().map(|e| e.1 as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<SparseDocument>,
    vocabulary: Vocabulary,
    classes: Vec<String>,
}

/// One cross-validation split.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: Corpus,
    pub test: Corpus,
}

impl Corpus {
    pub fn new(documents: Vec<SparseDocument>, vocabulary: Vocabulary, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::TooFewClasses(classes.len()));
        }
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for d in &documents {
            if d.label >= classes.len() {
                return Err(Error::InvalidClass(d.label));
            }
            if let Some(&(id, _)) = d.entries.last() {
                if id >= vocabulary.len() {
                    return Err(Error::Input(format!(
                        "document {} references feature {id} beyond vocabulary size {}",
                        d.source,
                        vocabulary.len()
                    )));
                }
            }
        }
        Ok(Corpus {
            documents,
            vocabulary,
            classes,
        })
    }

    /// Builds a corpus from tokenized documents labeled by class name.
    ///
    /// Classes are ordered lexicographically. The vocabulary keeps tokens that
    /// are not stopwords and occur in at least `min_count` documents, ordered
    /// by descending document frequency then lexicographically.
    pub fn from_tokens(
        docs: Vec<(String, String, Vec<String>)>,
        stopwords: &Stopwords,
        min_count: usize,
    ) -> Result<Self> {
        let classes: Vec<String> = docs
            .iter()
            .map(|d| d.0.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() < 2 {
            return Err(Error::TooFewClasses(classes.len()));
        }
        let class_id: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

        let mut df: HashMap<&str, usize> = HashMap::new();
        for (_, _, tokens) in &docs {
            let distinct: HashSet<&str> = tokens
                .iter()
                .map(String::as_str)
                .filter(|t| !stopwords.contains(*t))
                .collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut terms: Vec<(&str, usize)> = df.into_iter().filter(|&(_, n)| n >= min_count.max(1)).collect();
        terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if terms.is_empty() || docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocabulary = Vocabulary::new(terms.iter().map(|t| t.0.to_string()).collect())?;

        let documents = docs
            .iter()
            .map(|(class, source, tokens)| {
                let pairs = tokens.iter().filter_map(|t| vocabulary.id(t)).map(|id| (id, 1));
                SparseDocument::new(pairs, class_id[class.as_str()], source.clone())
            })
            .collect();
        Corpus::new(documents, vocabulary, classes)
    }

    pub fn documents(&self) -> &[SparseDocument] {
        &self.documents
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for d in &self.documents {
            counts[d.label] += 1;
        }
        counts
    }

    /// Label proportions over the documents.
    pub fn label_distribution(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.label_counts().into_iter().map(|c| c as f64 / n).collect()
    }

    /// Number of documents containing each feature.
    pub fn document_frequency(&self) -> Vec<usize> {
        let mut df = vec![0; self.n_features()];
        for d in &self.documents {
            for &(id, _) in &d.entries {
                df[id] += 1;
            }
        }
        df
    }

    /// A corpus over the documents at `indices`, sharing vocabulary and classes.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
            classes: self.classes.clone(),
        }
    }

    /// Removes `floor(remove_fraction * n)` documents of `target_class`,
    /// chosen uniformly at random under `seed`. Survivors keep their order.
    pub fn unbalance(&self, target_class: usize, remove_fraction: f64, seed: u64) -> Result<Corpus> {
        if target_class >= self.n_classes() {
            return Err(Error::InvalidClass(target_class));
        }
        if !(0.0..1.0).contains(&remove_fraction) {
            return Err(Error::Input(format!("remove fraction {remove_fraction} outside [0, 1)")));
        }
        let mut targets: Vec<usize> = (0..self.len()).filter(|&i| self.documents[i].label == target_class).collect();
        if targets.is_empty() {
            return Err(Error::Input(format!("no documents of class {target_class}")));
        }
        // the epsilon keeps e.g. 0.29 * 100 from flooring to 28
        let n_remove = (remove_fraction * targets.len() as f64 + 1e-9).floor() as usize;
        targets.shuffle(&mut rng::seeded(seed));
        let removed: HashSet<usize> = targets[..n_remove].iter().copied().collect();
        let keep: Vec<usize> = (0..self.len()).filter(|i| !removed.contains(i)).collect();
        Ok(self.subset(&keep))
    }

    /// Shuffled k-fold partition. Test folds differ in size by at most one
    /// and the first `n % k` folds take the extra document.
    pub fn cv_folds(&self, k: usize, seed: u64) -> Result<Vec<Fold>> {
        if k < 2 {
            return Err(Error::Input(format!("need at least 2 folds, got {k}")));
        }
        if k > self.len() {
            return Err(Error::Input(format!("{k} folds requested for {} documents", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::seeded(seed));
        let base = self.len() / k;
        let extra = self.len() % k;
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let size = base + usize::from(f < extra);
            let mut test: Vec<usize> = order[start..start + size].to_vec();
            test.sort_unstable();
            let in_test: HashSet<usize> = test.iter().copied().collect();
            let train: Vec<usize> = (0..self.len()).filter(|i| !in_test.contains(i)).collect();
            folds.push(Fold {
                train: self.subset(&train),
                test: self.subset(&test),
            });
            start += size;
        }
        Ok(folds)
    }

    /// Text serialization with optional `key=value` provenance comments.
    pub fn to_text(&self, provenance: &[(String, String)]) -> String {
        let mut out = String::from("#gefl-corpus v1\n");
        for (k, v) in provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "classes\t{}", self.classes.len());
        for c in &self.classes {
            let _ = writeln!(out, "{c}");
        }
        let _ = writeln!(out, "vocab\t{}", self.vocabulary.len());
        for t in self.vocabulary.terms() {
            let _ = writeln!(out, "{t}");
        }
        let _ = writeln!(out, "docs\t{}", self.documents.len());
        for d in &self.documents {
            let _ = write!(out, "{}\t", d.label);
            let body: Vec<String> = d.entries.iter().map(|(i, c)| format!("{i}:{c}")).collect();
            let _ = writeln!(out, "{}", body.join(" "));
        }
        let _ = writeln!(out, "sources\t{}", self.documents.len());
        for d in &self.documents {
            let _ = writeln!(out, "{}", d.source);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Corpus> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let mut section = |name: &str| -> Result<(usize, Vec<(usize, &str)>)> {
            let (ln, header) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: format!("missing {name} section"),
            })?;
            let count = header
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('\t'))
                .and_then(|r| r.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    line: ln + 1,
                    message: format!("expected `{name}<TAB>count`"),
                })?;
            let body: Vec<(usize, &str)> = lines.by_ref().take(count).map(|(i, l)| (i + 1, l)).collect();
            if body.len() != count {
                return Err(Error::Parse {
                    line: ln + 1,
                    message: format!("{name} section truncated"),
                });
            }
            Ok((ln + 1, body))
        };
        let classes: Vec<String> = section("classes")?.1.into_iter().map(|(_, l)| l.to_string()).collect();
        let terms: Vec<String> = section("vocab")?.1.into_iter().map(|(_, l)| l.to_string()).collect();
        let (_, doc_lines) = section("docs")?;
        let mut documents = Vec::with_capacity(doc_lines.len());
        for (ln, line) in doc_lines {
            let bad = |message: String| Error::Parse { line: ln, message };
            let (label, body) = line.split_once('\t').ok_or_else(|| bad("expected `label<TAB>entries`".into()))?;
            let label: usize = label.parse().map_err(|_| bad(format!("bad label {label:?}")))?;
            let mut pairs = Vec::new();
            for tok in body.split_whitespace() {
                let (id, c) = tok.split_once(':').ok_or_else(|| bad(format!("bad entry {tok:?}")))?;
                let id: usize = id.parse().map_err(|_| bad(format!("bad feature id {id:?}")))?;
                let c: u32 = c.parse().map_err(|_| bad(format!("bad count {c:?}")))?;
                pairs.push((id, c));
            }
            documents.push(SparseDocument::new(pairs, label, format!("doc-{}", documents.len())));
        }
        if let Ok((_, sources)) = section("sources") {
            if sources.len() == documents.len() {
                for (d, (_, s)) in documents.iter_mut().zip(sources) {
                    d.source = s.to_string();
                }
            }
        }
        Corpus::new(documents, Vocabulary::new(terms)?, classes)
    }

    pub fn save(&self, path: &Path, provenance: &[(String, String)]) -> Result<()> {
        fs::write(path, self.to_text(provenance)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::parse(&text)
    }
}

/// Reads a TSV file (`label<TAB>text` per line) or a directory laid out as
/// `root/<class>/<file>` and builds a corpus.
pub fn ingest(path: &Path, stopwords: &Stopwords, min_count: usize) -> Result<Corpus> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    if meta.is_dir() {
        let mut class_dirs: Vec<_> = read_dir_sorted(path)?.into_iter().filter(|p| p.is_dir()).collect();
        class_dirs.sort();
        for dir in class_dirs {
            let class = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            for file in read_dir_sorted(&dir)?.into_iter().filter(|p| p.is_file()) {
                let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
                let text = String::from_utf8_lossy(&bytes);
                let source = format!("{class}/{}", file.file_name().and_then(|n| n.to_str()).unwrap_or_default());
                docs.push((class.clone(), source, tokenize(&text)));
            }
        }
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, body) = line.split_once('\t').ok_or(Error::Parse {
                line: i + 1,
                message: "expected `label<TAB>text`".into(),
            })?;
            docs.push((label.trim().to_string(), format!("line:{}", i + 1), tokenize(body)));
        }
    }
    Corpus::from_tokens(docs, stopwords, min_count)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}
