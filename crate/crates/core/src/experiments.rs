//! Cross-validated comparisons of the training methods.
//!
//! A spec describes a grid of settings (class unbalancing, labeled-feature
//! counts, regularizer weights, reference class distributions) and a list of
//! methods. For every repetition and fold, knowledge is derived from the
//! training fold alone, each method is trained on the training documents
//! without their labels, and accuracy is measured on the held-out fold.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::config::{parse_list, parse_pairs, parse_value, FeatureSource, RunConfig};
use crate::corpus::{self, Corpus, Stopwords};
use crate::error::{Error, Result};
use crate::knowledge::{self, FeaturePool, LabeledFeatureSet, ReferenceDistribution};
use crate::lda::{self, LdaModel};
use crate::model::ModelParameters;
use crate::objective::{kl, AbsentFeaturePolicy, Method, Objective, RegularizationConfig};
use crate::optimizer::{self, OptimizationTrace, OptimizerConfig};
use crate::rng;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub sigma: f64,
    pub optimizer: OptimizerConfig,
    pub policy: AbsentFeaturePolicy,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            sigma: 1.0,
            optimizer: OptimizerConfig::default(),
            policy: AbsentFeaturePolicy::Skip,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParameters,
    pub trace: OptimizationTrace,
    /// Constrained features that never occur in the training corpus.
    pub skipped: Vec<usize>,
}

/// Minimizes the configured objective with L-BFGS from theta = 0.
pub fn train(
    corpus: &Corpus,
    labeled: &LabeledFeatureSet,
    regularization: &RegularizationConfig,
    options: &TrainOptions,
) -> Result<Trained> {
    let objective = Objective::new(corpus, labeled, regularization, options.policy)?;
    let shape = objective.shape();
    let sigma = options.sigma;
    let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = ndarray::ArrayView2::from_shape(shape, x).expect("flat parameter length");
        let report = objective.evaluate_view(theta, sigma)?;
        Ok((report.total, report.gradient.into_iter().collect()))
    };
    let (x, trace) = optimizer::minimize(oracle, vec![0.0; shape.0 * shape.1], &options.optimizer)?;
    let theta = ndarray::Array2::from_shape_vec(shape, x).expect("flat parameter length");
    Ok(Trained {
        params: ModelParameters { theta, sigma },
        trace,
        skipped: objective.skipped().to_vec(),
    })
}

/// Fraction of documents whose predicted class equals the gold label.
pub fn accuracy(params: &ModelParameters, test: &Corpus) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    for d in test.documents() {
        if params.classify(d)? == d.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Parameters of the synthetic class-conditional unigram corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub docs_per_class: Vec<usize>,
    pub vocab_size: usize,
    pub indicators_per_class: usize,
    pub doc_length: usize,
    /// Probability that an indicator token comes from a uniformly random
    /// class instead of the document's own.
    pub noise: f64,
    /// Probability that a token (after the first) is an indicator token.
    pub indicator_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            docs_per_class: vec![1000, 1000],
            vocab_size: 500,
            indicators_per_class: 20,
            doc_length: 40,
            noise: 0.3,
            indicator_rate: 0.2,
            seed: 1,
        }
    }
}

fn alpha_code(mut i: usize, width: usize) -> String {
    let mut chars = vec![b'a'; width];
    for c in chars.iter_mut().rev() {
        *c = b'a' + (i % 26) as u8;
        i /= 26;
    }
    String::from_utf8(chars).expect("ascii")
}

/// Synthetic class names: `neg`/`pos` for two classes, `ca`, `cb`, ... otherwise.
fn synth_class_names(n: usize) -> Vec<String> {
    if n == 2 {
        vec!["neg".into(), "pos".into()]
    } else {
        (0..n).map(|c| format!("c{}", alpha_code(c, 2))).collect()
    }
}

/// Indicator word `j` of class `c`.
pub fn synth_indicator(c: usize, j: usize) -> String {
    format!("i{}{}", alpha_code(c, 2), alpha_code(j, 3))
}

/// Draws a corpus where each class boosts its own indicator words over a
/// shared Zipf-distributed background. The first token of every document is
/// an indicator.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Corpus> {
    let n_classes = spec.docs_per_class.len();
    let n_indicators = n_classes * spec.indicators_per_class;
    if n_classes < 2 {
        return Err(Error::TooFewClasses(n_classes));
    }
    if spec.indicators_per_class == 0 || spec.doc_length == 0 || spec.vocab_size <= n_indicators {
        return Err(Error::Config(format!(
            "synthetic corpus needs indicators, positive length and a vocabulary larger than {n_indicators}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.noise) || !(0.0..=1.0).contains(&spec.indicator_rate) {
        return Err(Error::Config("noise and indicator rate must lie in [0, 1]".into()));
    }
    let n_background = spec.vocab_size - n_indicators;
    let zipf: Vec<f64> = (0..n_background).map(|r| 1.0 / (r + 1) as f64).collect();
    let mut cumulative = Vec::with_capacity(n_background);
    let mut acc = 0.0;
    for w in &zipf {
        acc += w;
        cumulative.push(acc);
    }

    let names = synth_class_names(n_classes);
    let mut rng = rng::seeded(spec.seed);
    let mut docs = Vec::new();
    for (c, &n) in spec.docs_per_class.iter().enumerate() {
        for i in 0..n {
            let mut tokens = Vec::with_capacity(spec.doc_length);
            for pos in 0..spec.doc_length {
                if pos == 0 || rng.gen::<f64>() < spec.indicator_rate {
                    let class = if rng.gen::<f64>() < spec.noise { rng.gen_range(0..n_classes) } else { c };
                    tokens.push(synth_indicator(class, rng.gen_range(0..spec.indicators_per_class)));
                } else {
                    let u = rng.gen::<f64>() * acc;
                    let r = cumulative.partition_point(|&x| x <= u).min(n_background - 1);
                    tokens.push(format!("bg{}", alpha_code(r, 3)));
                }
            }
            docs.push((names[c].clone(), format!("{}-{i}", names[c]), tokens));
        }
    }
    Corpus::from_tokens(docs, &Stopwords::new(), 1)
}

/// Where an experiment's corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic(SynthSpec),
    /// A serialized corpus, a TSV file or a class-per-directory tree.
    Path(PathBuf),
    InMemory(Corpus),
}

/// Labeled-feature counts per class; `None` entries take the sweep value `t`.
pub type CountPattern = Vec<Option<usize>>;

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub corpus: CorpusSource,
    /// Class (name or numeric id) whose documents are removed, with the
    /// removal fractions to try.
    pub unbalance_class: Option<String>,
    pub remove_fractions: Vec<f64>,
    pub feature_source: FeatureSource,
    pub feature_file: Option<PathBuf>,
    pub counts: Vec<CountPattern>,
    pub t_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub betas: Vec<f64>,
    /// Class weights overriding the training-fold label distribution for the
    /// KL regularizer. Empty means no override.
    pub references: Vec<Vec<f64>>,
    pub folds: usize,
    pub repetitions: usize,
    /// Resolved training and knowledge settings (sigma, pool, neutral, LDA,
    /// optimizer, seed, ...).
    pub run: RunConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            corpus: CorpusSource::Synthetic(SynthSpec::default()),
            unbalance_class: None,
            remove_fractions: vec![0.0],
            feature_source: FeatureSource::InfoGain,
            feature_file: None,
            counts: vec![vec![Some(10), Some(10)]],
            t_values: Vec::new(),
            methods: Method::ALL.to_vec(),
            betas: vec![5.0],
            references: Vec::new(),
            folds: 10,
            repetitions: 10,
            run: RunConfig::default(),
        }
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub remove_fraction: f64,
    pub counts: Vec<usize>,
    pub t: Option<usize>,
    pub beta: f64,
    pub reference: Option<Vec<f64>>,
}

impl Setting {
    pub fn label(&self) -> String {
        let counts: Vec<String> = self.counts.iter().map(usize::to_string).collect();
        let reference = match &self.reference {
            Some(r) => r.iter().map(f64::to_string).collect::<Vec<_>>().join(":"),
            None => "train".into(),
        };
        format!(
            "remove={};counts={};beta={};ref={}",
            self.remove_fraction,
            counts.join("/"),
            self.beta,
            reference
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    /// `None` when training failed.
    pub accuracy: Option<f64>,
    /// KL(reference || predicted class marginal) on the training fold.
    pub reference_kl: Option<f64>,
    pub iterations: usize,
    pub termination: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: usize,
    pub method: Method,
    pub repetition: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
}

impl ResultRow {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.accuracy).collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.accuracies())
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.accuracies())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: String,
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub rows: Vec<ResultRow>,
    pub provenance: Vec<(String, String)>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl ResultTable {
    fn rows_for(&self, setting: usize, method: Method) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.setting == setting && r.method == method)
    }

    /// All fold accuracies of a (setting, method) cell across repetitions.
    pub fn accuracies(&self, setting: usize, method: Method) -> Vec<f64> {
        self.rows_for(setting, method).flat_map(|r| r.accuracies()).collect()
    }

    pub fn mean_accuracy(&self, setting: usize, method: Method) -> f64 {
        mean(&self.accuracies(setting, method))
    }

    pub fn mean_reference_kl(&self, setting: usize, method: Method) -> f64 {
        let v: Vec<f64> = self
            .rows_for(setting, method)
            .flat_map(|r| r.folds.iter().filter_map(|f| f.reference_kl))
            .collect();
        mean(&v)
    }

    fn header(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    /// `experiment,setting,method,fold,seed,accuracy`, one line per fold.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("experiment,setting,method,fold,seed,accuracy\n");
        for r in &self.rows {
            for f in &r.folds {
                let acc = f.accuracy.map(|a| a.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.experiment,
                    self.settings[r.setting].label(),
                    r.method,
                    f.fold,
                    r.seed,
                    acc
                );
            }
        }
        out
    }

    /// Mean and standard deviation of fold accuracies per (setting, method).
    pub fn summary_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("experiment,setting,method,mean,std,n,failures\n");
        for (s, setting) in self.settings.iter().enumerate() {
            for &m in &self.methods {
                let acc = self.accuracies(s, m);
                let failures: usize = self
                    .rows_for(s, m)
                    .map(|r| r.folds.iter().filter(|f| f.accuracy.is_none()).count())
                    .sum();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.experiment,
                    setting.label(),
                    m,
                    mean(&acc),
                    std_dev(&acc),
                    acc.len(),
                    failures
                );
            }
        }
        out
    }

    /// Per-fold training diagnostics.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("experiment,setting,method,fold,seed,reference_kl,iterations,termination,error\n");
        for r in &self.rows {
            for f in &r.folds {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    self.experiment,
                    self.settings[r.setting].label(),
                    r.method,
                    f.fold,
                    r.seed,
                    f.reference_kl.map(|v| v.to_string()).unwrap_or_default(),
                    f.iterations,
                    f.termination,
                    f.error.as_deref().unwrap_or("").replace(',', ";")
                );
            }
        }
        out
    }

    /// Plot-ready tables: one row per value of the varying axis (t, beta,
    /// removal fraction or reference), one column per method. A single method
    /// swept over several betas gets one column per beta instead. Settings
    /// that differ in other axes go to separate tables.
    pub fn plot_tables(&self) -> Vec<(String, String)> {
        let axis = self.sweep_axis();
        let mut betas: Vec<f64> = Vec::new();
        for s in &self.settings {
            if !betas.contains(&s.beta) {
                betas.push(s.beta);
            }
        }
        let beta_series = axis != "beta" && self.methods.len() == 1 && betas.len() > 1;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.settings.iter().enumerate() {
            let mut rest = s.clone();
            match axis {
                "t" => {
                    rest.t = None;
                    rest.counts.clear();
                }
                "beta" => rest.beta = 0.0,
                "remove" => rest.remove_fraction = 0.0,
                _ => rest.reference = None,
            }
            if beta_series {
                rest.beta = 0.0;
            }
            groups.entry(rest.label()).or_default().push(i);
        }
        let x_value = |s: &Setting| match axis {
            "t" => s.t.map(|t| t.to_string()).unwrap_or_default(),
            "beta" => s.beta.to_string(),
            "remove" => s.remove_fraction.to_string(),
            _ => s
                .reference
                .as_ref()
                .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(":"))
                .unwrap_or_else(|| "train".into()),
        };
        let mut out = Vec::new();
        for (g, (_, members)) in groups.into_iter().enumerate() {
            let mut text = self.header();
            let _ = writeln!(text, "# setting={}", self.settings[members[0]].label());
            // x value -> one cell per series
            let mut rows: Vec<(String, Vec<String>)> = Vec::new();
            for &i in &members {
                let s = &self.settings[i];
                let x = x_value(s);
                let pos = match rows.iter().position(|(r, _)| *r == x) {
                    Some(p) => p,
                    None => {
                        let width = if beta_series { betas.len() } else { self.methods.len() };
                        rows.push((x, vec![String::new(); width]));
                        rows.len() - 1
                    }
                };
                if beta_series {
                    let col = betas.iter().position(|&b| b == s.beta).expect("beta listed");
                    rows[pos].1[col] = self.mean_accuracy(i, self.methods[0]).to_string();
                } else {
                    for (col, &m) in self.methods.iter().enumerate() {
                        rows[pos].1[col] = self.mean_accuracy(i, m).to_string();
                    }
                }
            }
            let columns: Vec<String> = if beta_series {
                betas.iter().map(|b| format!("{} beta={b}", self.methods[0])).collect()
            } else {
                self.methods.iter().map(Method::to_string).collect()
            };
            let _ = writeln!(text, "{axis},{}", columns.join(","));
            for (x, cells) in rows {
                let _ = writeln!(text, "{x},{}", cells.join(","));
            }
            out.push((format!("{}_{axis}_{g}", self.experiment), text));
        }
        out
    }

    fn sweep_axis(&self) -> &'static str {
        let distinct = |f: &dyn Fn(&Setting) -> String| {
            let mut v: Vec<String> = self.settings.iter().map(f).collect();
            v.sort();
            v.dedup();
            v.len()
        };
        if self.settings.iter().any(|s| s.t.is_some()) {
            "t"
        } else if distinct(&|s| s.beta.to_string()) > 1 {
            "beta"
        } else if distinct(&|s| s.remove_fraction.to_string()) > 1 {
            "remove"
        } else {
            "reference"
        }
    }

    /// Gnuplot script drawing every plot table as accuracy curves.
    pub fn gnuplot_script(&self, tables: &[(String, String)]) -> String {
        let mut out = String::from("set datafile separator ','\nset key autotitle columnhead\nset ylabel 'accuracy'\nset terminal pngcairo size 800,500\n");
        for (name, text) in tables {
            let _ = writeln!(out, "set output '{name}.png'");
            let _ = writeln!(out, "set xlabel '{}'", self.sweep_axis());
            let width = text
                .lines()
                .find(|l| !l.starts_with('#'))
                .map_or(0, |header| header.split(',').count() - 1);
            let plots: Vec<String> = (0..width)
                .map(|m| format!("'{name}.csv' using 1:{} with linespoints", m + 2))
                .collect();
            let _ = writeln!(out, "plot {}", plots.join(", "));
        }
        out
    }

    /// Writes `<name>.csv`, `<name>_summary.csv`, `<name>_diagnostics.csv`
    /// and the plot tables into `dir`.
    pub fn write_all(&self, dir: &Path, gnuplot: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            (format!("{}.csv", self.experiment), self.to_csv()),
            (format!("{}_summary.csv", self.experiment), self.summary_csv()),
            (format!("{}_diagnostics.csv", self.experiment), self.diagnostics_csv()),
        ];
        let tables = self.plot_tables();
        if gnuplot {
            files.push((format!("{}.gp", self.experiment), self.gnuplot_script(&tables)));
        }
        files.extend(tables.into_iter().map(|(n, t)| (format!("{n}.csv"), t)));
        let mut written = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

impl ExperimentSpec {
    /// Parses a flat `key = value` spec. Keys not owned by the experiment are
    /// passed to [`RunConfig`].
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        let mut synth = SynthSpec::default();
        let mut synthetic = true;
        let mut counts_text: Option<String> = None;
        let mut betas: Option<Vec<f64>> = None;
        let mut unbalance_class: Option<String> = None;
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "name" => spec.name = v.clone(),
                "corpus" => {
                    synthetic = v == "synthetic";
                    if !synthetic {
                        spec.corpus = CorpusSource::Path(base_dir.join(&v));
                    }
                }
                "synth_docs_per_class" => synth.docs_per_class = parse_list(&k, &v)?,
                "synth_vocab" => synth.vocab_size = parse_value(&k, &v)?,
                "synth_indicators" => synth.indicators_per_class = parse_value(&k, &v)?,
                "synth_doc_length" => synth.doc_length = parse_value(&k, &v)?,
                "synth_noise" => synth.noise = parse_value(&k, &v)?,
                "synth_indicator_rate" => synth.indicator_rate = parse_value(&k, &v)?,
                "synth_seed" => synth.seed = parse_value(&k, &v)?,
                "unbalance_class" => unbalance_class = Some(v.clone()).filter(|c| !c.is_empty()),
                "remove_fractions" => spec.remove_fractions = parse_list(&k, &v)?,
                "feature_file" => spec.feature_file = Some(&v).filter(|f| !f.is_empty()).map(|f| base_dir.join(f)),
                "counts" => counts_text = Some(v.clone()),
                "t_values" => spec.t_values = parse_range(&k, &v)?,
                "methods" => {
                    spec.methods = v.split(',').map(str::parse).collect::<Result<_>>()?;
                }
                "betas" => betas = Some(parse_list(&k, &v)?),
                "references" => {
                    spec.references = v
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_list(&k, s))
                        .collect::<Result<_>>()?;
                }
                "folds" => spec.folds = parse_value(&k, &v)?,
                "repetitions" => spec.repetitions = parse_value(&k, &v)?,
                "feature_source" => {
                    spec.feature_source = v.parse()?;
                    spec.run.set(&k, &v)?;
                }
                _ => spec.run.set(&k, &v)?,
            }
        }
        spec.run.validate()?;
        if synthetic {
            spec.corpus = CorpusSource::Synthetic(synth);
        }
        spec.betas = betas.unwrap_or_else(|| vec![spec.run.beta]);
        spec.counts = match counts_text {
            Some(c) => parse_counts(&c)?,
            None => vec![spec.run.per_class.iter().copied().map(Some).collect()],
        };
        if spec.references.is_empty() && !spec.run.reference.is_empty() {
            spec.references = vec![spec.run.reference.clone()];
        }
        spec.unbalance_class = unbalance_class;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Expands the grid. Order: removal fraction, count pattern, t, beta,
    /// reference.
    pub fn settings(&self, n_classes: usize) -> Result<Vec<Setting>> {
        let references: Vec<Option<Vec<f64>>> = if self.references.is_empty() {
            vec![None]
        } else {
            self.references.iter().cloned().map(Some).collect()
        };
        let mut out = Vec::new();
        for &remove_fraction in &self.remove_fractions {
            for pattern in &self.counts {
                let sweeps = pattern.iter().any(Option::is_none);
                if sweeps && self.t_values.is_empty() {
                    return Err(Error::Config("count pattern uses `t` but t_values is empty".into()));
                }
                let ts: Vec<Option<usize>> = if sweeps {
                    self.t_values.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for t in ts {
                    let mut counts: Vec<usize> = pattern.iter().map(|c| c.or(t).unwrap_or(0)).collect();
                    if counts.len() == 1 {
                        counts = vec![counts[0]; n_classes];
                    }
                    if counts.len() != n_classes {
                        return Err(Error::Config(format!(
                            "count pattern has {} entries for {n_classes} classes",
                            counts.len()
                        )));
                    }
                    for &beta in &self.betas {
                        for reference in &references {
                            out.push(Setting {
                                remove_fraction,
                                counts: counts.clone(),
                                t,
                                beta,
                                reference: reference.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// The spec as `key = value` pairs; feeding them back to
    /// [`ExperimentSpec::from_text`] reproduces the spec.
    pub fn pairs(&self) -> Vec<(String, String)> {
        fn join<T: ToString>(xs: &[T], sep: &str) -> String {
            xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
        }
        let v = |k: &str, v: String| (k.to_string(), v);
        let mut p = vec![v("name", self.name.clone())];
        match &self.corpus {
            CorpusSource::Synthetic(s) => {
                p.push(v("corpus", "synthetic".into()));
                p.push(v("synth_docs_per_class", join(&s.docs_per_class, ",")));
                p.push(v("synth_vocab", s.vocab_size.to_string()));
                p.push(v("synth_indicators", s.indicators_per_class.to_string()));
                p.push(v("synth_doc_length", s.doc_length.to_string()));
                p.push(v("synth_noise", s.noise.to_string()));
                p.push(v("synth_indicator_rate", s.indicator_rate.to_string()));
                p.push(v("synth_seed", s.seed.to_string()));
            }
            CorpusSource::Path(path) => p.push(v("corpus", path.display().to_string())),
            CorpusSource::InMemory(c) => p.push(v("corpus", format!("in-memory({} docs)", c.len()))),
        }
        p.push(v("unbalance_class", self.unbalance_class.clone().unwrap_or_default()));
        p.push(v("remove_fractions", join(&self.remove_fractions, ",")));
        p.push(v(
            "feature_file",
            self.feature_file.as_ref().map(|f| f.display().to_string()).unwrap_or_default(),
        ));
        let counts: Vec<String> = self
            .counts
            .iter()
            .map(|pattern| {
                pattern
                    .iter()
                    .map(|c| c.map_or("t".to_string(), |n| n.to_string()))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        p.push(v("counts", counts.join("; ")));
        p.push(v("t_values", join(&self.t_values, ",")));
        p.push(v("methods", join(&self.methods, ",")));
        p.push(v("betas", join(&self.betas, ",")));
        let references: Vec<String> = self.references.iter().map(|r| join(r, ",")).collect();
        p.push(v("references", references.join("; ")));
        p.push(v("folds", self.folds.to_string()));
        p.push(v("repetitions", self.repetitions.to_string()));
        p.extend(self.run.pairs().into_iter().filter(|(k, _)| k != "reference"));
        p
    }
}

/// Loads or builds the experiment corpus.
pub fn load_corpus(source: &CorpusSource, run: &RunConfig) -> Result<Corpus> {
    match source {
        CorpusSource::Synthetic(s) => synthesize_corpus(s),
        CorpusSource::InMemory(c) => Ok(c.clone()),
        CorpusSource::Path(path) => {
            if path.is_file() {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                if text.starts_with("#gefl-corpus") {
                    return Corpus::parse(&text);
                }
            }
            let stopwords = match &run.stopwords {
                Some(p) => corpus::read_stopwords(p)?,
                None => corpus::default_stopwords(),
            };
            corpus::ingest(path, &stopwords, run.min_count)
        }
    }
}

fn resolve_class(corpus: &Corpus, class: &str) -> Result<usize> {
    corpus
        .class_id(class)
        .or_else(|| class.parse::<usize>().ok().filter(|&c| c < corpus.n_classes()))
        .ok_or_else(|| Error::Config(format!("unknown class {class:?}")))
}

// Seed stream tags.
const SEED_UNBALANCE: u64 = 1;
const SEED_FOLDS: u64 = 2;
const SEED_DRAW: u64 = 3;
const SEED_LDA: u64 = 4;

/// Knowledge derived from one training fold, shared by every setting.
struct FoldKnowledge {
    pool: FeaturePool,
    neutral: LabeledFeatureSet,
    fixed: Option<LabeledFeatureSet>,
}

fn fold_knowledge(spec: &ExperimentSpec, train: &Corpus, seed: u64) -> Result<FoldKnowledge> {
    let run = &spec.run;
    let neutral = knowledge::neutral_features(train, run.neutral.min(train.n_features()))?;
    let (pool, fixed) = match spec.feature_source {
        FeatureSource::InfoGain => (knowledge::info_gain_pool(train, run.pool)?, None),
        FeatureSource::Lda => {
            let mut config = run.lda();
            config.seed = seed;
            let model = LdaModel::fit(train, &config)?;
            (lda::lda_feature_pool(&model, train, run.pool)?.pool, None)
        }
        FeatureSource::File => {
            let path = spec
                .feature_file
                .as_ref()
                .ok_or_else(|| Error::Config("feature_source = file needs feature_file".into()))?;
            let (labeled, _) = knowledge::load_knowledge(train, path)?;
            (FeaturePool::new(vec![Vec::new(); train.n_classes()], run.pool), Some(labeled))
        }
    };
    Ok(FoldKnowledge { pool, neutral, fixed })
}

fn run_fold(
    spec: &ExperimentSpec,
    setting: &Setting,
    knowledge: &FoldKnowledge,
    train: &Corpus,
    test: &Corpus,
    draw_seed: u64,
) -> Result<Vec<FoldResult>> {
    let labeled = match &knowledge.fixed {
        Some(l) => l.clone(),
        None => knowledge::draw_labeled(&knowledge.pool, &setting.counts, draw_seed)?,
    };
    let reference = match &setting.reference {
        Some(w) => ReferenceDistribution::from_weights(w)?,
        None => ReferenceDistribution::new(train.label_distribution())?,
    };
    let options = TrainOptions {
        sigma: spec.run.sigma,
        optimizer: spec.run.optimizer(),
        policy: spec.run.absent_features,
    };
    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let regularization = RegularizationConfig {
            method,
            beta: setting.beta,
            reference: Some(reference.clone()),
            neutral: Some(knowledge.neutral.clone()),
        };
        let result = train_and_score(train, test, &labeled, &regularization, &options, reference.probs());
        out.push(match result {
            Ok((trained, acc, ref_kl)) => FoldResult {
                fold: 0,
                accuracy: Some(acc),
                reference_kl: Some(ref_kl),
                iterations: trained.trace.iterations,
                termination: trained.trace.termination.to_string(),
                error: None,
            },
            Err(e @ (Error::PoolUnderflow { .. } | Error::Config(_) | Error::Input(_))) => return Err(e),
            Err(e) => FoldResult {
                fold: 0,
                accuracy: None,
                reference_kl: None,
                iterations: 0,
                termination: "error".into(),
                error: Some(e.to_string()),
            },
        });
    }
    Ok(out)
}

fn train_and_score(
    train: &Corpus,
    test: &Corpus,
    labeled: &LabeledFeatureSet,
    regularization: &RegularizationConfig,
    options: &TrainOptions,
    reference: &[f64],
) -> Result<(Trained, f64, f64)> {
    let trained = self::train(train, labeled, regularization, options)?;
    let acc = accuracy(&trained.params, test)?;
    let marginal = trained.params.class_marginal(train)?;
    let ref_kl = kl(reference, &marginal)?;
    Ok((trained, acc, ref_kl))
}

/// Runs every (setting, method, repetition, fold) cell of the spec.
pub fn run(spec: &ExperimentSpec) -> Result<ResultTable> {
    if spec.methods.is_empty() {
        return Err(Error::Config("no methods to compare".into()));
    }
    if spec.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let base = load_corpus(&spec.corpus, &spec.run)?;
    let settings = spec.settings(base.n_classes())?;
    let target = spec.unbalance_class.as_deref().map(|c| resolve_class(&base, c)).transpose()?;
    let seed = spec.run.seed;

    // (fraction index, repetition) -> folds
    let mut fractions: Vec<f64> = Vec::new();
    for s in &settings {
        if !fractions.contains(&s.remove_fraction) {
            fractions.push(s.remove_fraction);
        }
    }
    let mut jobs = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        for rep in 0..spec.repetitions {
            let rep_seed = rng::derive_seed(seed, &[rep as u64]);
            let corpus = match (target, fraction > 0.0) {
                (Some(class), true) => base.unbalance(class, fraction, rng::derive_seed(rep_seed, &[SEED_UNBALANCE]))?,
                (None, true) => return Err(Error::Config("remove_fractions set without unbalance_class".into())),
                _ => base.clone(),
            };
            let folds = corpus.cv_folds(spec.folds, rng::derive_seed(rep_seed, &[SEED_FOLDS]))?;
            for (f, fold) in folds.into_iter().enumerate() {
                jobs.push((fi, rep, rep_seed, f, fold));
            }
        }
    }

    // (setting, repetition, repetition seed, fold, per-method results)
    type Cell = (usize, usize, u64, usize, Vec<FoldResult>);
    let cells: Vec<Vec<Cell>> = jobs
        .into_par_iter()
        .map(|(fi, rep, rep_seed, f, fold)| -> Result<_> {
            let knowledge = fold_knowledge(spec, &fold.train, rng::derive_seed(rep_seed, &[SEED_LDA, f as u64]))?;
            let draw_seed = rng::derive_seed(rep_seed, &[SEED_DRAW, f as u64]);
            let mut out = Vec::new();
            for (si, setting) in settings.iter().enumerate() {
                if setting.remove_fraction != fractions[fi] {
                    continue;
                }
                let mut results = run_fold(spec, setting, &knowledge, &fold.train, &fold.test, draw_seed)?;
                results.iter_mut().for_each(|r| r.fold = f);
                out.push((si, rep, rep_seed, f, results));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut grouped: HashMap<(usize, usize, usize), (u64, Vec<FoldResult>)> = HashMap::new();
    for (si, rep, rep_seed, _, results) in cells.into_iter().flatten() {
        for (mi, r) in results.into_iter().enumerate() {
            grouped.entry((si, mi, rep)).or_insert_with(|| (rep_seed, Vec::new())).1.push(r);
        }
    }
    let mut rows = Vec::with_capacity(grouped.len());
    for si in 0..settings.len() {
        for (mi, &method) in spec.methods.iter().enumerate() {
            for rep in 0..spec.repetitions {
                let (seed, mut folds) = grouped.remove(&(si, mi, rep)).unwrap_or_default();
                folds.sort_by_key(|f| f.fold);
                rows.push(ResultRow {
                    setting: si,
                    method,
                    repetition: rep,
                    seed,
                    folds,
                });
            }
        }
    }
    Ok(ResultTable {
        experiment: spec.name.clone(),
        settings,
        methods: spec.methods.clone(),
        rows,
        provenance: spec.pairs(),
    })
}

fn parse_range(key: &str, value: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (parse_value(key, a)?, parse_value(key, b)?);
                if a > b {
                    return Err(Error::Config(format!("{key}: empty range {part}")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_value(key, part)?),
        }
    }
    Ok(out)
}

/// `10,1; t,1` -> per-class count patterns, `t` marking the swept class.
fn parse_counts(value: &str) -> Result<Vec<CountPattern>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pattern| {
            pattern
                .split([',', ':', '/'])
                .map(str::trim)
                .map(|c| if c == "t" { Ok(None) } else { parse_value("counts", c).map(Some) })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SparseDocument, Vocabulary};
    use ndarray::array;

    fn small_synth(noise: f64) -> SynthSpec {
        SynthSpec {
            docs_per_class: vec![60, 60],
            vocab_size: 80,
            indicators_per_class: 5,
            doc_length: 20,
            noise,
            indicator_rate: 0.2,
            seed: 7,
        }
    }

    fn quick_spec() -> ExperimentSpec {
        let run = RunConfig {
            pool: 5,
            neutral: 3,
            max_iterations: 60,
            ..RunConfig::default()
        };
        ExperimentSpec {
            name: "quick".into(),
            corpus: CorpusSource::Synthetic(small_synth(0.2)),
            counts: vec![vec![Some(2), Some(2)]],
            folds: 3,
            repetitions: 2,
            run,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn accuracy_examples() {
        let v = Vocabulary::new(vec!["aa".into(), "bb".into()]).unwrap();
        let docs = vec![
            SparseDocument::new([(0, 1)], 0, "a"),
            SparseDocument::new([(0, 2)], 0, "b"),
            SparseDocument::new([(1, 1)], 1, "c"),
            SparseDocument::new([(1, 1), (0, 1)], 1, "d"),
        ];
        let c = Corpus::new(docs, v, vec!["neg".into(), "pos".into()]).unwrap();
        let perfect = ModelParameters {
            theta: array![[1.0, -1.0], [-1.0, 1.0]],
            sigma: 1.0,
        };
        // the last document ties and goes to class 0
        assert_eq!(accuracy(&perfect, &c).unwrap(), 0.75);
        let skewed = ModelParameters {
            theta: array![[1.0, -1.0], [-1.0, 1.5]],
            sigma: 1.0,
        };
        assert_eq!(accuracy(&skewed, &c).unwrap(), 1.0);
        let zero = ModelParameters::zeros(2, 2, 1.0);
        assert_eq!(accuracy(&zero, &c).unwrap(), 0.5);
    }

    #[test]
    fn synthetic_corpus_shape() {
        let c = synthesize_corpus(&small_synth(0.0)).unwrap();
        assert_eq!(c.classes(), &["neg".to_string(), "pos".to_string()]);
        assert_eq!(c.label_counts(), vec![60, 60]);
        assert_eq!(c.label_distribution(), vec![0.5, 0.5]);
        // without noise an indicator never appears in the other class
        let neg = c.vocabulary().id(&synth_indicator(0, 0)).unwrap();
        assert!(c.documents().iter().filter(|d| d.contains(neg)).all(|d| d.label == 0));
        assert_eq!(synthesize_corpus(&small_synth(0.0)).unwrap(), c);
    }

    #[test]
    fn unbalancing_synthetic_corpus() {
        let c = synthesize_corpus(&small_synth(0.3)).unwrap();
        let u = c.unbalance(1, 0.75, 3).unwrap();
        assert_eq!(u.label_counts(), vec![60, 15]);
    }

    #[test]
    fn spec_text_and_settings() {
        let spec = ExperimentSpec::from_text(
            "name = sweep\ncounts = t,1\nt_values = 1-3\nbetas = 0, 5\nmethods = ge-fl,kl\nfolds = 4\nsigma = 2\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(spec.t_values, vec![1, 2, 3]);
        assert_eq!(spec.methods, vec![Method::GeFl, Method::KlDivergence]);
        assert_eq!(spec.run.sigma, 2.0);
        let settings = spec.settings(2).unwrap();
        assert_eq!(settings.len(), 6);
        assert_eq!(settings[0].counts, vec![1, 1]);
        assert_eq!(settings[5].counts, vec![3, 1]);
        assert_eq!(settings[5].beta, 5.0);
        assert!(ExperimentSpec::from_text("counts = t,1\n", Path::new(".")).unwrap().settings(2).is_err());
        assert!(ExperimentSpec::from_text("bogus = 1\n", Path::new(".")).is_err());
        let refs = ExperimentSpec::from_text("references = 1.5,1; 2,1\n", Path::new(".")).unwrap();
        assert_eq!(refs.references, vec![vec![1.5, 1.0], vec![2.0, 1.0]]);
    }

    #[test]
    fn spec_pairs_round_trip() {
        let mut spec = quick_spec();
        spec.unbalance_class = Some("pos".into());
        spec.remove_fractions = vec![0.0, 0.5];
        spec.counts = vec![vec![None, Some(1)], vec![Some(3), Some(3)]];
        spec.t_values = vec![1, 4];
        spec.betas = vec![0.0, 2.5];
        spec.references = vec![vec![2.0, 1.0]];
        let text: String = spec.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = ExperimentSpec::from_text(&text, Path::new("/")).unwrap();
        assert_eq!(back.pairs(), spec.pairs());
        assert_eq!(back.settings(2).unwrap(), spec.settings(2).unwrap());
    }

    #[test]
    fn run_fills_every_cell() {
        let spec = quick_spec();
        let table = run(&spec).unwrap();
        assert_eq!(table.rows.len(), 4 * 2);
        for row in &table.rows {
            assert_eq!(row.folds.len(), 3);
            assert!(row.folds.iter().all(|f| f.error.is_none()), "{row:?}");
            assert!(row.mean() > 0.5, "{}: {}", row.method, row.mean());
        }
        assert_eq!(table.to_csv().lines().filter(|l| !l.starts_with('#')).count(), 1 + 8 * 3);
    }

    #[test]
    fn zero_beta_kl_matches_ge_fl() {
        let mut spec = quick_spec();
        spec.betas = vec![0.0];
        spec.methods = vec![Method::GeFl, Method::KlDivergence];
        let table = run(&spec).unwrap();
        assert_eq!(table.accuracies(0, Method::GeFl), table.accuracies(0, Method::KlDivergence));
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = quick_spec();
        assert_eq!(run(&spec).unwrap().to_csv(), run(&spec).unwrap().to_csv());
    }
}
