//! Flat `key = value` run configuration.
//!
//! Every tunable has a default; unknown keys and ill-typed values are
//! rejected. The resolved configuration is echoed into output files so that
//! any artifact can be regenerated.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lda::LdaConfig;
use crate::objective::{AbsentFeaturePolicy, Method};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    InfoGain,
    Lda,
    File,
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "info-gain" | "info_gain" | "ig" => Ok(FeatureSource::InfoGain),
            "lda" => Ok(FeatureSource::Lda),
            "file" => Ok(FeatureSource::File),
            other => Err(Error::Config(format!("unknown feature source {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSource::InfoGain => "info-gain",
            FeatureSource::Lda => "lda",
            FeatureSource::File => "file",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma: f64,
    pub beta: f64,
    pub method: Method,
    /// Number of neutral features.
    pub neutral: usize,
    /// Feature pool size per class.
    pub pool: usize,
    /// Labeled features drawn per class; one value applies to every class.
    pub per_class: Vec<usize>,
    pub feature_source: FeatureSource,
    /// 0 means one topic per class.
    pub lda_topics: usize,
    pub lda_iterations: usize,
    /// 0 means 50 / T.
    pub lda_alpha: f64,
    pub lda_eta: f64,
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub sufficient_decrease: f64,
    pub curvature: f64,
    pub seed: u64,
    pub min_count: usize,
    /// Empty means the built-in English list.
    pub stopwords: Option<PathBuf>,
    /// Class weights for the KL regularizer; empty means the corpus label distribution.
    pub reference: Vec<f64>,
    pub absent_features: AbsentFeaturePolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let lda = LdaConfig::default();
        RunConfig {
            sigma: 1.0,
            beta: 5.0,
            method: Method::GeFl,
            neutral: 10,
            pool: 20,
            per_class: vec![10],
            feature_source: FeatureSource::InfoGain,
            lda_topics: 0,
            lda_iterations: lda.iterations,
            lda_alpha: 0.0,
            lda_eta: lda.eta,
            memory: opt.memory,
            max_iterations: opt.max_iterations,
            gradient_tolerance: opt.gradient_tolerance,
            sufficient_decrease: opt.sufficient_decrease,
            curvature: opt.curvature,
            seed: 0,
            min_count: 2,
            stopwords: None,
            reference: Vec::new(),
            absent_features: AbsentFeaturePolicy::Skip,
        }
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split([',', ':'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: ToString>(values: &[T], sep: &str) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            message: "expected `key = value`".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "sigma" => self.sigma = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "method" => self.method = value.parse()?,
            "neutral" => self.neutral = parse_value(key, value)?,
            "pool" => self.pool = parse_value(key, value)?,
            "per_class" => self.per_class = parse_list(key, value)?,
            "feature_source" => self.feature_source = value.parse()?,
            "lda_topics" => self.lda_topics = parse_value(key, value)?,
            "lda_iterations" => self.lda_iterations = parse_value(key, value)?,
            "lda_alpha" => self.lda_alpha = parse_value(key, value)?,
            "lda_eta" => self.lda_eta = parse_value(key, value)?,
            "memory" => self.memory = parse_value(key, value)?,
            "max_iterations" => self.max_iterations = parse_value(key, value)?,
            "gradient_tolerance" => self.gradient_tolerance = parse_value(key, value)?,
            "sufficient_decrease" => self.sufficient_decrease = parse_value(key, value)?,
            "curvature" => self.curvature = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            "stopwords" => self.stopwords = Some(value.trim()).filter(|v| !v.is_empty()).map(PathBuf::from),
            "reference" => self.reference = parse_list(key, value)?,
            "absent_features" => {
                self.absent_features = match value.trim() {
                    "skip" => AbsentFeaturePolicy::Skip,
                    "fail" => AbsentFeaturePolicy::Fail,
                    other => return Err(Error::Config(format!("absent_features: expected skip|fail, got {other:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            config.set(&k, &v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.pool == 0 {
            return Err(Error::Config("pool must be at least 1".into()));
        }
        if !(self.lda_alpha >= 0.0 && self.lda_eta > 0.0) {
            return Err(Error::Config("LDA priors must be positive".into()));
        }
        self.optimizer().validate()
    }

    /// Per-class draw counts expanded to `n_classes` entries.
    pub fn per_class_counts(&self, n_classes: usize) -> Result<Vec<usize>> {
        match self.per_class.len() {
            1 => Ok(vec![self.per_class[0]; n_classes]),
            n if n == n_classes => Ok(self.per_class.clone()),
            n => Err(Error::Config(format!("per_class lists {n} counts for {n_classes} classes"))),
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            memory: self.memory,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            sufficient_decrease: self.sufficient_decrease,
            curvature: self.curvature,
            ..OptimizerConfig::default()
        }
    }

    pub fn lda(&self) -> LdaConfig {
        LdaConfig {
            n_topics: Some(self.lda_topics).filter(|&t| t > 0),
            iterations: self.lda_iterations,
            alpha: Some(self.lda_alpha).filter(|&a| a > 0.0),
            eta: self.lda_eta,
            seed: self.seed,
        }
    }

    /// Fully resolved `(key, value)` pairs in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let v = |k: &str, v: String| (k.to_string(), v);
        vec![
            v("sigma", self.sigma.to_string()),
            v("beta", self.beta.to_string()),
            v("method", self.method.to_string()),
            v("neutral", self.neutral.to_string()),
            v("pool", self.pool.to_string()),
            v("per_class", join(&self.per_class, ",")),
            v("feature_source", self.feature_source.to_string()),
            v("lda_topics", self.lda_topics.to_string()),
            v("lda_iterations", self.lda_iterations.to_string()),
            v("lda_alpha", self.lda_alpha.to_string()),
            v("lda_eta", self.lda_eta.to_string()),
            v("memory", self.memory.to_string()),
            v("max_iterations", self.max_iterations.to_string()),
            v("gradient_tolerance", self.gradient_tolerance.to_string()),
            v("sufficient_decrease", self.sufficient_decrease.to_string()),
            v("curvature", self.curvature.to_string()),
            v("seed", self.seed.to_string()),
            v("min_count", self.min_count.to_string()),
            v(
                "stopwords",
                self.stopwords.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            v("reference", join(&self.reference, ",")),
            v(
                "absent_features",
                match self.absent_features {
                    AbsentFeaturePolicy::Skip => "skip".into(),
                    AbsentFeaturePolicy::Fail => "fail".into(),
                },
            ),
        ]
    }
}
