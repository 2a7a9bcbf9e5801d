//! Training objective and its analytic gradient.
//!
//! The base objective sums, over labeled features k,
//! `KL(reference_k || q_k)` where `q_k` is the mean model prediction over
//! documents containing k, plus an L2 prior `sum(theta^2) / (2 sigma^2)`.
//! One optional regularizer is added on top:
//!
//! | method          | term                                         |
//! |-----------------|----------------------------------------------|
//! | `ge-fl`         | none                                         |
//! | `neutral`       | `sum_{k in K'} KL(uniform || q_k)`, unweighted |
//! | `max-entropy`   | `lambda * sum_y p(y) ln p(y)`                |
//! | `kl`            | `lambda * KL(p_ref || p)`                    |
//!
//! with `p(y)` the mean prediction over the training documents and
//! `lambda = beta * |K|`.
//!
//! Gradients are back-propagated per document: every term yields an upstream
//! vector `dO/dp(.|x)`, which the softmax Jacobian
//! `p_y (1[y = y'] - p_y') x_j` maps onto the weights.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::knowledge::{FeatureRole, LabeledFeatureSet, ReferenceDistribution};
use crate::model::{self, ModelParameters};

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Input(format!("distribution lengths differ: {} vs {}", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::AbsoluteContinuity { index });
            }
            total += pi * (pi / qi).ln();
        }
    }
    // rounding can leave tiny negatives when p == q
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    GeFl,
    Neutral,
    MaxEntropy,
    KlDivergence,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GeFl, Method::Neutral, Method::MaxEntropy, Method::KlDivergence];

    pub fn name(self) -> &'static str {
        match self {
            Method::GeFl => "ge-fl",
            Method::Neutral => "neutral",
            Method::MaxEntropy => "max-entropy",
            Method::KlDivergence => "kl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "ge-fl" | "gefl" | "none" => Ok(Method::GeFl),
            "neutral" | "ne" => Ok(Method::Neutral),
            "max-entropy" | "maxent" | "me" => Ok(Method::MaxEntropy),
            "kl" | "kl-divergence" => Ok(Method::KlDivergence),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularizationConfig {
    pub method: Method,
    pub beta: f64,
    pub reference: Option<ReferenceDistribution>,
    pub neutral: Option<LabeledFeatureSet>,
}

impl RegularizationConfig {
    pub fn ge_fl() -> Self {
        RegularizationConfig {
            method: Method::GeFl,
            beta: 0.0,
            reference: None,
            neutral: None,
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be a finite non-negative number, got {}", self.beta)));
        }
        match self.method {
            Method::KlDivergence => match &self.reference {
                None => Err(Error::Config("kl method needs a reference class distribution".into())),
                Some(r) if r.len() != n_classes => Err(Error::Config(format!(
                    "reference distribution has {} entries for {n_classes} classes",
                    r.len()
                ))),
                Some(_) => Ok(()),
            },
            Method::Neutral => match &self.neutral {
                Some(n) if !n.is_empty() && n.role() == FeatureRole::Neutral => Ok(()),
                _ => Err(Error::Config("neutral method needs a non-empty neutral feature set".into())),
            },
            _ => Ok(()),
        }
    }
}

/// What to do with a constrained feature that occurs in no training document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentFeaturePolicy {
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub total: f64,
    pub ge_fl_kl: f64,
    pub l2: f64,
    pub regularizer: f64,
    pub gradient: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Constraint {
    target: Vec<f64>,
    docs: Vec<usize>,
}

/// Objective bound to one training corpus and one set of prior knowledge.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    corpus: &'a Corpus,
    labeled: Vec<Constraint>,
    neutral: Vec<Constraint>,
    method: Method,
    lambda: f64,
    reference: Option<Vec<f64>>,
    skipped: Vec<usize>,
}

impl<'a> Objective<'a> {
    pub fn new(
        corpus: &'a Corpus,
        labeled: &LabeledFeatureSet,
        config: &RegularizationConfig,
        policy: AbsentFeaturePolicy,
    ) -> Result<Self> {
        config.validate(corpus.n_classes())?;
        if labeled.is_empty() {
            return Err(Error::NoLabeledFeatures);
        }
        labeled.validate_for(corpus)?;
        let mut skipped = Vec::new();
        let labeled_constraints = constraints(corpus, labeled, policy, &mut skipped)?;
        if labeled_constraints.is_empty() {
            return Err(Error::NoLabeledFeatures);
        }
        let neutral = match (config.method, &config.neutral) {
            (Method::Neutral, Some(set)) => {
                set.validate_for(corpus)?;
                constraints(corpus, set, policy, &mut skipped)?
            }
            _ => Vec::new(),
        };
        Ok(Objective {
            corpus,
            labeled: labeled_constraints,
            neutral,
            method: config.method,
            lambda: config.beta * labeled.len() as f64,
            reference: config.reference.as_ref().map(|r| r.probs().to_vec()),
            skipped,
        })
    }

    /// Constrained features dropped because no document contains them.
    pub fn skipped(&self) -> &[usize] {
        &self.skipped
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.corpus.n_classes(), self.corpus.n_features())
    }

    pub fn evaluate(&self, params: &ModelParameters) -> Result<ObjectiveReport> {
        self.evaluate_view(params.theta.view(), params.sigma)
    }

    pub fn evaluate_view(&self, theta: ArrayView2<f64>, sigma: f64) -> Result<ObjectiveReport> {
        let (n_classes, n_features) = self.shape();
        if theta.dim() != (n_classes, n_features) {
            return Err(Error::Input(format!(
                "parameter matrix is {:?}, expected {:?}",
                theta.dim(),
                (n_classes, n_features)
            )));
        }
        let docs = self.corpus.documents();
        let probs: Vec<Vec<f64>> = docs
            .par_iter()
            .map(|d| model::predict_with(theta, d))
            .collect::<Result<_>>()?;
        // dO/dp(.|x) per document
        let mut upstream = vec![vec![0.0; n_classes]; docs.len()];

        let ge_fl_kl = feature_terms(&self.labeled, &probs, &mut upstream, 1.0)?;

        let regularizer = match self.method {
            Method::GeFl => 0.0,
            Method::Neutral => feature_terms(&self.neutral, &probs, &mut upstream, 1.0)?,
            Method::MaxEntropy | Method::KlDivergence => {
                let n = docs.len() as f64;
                let marginal = mean(probs.iter(), n_classes);
                let (value, dmarginal) = if self.method == Method::MaxEntropy {
                    neg_entropy(&marginal, self.lambda)?
                } else {
                    let reference = self.reference.as_deref().expect("validated");
                    let value = self.lambda * kl(reference, &marginal)?;
                    let grad: Vec<f64> = reference
                        .iter()
                        .zip(&marginal)
                        .map(|(r, p)| if *r > 0.0 { -self.lambda * r / p } else { 0.0 })
                        .collect();
                    (value, grad)
                };
                for u in upstream.iter_mut() {
                    for (a, g) in u.iter_mut().zip(&dmarginal) {
                        *a += g / n;
                    }
                }
                value
            }
        };

        let inv_var = 1.0 / (sigma * sigma);
        let l2 = 0.5 * inv_var * theta.iter().map(|t| t * t).sum::<f64>();
        let mut gradient = theta.mapv(|t| t * inv_var);

        let mut dscore = vec![0.0; n_classes];
        for ((d, p), u) in docs.iter().zip(&probs).zip(&upstream) {
            let dot: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
            let mut any = false;
            for y in 0..n_classes {
                dscore[y] = p[y] * (u[y] - dot);
                any |= dscore[y] != 0.0;
            }
            if !any {
                continue;
            }
            for (y, ds) in dscore.iter().enumerate() {
                let mut row = gradient.row_mut(y);
                for &(i, x) in d.entries() {
                    row[i] += ds * x as f64;
                }
            }
        }

        let total = ge_fl_kl + l2 + regularizer;
        if !total.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("objective".into()));
        }
        Ok(ObjectiveReport {
            total,
            ge_fl_kl,
            l2,
            regularizer,
            gradient,
        })
    }
}

fn constraints(
    corpus: &Corpus,
    set: &LabeledFeatureSet,
    policy: AbsentFeaturePolicy,
    skipped: &mut Vec<usize>,
) -> Result<Vec<Constraint>> {
    let mut out = Vec::with_capacity(set.len());
    for (k, dist) in set.entries() {
        let docs: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.documents()[i].contains(*k)).collect();
        if docs.is_empty() {
            match policy {
                AbsentFeaturePolicy::Skip => {
                    skipped.push(*k);
                    continue;
                }
                AbsentFeaturePolicy::Fail => return Err(Error::AbsentFeature(*k)),
            }
        }
        out.push(Constraint {
            target: dist.probs().to_vec(),
            docs,
        });
    }
    Ok(out)
}

fn mean<'b>(rows: impl Iterator<Item = &'b Vec<f64>>, n_classes: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n_classes];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Sum of KL(target || q_k) over constraints, scaled by `weight`, with the
/// matching upstream contributions.
fn feature_terms(constraints: &[Constraint], probs: &[Vec<f64>], upstream: &mut [Vec<f64>], weight: f64) -> Result<f64> {
    let mut value = 0.0;
    for c in constraints {
        let q = mean(c.docs.iter().map(|&d| &probs[d]), c.target.len());
        value += weight * kl(&c.target, &q)?;
        let scale = weight / c.docs.len() as f64;
        let dq: Vec<f64> = c
            .target
            .iter()
            .zip(&q)
            .map(|(t, qi)| if *t > 0.0 { -scale * t / qi } else { 0.0 })
            .collect();
        for &d in &c.docs {
            for (u, g) in upstream[d].iter_mut().zip(&dq) {
                *u += g;
            }
        }
    }
    Ok(value)
}

/// `lambda * sum p ln p` and its derivative `lambda * (ln p + 1)`.
fn neg_entropy(p: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if lambda == 0.0 {
        return Ok((0.0, vec![0.0; p.len()]));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for &pi in p {
        if pi <= 0.0 {
            return Err(Error::NonFinite("log of a zero class marginal".into()));
        }
        value += pi * pi.ln();
        grad.push(lambda * (pi.ln() + 1.0));
    }
    Ok((lambda * value, grad))
}

/// GE-FL objective with the L2 prior only.
pub fn ge_fl_objective(params: &ModelParameters, corpus: &Corpus, labeled: &LabeledFeatureSet) -> Result<ObjectiveReport> {
    Objective::new(corpus, labeled, &RegularizationConfig::ge_fl(), AbsentFeaturePolicy::Skip)?.evaluate(params)
}

pub fn regularized_objective(
    params: &ModelParameters,
    corpus: &Corpus,
    labeled: &LabeledFeatureSet,
    config: &RegularizationConfig,
) -> Result<ObjectiveReport> {
    Objective::new(corpus, labeled, config, AbsentFeaturePolicy::Skip)?.evaluate(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SparseDocument, Vocabulary};
    use crate::knowledge::reference_heuristic;

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let v = kl(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((v - (0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln())).abs() < 1e-15);
        assert!((v - 0.368064).abs() < 1e-6);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(kl(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::AbsoluteContinuity { index: 1 })));
        assert!(kl(&[1.0, 0.0], &[1.0, 0.0]).is_ok());
    }

    fn corpus() -> Corpus {
        let docs = vec![
            SparseDocument::new([(0, 2), (1, 1)], 0, "a"),
            SparseDocument::new([(1, 1), (2, 3)], 1, "b"),
            SparseDocument::new([(0, 1), (2, 1)], 0, "c"),
        ];
        let v = Vocabulary::new(vec!["aa".into(), "bb".into(), "cc".into(), "dd".into()]).unwrap();
        Corpus::new(docs, v, vec!["neg".into(), "pos".into()]).unwrap()
    }

    fn one_feature() -> LabeledFeatureSet {
        LabeledFeatureSet::new(vec![(0, reference_heuristic(&[0], 2).unwrap())], FeatureRole::Labeled).unwrap()
    }

    #[test]
    fn ge_fl_at_origin() {
        let c = corpus();
        let r = ge_fl_objective(&ModelParameters::zeros(2, 4, 1.0), &c, &one_feature()).unwrap();
        assert!((r.total - 0.368064).abs() < 1e-6);
        assert_eq!(r.l2, 0.0);
        assert_eq!(r.regularizer, 0.0);
    }

    #[test]
    fn regularizers_at_origin() {
        let c = corpus();
        let zero = ModelParameters::zeros(2, 4, 1.0);
        let k = one_feature();
        let me = RegularizationConfig {
            method: Method::MaxEntropy,
            beta: 2.0,
            ..RegularizationConfig::ge_fl()
        };
        let r = regularized_objective(&zero, &c, &k, &me).unwrap();
        assert!((r.regularizer + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let klc = RegularizationConfig {
            method: Method::KlDivergence,
            beta: 1.0,
            reference: Some(ReferenceDistribution::new(vec![0.2, 0.8]).unwrap()),
            neutral: None,
        };
        let r = regularized_objective(&zero, &c, &k, &klc).unwrap();
        let expected = 0.2 * 0.4f64.ln() + 0.8 * 1.6f64.ln();
        assert!((r.regularizer - expected).abs() < 1e-12);
        assert!((r.regularizer - 0.192745).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let c = corpus();
        let zero = ModelParameters::zeros(2, 4, 1.0);
        let k = one_feature();
        let bad = RegularizationConfig {
            method: Method::KlDivergence,
            ..RegularizationConfig::ge_fl()
        };
        assert!(matches!(regularized_objective(&zero, &c, &k, &bad), Err(Error::Config(_))));
        let bad = RegularizationConfig {
            method: Method::Neutral,
            ..RegularizationConfig::ge_fl()
        };
        assert!(regularized_objective(&zero, &c, &k, &bad).is_err());
        let bad = RegularizationConfig {
            beta: -1.0,
            ..RegularizationConfig::ge_fl()
        };
        assert!(regularized_objective(&zero, &c, &k, &bad).is_err());
        assert!(matches!(
            ge_fl_objective(&zero, &c, &LabeledFeatureSet::empty(FeatureRole::Labeled)),
            Err(Error::NoLabeledFeatures)
        ));
    }

    #[test]
    fn absent_features() {
        let c = corpus();
        let zero = ModelParameters::zeros(2, 4, 1.0);
        let k = LabeledFeatureSet::new(
            vec![(0, reference_heuristic(&[0], 2).unwrap()), (3, reference_heuristic(&[1], 2).unwrap())],
            FeatureRole::Labeled,
        )
        .unwrap();
        let obj = Objective::new(&c, &k, &RegularizationConfig::ge_fl(), AbsentFeaturePolicy::Skip).unwrap();
        assert_eq!(obj.skipped(), &[3]);
        assert!((obj.evaluate(&zero).unwrap().total - 0.368064).abs() < 1e-6);
        assert!(matches!(
            Objective::new(&c, &k, &RegularizationConfig::ge_fl(), AbsentFeaturePolicy::Fail),
            Err(Error::AbsentFeature(3))
        ));
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("kl-divergence".parse::<Method>().unwrap(), Method::KlDivergence);
        assert!("bogus".parse::<Method>().is_err());
    }
}
