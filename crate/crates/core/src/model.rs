//! Conditional softmax classifier over bag-of-words counts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::corpus::{Corpus, SparseDocument};
use crate::error::{Error, Result};

/// Class-by-feature weight matrix plus the L2 prior scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub theta: Array2<f64>,
    pub sigma: f64,
}

impl ModelParameters {
    pub fn zeros(n_classes: usize, n_features: usize, sigma: f64) -> Self {
        ModelParameters {
            theta: Array2::zeros((n_classes, n_features)),
            sigma,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.theta.ncols()
    }

    pub fn predict(&self, doc: &SparseDocument) -> Result<Vec<f64>> {
        predict_with(self.theta.view(), doc)
    }

    pub fn classify(&self, doc: &SparseDocument) -> Result<usize> {
        Ok(argmax(&self.predict(doc)?))
    }

    /// Mean prediction over documents containing feature `k`, with the number
    /// of such documents.
    pub fn feature_conditional(&self, corpus: &Corpus, k: usize) -> Result<(Vec<f64>, usize)> {
        let mut acc = vec![0.0; self.n_classes()];
        let mut n = 0;
        for d in corpus.documents().iter().filter(|d| d.contains(k)) {
            for (a, p) in acc.iter_mut().zip(self.predict(d)?) {
                *a += p;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::AbsentFeature(k));
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Ok((acc, n))
    }

    /// Predicted class marginal p(y): mean prediction over all documents.
    pub fn class_marginal(&self, corpus: &Corpus) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut acc = vec![0.0; self.n_classes()];
        for d in corpus.documents() {
            for (a, p) in acc.iter_mut().zip(self.predict(d)?) {
                *a += p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= corpus.len() as f64);
        Ok(acc)
    }

    pub fn to_text(&self, classes: &[String], provenance: &[(String, String)]) -> String {
        let mut out = String::from("#gefl-model v1\n");
        for (k, v) in provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "sigma\t{}", self.sigma);
        let _ = writeln!(out, "classes\t{}", self.n_classes());
        let _ = writeln!(out, "features\t{}", self.n_features());
        for c in classes {
            let _ = writeln!(out, "{c}");
        }
        for row in self.theta.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    /// Parses a model file, returning the parameters and class names.
    pub fn parse(text: &str) -> Result<(ModelParameters, Vec<String>)> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let mut field = |name: &str| -> Result<String> {
            let (i, l) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: format!("missing {name}"),
            })?;
            l.strip_prefix(name)
                .and_then(|r| r.strip_prefix('\t'))
                .map(str::to_string)
                .ok_or(Error::Parse {
                    line: i + 1,
                    message: format!("expected `{name}<TAB>value`"),
                })
        };
        let num_err = |what: &str| Error::Parse {
            line: 0,
            message: format!("bad {what}"),
        };
        let sigma: f64 = field("sigma")?.parse().map_err(|_| num_err("sigma"))?;
        let n_classes: usize = field("classes")?.parse().map_err(|_| num_err("class count"))?;
        let n_features: usize = field("features")?.parse().map_err(|_| num_err("feature count"))?;
        let classes: Vec<String> = lines.by_ref().take(n_classes).map(|(_, l)| l.to_string()).collect();
        let mut values = Vec::with_capacity(n_classes * n_features);
        for (i, l) in lines.by_ref().take(n_classes) {
            let row = l
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if row.len() != n_features {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {n_features} weights, found {}", row.len()),
                });
            }
            values.extend(row);
        }
        if classes.len() != n_classes || values.len() != n_classes * n_features {
            return Err(Error::Parse {
                line: 0,
                message: "model file truncated".into(),
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
        }
        let theta = Array2::from_shape_vec((n_classes, n_features), values).expect("shape checked above");
        Ok((ModelParameters { theta, sigma }, classes))
    }

    pub fn save(&self, path: &Path, classes: &[String], provenance: &[(String, String)]) -> Result<()> {
        fs::write(path, self.to_text(classes, provenance)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ModelParameters, Vec<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelParameters::parse(&text)
    }
}

/// Softmax of the linear class scores, with max subtraction.
pub(crate) fn predict_with(theta: ArrayView2<f64>, doc: &SparseDocument) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; theta.nrows()];
    for (y, s) in scores.iter_mut().enumerate() {
        let row = theta.row(y);
        for &(i, x) in doc.entries() {
            *s += row[i] * x as f64;
        }
    }
    softmax_in_place(&mut scores)?;
    Ok(scores)
}

pub(crate) fn softmax_in_place(scores: &mut [f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("class score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        z += *s;
    }
    scores.iter_mut().for_each(|s| *s /= z);
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use ndarray::array;

    fn doc(pairs: &[(usize, u32)]) -> SparseDocument {
        SparseDocument::new(pairs.iter().copied(), 0, "d")
    }

    #[test]
    fn zero_parameters_predict_uniform() {
        let m = ModelParameters::zeros(3, 4, 1.0);
        assert_eq!(m.predict(&doc(&[(1, 2), (3, 1)])).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(m.classify(&doc(&[(0, 1)])).unwrap(), 0);
    }

    #[test]
    fn two_way_softmax() {
        let m = ModelParameters {
            theta: array![[1.0], [0.0]],
            sigma: 1.0,
        };
        let p = m.predict(&doc(&[(0, 1)])).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        assert_eq!(m.classify(&doc(&[(0, 1)])).unwrap(), 0);
    }

    #[test]
    fn shift_invariance() {
        let m = ModelParameters {
            theta: array![[0.3, -1.0], [0.7, 2.0], [-0.4, 0.1]],
            sigma: 1.0,
        };
        let d = doc(&[(0, 2), (1, 1)]);
        let shifted = ModelParameters {
            theta: &m.theta + 5.0,
            sigma: 1.0,
        };
        let (a, b) = (m.predict(&d).unwrap(), shifted.predict(&d).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let m = ModelParameters {
            theta: array![[800.0], [0.0]],
            sigma: 1.0,
        };
        let p = m.predict(&doc(&[(0, 3)])).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let bad = ModelParameters {
            theta: array![[f64::NAN], [0.0]],
            sigma: 1.0,
        };
        assert!(bad.predict(&doc(&[(0, 1)])).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax(&[0.7311, 0.2689]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }

    /// Two docs whose predictions are (0.6, 0.4) and (0.2, 0.8).
    fn two_doc_corpus() -> (ModelParameters, Corpus) {
        // feature 1 carries the score gap: ln(0.6/0.4) and ln(0.2/0.8)
        let theta = array![[0.0, (0.6f64 / 0.4).ln(), (0.2f64 / 0.8).ln()], [0.0, 0.0, 0.0]];
        let docs = vec![
            SparseDocument::new([(0, 1), (1, 1)], 0, "a"),
            SparseDocument::new([(0, 1), (2, 1)], 1, "b"),
        ];
        let v = Vocabulary::new(vec!["aa".into(), "bb".into(), "cc".into()]).unwrap();
        (
            ModelParameters { theta, sigma: 1.0 },
            Corpus::new(docs, v, vec!["neg".into(), "pos".into()]).unwrap(),
        )
    }

    #[test]
    fn feature_conditional_and_marginal() {
        let (m, c) = two_doc_corpus();
        let (q, n) = m.feature_conditional(&c, 0).unwrap();
        assert_eq!(n, 2);
        assert!((q[0] - 0.4).abs() < 1e-12 && (q[1] - 0.6).abs() < 1e-12);
        let (q1, n1) = m.feature_conditional(&c, 1).unwrap();
        assert_eq!(n1, 1);
        assert_eq!(q1, m.predict(&c.documents()[0]).unwrap());
        let marginal = m.class_marginal(&c).unwrap();
        assert!((marginal[0] - 0.4).abs() < 1e-12);

        let zero = ModelParameters::zeros(2, 3, 1.0);
        assert_eq!(zero.feature_conditional(&c, 2).unwrap().0, vec![0.5, 0.5]);
    }

    #[test]
    fn absent_feature_is_reported() {
        let (m, c) = two_doc_corpus();
        let c = c.subset(&[0]);
        assert!(matches!(m.feature_conditional(&c, 2), Err(Error::AbsentFeature(2))));
    }

    #[test]
    fn model_file_round_trip() {
        let m = ModelParameters {
            theta: array![[0.1, -2.5e-17, 1.0 / 3.0], [f64::MIN_POSITIVE, 7.0, -0.0]],
            sigma: 0.75,
        };
        let classes = vec!["neg".to_string(), "pos".to_string()];
        let text = m.to_text(&classes, &[("beta".into(), "5".into())]);
        let (back, names) = ModelParameters::parse(&text).unwrap();
        assert_eq!(names, classes);
        assert_eq!(back.sigma, m.sigma);
        for (a, b) in back.theta.iter().zip(m.theta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
