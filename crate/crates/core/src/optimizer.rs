//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The search direction comes from the two-loop recursion over the last `m`
//! curvature pairs, scaled by `s'y / y'y` of the newest pair. The line search
//! is the bracketing/zoom scheme with safeguarded cubic interpolation.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Sup-norm of the gradient at which the run counts as converged.
    pub gradient_tolerance: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Strong Wolfe curvature constant.
    pub curvature: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            memory: 10,
            max_iterations: 300,
            gradient_tolerance: 1e-5,
            sufficient_decrease: 1e-4,
            curvature: 0.9,
            max_line_search: 40,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Config("L-BFGS memory must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient tolerance must be positive".into()));
        }
        if !(0.0 < self.sufficient_decrease && self.sufficient_decrease < self.curvature && self.curvature < 1.0) {
            return Err(Error::Config(format!(
                "line search constants must satisfy 0 < {} < {} < 1",
                self.sufficient_decrease, self.curvature
            )));
        }
        if self.max_line_search == 0 {
            return Err(Error::Config("line search needs at least one evaluation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub iterations: usize,
    pub evaluations: usize,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Evaluation counter around the oracle. Numerical failures during the line
/// search are mapped to an infinite value so the step gets shortened.
struct Oracle<F> {
    f: F,
    evaluations: usize,
}

impl<F> Oracle<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        (self.f)(x)
    }

    fn probe(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        match self.eval(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Ok(Some((v, g))),
            Ok(_) | Err(Error::NonFinite(_)) | Err(Error::AbsoluteContinuity { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient at a point.
pub fn minimize<F>(f: F, x0: Vec<f64>, config: &OptimizerConfig) -> Result<(Vec<f64>, OptimizationTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    let mut oracle = Oracle { f, evaluations: 0 };
    let (f0, g0) = oracle.eval(&x0)?;
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    if g0.len() != x0.len() {
        return Err(Error::Input(format!("gradient has {} entries for {} parameters", g0.len(), x0.len())));
    }
    let mut current = Point { x: x0, f: f0, g: g0 };
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(config.memory);
    let mut objective_history = vec![current.f];
    let mut iterations = 0;

    let termination = loop {
        if sup_norm(&current.g) <= config.gradient_tolerance {
            break Termination::Converged;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        let mut direction = two_loop(&current.g, &history);
        let mut slope = dot(&direction, &current.g);
        if !(slope < 0.0) {
            history.clear();
            direction = current.g.iter().map(|g| -g).collect();
            slope = dot(&direction, &current.g);
        }
        let initial_step = if history.is_empty() {
            (1.0 / current.g.iter().map(|g| g * g).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut step = line_search(&mut oracle, &current, &direction, slope, initial_step, config)?;
        if step.is_none() && !history.is_empty() {
            // retry once along steepest descent with a fresh memory
            history.clear();
            direction = current.g.iter().map(|g| -g).collect();
            slope = dot(&direction, &current.g);
            let initial = (1.0 / slope.abs().sqrt()).min(1.0);
            step = line_search(&mut oracle, &current, &direction, slope, initial, config)?;
        }
        let Some(next) = step else {
            break Termination::LineSearchFailure;
        };

        let s: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&current.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        // strong Wolfe steps guarantee s'y > 0; fallback steps may not
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        debug_assert!(next.f <= current.f);
        current = next;
        iterations += 1;
        objective_history.push(current.f);
    };

    let trace = OptimizationTrace {
        iterations,
        evaluations: oracle.evaluations,
        final_objective: current.f,
        final_gradient_norm: sup_norm(&current.g),
        termination,
        objective_history,
    };
    Ok((current.x, trace))
}

fn two_loop(g: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = 1.0 / (last.rho * dot(&last.y, &last.y));
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for (p, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

#[derive(Clone, Copy)]
struct Sample {
    a: f64,
    phi: f64,
    dphi: f64,
}

/// Strong Wolfe line search. Returns `None` when no acceptable step was found
/// and no evaluated point decreased the objective.
fn line_search<F>(
    oracle: &mut Oracle<F>,
    start: &Point,
    direction: &[f64],
    slope: f64,
    initial_step: f64,
    config: &OptimizerConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let c1 = config.sufficient_decrease;
    let c2 = config.curvature;
    let phi0 = start.f;
    let mut best: Option<Point> = None;
    let mut budget = config.max_line_search;

    let mut evaluate = |a: f64, best: &mut Option<Point>| -> Result<(Sample, Option<Point>)> {
        let x: Vec<f64> = start.x.iter().zip(direction).map(|(xi, di)| xi + a * di).collect();
        match oracle.probe(&x)? {
            Some((f, g)) => {
                let sample = Sample {
                    a,
                    phi: f,
                    dphi: dot(&g, direction),
                };
                let point = Point { x, f, g };
                if f < phi0 && best.as_ref().is_none_or(|b| f < b.f) {
                    *best = Some(Point {
                        x: point.x.clone(),
                        f,
                        g: point.g.clone(),
                    });
                }
                Ok((sample, Some(point)))
            }
            None => Ok((
                Sample {
                    a,
                    phi: f64::INFINITY,
                    dphi: f64::NAN,
                },
                None,
            )),
        }
    };

    let armijo = |s: &Sample| s.phi <= phi0 + c1 * s.a * slope;
    let wolfe = |s: &Sample| s.dphi.abs() <= -c2 * slope;

    let origin = Sample {
        a: 0.0,
        phi: phi0,
        dphi: slope,
    };
    let mut prev = origin;
    let mut a = initial_step;
    let mut bracket: Option<(Sample, Sample)> = None;
    let mut first = true;
    while budget > 0 {
        budget -= 1;
        let (s, point) = evaluate(a, &mut best)?;
        if !armijo(&s) || (!first && s.phi >= prev.phi) {
            bracket = Some((prev, s));
            break;
        }
        if wolfe(&s) {
            return Ok(point);
        }
        if s.dphi >= 0.0 {
            bracket = Some((s, prev));
            break;
        }
        prev = s;
        a *= 2.0;
        first = false;
    }

    if let Some((mut lo, mut hi)) = bracket {
        while budget > 0 {
            budget -= 1;
            let a = interpolate(&lo, &hi);
            if (a - lo.a).abs() < 1e-16 * lo.a.abs().max(1.0) {
                break;
            }
            let (s, point) = evaluate(a, &mut best)?;
            if !armijo(&s) || s.phi >= lo.phi {
                hi = s;
            } else {
                if wolfe(&s) {
                    return Ok(point);
                }
                if s.dphi * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = s;
            }
        }
    }
    Ok(best.filter(|b| b.f < phi0))
}

/// Cubic interpolation minimizer between two samples, bisection when the
/// cubic is unusable or lands too close to an end of the interval.
fn interpolate(lo: &Sample, hi: &Sample) -> f64 {
    let (left, right) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
    let width = right - left;
    let mid = 0.5 * (lo.a + hi.a);
    if !(hi.phi.is_finite() && hi.dphi.is_finite()) {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (lo.a - hi.a);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (hi.a - lo.a).signum() * disc.sqrt();
    let a = hi.a - (hi.a - lo.a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    if a.is_finite() && a > left + 0.1 * width && a < right - 0.1 * width {
        a
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&g, &g), g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn quadratic_converges_fast() {
        let target = vec![3.0, -1.0, 0.5, 10.0];
        let config = OptimizerConfig {
            gradient_tolerance: 1e-8,
            ..Default::default()
        };
        let (x, trace) = minimize(quadratic(target.clone()), vec![0.0; 4], &config).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert!(trace.iterations <= 5, "{} iterations", trace.iterations);
        assert!(trace.final_gradient_norm < 1e-8);
        for (a, b) in x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        let config = OptimizerConfig {
            gradient_tolerance: 1e-10,
            max_iterations: 1000,
            ..Default::default()
        };
        let (x, trace) = minimize(rosenbrock, vec![-1.2, 1.0], &config).unwrap();
        assert_eq!(trace.termination, Termination::Converged);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!(trace.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let (x, trace) = minimize(quadratic(vec![1.0, 2.0]), vec![1.0, 2.0], &OptimizerConfig::default()).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(trace.iterations, 0);
        assert_eq!(trace.termination, Termination::Converged);
    }

    #[test]
    fn iteration_budget() {
        let config = OptimizerConfig {
            max_iterations: 3,
            gradient_tolerance: 1e-14,
            ..Default::default()
        };
        let (_, trace) = minimize(rosenbrock, vec![-1.2, 1.0], &config).unwrap();
        assert_eq!(trace.termination, Termination::MaxIterations);
        assert_eq!(trace.iterations, 3);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(
            minimize(f, vec![0.0], &OptimizerConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn invalid_config() {
        let c = OptimizerConfig {
            sufficient_decrease: 0.9,
            curvature: 0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            memory: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let config = OptimizerConfig::default();
        let a = minimize(rosenbrock, vec![-1.2, 1.0], &config).unwrap();
        let b = minimize(rosenbrock, vec![-1.2, 1.0], &config).unwrap();
        assert_eq!(a, b);
    }
}
