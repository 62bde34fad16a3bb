//! Exponentiated-gradient minimization over the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tol: f64,
    pub initial_step: f64,
    /// Vertex restarts start from `(1 − mix)·e_k + mix/K`, since an
    /// exponentiated-gradient iterate can never leave an exact vertex.
    pub vertex_mix: f64,
    /// Weights below this are zeroed and the rest renormalized.
    pub sparsity_threshold: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-10, initial_step: 1.0, vertex_mix: 0.1, sparsity_threshold: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum StartPoint {
    Uniform,
    SoftVertex(usize),
    Vertex(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: StartPoint,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub start: StartPoint,
    pub restarts: Vec<RestartOutcome>,
    /// Objective after each accepted step of the chosen restart.
    pub trace: Vec<f64>,
}

fn is_on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&v| v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

fn sparsify(w: &[f64], threshold: f64) -> Vec<f64> {
    let mut out: Vec<f64> = w.iter().map(|&v| if v < threshold { 0.0 } else { v }).collect();
    if out.iter().all(|&v| v == 0.0) {
        return w.to_vec();
    }
    normalize(&mut out);
    out
}

/// Descent from one starting point. `f` returns the objective and its
/// gradient. Returns the final iterate, its objective, the trace and the
/// iteration count.
fn descend<F>(f: &F, start: Vec<f64>, config: &SimplexConfig) -> (Vec<f64>, f64, Vec<f64>, usize)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut w = start;
    let (mut obj, mut grad) = f(&w);
    let mut trace = vec![obj];
    let mut step = config.initial_step;
    let mut iterations = 0;
    if !obj.is_finite() {
        return (w, obj, trace, 0);
    }
    while iterations < config.max_iter {
        iterations += 1;
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale == 0.0 || !scale.is_finite() {
            break;
        }
        let mut accepted = None;
        while step > 1e-14 {
            let mut cand: Vec<f64> = w.iter().zip(&grad).map(|(wk, gk)| wk * (-step * gk / scale).exp()).collect();
            normalize(&mut cand);
            let (c_obj, c_grad) = f(&cand);
            if c_obj.is_finite() && c_obj < obj {
                accepted = Some((cand, c_obj, c_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, c_obj, c_grad)) = accepted else { break };
        debug_assert!(is_on_simplex(&cand));
        let gain = obj - c_obj;
        w = cand;
        obj = c_obj;
        grad = c_grad;
        trace.push(obj);
        step = (step * 2.0).min(1e3);
        if gain < config.tol {
            break;
        }
    }
    (w, obj, trace, iterations)
}

/// Minimizes `f` over the `k`-simplex from a uniform start and from every
/// softened vertex; the exact vertices are also scored. Every candidate is
/// sparsified before comparison, and the lowest objective wins (earliest on
/// ties), so the result is never worse than the best vertex.
pub fn minimize_on_simplex<F>(f: F, k: usize, config: &SimplexConfig) -> Result<SimplexSolution>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if k == 0 {
        return Err(Error::EmptyLibrary);
    }
    let mut candidates: Vec<(StartPoint, Vec<f64>, Vec<f64>, usize)> = Vec::new();
    let mut run = |start: StartPoint, w0: Vec<f64>| {
        let (w, _, trace, iters) = descend(&f, w0, config);
        candidates.push((start, w, trace, iters));
    };
    run(StartPoint::Uniform, vec![1.0 / k as f64; k]);
    if k > 1 {
        for j in 0..k {
            let mut w0 = vec![config.vertex_mix / k as f64; k];
            w0[j] += 1.0 - config.vertex_mix;
            normalize(&mut w0);
            run(StartPoint::SoftVertex(j), w0);
        }
    }
    for j in 0..k {
        let mut v = vec![0.0; k];
        v[j] = 1.0;
        candidates.push((StartPoint::Vertex(j), v, Vec::new(), 0));
    }
    let mut best: Option<SimplexSolution> = None;
    let mut restarts = Vec::with_capacity(candidates.len());
    for (start, w, trace, iterations) in candidates {
        let w = sparsify(&w, config.sparsity_threshold);
        let (objective, _) = f(&w);
        restarts.push(RestartOutcome { start, objective, iterations });
        if objective.is_finite() && best.as_ref().is_none_or(|b| objective < b.objective) {
            let trace = if trace.is_empty() { vec![objective] } else { trace };
            best = Some(SimplexSolution { weights: w, objective, start, restarts: Vec::new(), trace });
        }
    }
    let mut best = best.ok_or_else(|| Error::Optimization("objective is not finite at any start".into()))?;
    best.restarts = restarts;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic(target: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |w: &[f64]| {
            let obj = w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            let grad = w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            (obj, grad)
        }
    }

    #[test]
    fn single_point_simplex() {
        let s = minimize_on_simplex(quadratic(vec![3.0]), 1, &SimplexConfig::default()).unwrap();
        assert_eq!(s.weights, vec![1.0]);
    }

    #[test]
    fn interior_minimum_is_found() {
        let s = minimize_on_simplex(quadratic(vec![0.2, 0.3, 0.5]), 3, &SimplexConfig::default()).unwrap();
        for (w, t) in s.weights.iter().zip([0.2, 0.3, 0.5]) {
            assert!((w - t).abs() < 1e-4, "{:?}", s.weights);
        }
        assert!(s.trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn exterior_target_lands_on_vertex() {
        let s = minimize_on_simplex(quadratic(vec![2.0, -1.0]), 2, &SimplexConfig::default()).unwrap();
        assert_eq!(s.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn non_finite_everywhere_is_an_error() {
        let r = minimize_on_simplex(|_: &[f64]| (f64::NAN, vec![0.0, 0.0]), 2, &SimplexConfig::default());
        assert!(matches!(r, Err(Error::Optimization(_))));
    }

    proptest! {
        #[test]
        fn result_is_feasible_and_beats_vertices(t in prop::collection::vec(-2.0f64..2.0, 2..6)) {
            let k = t.len();
            let f = quadratic(t);
            let s = minimize_on_simplex(&f, k, &SimplexConfig::default()).unwrap();
            prop_assert!(is_on_simplex(&s.weights));
            for j in 0..k {
                let mut v = vec![0.0; k];
                v[j] = 1.0;
                prop_assert!(s.objective <= f(&v).0 + 1e-12);
            }
        }
    }
}
