//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The objective returns `None` outside its effective domain; such trial
//! points are treated as failed line-search steps. Accepted iterates never
//! increase the objective.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the sup-norm of the gradient drops to this value.
    pub gradient_tolerance: f64,
    /// Stop as soon as the objective reaches this value.
    pub target_value: Option<f64>,
    pub max_backtracks: usize,
    /// Record every accepted objective value.
    pub keep_history: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 20,
            max_iterations: 10_000,
            gradient_tolerance: 1e-10,
            target_value: None,
            max_backtracks: 60,
            keep_history: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Target,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub history: Vec<f64>,
    pub termination: Termination,
}

type Precond<'a> = Option<&'a dyn Fn(&DVector<f64>) -> DVector<f64>>;

fn apply_precond(p: Precond<'_>, v: &DVector<f64>) -> DVector<f64> {
    match p {
        Some(f) => f(v),
        None => v.clone(),
    }
}

/// Minimise `f` from `x0`. `precond`, when given, applies an SPD approximation
/// of the inverse Hessian and seeds the two-loop recursion.
pub fn lbfgs<F>(
    mut f: F,
    x0: DVector<f64>,
    opts: &LbfgsOptions,
    precond: Precond<'_>,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let mut evaluations = 1;
    let (mut fx, mut g) = match f(&x0) {
        Some((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => (v, g),
        _ => return Err(Error::NonFiniteStart),
    };
    let mut x = x0;
    let mut history = Vec::new();
    if opts.keep_history {
        history.push(fx);
    }
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut flat_steps = 0;
    let termination = loop {
        if g.amax() <= opts.gradient_tolerance {
            break Termination::Gradient;
        }
        if let Some(t) = opts.target_value {
            if fx <= t {
                break Termination::Target;
            }
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if pairs.is_empty() {
                    break;
                }
                pairs.clear();
            }
            let d = direction(&g, &pairs, precond);
            let mut gd = g.dot(&d);
            let d = if gd >= 0.0 {
                pairs.clear();
                let d = -apply_precond(precond, &g);
                gd = g.dot(&d);
                d
            } else {
                d
            };
            if !(gd < 0.0) {
                break;
            }
            let mut alpha = if pairs.is_empty() { (1.0 / d.amax()).min(1.0) } else { 1.0 };
            let noise = 1e-13 * fx.abs().max(1e-300);
            for _ in 0..opts.max_backtracks {
                let xt = &x + &d * alpha;
                evaluations += 1;
                if let Some((ft, gt)) = f(&xt) {
                    if ft.is_finite() && gt.iter().all(|c| c.is_finite()) {
                        let armijo = ft <= fx + 1e-4 * alpha * gd;
                        let flat = ft <= fx && (1e-4 * alpha * gd).abs() <= noise;
                        if armijo || flat {
                            accepted = Some((xt, ft, gt, alpha, d.clone()));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gnew, alpha, d)) = accepted else {
            break Termination::Stalled;
        };
        let s = d * alpha;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 && sy > 1e-14 * s.norm() * y.norm() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if fx - fnew <= 1e-16 * fx.abs() {
            flat_steps += 1;
        } else {
            flat_steps = 0;
        }
        x = xn;
        fx = fnew;
        g = gnew;
        iterations += 1;
        if opts.keep_history {
            history.push(fx);
        }
        if flat_steps >= 25 {
            break Termination::Stalled;
        }
    };
    Ok(LbfgsOutcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        evaluations,
        history,
        termination,
    })
}

fn direction(
    g: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    precond: Precond<'_>,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    let mut r = apply_precond(precond, &q);
    if let Some((s, y, _)) = pairs.back() {
        let hy = apply_precond(precond, y);
        let gamma = s.dot(y) / y.dot(&hy);
        if gamma.is_finite() && gamma > 0.0 {
            r *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&r);
        r.axpy(a - b, s, 1.0);
    }
    -r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((v, g))
        };
        let opts = LbfgsOptions { keep_history: true, ..Default::default() };
        let out = lbfgs(f, DVector::from_vec(vec![-1.2, 1.0]), &opts, None).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-7 && (out.x[1] - 1.0).abs() < 1e-7);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start() {
        let f = |_: &DVector<f64>| None;
        let r = lbfgs(f, DVector::zeros(2), &LbfgsOptions::default(), None);
        assert!(matches!(r, Err(Error::NonFiniteStart)));
    }
}
