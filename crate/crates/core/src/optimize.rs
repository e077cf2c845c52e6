//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Stopping rules and line-search constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_steps: usize,
    pub memory: usize,
    /// Stop when `‖g‖∞ ≤ gradient_tol`.
    pub gradient_tol: f64,
    /// Stop when an accepted step lowers `f` by less than `value_rtol·max(1, |f|)`.
    pub value_rtol: f64,
    /// Largest allowed step in any coordinate.
    pub max_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_steps: 100,
            memory: 10,
            gradient_tol: 1e-5,
            value_rtol: 1e-10,
            max_step: 1.0,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ValueTolerance,
    MaxSteps,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub steps: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f`, which returns the value and gradient or `None` where the
/// objective cannot be evaluated (treated as +∞ by the line search).
///
/// The second argument passed to `f` is the number of accepted steps so far,
/// so a stochastic objective can stay fixed within one line search.
///
/// Returns `None` only if the starting point itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64], usize) -> Option<(f64, Vec<f64>)>,
{
    let (mut fx, mut g) = f(x0, 0)?;
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut steps = 0;
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    let termination = loop {
        if inf_norm(&g) <= opts.gradient_tol {
            break Termination::GradientTolerance;
        }
        if steps >= opts.max_steps {
            break Termination::MaxSteps;
        }
        let mut d = two_loop(&g, &history);
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let biggest = inf_norm(&d);
        if biggest > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / biggest);
        }
        let slope = dot(&d, &g);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            evaluations += 1;
            if let Some((ft, gt)) = f(&trial, steps) {
                if ft.is_finite() && ft <= fx + opts.armijo * t * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break Termination::LineSearchFailed;
        };
        steps += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        let decrease = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        if decrease <= opts.value_rtol * fx.abs().max(1.0) {
            break Termination::ValueTolerance;
        }
    };

    Some(LbfgsResult {
        x,
        value: fx,
        gradient: g,
        steps,
        evaluations,
        termination,
        trace,
    })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
