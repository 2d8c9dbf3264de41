//! Limited-memory BFGS with a backtracking (Armijo) line search.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Objective {
    fn dim(&self) -> usize;
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

impl<F> Objective for (usize, F)
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        (self.1)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeOptions {
    /// Stop when `‖∇J‖ ≤ gtol · ‖∇J(x_init)‖`.
    pub gtol: f64,
    /// Absolute floor for the gradient norm test.
    pub gtol_abs: f64,
    pub max_iters: usize,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            gtol_abs: 1e-12,
            max_iters: 500,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: DVector<f64>,
    pub cost: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search failed and the best iterate was returned.
    pub line_search_failed: bool,
    pub trace: Vec<TraceEntry>,
}

pub fn minimize(obj: &dyn Objective, x_init: &DVector<f64>, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    if x_init.len() != obj.dim() {
        return Err(Error::dim("minimize", obj.dim(), x_init.len()));
    }
    crate::state::ensure_finite("minimize x_init", x_init.as_slice())?;
    let mut x = x_init.clone();
    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    let g0 = g.norm();
    let tol = (opts.gtol * g0).max(opts.gtol_abs);
    let mut trace = vec![TraceEntry {
        iter: 0,
        cost: f,
        grad_norm: g0,
    }];
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut line_search_failed = false;
    let mut iterations = 0;

    while g.norm() > tol && iterations < opts.max_iters {
        let mut d = -two_loop(&g, &history);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            history.clear();
            d = -g.clone();
            slope = -g.norm_squared();
        }
        // First step has no curvature information; scale to a unit move.
        let mut alpha = if history.is_empty() { 1.0 / g.norm().max(1.0) } else { 1.0 };
        let mut accepted = None;
        let d_norm = d.norm();
        while alpha * d_norm > f64::EPSILON * (1.0 + x.norm()) {
            let trial = &x + &d * alpha;
            match obj.value_and_gradient(&trial) {
                Ok((ft, gt)) if ft.is_finite() && ft <= f + 1e-4 * alpha * slope => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                Ok(_) | Err(Error::Divergence { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            line_search_failed = true;
            break;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == opts.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(TraceEntry {
            iter: iterations,
            cost: f,
            grad_norm: g.norm(),
        });
    }

    Ok(MinimizeResult {
        converged: g.norm() <= tol,
        x,
        cost: f,
        gradient: g,
        iterations,
        line_search_failed,
        trace,
    })
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}
