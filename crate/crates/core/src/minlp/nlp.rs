//! Augmented-Lagrangian solver for smooth problems with box bounds and
//! inequality constraints `g(x) <= 0`. The bound-constrained subproblems are
//! minimized with a projected Newton method on a finite-difference Hessian or
//! with projected limited-memory BFGS.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::OptimizeError;

pub trait ConstrainedProblem {
    fn dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    /// Objective value; writes the constraint values into `g`.
    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64;
    /// Gradient of `f + sum_i w_i g_i`.
    fn grad(&self, x: &[f64], w: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    ProjectedNewton,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlpOptions {
    pub method: InnerMethod,
    pub stationarity_tol: f64,
    pub violation_tol: f64,
    /// Cap on the inner iterations summed over all subproblems.
    pub max_iterations: usize,
    pub max_outer: usize,
    pub mu0: f64,
    pub mu_max: f64,
    pub memory: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            method: InnerMethod::ProjectedNewton,
            stationarity_tol: 1e-6,
            violation_tol: 1e-8,
            max_iterations: 2000,
            max_outer: 60,
            mu0: 10.0,
            mu_max: 1e12,
            memory: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// `max(0, max_i g_i)`.
    pub violation: f64,
    /// Infinity norm of the projected Lagrangian gradient.
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub multipliers: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOutcome {
    pub pg_norm: f64,
    pub iterations: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut n: f64 = 0.0;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i];
        n = n.max(step.abs());
    }
    n
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
}

/// Projected L-BFGS on `lo <= x <= hi`. `fun` returns the value and writes the
/// gradient.
pub(crate) fn minimize_box<F>(fun: &mut F, x: &mut [f64], lo: &[f64], hi: &[f64], tol: f64, max_iter: usize, memory: usize) -> InnerOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    project(x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fun(x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut d = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut free = vec![true; n];
    let mut alpha = vec![0.0; memory];
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(x, &g, lo, hi);
    while pg > tol && iterations < max_iter {
        iterations += 1;
        for i in 0..n {
            free[i] = lo[i] < hi[i] && !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
        }
        // Two-loop recursion on the free subspace.
        for i in 0..n {
            d[i] = if free[i] { -g[i] } else { 0.0 };
        }
        for (j, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot_masked(s, &d, &free);
            alpha[j] = a;
            for i in 0..n {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
        }
        if let Some((s, y, _)) = hist.back() {
            let yy = dot_masked(y, y, &free);
            let sy = dot_masked(s, y, &free);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for (j, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot_masked(y, &d, &free);
            for i in 0..n {
                if free[i] {
                    d[i] += (alpha[j] - b) * s[i];
                }
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hist.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut t = if hist.is_empty() {
            let dn = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dn).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut ft = f;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = (x[i] + t * d[i]).clamp(lo[i], hi[i]);
            }
            let dec: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if dec < 0.0 {
                ft = fun(&xt, &mut gt);
                if ft.is_finite() && ft <= f + 1e-4 * dec {
                    accepted = true;
                    break;
                }
                // Accept a non-increasing step when rounding dominates.
                if ft.is_finite() && ft <= f && dec.abs() < 1e-12 * (1.0 + f.abs()) {
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        }
        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * ss.sqrt() * yy.sqrt() && sy > 0.0 {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        f = ft;
        pg = projected_gradient_norm(x, &g, lo, hi);
    }
    InnerOutcome { pg_norm: pg, iterations }
}

/// Projected Newton (Bertsekas) with an epsilon-active set. The Hessian of
/// the free block is built from forward differences of the gradient and
/// shifted until it is positive definite.
pub(crate) fn minimize_box_newton<F>(fun: &mut F, x: &mut [f64], lo: &[f64], hi: &[f64], tol: f64, max_iter: usize) -> InnerOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    project(x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fun(x, &mut g);
    let mut gp = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(x, &g, lo, hi);
    let mut shift = 0.0f64;
    while pg > tol && iterations < max_iter {
        iterations += 1;
        let eps = pg.min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| lo[i] < hi[i] && !((x[i] <= lo[i] + eps && g[i] > 0.0) || (x[i] >= hi[i] - eps && g[i] < 0.0)))
            .collect();
        let nf = free.len();
        let mut hess = DMatrix::<f64>::zeros(nf, nf);
        for (c, &j) in free.iter().enumerate() {
            let h = 1e-7 * (1.0 + x[j].abs());
            xp.copy_from_slice(x);
            xp[j] += h;
            fun(&xp, &mut gp);
            for (r, &i) in free.iter().enumerate() {
                hess[(r, c)] = (gp[i] - g[i]) / h;
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let gf = DVector::from_iterator(nf, free.iter().map(|&i| g[i]));
        let diag_scale = (0..nf).fold(0.0f64, |m, i| m.max(hess[(i, i)].abs())).max(1e-12);
        shift = if shift > 0.0 { shift * 0.1 } else { 0.0 };
        let dir = loop {
            let mut m = hess.clone();
            for i in 0..nf {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break Some(ch.solve(&(-&gf)));
            }
            shift = if shift == 0.0 { 1e-10 * diag_scale } else { shift * 10.0 };
            if shift > 1e10 * diag_scale {
                break None;
            }
        };
        d.iter_mut().zip(g.iter()).for_each(|(di, gi)| *di = -gi);
        if let Some(dir) = dir {
            for (r, &i) in free.iter().enumerate() {
                d[i] = dir[r];
            }
        }
        let mut accepted = false;
        let mut ft = f;
        for attempt in 0..2 {
            if attempt == 1 {
                // Projected gradient fallback.
                let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                d.iter_mut().zip(g.iter()).for_each(|(di, gi)| *di = -gi / gn);
            }
            let mut t = 1.0;
            for _ in 0..50 {
                for i in 0..n {
                    xt[i] = (x[i] + t * d[i]).clamp(lo[i], hi[i]);
                }
                let dec: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
                if dec < 0.0 {
                    ft = fun(&xt, &mut gt);
                    if ft.is_finite() && ft <= f + 1e-4 * dec {
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        f = ft;
        pg = projected_gradient_norm(x, &g, lo, hi);
    }
    InnerOutcome { pg_norm: pg, iterations }
}

fn violation(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, &v| m.max(v))
}

/// Solves `min f(x)` subject to `g(x) <= 0` and `lo <= x <= hi` with the
/// Powell-Hestenes-Rockafellar augmented Lagrangian.
pub fn solve_al<P: ConstrainedProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NlpOptions,
) -> Result<NlpResult, OptimizeError> {
    let n = problem.dim();
    let m = problem.n_constraints();
    assert_eq!(x0.len(), n);
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut lambda = vec![0.0; m];
    let mut mu = opts.mu0;
    let mut gbuf = vec![0.0; m];
    let mut wbuf = vec![0.0; m];
    let mut iterations = 0;
    let mut eta = 1e-2;
    let mut best: Option<NlpResult> = None;

    for outer in 0..opts.max_outer {
        let inner_tol = if outer == 0 { 1e-3f64.max(opts.stationarity_tol) } else { (1e-3 / 10f64.powi(outer as i32)).max(opts.stationarity_tol) };
        let mut fun = |xv: &[f64], grad: &mut [f64]| -> f64 {
            let f = problem.eval(xv, &mut gbuf);
            let mut psi = 0.0;
            for i in 0..m {
                let w = (lambda[i] + mu * gbuf[i]).max(0.0);
                wbuf[i] = w;
                psi += (w * w - lambda[i] * lambda[i]) / (2.0 * mu);
            }
            problem.grad(xv, &wbuf, grad);
            f + psi
        };
        let out = match opts.method {
            InnerMethod::ProjectedNewton => minimize_box_newton(&mut fun, &mut x, lo, hi, inner_tol, opts.max_iterations - iterations),
            InnerMethod::Lbfgs => minimize_box(&mut fun, &mut x, lo, hi, inner_tol, opts.max_iterations - iterations, opts.memory),
        };
        iterations += out.iterations;
        let f = problem.eval(&x, &mut gbuf);
        let viol = violation(&gbuf);
        // Complementarity-aware feasibility measure.
        let compl = (0..m).fold(0.0f64, |acc, i| acc.max((gbuf[i]).max(-lambda[i] / mu).abs()));
        let converged_inner = out.pg_norm <= opts.stationarity_tol;
        let candidate = NlpResult {
            x: x.clone(),
            objective: f,
            violation: viol,
            stationarity: out.pg_norm,
            iterations,
            outer_iterations: outer + 1,
            multipliers: (0..m).map(|i| (lambda[i] + mu * gbuf[i]).max(0.0)).collect(),
            converged: false,
        };
        if best.as_ref().map_or(true, |b| (viol, f) < (b.violation, b.objective) || viol <= opts.violation_tol && f < b.objective) {
            best = Some(candidate.clone());
        }
        if converged_inner && viol <= opts.violation_tol && compl <= opts.violation_tol.max(1e-6) {
            let mut res = candidate;
            res.converged = true;
            // The multipliers of the returned point are the updated ones.
            return Ok(res);
        }
        if compl <= eta {
            for i in 0..m {
                lambda[i] = (lambda[i] + mu * gbuf[i]).max(0.0);
            }
            eta = (eta * 0.1).max(opts.violation_tol * 0.1);
        } else {
            mu = (mu * 10.0).min(opts.mu_max);
        }
        if !x.iter().all(|v| v.is_finite()) || iterations >= opts.max_iterations {
            break;
        }
    }
    let b = best.expect("at least one outer iteration");
    Err(OptimizeError::NlpDiverged { iterations, violation: b.violation, stationarity: b.stationarity, best: b.x })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0-2)^2 + (x1-1)^2  s.t. x0 + x1 <= 2, x1^2 - x0 <= 0, 0 <= x <= 5.
    struct Quad;

    impl ConstrainedProblem for Quad {
        fn dim(&self) -> usize {
            2
        }
        fn n_constraints(&self) -> usize {
            2
        }
        fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = x[0] + x[1] - 2.0;
            g[1] = x[1] * x[1] - x[0];
            (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2)
        }
        fn grad(&self, x: &[f64], w: &[f64], grad: &mut [f64]) {
            grad[0] = 2.0 * (x[0] - 2.0) + w[0] - w[1];
            grad[1] = 2.0 * (x[1] - 1.0) + w[0] + 2.0 * w[1] * x[1];
        }
    }

    #[test]
    fn solves_small_constrained_problem() {
        let res = solve_al(&Quad, &[0.0, 0.0], &[0.0, 0.0], &[5.0, 5.0], &NlpOptions::default()).unwrap();
        // Only the linear constraint is active: x = (1.5, 0.5), multiplier 1.
        assert!((res.x[0] - 1.5).abs() < 1e-6, "{:?}", res.x);
        assert!((res.x[1] - 0.5).abs() < 1e-6);
        assert!(res.violation <= 1e-8);
        assert!((res.multipliers[0] - 1.0).abs() < 1e-5);
        assert!(res.multipliers[1].abs() < 1e-8);
    }

    #[test]
    fn box_only_rosenbrock() {
        struct Rosen;
        impl ConstrainedProblem for Rosen {
            fn dim(&self) -> usize {
                2
            }
            fn n_constraints(&self) -> usize {
                0
            }
            fn eval(&self, x: &[f64], _g: &mut [f64]) -> f64 {
                (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
            }
            fn grad(&self, x: &[f64], _w: &[f64], g: &mut [f64]) {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
            }
        }
        // Upper bound on x0 is active at 0.5: optimum (0.5, 0.25).
        let res = solve_al(&Rosen, &[-1.2, 1.0], &[-2.0, -2.0], &[0.5, 2.0], &NlpOptions::default()).unwrap();
        assert!((res.x[0] - 0.5).abs() < 1e-9);
        assert!((res.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn infeasible_problem_reports_divergence() {
        struct Infeasible;
        impl ConstrainedProblem for Infeasible {
            fn dim(&self) -> usize {
                1
            }
            fn n_constraints(&self) -> usize {
                1
            }
            fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 1.0 - x[0];
                x[0]
            }
            fn grad(&self, _x: &[f64], w: &[f64], g: &mut [f64]) {
                g[0] = 1.0 - w[0];
            }
        }
        let opts = NlpOptions { max_outer: 8, ..NlpOptions::default() };
        let err = solve_al(&Infeasible, &[0.0], &[0.0], &[0.5], &opts).unwrap_err();
        match err {
            OptimizeError::NlpDiverged { violation, .. } => assert!((violation - 0.5).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }
}
