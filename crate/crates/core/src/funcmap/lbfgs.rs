//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub history: usize,
    /// Stop when `‖g‖ ≤ gtol · (1 + |f|)`.
    pub gtol: f64,
    /// Stop when an accepted step lowers `f` by at most `ftol · max(1, |f|)`.
    pub ftol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            history: 10,
            gtol: 1e-7,
            ftol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    /// Neither the Wolfe search nor a steepest-descent fallback could
    /// decrease the objective.
    NoDescent,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        matches!(self.reason, StopReason::GradientTolerance | StopReason::RelativeDecrease)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct Searcher<'a, F> {
    fun: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Searcher<'_, F> {
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evaluations += 1;
        (self.fun)(x)
    }

    /// Evaluates at `alpha`, halving towards `floor` while the objective is
    /// non-finite. Returns None if no finite value is found.
    fn finite_trial(&mut self, x: &[f64], d: &[f64], mut alpha: f64, floor: f64) -> Option<Trial> {
        for _ in 0..60 {
            let (f, g) = self.eval(&axpy(x, alpha, d));
            if f.is_finite() && g.iter().all(|v| v.is_finite()) {
                let slope = dot(&g, d);
                return Some(Trial { alpha, f, g, slope });
            }
            alpha = floor + 0.5 * (alpha - floor);
        }
        None
    }

    /// Strong-Wolfe search (bracketing + zoom with safeguarded cubic
    /// interpolation). `Err` means only non-finite values were met.
    fn wolfe(
        &mut self,
        x: &[f64],
        f0: f64,
        slope0: f64,
        d: &[f64],
        alpha0: f64,
        opts: &LbfgsOptions,
    ) -> std::result::Result<Option<Trial>, ()> {
        let armijo = |t: &Trial| t.f <= f0 + opts.c1 * t.alpha * slope0;
        let curvature = |t: &Trial| t.slope.abs() <= -opts.c2 * slope0;
        let mut prev = Trial {
            alpha: 0.0,
            f: f0,
            g: Vec::new(),
            slope: slope0,
        };
        let mut alpha = alpha0;
        let mut best: Option<Trial> = None;
        for i in 0..opts.max_line_search {
            let Some(t) = self.finite_trial(x, d, alpha, prev.alpha) else {
                return if best.is_some() { Ok(best) } else { Err(()) };
            };
            if !armijo(&t) || (i > 0 && t.f >= prev.f) {
                return Ok(self.zoom(x, f0, slope0, d, prev, t, opts).or(best));
            }
            if curvature(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return Ok(self.zoom(x, f0, slope0, d, t, prev, opts).or(best));
            }
            alpha = 2.0 * t.alpha;
            if best.as_ref().is_none_or(|b| t.f < b.f) {
                best = Some(Trial { g: t.g.clone(), ..t });
            }
            prev = t;
        }
        Ok(best)
    }

    #[allow(clippy::too_many_arguments)]
    fn zoom(
        &mut self,
        x: &[f64],
        f0: f64,
        slope0: f64,
        d: &[f64],
        mut lo: Trial,
        mut hi: Trial,
        opts: &LbfgsOptions,
    ) -> Option<Trial> {
        let mut best: Option<Trial> = None;
        for _ in 0..opts.max_line_search {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = (b - a).abs();
            if width <= 1e-16 * a.abs().max(b.abs()).max(1e-300) {
                break;
            }
            let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
            let (left, right) = (a.min(b), a.max(b));
            if !(alpha > left + 0.1 * width && alpha < right - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let t = self.finite_trial(x, d, alpha, lo.alpha)?;
            if t.f > f0 + opts.c1 * t.alpha * slope0 || t.f >= lo.f {
                hi = t;
            } else {
                if t.slope.abs() <= -opts.c2 * slope0 {
                    return Some(t);
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                if best.as_ref().is_none_or(|b| t.f < b.f) {
                    best = Some(Trial { g: t.g.clone(), ..t });
                }
                lo = t;
            }
        }
        // give up on curvature: accept the best sufficient-decrease point
        if lo.alpha > 0.0 && !lo.g.is_empty() {
            return Some(lo);
        }
        best
    }
}

/// Minimizer of the cubic interpolating values and slopes at two trials.
fn cubic_min(p: &Trial, q: &Trial) -> Option<f64> {
    if p.g.is_empty() && p.alpha != 0.0 || q.g.is_empty() && q.alpha != 0.0 {
        return None;
    }
    let (a, fa, ga) = (p.alpha, p.f, p.slope);
    let (b, fb, gb) = (q.alpha, q.f, q.slope);
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Minimizes `fun` from `x0`. `fun` returns the value and gradient.
pub fn minimize<F>(x0: Vec<f64>, fun: F, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_preconditioned(x0, fun, None, opts)
}

/// As [`minimize`], with `diag` (positive, e.g. the Hessian diagonal) as the
/// initial inverse-Hessian scaling `H₀ = γ diag⁻¹`. Stopping tests use the
/// unscaled gradient.
pub fn minimize_preconditioned<F>(
    x0: Vec<f64>,
    mut fun: F,
    diag: Option<&[f64]>,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let inv: Option<Vec<f64>> = match diag {
        Some(d) => {
            if d.len() != x0.len() || d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Argument("preconditioner must be positive and match x".into()));
            }
            Some(d.iter().map(|v| 1.0 / v).collect())
        }
        None => None,
    };
    let inv = inv.as_deref();
    let mut search = Searcher {
        fun: &mut fun,
        evaluations: 0,
    };
    let mut x = x0;
    let (mut f, mut g) = search.eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective {
            iteration: 0,
            last_valid: x,
        });
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;
    let reason = loop {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.gtol * (1.0 + f.abs()) {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }
        iterations += 1;

        let d = direction(&g, &hist, inv);
        let mut slope = dot(&g, &d);
        let (d, alpha0) = if slope < 0.0 && !hist.is_empty() {
            (d, 1.0)
        } else {
            // first step or a non-descent direction: scaled steepest descent
            hist.clear();
            let d = descent(&g, inv);
            slope = dot(&g, &d);
            let alpha0 = if inv.is_some() { 1.0 } else { 1.0 / gnorm };
            (d, alpha0)
        };
        let accepted = match search.wolfe(&x, f, slope, &d, alpha0, opts) {
            Ok(t) => t,
            Err(()) => {
                return Err(Error::NonFiniteObjective {
                    iteration: iterations,
                    last_valid: x,
                })
            }
        };
        let trial = match accepted {
            Some(t) => Some((t, d)),
            None => {
                hist.clear();
                let d = descent(&g, inv);
                let alpha0 = if inv.is_some() { 1.0 } else { 1.0 / gnorm };
                armijo_descent(&mut search, &x, f, &g, &d, alpha0, opts).map(|t| (t, d))
            }
        };
        let Some((t, d)) = trial else {
            break StopReason::NoDescent;
        };
        let s: Vec<f64> = d.iter().map(|v| t.alpha * v).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if hist.len() == opts.history {
                hist.pop_front();
            }
            hist.push_back((s.clone(), y, 1.0 / sy));
        }
        x = axpy(&x, 1.0, &s);
        let decrease = f - t.f;
        f = t.f;
        g = t.g;
        if decrease <= opts.ftol * f.abs().max(1.0) {
            break StopReason::RelativeDecrease;
        }
    };
    let grad_norm = dot(&g, &g).sqrt();
    Ok(LbfgsResult {
        x,
        f,
        grad_norm,
        iterations,
        evaluations: search.evaluations,
        reason,
    })
}

/// `-diag⁻¹ g`, or `-g` without a preconditioner.
fn descent(g: &[f64], inv: Option<&[f64]>) -> Vec<f64> {
    match inv {
        Some(h) => g.iter().zip(h).map(|(v, h)| -v * h).collect(),
        None => g.iter().map(|v| -v).collect(),
    }
}

fn armijo_descent<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    search: &mut Searcher<'_, F>,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    mut alpha: f64,
    opts: &LbfgsOptions,
) -> Option<Trial> {
    let decrease = -dot(g, d);
    for _ in 0..50 {
        let (ft, gt) = search.eval(&axpy(x, alpha, d));
        if ft.is_finite() && ft <= f - opts.c1 * alpha * decrease && ft < f {
            let slope = dot(&gt, d);
            return Some(Trial {
                alpha,
                f: ft,
                g: gt,
                slope,
            });
        }
        alpha *= 0.5;
    }
    None
}

/// Two-loop recursion for `-H g`.
fn direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, inv: Option<&[f64]>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        match inv {
            Some(h) => {
                let yhy: f64 = y.iter().zip(h).map(|(yi, hi)| yi * yi * hi).sum();
                let gamma = dot(s, y) / yhy;
                q.iter_mut().zip(h).for_each(|(v, hi)| *v *= gamma * hi);
            }
            None => {
                let gamma = dot(s, y) / dot(y, y);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let mut f = 0.0;
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        (f, g)
    }

    #[test]
    fn minimizes_rosenbrock() {
        let opts = LbfgsOptions {
            max_iter: 2000,
            ftol: 0.0,
            ..Default::default()
        };
        let r = minimize(vec![-1.2, 1.0, -1.2, 1.0, 0.5], rosenbrock, &opts).unwrap();
        assert!(r.converged(), "{:?}", r.reason);
        for v in r.x {
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn quadratic_in_few_iterations() {
        let diag = [1.0, 10.0, 100.0, 3.0];
        let fun = |x: &[f64]| {
            let f = x.iter().zip(&diag).map(|(v, d)| 0.5 * d * (v - 1.0) * (v - 1.0)).sum();
            let g = x.iter().zip(&diag).map(|(v, d)| d * (v - 1.0)).collect();
            (f, g)
        };
        let r = minimize(vec![0.0; 4], fun, &LbfgsOptions::default()).unwrap();
        assert!(r.converged(), "{:?}", r.reason);
        assert!(r.iterations < 30);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: infinite for x <= 0, minimum at x = 1
        let fun = |x: &[f64]| {
            if x[0] <= 0.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]])
            }
        };
        let r = minimize(vec![5.0], fun, &LbfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn non_finite_start_reports_last_valid() {
        let fun = |_: &[f64]| (f64::INFINITY, vec![0.0]);
        match minimize(vec![2.0], fun, &LbfgsOptions::default()) {
            Err(Error::NonFiniteObjective { last_valid, .. }) => assert_eq!(last_valid, vec![2.0]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
