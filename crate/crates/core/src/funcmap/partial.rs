use nalgebra::{DMatrix, DVector};

use super::{eigen_gap, fmap_objective, solve_fmap_from, FmapProblem, SolveOptions};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialOptions {
    pub w_area: f64,
    pub w_ms: f64,
    pub w_eta: f64,
    pub max_rounds: usize,
    /// Stop when the joint objective changes by at most `tol · max(1, |J|)`.
    pub tol: f64,
    /// Projected-gradient steps on the mask per round.
    pub eta_steps: usize,
    pub solve: SolveOptions,
}

impl Default for PartialOptions {
    fn default() -> Self {
        Self {
            w_area: 1.0,
            w_ms: 1e-2,
            w_eta: 1e-3,
            max_rounds: 20,
            tol: 1e-6,
            eta_steps: 30,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialSolution {
    pub c: DMatrix<f64>,
    /// Membership of each target vertex in the matched region, in [0, 1].
    pub eta: Vec<f64>,
    pub matched_area_fraction: f64,
    pub rounds: usize,
    pub objective: f64,
}

const EPS: f64 = 1e-12;

/// State shared by the mask updates.
struct MaskTerms<'a> {
    problem: &'a FmapProblem,
    opts: &'a PartialOptions,
    /// Target vertex areas divided by the total target area.
    area_frac: Vec<f64>,
    /// Source / target area ratio.
    rho: f64,
    edges: Vec<(usize, usize, f64)>,
    /// Normalizer for the functional-map part, `‖G‖²` at full membership.
    scale: f64,
}

impl MaskTerms<'_> {
    fn masked_problem(&self, eta: &[f64]) -> FmapProblem {
        let p = self.problem;
        let mut q = p.clone();
        q.g = self.masked_coefficients(eta);
        q.row_target = DVector::from_column_slice(eta);
        q.col_target = eta.iter().sum::<f64>() / p.n_source() as f64;
        q
    }

    fn mask_penalties(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let o = self.opts;
        let n = eta.len();
        let mut grad = vec![0.0; n];
        let covered: f64 = eta.iter().zip(&self.area_frac).map(|(e, a)| e * a).sum();
        let gap = covered - self.rho;
        let mut value = o.w_area * gap * gap;
        for i in 0..n {
            grad[i] += 2.0 * o.w_area * gap * self.area_frac[i];
        }
        if o.w_ms > 0.0 {
            for &(i, j, w) in &self.edges {
                let d = eta[i] - eta[j];
                value += o.w_ms * w * d * d;
                grad[i] += 2.0 * o.w_ms * w * d;
                grad[j] -= 2.0 * o.w_ms * w * d;
            }
        }
        if o.w_eta > 0.0 {
            let s = o.w_eta / n as f64;
            for i in 0..n {
                let e = eta[i];
                value -= s * e * (e + EPS).ln();
                grad[i] -= s * ((e + EPS).ln() + e / (e + EPS));
            }
        }
        (value, grad)
    }

    fn masked_coefficients(&self, eta: &[f64]) -> DMatrix<f64> {
        let mut g = self.problem.g_vertex.clone();
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row *= eta[i];
        }
        self.problem.basis_n.project(&g).expect("target features match the target basis")
    }

    /// Mask-dependent part of the joint objective for fixed C, and its gradient.
    fn joint(&self, c: &DMatrix<f64>, eta: &[f64]) -> (f64, Vec<f64>) {
        let p = self.problem;
        let (mut value, mut grad) = self.mask_penalties(eta);
        let a = p.basis_n.areas().as_slice();
        // masked data term and its gradient ∂/∂η_i ‖CF − Φ_Nᵀ diag(Aη) g‖²
        let e = c * &p.f - self.masked_coefficients(eta);
        value += e.norm_squared() / self.scale;
        let back = &p.phi_n * &e; // n_N x d
        for i in 0..eta.len() {
            let dot: f64 = back.row(i).iter().zip(p.g_vertex.row(i).iter()).map(|(x, y)| x * y).sum();
            grad[i] += -2.0 * a[i] * dot / self.scale;
        }
        let w_sum = p.weights.w_sum;
        if w_sum > 0.0 {
            // rows sum to the mask, columns to the matched share of the target
            let col_target = eta.iter().sum::<f64>() / p.n_source() as f64;
            let r = &p.phi_n * (c * &p.pinv_m_ones);
            let s = p.pinv_m.tr_mul(&c.tr_mul(&p.phi_n_ones));
            let row_dev: f64 = r.iter().zip(eta).map(|(x, e)| (x - e).powi(2)).sum();
            let col_sq: f64 = s.iter().map(|v| (v - col_target).powi(2)).sum();
            value += w_sum * (row_dev + col_sq) / self.scale;
            let col_dev: f64 = s.iter().map(|v| v - col_target).sum();
            let shared = -2.0 * col_dev / p.n_source() as f64;
            for i in 0..eta.len() {
                grad[i] += w_sum * (-2.0 * (r[i] - eta[i]) + shared) / self.scale;
            }
        }
        (value, grad)
    }

    /// Full joint objective, including the mask-independent map terms.
    fn total(&self, c: &DMatrix<f64>, eta: &[f64]) -> f64 {
        let (fv, _) = fmap_objective(c, &self.masked_problem(eta));
        fv / self.scale + self.mask_penalties(eta).0
    }
}

/// Alternating minimization over the functional map and a soft membership
/// mask on the target: the source is assumed to be a part of the target.
pub fn solve_partial(problem: &FmapProblem, target: &TriMesh, opts: &PartialOptions) -> Result<PartialSolution> {
    let n = problem.n_target();
    if target.num_vertices() != n {
        return Err(Error::Argument(format!(
            "target mesh has {} vertices, problem has {n}",
            target.num_vertices()
        )));
    }
    for (name, w) in [("w_area", opts.w_area), ("w_ms", opts.w_ms), ("w_eta", opts.w_eta)] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Argument(format!("{name} = {w} must be finite and >= 0")));
        }
    }
    let mut raw = problem.clone();
    raw.eig_gap = eigen_gap(&raw.basis_m, &raw.basis_n, 1.0);
    let problem = &raw;
    let a_n = problem.basis_n.areas();
    let a_m = problem.basis_m.areas();
    let total_n = a_n.total();
    let rho = a_m.total() / total_n;
    if rho > 1.0 {
        log::warn!(
            "source area exceeds target area by {:.1}%; the partial mask will saturate",
            100.0 * (rho - 1.0)
        );
    }
    let area_frac: Vec<f64> = a_n.as_slice().iter().map(|a| a / total_n).collect();
    let mean_area = total_n / n as f64;
    let edges = target
        .edges()
        .into_iter()
        .map(|(i, j)| {
            let w = 0.5 * (a_n.as_slice()[i] + a_n.as_slice()[j]) / mean_area;
            (i, j, w)
        })
        .collect();
    let scale = problem.g.norm_squared().max(f64::MIN_POSITIVE);
    let terms = MaskTerms {
        problem,
        opts,
        area_frac,
        rho,
        edges,
        scale,
    };

    let mut eta = vec![1.0; n];
    let mut c = DMatrix::zeros(problem.k(), problem.k());
    let mut step = 1.0;
    let mut previous = f64::INFINITY;
    let mut rounds = 0;
    let mut objective = f64::INFINITY;
    while rounds < opts.max_rounds {
        rounds += 1;
        let masked = terms.masked_problem(&eta);
        c = solve_fmap_from(&masked, &c, &opts.solve)?.c;

        let (mut value, mut grad) = terms.joint(&c, &eta);
        for _ in 0..opts.eta_steps {
            let gg: f64 = grad.iter().map(|g| g * g).sum();
            if gg == 0.0 {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = eta
                    .iter()
                    .zip(&grad)
                    .map(|(e, g)| (e - step * g).clamp(0.0, 1.0))
                    .collect();
                let moved: f64 = trial.iter().zip(&eta).map(|(a, b)| (a - b).powi(2)).sum();
                if moved == 0.0 {
                    break;
                }
                let (tv, tg) = terms.joint(&c, &trial);
                if tv <= value - 1e-4 / step * moved {
                    eta = trial;
                    value = tv;
                    grad = tg;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let value = terms.total(&c, &eta);
        objective = value;
        if (previous - value).abs() <= opts.tol * value.abs().max(1.0) {
            break;
        }
        previous = value;
    }
    let matched_area_fraction = eta
        .iter()
        .zip(a_n.as_slice())
        .map(|(e, a)| e * a)
        .sum::<f64>()
        / total_n;
    Ok(PartialSolution {
        c,
        eta,
        matched_area_fraction: matched_area_fraction.clamp(0.0, 1.0),
        rounds,
        objective,
    })
}
