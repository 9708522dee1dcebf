//! Functional-map estimation, point-map recovery and partial matching.

mod io;
pub mod lbfgs;
mod objective;
mod partial;

pub use io::{read_map, write_map, MapFile};
pub use objective::{clamped_entropy, fmap_objective, term_value, Term, ENTROPY_EPS};
pub use partial::{solve_partial, PartialOptions, PartialSolution};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;
use lbfgs::{LbfgsOptions, StopReason};

/// Objective weights; the defaults are the reference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmapWeights {
    pub alpha: f64,
    pub beta: f64,
    pub w_entropy: f64,
    pub w_sum: f64,
}

impl Default for FmapWeights {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta: 1e-4,
            w_entropy: 1e-5,
            w_sum: 1e-3,
        }
    }
}

impl FmapWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("w_entropy", self.w_entropy),
            ("w_sum", self.w_sum),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Argument(format!("weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_FMAP_K: usize = 10;
pub const MAX_COMMUTATIVITY_CHANNELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemOptions {
    /// Replace more than `max_channels` feature channels by their leading
    /// principal directions when building multiplication operators.
    pub reduce_channels: bool,
    pub max_channels: usize,
    /// Rescale the target spectrum to the source's surface area in the
    /// isometry term. Partial matching ignores this: a part covers less area
    /// than the whole by construction, not by scale.
    pub equalize_area: bool,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            reduce_channels: true,
            max_channels: MAX_COMMUTATIVITY_CHANNELS,
            equalize_area: true,
        }
    }
}

/// `(ρλN_i − λM_j)²`.
pub(crate) fn eigen_gap(basis_m: &SpectralBasis, basis_n: &SpectralBasis, rho: f64) -> DMatrix<f64> {
    let (ln, lm) = (basis_n.eigenvalues(), basis_m.eigenvalues());
    DMatrix::from_fn(ln.len(), lm.len(), |i, j| (rho * ln[i] - lm[j]).powi(2))
}

/// `Φ⁺ Diag(channel) Φ`.
pub fn multiplication_operator(basis: &SpectralBasis, channel: &[f64]) -> Result<DMatrix<f64>> {
    if channel.len() != basis.n() {
        return Err(Error::Argument(format!(
            "channel has {} values, basis has {} vertices",
            channel.len(),
            basis.n()
        )));
    }
    let a = basis.areas().as_slice();
    let mut scaled = basis.phi().clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= a[i] * channel[i];
    }
    Ok(basis.phi().tr_mul(&scaled))
}

/// Everything the objective needs, precomputed once per mesh pair.
/// Source `M` is mapped onto target `N`; `C` sends `M`-coefficients to `N`-coefficients.
#[derive(Debug, Clone)]
pub struct FmapProblem {
    pub(crate) basis_m: SpectralBasis,
    pub(crate) basis_n: SpectralBasis,
    pub(crate) phi_n: DMatrix<f64>,
    pub(crate) pinv_m: DMatrix<f64>,
    pub(crate) f: DMatrix<f64>,
    pub(crate) g: DMatrix<f64>,
    pub(crate) g_vertex: DMatrix<f64>,
    pub(crate) ops_m: Vec<DMatrix<f64>>,
    pub(crate) ops_n: Vec<DMatrix<f64>>,
    pub weights: FmapWeights,
    pub(crate) pinv_m_ones: DVector<f64>,
    pub(crate) phi_n_ones: DVector<f64>,
    pub(crate) row_target: DVector<f64>,
    pub(crate) col_target: f64,
    /// `(ρλN_i − λM_j)²` with `ρ` the target/source area ratio.
    pub(crate) eig_gap: DMatrix<f64>,
}

impl FmapProblem {
    pub fn new(
        basis_m: &SpectralBasis,
        basis_n: &SpectralBasis,
        f: &DMatrix<f64>,
        g: &DMatrix<f64>,
        weights: FmapWeights,
    ) -> Result<Self> {
        Self::with_options(basis_m, basis_n, f, g, weights, ProblemOptions::default())
    }

    pub fn with_options(
        basis_m: &SpectralBasis,
        basis_n: &SpectralBasis,
        f: &DMatrix<f64>,
        g: &DMatrix<f64>,
        weights: FmapWeights,
        options: ProblemOptions,
    ) -> Result<Self> {
        weights.validate()?;
        if basis_m.k() != basis_n.k() {
            return Err(Error::Argument(format!(
                "source basis has k = {}, target basis k = {}",
                basis_m.k(),
                basis_n.k()
            )));
        }
        if f.ncols() != g.ncols() {
            return Err(Error::Argument(format!(
                "source features have d = {}, target features d = {}",
                f.ncols(),
                g.ncols()
            )));
        }
        let f_coef = basis_m.project(f)?;
        let g_coef = basis_n.project(g)?;

        let (f_ch, g_ch) = if options.reduce_channels && f.ncols() > options.max_channels {
            let p = principal_directions(f, g, options.max_channels);
            (f * &p, g * &p)
        } else {
            (f.clone(), g.clone())
        };
        let mut ops_m = Vec::with_capacity(f_ch.ncols());
        let mut ops_n = Vec::with_capacity(f_ch.ncols());
        if weights.beta > 0.0 {
            for c in 0..f_ch.ncols() {
                ops_m.push(multiplication_operator(basis_m, f_ch.column(c).as_slice())?);
                ops_n.push(multiplication_operator(basis_n, g_ch.column(c).as_slice())?);
            }
        }
        let pinv_m = basis_m.pinv();
        let phi_n = basis_n.phi().clone();
        let pinv_m_ones = DVector::from_iterator(pinv_m.nrows(), pinv_m.row_iter().map(|r| r.sum()));
        let phi_n_ones = DVector::from_iterator(phi_n.ncols(), phi_n.column_iter().map(|c| c.sum()));
        // eigenvalues scale with 1/area: compare the spectra at the source's area
        let rho = if options.equalize_area {
            basis_n.areas().total() / basis_m.areas().total()
        } else {
            1.0
        };
        let eig_gap = eigen_gap(basis_m, basis_n, rho);
        Ok(Self {
            eig_gap,
            basis_m: basis_m.clone(),
            basis_n: basis_n.clone(),
            row_target: DVector::from_element(basis_n.n(), 1.0),
            col_target: basis_n.n() as f64 / basis_m.n() as f64,
            phi_n,
            pinv_m,
            f: f_coef,
            g: g_coef,
            g_vertex: g.clone(),
            ops_m,
            ops_n,
            weights,
            pinv_m_ones,
            phi_n_ones,
        })
    }

    pub fn k(&self) -> usize {
        self.basis_m.k()
    }

    pub fn n_source(&self) -> usize {
        self.basis_m.n()
    }

    pub fn n_target(&self) -> usize {
        self.basis_n.n()
    }

    pub fn basis_source(&self) -> &SpectralBasis {
        &self.basis_m
    }

    pub fn basis_target(&self) -> &SpectralBasis {
        &self.basis_n
    }

    /// Spectral source / target feature coefficients (k x d).
    pub fn coefficients(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.f, &self.g)
    }

    pub fn num_channels(&self) -> usize {
        self.ops_m.len()
    }

    pub fn with_weights(mut self, weights: FmapWeights) -> Result<Self> {
        weights.validate()?;
        if weights.beta > 0.0 && self.ops_m.is_empty() && self.f.ncols() > 0 {
            return Err(Error::Argument(
                "problem was built without multiplication operators (beta = 0)".into(),
            ));
        }
        self.weights = weights;
        Ok(self)
    }
}

/// Leading `count` principal directions (d x count) of the stacked,
/// centered vertex features `[f; g]`.
fn principal_directions(f: &DMatrix<f64>, g: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let d = f.ncols();
    let rows = f.nrows() + g.nrows();
    let mut mean = DVector::zeros(d);
    for m in [f, g] {
        for (j, col) in m.column_iter().enumerate() {
            mean[j] += col.sum();
        }
    }
    mean /= rows as f64;
    let mut cov = DMatrix::zeros(d, d);
    for m in [f, g] {
        let mut centered = m.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        cov += centered.tr_mul(&centered);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut p = DMatrix::zeros(d, count.min(d));
    for (c, &j) in order.iter().take(count).enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        // deterministic orientation
        let big = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if big < 0.0 {
            v.neg_mut();
        }
        p.set_column(c, &v);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Gradient tolerance relative to `1 + |f|`.
    pub tol: f64,
    /// Relative-decrease stopping threshold.
    pub ftol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-7,
            ftol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
    pub converged: bool,
    pub final_objective: f64,
    pub iterations: usize,
}

/// Minimizes the objective with L-BFGS from `C = 0`.
pub fn solve_fmap(problem: &FmapProblem, opts: &SolveOptions) -> Result<FunctionalMap> {
    solve_fmap_from(problem, &DMatrix::zeros(problem.k(), problem.k()), opts)
}

/// As [`solve_fmap`] with an explicit starting point.
pub fn solve_fmap_from(problem: &FmapProblem, c0: &DMatrix<f64>, opts: &SolveOptions) -> Result<FunctionalMap> {
    let k = problem.k();
    if c0.shape() != (k, k) {
        return Err(Error::Argument(format!("initial C must be {k}x{k}")));
    }
    let lopts = LbfgsOptions {
        max_iter: opts.max_iter,
        gtol: opts.tol,
        ftol: opts.ftol,
        ..Default::default()
    };
    let fun = |x: &[f64]| {
        let c = DMatrix::from_column_slice(k, k, x);
        let (v, g) = fmap_objective(&c, problem);
        (v, g.as_slice().to_vec())
    };
    let diag = objective::quadratic_hessian_diagonal(problem);
    let floor = 1e-10 * diag.amax();
    let r = if floor > 0.0 && floor.is_finite() {
        let diag: Vec<f64> = diag.iter().map(|v| v.max(floor)).collect();
        lbfgs::minimize_preconditioned(c0.as_slice().to_vec(), fun, Some(&diag), &lopts)?
    } else {
        lbfgs::minimize(c0.as_slice().to_vec(), fun, &lopts)?
    };
    if r.reason == StopReason::NoDescent {
        log::debug!("functional map solve stalled without descent after {} iterations", r.iterations);
    }
    Ok(FunctionalMap {
        converged: r.converged(),
        c: DMatrix::from_column_slice(k, k, &r.x),
        final_objective: r.f.max(0.0),
        iterations: r.iterations,
    })
}

/// How target vertices pick their source vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMethod {
    /// Largest entry of the clamped row of `Π = Φ_N C Φ_M⁺`.
    RowArgmax,
    /// Nearest source row of `Φ_M` to the target row of `Φ_N C`.
    #[default]
    SpectralNearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    /// Source vertex matched to each target vertex.
    pub target_to_source: Vec<usize>,
    /// Clamped `Π` entry of each selected match.
    pub confidence: Vec<f64>,
    pub pi_dense: Option<DMatrix<f64>>,
}

/// Dense point map from a functional map; ties resolve to the smallest source index.
pub fn recover_pointmap(
    c: &DMatrix<f64>,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    method: RecoveryMethod,
    keep_dense: bool,
) -> Result<PointMap> {
    let k = c.nrows();
    if c.shape() != (basis_n.k(), basis_m.k()) {
        return Err(Error::Argument(format!(
            "C is {}x{}, bases have k = {} (target) and {} (source)",
            k,
            c.ncols(),
            basis_n.k(),
            basis_m.k()
        )));
    }
    let emb = basis_n.phi() * c; // n_N x k
    let right = c * basis_m.pinv(); // k x n_M
    let (n_n, n_m) = (basis_n.n(), basis_m.n());
    let pi_entry = |j: usize, v: usize| {
        (basis_n.phi().row(j) * right.column(v))[(0, 0)].clamp(0.0, 1.0)
    };

    let mut pi_dense = keep_dense.then(|| DMatrix::zeros(n_n, n_m));
    let mut matches = vec![0usize; n_n];
    const CHUNK: usize = 256;
    let mut start = 0;
    let phi_m = basis_m.phi();
    let norms_m: Vec<f64> = phi_m.row_iter().map(|r| r.norm_squared()).collect();
    while start < n_n {
        let rows = CHUNK.min(n_n - start);
        let needs_pi = method == RecoveryMethod::RowArgmax || pi_dense.is_some();
        let pi = needs_pi.then(|| (basis_n.phi().rows(start, rows) * &right).map(|x| x.clamp(0.0, 1.0)));
        match method {
            RecoveryMethod::RowArgmax => {
                let pi = pi.as_ref().expect("computed above");
                for r in 0..rows {
                    let mut best = 0;
                    for v in 1..n_m {
                        if pi[(r, v)] > pi[(r, best)] {
                            best = v;
                        }
                    }
                    matches[start + r] = best;
                }
            }
            RecoveryMethod::SpectralNearest => {
                let block = emb.rows(start, rows);
                let cross = block * phi_m.transpose(); // rows x n_M
                for r in 0..rows {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for v in 0..n_m {
                        let d = norms_m[v] - 2.0 * cross[(r, v)];
                        if d < best_d {
                            best_d = d;
                            best = v;
                        }
                    }
                    matches[start + r] = best;
                }
            }
        }
        if let (Some(dense), Some(pi)) = (pi_dense.as_mut(), pi) {
            dense.rows_mut(start, rows).copy_from(&pi);
        }
        start += rows;
    }
    let confidence = match &pi_dense {
        Some(d) => matches.iter().enumerate().map(|(j, &v)| d[(j, v)]).collect(),
        None => matches.iter().enumerate().map(|(j, &v)| pi_entry(j, v)).collect(),
    };
    Ok(PointMap {
        target_to_source: matches,
        confidence,
        pi_dense,
    })
}

/// `C = Φ_N⁺ Π Φ_M` for the binary map `Π` with `(Π f)_j = f_{map[j]}`.
pub fn fmap_from_pointmap(map: &[usize], basis_m: &SpectralBasis, basis_n: &SpectralBasis) -> Result<DMatrix<f64>> {
    if map.len() != basis_n.n() {
        return Err(Error::Argument(format!(
            "map has {} entries, target has {} vertices",
            map.len(),
            basis_n.n()
        )));
    }
    if let Some(&bad) = map.iter().find(|&&v| v >= basis_m.n()) {
        return Err(Error::Argument(format!(
            "map index {bad} out of range for a {}-vertex source",
            basis_m.n()
        )));
    }
    let phi_m = basis_m.phi();
    let pulled = DMatrix::from_fn(map.len(), basis_m.k(), |j, c| phi_m[(map[j], c)]);
    basis_n.project(&pulled)
}
