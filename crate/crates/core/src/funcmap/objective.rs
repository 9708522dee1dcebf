use nalgebra::{DMatrix, DVector};

use super::FmapProblem;

/// Inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;
/// Rows of Π materialized at once.
const CHUNK_ROWS: usize = 256;

/// Individual objective terms, each without its weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Data,
    Isometry,
    Commutativity,
    Entropy,
    Sums,
}

impl Term {
    pub const ALL: [Term; 5] = [
        Term::Data,
        Term::Isometry,
        Term::Commutativity,
        Term::Entropy,
        Term::Sums,
    ];
}

/// Weighted objective value and gradient.
pub fn fmap_objective(c: &DMatrix<f64>, problem: &FmapProblem) -> (f64, DMatrix<f64>) {
    let w = problem.weights;
    let k = problem.k();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(k, k);
    let terms = [
        (Term::Data, 1.0),
        (Term::Isometry, w.alpha),
        (Term::Commutativity, w.beta),
        (Term::Entropy, w.w_entropy),
        (Term::Sums, w.w_sum),
    ];
    for (term, weight) in terms {
        if weight == 0.0 {
            continue;
        }
        let (v, g) = term_value(term, c, problem);
        value += weight * v;
        grad += g * weight;
    }
    (value, grad)
}

/// Unweighted value and gradient of a single term.
pub fn term_value(term: Term, c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    match term {
        Term::Data => data_term(c, p),
        Term::Isometry => isometry_term(c, p),
        Term::Commutativity => commutativity_term(c, p),
        Term::Entropy => entropy_term(c, p),
        Term::Sums => sums_term(c, p),
    }
}

fn data_term(c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    let e = c * &p.f - &p.g;
    let grad = (&e * p.f.transpose()) * 2.0;
    (e.norm_squared(), grad)
}

/// `Σ_ij (ρλN_i − λM_j)² C_ij²`, the entrywise form of `‖ρΛ_N C − C Λ_M‖²`.
/// `ρ = area_N / area_M` undoes the scale difference that bounding-box
/// normalization leaves between isometric shapes; `ρ = 1` for equal areas.
fn isometry_term(c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    let mut value = 0.0;
    let grad = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
        let d2 = p.eig_gap[(i, j)];
        value += d2 * c[(i, j)].powi(2);
        2.0 * d2 * c[(i, j)]
    });
    (value, grad)
}

fn commutativity_term(c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    let k = c.nrows();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(k, k);
    for (x, y) in p.ops_m.iter().zip(&p.ops_n) {
        let e = c * x - y * c;
        value += e.norm_squared();
        grad += (&e * x.transpose() - y.transpose() * &e) * 2.0;
    }
    (value, grad)
}

/// `-Σ Π̃ log(Π̃ + ε)` over the clamped soft map; the clamp contributes no
/// gradient outside (0, 1).
fn entropy_term(c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    let k = c.nrows();
    let n_n = p.phi_n.nrows();
    let right = c * &p.pinv_m; // k x n_M
    let pinv_t = p.pinv_m.transpose(); // n_M x k
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(k, k);
    let mut start = 0;
    while start < n_n {
        let rows = CHUNK_ROWS.min(n_n - start);
        let phi = p.phi_n.rows(start, rows);
        let mut pi = &phi * &right;
        let mut any = false;
        for x in pi.iter_mut() {
            let v = *x;
            if v > 0.0 && v < 1.0 {
                let l = (v + ENTROPY_EPS).ln();
                value -= v * l;
                *x = -l - v / (v + ENTROPY_EPS);
                any = true;
            } else {
                if v >= 1.0 {
                    // clamped to 1: contributes -log(1 + ε)
                    value -= (1.0 + ENTROPY_EPS).ln();
                }
                *x = 0.0;
            }
        }
        if any {
            grad += phi.transpose() * (pi * &pinv_t);
        }
        start += rows;
    }
    (value, grad)
}

/// Squared deviations of the row sums of Π from their targets (1, or the
/// partial-matching mask) and of the column sums from `n_N / n_M`, in O(nk).
fn sums_term(c: &DMatrix<f64>, p: &FmapProblem) -> (f64, DMatrix<f64>) {
    // rows: r = Φ_N C a,  a = Φ_M⁺ 1
    let r = &p.phi_n * (c * &p.pinv_m_ones);
    let dr: DVector<f64> = r - &p.row_target;
    // cols: s = Φ_M⁺ᵀ Cᵀ b,  b = Φ_Nᵀ 1
    let s = p.pinv_m.tr_mul(&c.tr_mul(&p.phi_n_ones));
    let ds = s.add_scalar(-p.col_target);
    let value = dr.norm_squared() + ds.norm_squared();
    let grad_rows = (p.phi_n.tr_mul(&dr) * p.pinv_m_ones.transpose()) * 2.0;
    let grad_cols = (&p.phi_n_ones * (&p.pinv_m * ds).transpose()) * 2.0;
    (value, grad_rows + grad_cols)
}

/// Entropy `-Σ Π̃ log(Π̃ + ε)` of the clamped soft map, for reporting.
pub fn clamped_entropy(c: &DMatrix<f64>, p: &FmapProblem) -> f64 {
    entropy_term(c, p).0
}

/// Diagonal of the Hessian of the quadratic terms (all but entropy), used to
/// precondition the solver. Entry `(i, j)` belongs to `C_ij`.
pub(crate) fn quadratic_hessian_diagonal(p: &FmapProblem) -> DMatrix<f64> {
    let w = p.weights;
    let k = p.k();
    let f_rows: Vec<f64> = p.f.row_iter().map(|r| r.norm_squared()).collect();
    let mut h = DMatrix::from_fn(k, k, |i, j| 2.0 * f_rows[j] + 2.0 * w.alpha * p.eig_gap[(i, j)]);
    if w.beta > 0.0 {
        for (x, y) in p.ops_m.iter().zip(&p.ops_n) {
            let x_rows: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
            let y_cols: Vec<f64> = y.column_iter().map(|c| c.norm_squared()).collect();
            for j in 0..k {
                for i in 0..k {
                    h[(i, j)] += 2.0 * w.beta * (x_rows[j] + y_cols[i] - 2.0 * x[(j, j)] * y[(i, i)]);
                }
            }
        }
    }
    if w.w_sum > 0.0 {
        let phi_cols: Vec<f64> = p.phi_n.column_iter().map(|c| c.norm_squared()).collect();
        let pinv_rows: Vec<f64> = p.pinv_m.row_iter().map(|r| r.norm_squared()).collect();
        for j in 0..k {
            for i in 0..k {
                h[(i, j)] += 2.0
                    * w.w_sum
                    * (phi_cols[i] * p.pinv_m_ones[j].powi(2) + p.phi_n_ones[i].powi(2) * pinv_rows[j]);
            }
        }
    }
    h
}
