use std::f64::consts::{LN_10, PI};

use nalgebra::DMatrix;

use super::{FeatureField, FeatureSemantic, SpectralBasis};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub const DEFAULT_HKS_TIMES: usize = 16;
pub const DEFAULT_WKS_ENERGIES: usize = 100;
pub const DEFAULT_POSENC_BANDS: usize = 6;

/// Eigenvalues at or below this are treated as the kernel.
fn zero_threshold(lambda: &[f64]) -> f64 {
    let top = lambda.iter().cloned().fold(0.0, f64::max);
    1e-12f64.max(1e-8 * top)
}

/// Smallest and largest nonzero eigenvalue.
fn nonzero_range(basis: &SpectralBasis) -> Result<(f64, f64)> {
    let lambda = basis.eigenvalues();
    if lambda.len() < 2 {
        return Err(Error::Argument("descriptors need a basis with k >= 2".into()));
    }
    let thr = zero_threshold(lambda);
    let lo = lambda.iter().cloned().find(|&l| l > thr);
    match lo {
        Some(lo) => Ok((lo, lambda[lambda.len() - 1])),
        None => Err(Error::DegenerateSpectrum(
            "no eigenvalue is distinguishable from zero".into(),
        )),
    }
}

fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if count == 1 {
                lo
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Diffusion times log-spaced over `[4 ln 10 / λ_k, 4 ln 10 / λ_2]`.
pub fn hks_times(basis: &SpectralBasis, num_times: usize) -> Result<Vec<f64>> {
    if num_times == 0 {
        return Err(Error::Argument("num_times must be at least 1".into()));
    }
    let (lo, hi) = nonzero_range(basis)?;
    Ok(logspace(4.0 * LN_10 / hi, 4.0 * LN_10 / lo, num_times))
}

/// Unnormalized heat kernel signature `Σ_i exp(-λ_i t) φ_i(v)²` at the given times.
pub fn hks_raw(basis: &SpectralBasis, times: &[f64]) -> DMatrix<f64> {
    let phi = basis.phi();
    let lambda = basis.eigenvalues();
    let sq = phi.map(|x| x * x);
    let weights = DMatrix::from_fn(lambda.len(), times.len(), |i, t| (-lambda[i] * times[t]).exp());
    sq * weights
}

/// Heat kernel signature with every column scaled to unit area-weighted mean.
pub fn hks(basis: &SpectralBasis, num_times: usize) -> Result<FeatureField> {
    let times = hks_times(basis, num_times)?;
    let mut values = hks_raw(basis, &times);
    unit_mean_columns(&mut values, basis);
    FeatureField::new(values, FeatureSemantic::Descriptor)
}

/// Scales every column to unit area-weighted mean, which removes the
/// dependence on the overall surface scale.
fn unit_mean_columns(values: &mut DMatrix<f64>, basis: &SpectralBasis) {
    let a = basis.areas().as_slice();
    let total: f64 = a.iter().sum();
    for mut col in values.column_iter_mut() {
        let mean: f64 = col.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() / total;
        if mean > 0.0 {
            col /= mean;
        }
    }
}

/// Log-energies spanning `[log λ_2, log λ_k]` and the band width `σ = 7·step`
/// (`σ = 1` when the range collapses to a point).
pub fn wks_energies(basis: &SpectralBasis, num_energies: usize) -> Result<(Vec<f64>, f64)> {
    if num_energies == 0 {
        return Err(Error::Argument("num_energies must be at least 1".into()));
    }
    let (lo, hi) = nonzero_range(basis)?;
    let (a, b) = (lo.ln(), hi.ln());
    let step = if num_energies > 1 {
        (b - a) / (num_energies - 1) as f64
    } else {
        0.0
    };
    let energies = (0..num_energies).map(|i| a + step * i as f64).collect();
    let sigma = if step > 0.0 { 7.0 * step } else { 1.0 };
    Ok((energies, sigma))
}

/// Wave kernel signature, `Σ_i g_e(λ_i) φ_i(v)² / Σ_i g_e(λ_i)` with Gaussian
/// bands `g_e` in log-eigenvalue; kernel eigenpairs are excluded. Columns are
/// scaled to unit area-weighted mean, as for [`hks`].
pub fn wks(basis: &SpectralBasis, num_energies: usize) -> Result<FeatureField> {
    let (energies, sigma) = wks_energies(basis, num_energies)?;
    let lambda = basis.eigenvalues();
    let thr = zero_threshold(lambda);
    let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > thr).collect();
    let mut weights = DMatrix::zeros(lambda.len(), energies.len());
    for (c, &e) in energies.iter().enumerate() {
        let mut sum = 0.0;
        for &i in &active {
            let g = (-(e - lambda[i].ln()).powi(2) / (2.0 * sigma * sigma)).exp();
            weights[(i, c)] = g;
            sum += g;
        }
        if sum > 0.0 {
            for &i in &active {
                weights[(i, c)] /= sum;
            }
        }
    }
    let mut values = basis.phi().map(|x| x * x) * weights;
    unit_mean_columns(&mut values, basis);
    FeatureField::new(values, FeatureSemantic::Descriptor)
}

/// Raw coordinates followed by `sin(2^b π x), cos(2^b π x)` for every band
/// `b` and axis: `d = 3 + 6·bands`.
pub fn positional_encoding(mesh: &TriMesh, bands: usize) -> FeatureField {
    let v = mesh.vertices();
    let d = 3 + 6 * bands;
    let mut values = DMatrix::zeros(v.len(), d);
    for (i, p) in v.iter().enumerate() {
        for ax in 0..3 {
            values[(i, ax)] = p[ax];
        }
        for b in 0..bands {
            let f = (1u64 << b) as f64 * PI;
            for ax in 0..3 {
                values[(i, 3 + 6 * b + ax)] = (f * p[ax]).sin();
                values[(i, 3 + 6 * b + 3 + ax)] = (f * p[ax]).cos();
            }
        }
    }
    FeatureField::new(values, FeatureSemantic::EncodedPosition)
        .expect("mesh coordinates are finite")
}
