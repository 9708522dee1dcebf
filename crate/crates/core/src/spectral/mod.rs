//! Laplace-Beltrami eigenbases, spectral projection and intrinsic descriptors.

mod cache;
mod descriptors;
mod eigen;

pub use cache::{read_basis, write_basis};
pub use descriptors::{
    hks, hks_raw, hks_times, positional_encoding, wks, wks_energies, DEFAULT_HKS_TIMES,
    DEFAULT_POSENC_BANDS, DEFAULT_WKS_ENERGIES,
};
pub use eigen::{eigen_residuals, eigenbasis, eigenbasis_with, EigenSolver, DENSE_MAX_VERTICES};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::VertexAreas;

/// Relative eigenvalue gap below which neighbouring eigenpairs are flagged.
pub const DEGENERATE_GAP: f64 = 1e-6;

/// First `k` generalized eigenpairs of `(-W, A)`, ascending, A-orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    phi: DMatrix<f64>,
    lambda: Vec<f64>,
    areas: VertexAreas,
    near_degenerate: Vec<usize>,
}

impl SpectralBasis {
    /// Assembles a basis from precomputed parts. Columns of `phi` are taken
    /// as given; only shapes and finiteness are checked.
    pub fn from_parts(phi: DMatrix<f64>, lambda: Vec<f64>, areas: VertexAreas) -> Result<Self> {
        if phi.ncols() != lambda.len() {
            return Err(Error::Argument(format!(
                "basis has {} columns but {} eigenvalues",
                phi.ncols(),
                lambda.len()
            )));
        }
        if phi.nrows() != areas.len() {
            return Err(Error::Argument(format!(
                "basis has {} rows but {} vertex areas",
                phi.nrows(),
                areas.len()
            )));
        }
        if phi.iter().chain(&lambda).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite entry in spectral basis".into()));
        }
        let near_degenerate = degenerate_pairs(&lambda);
        Ok(Self {
            phi,
            lambda,
            areas,
            near_degenerate,
        })
    }

    /// Eigenfunctions as columns, n x k.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn areas(&self) -> &VertexAreas {
        &self.areas
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// Indices `i` such that eigenvalues `i` and `i + 1` are nearly equal.
    pub fn near_degenerate_pairs(&self) -> &[usize] {
        &self.near_degenerate
    }

    /// `Φ⁺ = ΦᵀA`, k x n.
    pub fn pinv(&self) -> DMatrix<f64> {
        let a = self.areas.as_slice();
        let mut p = self.phi.transpose();
        for (j, mut col) in p.column_iter_mut().enumerate() {
            col *= a[j];
        }
        p
    }

    /// Keeps the first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::Argument(format!(
                "cannot truncate a {}-column basis to {k}",
                self.k()
            )));
        }
        Self::from_parts(
            self.phi.columns(0, k).into_owned(),
            self.lambda[..k].to_vec(),
            self.areas.clone(),
        )
    }

    /// Spectral coefficients `ΦᵀA x` of an n x d field.
    pub fn project(&self, field: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if field.nrows() != self.n() {
            return Err(Error::Argument(format!(
                "field has {} rows, basis has {} vertices",
                field.nrows(),
                self.n()
            )));
        }
        let a = self.areas.as_slice();
        let mut weighted = field.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= a[i];
        }
        Ok(self.phi.tr_mul(&weighted))
    }

    /// `Φ c` for a k x d coefficient block.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coeffs.nrows() != self.k() {
            return Err(Error::Argument(format!(
                "coefficients have {} rows, basis has {} functions",
                coeffs.nrows(),
                self.k()
            )));
        }
        Ok(&self.phi * coeffs)
    }
}

fn degenerate_pairs(lambda: &[f64]) -> Vec<usize> {
    lambda
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            let scale = w[0].abs().max(w[1].abs());
            (w[1] - w[0]).abs() <= DEGENERATE_GAP * scale
        })
        .map(|(i, _)| i)
        .collect()
}

/// What a feature matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSemantic {
    Descriptor,
    External,
    EncodedPosition,
}

/// Per-vertex feature matrix, n x d.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    values: DMatrix<f64>,
    semantic: FeatureSemantic,
    unit_normalized: bool,
}

impl FeatureField {
    pub fn new(values: DMatrix<f64>, semantic: FeatureSemantic) -> Result<Self> {
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            let n = values.nrows().max(1);
            return Err(Error::Data(format!(
                "non-finite feature value at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self {
            values,
            semantic,
            unit_normalized: false,
        })
    }

    /// Marks the field as row-normalized after checking every row has norm 1
    /// (or is exactly zero).
    pub fn into_unit_normalized(mut self) -> Result<Self> {
        for (i, row) in self.values.row_iter().enumerate() {
            let norm = row.norm();
            if norm != 0.0 && (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!("feature row {i} has norm {norm}, expected 1")));
            }
        }
        self.unit_normalized = true;
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn semantic(&self) -> FeatureSemantic {
        self.semantic
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cotangent_weights, primitives, vertex_areas};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_of(mesh: &crate::mesh::TriMesh, k: usize) -> SpectralBasis {
        eigenbasis(&cotangent_weights(mesh), &vertex_areas(mesh), k).unwrap()
    }

    fn random_field(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn projecting_a_basis_column_gives_unit_vector() {
        let b = basis_of(&primitives::torus(1.0, 0.4, 14, 9), 12);
        let c = b.project(&b.phi().columns(4, 1).into_owned()).unwrap();
        for i in 0..12 {
            let expect = if i == 4 { 1.0 } else { 0.0 };
            assert!((c[(i, 0)] - expect).abs() < 1e-8, "coeff {i} = {}", c[(i, 0)]);
        }
    }

    #[test]
    fn constant_projects_onto_first_function() {
        let b = basis_of(&primitives::bumpy(&primitives::icosphere(4, 1.0), 0.2, 4, 2), 10);
        let c = b.project(&DMatrix::from_element(b.n(), 1, 1.0)).unwrap();
        assert!(c[(0, 0)].abs() > 0.1);
        for i in 1..10 {
            assert!(c[(i, 0)].abs() < 1e-7, "coeff {i} = {}", c[(i, 0)]);
        }
    }

    #[test]
    fn full_rank_roundtrip() {
        let m = primitives::torus(1.0, 0.4, 10, 6);
        let b = basis_of(&m, m.num_vertices());
        let x = random_field(m.num_vertices(), 3, 1);
        let back = b.reconstruct(&b.project(&x).unwrap()).unwrap();
        assert!((back - x).abs().max() < 1e-6);
    }

    #[test]
    fn reconstruct_edge_cases() {
        let b = basis_of(&primitives::icosphere(3, 1.0), 6);
        let zero = b.reconstruct(&DMatrix::zeros(6, 2)).unwrap();
        assert_eq!(zero.abs().max(), 0.0);
        let mut e1 = DMatrix::zeros(6, 1);
        e1[(0, 0)] = 1.0;
        let c = b.reconstruct(&e1).unwrap();
        let mean = c.mean();
        assert!(c.iter().all(|x| (x - mean).abs() < 1e-6 * mean.abs()));
        assert!(b.project(&DMatrix::zeros(5, 1)).is_err());
        assert!(b.reconstruct(&DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn low_pass_residual_is_a_orthogonal_to_basis() {
        let m = primitives::bumpy(&primitives::torus(1.0, 0.35, 16, 10), 0.1, 3, 7);
        let b = basis_of(&m, 15);
        let x = random_field(m.num_vertices(), 1, 9);
        let r = &x - b.reconstruct(&b.project(&x).unwrap()).unwrap();
        let a = b.areas().as_slice();
        for j in 0..15 {
            let inner: f64 = (0..b.n()).map(|v| r[(v, 0)] * a[v] * b.phi()[(v, j)]).sum();
            assert!(inner.abs() < 1e-6, "<r, phi_{j}> = {inner}");
        }
    }

    #[test]
    fn laplacian_through_spectrum_matches_operator() {
        let m = primitives::bumpy(&primitives::icosphere(4, 1.0), 0.2, 4, 4);
        let w = cotangent_weights(&m);
        let b = eigenbasis(&w, &vertex_areas(&m), 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeffs = DMatrix::from_fn(20, 1, |_, _| rng.random_range(-1.0..1.0));
        let x = b.reconstruct(&coeffs).unwrap();
        // Δx via the spectrum (Φ Λ Φ⁺ x, nonpositive convention) against A⁻¹ W x
        let mut scaled = b.project(&x).unwrap();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= -b.eigenvalues()[i];
        }
        let spectral = b.reconstruct(&scaled).unwrap();
        let wx = w.mul_vec(x.as_slice());
        let a = b.areas().as_slice();
        let scale = spectral.abs().max();
        for v in 0..b.n() {
            assert!((spectral[(v, 0)] - wx[v] / a[v]).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn truncation_and_pinv_shapes() {
        let b = basis_of(&primitives::icosphere(3, 1.0), 8);
        let t = b.truncated(3).unwrap();
        assert_eq!((t.n(), t.k()), (b.n(), 3));
        assert_eq!(t.phi().column(2), b.phi().column(2));
        let p = b.pinv();
        assert_eq!((p.nrows(), p.ncols()), (8, b.n()));
        assert!((&p * b.phi() - DMatrix::identity(8, 8)).abs().max() < 1e-8);
        assert!(b.truncated(9).is_err());
    }

    #[test]
    fn feature_field_checks() {
        let bad = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(FeatureField::new(bad, FeatureSemantic::External).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.0, 0.0]);
        let f = FeatureField::new(ok, FeatureSemantic::External)
            .unwrap()
            .into_unit_normalized()
            .unwrap();
        assert!(f.is_unit_normalized());
        let not_unit = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!(FeatureField::new(not_unit, FeatureSemantic::External)
            .unwrap()
            .into_unit_normalized()
            .is_err());
    }
}
