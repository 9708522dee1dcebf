use std::collections::HashMap;

use super::{cross, dot, norm, sub, TriMesh};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Bound applied to every cotangent term before assembly.
pub const COT_CLAMP: f64 = 1e4;

/// Lumped (diagonal) mass matrix: one area per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAreas(Vec<f64>);

impl VertexAreas {
    pub fn new(areas: Vec<f64>) -> Result<Self> {
        if let Some(i) = areas.iter().position(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Data(format!("vertex area {i} is negative or non-finite")));
        }
        Ok(Self(areas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// True when every entry is strictly positive, as the eigensolver requires.
    pub fn all_positive(&self) -> bool {
        self.0.iter().all(|&a| a > 0.0)
    }
}

/// Barycentric vertex areas: each vertex receives a third of every incident
/// triangle's area.
pub fn vertex_areas(mesh: &TriMesh) -> VertexAreas {
    let v = mesh.vertices();
    let mut areas = vec![0.0; mesh.num_vertices()];
    let mut degenerate = 0usize;
    for t in mesh.triangles() {
        let a = 0.5 * norm(cross(sub(v[t[1]], v[t[0]]), sub(v[t[2]], v[t[0]])));
        if a == 0.0 {
            degenerate += 1;
        }
        for &i in t {
            areas[i] += a / 3.0;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} zero-area triangle(s) contribute no vertex area");
    }
    VertexAreas(areas)
}

/// Symmetric cotangent stiffness matrix `W`: off-diagonal entries
/// `(cot a + cot b) / 2`, diagonal `-sum` of the row, so `W` is negative
/// semidefinite and `A^-1 W` is the (nonpositive) Laplace-Beltrami operator.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix(CsrMatrix);

impl StiffnessMatrix {
    pub fn as_csr(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.0.mul_vec(x)
    }

    /// The positive semidefinite operator `-W`.
    pub fn negated(&self) -> CsrMatrix {
        self.0.scaled_plus_diagonal(-1.0, &vec![0.0; self.0.dim()])
    }
}

fn cot(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = norm(cross(a, b));
    let d = dot(a, b);
    let v = d / c;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-COT_CLAMP, COT_CLAMP)
    }
}

pub fn cotangent_weights(mesh: &TriMesh) -> StiffnessMatrix {
    let v = mesh.vertices();
    let n = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(mesh.num_triangles() * 6 + n);
    let mut incidence: HashMap<(usize, usize), u32> = HashMap::new();
    for t in mesh.triangles() {
        for c in 0..3 {
            let (i, j, k) = (t[c], t[(c + 1) % 3], t[(c + 2) % 3]);
            // angle at i is opposite edge (j, k)
            let w = 0.5 * cot(sub(v[j], v[i]), sub(v[k], v[i]));
            triplets.push((j, k, w));
            triplets.push((k, j, w));
            *incidence.entry((j.min(k), j.max(k))).or_insert(0) += 1;
        }
    }
    let non_manifold = incidence.values().filter(|&&c| c > 2).count();
    if non_manifold > 0 {
        log::warn!("{non_manifold} non-manifold edge(s); cotangent weights accumulate over all incident triangles");
    }
    let off = CsrMatrix::from_triplets(n, triplets);
    let diag: Vec<f64> = (0..n).map(|i| -off.row(i).map(|(_, w)| w).sum::<f64>()).collect();
    StiffnessMatrix(off.scaled_plus_diagonal(1.0, &diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn equilateral() -> TriMesh {
        let h = 3f64.sqrt() / 2.0;
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn equilateral_triangle_areas() {
        let a = vertex_areas(&equilateral());
        let expect = 3f64.sqrt() / 4.0 / 3.0;
        for &x in a.as_slice() {
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn areas_scale_quadratically() {
        let m = primitives::torus(1.0, 0.3, 10, 6);
        let s = 2.5;
        let scaled = m.map_vertices(|p| [s * p[0], s * p[1], s * p[2]]).unwrap();
        let a = vertex_areas(&m);
        let b = vertex_areas(&scaled);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((y - s * s * x).abs() <= 1e-12 * y);
        }
    }

    #[test]
    fn areas_sum_to_surface_area() {
        let m = primitives::bumpy(&primitives::icosphere(5, 1.0), 0.2, 4, 3);
        let a = vertex_areas(&m);
        assert!((a.total() - m.surface_area()).abs() <= 1e-9 * m.surface_area());
    }

    #[test]
    fn icosphere_area_close_to_sphere() {
        // frequency 8 equals three rounds of midpoint subdivision
        let a = vertex_areas(&primitives::icosphere(8, 1.0)).total();
        let exact = 4.0 * std::f64::consts::PI;
        assert!((a - exact).abs() / exact < 0.02, "area {a}");
    }

    #[test]
    fn unit_square_hand_weights() {
        // Square split along the 0-2 diagonal. Both angles opposite the
        // diagonal are right angles (cot = 0); each side edge sees a single
        // 45 degree angle (cot = 1), so w = 1/2 on sides and 0 on the diagonal.
        let m = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        let w = cotangent_weights(&m);
        assert!(w.get(0, 2).abs() < 1e-15);
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            assert!((w.get(i, j) - 0.5).abs() < 1e-15, "w({i},{j})");
        }
        assert!((w.get(0, 0) + 1.0).abs() < 1e-15);
        assert!((w.get(1, 1) + 1.0).abs() < 1e-15);
        assert_eq!(w.get(1, 3), 0.0);
        // pattern = adjacency + diagonal, including the zero-weight diagonal edge
        assert_eq!(w.as_csr().nnz(), 4 + 2 * 5);
    }

    #[test]
    fn rows_sum_to_zero_and_symmetric() {
        let m = primitives::bumpy(&primitives::icosphere(4, 1.0), 0.3, 5, 9);
        let w = cotangent_weights(&m);
        let csr = w.as_csr();
        for i in 0..csr.dim() {
            let s: f64 = csr.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-9);
            for (j, v) in csr.row(i) {
                assert!((v - csr.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_invariance() {
        let m = primitives::bumpy(&primitives::icosphere(4, 1.0), 0.3, 5, 9);
        let r = primitives::rotation([0.3, -1.0, 0.7], 1.1);
        let moved = primitives::rigid_transform(&m, r, [4.0, -2.0, 0.5]);
        let (w0, w1) = (cotangent_weights(&m), cotangent_weights(&moved));
        let (a0, a1) = (vertex_areas(&m), vertex_areas(&moved));
        for i in 0..m.num_vertices() {
            assert!((a0.as_slice()[i] - a1.as_slice()[i]).abs() < 1e-9);
            for (j, v) in w0.as_csr().row(i) {
                assert!((v - w1.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn needle_triangle_is_clamped() {
        let m = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1e-12, 0.0]],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let w = cotangent_weights(&m);
        for i in 0..3 {
            for j in 0..3 {
                assert!(w.get(i, j).abs() <= COT_CLAMP);
            }
        }
    }
}
