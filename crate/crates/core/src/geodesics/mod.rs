//! Graph geodesics, semantic vertex groups and assignment-based group distances.

mod assignment;
mod groups;

pub use assignment::{min_cost_assignment, Assignment};
pub use groups::{read_groups, write_groups, SemanticGroups};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{distance, TriMesh};

/// Dense all-pairs distance matrix stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicMatrix {
    n: usize,
    d: Vec<f32>,
}

impl GeodesicMatrix {
    /// Wraps a row-major n x n matrix; entries must be finite and nonnegative.
    pub fn from_row_major(n: usize, d: Vec<f32>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Shape {
                what: "geodesic matrix entries".into(),
                expected: n * n,
                found: d.len(),
            });
        }
        if let Some(p) = d.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Data(format!(
                "geodesic entry ({}, {}) is {}",
                p / n.max(1),
                p % n.max(1),
                d[p]
            )));
        }
        Ok(Self { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j] as f64
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.d
    }

    /// Submatrix `rows x cols` as f64.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on vertex index
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// All-pairs shortest paths along mesh edges with Euclidean edge lengths.
/// Sources run in parallel; the result is symmetrized by taking the smaller
/// of the two directed values so it is exactly symmetric.
pub fn geodesic_matrix(mesh: &TriMesh) -> Result<GeodesicMatrix> {
    let n = mesh.num_vertices();
    let (_, sizes) = mesh.connected_components();
    if sizes.len() > 1 {
        return Err(Error::Disconnected { sizes });
    }
    let v = mesh.vertices();
    let mut adj = vec![Vec::new(); n];
    for (a, b) in mesh.edges() {
        let w = distance(v[a], v[b]);
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let mut d = vec![0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = rows[i][j].min(rows[j][i]) as f32;
        }
    }
    GeodesicMatrix::from_row_major(n, d)
}

const DGM_MAGIC: &[u8; 4] = b"DGM1";

pub fn write_geodesics(path: impl AsRef<Path>, geo: &GeodesicMatrix) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(geo.n).map_err(|_| Error::Argument("matrix too large for DGM1".into()))?;
    let mut out = Vec::with_capacity(8 + 4 * geo.d.len());
    out.extend_from_slice(DGM_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    for x in &geo.d {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_geodesics(path: impl AsRef<Path>) -> Result<GeodesicMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != DGM_MAGIC {
        return Err(Error::format(path, "byte offset 0", "missing DGM1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + 4 * n * n;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("byte offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for n = {n}, found {}", bytes.len()),
        ));
    }
    let d = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GeodesicMatrix::from_row_major(n, d).map_err(|e| Error::format(path, "payload", e.to_string()))
}

/// Mean geodesic cost of the optimal assignment between the members of
/// groups `a` and `b`: `(1 / min(|a|, |b|)) · min_π Σ d(u, π(u))`.
pub fn semantic_distance(groups: &SemanticGroups, geo: &GeodesicMatrix, a: usize, b: usize) -> Result<f64> {
    if groups.n() != geo.n() {
        return Err(Error::Shape {
            what: "semantic groups vs geodesic matrix".into(),
            expected: geo.n(),
            found: groups.n(),
        });
    }
    let ga = groups
        .members(a)
        .ok_or_else(|| Error::Argument(format!("group {a} does not exist")))?;
    let gb = groups
        .members(b)
        .ok_or_else(|| Error::Argument(format!("group {b} does not exist")))?;
    if a == b {
        return Ok(0.0);
    }
    let cost = geo.block(ga, gb);
    let assignment = min_cost_assignment(&cost)?;
    Ok(assignment.cost / ga.len().min(gb.len()) as f64)
}

/// Pairwise semantic distances, indexed like `groups.ids()`. The upper
/// triangle is computed and mirrored, so the table is exactly symmetric.
pub fn semantic_distance_table(groups: &SemanticGroups, geo: &GeodesicMatrix) -> Result<DMatrix<f64>> {
    let ids = groups.ids();
    let g = ids.len();
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|i| (i + 1..g).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| semantic_distance(groups, geo, ids[i], ids[j]))
        .collect::<Result<_>>()?;
    let mut table = DMatrix::zeros(g, g);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        table[(i, j)] = v;
        table[(j, i)] = v;
    }
    Ok(table)
}
