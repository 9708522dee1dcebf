//! Triangle meshes and the discrete operators built on them.

mod cleanup;
pub mod io;
mod kdtree;
mod operators;
pub mod primitives;

pub use cleanup::{cleanup_mesh, normalize_mesh, DEFAULT_MERGE_TOL_FRACTION, NORMALIZED_EXTENT};
pub use io::{load_mesh, write_ply};
pub use kdtree::KdTree;
pub use operators::{cotangent_weights, vertex_areas, StiffnessMatrix, VertexAreas, COT_CLAMP};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];
pub type Color = [f64; 3];

/// An indexed triangle mesh with optional per-vertex colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
    colors: Option<Vec<Color>>,
}

impl TriMesh {
    /// Validates indices, degenerate faces, finiteness and color ranges.
    pub fn new(
        vertices: Vec<Point3>,
        triangles: Vec<[usize; 3]>,
        colors: Option<Vec<Color>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(i) = vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Data(format!("vertex {i} has a non-finite coordinate")));
        }
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::Data(format!(
                    "triangle {f} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Data(format!(
                    "triangle {f} repeats a vertex index: {tri:?}"
                )));
            }
        }
        if let Some(colors) = &colors {
            if colors.len() != n {
                return Err(Error::Shape {
                    what: "vertex colors".into(),
                    expected: n,
                    found: colors.len(),
                });
            }
            if let Some(i) = colors
                .iter()
                .position(|c| c.iter().any(|x| !(0.0..=1.0).contains(x)))
            {
                return Err(Error::Data(format!("color of vertex {i} is outside [0, 1]")));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            colors,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn colors(&self) -> Option<&[Color]> {
        self.colors.as_deref()
    }

    pub fn with_colors(mut self, colors: Vec<Color>) -> Result<Self> {
        self.colors = None;
        Self::new(self.vertices, self.triangles, Some(colors))
    }

    pub fn without_colors(mut self) -> Self {
        self.colors = None;
        self
    }

    /// Applies `f` to every vertex position. Connectivity is unchanged.
    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> Result<Self> {
        Self::new(
            self.vertices.iter().map(|&v| f(v)).collect(),
            self.triangles.clone(),
            self.colors.clone(),
        )
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        norm(sub(hi, lo))
    }

    /// Sorted, deduplicated vertex neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |e| {
                    let (a, b) = (t[e], t[(e + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Connected components over shared vertices. Returns one label per vertex
    /// (components numbered by their smallest vertex) and each component's size.
    /// Vertices referenced by no triangle form singleton components.
    pub fn connected_components(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.num_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for t in &self.triangles {
            for e in 0..3 {
                let a = find(&mut parent, t[e]);
                let b = find(&mut parent, t[(e + 1) % 3]);
                if a != b {
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut sizes = Vec::new();
        let mut root_label = vec![usize::MAX; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if root_label[r] == usize::MAX {
                root_label[r] = sizes.len();
                sizes.push(0);
            }
            label[v] = root_label[r];
            sizes[root_label[r]] += 1;
        }
        (label, sizes)
    }

    /// Total surface area.
    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]))
            .sum()
    }
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

pub(crate) fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}
