//! Procedural meshes: fixtures for tests, benchmarks and examples.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point3, TriMesh};

/// Unit cube `[0,1]^3`, 8 vertices, 12 outward-facing triangles.
pub fn cube() -> TriMesh {
    let v = vec![
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    let t = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriMesh::new(v, t, None).expect("valid cube")
}

fn icosahedron() -> (Vec<Point3>, Vec<[usize; 3]>) {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let v = vec![
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (v, f)
}

/// Geodesic sphere: every icosahedron face split into `frequency^2`
/// triangles and projected onto the sphere. Has `10 f^2 + 2` vertices.
pub fn icosphere(frequency: usize, radius: f64) -> TriMesh {
    assert!(frequency >= 1);
    let nu = frequency;
    let (corners, faces) = icosahedron();
    let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles = Vec::new();

    let mut vertex_at = |face: [usize; 3], a: usize, b: usize| -> usize {
        // barycentric integer weights (nu - a - b, a, b) on corners of `face`
        let weights = [nu - a - b, a, b];
        let mut key: Vec<(usize, usize)> = (0..3)
            .filter(|&c| weights[c] > 0)
            .map(|c| (face[c], weights[c]))
            .collect();
        key.sort_unstable();
        *index.entry(key).or_insert_with(|| {
            let mut p = [0.0; 3];
            for c in 0..3 {
                let w = weights[c] as f64 / nu as f64;
                for k in 0..3 {
                    p[k] += w * corners[face[c]][k];
                }
            }
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            vertices.push([radius * p[0] / r, radius * p[1] / r, radius * p[2] / r]);
            vertices.len() - 1
        })
    };

    for &face in &faces {
        for a in 0..nu {
            for b in 0..(nu - a) {
                let v0 = vertex_at(face, a, b);
                let v1 = vertex_at(face, a + 1, b);
                let v2 = vertex_at(face, a, b + 1);
                triangles.push([v0, v1, v2]);
                if a + b + 1 < nu {
                    let v3 = vertex_at(face, a + 1, b + 1);
                    triangles.push([v1, v3, v2]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles, None).expect("valid icosphere")
}

/// Torus around the z axis with `nu` segments along the ring and `nv` around the tube.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    assert!(nu >= 3 && nv >= 3);
    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let theta = tau * i as f64 / nu as f64;
        for j in 0..nv {
            let phi = tau * j as f64 / nv as f64;
            let rr = major + minor * phi.cos();
            vertices.push([rr * theta.cos(), rr * theta.sin(), minor * phi.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles, None).expect("valid torus")
}

/// Flat `nx x ny` vertex grid over `[0, width] x [0, height]` in the z = 0 plane.
pub fn grid(nx: usize, ny: usize, width: f64, height: f64) -> TriMesh {
    assert!(nx >= 2 && ny >= 2);
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([
                width * i as f64 / (nx - 1) as f64,
                height * j as f64 / (ny - 1) as f64,
                0.0,
            ]);
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut triangles = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles, None).expect("valid grid")
}

/// Open cylinder of radius `radius` and height `height` along z.
pub fn tube(radius: f64, height: f64, around: usize, along: usize) -> TriMesh {
    assert!(around >= 3 && along >= 2);
    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::new();
    for j in 0..along {
        let z = height * j as f64 / (along - 1) as f64;
        for i in 0..around {
            let t = tau * i as f64 / around as f64;
            vertices.push([radius * t.cos(), radius * t.sin(), z]);
        }
    }
    let id = |i: usize, j: usize| j * around + (i % around);
    let mut triangles = Vec::new();
    for j in 0..along - 1 {
        for i in 0..around {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles, None).expect("valid tube")
}

/// Smooth, seeded radial deformation `p * (1 + sum_t a_t sin(w_t <d_t, p> + phase_t))`.
/// Breaks the symmetries of the input so intrinsic descriptors become distinctive.
pub fn bumpy(mesh: &TriMesh, amplitude: f64, terms: usize, seed: u64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = mesh.bounding_box_diagonal().max(f64::MIN_POSITIVE);
    let waves: Vec<(Point3, f64, f64)> = (0..terms)
        .map(|_| {
            let mut d = [0.0f64; 3];
            for x in &mut d {
                *x = rng.random_range(-1.0..1.0);
            }
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
            let freq = rng.random_range(2.0..5.0) / scale;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            ([d[0] / len, d[1] / len, d[2] / len], freq, phase)
        })
        .collect();
    let (lo, hi) = mesh.bounding_box();
    let c = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    mesh.map_vertices(|p| {
        let q = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let s: f64 = waves
            .iter()
            .map(|(d, w, ph)| (w * (d[0] * q[0] + d[1] * q[1] + d[2] * q[2]) + ph).sin())
            .sum::<f64>()
            * amplitude
            / (terms.max(1) as f64).sqrt();
        [c[0] + q[0] * (1.0 + s), c[1] + q[1] * (1.0 + s), c[2] + q[2] * (1.0 + s)]
    })
    .expect("deformation keeps coordinates finite")
}

/// Triangles whose vertices all satisfy `<normal, p> >= offset`, re-indexed
/// in original vertex order. Also returns the kept original vertex indices.
pub fn half_space_submesh(mesh: &TriMesh, normal: Point3, offset: f64) -> (TriMesh, Vec<usize>) {
    let inside: Vec<bool> = mesh
        .vertices()
        .iter()
        .map(|p| normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] >= offset)
        .collect();
    let faces: Vec<[usize; 3]> = mesh
        .triangles()
        .iter()
        .copied()
        .filter(|t| t.iter().all(|&i| inside[i]))
        .collect();
    let mut used = vec![false; mesh.num_vertices()];
    for t in &faces {
        for &i in t {
            used[i] = true;
        }
    }
    let kept: Vec<usize> = (0..mesh.num_vertices()).filter(|&i| used[i]).collect();
    let mut remap = vec![usize::MAX; mesh.num_vertices()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let vertices = kept.iter().map(|&i| mesh.vertices()[i]).collect();
    let colors = mesh
        .colors()
        .map(|c| kept.iter().map(|&i| c[i]).collect::<Vec<_>>());
    let triangles = faces
        .iter()
        .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
        .collect();
    (
        TriMesh::new(vertices, triangles, colors).expect("submesh of a valid mesh"),
        kept,
    )
}

/// Rotation matrix about a unit axis (Rodrigues).
pub fn rotation(axis: Point3, angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Applies `p -> R p + t` to every vertex.
pub fn rigid_transform(mesh: &TriMesh, r: [[f64; 3]; 3], t: Point3) -> TriMesh {
    mesh.map_vertices(|p| {
        let mut q = t;
        for i in 0..3 {
            for j in 0..3 {
                q[i] += r[i][j] * p[j];
            }
        }
        q
    })
    .expect("rigid motion keeps coordinates finite")
}
