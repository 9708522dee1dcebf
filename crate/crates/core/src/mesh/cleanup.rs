use std::collections::{HashMap, HashSet};

use super::{distance, triangle_area, Color, Point3, TriMesh};
use crate::error::{Error, Result};

/// Merge radius as a fraction of the bounding-box diagonal.
pub const DEFAULT_MERGE_TOL_FRACTION: f64 = 0.01;

/// Longest bounding-box side after [`normalize_mesh`].
pub const NORMALIZED_EXTENT: f64 = 0.3;

/// Merges near-duplicate vertices, drops collapsed and duplicate faces, keeps
/// the largest connected component and removes unreferenced vertices.
///
/// Vertices closer than `merge_tol_fraction * bbox_diagonal` collapse onto the
/// lowest-index survivor; merged colors are averaged. Components are ranked by
/// face count, then surface area, then smallest vertex index. Surviving
/// vertices keep their relative order.
pub fn cleanup_mesh(mesh: &TriMesh, merge_tol_fraction: f64) -> Result<TriMesh> {
    if !(merge_tol_fraction > 0.0 && merge_tol_fraction <= 0.1) {
        return Err(Error::Argument(format!(
            "merge_tol_fraction must lie in (0, 0.1], got {merge_tol_fraction}"
        )));
    }
    if mesh.num_vertices() == 0 {
        return Err(Error::EmptyMesh("cleanup"));
    }
    let tol = merge_tol_fraction * mesh.bounding_box_diagonal();
    let (survivor_of, merged_colors) = merge_close_vertices(mesh, tol);

    let mut seen = HashSet::new();
    let mut faces = Vec::with_capacity(mesh.num_triangles());
    for t in mesh.triangles() {
        let f = [survivor_of[t[0]], survivor_of[t[1]], survivor_of[t[2]]];
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            continue;
        }
        let mut key = f;
        key.sort_unstable();
        if seen.insert(key) {
            faces.push(f);
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh("cleanup"));
    }

    let collapsed = TriMesh {
        vertices: mesh.vertices().to_vec(),
        triangles: faces,
        colors: None,
    };
    let (label, _) = collapsed.connected_components();
    let mut face_count: HashMap<usize, (usize, f64)> = HashMap::new();
    for t in collapsed.triangles() {
        let area = triangle_area(
            collapsed.vertices[t[0]],
            collapsed.vertices[t[1]],
            collapsed.vertices[t[2]],
        );
        let e = face_count.entry(label[t[0]]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += area;
    }
    // Labels are numbered by smallest vertex, so the label doubles as tie-break.
    let keep = face_count
        .iter()
        .max_by(|a, b| {
            (a.1 .0)
                .cmp(&b.1 .0)
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then(b.0.cmp(a.0))
        })
        .map(|(&l, _)| l)
        .expect("at least one face");

    let kept_faces: Vec<[usize; 3]> = collapsed
        .triangles
        .iter()
        .copied()
        .filter(|t| label[t[0]] == keep)
        .collect();
    let mut referenced = vec![false; mesh.num_vertices()];
    for t in &kept_faces {
        for &i in t {
            referenced[i] = true;
        }
    }
    let mut new_index = vec![usize::MAX; mesh.num_vertices()];
    let mut vertices = Vec::new();
    let mut colors = merged_colors.as_ref().map(|_| Vec::new());
    for (i, &r) in referenced.iter().enumerate() {
        if r {
            new_index[i] = vertices.len();
            vertices.push(mesh.vertices()[i]);
            if let (Some(out), Some(src)) = (colors.as_mut(), merged_colors.as_ref()) {
                out.push(src[i]);
            }
        }
    }
    let triangles = kept_faces
        .into_iter()
        .map(|t| [new_index[t[0]], new_index[t[1]], new_index[t[2]]])
        .collect();
    TriMesh::new(vertices, triangles, colors)
}

/// Returns the survivor index of every vertex and, if the mesh is colored,
/// survivor colors averaged over their merged groups.
fn merge_close_vertices(mesh: &TriMesh, tol: f64) -> (Vec<usize>, Option<Vec<Color>>) {
    let n = mesh.num_vertices();
    let verts = mesh.vertices();
    let cell_size = if tol > 0.0 { tol } else { 1.0 };
    let cell = |p: Point3| -> [i64; 3] {
        [
            (p[0] / cell_size).floor() as i64,
            (p[1] / cell_size).floor() as i64,
            (p[2] / cell_size).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut survivor_of = vec![usize::MAX; n];
    for i in 0..n {
        let c = cell(verts[i]);
        let mut best: Option<usize> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &s in bucket {
                        let d = distance(verts[i], verts[s]);
                        if (d < tol || d == 0.0) && best.is_none_or(|b| s < b) {
                            best = Some(s);
                        }
                    }
                }
            }
        }
        match best {
            Some(s) => survivor_of[i] = s,
            None => {
                survivor_of[i] = i;
                grid.entry(c).or_default().push(i);
            }
        }
    }

    let colors = mesh.colors().map(|colors| {
        let mut sum = vec![[0.0; 3]; n];
        let mut count = vec![0usize; n];
        for i in 0..n {
            let s = survivor_of[i];
            for a in 0..3 {
                sum[s][a] += colors[i][a];
            }
            count[s] += 1;
        }
        (0..n)
            .map(|i| {
                let s = survivor_of[i];
                let c = count[s] as f64;
                [
                    (sum[s][0] / c).clamp(0.0, 1.0),
                    (sum[s][1] / c).clamp(0.0, 1.0),
                    (sum[s][2] / c).clamp(0.0, 1.0),
                ]
            })
            .collect()
    });
    (survivor_of, colors)
}

/// Scales the longest bounding-box side to 0.3 and centers the box at the origin.
pub fn normalize_mesh(mesh: &TriMesh) -> Result<TriMesh> {
    if mesh.num_vertices() == 0 {
        return Err(Error::EmptyMesh("normalization"));
    }
    let (lo, hi) = mesh.bounding_box();
    let longest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(longest > 0.0) {
        return Err(Error::DegenerateGeometry(
            "all vertices coincide; cannot normalize scale".into(),
        ));
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let s = NORMALIZED_EXTENT / longest;
    mesh.map_vertices(|v| {
        [
            (v[0] - center[0]) * s,
            (v[1] - center[1]) * s,
            (v[2] - center[2]) * s,
        ]
    })
}
