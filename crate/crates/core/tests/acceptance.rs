//! Acceptance checks: one PASS/FAIL line per criterion, with the measured
//! numbers. Exits nonzero when any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use fmcorr::evalbench::{
    auc, benchmark_category, geodesic_error, load_dataset, write_csv, write_instance, BenchmarkOptions,
    DEFAULT_MAX_THRESHOLD,
};
use fmcorr::funcmap::{
    clamped_entropy, fmap_from_pointmap, recover_pointmap, solve_fmap, solve_partial, term_value, FmapProblem,
    FmapWeights, PartialOptions, PointMap, RecoveryMethod, Term,
};
use fmcorr::geodesics::{geodesic_matrix, min_cost_assignment, semantic_distance, GeodesicMatrix, SemanticGroups};
use fmcorr::mesh::primitives::{bumpy, grid, half_space_submesh, icosphere, rigid_transform, rotation, torus, tube};
use fmcorr::mesh::{cotangent_weights, normalize_mesh, vertex_areas, Point3, TriMesh};
use fmcorr::pipeline::{match_meshes, MatchConfig, PreparedShape, DESCRIPTOR_BASIS_K};
use fmcorr::spectral::{eigen_residuals, eigenbasis, SpectralBasis};
use fmcorr::transfer::transfer_colors;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn blob(frequency: usize, seed: u64) -> TriMesh {
    bumpy(&icosphere(frequency, 0.5), 0.15, 6, seed)
}

/// Ten meshes between 162 and 2252 vertices: closed blobs, tori, an open
/// tube and flat grids.
fn fixtures() -> Vec<(&'static str, TriMesh)> {
    vec![
        ("blob-162", blob(4, 1)),
        ("blob-362", blob(6, 2)),
        ("blob-642", blob(8, 3)),
        ("blob-1442", blob(12, 4)),
        ("blob-2252", blob(15, 5)),
        ("torus-240", bumpy(&torus(1.0, 0.35, 24, 10), 0.1, 6, 6)),
        ("torus-640", bumpy(&torus(1.0, 0.35, 40, 16), 0.1, 6, 7)),
        ("tube-480", bumpy(&tube(0.3, 1.5, 24, 20), 0.05, 6, 8)),
        ("grid-600", grid(30, 20, 1.0, 0.6)),
        ("grid-2000", grid(50, 40, 1.0, 0.8)),
    ]
}

fn basis_of(mesh: &TriMesh, k: usize) -> SpectralBasis {
    eigenbasis(&cotangent_weights(mesh), &vertex_areas(mesh), k).unwrap()
}

fn identity_fraction(map: &[usize]) -> f64 {
    map.iter().enumerate().filter(|(j, v)| *j == **v).count() as f64 / map.len() as f64
}

/// Mean normalized error of a self map, every vertex its own group.
fn self_map_error(map: &[usize], mesh: &TriMesh) -> f64 {
    let m = normalize_mesh(mesh).unwrap();
    let g = SemanticGroups::singletons(m.num_vertices()).unwrap();
    let geo = geodesic_matrix(&m).unwrap();
    geodesic_error(map, &g, &g, &geo, &vertex_areas(&m)).unwrap().mean()
}

fn c1_spectral_invariants() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut ok = true;
    let fx = fixtures();
    for (name, mesh) in &fx {
        let n = mesh.num_vertices();
        ok &= (100..=2500).contains(&n);
        let start = Instant::now();
        let (w, a) = (cotangent_weights(mesh), vertex_areas(mesh));
        let b = eigenbasis(&w, &a, DESCRIPTOR_BASIS_K).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let phi = b.phi();
        let mut gram = phi.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(a.as_slice())) * phi;
        gram -= DMatrix::identity(b.k(), b.k());
        let ortho = gram.amax();
        let lam = b.eigenvalues();
        let first = lam[0].abs() / lam[b.k() - 1];
        let resid = eigen_residuals(&b, &w).into_iter().fold(0.0, f64::max);
        let pass = ortho <= 1e-6 && first <= 1e-8 && resid <= 1e-6 && secs <= 5.0;
        if !pass {
            eprintln!("  {name}: ortho {ortho:e} λ₁/λ_k {first:e} residual {resid:e} {secs:.2}s");
        }
        ok &= pass;
        worst = (worst.0.max(ortho), worst.1.max(first), worst.2.max(resid), worst.3.max(secs));
    }
    (
        ok,
        format!(
            "{} meshes, k = {DESCRIPTOR_BASIS_K}: max |ΦᵀAΦ − I| {:.1e}, max λ₁/λ_k {:.1e}, max residual {:.1e}, slowest {:.2}s",
            fx.len(),
            worst.0,
            worst.1,
            worst.2,
            worst.3
        ),
    )
}

/// C whose `Π` stays clear of the clamp at 0 and 1 (and of the steep part of
/// `−v log v` near 0) under perturbations of `h`.
fn kink_free_c(rng: &mut ChaCha8Rng, bm: &SpectralBasis, bn: &SpectralBasis, h: f64) -> DMatrix<f64> {
    let (phi, pinv) = (bn.phi(), bm.pinv());
    let margin = 2.0 * h * phi.amax() * pinv.amax();
    let k = bm.k();
    loop {
        let noise = rng.random_range(0.005..0.2);
        let mut c = DMatrix::from_fn(k, k, |_, _| noise * rng.random_range(-1.0..1.0));
        c[(0, 0)] += rng.random_range(0.5..1.5);
        let pi = phi * &c * &pinv;
        if pi.iter().all(|&x| (x < -margin || x > 1e-3f64.max(margin)) && (x - 1.0).abs() > margin) {
            return c;
        }
    }
}

fn c2_gradient_oracle() -> Outcome {
    let (m, n) = (blob(3, 21), blob(3, 22));
    let cfg = MatchConfig::default();
    let (s, t) = (PreparedShape::new(&m, None, &cfg).unwrap(), PreparedShape::new(&n, None, &cfg).unwrap());
    let k = 10;
    let (bm, bn) = (s.basis.truncated(k).unwrap(), t.basis.truncated(k).unwrap());
    let p = FmapProblem::new(&bm, &bn, &s.features, &t.features, FmapWeights::default()).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut report = Vec::new();
    let mut ok = true;
    for term in Term::ALL {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let c = if term == Term::Entropy {
                kink_free_c(&mut rng, &bm, &bn, h)
            } else {
                DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0))
            };
            let (_, grad) = term_value(term, &c, &p);
            let mut fd = DMatrix::zeros(k, k);
            for idx in 0..k * k {
                let (mut cp, mut cm) = (c.clone(), c.clone());
                cp[idx] += h;
                cm[idx] -= h;
                fd[idx] = (term_value(term, &cp, &p).0 - term_value(term, &cm, &p).0) / (2.0 * h);
            }
            worst = worst.max((&fd - &grad).amax() / grad.amax().max(f64::MIN_POSITIVE));
        }
        ok &= worst <= 1e-4;
        report.push(format!("{term:?} {worst:.1e}"));
    }
    (ok, format!("max ‖fd − ∇‖∞/‖∇‖∞ over 20 C: {}", report.join(", ")))
}

fn c3_self_matching() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, mesh) in fixtures() {
        let out = match_meshes(&mesh, &mesh, None, &MatchConfig::default()).unwrap();
        let map = &out.map.target_to_source;
        let (id, err) = (identity_fraction(map), self_map_error(map, &mesh));
        ok &= id >= 0.95 && err <= 1.0;
        parts.push(format!("{name} {:.1}%/{err:.2}", 100.0 * id));
    }
    (ok, format!("identity/Err: {}", parts.join(", ")))
}

fn c4_rotated_copy() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    // intrinsic descriptors: positional encoding is not rotation invariant
    let cfg = MatchConfig {
        descriptors: "hks,wks".parse().unwrap(),
        ..Default::default()
    };
    for (name, mesh) in [("blob-362", blob(6, 2)), ("torus-640", bumpy(&torus(1.0, 0.35, 40, 16), 0.1, 6, 7))] {
        let rotated = rigid_transform(&mesh, rotation([0.3, 1.0, 0.2], 1.1), [0.5, -0.2, 0.1]);
        let out = match_meshes(&mesh, &rotated, None, &cfg).unwrap();
        let err = self_map_error(&out.map.target_to_source, &mesh);
        ok &= err <= 1.0;
        // context only: the same pair without the assignment regularizers
        let plain = MatchConfig {
            weights: FmapWeights {
                w_entropy: 0.0,
                w_sum: 0.0,
                ..Default::default()
            },
            ..cfg.clone()
        };
        let out = match_meshes(&mesh, &rotated, None, &plain).unwrap();
        let without = self_map_error(&out.map.target_to_source, &mesh);
        parts.push(format!("{name} Err {err:.2} (without entropy/sum terms {without:.2})"));
    }
    (ok, format!("HKS+WKS at default weights: {}", parts.join(", ")))
}

fn c5_full_rank_roundtrip() -> Outcome {
    let mesh = grid(15, 10, 1.0, 0.6);
    let n = mesh.num_vertices();
    let b = basis_of(&mesh, n);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let c = fmap_from_pointmap(&perm, &b, &b).unwrap();
    let map = recover_pointmap(&c, &b, &b, RecoveryMethod::default(), false).unwrap();
    let same = map.target_to_source.iter().zip(&perm).filter(|(a, b)| a == b).count();
    (same == n, format!("{same}/{n} vertices reproduced"))
}

fn c6_regularizer_effect() -> Outcome {
    let (m, n) = (blob(6, 31), blob(6, 32));
    let cfg = MatchConfig::default();
    let (s, t) = (PreparedShape::new(&m, None, &cfg).unwrap(), PreparedShape::new(&n, None, &cfg).unwrap());
    let (bm, bn) = (s.basis.truncated(10).unwrap(), t.basis.truncated(10).unwrap());
    let entropy_with = |w_entropy, w_sum| {
        let weights = FmapWeights {
            w_entropy,
            w_sum,
            ..Default::default()
        };
        let p = FmapProblem::new(&bm, &bn, &s.features, &t.features, weights).unwrap();
        let sol = solve_fmap(&p, &cfg.solve).unwrap();
        clamped_entropy(&sol.c, &p)
    };
    let (on, off) = (entropy_with(1e-5, 1e-3), entropy_with(0.0, 0.0));
    (on < off, format!("entropy {on:.3} with regularizers vs {off:.3} without (difference {:.3})", off - on))
}

/// Smallest cost over all injections of the shorter side into the longer.
fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    let (r, c) = cost.shape();
    let (short, long) = (r.min(c), r.max(c));
    let at = |i: usize, j: usize| if r <= c { cost[(i, j)] } else { cost[(j, i)] };
    fn go(i: usize, short: usize, long: usize, used: &mut Vec<bool>, acc: f64, at: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if i == short {
            *best = best.min(acc);
            return;
        }
        for j in 0..long {
            if !used[j] {
                used[j] = true;
                go(i + 1, short, long, used, acc + at(i, j), at, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, short, long, &mut vec![false; long], 0.0, &at, &mut best);
    best
}

fn c7_assignment_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (mut r, mut c) = (rng.random_range(1..=6), rng.random_range(1..=8));
        if rng.random_bool(0.5) {
            std::mem::swap(&mut r, &mut c);
        }
        // multiples of 1/1024 add exactly, so the optimal costs compare exactly
        let cost = DMatrix::from_fn(r, c, |_, _| rng.random_range(0..4096) as f64 / 1024.0);
        let a = min_cost_assignment(&cost).unwrap();
        let recomputed: f64 = a.pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
        let oracle = brute_force_assignment(&cost);
        if a.cost != oracle || recomputed != oracle || a.pairs.len() != r.min(c) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/200 matrices differ from exhaustive search"))
}

fn brute_force_semantic(geo: &GeodesicMatrix, a: &[usize], b: &[usize]) -> f64 {
    let cost = DMatrix::from_fn(a.len(), b.len(), |i, j| geo.get(a[i], b[j]));
    brute_force_assignment(&cost) / a.len().min(b.len()) as f64
}

fn c8_semantic_distance() -> Outcome {
    let mesh = normalize_mesh(&blob(4, 8)).unwrap();
    let geo = geodesic_matrix(&mesh).unwrap();
    let n = mesh.num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_rel, mut worst_asym, mut self_zero) = (0.0f64, 0.0f64, true);
    for _ in 0..100 {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (sa, sb) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let mut group_of = vec![2; n];
        for &v in &order[..sa] {
            group_of[v] = 0;
        }
        for &v in &order[sa..sa + sb] {
            group_of[v] = 1;
        }
        let groups = SemanticGroups::new(group_of).unwrap();
        let ab = semantic_distance(&groups, &geo, 0, 1).unwrap();
        let ba = semantic_distance(&groups, &geo, 1, 0).unwrap();
        let oracle = brute_force_semantic(&geo, groups.members(0).unwrap(), groups.members(1).unwrap());
        worst_rel = worst_rel.max((ab - oracle).abs() / oracle.max(f64::MIN_POSITIVE));
        worst_asym = worst_asym.max((ab - ba).abs());
        self_zero &= semantic_distance(&groups, &geo, 0, 0).unwrap() == 0.0;
    }
    (
        self_zero && worst_asym <= 1e-12 && worst_rel <= 1e-12,
        format!("identical groups zero: {self_zero}; max asymmetry {worst_asym:.1e}; max relative gap to oracle {worst_rel:.1e}"),
    )
}

fn c9_auc_calibration() -> Outcome {
    let perfect = auc(&vec![0.0; 1000], DEFAULT_MAX_THRESHOLD).unwrap().auc;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let uniform: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..DEFAULT_MAX_THRESHOLD)).collect();
    let half = auc(&uniform, DEFAULT_MAX_THRESHOLD).unwrap().auc;
    (perfect == 1.0 && (half - 0.5).abs() <= 0.02, format!("perfect {perfect}, uniform {half:.4}"))
}

fn c10_runtime() -> Outcome {
    let mut cfg = MatchConfig {
        descriptors: "hks,wks".parse().unwrap(),
        ..Default::default()
    };
    cfg.descriptors.hks_times = 16;
    cfg.descriptors.wks_energies = 48;
    let mut ok = true;
    let mut parts = Vec::new();
    for (frequency, limit) in [(7, 3.0), (14, 10.0)] {
        let (m, n) = (blob(frequency, 41), blob(frequency, 42));
        let (s, t) = (PreparedShape::new(&m, None, &cfg).unwrap(), PreparedShape::new(&n, None, &cfg).unwrap());
        let d = s.features.ncols();
        let (bm, bn) = (s.basis.truncated(10).unwrap(), t.basis.truncated(10).unwrap());
        let start = Instant::now();
        let p = FmapProblem::new(&bm, &bn, &s.features, &t.features, cfg.weights).unwrap();
        let sol = solve_fmap(&p, &cfg.solve).unwrap();
        let secs = start.elapsed().as_secs_f64();
        ok &= secs <= limit && d <= 64;
        parts.push(format!("{} vertices, d = {d}: {secs:.2}s ({} iterations, limit {limit}s)", s.n(), sol.iterations));
    }
    (ok, parts.join("; "))
}

fn c11_benchmark() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = icosphere(5, 0.5);
    let groups =
        SemanticGroups::new(base.vertices().iter().map(|p| usize::from(p[2] > 0.0) + usize::from(p[0] > 0.2)).collect())
            .unwrap();
    for seed in 1..=3 {
        let m = bumpy(&base, 0.12, 5, seed);
        write_instance(dir.path().join(format!("cup/c{seed}")), &m, &m, &groups, None, None).unwrap();
    }
    let dataset = load_dataset(dir.path()).unwrap();
    let csv_of = |jobs| {
        let opts = BenchmarkOptions {
            jobs,
            ..Default::default()
        };
        let report = benchmark_category(&dataset, "cup", &opts).unwrap();
        let path = dir.path().join(format!("r{jobs}.csv"));
        write_csv(&path, &report.rows).unwrap();
        (report, std::fs::read_to_string(path).unwrap())
    };
    let (report, csv1) = csv_of(1);
    let (_, csv8) = csv_of(8);
    // wall time is the one column allowed to differ
    let strip = |s: &str| -> Vec<String> { s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect() };
    let deterministic = strip(&csv1) == strip(&csv8);
    let rows: Vec<(f64, f64)> = csv1
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let err_mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let auc_mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let a = report.aggregate;
    let agrees = (a.err_mean - err_mean).abs() <= 1e-12 * err_mean.max(1.0)
        && (a.auc_mean - auc_mean).abs() <= 1e-12
        && a.failed == 0;
    (
        rows.len() == 9 && agrees && deterministic,
        format!(
            "{} pairs, aggregate err {:.4}/auc {:.4} vs recomputed {err_mean:.4}/{auc_mean:.4}, identical CSV at 1 and 8 jobs: {deterministic}",
            rows.len(),
            a.err_mean,
            a.auc_mean
        ),
    )
}

fn c12_partial() -> Outcome {
    let cfg = MatchConfig {
        descriptors: "hks,wks".parse().unwrap(),
        ..Default::default()
    };
    let fraction = |source: &TriMesh, target: &TriMesh| {
        let (s, t) = (PreparedShape::new(source, None, &cfg).unwrap(), PreparedShape::new(target, None, &cfg).unwrap());
        let (bm, bn) = (s.basis.truncated(10).unwrap(), t.basis.truncated(10).unwrap());
        let p = FmapProblem::new(&bm, &bn, &s.features, &t.features, cfg.weights).unwrap();
        solve_partial(&p, &t.mesh, &PartialOptions::default()).unwrap().matched_area_fraction
    };
    let full = blob(6, 51);
    let (half, _) = half_space_submesh(&full, [1.0, 0.0, 0.0], 0.0);
    let truth = half.surface_area() / full.surface_area();
    let sliced = fraction(&half, &full);
    let whole = fraction(&full, &full);
    (
        (sliced - truth).abs() <= 0.15 && whole >= 0.9,
        format!("half slice {sliced:.3} vs true ratio {truth:.3}; full overlap {whole:.3}"),
    )
}

fn colored(mesh: &TriMesh, f: impl Fn(&Point3) -> [f64; 3]) -> TriMesh {
    let colors = mesh.vertices().iter().map(f).collect();
    mesh.clone().with_colors(colors).unwrap()
}

fn hops_from(mesh: &TriMesh, seeds: impl Iterator<Item = usize>) -> Vec<usize> {
    let nbrs = mesh.vertex_neighbors();
    let mut dist = vec![usize::MAX; mesh.num_vertices()];
    let mut queue = VecDeque::new();
    for s in seeds {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        for &u in &nbrs[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

fn c13_color_transfer() -> Outcome {
    let identity = |n: usize| PointMap {
        target_to_source: (0..n).collect(),
        confidence: vec![1.0; n],
        pi_dense: None,
    };
    let mesh = colored(&blob(5, 61), |p| [p[0].abs(), 0.1 + 0.3 * p[1].abs(), 1.0 / 3.0]);
    let out = transfer_colors(&mesh, &mesh, &mesh, &identity(mesh.num_vertices())).unwrap();
    let bitwise = out.colors().unwrap() == mesh.colors().unwrap();

    let tone = |p: &Point3| if p[0] + 0.3 * p[2] > 0.05 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let textured = colored(&blob(9, 62), tone);
    let shape = blob(6, 62);
    let matched = match_meshes(&shape, &shape, None, &MatchConfig::default()).unwrap();
    let out = transfer_colors(&textured, &shape, &shape, &matched.map).unwrap();
    let truth = transfer_colors(&textured, &shape, &shape, &identity(shape.num_vertices())).unwrap();
    let truth = truth.colors().unwrap();
    let nbrs = shape.vertex_neighbors();
    let boundary = (0..shape.num_vertices()).filter(|&v| nbrs[v].iter().any(|&u| truth[u] != truth[v]));
    let hops = hops_from(&shape, boundary);
    let wrong: Vec<usize> = (0..shape.num_vertices()).filter(|&v| out.colors().unwrap()[v] != truth[v]).collect();
    let worst = wrong.iter().map(|&v| hops[v]).max().unwrap_or(0);
    (
        bitwise && worst <= 1,
        format!(
            "identity transfer bitwise: {bitwise}; two-tone: {} recolored vertices, farthest {worst} rings from the boundary",
            wrong.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("spectral invariants", c1_spectral_invariants),
        ("gradient oracle", c2_gradient_oracle),
        ("self-matching", c3_self_matching),
        ("rotated copy", c4_rotated_copy),
        ("full-rank roundtrip", c5_full_rank_roundtrip),
        ("regularizer effect", c6_regularizer_effect),
        ("assignment oracle", c7_assignment_oracle),
        ("semantic distance", c8_semantic_distance),
        ("AUC calibration", c9_auc_calibration),
        ("runtime envelope", c10_runtime),
        ("benchmark protocol", c11_benchmark),
        ("partial matching", c12_partial),
        ("color transfer", c13_color_transfer),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!pass);
        println!("{} {:>2}. {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
