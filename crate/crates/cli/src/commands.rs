use std::fs;
use std::path::Path;
use std::time::Instant;

use fmcorr::evalbench::{
    benchmark, benchmark_category, evaluate_pair, load_dataset, load_instance, write_aggregates_json, write_csv,
    BenchmarkOptions, BenchmarkSummary,
};
use fmcorr::features::{load_features, score_features, unit_normalize, write_features};
use fmcorr::funcmap::{read_map, write_map, FmapWeights, MapFile, PointMap};
use fmcorr::geodesics::semantic_distance_table;
use fmcorr::mesh::{cotangent_weights, load_mesh, normalize_mesh, vertex_areas, write_ply, TriMesh};
use fmcorr::pipeline::{
    match_meshes, Descriptor, DescriptorStack, MatchConfig, MatchOutcome, PreparedShape,
    DESCRIPTOR_BASIS_K,
};
use fmcorr::spectral::eigenbasis;
use fmcorr::transfer::{
    read_keypoints, transfer_colors, transfer_keypoints, transfer_keypoints_reverse, write_transferred, MapEmbedding,
};
use fmcorr::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{BenchmarkArgs, DescriptorArgs, EvalArgs, MatchArgs, TransferColorArgs, TransferKeypointsArgs};

/// External features are unit-normalized per vertex before matching.
fn external_features(path: &Path, mesh: &TriMesh) -> Result<DMatrix<f64>> {
    Ok(unit_normalize(load_features(path, mesh.num_vertices())?).field.into_values())
}

fn map_file(outcome: &MatchOutcome, weights: FmapWeights) -> MapFile {
    match &outcome.fmap {
        Some(fmap) => MapFile::new(fmap, &outcome.map, weights),
        // direct matchers have no functional map
        None => MapFile {
            k: 0,
            c: Vec::new(),
            target_to_source: outcome.map.target_to_source.clone(),
            confidence: outcome.map.confidence.clone(),
            objective: 0.0,
            weights,
        },
    }
}

fn point_map(file: &MapFile) -> PointMap {
    PointMap {
        target_to_source: file.target_to_source.clone(),
        confidence: file.confidence.clone(),
        pi_dense: None,
    }
}

pub fn run_match(args: &MatchArgs) -> Result<()> {
    let cfg = args.solver.config()?;
    let source = load_mesh(&args.source)?;
    let target = load_mesh(&args.target)?;
    let features = match (&args.source_features, &args.target_features) {
        (Some(f), Some(g)) => Some((external_features(f, &source)?, external_features(g, &target)?)),
        _ => None,
    };
    let start = Instant::now();
    let outcome = match_meshes(&source, &target, features, &cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let file = map_file(&outcome, cfg.weights);
    write_map(&args.output, &file)?;
    match &outcome.fmap {
        Some(f) => println!(
            "objective {:.6e}  iterations {}  converged {}  wall {wall:.3}s",
            f.final_objective, f.iterations, f.converged
        ),
        None => println!("matched {} vertices  wall {wall:.3}s", file.target_to_source.len()),
    }
    Ok(())
}

/// `<root>/<category>/<name>` → `category`.
fn category_of(dir: &Path) -> Result<String> {
    dir.canonicalize()
        .map_err(|e| Error::io(dir, e))?
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Argument(format!("{}: cannot tell the category", dir.display())))
}

#[derive(Serialize)]
struct EvalReport {
    source: String,
    target: String,
    err_mean: f64,
    auc: f64,
    coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    semantic_loss: Option<f64>,
    per_vertex_err: Vec<f64>,
}

pub fn run_eval(args: &EvalArgs, seed: u64) -> Result<()> {
    let source = load_instance(&args.source, &category_of(&args.source)?)?;
    let target = load_instance(&args.target, &category_of(&args.target)?)?;
    let map = read_map(&args.map)?;
    let r = evaluate_pair(&map.target_to_source, &source, &target, args.max_threshold)?;
    let semantic_loss = match &args.score_features {
        Some(path) => {
            let f = external_features(path, &source.remeshed)?;
            let table = semantic_distance_table(&source.groups, &source.geo)?;
            Some(score_features(&f, &source.groups, &table, args.pairs, seed)?)
        }
        None => None,
    };
    println!(
        "{} -> {}: err {:.4}  auc {:.4}  coverage {:.4}",
        source.id(),
        target.id(),
        r.err_mean,
        r.auc,
        r.coverage
    );
    let report = EvalReport {
        source: source.id(),
        target: target.id(),
        err_mean: r.err_mean,
        auc: r.auc,
        coverage: r.coverage,
        semantic_loss,
        per_vertex_err: r.per_vertex_err,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn run_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let opts = BenchmarkOptions {
        matcher: args.solver.config()?,
        jobs: args.jobs,
        max_threshold: args.max_threshold,
        feature_file: args.feature_file.clone(),
        split: args.split.split(),
    };
    if opts.jobs == 0 {
        return Err(Error::Argument("--jobs must be positive".into()));
    }
    let dataset = load_dataset(&args.root)?;
    let summary = match &args.category {
        Some(c) => {
            let report = benchmark_category(&dataset, c, &opts)?;
            BenchmarkSummary {
                overall: report.aggregate,
                reports: vec![report],
            }
        }
        None => benchmark(&dataset, &opts)?,
    };
    let rows: Vec<_> = summary.reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write_csv(&args.csv, &rows)?;
    write_aggregates_json(&args.json, &summary)?;
    for r in &summary.reports {
        let a = &r.aggregate;
        println!(
            "{:<16} pairs {:>4}  failed {:>3}  err {:.4}  auc {:.4}",
            r.category, a.pairs, a.failed, a.err_mean, a.auc_mean
        );
    }
    Ok(())
}

pub fn run_transfer_color(args: &TransferColorArgs) -> Result<()> {
    let source = load_mesh(&args.source)?;
    let textured = match &args.source_textured {
        Some(p) => load_mesh(p)?,
        None => source.clone(),
    };
    let target = load_mesh(&args.target)?;
    let map = read_map(&args.map)?;
    let colored = transfer_colors(&textured, &source, &target, &point_map(&map))?;
    write_ply(&args.output, &colored)
}

pub fn run_transfer_keypoints(args: &TransferKeypointsArgs) -> Result<()> {
    let keypoints = read_keypoints(&args.keypoints)?;
    let template = load_mesh(&args.template)?;
    let target = load_mesh(&args.target)?;
    let moved = if args.reverse {
        let cfg = args.solver.config()?;
        let outcome = match_meshes(&target, &template, None, &cfg)?;
        transfer_keypoints_reverse(&keypoints, &template, &outcome.map)?
    } else if let Some(path) = &args.map {
        let file = read_map(path)?;
        let map = point_map(&file);
        if file.k == 0 {
            transfer_keypoints(&keypoints, &template, &map, None)?
        } else {
            // the bases the map was solved in: a prefix of the wide descriptor basis
            let basis = |m: &TriMesh| -> Result<_> {
                let m = normalize_mesh(m)?;
                let wide = file.k.max(DESCRIPTOR_BASIS_K).min(m.num_vertices());
                eigenbasis(&cotangent_weights(&m), &vertex_areas(&m), wide)?.truncated(file.k)
            };
            let (bm, bn, c) = (basis(&template)?, basis(&target)?, file.c_matrix()?);
            let emb = MapEmbedding {
                c: &c,
                source: &bm,
                target: &bn,
            };
            transfer_keypoints(&keypoints, &template, &map, Some(emb))?
        }
    } else {
        let cfg = args.solver.config()?;
        let outcome = match_meshes(&template, &target, None, &cfg)?;
        let emb = match (&outcome.fmap, &outcome.bases) {
            (Some(f), Some((bm, bn))) => Some(MapEmbedding {
                c: &f.c,
                source: bm,
                target: bn,
            }),
            _ => None,
        };
        transfer_keypoints(&keypoints, &template, &outcome.map, emb)?
    };
    for k in &moved {
        println!("{:<20} vertex {:>7}  confidence {:.4}", k.label, k.vertex, k.confidence);
    }
    write_transferred(&args.output, &moved)
}

pub fn run_descriptors(args: &DescriptorArgs) -> Result<()> {
    let mut stack = args.stack.parse::<DescriptorStack>()?;
    let sized = [
        (Descriptor::Hks, args.hks),
        (Descriptor::Wks, args.wks),
        (Descriptor::Posenc, args.posenc),
    ];
    if sized.iter().any(|(_, s)| s.is_some()) {
        stack.kinds = sized.iter().filter(|(_, s)| s.is_some()).map(|(k, _)| *k).collect();
    }
    if let Some(s) = args.hks {
        stack.hks_times = s;
    }
    if let Some(s) = args.wks {
        stack.wks_energies = s;
    }
    if let Some(s) = args.posenc {
        stack.posenc_bands = s;
    }
    let mesh = load_mesh(&args.mesh)?;
    let cfg = MatchConfig {
        k: 1,
        descriptors: stack,
        ..Default::default()
    };
    let shape = PreparedShape::new(&mesh, None, &cfg)?;
    write_features(&args.output, &shape.features)?;
    println!(
        "{}: {} vertices x {} channels ({})",
        args.output.display(),
        shape.features.nrows(),
        shape.features.ncols(),
        cfg.descriptors
    );
    Ok(())
}
