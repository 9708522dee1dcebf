//! Semantic-group-aware geodesic error, threshold-accuracy AUC and the
//! all-pairs benchmark.

mod bench;
mod dataset;

pub use bench::{
    aggregate, benchmark, benchmark_category, write_aggregates_json, write_csv, Aggregate, BenchmarkOptions,
    BenchmarkReport, BenchmarkSummary, PairRecord,
};
pub use dataset::{load_dataset, load_instance, write_instance, DatasetInstance, Split};

use crate::error::{Error, Result};
use crate::geodesics::{GeodesicMatrix, SemanticGroups};
use crate::mesh::VertexAreas;

pub const DEFAULT_MAX_THRESHOLD: f64 = 25.0;
pub const AUC_SAMPLES: usize = 100;

/// Per-target-vertex errors of a point map.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexErrors {
    /// `100 · d_geo / √area`, one per evaluated target vertex.
    pub errors: Vec<f64>,
    /// Target vertices the errors belong to, ascending.
    pub evaluated: Vec<usize>,
    /// Target vertices whose group does not exist on the source.
    pub excluded: usize,
}

impl VertexErrors {
    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Fraction of target vertices that could be evaluated.
    pub fn coverage(&self) -> f64 {
        let n = self.errors.len() + self.excluded;
        self.errors.len() as f64 / n as f64
    }
}

/// Geodesic distance (on the source) from each match to the nearest source
/// vertex of the target vertex's ground-truth group, normalized by the square
/// root of the source surface area and scaled by 100.
pub fn geodesic_error(
    target_to_source: &[usize],
    src_groups: &SemanticGroups,
    tgt_groups: &SemanticGroups,
    src_geo: &GeodesicMatrix,
    src_areas: &VertexAreas,
) -> Result<VertexErrors> {
    let n_m = src_groups.n();
    if src_geo.n() != n_m || src_areas.len() != n_m {
        return Err(Error::Argument(format!(
            "source groups cover {n_m} vertices, geodesics {} and areas {}",
            src_geo.n(),
            src_areas.len()
        )));
    }
    if target_to_source.len() != tgt_groups.n() {
        return Err(Error::Argument(format!(
            "map has {} entries, target groups cover {} vertices",
            target_to_source.len(),
            tgt_groups.n()
        )));
    }
    if let Some(&bad) = target_to_source.iter().find(|&&v| v >= n_m) {
        return Err(Error::Argument(format!("match {bad} is not a source vertex")));
    }
    let norm = 100.0 / src_areas.total().sqrt();
    let mut out = VertexErrors {
        errors: Vec::with_capacity(target_to_source.len()),
        evaluated: Vec::with_capacity(target_to_source.len()),
        excluded: 0,
    };
    for (j, (&v, &g)) in target_to_source.iter().zip(tgt_groups.group_of()).enumerate() {
        let Some(members) = src_groups.members(g) else {
            out.excluded += 1;
            continue;
        };
        let row = src_geo.row(v);
        let d = members.iter().map(|&u| row[u]).fold(f32::INFINITY, f32::min) as f64;
        out.errors.push(d * norm);
        out.evaluated.push(j);
    }
    if out.errors.is_empty() {
        return Err(Error::Data(
            "no target semantic group exists on the source; the pair cannot be evaluated".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub auc: f64,
}

/// Fraction of errors at or below each of [`AUC_SAMPLES`] uniform thresholds
/// on `[0, max_threshold]`, and the normalized trapezoidal area under it.
pub fn auc(errors: &[f64], max_threshold: f64) -> Result<AccuracyCurve> {
    if errors.is_empty() {
        return Err(Error::Argument("no errors to integrate".into()));
    }
    if !(max_threshold > 0.0) || !max_threshold.is_finite() {
        return Err(Error::Argument(format!("max_threshold = {max_threshold} must be positive")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let steps = AUC_SAMPLES - 1;
    let thresholds: Vec<f64> = (0..AUC_SAMPLES)
        .map(|i| max_threshold * i as f64 / steps as f64)
        .collect();
    let accuracy: Vec<f64> = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    // uniform spacing: the step cancels against the normalization
    let area: f64 = accuracy.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / steps as f64;
    Ok(AccuracyCurve {
        thresholds,
        accuracy,
        auc: area.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub source: String,
    pub target: String,
    pub per_vertex_err: Vec<f64>,
    pub err_mean: f64,
    pub auc: f64,
    pub coverage: f64,
}

/// Error and AUC of a target-to-source map between two dataset instances.
pub fn evaluate_pair(
    target_to_source: &[usize],
    source: &DatasetInstance,
    target: &DatasetInstance,
    max_threshold: f64,
) -> Result<EvalResult> {
    let errors = geodesic_error(
        target_to_source,
        &source.groups,
        &target.groups,
        &source.geo,
        &crate::mesh::vertex_areas(&source.remeshed),
    )?;
    let curve = auc(&errors.errors, max_threshold)?;
    Ok(EvalResult {
        source: source.name.clone(),
        target: target.name.clone(),
        err_mean: errors.mean(),
        coverage: errors.coverage(),
        per_vertex_err: errors.errors,
        auc: curve.auc,
    })
}
