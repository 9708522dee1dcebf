use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_pair, DatasetInstance, Split, DEFAULT_MAX_THRESHOLD};
use crate::error::{Error, Result};
use crate::features::{load_features, unit_normalize};
use crate::pipeline::{match_prepared, MatchConfig, PreparedShape};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub matcher: MatchConfig,
    /// Worker threads for pair evaluation.
    pub jobs: usize,
    pub max_threshold: f64,
    /// Per-instance feature file (inside the instance directory) used,
    /// unit-normalized, instead of descriptors.
    pub feature_file: Option<String>,
    /// Only instances of this split take part.
    pub split: Split,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            matcher: MatchConfig::default(),
            jobs: 1,
            max_threshold: DEFAULT_MAX_THRESHOLD,
            feature_file: None,
            split: Split::Test,
        }
    }
}

/// One evaluated ordered pair; failed pairs carry the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub category: String,
    pub source: String,
    pub target: String,
    pub err: Option<f64>,
    pub auc: Option<f64>,
    pub coverage: Option<f64>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl PairRecord {
    /// `category/source->category/target`.
    pub fn pair(&self) -> String {
        format!("{0}/{1}->{0}/{2}", self.category, self.source, self.target)
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub err_mean: f64,
    pub auc_mean: f64,
    pub pairs: usize,
    pub failed: usize,
}

/// Means over the successful rows.
pub fn aggregate(rows: &[PairRecord]) -> Aggregate {
    let ok: Vec<&PairRecord> = rows.iter().filter(|r| r.succeeded()).collect();
    let mean = |f: fn(&PairRecord) -> Option<f64>| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    Aggregate {
        err_mean: mean(|r| r.err),
        auc_mean: mean(|r| r.auc),
        pairs: rows.len(),
        failed: rows.len() - ok.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub category: String,
    /// Row-major over (source, target) in name order.
    pub rows: Vec<PairRecord>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSummary {
    pub reports: Vec<BenchmarkReport>,
    /// Over all pairs of all categories.
    pub overall: Aggregate,
}

fn prepare(inst: &DatasetInstance, opts: &BenchmarkOptions) -> Result<PreparedShape> {
    let features = match &opts.feature_file {
        Some(name) => Some(
            unit_normalize(load_features(inst.dir.join(name), inst.remeshed.num_vertices())?)
                .field
                .into_values(),
        ),
        None => None,
    };
    PreparedShape::new(&inst.remeshed, features, &opts.matcher)
}

/// A shape, or why it could not be prepared.
type Prepared = std::result::Result<PreparedShape, String>;

fn run_pair(
    source: &DatasetInstance,
    target: &DatasetInstance,
    shapes: (&Prepared, &Prepared),
    opts: &BenchmarkOptions,
) -> PairRecord {
    let start = Instant::now();
    let outcome = (|| {
        let s = shapes.0.as_ref().map_err(|e| Error::Data(e.clone()))?;
        let t = shapes.1.as_ref().map_err(|e| Error::Data(e.clone()))?;
        let matched = match_prepared(s, t, &opts.matcher)?;
        evaluate_pair(&matched.map.target_to_source, source, target, opts.max_threshold)
    })();
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok(r) => PairRecord {
            category: source.category.clone(),
            source: source.name.clone(),
            target: target.name.clone(),
            err: Some(r.err_mean),
            auc: Some(r.auc),
            coverage: Some(r.coverage),
            wall_ms,
            error: None,
        },
        Err(e) => {
            log::warn!("pair {}->{} failed: {e}", source.id(), target.id());
            PairRecord {
                category: source.category.clone(),
                source: source.name.clone(),
                target: target.name.clone(),
                err: None,
                auc: None,
                coverage: None,
                wall_ms,
                error: Some(e.to_string()),
            }
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {jobs} workers: {e}")))
}

/// All ordered pairs, self-pairs included, of the category's instances in
/// the selected split. Rows come out in name order whatever the input order
/// or the number of workers.
pub fn benchmark_category(
    dataset: &[DatasetInstance],
    category: &str,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let mut members: Vec<&DatasetInstance> = dataset
        .iter()
        .filter(|d| d.category == category && d.split == opts.split)
        .collect();
    if members.is_empty() {
        return Err(Error::Data(format!(
            "category {category:?} has no {:?} instances",
            opts.split
        )));
    }
    members.sort_by(|a, b| a.name.cmp(&b.name));
    let pool = pool(opts.jobs)?;
    let rows = pool.install(|| {
        let shapes: Vec<Prepared> = members
            .par_iter()
            .map(|m| prepare(m, opts).map_err(|e| format!("{}: {e}", m.id())))
            .collect();
        let pairs: Vec<(usize, usize)> = (0..members.len())
            .flat_map(|i| (0..members.len()).map(move |j| (i, j)))
            .collect();
        pairs
            .par_iter()
            .map(|&(i, j)| run_pair(members[i], members[j], (&shapes[i], &shapes[j]), opts))
            .collect::<Vec<_>>()
    });
    Ok(BenchmarkReport {
        category: category.to_string(),
        aggregate: aggregate(&rows),
        rows,
    })
}

/// Every category present in `dataset`, in name order.
pub fn benchmark(dataset: &[DatasetInstance], opts: &BenchmarkOptions) -> Result<BenchmarkSummary> {
    let mut categories: Vec<&str> = dataset
        .iter()
        .filter(|d| d.split == opts.split)
        .map(|d| d.category.as_str())
        .collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.is_empty() {
        return Err(Error::Data(format!("no {:?} instances in the dataset", opts.split)));
    }
    let reports = categories
        .into_iter()
        .map(|c| benchmark_category(dataset, c, opts))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<PairRecord> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    Ok(BenchmarkSummary {
        overall: aggregate(&all),
        reports,
    })
}

#[derive(Serialize)]
struct CsvRow {
    pair: String,
    err: Option<f64>,
    auc: Option<f64>,
    coverage: Option<f64>,
    wall_ms: f64,
}

/// `pair,err,auc,coverage,wall_ms`; failed pairs leave the metrics empty.
pub fn write_csv(path: impl AsRef<Path>, rows: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(CsvRow {
            pair: r.pair(),
            err: r.err,
            auc: r.auc,
            coverage: r.coverage,
            wall_ms: r.wall_ms,
        })
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct JsonAggregate {
    err_mean: Option<f64>,
    auc_mean: Option<f64>,
}

impl From<&Aggregate> for JsonAggregate {
    fn from(a: &Aggregate) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            err_mean: finite(a.err_mean),
            auc_mean: finite(a.auc_mean),
        }
    }
}

/// `{category: {err_mean, auc_mean}, ..., "overall": {...}}`.
pub fn write_aggregates_json(path: impl AsRef<Path>, summary: &BenchmarkSummary) -> Result<()> {
    let path = path.as_ref();
    let mut map: BTreeMap<String, JsonAggregate> = summary
        .reports
        .iter()
        .map(|r| (r.category.clone(), JsonAggregate::from(&r.aggregate)))
        .collect();
    map.insert("overall".into(), JsonAggregate::from(&summary.overall));
    let text = serde_json::to_string_pretty(&map).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
