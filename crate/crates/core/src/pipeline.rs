//! End-to-end matching: normalization, descriptors, functional map and
//! point-map recovery, plus the Hungarian and nearest-neighbor baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{concat_features, FeatureBundle, FeatureSource};
use crate::funcmap::{
    recover_pointmap, solve_fmap, FmapProblem, FmapWeights, FunctionalMap, PointMap, RecoveryMethod,
    SolveOptions, DEFAULT_FMAP_K,
};
use crate::geodesics::min_cost_assignment;
use crate::mesh::{cotangent_weights, normalize_mesh, vertex_areas, TriMesh};
use crate::spectral::{
    eigenbasis, hks, positional_encoding, wks, SpectralBasis, DEFAULT_HKS_TIMES, DEFAULT_POSENC_BANDS,
    DEFAULT_WKS_ENERGIES,
};

/// Eigenpairs computed per mesh for descriptors; the map uses a prefix.
pub const DESCRIPTOR_BASIS_K: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descriptor {
    Hks,
    Wks,
    Posenc,
}

/// Which descriptors to stack, in order, and their sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorStack {
    pub kinds: Vec<Descriptor>,
    pub hks_times: usize,
    pub wks_energies: usize,
    pub posenc_bands: usize,
}

impl DescriptorStack {
    pub fn new(kinds: Vec<Descriptor>) -> Self {
        Self {
            kinds,
            ..Default::default()
        }
    }

    /// True when every descriptor is invariant to rigid motions.
    pub fn is_intrinsic(&self) -> bool {
        !self.kinds.contains(&Descriptor::Posenc)
    }
}

impl Default for DescriptorStack {
    fn default() -> Self {
        Self {
            kinds: vec![Descriptor::Hks, Descriptor::Wks, Descriptor::Posenc],
            hks_times: DEFAULT_HKS_TIMES,
            wks_energies: DEFAULT_WKS_ENERGIES,
            posenc_bands: DEFAULT_POSENC_BANDS,
        }
    }
}

impl FromStr for DescriptorStack {
    type Err = Error;

    /// Comma-separated list, e.g. `hks,wks,posenc`.
    fn from_str(s: &str) -> Result<Self> {
        let mut kinds = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind = match part.to_ascii_lowercase().as_str() {
                "hks" => Descriptor::Hks,
                "wks" => Descriptor::Wks,
                "posenc" => Descriptor::Posenc,
                other => return Err(Error::Argument(format!("unknown descriptor {other:?}"))),
            };
            if kinds.contains(&kind) {
                return Err(Error::Argument(format!("descriptor {part:?} listed twice")));
            }
            kinds.push(kind);
        }
        if kinds.is_empty() {
            return Err(Error::Argument("empty descriptor list".into()));
        }
        Ok(Self::new(kinds))
    }
}

impl fmt::Display for DescriptorStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .kinds
            .iter()
            .map(|k| match k {
                Descriptor::Hks => "hks",
                Descriptor::Wks => "wks",
                Descriptor::Posenc => "posenc",
            })
            .collect();
        f.write_str(&names.join(","))
    }
}

/// Stacked descriptors of a normalized mesh from its (wide) basis.
pub fn descriptor_features(mesh: &TriMesh, basis: &SpectralBasis, stack: &DescriptorStack) -> Result<FeatureBundle> {
    let bundles = stack
        .kinds
        .iter()
        .map(|kind| {
            Ok(match kind {
                Descriptor::Hks => FeatureBundle::new(hks(basis, stack.hks_times)?, FeatureSource::Hks),
                Descriptor::Wks => FeatureBundle::new(wks(basis, stack.wks_energies)?, FeatureSource::Wks),
                Descriptor::Posenc => {
                    FeatureBundle::new(positional_encoding(mesh, stack.posenc_bands), FeatureSource::Posenc)
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    concat_features(&bundles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    #[default]
    Fmap,
    /// Optimal one-to-one assignment on feature distances.
    Hungarian,
    /// Nearest source feature for every target vertex.
    Nn,
}

impl FromStr for MatchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fmap" => Ok(Self::Fmap),
            "hungarian" => Ok(Self::Hungarian),
            "nn" => Ok(Self::Nn),
            other => Err(Error::Argument(format!("unknown matcher {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    pub method: MatchMethod,
    pub k: usize,
    pub weights: FmapWeights,
    pub solve: SolveOptions,
    pub recovery: RecoveryMethod,
    pub descriptors: DescriptorStack,
    pub keep_dense: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            method: MatchMethod::Fmap,
            k: DEFAULT_FMAP_K,
            weights: FmapWeights::default(),
            solve: SolveOptions::default(),
            recovery: RecoveryMethod::default(),
            descriptors: DescriptorStack::default(),
            keep_dense: false,
        }
    }
}

/// A normalized mesh with its spectral basis and per-vertex features.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub mesh: TriMesh,
    /// Basis with `max(k, DESCRIPTOR_BASIS_K)` functions (capped at `n`).
    pub basis: SpectralBasis,
    pub features: DMatrix<f64>,
}

impl PreparedShape {
    /// Normalizes `mesh`, computes its basis and, unless `features` are given,
    /// the descriptor stack.
    pub fn new(mesh: &TriMesh, features: Option<DMatrix<f64>>, cfg: &MatchConfig) -> Result<Self> {
        let mesh = normalize_mesh(mesh)?;
        let n = mesh.num_vertices();
        if let Some(f) = &features {
            if f.nrows() != n {
                return Err(Error::Shape {
                    what: "feature rows".into(),
                    expected: n,
                    found: f.nrows(),
                });
            }
        }
        let k = cfg.k.max(DESCRIPTOR_BASIS_K).min(n);
        if cfg.k > n {
            return Err(Error::Argument(format!("k = {} exceeds the {n} mesh vertices", cfg.k)));
        }
        let basis = eigenbasis(&cotangent_weights(&mesh), &vertex_areas(&mesh), k)?;
        let features = match features {
            Some(f) => f,
            None => descriptor_features(&mesh, &basis, &cfg.descriptors)?.values().clone(),
        };
        Ok(Self { mesh, basis, features })
    }

    pub fn n(&self) -> usize {
        self.mesh.num_vertices()
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub map: PointMap,
    /// Present for the functional-map matcher.
    pub fmap: Option<FunctionalMap>,
    /// Truncated bases the map lives in (functional-map matcher only).
    pub bases: Option<(SpectralBasis, SpectralBasis)>,
}

/// Matches `target` vertices to `source` vertices.
pub fn match_prepared(source: &PreparedShape, target: &PreparedShape, cfg: &MatchConfig) -> Result<MatchOutcome> {
    if source.features.ncols() != target.features.ncols() {
        return Err(Error::Argument(format!(
            "source features have d = {}, target d = {}",
            source.features.ncols(),
            target.features.ncols()
        )));
    }
    match cfg.method {
        MatchMethod::Fmap => {
            let bm = source.basis.truncated(cfg.k)?;
            let bn = target.basis.truncated(cfg.k)?;
            let problem = FmapProblem::new(&bm, &bn, &source.features, &target.features, cfg.weights)?;
            let fmap = solve_fmap(&problem, &cfg.solve)?;
            let map = recover_pointmap(&fmap.c, &bm, &bn, cfg.recovery, cfg.keep_dense)?;
            Ok(MatchOutcome {
                map,
                fmap: Some(fmap),
                bases: Some((bm, bn)),
            })
        }
        MatchMethod::Nn => Ok(MatchOutcome {
            map: nearest_feature_map(&source.features, &target.features),
            fmap: None,
            bases: None,
        }),
        MatchMethod::Hungarian => Ok(MatchOutcome {
            map: hungarian_map(&source.features, &target.features)?,
            fmap: None,
            bases: None,
        }),
    }
}

/// Convenience wrapper: prepares both meshes and matches them.
pub fn match_meshes(
    source: &TriMesh,
    target: &TriMesh,
    features: Option<(DMatrix<f64>, DMatrix<f64>)>,
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    let (fs, ft) = match features {
        Some((f, g)) => (Some(f), Some(g)),
        None => (None, None),
    };
    let s = PreparedShape::new(source, fs, cfg)?;
    let t = PreparedShape::new(target, ft, cfg)?;
    match_prepared(&s, &t, cfg)
}

/// Squared Euclidean distances between target rows and source rows (n_N x n_M).
fn feature_distances(f: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let fn2: Vec<f64> = f.row_iter().map(|r| r.norm_squared()).collect();
    let gn2: Vec<f64> = g.row_iter().map(|r| r.norm_squared()).collect();
    let cross = g * f.transpose();
    DMatrix::from_fn(g.nrows(), f.nrows(), |j, v| (gn2[j] + fn2[v] - 2.0 * cross[(j, v)]).max(0.0))
}

fn nearest_feature_map(f: &DMatrix<f64>, g: &DMatrix<f64>) -> PointMap {
    let d = feature_distances(f, g);
    let matches = d
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for v in 1..row.len() {
                if row[v] < row[best] {
                    best = v;
                }
            }
            best
        })
        .collect::<Vec<_>>();
    PointMap {
        confidence: vec![1.0; matches.len()],
        target_to_source: matches,
        pi_dense: None,
    }
}

/// One-to-one assignment; when the target has more vertices than the source,
/// the unassigned target vertices fall back to their nearest feature.
fn hungarian_map(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<PointMap> {
    let d = feature_distances(f, g).map(f64::sqrt);
    let assignment = min_cost_assignment(&d)?;
    let fallback = nearest_feature_map(f, g);
    let mut matches = fallback.target_to_source;
    let mut confidence = vec![0.0; matches.len()];
    for (j, v) in assignment.pairs {
        matches[j] = v;
        confidence[j] = 1.0;
    }
    Ok(PointMap {
        target_to_source: matches,
        confidence,
        pi_dense: None,
    })
}
