use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FmapWeights, FunctionalMap, PointMap};
use crate::error::{Error, Result};

/// On-disk map: functional map, recovered point map and the settings used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub k: usize,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub target_to_source: Vec<usize>,
    pub confidence: Vec<f64>,
    pub objective: f64,
    pub weights: FmapWeights,
}

impl MapFile {
    pub fn new(fmap: &FunctionalMap, map: &PointMap, weights: FmapWeights) -> Self {
        Self {
            k: fmap.c.nrows(),
            c: fmap.c.row_iter().map(|r| r.iter().copied().collect()).collect(),
            target_to_source: map.target_to_source.clone(),
            confidence: map.confidence.clone(),
            objective: fmap.final_objective,
            weights,
        }
    }

    pub fn c_matrix(&self) -> Result<DMatrix<f64>> {
        if self.c.len() != self.k || self.c.iter().any(|r| r.len() != self.k) {
            return Err(Error::Data(format!("C is not {0}x{0}", self.k)));
        }
        Ok(DMatrix::from_fn(self.k, self.k, |i, j| self.c[i][j]))
    }
}

pub fn write_map(path: impl AsRef<Path>, map: &MapFile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(map).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: impl AsRef<Path>) -> Result<MapFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: MapFile = serde_json::from_str(&text).map_err(|e| {
        Error::format(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    if map.confidence.len() != map.target_to_source.len() {
        return Err(Error::format(path, "confidence", "length differs from target_to_source"));
    }
    map.c_matrix().map_err(|e| Error::format(path, "C", e.to_string()))?;
    Ok(map)
}
