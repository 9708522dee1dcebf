//! Colors and keypoints carried across a recovered point map.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcmap::PointMap;
use crate::mesh::{KdTree, Point3, TriMesh};
use crate::spectral::SpectralBasis;

/// Snapping radius for keypoints given as positions, as a fraction of the
/// template's bounding-box diagonal.
pub const SNAP_FRACTION: f64 = 0.05;

fn check_map(map: &PointMap, n_source: usize, n_target: usize) -> Result<()> {
    if map.target_to_source.len() != n_target {
        return Err(Error::Argument(format!(
            "map has {} entries, target has {n_target} vertices",
            map.target_to_source.len()
        )));
    }
    if let Some(&bad) = map.target_to_source.iter().find(|&&v| v >= n_source) {
        return Err(Error::Argument(format!(
            "map index {bad} out of range for a {n_source}-vertex source"
        )));
    }
    Ok(())
}

/// Colors `target_simplified` through a target-to-source map. Source
/// simplified vertices first take the color of their nearest textured vertex.
pub fn transfer_colors(
    source_textured: &TriMesh,
    source_simplified: &TriMesh,
    target_simplified: &TriMesh,
    map: &PointMap,
) -> Result<TriMesh> {
    let colors = source_textured
        .colors()
        .ok_or_else(|| Error::Argument("source textured mesh has no vertex colors".into()))?;
    check_map(map, source_simplified.num_vertices(), target_simplified.num_vertices())?;
    let tree = KdTree::new(source_textured.vertices());
    let source_colors: Vec<_> = source_simplified
        .vertices()
        .iter()
        .map(|&p| colors[tree.nearest(p).expect("textured mesh has vertices").0])
        .collect();
    let target_colors = map.target_to_source.iter().map(|&v| source_colors[v]).collect();
    target_simplified.clone().without_colors().with_colors(target_colors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeypointLocation {
    Vertex { vertex: usize },
    Position { xyz: Point3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub label: String,
    #[serde(flatten)]
    pub location: KeypointLocation,
}

/// Labelled points on a template mesh.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn from_vertices<S: Into<String>>(points: impl IntoIterator<Item = (S, usize)>) -> Self {
        Self {
            points: points
                .into_iter()
                .map(|(label, vertex)| Keypoint {
                    label: label.into(),
                    location: KeypointLocation::Vertex { vertex },
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Template vertex of every keypoint; positions snap to the nearest vertex
    /// within [`SNAP_FRACTION`] of the bounding-box diagonal.
    pub fn resolve(&self, template: &TriMesh) -> Result<Vec<usize>> {
        let n = template.num_vertices();
        let radius = SNAP_FRACTION * template.bounding_box_diagonal();
        let mut tree = None;
        self.points
            .iter()
            .map(|k| match k.location {
                KeypointLocation::Vertex { vertex } if vertex < n => Ok(vertex),
                KeypointLocation::Vertex { vertex } => Err(Error::Argument(format!(
                    "keypoint {:?}: vertex {vertex} out of range for a {n}-vertex template",
                    k.label
                ))),
                KeypointLocation::Position { xyz } => {
                    let tree = tree.get_or_insert_with(|| KdTree::new(template.vertices()));
                    let (v, d) = tree.nearest(xyz).expect("template has vertices");
                    if d <= radius {
                        Ok(v)
                    } else {
                        Err(Error::Argument(format!(
                            "keypoint {:?} is {d:.4} from the nearest vertex, beyond the snap radius {radius:.4}",
                            k.label
                        )))
                    }
                }
            })
            .collect()
    }
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("line {}, column {}", e.line(), e.column()), e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferredKeypoint {
    pub label: String,
    pub vertex: usize,
    pub confidence: f64,
}

pub fn write_transferred(path: impl AsRef<Path>, points: &[TransferredKeypoint]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(points).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// What the map was solved in; used when a template vertex has no preimage.
#[derive(Debug, Clone, Copy)]
pub struct MapEmbedding<'a> {
    /// Target-by-source functional map.
    pub c: &'a DMatrix<f64>,
    pub source: &'a SpectralBasis,
    pub target: &'a SpectralBasis,
}

impl MapEmbedding<'_> {
    /// Target vertex whose row of `Φ_N C` is closest to row `i` of `Φ_M`.
    fn nearest_target(&self, i: usize) -> usize {
        let emb = self.target.phi() * self.c;
        let q = self.source.phi().row(i);
        let mut best = (0, f64::INFINITY);
        for (j, row) in emb.row_iter().enumerate() {
            let d = (row - q).norm_squared();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }
}

/// Moves template (source) keypoints to the target of a target-to-source map.
/// With a dense `Π` the pick is the column argmax; otherwise the most
/// confident preimage, falling back to the spectral embedding (confidence 0)
/// when nothing maps onto the keypoint. Ties go to the smallest index.
pub fn transfer_keypoints(
    keypoints: &KeypointSet,
    template: &TriMesh,
    map: &PointMap,
    embedding: Option<MapEmbedding<'_>>,
) -> Result<Vec<TransferredKeypoint>> {
    if keypoints.is_empty() {
        return Err(Error::Argument("keypoint set is empty".into()));
    }
    let n_m = template.num_vertices();
    if let Some(pi) = &map.pi_dense {
        if pi.ncols() != n_m || pi.nrows() != map.target_to_source.len() {
            return Err(Error::Argument(format!(
                "dense map is {}x{}, expected {}x{n_m}",
                pi.nrows(),
                pi.ncols(),
                map.target_to_source.len()
            )));
        }
    }
    check_map(map, n_m, map.target_to_source.len())?;
    let vertices = keypoints.resolve(template)?;
    keypoints
        .points
        .iter()
        .zip(vertices)
        .map(|(k, i)| {
            let picked = match &map.pi_dense {
                Some(pi) => {
                    let col = pi.column(i);
                    let mut best = 0;
                    for j in 1..col.len() {
                        if col[j] > col[best] {
                            best = j;
                        }
                    }
                    Some((best, col[best]))
                }
                None => map
                    .target_to_source
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| v == i)
                    .map(|(j, _)| (j, map.confidence[j]))
                    .fold(None, |best: Option<(usize, f64)>, (j, c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((j, c)),
                    }),
            };
            let (vertex, confidence) = match picked {
                Some(p) => p,
                None => {
                    let emb = embedding.ok_or_else(|| {
                        Error::Data(format!(
                            "keypoint {:?}: no target vertex maps to template vertex {i} and no spectral embedding was given",
                            k.label
                        ))
                    })?;
                    (emb.nearest_target(i), 0.0)
                }
            };
            Ok(TransferredKeypoint {
                label: k.label.clone(),
                vertex,
                confidence,
            })
        })
        .collect()
}

/// Keypoint transfer through a map solved the other way round, with the
/// template as the map's target: each keypoint follows its own match.
pub fn transfer_keypoints_reverse(
    keypoints: &KeypointSet,
    template: &TriMesh,
    template_to_target: &PointMap,
) -> Result<Vec<TransferredKeypoint>> {
    if keypoints.is_empty() {
        return Err(Error::Argument("keypoint set is empty".into()));
    }
    if template_to_target.target_to_source.len() != template.num_vertices() {
        return Err(Error::Argument(format!(
            "reverse map has {} entries, template has {} vertices",
            template_to_target.target_to_source.len(),
            template.num_vertices()
        )));
    }
    let vertices = keypoints.resolve(template)?;
    Ok(keypoints
        .points
        .iter()
        .zip(vertices)
        .map(|(k, i)| TransferredKeypoint {
            label: k.label.clone(),
            vertex: template_to_target.target_to_source[i],
            confidence: template_to_target.confidence[i],
        })
        .collect())
}
