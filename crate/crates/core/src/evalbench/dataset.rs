use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesics::{
    geodesic_matrix, read_geodesics, read_groups, write_geodesics, write_groups, GeodesicMatrix, SemanticGroups,
};
use crate::mesh::{load_mesh, write_ply, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

/// One shape of the benchmark: `root/<category>/<name>/`.
#[derive(Debug, Clone)]
pub struct DatasetInstance {
    pub name: String,
    pub category: String,
    pub textured: TriMesh,
    pub remeshed: TriMesh,
    pub groups: SemanticGroups,
    pub geo: GeodesicMatrix,
    pub split: Split,
    pub dir: PathBuf,
}

impl DatasetInstance {
    /// `category/name`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.category, self.name)
    }
}

#[derive(Deserialize)]
struct Meta {
    #[serde(default)]
    split: Split,
}

const MESH: &str = "mesh.ply";
const REMESHED: &str = "remeshed.ply";
const GROUPS: &str = "groups.json";
const GEODESICS: &str = "geo.dgm";
const META: &str = "meta.json";

/// Loads one instance directory. A missing geodesic matrix is computed on
/// the remeshed geometry and written next to it.
pub fn load_instance(dir: impl AsRef<Path>, category: &str) -> Result<DatasetInstance> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Data(format!("{}: instance directory has no name", dir.display())))?
        .to_string();
    let id = format!("{category}/{name}");
    let textured = load_mesh(dir.join(MESH))?;
    let remeshed = load_mesh(dir.join(REMESHED))?;
    let groups = read_groups(dir.join(GROUPS))?;
    let n = remeshed.num_vertices();
    if groups.n() != n {
        return Err(Error::Data(format!(
            "{id}: groups cover {} vertices, remeshed mesh has {n}",
            groups.n()
        )));
    }
    let geo_path = dir.join(GEODESICS);
    let geo = if geo_path.exists() {
        read_geodesics(&geo_path)?
    } else {
        log::info!("{id}: computing geodesic matrix ({n} vertices)");
        let geo = geodesic_matrix(&remeshed).map_err(|e| Error::Data(format!("{id}: {e}")))?;
        write_geodesics(&geo_path, &geo)?;
        geo
    };
    if geo.n() != n {
        return Err(Error::Data(format!(
            "{id}: geodesic matrix is {0}x{0}, remeshed mesh has {n} vertices",
            geo.n()
        )));
    }
    let meta_path = dir.join(META);
    let split = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| {
            Error::format(&meta_path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
        })?;
        meta.split
    } else {
        Split::Test
    };
    Ok(DatasetInstance {
        name,
        category: category.to_string(),
        textured,
        remeshed,
        groups,
        geo,
        split,
        dir: dir.to_path_buf(),
    })
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                if !name.starts_with('.') {
                    out.push((name.to_string(), path));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// All instances under `root`, ordered by category and name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<DatasetInstance>> {
    let root = root.as_ref();
    let mut instances = Vec::new();
    for (category, cat_dir) in sorted_subdirs(root)? {
        for (_, dir) in sorted_subdirs(&cat_dir)? {
            instances.push(load_instance(&dir, &category)?);
        }
    }
    if instances.is_empty() {
        return Err(Error::Data(format!("{}: no dataset instances found", root.display())));
    }
    Ok(instances)
}

/// Writes an instance directory in the layout [`load_instance`] reads.
/// Without `geo` the matrix is left to be computed on first load.
pub fn write_instance(
    dir: impl AsRef<Path>,
    textured: &TriMesh,
    remeshed: &TriMesh,
    groups: &SemanticGroups,
    geo: Option<&GeodesicMatrix>,
    split: Option<Split>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ply(dir.join(MESH), textured)?;
    write_ply(dir.join(REMESHED), remeshed)?;
    write_groups(dir.join(GROUPS), groups)?;
    if let Some(geo) = geo {
        write_geodesics(dir.join(GEODESICS), geo)?;
    }
    if let Some(split) = split {
        let path = dir.join(META);
        let text = serde_json::json!({ "split": split }).to_string();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
