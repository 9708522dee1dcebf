use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of the vertices into labelled semantic groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGroups {
    group_of: Vec<usize>,
    ids: Vec<usize>,
    members: Vec<Vec<usize>>,
    names: BTreeMap<usize, String>,
}

impl SemanticGroups {
    pub fn new(group_of: Vec<usize>) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::Data("semantic groups cover no vertices".into()));
        }
        let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, &g) in group_of.iter().enumerate() {
            by_id.entry(g).or_default().push(v);
        }
        let (ids, members) = by_id.into_iter().unzip();
        Ok(Self {
            group_of,
            ids,
            members,
            names: BTreeMap::new(),
        })
    }

    /// Every vertex in its own group, labelled by its index.
    pub fn singletons(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    pub fn with_names(mut self, names: BTreeMap<usize, String>) -> Self {
        self.names = names;
        self
    }

    pub fn n(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    /// Distinct group ids in ascending order.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn num_groups(&self) -> usize {
        self.ids.len()
    }

    /// Vertices of group `id`, ascending.
    pub fn members(&self, id: usize) -> Option<&[usize]> {
        self.ids
            .binary_search(&id)
            .ok()
            .map(|i| self.members[i].as_slice())
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }
}

#[derive(Serialize, Deserialize)]
struct GroupsFile {
    n: usize,
    group_of: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<BTreeMap<String, String>>,
}

pub fn read_groups(path: impl AsRef<Path>) -> Result<SemanticGroups> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GroupsFile = serde_json::from_str(&text).map_err(|e| {
        Error::format(path, format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    if file.group_of.len() != file.n {
        return Err(Error::Shape {
            what: format!("{}: group_of length", path.display()),
            expected: file.n,
            found: file.group_of.len(),
        });
    }
    let mut labels = Vec::with_capacity(file.n);
    for (v, &g) in file.group_of.iter().enumerate() {
        if g < 0 {
            return Err(Error::format(path, "group_of", format!("vertex {v} has negative label {g}")));
        }
        labels.push(g as usize);
    }
    let mut names = BTreeMap::new();
    for (k, v) in file.names.unwrap_or_default() {
        let id = k
            .parse::<usize>()
            .map_err(|_| Error::format(path, "names", format!("key {k:?} is not a group id")))?;
        names.insert(id, v);
    }
    Ok(SemanticGroups::new(labels)
        .map_err(|e| Error::format(path, "group_of", e.to_string()))?
        .with_names(names))
}

pub fn write_groups(path: impl AsRef<Path>, groups: &SemanticGroups) -> Result<()> {
    let path = path.as_ref();
    let file = GroupsFile {
        n: groups.n(),
        group_of: groups.group_of.iter().map(|&g| g as i64).collect(),
        names: (!groups.names.is_empty())
            .then(|| groups.names.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_consistent() {
        let g = SemanticGroups::new(vec![3, 1, 3, 0, 1]).unwrap();
        assert_eq!(g.ids(), &[0, 1, 3]);
        assert_eq!(g.members(3).unwrap(), &[0, 2]);
        assert_eq!(g.members(2), None);
        let total: usize = g.ids().iter().map(|&i| g.members(i).unwrap().len()).sum();
        assert_eq!(total, 5);
        for (v, &id) in g.group_of().iter().enumerate() {
            assert!(g.members(id).unwrap().contains(&v));
        }
    }

    #[test]
    fn json_roundtrip_with_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("groups.json");
        fs::write(&p, r#"{"n": 3, "group_of": [0, 2, 2], "names": {"0": "leg", "2": "seat"}}"#).unwrap();
        let g = read_groups(&p).unwrap();
        assert_eq!(g.name(2), Some("seat"));
        let q = dir.path().join("out.json");
        write_groups(&q, &g).unwrap();
        assert_eq!(read_groups(&q).unwrap(), g);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("groups.json");
        fs::write(&p, r#"{"n": 4, "group_of": [0, 2, 2]}"#).unwrap();
        assert!(matches!(read_groups(&p), Err(Error::Shape { .. })));
        fs::write(&p, r#"{"n": 1, "group_of": [-1]}"#).unwrap();
        assert!(read_groups(&p).is_err());
    }
}
