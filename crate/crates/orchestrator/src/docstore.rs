//! File-backed document store: one pretty JSON file per entity under
//! `{root}/{collection}/{id}.json`, replaced by atomic rename.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{OrchestratorError, Result};

#[derive(Debug, Clone)]
pub struct DocumentStore {
    root: PathBuf,
}

fn plain_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl DocumentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| OrchestratorError::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, collection: &str, id: &str) -> Result<PathBuf> {
        if !plain_id(collection) || !plain_id(id) {
            return Err(OrchestratorError::BadRequest(format!("invalid document id {collection}/{id}")));
        }
        Ok(self.root.join(collection).join(format!("{id}.json")))
    }

    pub fn put<T: Serialize>(&self, collection: &str, id: &str, doc: &T) -> Result<()> {
        let path = self.path(collection, id)?;
        let dir = self.root.join(collection);
        fs::create_dir_all(&dir).map_err(|e| OrchestratorError::io(&dir, e))?;
        let mut bytes = serde_json::to_vec_pretty(doc)?;
        bytes.push(b'\n');
        let tmp = dir.join(format!(".{id}.json.tmp"));
        fs::write(&tmp, &bytes).map_err(|e| OrchestratorError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| OrchestratorError::io(&path, e))
    }

    pub fn get<T: DeserializeOwned>(&self, collection: &str, id: &str) -> Result<Option<T>> {
        let path = self.path(collection, id)?;
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(OrchestratorError::io(&path, e)),
        }
    }

    /// Every document in the collection, ordered by id.
    pub fn list<T: DeserializeOwned>(&self, collection: &str) -> Result<Vec<T>> {
        let dir = self.root.join(collection);
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(OrchestratorError::io(&dir, e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| OrchestratorError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json").filter(|id| plain_id(id)) {
                ids.push(id.to_owned());
            }
        }
        ids.sort();
        ids.iter().filter_map(|id| self.get(collection, id).transpose()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_list() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put("things", "b", &2u32).unwrap();
        store.put("things", "a", &1u32).unwrap();
        store.put("things", "a", &3u32).unwrap();
        assert_eq!(store.get::<u32>("things", "a").unwrap(), Some(3));
        assert_eq!(store.get::<u32>("things", "zz").unwrap(), None);
        assert_eq!(store.list::<u32>("things").unwrap(), vec![3, 2]);
        assert!(store.list::<u32>("nothing").unwrap().is_empty());
        assert!(store.put("things", "../escape", &0u32).is_err());
    }
}
