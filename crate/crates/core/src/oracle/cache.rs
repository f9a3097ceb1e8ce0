use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::OptimalAssignment;
use crate::error::Result;
use crate::io::{read_jsonl, write_jsonl};
use crate::world::{Path, WorldId};

/// One line of the oracle cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEntry {
    pub id: WorldId,
    pub routes: Vec<Vec<usize>>,
    pub distance: f64,
    pub exact: bool,
}

pub type OracleCache = BTreeMap<WorldId, OptimalAssignment>;

impl OracleEntry {
    pub fn new(id: WorldId, a: &OptimalAssignment) -> Self {
        Self {
            id,
            routes: a.routes.iter().map(|r| r.tasks.clone()).collect(),
            distance: a.total_distance,
            exact: a.proof_of_optimality,
        }
    }

    pub fn into_assignment(self) -> (WorldId, OptimalAssignment) {
        let routes = self.routes.into_iter().enumerate().map(|(a, r)| Path::with_tasks(a, r)).collect();
        (self.id, OptimalAssignment { routes, total_distance: self.distance, proof_of_optimality: self.exact })
    }
}

pub fn load_cache(path: &FsPath) -> Result<OracleCache> {
    Ok(read_jsonl::<OracleEntry>(path)?.into_iter().map(OracleEntry::into_assignment).collect())
}

/// Writes entries sorted by world id.
pub fn save_cache(path: &FsPath, cache: &OracleCache) -> Result<()> {
    let entries: Vec<OracleEntry> = cache.iter().map(|(id, a)| OracleEntry::new(id.clone(), a)).collect();
    write_jsonl(path, &entries)
}
