use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_json, Manifest};
use crate::error::{Error, Result};

pub const SPLITS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoleMap {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Default for RoleMap {
    fn default() -> Self {
        Self {
            train: vec![0, 1, 2],
            validation: vec![3],
            test: vec![4],
        }
    }
}

impl RoleMap {
    pub fn folds(&self, role: SplitRole) -> &[usize] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Validation => &self.validation,
            SplitRole::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub schema_version: u32,
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
    pub roles: RoleMap,
}

impl SplitAssignment {
    pub fn fold(&self, song_id: &str) -> Option<usize> {
        self.folds.get(song_id).copied()
    }

    pub fn songs(&self, role: SplitRole) -> BTreeSet<&str> {
        let folds = self.roles.folds(role);
        self.folds
            .iter()
            .filter(|(_, f)| folds.contains(f))
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn has_role(&self, song_id: &str, role: SplitRole) -> bool {
        self.fold(song_id)
            .is_some_and(|f| self.roles.folds(role).contains(&f))
    }

    pub fn with_roles(mut self, roles: RoleMap) -> Result<Self> {
        for f in roles.train.iter().chain(&roles.validation).chain(&roles.test) {
            if *f >= self.k {
                return Err(Error::Config(format!("fold {f} is out of range for k={}", self.k)));
            }
        }
        self.roles = roles;
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: SplitAssignment = serde_json::from_str(&text)?;
        if s.schema_version != SPLITS_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: s.schema_version,
                expected: SPLITS_SCHEMA_VERSION,
            });
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Genre-stratified k-fold assignment: songs of each genre are shuffled with
/// the seed and dealt round-robin, continuing from where the previous genre stopped.
pub fn make_splits(m: &Manifest, k: usize, seed: u64) -> Result<SplitAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut by_genre: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for song in &m.songs {
        by_genre.entry(&song.genre).or_default().push(&song.song_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for songs in by_genre.values_mut() {
        songs.shuffle(&mut rng);
        for song in songs.iter() {
            folds.insert(song.to_string(), next % k);
            next += 1;
        }
    }
    let roles = if k == 5 {
        RoleMap::default()
    } else {
        RoleMap {
            train: (0..k.saturating_sub(2)).collect(),
            validation: vec![k - 2],
            test: vec![k - 1],
        }
    };
    Ok(SplitAssignment {
        schema_version: SPLITS_SCHEMA_VERSION,
        k,
        seed,
        folds,
        roles,
    })
}
