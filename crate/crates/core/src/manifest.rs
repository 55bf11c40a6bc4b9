//! Per-domain 80/10/10 train/valid/test assignment and its JSON form.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub name: String,
    pub files: Vec<FileEntry>,
}

impl DomainEntry {
    pub fn files_in(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.files
            .iter()
            .filter(move |f| f.split == split)
            .map(|f| f.path.as_path())
    }

    pub fn count(&self, split: Split) -> usize {
        self.files.iter().filter(|f| f.split == split).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub domains: Vec<DomainEntry>,
}

/// Smallest per-domain file count that leaves every split non-empty.
pub const MIN_FILES_PER_DOMAIN: usize = 3;

/// `(train, valid, test)` sizes: `floor(n / 10)` for valid and test (at least one each), rest to train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

/// Shuffle each domain's files with a seeded RNG and assign splits.
pub fn split_dataset(domains: &[(String, Vec<PathBuf>)], seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(domains.len());
    for (name, files) in domains {
        if files.len() < MIN_FILES_PER_DOMAIN {
            return Err(Error::InsufficientData(format!(
                "domain `{name}` has {} files, need at least {MIN_FILES_PER_DOMAIN}",
                files.len()
            )));
        }
        let mut shuffled = files.clone();
        shuffled.shuffle(&mut rng);
        let (train, valid, _) = split_sizes(shuffled.len());
        let files = shuffled
            .into_iter()
            .enumerate()
            .map(|(i, path)| FileEntry {
                path,
                split: if i < train {
                    Split::Train
                } else if i < train + valid {
                    Split::Valid
                } else {
                    Split::Test
                },
            })
            .collect();
        out.push(DomainEntry {
            name: name.clone(),
            files,
        });
    }
    Ok(DatasetManifest { domains: out })
}

impl DatasetManifest {
    pub fn domain(&self, name: &str) -> Result<&DomainEntry> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
