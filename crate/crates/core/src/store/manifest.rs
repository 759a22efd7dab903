use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::StoreConfig;
use super::route::HASH_NAME;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Store-wide settings that must not change across restarts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub n_active: u32,
    pub m_spare: u32,
    pub strand_size: u64,
    pub hash: String,
    pub hash_seed: u64,
}

impl Manifest {
    pub fn new(name: &str, config: &StoreConfig) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            name: name.to_string(),
            n_active: config.n_active,
            m_spare: config.m_spare,
            strand_size: config.strand_size,
            hash: HASH_NAME.to_string(),
            hash_seed: config.hash_seed,
        }
    }

    /// Reads `<dir>/manifest`; `None` if the store was never created there.
    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let bytes = match fs::read(dir.join(MANIFEST_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::CorruptStore(format!("unreadable manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::CorruptStore(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        if m.hash != HASH_NAME {
            return Err(Error::CorruptStore(format!("unknown hash {:?}", m.hash)));
        }
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomically(dir, MANIFEST_FILE, &json)
    }

    /// Checks that `config` agrees with what the store was created with.
    pub fn check(&self, name: &str, config: &StoreConfig) -> Result<()> {
        if self.name != name {
            return Err(Error::NameMismatch {
                expected: name.to_string(),
                found: self.name.clone(),
            });
        }
        let mut diffs = Vec::new();
        if self.n_active != config.n_active {
            diffs.push(format!("n_active {} != {}", config.n_active, self.n_active));
        }
        if self.m_spare != config.m_spare {
            diffs.push(format!("m_spare {} != {}", config.m_spare, self.m_spare));
        }
        if self.strand_size != config.strand_size {
            diffs.push(format!(
                "strand_size {} != {}",
                config.strand_size, self.strand_size
            ));
        }
        if self.hash_seed != config.hash_seed {
            diffs.push(format!("hash_seed {} != {}", config.hash_seed, self.hash_seed));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diffs.join(", ")))
        }
    }

    /// `config` with the persistent fields taken from this manifest.
    pub fn apply_to(&self, mut config: StoreConfig) -> StoreConfig {
        config.n_active = self.n_active;
        config.m_spare = self.m_spare;
        config.strand_size = self.strand_size;
        config.hash_seed = self.hash_seed;
        config
    }
}

/// Writes `name` in `dir` via a temporary file and rename.
pub(crate) fn write_atomically(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!("{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
