use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tracing::warn;

use crate::error::{Error, Result};
use crate::orb::{Orb, OrbId};

pub const LOG_FILE: &str = "orbs.jsonl";
pub const SNAPSHOT_FILE: &str = "orbs.snapshot.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stored {
    Created,
    Updated,
}

impl Stored {
    pub fn created(self) -> bool {
        self == Stored::Created
    }
}

/// Orbs keyed by id with upsert semantics. When opened on a directory every
/// save is appended to `orbs.jsonl` and synced before returning.
#[derive(Debug, Default)]
pub struct MetadataStore {
    orbs: BTreeMap<OrbId, Orb>,
    dir: Option<PathBuf>,
    log: Option<File>,
}

impl MetadataStore {
    pub fn in_memory() -> Self {
        MetadataStore::default()
    }

    /// Loads the compacted snapshot (if any) then replays the log on top of
    /// it; later lines win.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut orbs = BTreeMap::new();
        let snapshot = dir.join(SNAPSHOT_FILE);
        if snapshot.exists() {
            if let Some(valid) = replay(&snapshot, &mut orbs)? {
                return Err(Error::Corrupt {
                    file: snapshot.display().to_string(),
                    reason: format!("truncated after byte {valid}"),
                });
            }
        }
        let log_path = dir.join(LOG_FILE);
        let torn = if log_path.exists() {
            replay(&log_path, &mut orbs)?
        } else {
            None
        };
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if let Some(valid) = torn {
            log.set_len(valid)?;
            log.sync_all()?;
        }
        Ok(MetadataStore {
            orbs,
            dir: Some(dir.to_owned()),
            log: Some(log),
        })
    }

    pub fn save_orb(&mut self, orb: Orb) -> Result<Stored> {
        if let Some(log) = self.log.as_mut() {
            let mut line = orb.to_json();
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.sync_data()?;
        }
        let stored = match self.orbs.insert(orb.id().clone(), orb) {
            Some(_) => Stored::Updated,
            None => Stored::Created,
        };
        Ok(stored)
    }

    pub fn fetch_orb(&self, id: &OrbId) -> Option<&Orb> {
        self.orbs.get(id)
    }

    /// Like [`fetch_orb`](Self::fetch_orb) but validates a raw id first.
    pub fn fetch_by_str(&self, id: &str) -> Result<Option<&Orb>> {
        let id = OrbId::parse(id)?;
        Ok(self.orbs.get(&id))
    }

    pub fn contains(&self, id: &OrbId) -> bool {
        self.orbs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.orbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbs.is_empty()
    }

    /// Orbs in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Orb> {
        self.orbs.values()
    }

    /// Rewrites the snapshot file from the current state and truncates the
    /// log. No-op for in-memory stores.
    pub fn compact(&mut self) -> Result<()> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for orb in self.orbs.values() {
                w.write_all(orb.to_json().as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        // A crash before this truncation only replays duplicates on reload.
        if let Some(log) = self.log.as_mut() {
            log.set_len(0)?;
            log.sync_all()?;
        }
        Ok(())
    }
}

/// Applies every record in `path`. Returns the byte length of the valid
/// prefix when the file ends in a torn record.
fn replay(path: &Path, orbs: &mut BTreeMap<OrbId, Orb>) -> Result<Option<u64>> {
    let file_name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Orb>(line) {
            Ok(orb) => {
                orbs.insert(orb.id().clone(), orb);
            }
            // A torn final line is what an interrupted append leaves behind.
            Err(e) if lines.peek().is_none() => {
                warn!(file = %file_name, line = i + 1, error = %e, "dropping torn trailing record");
                return Ok(Some(start as u64));
            }
            Err(e) => {
                return Err(Error::Corrupt {
                    file: file_name,
                    reason: format!("line {}: {e}", i + 1),
                });
            }
        }
    }
    Ok(None)
}
