use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Bm25Index, DenseIndex};

pub const SNAPSHOT_MAGIC: &str = "LINKFORGE-INDEX";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not an index snapshot (bad magic header)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot parameter block does not match its payload")]
    InconsistentParameters,
    #[error("snapshot decode error: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ParamBlock {
    kind: SnapshotKind,
    k1: Option<f64>,
    b: Option<f64>,
    dimension: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SnapshotKind {
    Bm25,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum IndexSnapshot {
    Bm25(Bm25Index),
    Dense(DenseIndex),
}

impl IndexSnapshot {
    fn params(&self) -> ParamBlock {
        match self {
            IndexSnapshot::Bm25(idx) => ParamBlock {
                kind: SnapshotKind::Bm25,
                k1: Some(idx.params().k1),
                b: Some(idx.params().b),
                dimension: None,
            },
            IndexSnapshot::Dense(idx) => ParamBlock {
                kind: SnapshotKind::Dense,
                k1: None,
                b: None,
                dimension: Some(idx.dimension()),
            },
        }
    }

    /// Line 1: magic + version. Line 2: parameter block. Line 3: payload.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SnapshotError> {
        writeln!(w, "{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}")?;
        serde_json::to_writer(&mut w, &self.params())?;
        writeln!(w)?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, SnapshotError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.ok_or(SnapshotError::BadMagic)?;
        let version = header
            .strip_prefix(SNAPSHOT_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .ok_or(SnapshotError::BadMagic)?
            .parse::<u32>()
            .map_err(|_| SnapshotError::BadMagic)?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let params_line = lines.next().transpose()?.ok_or(SnapshotError::InconsistentParameters)?;
        let params: ParamBlock = serde_json::from_str(&params_line)?;
        let payload = lines.next().transpose()?.ok_or(SnapshotError::InconsistentParameters)?;
        let mut snapshot: IndexSnapshot = serde_json::from_str(&payload)?;
        if snapshot.params() != params {
            return Err(SnapshotError::InconsistentParameters);
        }
        if let IndexSnapshot::Bm25(idx) = &mut snapshot {
            idx.recompute_stats();
        }
        Ok(snapshot)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SnapshotError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SnapshotError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}
