//! JSONL persistence for trajectory datasets.
//!
//! The first line is a header `{"schema": "gift.trajectories", "version": 1,
//! "count": N}`; each following line holds one trajectory.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Trajectory, WorldError};

pub const DATASET_SCHEMA: &str = "gift.trajectories";
pub const DATASET_VERSION: u32 = 1;

/// Paired demonstrations: `preferred[i]` and `nominal[i]` start from the same
/// scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub preferred: Vec<Trajectory>,
    pub nominal: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.preferred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preferred.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    count: usize,
}

pub fn write_trajectories<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<(), WorldError> {
    let io = |source| WorldError::Io {
        path: "<dataset>".into(),
        source,
    };
    let header = Header {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_VERSION,
        count: trajs.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for t in trajs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>, WorldError> {
    let mut lines = r.lines();
    let io = |source| WorldError::Io {
        path: "<dataset>".into(),
        source,
    };
    let header_line = lines
        .next()
        .ok_or_else(|| WorldError::schema("header", "missing header line"))?
        .map_err(io)?;
    let header: Header = serde_json::from_str(&header_line)?;
    if header.schema != DATASET_SCHEMA || header.version != DATASET_VERSION {
        return Err(WorldError::schema(
            "header",
            format!("unsupported dataset {} v{}", header.schema, header.version),
        ));
    }
    let mut out = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)?;
        t.validate()?;
        out.push(t);
    }
    if out.len() != header.count {
        return Err(WorldError::schema(
            "count",
            format!(
                "header declares {} trajectories, found {}",
                header.count,
                out.len()
            ),
        ));
    }
    Ok(out)
}
