//! Little-endian binary demonstration datasets.
//!
//! ```text
//! "GLASDS01" | u8 dynamics (1 single, 2 double) | u32 count
//! per record: u8 n_v | u8 n_o | goal (2|4 f32) | n_v neighbors (2|4 f32)
//!             | n_o obstacles (2 f32) | action (2 f32)
//! ```

use std::path::Path;

use crate::error::{GlasError, Result};
use crate::geom::Vec2;
use crate::observation::Observation;
use crate::world::Dynamics;

pub const MAGIC: &[u8; 8] = b"GLASDS01";
const MAGIC_STEM: &[u8; 6] = b"GLASDS";

/// One observation-action pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoRecord {
    pub obs: Observation,
    pub action: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dynamics: Dynamics,
    pub records: Vec<DemoRecord>,
}

impl Dataset {
    pub fn new(dynamics: Dynamics) -> Self {
        Self {
            dynamics,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.records.len()).map_err(|_| {
            GlasError::Format(format!(
                "{} records exceed the u32 count field",
                self.records.len()
            ))
        })?;
        let mut out = Vec::with_capacity(13 + self.records.len() * 64);
        out.extend_from_slice(MAGIC);
        out.push(self.dynamics.code());
        out.extend_from_slice(&count.to_le_bytes());
        for (k, r) in self.records.iter().enumerate() {
            if r.obs.dynamics != self.dynamics {
                return Err(GlasError::ShapeMismatch(format!(
                    "record {k} has {} dynamics in a {} dataset",
                    r.obs.dynamics.name(),
                    self.dynamics.name()
                )));
            }
            let (values, (n_v, n_o)) = r.obs.encode();
            let (Ok(n_v), Ok(n_o)) = (u8::try_from(n_v), u8::try_from(n_o)) else {
                return Err(GlasError::Format(format!(
                    "record {k} has {n_v} neighbors and {n_o} obstacles; at most 255 each"
                )));
            };
            out.push(n_v);
            out.push(n_o);
            for v in values.iter().chain(&[r.action.x, r.action.y]) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            if magic.starts_with(MAGIC_STEM) {
                return Err(GlasError::Version {
                    expected: "01".into(),
                    found: String::from_utf8_lossy(&magic[6..]).into_owned(),
                });
            }
            return Err(GlasError::Format("not a GLAS dataset (bad magic)".into()));
        }
        let code = cur.take(1)?[0];
        let dynamics = Dynamics::from_code(code)
            .ok_or_else(|| GlasError::Format(format!("unknown dynamics code {code}")))?;
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        // Every record needs at least its shape bytes, goal and action.
        let min_record = 2 + 4 * (dynamics.state_dim() + 2);
        if count.saturating_mul(min_record) > bytes.len() - cur.pos {
            return Err(GlasError::Format(format!(
                "header claims {count} records but only {} bytes follow",
                bytes.len() - cur.pos
            )));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let shape = cur.take(2)?;
            let (n_v, n_o) = (shape[0] as usize, shape[1] as usize);
            let len = Observation::encoded_len(dynamics, n_v, n_o);
            let raw = cur.take(4 * (len + 2))?;
            let vals: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let obs = Observation::decode(dynamics, (n_v, n_o), &vals[..len])?;
            records.push(DemoRecord {
                obs,
                action: Vec2::new(vals[len], vals[len + 1]),
            });
        }
        if cur.pos != bytes.len() {
            return Err(GlasError::Format(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { dynamics, records })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GlasError::Format(format!(
                "truncated dataset: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_bytes()?).map_err(|e| GlasError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| GlasError::io(path, e))?;
    Dataset::from_bytes(&bytes)
}
