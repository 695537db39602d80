//! Windowed dataset container: an 8-byte magic, a little-endian `u64`
//! header length, a JSON header, then `f64` little-endian blobs (power,
//! weather, and one block per decomposed window in header order).

use std::collections::HashMap;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{DataError, ImfBank, SplitPlan, WindowedDataset};
use crate::fsutil::atomic_write_bytes;
use crate::tensor::Tensor;
use crate::train::NormStats;

pub const CACHE_MAGIC: &[u8; 8] = b"HIFWIN01";

#[derive(Serialize, Deserialize)]
struct ImfHeader {
    modes: usize,
    starts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    history: usize,
    horizon: usize,
    start: NaiveDateTime,
    step_seconds: i64,
    rows: usize,
    turbines: Vec<String>,
    weather_names: Vec<String>,
    stats: NormStats,
    plan: SplitPlan,
    starts: [Vec<usize>; 3],
    imf: Option<ImfHeader>,
}

fn push_all(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_cache(path: &Path, ds: &WindowedDataset, bank: Option<&ImfBank>) -> Result<(), DataError> {
    let imf = bank.map(|b| ImfHeader {
        modes: b.modes(),
        starts: b.starts(),
    });
    let header = CacheHeader {
        history: ds.history,
        horizon: ds.horizon,
        start: ds.timestamps.first().copied().unwrap_or_default(),
        step_seconds: ds.step.num_seconds(),
        rows: ds.timestamps.len(),
        turbines: ds.turbines.clone(),
        weather_names: ds.weather_names.clone(),
        stats: ds.stats.clone(),
        plan: ds.plan.clone(),
        starts: ds.starts.clone(),
        imf,
    };
    let json = serde_json::to_vec(&header).map_err(|e| DataError::Cache(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * (ds.power.len() + ds.weather.len()));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_all(&mut out, ds.power.data());
    push_all(&mut out, ds.weather.data());
    if let Some(b) = bank {
        for s in b.starts() {
            push_all(&mut out, b.get(s).expect("listed start"));
        }
    }
    atomic_write_bytes(path, &out).map_err(|e| DataError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8], DataError> {
        if self.bytes.len() < len {
            return Err(DataError::Cache(format!(
                "truncated: needed {len} more bytes, {} left",
                self.bytes.len()
            )));
        }
        let (head, rest) = self.bytes.split_at(len);
        self.bytes = rest;
        Ok(head)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>, DataError> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_cache(path: &Path) -> Result<(WindowedDataset, Option<ImfBank>), DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes };
    let magic = cur.take(8)?;
    if magic != CACHE_MAGIC {
        return Err(DataError::Cache(format!(
            "{}: not a windowed dataset cache (magic {:?})",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: CacheHeader = serde_json::from_slice(cur.take(len)?).map_err(|e| DataError::Cache(e.to_string()))?;
    let (t, n, c) = (header.rows, header.turbines.len(), header.weather_names.len());
    let power = Tensor::new(&[t, n], cur.floats(t * n)?).map_err(|e| DataError::Cache(e.to_string()))?;
    let weather = Tensor::new(&[t, n, c], cur.floats(t * n * c)?).map_err(|e| DataError::Cache(e.to_string()))?;
    let bank = match &header.imf {
        Some(h) => {
            let mut map = HashMap::with_capacity(h.starts.len());
            for &s in &h.starts {
                map.insert(s, cur.floats(header.history * h.modes * n)?);
            }
            Some(ImfBank::from_parts(h.modes, header.history, n, map))
        }
        None => None,
    };
    if !cur.bytes.is_empty() {
        return Err(DataError::Cache(format!("{} trailing bytes", cur.bytes.len())));
    }
    let step = TimeDelta::seconds(header.step_seconds);
    let ds = WindowedDataset {
        history: header.history,
        horizon: header.horizon,
        timestamps: (0..t).map(|i| header.start + step * i as i32).collect(),
        step,
        turbines: header.turbines,
        weather_names: header.weather_names,
        power,
        weather,
        stats: header.stats,
        plan: header.plan,
        starts: header.starts,
    };
    Ok((ds, bank))
}
