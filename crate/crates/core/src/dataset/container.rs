//! Dataset file: a text header ending in a `data` line, then one binary
//! record per sample: label, key id and frame index as little-endian
//! `u32`, followed by the payload as little-endian `f32`.
//!
//! ```text
//! PIANOVIS-DATASET 1
//! task onoff
//! color white
//! kind single
//! count 1234
//! payload 600
//! data
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::features::{payload_len, FeatureKind, FeatureVector};
use crate::geometry::KeyColor;
use crate::models::{ModelKind, Task};
use crate::nn::train::Labeled;

pub const DATASET_MAGIC: &str = "PIANOVIS-DATASET";
pub const DATASET_VERSION: u32 = 1;

/// Homogeneous set of samples: one task, one key color, one feature kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub color: KeyColor,
    pub records: Vec<SampleRecord>,
}

/// Label counts per key color.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub white: Vec<usize>,
    pub black: Vec<usize>,
}

impl DatasetStats {
    pub fn new(n_classes: usize) -> Self {
        Self {
            white: vec![0; n_classes],
            black: vec![0; n_classes],
        }
    }

    pub fn of(records: &[SampleRecord], n_classes: usize) -> Self {
        let mut s = Self::new(n_classes);
        for r in records {
            let counts = match r.feature.color {
                KeyColor::White => &mut s.white,
                KeyColor::Black => &mut s.black,
            };
            if r.label >= counts.len() {
                counts.resize(r.label + 1, 0);
            }
            counts[r.label] += 1;
        }
        s
    }

    pub fn for_color(&self, color: KeyColor) -> &[usize] {
        match color {
            KeyColor::White => &self.white,
            KeyColor::Black => &self.black,
        }
    }

    pub fn total(&self) -> usize {
        self.white.iter().chain(&self.black).sum()
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for color in [KeyColor::White, KeyColor::Black] {
            let counts = self.for_color(color);
            if counts.iter().all(|&c| c == 0) {
                continue;
            }
            write!(f, "{}:", color.as_str())?;
            for (label, c) in counts.iter().enumerate() {
                write!(f, " {label}={c}")?;
            }
            writeln!(f, " total={}", counts.iter().sum::<usize>())?;
        }
        Ok(())
    }
}

impl Dataset {
    pub fn new(task: Task, color: KeyColor) -> Self {
        Self {
            task,
            color,
            records: Vec::new(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.task.feature_kind()
    }

    pub fn model_kind(&self) -> ModelKind {
        ModelKind::new(self.task, self.color)
    }

    pub fn payload_len(&self) -> usize {
        payload_len(self.color, self.kind())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a record after checking it belongs here.
    pub fn push(&mut self, r: SampleRecord) -> Result<()> {
        if r.task != self.task || r.feature.color != self.color || r.feature.kind != self.kind() {
            return Err(Error::InvalidArgument(format!(
                "{} {} {} record in a {} {} {} dataset",
                r.task.as_str(),
                r.feature.color.as_str(),
                r.feature.kind.as_str(),
                self.task.as_str(),
                self.color.as_str(),
                self.kind().as_str()
            )));
        }
        if r.label >= self.task.n_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {}",
                r.label,
                self.task.as_str()
            )));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::of(&self.records, self.task.n_classes())
    }

    pub fn labeled(&self) -> Vec<Labeled<'_>> {
        self.records
            .iter()
            .map(|r| Labeled {
                payload: r.feature.payload(),
                label: r.label,
            })
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = self.payload_len();
        let head = format!(
            "{DATASET_MAGIC} {DATASET_VERSION}\ntask {}\ncolor {}\nkind {}\ncount {}\npayload {len}\ndata\n",
            self.task.as_str(),
            self.color.as_str(),
            self.kind().as_str(),
            self.records.len()
        );
        let mut out = head.into_bytes();
        out.reserve(self.records.len() * (12 + 4 * len));
        for r in &self.records {
            for v in [r.label, r.feature.key_id, r.feature.frame_index] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for v in r.feature.payload() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut header = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or(Error::Parse {
                    offset: pos,
                    message: "unterminated dataset header".into(),
                })?;
            let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| Error::Parse {
                offset: pos,
                message: "header is not UTF-8".into(),
            })?;
            let start = pos;
            pos = end + 1;
            if line == "data" {
                break;
            }
            header.push((start, line.to_string()));
            if header.len() > 6 {
                return Err(Error::Parse {
                    offset: start,
                    message: "header has too many lines".into(),
                });
            }
        }
        let field = |i: usize, key: &str| -> Result<&str> {
            let (off, line) = header.get(i).ok_or(Error::Parse {
                offset: pos,
                message: format!("missing header field {key}"),
            })?;
            line.strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .ok_or(Error::Parse {
                    offset: *off,
                    message: format!("expected {key}, found {line:?}"),
                })
        };
        let bad = |i: usize, what: &str| Error::Parse {
            offset: header.get(i).map_or(0, |h| h.0),
            message: format!("bad {what}"),
        };
        if field(0, DATASET_MAGIC)? != DATASET_VERSION.to_string() {
            return Err(bad(0, "dataset version"));
        }
        let task = Task::parse(field(1, "task")?).ok_or_else(|| bad(1, "task"))?;
        let color = KeyColor::parse(field(2, "color")?).ok_or_else(|| bad(2, "color"))?;
        let kind = FeatureKind::parse(field(3, "kind")?).ok_or_else(|| bad(3, "kind"))?;
        let count: usize = field(4, "count")?.parse().map_err(|_| bad(4, "count"))?;
        let len: usize = field(5, "payload")?.parse().map_err(|_| bad(5, "payload length"))?;
        if kind != task.feature_kind() {
            return Err(Error::Format(format!(
                "{} datasets hold {} features, header says {}",
                task.as_str(),
                task.feature_kind().as_str(),
                kind.as_str()
            )));
        }
        let expected_len = payload_len(color, kind);
        if len != expected_len {
            return Err(Error::dims(
                format!("payload length {expected_len} for {} {}", color.as_str(), kind.as_str()),
                len,
            ));
        }
        let record_bytes = 12 + 4 * len;
        let body = &bytes[pos..];
        if body.len() != count * record_bytes {
            return Err(Error::Format(format!(
                "header promises {count} records ({} bytes), body has {} bytes",
                count * record_bytes,
                body.len()
            )));
        }
        let u32_at = |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]) as usize;
        let mut ds = Dataset::new(task, color);
        ds.records.reserve(count);
        for (i, rec) in body.chunks_exact(record_bytes).enumerate() {
            let payload = rec[12..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let feature = FeatureVector::new(u32_at(rec, 4), color, kind, u32_at(rec, 8), payload)?;
            ds.push(SampleRecord {
                feature,
                label: u32_at(rec, 0),
                task,
            })
            .map_err(|e| Error::Parse {
                offset: pos + i * record_bytes,
                message: e.to_string(),
            })?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(Task::Intensity, KeyColor::Black);
        for i in 0..n {
            let payload = (0..2000).map(|_| rng.gen::<f32>()).collect();
            let feature = FeatureVector::new(rng.gen_range(0..36), KeyColor::Black, FeatureKind::Stack5, i, payload).unwrap();
            ds.push(SampleRecord {
                feature,
                label: rng.gen_range(0..5),
                task: Task::Intensity,
            })
            .unwrap();
        }
        ds
    }

    #[test]
    fn round_trip() {
        let ds = random_dataset(100, 1);
        let bytes = ds.encode();
        let back = Dataset::decode(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn truncated_body_rejected() {
        let bytes = random_dataset(3, 2).encode();
        assert!(Dataset::decode(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn wrong_payload_header_rejected() {
        let bytes = random_dataset(1, 3).encode();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 8012]).replace("payload 2000", "payload 400");
        assert!(Dataset::decode(text.as_bytes()).is_err());
    }

    #[test]
    fn mixed_records_refused() {
        let mut ds = Dataset::new(Task::OnOff, KeyColor::White);
        let f = FeatureVector::new(0, KeyColor::Black, FeatureKind::Single, 0, vec![0.0; 400]).unwrap();
        assert!(ds
            .push(SampleRecord {
                feature: f,
                label: 0,
                task: Task::OnOff
            })
            .is_err());
    }

    #[test]
    fn stats_count_labels() {
        let ds = random_dataset(50, 4);
        let s = ds.stats();
        assert_eq!(s.total(), 50);
        assert_eq!(s.black.len(), 5);
        assert!(s.white.iter().all(|&c| c == 0));
        let mut reported = DatasetStats::new(5);
        reported.black = vec![319, 1305, 5742, 8216, 1065];
        assert_eq!(reported.total(), 16_647);
    }
}
