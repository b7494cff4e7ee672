//! JSON Lines container for scene traces and replay logs.
//!
//! Every file starts with a header record followed by one record per line.
//! Records carry a `record` tag: `header`, `frame`, or `output`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::change::{ChangeObservation, Raster};
use crate::error::{Error, Result};
use crate::scene::{EntityId, EntityKind, FrameStamp, ModuleId, PatchRegion};
use crate::toolkit::ModuleOutput;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Trace,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub kind: ContainerKind,
    pub version: u32,
    pub frame_period_ms: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub keypoint_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TraceHeader {
    pub fn new(kind: ContainerKind, frame_period_ms: f64, frame_width: f64, frame_height: f64) -> Self {
        Self {
            kind,
            version: FORMAT_VERSION,
            frame_period_ms,
            frame_width,
            frame_height,
            keypoint_count: 133,
            archetype: None,
            seed: None,
        }
    }

    pub fn frame_region(&self) -> PatchRegion {
        PatchRegion {
            x: 0.0,
            y: 0.0,
            w: self.frame_width,
            h: self.frame_height,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Trace(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if !(self.frame_period_ms > 0.0) || !(self.frame_width > 0.0) || !(self.frame_height > 0.0) {
            return Err(Error::Trace("header needs positive frame period and size".into()));
        }
        if self.keypoint_count == 0 {
            return Err(Error::Trace("header keypoint_count must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth entity in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub region: PatchRegion,
    pub relevance: f64,
    /// `[x, y]` per keypoint; humans only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TraceEvent {
    Enter { id: EntityId },
    Exit { id: EntityId },
}

/// Change-detection input for a frame: precomputed statistics or a raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ChangeData {
    Stats(ChangeObservation),
    Raster {
        width: usize,
        height: usize,
        /// Base64 of row-major 8-bit RGB triples.
        rgb: String,
    },
}

impl ChangeData {
    pub fn from_raster(r: &Raster) -> Self {
        let bytes: Vec<u8> = r.rgb.iter().flat_map(|p| p.iter().copied()).collect();
        ChangeData::Raster {
            width: r.width,
            height: r.height,
            rgb: B64.encode(bytes),
        }
    }

    pub fn decode_raster(&self) -> Result<Option<Raster>> {
        let ChangeData::Raster { width, height, rgb } = self else {
            return Ok(None);
        };
        let bytes = B64
            .decode(rgb)
            .map_err(|e| Error::Trace(format!("bad raster encoding: {e}")))?;
        if bytes.len() != width * height * 3 {
            return Err(Error::Trace(format!(
                "raster holds {} bytes, expected {}",
                bytes.len(),
                width * height * 3
            )));
        }
        let rgb = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Some(Raster { width: *width, height: *height, rgb }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFrame {
    pub stamp: FrameStamp,
    pub entities: Vec<TraceEntity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<ChangeData>,
}

impl TraceFrame {
    pub fn entity(&self, id: EntityId) -> Option<&TraceEntity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// One output recorded for replay, keyed by module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub module: ModuleId,
    pub output: ModuleOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum Record {
    Header(TraceHeader),
    Frame(TraceFrame),
    Output(OutputRecord),
}

pub(crate) fn read_records(path: &Path) -> Result<(TraceHeader, Vec<Record>)> {
    let file = File::open(path)
        .map_err(|e| Error::Trace(format!("cannot open {}: {e}", path.display())))?;
    let mut header = None;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Trace(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match (rec, &header) {
            (Record::Header(h), None) => header = Some(h),
            (Record::Header(_), Some(_)) => {
                return Err(Error::Trace(format!("{}:{}: second header record", path.display(), n + 1)))
            }
            (_, None) => {
                return Err(Error::Trace(format!("{}: first record must be a header", path.display())))
            }
            (rec, Some(_)) => records.push(rec),
        }
    }
    let header = header.ok_or_else(|| Error::Trace(format!("{}: empty file", path.display())))?;
    header.validate()?;
    Ok((header, records))
}

pub(crate) fn write_records(
    path: &Path,
    header: &TraceHeader,
    records: impl Iterator<Item = Record>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &Record::Header(header.clone()))?;
    out.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub frames: Vec<TraceFrame>,
}

impl Trace {
    pub fn new(header: TraceHeader, frames: Vec<TraceFrame>) -> Result<Self> {
        let t = Self { header, frames };
        t.validate()?;
        Ok(t)
    }

    pub fn period_ms(&self) -> f64 {
        self.header.frame_period_ms
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.header.kind != ContainerKind::Trace {
            return Err(Error::Trace("container is not a trace".into()));
        }
        let mut kinds: BTreeMap<EntityId, EntityKind> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            let expected = FrameStamp::at(i as u64, self.header.frame_period_ms);
            if f.stamp.index != i as u64 || (f.stamp.time_ms - expected.time_ms).abs() > 1e-6 {
                return Err(Error::Trace(format!(
                    "frame {i} carries stamp {:?}, expected {:?}",
                    f.stamp, expected
                )));
            }
            let mut ids = BTreeSet::new();
            for e in &f.entities {
                if !ids.insert(e.id) {
                    return Err(Error::Trace(format!("frame {i}: duplicate entity {}", e.id)));
                }
                if !(0.0..=1.0).contains(&e.relevance) {
                    return Err(Error::Trace(format!("frame {i}: entity {} relevance out of range", e.id)));
                }
                if !(e.region.w > 0.0 && e.region.h > 0.0) {
                    return Err(Error::Trace(format!("frame {i}: entity {} has an empty region", e.id)));
                }
                match (&e.keypoints, e.kind) {
                    (Some(k), EntityKind::Human) if k.len() != self.header.keypoint_count => {
                        return Err(Error::Trace(format!(
                            "frame {i}: human {} has {} keypoints, expected {}",
                            e.id,
                            k.len(),
                            self.header.keypoint_count
                        )))
                    }
                    (Some(_), kind) if kind != EntityKind::Human => {
                        return Err(Error::Trace(format!("frame {i}: non-human {} has keypoints", e.id)))
                    }
                    _ => {}
                }
                if let Some(prev) = kinds.insert(e.id, e.kind) {
                    if prev != e.kind {
                        return Err(Error::Trace(format!("frame {i}: entity {} changed kind", e.id)));
                    }
                }
            }
            if let Some(c) = &f.change {
                c.decode_raster()?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, records) = read_records(path)?;
        let mut frames = Vec::with_capacity(records.len());
        for rec in records {
            match rec {
                Record::Frame(f) => frames.push(f),
                _ => return Err(Error::Trace(format!("{}: trace holds a non-frame record", path.display()))),
            }
        }
        Trace::new(header, frames)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_records(path, &self.header, self.frames.iter().cloned().map(Record::Frame))
    }
}
