//! Replay of pre-recorded module outputs keyed by issue frame.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scene::{FrameStamp, ModuleId};
use crate::toolkit::trace::{read_records, write_records, ContainerKind, OutputRecord, Record, TraceHeader};
use crate::toolkit::{ModuleOutput, ModuleSpec, PerceptionModule, TraceFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub header: TraceHeader,
    outputs: BTreeMap<ModuleId, BTreeMap<u64, ModuleOutput>>,
}

impl ReplayLog {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header: TraceHeader {
                kind: ContainerKind::Replay,
                ..header
            },
            outputs: BTreeMap::new(),
        }
    }

    /// Adds an output under its issue frame; a later insert for the same frame wins.
    pub fn insert(&mut self, module: ModuleId, output: ModuleOutput) {
        self.outputs
            .entry(module)
            .or_default()
            .insert(output.stamp_issued().index, output);
    }

    pub fn modules(&self) -> impl Iterator<Item = &ModuleId> {
        self.outputs.keys()
    }

    pub fn lookup(&self, module: &ModuleId, stamp: FrameStamp) -> Result<&ModuleOutput> {
        let records = self
            .outputs
            .get(module)
            .ok_or_else(|| Error::UnknownModule(module.to_string()))?;
        if let Some(out) = records.get(&stamp.index) {
            return Ok(out);
        }
        let below = records.range(..stamp.index).next_back().map(|(k, _)| *k);
        let above = records.range(stamp.index..).next().map(|(k, _)| *k);
        let nearest = match (below, above) {
            (Some(b), Some(a)) => Some(if stamp.index - b <= a - stamp.index { b } else { a }),
            (b, a) => b.or(a),
        };
        Err(Error::MissingFrame {
            module: module.to_string(),
            requested: stamp.index,
            nearest,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, records) = read_records(path)?;
        if header.kind != ContainerKind::Replay {
            return Err(Error::Trace(format!("{} is not a replay log", path.display())));
        }
        let mut log = ReplayLog::new(header);
        for rec in records {
            match rec {
                Record::Output(OutputRecord { module, output }) => log.insert(module, output),
                _ => {
                    return Err(Error::Trace(format!(
                        "{}: replay log holds a non-output record",
                        path.display()
                    )))
                }
            }
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let records = self.outputs.iter().flat_map(|(m, outs)| {
            outs.values().map(move |o| {
                Record::Output(OutputRecord {
                    module: m.clone(),
                    output: o.clone(),
                })
            })
        });
        write_records(path, &self.header, records)
    }
}

/// Serves recorded outputs through the module interface.
#[derive(Debug, Clone)]
pub struct ReplayModule {
    pub spec: ModuleSpec,
    pub log: Arc<ReplayLog>,
}

impl PerceptionModule for ReplayModule {
    fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    fn infer(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> Result<ModuleOutput> {
        let out = self.log.lookup(&self.spec.id, frame.stamp)?;
        if out.kind() != self.spec.output_kind {
            return Err(Error::Trace(format!(
                "replayed output for {} has kind {:?}, expected {:?}",
                self.spec.id,
                out.kind(),
                self.spec.output_kind
            )));
        }
        Ok(out.clone().with_stamps(issued, ready))
    }
}
