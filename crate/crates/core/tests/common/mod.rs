#![allow(dead_code)]

use std::collections::BTreeMap;

use percept_sched::config::RunConfig;
use percept_sched::engine::{FrameRecord, RunLog};
use percept_sched::scene::{EntityId, EntityKind, FrameStamp, ModuleId, PatchRegion};
use percept_sched::toolkit::trace::ContainerKind;
use percept_sched::toolkit::{NoiseConfig, Trace, TraceEntity, TraceFrame, TraceHeader};

pub const P: f64 = 1000.0 / 30.0;
pub const KEYPOINTS: usize = 133;

pub fn object(id: u64, cx: f64, cy: f64) -> TraceEntity {
    TraceEntity {
        id: EntityId(id),
        kind: EntityKind::Object,
        region: PatchRegion::from_center(cx, cy, 40.0, 40.0).unwrap(),
        relevance: 1.0,
        keypoints: None,
    }
}

/// A 60x160 person whose keypoints sit on a fixed grid around the box center.
pub fn human(id: u64, cx: f64, cy: f64) -> TraceEntity {
    let keypoints = (0..KEYPOINTS)
        .map(|i| {
            let col = (i % 7) as f64 - 3.0;
            let row = (i / 7) as f64 - 9.5;
            [cx + 8.0 * col, cy + 8.0 * row]
        })
        .collect();
    TraceEntity {
        id: EntityId(id),
        kind: EntityKind::Human,
        region: PatchRegion::from_center(cx, cy, 60.0, 160.0).unwrap(),
        relevance: 1.0,
        keypoints: Some(keypoints),
    }
}

pub fn trace_of(frames: Vec<Vec<TraceEntity>>) -> Trace {
    let header = TraceHeader::new(ContainerKind::Trace, P, 640.0, 480.0);
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(i, entities)| TraceFrame {
            stamp: FrameStamp::at(i as u64, P),
            entities,
            events: Vec::new(),
            change: None,
        })
        .collect();
    Trace::new(header, frames).unwrap()
}

/// The same entities on every frame.
pub fn still_trace(n: usize, entities: Vec<TraceEntity>) -> Trace {
    trace_of(vec![entities; n])
}

pub fn zero_noise_config() -> RunConfig {
    let mut cfg = RunConfig::recommended();
    cfg.toolkit.noise = NoiseConfig::zero();
    cfg
}

pub fn started_frames(log: &RunLog, m: &ModuleId) -> Vec<u64> {
    log.frames.iter().filter(|r| r.started(m)).map(|r| r.stamp().index).collect()
}

/// A bare record for hand-built run logs.
pub fn record(index: u64, requested: &[ModuleId], started: &[ModuleId]) -> FrameRecord {
    use percept_sched::scheduler::ActivationDecision;
    let all = ModuleId::builtins();
    let flags = |set: &[ModuleId]| -> BTreeMap<ModuleId, bool> {
        all.iter().map(|m| (m.clone(), set.contains(m))).collect()
    };
    FrameRecord {
        decision: ActivationDecision {
            stamp: FrameStamp::at(index, P),
            activations: flags(requested),
            rewards: BTreeMap::new(),
            decision_time_ms: 0.0,
        },
        started: flags(started),
        dropped: all.iter().map(|m| (m.clone(), requested.contains(m) && !started.contains(m))).collect(),
        inflight: false,
        overhead_charged_ms: 0.0,
        composition_trigger: false,
        active_tracks: 0,
        relevance: BTreeMap::new(),
        applied: Vec::new(),
    }
}
