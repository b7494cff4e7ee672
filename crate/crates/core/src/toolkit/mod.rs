//! Perception toolkit: a uniform module interface with simulated and replay backends.

pub mod replay;
pub mod sim;
pub mod synth;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::scene::{EntityId, FrameStamp, ModuleId};

pub use replay::{ReplayLog, ReplayModule};
pub use sim::{DetectionNoise, NoiseConfig, PoseNoise, SimulatedDetection, SimulatedPose};
pub use trace::{ChangeData, Trace, TraceEntity, TraceEvent, TraceFrame, TraceHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Detections,
    Keypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub id: ModuleId,
    pub inference_ms: f64,
    pub output_kind: OutputKind,
}

impl ModuleSpec {
    pub fn new(id: ModuleId, inference_ms: f64, output_kind: OutputKind) -> Result<Self> {
        if !(inference_ms >= 0.0 && inference_ms.is_finite()) {
            return Err(structural(format!("module {id} needs a finite, non-negative inference time")));
        }
        Ok(Self { id, inference_ms, output_kind })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub entity_id: EntityId,
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn xywh(&self) -> [f64; 4] {
        [self.x_c, self.y_c, self.w, self.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub stamp_issued: FrameStamp,
    pub stamp_ready: FrameStamp,
    pub boxes: Vec<DetectionBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPose {
    pub entity_id: EntityId,
    /// `[x, y, confidence]` per keypoint.
    pub keypoints: Vec<[f64; 3]>,
}

impl HumanPose {
    pub fn confidences(&self) -> Vec<f64> {
        self.keypoints.iter().map(|k| k[2]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseOutput {
    pub stamp_issued: FrameStamp,
    pub stamp_ready: FrameStamp,
    pub per_human: Vec<HumanPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModuleOutput {
    Detection(DetectionOutput),
    Pose(PoseOutput),
}

impl ModuleOutput {
    pub fn stamp_issued(&self) -> FrameStamp {
        match self {
            ModuleOutput::Detection(d) => d.stamp_issued,
            ModuleOutput::Pose(p) => p.stamp_issued,
        }
    }

    pub fn stamp_ready(&self) -> FrameStamp {
        match self {
            ModuleOutput::Detection(d) => d.stamp_ready,
            ModuleOutput::Pose(p) => p.stamp_ready,
        }
    }

    pub fn kind(&self) -> OutputKind {
        match self {
            ModuleOutput::Detection(_) => OutputKind::Detections,
            ModuleOutput::Pose(_) => OutputKind::Keypoints,
        }
    }

    pub(crate) fn with_stamps(mut self, issued: FrameStamp, ready: FrameStamp) -> Self {
        match &mut self {
            ModuleOutput::Detection(d) => {
                d.stamp_issued = issued;
                d.stamp_ready = ready;
            }
            ModuleOutput::Pose(p) => {
                p.stamp_issued = issued;
                p.stamp_ready = ready;
            }
        }
        self
    }
}

/// A schedulable perception module.
///
/// Implementations must be pure functions of their inputs so runs stay reproducible.
pub trait PerceptionModule: Send + Sync {
    fn spec(&self) -> &ModuleSpec;

    /// Output for `frame`, issued at `issued` and visible at `ready`.
    fn infer(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> Result<ModuleOutput>;
}

/// First frame whose time is at or after `issued + inference_ms`.
pub fn ready_stamp(issued: FrameStamp, inference_ms: f64, period_ms: f64) -> FrameStamp {
    let done = issued.time_ms + inference_ms;
    let mut index = (done / period_ms).floor() as u64;
    // float guard: land on the first boundary at or after completion
    while FrameStamp::at(index, period_ms).time_ms < done - 1e-9 {
        index += 1;
    }
    while index > 0 && FrameStamp::at(index - 1, period_ms).time_ms >= done - 1e-9 {
        index -= 1;
    }
    FrameStamp::at(index.max(issued.index), period_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: f64 = 1000.0 / 30.0;

    #[test]
    fn ready_at_first_boundary_after_completion() {
        let s = FrameStamp::at(0, P);
        assert_eq!(ready_stamp(s, 15.0, P).index, 1);
        assert_eq!(ready_stamp(s, 80.0, P).index, 3);
        assert_eq!(ready_stamp(s, P, P).index, 1);
        assert_eq!(ready_stamp(FrameStamp::at(7, P), 2.0 * P, P).index, 9);
        assert_eq!(ready_stamp(FrameStamp::at(7, P), 1e-6, P).index, 8);
    }

    #[test]
    fn ready_invariant_holds() {
        for i in 0..500u64 {
            for c in [1.0, 15.0, 33.3, 33.4, 50.0, 80.0, 100.0, 250.0] {
                let s = FrameStamp::at(i, P);
                let r = ready_stamp(s, c, P);
                assert!(r.time_ms >= s.time_ms + c - 1e-9);
                assert!(r.time_ms - P < s.time_ms + c - 1e-9 || r.index == s.index);
            }
        }
    }

    #[test]
    fn spec_rejects_negative_or_infinite_time() {
        assert!(ModuleSpec::new(ModuleId::Detection, 0.0, OutputKind::Detections).is_ok());
        assert!(ModuleSpec::new(ModuleId::Detection, -1.0, OutputKind::Detections).is_err());
        assert!(ModuleSpec::new(ModuleId::Detection, f64::INFINITY, OutputKind::Detections).is_err());
    }
}
