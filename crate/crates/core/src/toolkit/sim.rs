//! Simulated detection and pose modules driven by ground-truth traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::scene::{EntityId, EntityKind, FrameStamp, ModuleId};
use crate::toolkit::{
    DetectionBox, DetectionOutput, HumanPose, ModuleOutput, ModuleSpec, OutputKind, PerceptionModule,
    PoseOutput, TraceFrame,
};

/// Ids handed to false-positive boxes start here.
pub const FALSE_POSITIVE_ID_BASE: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    pub box_std_px: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
    pub score: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            box_std_px: 1.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            score: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNoise {
    pub keypoint_std_px: f64,
    /// Noise-free confidence is `1 - floor_margin`.
    pub floor_margin: f64,
    /// Half-width of the confidence spread around the noise-free value.
    pub confidence_spread: f64,
    /// Shape of the symmetric Beta profile the spread is drawn from.
    pub beta_shape: f64,
}

impl Default for PoseNoise {
    fn default() -> Self {
        Self {
            keypoint_std_px: 1.0,
            floor_margin: 0.2,
            confidence_spread: 0.05,
            beta_shape: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub detection: DetectionNoise,
    pub pose: PoseNoise,
}

impl NoiseConfig {
    /// No perturbation at all; pose confidence stays at `1 - floor_margin`.
    pub fn zero() -> Self {
        Self {
            detection: DetectionNoise {
                box_std_px: 0.0,
                ..DetectionNoise::default()
            },
            pose: PoseNoise {
                keypoint_std_px: 0.0,
                confidence_spread: 0.0,
                ..PoseNoise::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.detection;
        let p = &self.pose;
        let probs = [d.miss_rate, d.false_positive_rate];
        if probs.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(structural("miss and false positive rates must lie in [0, 1]"));
        }
        if !(d.box_std_px >= 0.0) || !(p.keypoint_std_px >= 0.0) || !(p.confidence_spread >= 0.0) {
            return Err(structural("noise deviations must be non-negative"));
        }
        if !(d.score > 0.0 && d.score <= 1.0) {
            return Err(structural("detection score must lie in (0, 1]"));
        }
        if !(p.floor_margin >= 0.0 && p.floor_margin < 1.0) {
            return Err(structural("floor_margin must lie in [0, 1)"));
        }
        if !(p.beta_shape > 0.0) {
            return Err(structural("beta_shape must be positive"));
        }
        Ok(())
    }
}

fn module_code(m: &ModuleId) -> u64 {
    // FNV-1a over the module name: stable across builds and platforms
    m.as_str()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent stream for one (seed, module, frame) triple.
pub fn stream_rng(seed: u64, module: &ModuleId, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ module_code(module).rotate_left(17));
    rng.set_stream(frame);
    rng
}

fn gaussian(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("positive std"))
}

#[derive(Debug, Clone)]
pub struct SimulatedDetection {
    pub spec: ModuleSpec,
    pub noise: DetectionNoise,
    pub seed: u64,
}

impl SimulatedDetection {
    pub fn new(inference_ms: f64, noise: DetectionNoise, seed: u64) -> Result<Self> {
        Ok(Self {
            spec: ModuleSpec::new(ModuleId::Detection, inference_ms, OutputKind::Detections)?,
            noise,
            seed,
        })
    }

    pub fn simulate(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> DetectionOutput {
        let mut rng = stream_rng(self.seed, &self.spec.id, frame.stamp.index);
        let n = gaussian(self.noise.box_std_px);
        let jitter = |rng: &mut ChaCha8Rng| n.map_or(0.0, |d| d.sample(rng));
        let mut boxes = Vec::new();
        for e in frame.entities.iter().filter(|e| e.kind != EntityKind::Background) {
            let noise = [jitter(&mut rng), jitter(&mut rng), jitter(&mut rng), jitter(&mut rng)];
            let missed = self.noise.miss_rate > 0.0 && rng.random::<f64>() < self.noise.miss_rate;
            if missed {
                continue;
            }
            let (cx, cy) = e.region.center();
            boxes.push(DetectionBox {
                entity_id: e.id,
                x_c: cx + noise[0],
                y_c: cy + noise[1],
                w: (e.region.w + noise[2]).max(1.0),
                h: (e.region.h + noise[3]).max(1.0),
                score: self.noise.score,
            });
        }
        if self.noise.false_positive_rate > 0.0 && rng.random::<f64>() < self.noise.false_positive_rate {
            let w = rng.random_range(10.0..60.0);
            let h = rng.random_range(10.0..60.0);
            boxes.push(DetectionBox {
                entity_id: EntityId(FALSE_POSITIVE_ID_BASE + frame.stamp.index),
                x_c: rng.random_range(w..640.0 - w),
                y_c: rng.random_range(h..480.0 - h),
                w,
                h,
                score: self.noise.score * 0.5,
            });
        }
        DetectionOutput {
            stamp_issued: issued,
            stamp_ready: ready,
            boxes,
        }
    }
}

impl PerceptionModule for SimulatedDetection {
    fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    fn infer(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> Result<ModuleOutput> {
        Ok(ModuleOutput::Detection(self.simulate(frame, issued, ready)))
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPose {
    pub spec: ModuleSpec,
    pub noise: PoseNoise,
    pub seed: u64,
}

impl SimulatedPose {
    pub fn new(inference_ms: f64, noise: PoseNoise, seed: u64) -> Result<Self> {
        Ok(Self {
            spec: ModuleSpec::new(ModuleId::Pose, inference_ms, OutputKind::Keypoints)?,
            noise,
            seed,
        })
    }

    pub fn simulate(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> PoseOutput {
        let mut rng = stream_rng(self.seed, &self.spec.id, frame.stamp.index);
        let n = gaussian(self.noise.keypoint_std_px);
        let beta = (self.noise.confidence_spread > 0.0)
            .then(|| Beta::new(self.noise.beta_shape, self.noise.beta_shape).expect("positive shape"));
        let centre = 1.0 - self.noise.floor_margin;
        let mut per_human = Vec::new();
        for e in frame.entities.iter().filter(|e| e.kind == EntityKind::Human) {
            let Some(kps) = &e.keypoints else { continue };
            let keypoints = kps
                .iter()
                .map(|[x, y]| {
                    let dx = n.map_or(0.0, |d| d.sample(&mut rng));
                    let dy = n.map_or(0.0, |d| d.sample(&mut rng));
                    let spread = beta.map_or(0.0, |b| 2.0 * b.sample(&mut rng) - 1.0);
                    let conf = (centre + self.noise.confidence_spread * spread).clamp(1e-3, 1.0);
                    [x + dx, y + dy, conf]
                })
                .collect();
            per_human.push(HumanPose {
                entity_id: e.id,
                keypoints,
            });
        }
        PoseOutput {
            stamp_issued: issued,
            stamp_ready: ready,
            per_human,
        }
    }
}

impl PerceptionModule for SimulatedPose {
    fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    fn infer(&self, frame: &TraceFrame, issued: FrameStamp, ready: FrameStamp) -> Result<ModuleOutput> {
        Ok(ModuleOutput::Pose(self.simulate(frame, issued, ready)))
    }
}
