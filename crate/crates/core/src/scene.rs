//! Shared domain types: frame stamps, patch regions, entities and module ids.
//!
//! Everything here is an immutable value once constructed. Relevance values
//! arrive from upstream (trace or user input) and are never computed here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{structural, Result};

/// Default frame period for a 30 FPS stream.
pub const DEFAULT_FRAME_PERIOD_MS: f64 = 1000.0 / 30.0;

/// A frame number together with its virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStamp {
    pub index: u64,
    pub time_ms: f64,
}

impl FrameStamp {
    /// Stamp for `index` on a clock ticking every `period_ms`.
    pub fn at(index: u64, period_ms: f64) -> Self {
        debug_assert!(period_ms > 0.0);
        Self {
            index,
            time_ms: index as f64 * period_ms,
        }
    }

    pub fn next(&self, period_ms: f64) -> Self {
        Self::at(self.index + 1, period_ms)
    }
}

/// Axis-aligned patch, top-left anchored, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PatchRegion {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(structural(format!(
                "patch region needs finite origin and positive size, got ({x}, {y}, {w}, {h})"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// True when this region lies entirely inside `bounds`.
    pub fn within(&self, bounds: &PatchRegion) -> bool {
        self.x >= bounds.x
            && self.y >= bounds.y
            && self.x + self.w <= bounds.x + bounds.w
            && self.y + self.h <= bounds.y + bounds.h
    }

    /// Measurement vector (x_c, y_c, w, h) used by the tracker.
    pub fn to_xywh(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w, self.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Background,
    Object,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionStatus {
    Moving,
    Stationary,
}

/// Stable entity identifier, supplied by the trace.
///
/// Deserializes from a number or a decimal string, since JSON map keys are strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = EntityId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an unsigned integer entity id")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<EntityId, E> {
                Ok(EntityId(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<EntityId, E> {
                u64::try_from(v).map(EntityId).map_err(|_| E::custom("negative entity id"))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<EntityId, E> {
                v.parse().map(EntityId).map_err(|_| E::custom(format!("bad entity id `{v}`")))
            }
        }
        d.deserialize_any(V)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identity of a schedulable perception module.
///
/// Serialized as a plain string: `"yolo"`, `"pose"`, or any custom name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModuleId {
    Detection,
    Pose,
    Custom(String),
}

impl ModuleId {
    pub fn as_str(&self) -> &str {
        match self {
            ModuleId::Detection => "yolo",
            ModuleId::Pose => "pose",
            ModuleId::Custom(name) => name,
        }
    }

    /// The two modules shipped with the toolkit.
    pub fn builtins() -> [ModuleId; 2] {
        [ModuleId::Detection, ModuleId::Pose]
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "yolo" => ModuleId::Detection,
            "pose" => ModuleId::Pose,
            other => ModuleId::Custom(other.to_string()),
        })
    }
}

impl Serialize for ModuleId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModuleId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().expect("infallible"))
    }
}

/// One tracked scene element as the scheduler currently understands it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub region: PatchRegion,
    pub motion: MotionStatus,
    pub relevance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoint_confidences: Option<Vec<f64>>,
}

impl Entity {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.relevance) {
            return Err(structural(format!(
                "entity {} relevance {} outside [0, 1]",
                self.id, self.relevance
            )));
        }
        if let Some(confs) = &self.keypoint_confidences {
            if self.kind != EntityKind::Human {
                return Err(structural(format!(
                    "entity {} carries keypoint confidences but is not human",
                    self.id
                )));
            }
            if let Some(bad) = confs.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
                return Err(structural(format!(
                    "entity {} keypoint confidence {bad} outside (0, 1]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame scene snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub stamp: FrameStamp,
    pub entities: Vec<Entity>,
    pub background_region: PatchRegion,
}

impl SceneState {
    pub fn new(
        stamp: FrameStamp,
        entities: Vec<Entity>,
        background_region: PatchRegion,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entities {
            e.validate()?;
            if !seen.insert(e.id) {
                return Err(structural(format!("duplicate entity id {} in frame", e.id)));
            }
        }
        Ok(Self {
            stamp,
            entities,
            background_region,
        })
    }

    pub fn empty(stamp: FrameStamp, background_region: PatchRegion) -> Self {
        Self {
            stamp,
            entities: Vec::new(),
            background_region,
        }
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Holds the previous frame's result forward to `stamp`.
    ///
    /// Only geometry changes, and only for ids present in `predictions`.
    pub fn carry_forward(
        &self,
        stamp: FrameStamp,
        predictions: &BTreeMap<EntityId, PatchRegion>,
    ) -> SceneState {
        let entities = self
            .entities
            .iter()
            .map(|e| {
                let mut next = e.clone();
                if let Some(region) = predictions.get(&e.id) {
                    next.region = *region;
                }
                next
            })
            .collect();
        SceneState {
            stamp,
            entities,
            background_region: self.background_region,
        }
    }
}
