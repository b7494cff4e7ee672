//! Evaluation: ground-truth keyframes, activation recall, keyframe accuracy and latency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{PolicyKind, RunLog};
use crate::error::{Error, Result};
use crate::scene::{EntityId, ModuleId};
use crate::toolkit::ModuleOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyDenominator {
    /// Frames on which at least one module started an inference.
    ActivatedFrames,
    AllFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Box center displacement in pixels that makes a frame require detection.
    pub tau_box: f64,
    /// Keypoint displacement in pixels that makes a frame require pose.
    pub tau_kp: f64,
    /// Entities at or below this relevance never trigger on motion.
    pub relevance_threshold: f64,
    pub latency_denominator: LatencyDenominator,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tau_box: 10.0,
            tau_kp: 15.0,
            relevance_threshold: 0.0,
            latency_denominator: LatencyDenominator::ActivatedFrames,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_box", self.tau_box), ("tau_kp", self.tau_kp)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(Error::Config("relevance_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Frames on which each module genuinely needed to run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruthKeyframes {
    pub frames: u64,
    pub required: BTreeMap<ModuleId, BTreeSet<u64>>,
}

impl GroundTruthKeyframes {
    pub fn get(&self, m: &ModuleId) -> Option<&BTreeSet<u64>> {
        self.required.get(m)
    }
}

fn center_moved(a: (f64, f64), b: (f64, f64), tau: f64) -> bool {
    (a.0 - b.0).hypot(a.1 - b.1) > tau
}

/// Labels required frames from an every-frame run with instant outputs.
pub fn extract_keyframes(offline: &RunLog, cfg: &MetricsConfig) -> Result<GroundTruthKeyframes> {
    if offline.header.policy != PolicyKind::Offline {
        return Err(Error::Structural(format!(
            "keyframes come from an offline run, got a {} run",
            offline.header.policy
        )));
    }
    let mut det_required = BTreeSet::new();
    let mut pose_required = BTreeSet::new();
    let mut det_prev: Option<BTreeSet<EntityId>> = None;
    let mut det_ref: BTreeMap<EntityId, (f64, f64)> = BTreeMap::new();
    // An empty first pose output requires nothing.
    let mut pose_prev: Option<BTreeSet<EntityId>> = Some(BTreeSet::new());
    let mut pose_ref: BTreeMap<EntityId, Vec<[f64; 3]>> = BTreeMap::new();

    for rec in &offline.frames {
        let k = rec.stamp().index;
        let relevant = |id: &EntityId| rec.relevance.get(id).copied().unwrap_or(0.0) > cfg.relevance_threshold;
        for applied in &rec.applied {
            match &applied.output {
                ModuleOutput::Detection(d) => {
                    let centers: BTreeMap<EntityId, (f64, f64)> =
                        d.boxes.iter().map(|b| (b.entity_id, (b.x_c, b.y_c))).collect();
                    let ids: BTreeSet<EntityId> = centers.keys().copied().collect();
                    let set_changed = det_prev.as_ref() != Some(&ids);
                    let moved = centers.iter().any(|(id, c)| {
                        relevant(id) && det_ref.get(id).is_some_and(|r| center_moved(*c, *r, cfg.tau_box))
                    });
                    if set_changed || moved {
                        det_required.insert(k);
                        det_ref = centers;
                    }
                    det_prev = Some(ids);
                }
                ModuleOutput::Pose(p) => {
                    let poses: BTreeMap<EntityId, Vec<[f64; 3]>> =
                        p.per_human.iter().map(|h| (h.entity_id, h.keypoints.clone())).collect();
                    let ids: BTreeSet<EntityId> = poses.keys().copied().collect();
                    let set_changed = pose_prev.as_ref() != Some(&ids);
                    let moved = poses.iter().any(|(id, kps)| {
                        relevant(id)
                            && pose_ref.get(id).is_some_and(|r| {
                                kps.iter()
                                    .zip(r)
                                    .any(|(a, b)| center_moved((a[0], a[1]), (b[0], b[1]), cfg.tau_kp))
                            })
                    });
                    if set_changed || moved {
                        pose_required.insert(k);
                        pose_ref = poses;
                    }
                    pose_prev = Some(ids);
                }
            }
        }
    }
    Ok(GroundTruthKeyframes {
        frames: offline.frames.len() as u64,
        required: BTreeMap::from([(ModuleId::Detection, det_required), (ModuleId::Pose, pose_required)]),
    })
}

/// A count-backed ratio; `value` is `None` when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        debug_assert!(numerator <= denominator);
        let value = (denominator > 0).then(|| numerator as f64 / denominator as f64);
        Self { numerator, denominator, value }
    }
}

fn check_cover(run: &RunLog, gt: &GroundTruthKeyframes) -> Result<()> {
    if run.frames.len() as u64 != gt.frames {
        return Err(Error::Structural(format!(
            "run has {} frames but keyframes cover {}",
            run.frames.len(),
            gt.frames
        )));
    }
    Ok(())
}

fn count_required(
    run: &RunLog,
    gt: &GroundTruthKeyframes,
    hit: impl Fn(&crate::engine::FrameRecord, &ModuleId) -> bool,
) -> Result<BTreeMap<ModuleId, Ratio>> {
    check_cover(run, gt)?;
    Ok(gt
        .required
        .iter()
        .map(|(m, frames)| {
            let n = frames
                .iter()
                .filter(|k| run.frames.get(**k as usize).is_some_and(|r| hit(r, m)))
                .count() as u64;
            (m.clone(), Ratio::new(n, frames.len() as u64))
        })
        .collect())
}

/// Share of required frames on which the module actually started an inference.
pub fn activation_recall(run: &RunLog, gt: &GroundTruthKeyframes) -> Result<BTreeMap<ModuleId, Ratio>> {
    count_required(run, gt, |r, m| r.started(m))
}

/// Share of required frames on which the policy decided to activate, executed or not.
pub fn keyframe_accuracy(run: &RunLog, gt: &GroundTruthKeyframes) -> Result<BTreeMap<ModuleId, Ratio>> {
    count_required(run, gt, |r, m| r.requested(m) || r.started(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub scheduling_ms: f64,
    pub inference_ms: f64,
    pub frames: u64,
    pub denominator: LatencyDenominator,
    pub value_ms: Option<f64>,
}

pub fn latency(run: &RunLog, denominator: LatencyDenominator) -> Latency {
    let mut scheduling_ms = 0.0;
    let mut inference_ms = 0.0;
    let mut activated = 0u64;
    for rec in &run.frames {
        scheduling_ms += rec.overhead_charged_ms;
        let mut any = false;
        for (m, on) in &rec.started {
            if *on {
                any = true;
                inference_ms += run.header.inference_ms.get(m).copied().unwrap_or(0.0);
            }
        }
        activated += any as u64;
    }
    let frames = match denominator {
        LatencyDenominator::ActivatedFrames => activated,
        LatencyDenominator::AllFrames => run.frames.len() as u64,
    };
    let value_ms = (frames > 0).then(|| (scheduling_ms + inference_ms) / frames as f64);
    Latency { scheduling_ms, inference_ms, frames, denominator, value_ms }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: PolicyKind,
    pub frames: u64,
    pub latency: Latency,
    pub recall: BTreeMap<ModuleId, Ratio>,
    pub keyframe_accuracy: BTreeMap<ModuleId, Ratio>,
    /// Inferences started per module.
    pub activations: BTreeMap<ModuleId, u64>,
    /// Requests dropped because the module was busy.
    pub dropped: BTreeMap<ModuleId, u64>,
}

pub fn report(run: &RunLog, gt: &GroundTruthKeyframes, cfg: &MetricsConfig) -> Result<MetricsReport> {
    let mut activations: BTreeMap<ModuleId, u64> = BTreeMap::new();
    let mut dropped: BTreeMap<ModuleId, u64> = BTreeMap::new();
    for rec in &run.frames {
        for (m, on) in &rec.started {
            *activations.entry(m.clone()).or_default() += *on as u64;
        }
        for (m, on) in &rec.dropped {
            *dropped.entry(m.clone()).or_default() += *on as u64;
        }
    }
    Ok(MetricsReport {
        policy: run.header.policy,
        frames: run.frames.len() as u64,
        latency: latency(run, cfg.latency_denominator),
        recall: activation_recall(run, gt)?,
        keyframe_accuracy: keyframe_accuracy(run, gt)?,
        activations,
        dropped,
    })
}

fn fmt_ratio(r: Option<&Ratio>) -> String {
    match r.and_then(|r| r.value) {
        Some(v) => format!("{v:.2}"),
        None => "undef".into(),
    }
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".into(), |v| format!("{v:.2}"))
}

/// Percent change of `v` relative to `base`.
pub fn percent_delta(v: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (v, base) {
        (Some(v), Some(b)) if b != 0.0 => Some((v - b) / b * 100.0),
        _ => None,
    }
}

/// Aligned table with one column per report; deltas are against the first parallel column.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let base = reports
        .iter()
        .find(|r| r.policy == PolicyKind::Parallel)
        .and_then(|r| r.latency.value_ms);
    let modules: BTreeSet<ModuleId> = reports.iter().flat_map(|r| r.recall.keys().cloned()).collect();

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push(("latency (ms)".into(), reports.iter().map(|r| fmt_ms(r.latency.value_ms)).collect()));
    rows.push((
        "latency vs parallel".into(),
        reports
            .iter()
            .map(|r| percent_delta(r.latency.value_ms, base).map_or_else(|| "n/a".into(), |d| format!("{d:+.2}%")))
            .collect(),
    ));
    for m in &modules {
        rows.push((format!("{m} recall"), reports.iter().map(|r| fmt_ratio(r.recall.get(m))).collect()));
    }
    for m in &modules {
        rows.push((
            format!("{m} keyframe acc"),
            reports.iter().map(|r| fmt_ratio(r.keyframe_accuracy.get(m))).collect(),
        ));
    }
    for m in &modules {
        rows.push((
            format!("{m} activations"),
            reports
                .iter()
                .map(|r| format!("{}/{}", r.activations.get(m).copied().unwrap_or(0), r.frames))
                .collect(),
        ));
    }

    let headers: Vec<String> = reports.iter().map(|r| r.policy.to_string()).collect();
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let col_w: Vec<usize> = (0..reports.len())
        .map(|i| rows.iter().map(|(_, c)| c[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "metric");
    for (h, w) in headers.iter().zip(&col_w) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (label, cells) in &rows {
        let _ = write!(out, "{label:<label_w$}");
        for (c, w) in cells.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_undefined_without_denominator() {
        assert_eq!(Ratio::new(0, 0).value, None);
        assert_eq!(Ratio::new(8, 10).value, Some(0.8));
    }

    #[test]
    fn delta_against_itself_is_zero() {
        assert_eq!(percent_delta(Some(95.0), Some(95.0)), Some(0.0));
        assert_eq!(percent_delta(Some(1.0), None), None);
    }
}
