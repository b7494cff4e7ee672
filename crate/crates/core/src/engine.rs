//! Virtual-time engine: advances frames, decides activations under a policy,
//! dispatches module inferences with latency and applies their outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::change::{composition_change_trigger, motion_status, observe_rasters, ChangeDetectConfig, ChangeObservation, Raster};
use crate::error::{structural, Error, Result};
use crate::reward::{
    detection_info_gain, detection_reward, pose_info_gain, pose_reward_from_gain, ConfidenceHistory, PoseCandidate,
    RewardConfig,
};
use crate::scene::{Entity, EntityId, EntityKind, FrameStamp, ModuleId, MotionStatus, PatchRegion, SceneState};
use crate::scheduler::{select, ActivationDecision};
use crate::toolkit::{ready_stamp, ChangeData, ModuleOutput, PerceptionModule, Trace, TraceFrame};
use crate::tracker::{init_track, is_stale, predict_scaled, update, KalmanConfig, TrackState};

pub const RUNLOG_VERSION: u32 = 1;

/// Slack used when comparing virtual times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Parallel,
    Oracle,
    Scheduled,
    /// Every module on every frame with instant outputs; ground-truth extraction only.
    Offline,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Parallel => "parallel",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Scheduled => "scheduled",
            PolicyKind::Offline => "offline",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "parallel" => Ok(PolicyKind::Parallel),
            "oracle" => Ok(PolicyKind::Oracle),
            "scheduled" => Ok(PolicyKind::Scheduled),
            "offline" => Ok(PolicyKind::Offline),
            other => Err(format!("unknown policy {other:?} (parallel | oracle | scheduled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusyPolicy {
    /// Requests for a busy module are discarded.
    Drop,
    /// One request waits and runs on the frame the module frees up.
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverheadMode {
    /// A fixed per-decision cost; keeps runs reproducible.
    Simulated,
    /// Host wall-clock time of the reward and selection step. Not reproducible.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverheadAccounting {
    /// Overhead counts only on frames where no inference is in flight.
    Overlapped,
    /// Overhead always counts.
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub busy_policy: BusyPolicy,
    pub overhead_mode: OverheadMode,
    pub overhead_ms: f64,
    pub overhead_accounting: OverheadAccounting,
    /// Force every module on the first frame.
    pub bootstrap: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            busy_policy: BusyPolicy::Drop,
            overhead_mode: OverheadMode::Simulated,
            overhead_ms: 0.5,
            overhead_accounting: OverheadAccounting::Overlapped,
            bootstrap: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overhead_ms >= 0.0 && self.overhead_ms.is_finite()) {
            return Err(Error::Config("overhead_ms must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The module configuration knobs the engine reads.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub change: ChangeDetectConfig,
    pub kalman: KalmanConfig,
    pub reward: RewardConfig,
    pub engine: EngineConfig,
    pub seed: u64,
}

/// The detection and pose modules a run dispatches to.
#[derive(Clone)]
pub struct ModuleSet {
    pub detection: Arc<dyn PerceptionModule>,
    pub pose: Arc<dyn PerceptionModule>,
}

impl ModuleSet {
    pub fn ids(&self) -> Vec<ModuleId> {
        vec![ModuleId::Detection, ModuleId::Pose]
    }

    fn get(&self, m: &ModuleId) -> Result<&Arc<dyn PerceptionModule>> {
        match m {
            ModuleId::Detection => Ok(&self.detection),
            ModuleId::Pose => Ok(&self.pose),
            other => Err(Error::UnknownModule(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedOutput {
    pub module: ModuleId,
    pub output: ModuleOutput,
}

/// Everything that happened on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Requested activations and, under the scheduled policy, the rewards behind them.
    pub decision: ActivationDecision,
    /// Inferences that started on this frame.
    pub started: BTreeMap<ModuleId, bool>,
    /// Requests discarded because the module was busy.
    pub dropped: BTreeMap<ModuleId, bool>,
    /// Some module had an inference in flight when the decision was made.
    pub inflight: bool,
    /// Scheduling overhead charged to latency on this frame.
    pub overhead_charged_ms: f64,
    pub composition_trigger: bool,
    pub active_tracks: usize,
    /// Upstream relevance of the ground-truth entities on this frame.
    pub relevance: BTreeMap<EntityId, f64>,
    pub applied: Vec<AppliedOutput>,
}

impl FrameRecord {
    pub fn stamp(&self) -> FrameStamp {
        self.decision.stamp
    }

    pub fn requested(&self, m: &ModuleId) -> bool {
        self.decision.activations.get(m).copied().unwrap_or(false)
    }

    pub fn started(&self, m: &ModuleId) -> bool {
        self.started.get(m).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: u32,
    pub policy: PolicyKind,
    pub seed: u64,
    pub frames: usize,
    pub frame_period_ms: f64,
    pub inference_ms: BTreeMap<ModuleId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum RunRecord {
    Header(RunHeader),
    Frame(Box<FrameRecord>),
}

impl RunLog {
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *out, &RunRecord::Header(self.header.clone()))?;
        out.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut *out, &RunRecord::Frame(Box::new(f.clone())))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::Trace(format!("cannot open {}: {e}", path.display())))?;
        let mut header = None;
        let mut frames = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RunRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Trace(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match rec {
                RunRecord::Header(h) if header.is_none() => header = Some(h),
                RunRecord::Frame(f) if header.is_some() => frames.push(*f),
                _ => return Err(Error::Trace(format!("{}:{}: unexpected record", path.display(), n + 1))),
            }
        }
        let header = header.ok_or_else(|| Error::Trace(format!("{}: no run header", path.display())))?;
        if header.version != RUNLOG_VERSION {
            return Err(Error::Trace(format!("unsupported run log version {}", header.version)));
        }
        Ok(RunLog { header, frames })
    }
}

#[derive(Debug, Clone)]
struct TrackEntry {
    state: TrackState,
    /// Missing from the latest detection output.
    lost: bool,
    motion: MotionStatus,
    last_moving: Option<u64>,
}

#[derive(Debug, Clone)]
struct Pending {
    ready_index: u64,
    seq: u64,
    module: ModuleId,
    output: ModuleOutput,
}

/// Mutable state of one run.
pub struct Engine<'a> {
    settings: &'a EngineSettings,
    modules: &'a ModuleSet,
    policy: PolicyKind,
    oracle: Option<&'a BTreeMap<ModuleId, BTreeSet<u64>>>,
    period_ms: f64,
    frame_region: PatchRegion,
    sigma_factors: Vec<f64>,
    clock: FrameStamp,
    busy_until: BTreeMap<ModuleId, f64>,
    queued: BTreeSet<ModuleId>,
    pending: Vec<Pending>,
    seq: u64,
    tracks: BTreeMap<EntityId, TrackEntry>,
    confidences: BTreeMap<EntityId, ConfidenceHistory>,
    relevance: BTreeMap<EntityId, f64>,
    kinds: BTreeMap<EntityId, EntityKind>,
    prev_humans: BTreeSet<EntityId>,
    prev_raster: Option<Raster>,
    scene: SceneState,
}

impl<'a> Engine<'a> {
    pub fn new(
        trace: &Trace,
        policy: PolicyKind,
        settings: &'a EngineSettings,
        modules: &'a ModuleSet,
        oracle: Option<&'a BTreeMap<ModuleId, BTreeSet<u64>>>,
    ) -> Result<Self> {
        if policy == PolicyKind::Oracle && oracle.is_none() {
            return Err(structural("the oracle policy needs ground-truth keyframes"));
        }
        settings.change.validate()?;
        settings.kalman.validate()?;
        settings.reward.validate()?;
        settings.engine.validate()?;
        let period_ms = trace.period_ms();
        let frame_region = trace.header.frame_region();
        let clock = FrameStamp::at(0, period_ms);
        Ok(Self {
            settings,
            modules,
            policy,
            oracle,
            period_ms,
            frame_region,
            sigma_factors: settings.reward.sigma_factors()?,
            clock,
            busy_until: BTreeMap::new(),
            queued: BTreeSet::new(),
            pending: Vec::new(),
            seq: 0,
            tracks: BTreeMap::new(),
            confidences: BTreeMap::new(),
            relevance: BTreeMap::new(),
            kinds: BTreeMap::new(),
            prev_humans: BTreeSet::new(),
            prev_raster: None,
            scene: SceneState::empty(clock, frame_region),
        })
    }

    pub fn clock(&self) -> FrameStamp {
        self.clock
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    fn idle(&self, m: &ModuleId) -> bool {
        self.busy_until.get(m).is_none_or(|b| *b <= self.clock.time_ms + TIME_EPS)
    }

    fn active_tracks(&self) -> impl Iterator<Item = (&EntityId, &TrackEntry)> {
        self.tracks.iter().filter(|(_, t)| !t.lost)
    }

    fn relevance_of(&self, id: &EntityId) -> f64 {
        self.relevance.get(id).copied().unwrap_or(0.0)
    }

    fn apply_detection(&mut self, boxes: &[crate::toolkit::DetectionBox]) -> Result<()> {
        let seen: BTreeSet<EntityId> = boxes.iter().map(|b| b.entity_id).collect();
        for b in boxes {
            let z = b.xywh();
            match self.tracks.get_mut(&b.entity_id) {
                Some(entry) => {
                    entry.state = update(&entry.state, z, &self.settings.kalman)?;
                    entry.lost = false;
                }
                None => {
                    let state = init_track(b.entity_id, z, &self.settings.kalman)?;
                    self.tracks.insert(
                        b.entity_id,
                        TrackEntry { state, lost: false, motion: MotionStatus::Stationary, last_moving: None },
                    );
                }
            }
        }
        for (id, entry) in self.tracks.iter_mut() {
            if !seen.contains(id) {
                entry.lost = true;
            }
        }
        Ok(())
    }

    fn apply_ready_outputs(&mut self) -> Result<Vec<AppliedOutput>> {
        let now = self.clock.index;
        let (ready, rest): (Vec<Pending>, Vec<Pending>) =
            std::mem::take(&mut self.pending).into_iter().partition(|p| p.ready_index <= now);
        self.pending = rest;
        let mut applied = Vec::with_capacity(ready.len());
        for p in ready {
            match &p.output {
                ModuleOutput::Detection(d) => self.apply_detection(&d.boxes)?,
                ModuleOutput::Pose(out) => {
                    for h in &out.per_human {
                        self.confidences
                            .entry(h.entity_id)
                            .or_default()
                            .record(out.stamp_issued.index, h.confidences());
                    }
                }
            }
            applied.push(AppliedOutput { module: p.module, output: p.output });
        }
        Ok(applied)
    }

    fn observe_change(&mut self, frame: &TraceFrame) -> Result<ChangeObservation> {
        match &frame.change {
            None => Ok(ChangeObservation::quiet()),
            Some(ChangeData::Stats(obs)) => Ok(obs.clone()),
            Some(raster @ ChangeData::Raster { .. }) => {
                let curr = raster.decode_raster()?.expect("raster variant");
                let obs = match &self.prev_raster {
                    Some(prev) if prev.width == curr.width && prev.height == curr.height => {
                        let regions: Vec<(EntityId, PatchRegion)> = self
                            .active_tracks()
                            .map(|(id, t)| (*id, region_of(&t.state)))
                            .collect();
                        observe_rasters(
                            prev,
                            &curr,
                            &regions,
                            self.frame_region.w,
                            self.frame_region.h,
                            &self.settings.change,
                        )?
                    }
                    _ => ChangeObservation::quiet(),
                };
                self.prev_raster = Some(curr);
                Ok(obs)
            }
        }
    }

    fn predict_tracks(&mut self, obs: &ChangeObservation) -> Result<()> {
        let cfg = &self.settings.kalman;
        let now = self.clock.index;
        let hold = self.settings.change.motion_hold_frames;
        for (id, entry) in self.tracks.iter_mut() {
            let cr = obs.patch_change_ratios.get(id).copied().unwrap_or(0.0);
            if motion_status(cr, &self.settings.change) == MotionStatus::Moving {
                entry.last_moving = Some(now);
            }
            entry.motion = match entry.last_moving {
                Some(k) if now - k <= hold => MotionStatus::Moving,
                _ => MotionStatus::Stationary,
            };
            entry.state = predict_scaled(&entry.state, cfg, cfg.process_scale(entry.motion))?;
        }
        self.tracks.retain(|_, t| !is_stale(&t.state, cfg));
        Ok(())
    }

    fn refresh_scene(&mut self) -> Result<()> {
        let entities: Vec<Entity> = self
            .active_tracks()
            .map(|(id, t)| {
                let kind = self.kinds.get(id).copied().unwrap_or(EntityKind::Object);
                Entity {
                    id: *id,
                    kind,
                    region: region_of(&t.state),
                    motion: t.motion,
                    relevance: self.relevance_of(id),
                    keypoint_confidences: None,
                }
            })
            .collect();
        self.scene = SceneState::new(self.clock, entities, self.frame_region)?;
        Ok(())
    }

    fn scheduled_decision(
        &self,
        trigger: bool,
        humans: &BTreeSet<EntityId>,
        frame: &TraceFrame,
    ) -> Result<ActivationDecision> {
        let reward_cfg = &self.settings.reward;
        let bootstrap = self.settings.engine.bootstrap && self.clock.index == 0;
        // Pose needs someone to look at on the first frame.
        let bootstrap_pose = bootstrap && frame.entities.iter().any(|e| e.kind == EntityKind::Human);
        let tracks: Vec<(TrackState, f64)> = self
            .active_tracks()
            .map(|(id, t)| (t.state.clone(), self.relevance_of(id)))
            .collect();
        let det_gain = detection_info_gain(&tracks, reward_cfg, &self.settings.kalman)?;
        let det = detection_reward(det_gain, bootstrap || trigger, reward_cfg)?;

        let candidates: Vec<PoseCandidate<'_>> = humans
            .iter()
            .map(|id| PoseCandidate {
                id: *id,
                track: &self.tracks[id].state,
                relevance: self.relevance_of(id),
                history: self.confidences.get(id),
            })
            .collect();
        let pose_gain = pose_info_gain(&candidates, self.clock.index, &self.sigma_factors, reward_cfg)?;
        let human_change = *humans != self.prev_humans;
        let pose = pose_reward_from_gain(pose_gain, bootstrap_pose || trigger || human_change, reward_cfg)?;
        let rewards = BTreeMap::from([(ModuleId::Detection, det), (ModuleId::Pose, pose)]);
        select(self.clock, &self.modules.ids(), rewards)
    }

    fn baseline_decision(&self) -> ActivationDecision {
        let activations = self
            .modules
            .ids()
            .into_iter()
            .map(|m| {
                let on = match self.policy {
                    PolicyKind::Parallel => self.idle(&m),
                    PolicyKind::Oracle => self
                        .oracle
                        .and_then(|o| o.get(&m))
                        .is_some_and(|s| s.contains(&self.clock.index)),
                    PolicyKind::Offline => true,
                    PolicyKind::Scheduled => unreachable!("scheduled decisions go through select"),
                };
                (m, on)
            })
            .collect();
        ActivationDecision {
            stamp: self.clock,
            activations,
            rewards: BTreeMap::new(),
            decision_time_ms: 0.0,
        }
    }

    fn start(&mut self, m: &ModuleId, frame: &TraceFrame) -> Result<()> {
        let module = self.modules.get(m)?;
        let cost = module.spec().inference_ms;
        let (ready, busy_until) = if self.policy == PolicyKind::Offline {
            (self.clock, self.clock.time_ms)
        } else {
            (ready_stamp(self.clock, cost, self.period_ms), self.clock.time_ms + cost)
        };
        let output = module.infer(frame, self.clock, ready)?;
        self.busy_until.insert(m.clone(), busy_until);
        self.pending.push(Pending { ready_index: ready.index, seq: self.seq, module: m.clone(), output });
        self.seq += 1;
        self.pending.sort_by_key(|p| (p.ready_index, p.seq));
        Ok(())
    }

    /// Advances the engine by one frame.
    pub fn step(&mut self, frame: &TraceFrame) -> Result<FrameRecord> {
        if frame.stamp.index != self.clock.index {
            return Err(structural(format!(
                "engine expects frame {}, trace supplied frame {}",
                self.clock.index, frame.stamp.index
            )));
        }
        for e in &frame.entities {
            self.relevance.insert(e.id, e.relevance);
            self.kinds.insert(e.id, e.kind);
        }
        let mut applied = self.apply_ready_outputs()?;

        let mut started: BTreeMap<ModuleId, bool> = self.modules.ids().into_iter().map(|m| (m, false)).collect();
        for m in self.modules.ids() {
            if self.queued.contains(&m) && self.idle(&m) {
                self.queued.remove(&m);
                self.start(&m, frame)?;
                started.insert(m, true);
            }
        }

        let obs = self.observe_change(frame)?;
        let trigger = composition_change_trigger(obs.background_cr, &obs.shift(), &self.settings.change);
        self.predict_tracks(&obs)?;

        let humans: BTreeSet<EntityId> = self
            .active_tracks()
            .filter(|(id, _)| self.kinds.get(id) == Some(&EntityKind::Human))
            .map(|(id, _)| *id)
            .collect();

        let inflight = self.modules.ids().iter().any(|m| !self.idle(m));
        let mut decision = if self.policy == PolicyKind::Scheduled {
            let t0 = Instant::now();
            let mut d = self.scheduled_decision(trigger, &humans, frame)?;
            d.decision_time_ms = match self.settings.engine.overhead_mode {
                OverheadMode::Simulated => self.settings.engine.overhead_ms,
                OverheadMode::Measured => t0.elapsed().as_secs_f64() * 1e3,
            };
            d
        } else {
            self.baseline_decision()
        };
        decision.stamp = self.clock;
        let overhead_charged_ms = match self.settings.engine.overhead_accounting {
            OverheadAccounting::Serial => decision.decision_time_ms,
            OverheadAccounting::Overlapped if !inflight => decision.decision_time_ms,
            OverheadAccounting::Overlapped => 0.0,
        };

        let mut dropped: BTreeMap<ModuleId, bool> = self.modules.ids().into_iter().map(|m| (m, false)).collect();
        for m in self.modules.ids() {
            if !decision.activations.get(&m).copied().unwrap_or(false) {
                continue;
            }
            if self.idle(&m) {
                self.start(&m, frame)?;
                started.insert(m, true);
            } else if self.settings.engine.busy_policy == BusyPolicy::Queue {
                self.queued.insert(m);
            } else {
                dropped.insert(m, true);
            }
        }

        if self.policy == PolicyKind::Offline {
            applied.extend(self.apply_ready_outputs()?);
        }
        self.prev_humans = humans;
        self.refresh_scene()?;

        let relevance = frame.entities.iter().map(|e| (e.id, e.relevance)).collect();
        let record = FrameRecord {
            decision,
            started,
            dropped,
            inflight,
            overhead_charged_ms,
            composition_trigger: trigger,
            active_tracks: self.active_tracks().count(),
            relevance,
            applied,
        };
        self.clock = self.clock.next(self.period_ms);
        Ok(record)
    }
}

fn region_of(t: &TrackState) -> PatchRegion {
    let m = &t.mean;
    PatchRegion { x: m[0] - m[2] / 2.0, y: m[1] - m[3] / 2.0, w: m[2], h: m[3] }
}

/// Runs `policy` over the whole trace.
pub fn run(
    trace: &Trace,
    policy: PolicyKind,
    settings: &EngineSettings,
    modules: &ModuleSet,
    oracle: Option<&BTreeMap<ModuleId, BTreeSet<u64>>>,
) -> Result<RunLog> {
    if trace.is_empty() {
        return Err(structural("cannot run an empty trace"));
    }
    let mut engine = Engine::new(trace, policy, settings, modules, oracle)?;
    let frames = trace
        .frames
        .iter()
        .map(|f| engine.step(f))
        .collect::<Result<Vec<_>>>()?;
    let inference_ms = modules
        .ids()
        .into_iter()
        .map(|m| {
            let ms = modules.get(&m).map(|x| x.spec().inference_ms).unwrap_or(0.0);
            (m, ms)
        })
        .collect();
    Ok(RunLog {
        header: RunHeader {
            version: RUNLOG_VERSION,
            policy,
            seed: settings.seed,
            frames: trace.len(),
            frame_period_ms: trace.period_ms(),
            inference_ms,
            archetype: trace.header.archetype.clone(),
        },
        frames,
    })
}
