//! Per-module rewards: Kalman entropy reduction for detection and
//! pre/post keypoint entropy difference for pose. All logarithms are natural.

use std::collections::BTreeMap;
use std::f64::consts::{E, LN_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{numerical, structural, Error, Result};
use crate::scene::{EntityId, ModuleId};
use crate::tracker::{measurement_covariance, measurement_noise, KalmanConfig, TrackState};

const COCO_WHOLEBODY_SIGMAS: &str = include_str!("../data/coco_wholebody_sigmas.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoUnit {
    Nats,
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    CocoWholebody,
    Uniform,
    File,
}

fn default_cost_ms() -> BTreeMap<ModuleId, f64> {
    BTreeMap::from([(ModuleId::Detection, 15.0), (ModuleId::Pose, 80.0)])
}
fn default_keypoint_count() -> usize {
    133
}
fn default_confidence_floor() -> f64 {
    1e-6
}
fn default_sigma_floor() -> f64 {
    1e-3
}
fn default_prior_confidence() -> f64 {
    0.5
}
fn default_uniform_fraction() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_sigma_source() -> SigmaSource {
    SigmaSource::CocoWholebody
}
fn default_unit() -> InfoUnit {
    InfoUnit::Nats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Exchange rate between information and inference time (per ms).
    pub lambda_info_per_ms: f64,
    /// Per-module exchange rates that replace `lambda_info_per_ms`.
    #[serde(default)]
    pub lambda_overrides: BTreeMap<ModuleId, f64>,
    /// Unit in which the lambdas are expressed.
    #[serde(default = "default_unit")]
    pub lambda_unit: InfoUnit,
    #[serde(default = "default_cost_ms")]
    pub cost_ms: BTreeMap<ModuleId, f64>,
    #[serde(default = "default_keypoint_count")]
    pub keypoint_count: usize,
    #[serde(default = "default_sigma_source")]
    pub sigma_source: SigmaSource,
    /// Per-keypoint factor used by the uniform source.
    #[serde(default = "default_uniform_fraction")]
    pub sigma_uniform_fraction: f64,
    /// Whitespace-separated factors, `#` comments allowed. Used by the file source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_file: Option<String>,
    #[serde(default = "default_confidence_floor")]
    pub confidence_floor: f64,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    /// Confidence assumed for a human whose pose has never been estimated.
    #[serde(default = "default_prior_confidence")]
    pub prior_confidence: f64,
    /// Clamp each track's detection gain term at zero.
    #[serde(default = "default_true")]
    pub nonnegative_track_gain: bool,
}

impl RewardConfig {
    pub fn with_lambda(lambda_info_per_ms: f64) -> Self {
        Self {
            lambda_info_per_ms,
            lambda_overrides: BTreeMap::new(),
            lambda_unit: InfoUnit::Nats,
            cost_ms: default_cost_ms(),
            keypoint_count: default_keypoint_count(),
            sigma_source: SigmaSource::CocoWholebody,
            sigma_uniform_fraction: default_uniform_fraction(),
            sigma_file: None,
            confidence_floor: default_confidence_floor(),
            sigma_floor: default_sigma_floor(),
            prior_confidence: default_prior_confidence(),
            nonnegative_track_gain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = std::iter::once(&self.lambda_info_per_ms).chain(self.lambda_overrides.values());
        for l in lambdas {
            if !(*l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        for (m, c) in &self.cost_ms {
            if !(*c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("cost for {m} must be finite and >= 0, got {c}")));
            }
        }
        if self.keypoint_count == 0 {
            return Err(Error::Config("keypoint_count must be positive".into()));
        }
        if !(self.confidence_floor > 0.0 && self.confidence_floor < 1.0) {
            return Err(Error::Config("confidence_floor must lie in (0, 1)".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        if !(self.prior_confidence > 0.0 && self.prior_confidence <= 1.0) {
            return Err(Error::Config("prior_confidence must lie in (0, 1]".into()));
        }
        if !(self.sigma_uniform_fraction > 0.0) {
            return Err(Error::Config("sigma_uniform_fraction must be positive".into()));
        }
        if self.sigma_source == SigmaSource::File && self.sigma_file.is_none() {
            return Err(Error::Config("sigma_source = \"file\" needs sigma_file".into()));
        }
        Ok(())
    }

    /// Exchange rate for `module`, converted to nats per ms.
    pub fn lambda_nats(&self, module: &ModuleId) -> f64 {
        let l = self
            .lambda_overrides
            .get(module)
            .copied()
            .unwrap_or(self.lambda_info_per_ms);
        match self.lambda_unit {
            InfoUnit::Nats => l,
            InfoUnit::Bits => l * LN_2,
        }
    }

    pub fn cost(&self, module: &ModuleId) -> Result<f64> {
        self.cost_ms
            .get(module)
            .copied()
            .ok_or_else(|| structural(format!("no cost configured for module {module}")))
    }

    /// Per-keypoint factors, to be multiplied by the object scale.
    pub fn sigma_factors(&self) -> Result<Vec<f64>> {
        let table = match self.sigma_source {
            SigmaSource::CocoWholebody => parse_sigma_table(COCO_WHOLEBODY_SIGMAS)?,
            SigmaSource::Uniform => vec![self.sigma_uniform_fraction; self.keypoint_count],
            SigmaSource::File => {
                let path = self.sigma_file.as_deref().unwrap_or_default();
                parse_sigma_table(&std::fs::read_to_string(Path::new(path))?)?
            }
        };
        if table.len() != self.keypoint_count {
            return Err(Error::Config(format!(
                "sigma table has {} entries, keypoint_count is {}",
                table.len(),
                self.keypoint_count
            )));
        }
        Ok(table)
    }
}

pub fn parse_sigma_table(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or_default();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Config(format!("bad sigma value {tok:?}")))?;
            if !(v > 0.0) {
                return Err(Error::Config(format!("sigma value {v} must be positive")));
            }
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub module: ModuleId,
    pub info_gain_nats: f64,
    pub cost_penalty_nats: f64,
    pub net: f64,
    pub forced: bool,
}

impl RewardBreakdown {
    pub fn new(module: ModuleId, info_gain_nats: f64, cost_penalty_nats: f64, forced: bool) -> Self {
        Self {
            module,
            info_gain_nats,
            cost_penalty_nats,
            net: info_gain_nats - cost_penalty_nats,
            forced,
        }
    }

    fn for_module(module: ModuleId, gain: f64, forced: bool, cfg: &RewardConfig) -> Result<Self> {
        let penalty = cfg.lambda_nats(&module) * cfg.cost(&module)?;
        Ok(Self::new(module, gain, penalty, forced))
    }
}

/// Sum over tracks of relevance-weighted log ratio of prior to measurement covariance.
pub fn detection_info_gain(
    tracks: &[(TrackState, f64)],
    cfg: &RewardConfig,
    kalman: &KalmanConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (track, relevance) in tracks {
        if *relevance == 0.0 {
            continue;
        }
        let prior = measurement_covariance(track);
        let r = measurement_noise(track, kalman);
        if prior.cholesky().is_none() {
            return Err(numerical(format!(
                "track {} has a non positive definite box covariance",
                track.entity_id
            )));
        }
        let term = 0.5 * (prior.determinant() / r.determinant()).ln();
        if !term.is_finite() {
            return Err(numerical(format!("track {} gain is not finite", track.entity_id)));
        }
        let term = if cfg.nonnegative_track_gain { term.max(0.0) } else { term };
        total += relevance * term;
    }
    Ok(total)
}

pub fn detection_reward(gain: f64, forced: bool, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    RewardBreakdown::for_module(ModuleId::Detection, gain, forced, cfg)
}

pub fn box_uniform_entropy(w: f64, h: f64) -> Result<f64> {
    if !(w > 0.0 && h > 0.0) {
        return Err(structural(format!("box entropy needs positive size, got {w}x{h}")));
    }
    Ok((w * h).ln())
}

/// Box geometry and uncertainty of one human, as seen before pose runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanBox {
    pub w: f64,
    pub h: f64,
    pub sigma_w: f64,
    pub sigma_h: f64,
    pub relevance: f64,
}

pub fn pre_execution_entropy(humans: &[HumanBox], cfg: &RewardConfig) -> Result<f64> {
    let mut sum = 0.0;
    for hb in humans {
        sum += hb.relevance * box_uniform_entropy(hb.w + hb.sigma_w, hb.h + hb.sigma_h)?;
    }
    Ok(cfg.keypoint_count as f64 * sum)
}

pub fn extrapolate_confidence(
    s_last: f64,
    s_prev: f64,
    k_last: u64,
    k_prev: u64,
    k: u64,
    cfg: &RewardConfig,
) -> Result<f64> {
    if k_last <= k_prev {
        return Err(structural(format!(
            "confidence samples need k_last > k_prev, got {k_last} and {k_prev}"
        )));
    }
    if k < k_last {
        return Err(structural(format!("cannot extrapolate back to frame {k} from {k_last}")));
    }
    let slope = (s_last - s_prev) / (k_last - k_prev) as f64;
    let s = s_last + slope * (k - k_last) as f64;
    Ok(s.clamp(cfg.confidence_floor, 1.0))
}

pub fn keypoint_sigma(conf: f64, base: f64, cfg: &RewardConfig) -> f64 {
    (-base * conf.ln()).max(cfg.sigma_floor)
}

pub fn keypoint_entropy(sigma: f64) -> f64 {
    (2.0 * PI * E).ln() + 2.0 * sigma.ln()
}

/// Expected keypoint state of one human after pose would run.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanKeypoints {
    /// Extrapolated confidence per keypoint.
    pub confidences: Vec<f64>,
    /// Per-keypoint base deviation in pixels.
    pub sigma_base: Vec<f64>,
    pub relevance: f64,
}

pub fn post_execution_entropy(humans: &[HumanKeypoints], cfg: &RewardConfig) -> Result<f64> {
    let d = cfg.keypoint_count;
    let mut total = 0.0;
    for hk in humans {
        if hk.confidences.len() != d || hk.sigma_base.len() != d {
            return Err(structural(format!(
                "expected {d} keypoints, got {} confidences and {} bases",
                hk.confidences.len(),
                hk.sigma_base.len()
            )));
        }
        if hk.relevance == 0.0 {
            continue;
        }
        let log_sigmas: f64 = hk
            .confidences
            .iter()
            .zip(&hk.sigma_base)
            .map(|(c, b)| 2.0 * keypoint_sigma(*c, *b, cfg).ln())
            .sum();
        total += hk.relevance * (d as f64 * (2.0 * PI * E).ln() + log_sigmas);
    }
    Ok(total)
}

pub fn pose_reward(pre: f64, post: f64, forced: bool, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    pose_reward_from_gain(pre - post, forced, cfg)
}

pub fn pose_reward_from_gain(gain: f64, forced: bool, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    RewardBreakdown::for_module(ModuleId::Pose, gain, forced, cfg)
}

/// The last two pose confidence samples seen for one human.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceHistory {
    last: Option<(u64, Vec<f64>)>,
    prev: Option<(u64, Vec<f64>)>,
}

impl ConfidenceHistory {
    /// Records a sample taken at frame `k`; older or duplicate frames are ignored.
    pub fn record(&mut self, k: u64, confidences: Vec<f64>) {
        match &self.last {
            Some((k_last, _)) if k <= *k_last => {}
            _ => {
                self.prev = self.last.take();
                self.last = Some((k, confidences));
            }
        }
    }

    pub fn samples(&self) -> usize {
        self.last.is_some() as usize + self.prev.is_some() as usize
    }

    /// Confidence per keypoint expected at frame `k`.
    pub fn extrapolate(&self, k: u64, cfg: &RewardConfig) -> Result<Vec<f64>> {
        match (&self.last, &self.prev) {
            (Some((k_last, last)), Some((k_prev, prev))) => {
                if last.len() != prev.len() {
                    return Err(structural("confidence samples differ in length"));
                }
                last.iter()
                    .zip(prev)
                    .map(|(s_last, s_prev)| {
                        extrapolate_confidence(*s_last, *s_prev, *k_last, *k_prev, k.max(*k_last), cfg)
                    })
                    .collect()
            }
            (Some((_, last)), None) => {
                Ok(last.iter().map(|s| s.clamp(cfg.confidence_floor, 1.0)).collect())
            }
            _ => Ok(vec![cfg.prior_confidence; cfg.keypoint_count]),
        }
    }
}

/// Pose inputs for one tracked human.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseCandidate<'a> {
    pub id: EntityId,
    pub track: &'a TrackState,
    pub relevance: f64,
    pub history: Option<&'a ConfidenceHistory>,
}

/// Pose information gain from tracked humans and their confidence histories.
pub fn pose_info_gain(
    humans: &[PoseCandidate<'_>],
    frame: u64,
    sigma_factors: &[f64],
    cfg: &RewardConfig,
) -> Result<f64> {
    let empty = ConfidenceHistory::default();
    let mut boxes = Vec::with_capacity(humans.len());
    let mut keypoints = Vec::with_capacity(humans.len());
    for h in humans {
        let (w, hh) = (h.track.mean[2], h.track.mean[3]);
        let p = &h.track.covariance;
        boxes.push(HumanBox {
            w,
            h: hh,
            sigma_w: p[(2, 2)].sqrt(),
            sigma_h: p[(3, 3)].sqrt(),
            relevance: h.relevance,
        });
        let scale = (w * hh).sqrt();
        keypoints.push(HumanKeypoints {
            confidences: h.history.unwrap_or(&empty).extrapolate(frame, cfg)?,
            sigma_base: sigma_factors.iter().map(|f| f * scale).collect(),
            relevance: h.relevance,
        });
    }
    Ok(pre_execution_entropy(&boxes, cfg)? - post_execution_entropy(&keypoints, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{init_track, predict};
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::with_lambda(0.01)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Track whose box covariance is `c * R`.
    fn scaled_track(c: f64) -> TrackState {
        let k = KalmanConfig::default();
        let mut t = init_track(EntityId(1), [100.0, 100.0, 40.0, 60.0], &k).unwrap();
        let r: Matrix4<f64> = measurement_noise(&t, &k);
        t.covariance.fixed_view_mut::<4, 4>(0, 0).copy_from(&(r * c));
        t
    }

    #[test]
    fn sigma_table_has_133_entries() {
        let t = cfg().sigma_factors().unwrap();
        assert_eq!(t.len(), 133);
        assert_eq!(t[0], 0.026);
        assert_eq!(t[132], 0.031);
    }

    #[test]
    fn sigma_file_source_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        std::fs::write(&path, "# two\n0.1 0.2\n").unwrap();
        let mut c = cfg();
        c.sigma_source = SigmaSource::File;
        c.sigma_file = Some(path.to_string_lossy().into_owned());
        assert!(c.sigma_factors().is_err());
        c.keypoint_count = 2;
        assert_eq!(c.sigma_factors().unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn uniform_sigma_source() {
        let mut c = cfg();
        c.sigma_source = SigmaSource::Uniform;
        assert_eq!(c.sigma_factors().unwrap(), vec![0.05; 133]);
    }

    #[test]
    fn detection_gain_examples() {
        let k = KalmanConfig::default();
        let c = cfg();
        assert!(close(detection_info_gain(&[(scaled_track(1.0), 1.0)], &c, &k).unwrap(), 0.0, 1e-12));
        let e2 = E * E;
        let g = detection_info_gain(&[(scaled_track(e2), 1.0)], &c, &k).unwrap();
        assert!(close(g, 4.0, 1e-12), "{g}");
        let g2 = detection_info_gain(&[(scaled_track(e2), 0.5)], &c, &k).unwrap();
        assert!(close(2.0 * g2, g, 1e-12));
        assert_eq!(detection_info_gain(&[], &c, &k).unwrap(), 0.0);
        assert_eq!(detection_info_gain(&[(scaled_track(e2), 0.0)], &c, &k).unwrap(), 0.0);
    }

    #[test]
    fn negative_track_terms_follow_the_clamp_switch() {
        let k = KalmanConfig::default();
        let mut c = cfg();
        let t = scaled_track(0.5);
        assert_eq!(detection_info_gain(&[(t.clone(), 1.0)], &c, &k).unwrap(), 0.0);
        c.nonnegative_track_gain = false;
        let g = detection_info_gain(&[(t, 1.0)], &c, &k).unwrap();
        assert!(close(g, 0.5 * (0.5f64.powi(4)).ln(), 1e-12));
    }

    #[test]
    fn detection_reward_examples() {
        let mut c = cfg();
        c.cost_ms.insert(ModuleId::Detection, 100.0);
        let r = detection_reward(4.0, false, &c).unwrap();
        assert!(close(r.net, 3.0, 1e-12));
        assert_eq!(r.net, r.info_gain_nats - r.cost_penalty_nats);
        c.lambda_info_per_ms = 0.0;
        assert_eq!(detection_reward(4.0, true, &c).unwrap().net, 4.0);
        c.lambda_info_per_ms = 0.3;
        assert!(detection_reward(0.0, false, &c).unwrap().net < 0.0);
    }

    #[test]
    fn lambda_overrides_and_bits() {
        let mut c = cfg();
        c.lambda_overrides.insert(ModuleId::Pose, 2.0);
        assert_eq!(c.lambda_nats(&ModuleId::Pose), 2.0);
        assert_eq!(c.lambda_nats(&ModuleId::Detection), 0.01);
        c.lambda_unit = InfoUnit::Bits;
        assert!(close(c.lambda_nats(&ModuleId::Pose), 2.0 * LN_2, 1e-15));
    }

    #[test]
    fn box_entropy_examples() {
        assert_eq!(box_uniform_entropy(1.0, 1.0).unwrap(), 0.0);
        assert!(close(box_uniform_entropy(E, 1.0).unwrap(), 1.0, 1e-12));
        assert!(close(box_uniform_entropy(50.0, 80.0).unwrap(), 8.294, 1e-3));
        assert!(box_uniform_entropy(0.0, 1.0).is_err());
    }

    #[test]
    fn pre_entropy_examples() {
        let c = cfg();
        let unit = HumanBox { w: 0.5, h: 0.5, sigma_w: 0.5, sigma_h: 0.5, relevance: 1.0 };
        assert!(close(pre_execution_entropy(&[unit], &c).unwrap(), 0.0, 1e-12));
        let e = HumanBox { w: E - 1.0, h: 0.75, sigma_w: 1.0, sigma_h: 0.25, relevance: 1.0 };
        assert!(close(pre_execution_entropy(&[e], &c).unwrap(), 133.0, 1e-9));
        let zero = HumanBox { relevance: 0.0, ..e };
        assert_eq!(pre_execution_entropy(&[zero, zero], &c).unwrap(), 0.0);
        assert_eq!(pre_execution_entropy(&[], &c).unwrap(), 0.0);
    }

    #[test]
    fn extrapolation_examples() {
        let c = cfg();
        assert!(close(extrapolate_confidence(0.8, 0.9, 10, 5, 15, &c).unwrap(), 0.7, 1e-12));
        assert_eq!(extrapolate_confidence(0.8, 0.9, 10, 5, 10, &c).unwrap(), 0.8);
        assert_eq!(extrapolate_confidence(0.2, 0.9, 6, 5, 100, &c).unwrap(), c.confidence_floor);
        assert_eq!(extrapolate_confidence(1.0, 0.5, 6, 5, 100, &c).unwrap(), 1.0);
        assert!(extrapolate_confidence(0.8, 0.9, 5, 5, 6, &c).is_err());
    }

    #[test]
    fn sigma_examples() {
        let c = cfg();
        assert!(close(keypoint_sigma(1.0 / E, 3.0, &c), 3.0, 1e-12));
        assert_eq!(keypoint_sigma(1.0, 3.0, &c), c.sigma_floor);
        assert!(close(keypoint_sigma(0.5, 2.0, &c), 1.386, 1e-3));
    }

    #[test]
    fn entropy_examples() {
        assert!(close(keypoint_entropy(1.0), 2.8379, 1e-4));
        assert!(close(keypoint_entropy(E), 4.8379, 1e-4));
        assert!(close(keypoint_entropy(2.0) - keypoint_entropy(1.0), 2.0 * LN_2, 1e-12));
    }

    fn unit_sigma_human(relevance: f64) -> HumanKeypoints {
        // conf = 1/e with base 1 gives sigma = 1
        HumanKeypoints {
            confidences: vec![1.0 / E; 133],
            sigma_base: vec![1.0; 133],
            relevance,
        }
    }

    #[test]
    fn post_entropy_examples() {
        let c = cfg();
        let one = post_execution_entropy(&[unit_sigma_human(1.0)], &c).unwrap();
        assert!(close(one, 133.0 * (2.0 * PI * E).ln(), 1e-9));
        assert!(close(one, 377.4, 0.05));
        assert_eq!(post_execution_entropy(&[unit_sigma_human(0.0)], &c).unwrap(), 0.0);
        let two = post_execution_entropy(&[unit_sigma_human(1.0), unit_sigma_human(1.0)], &c).unwrap();
        assert!(close(two, 2.0 * one, 1e-9));
        let mut short = unit_sigma_human(1.0);
        short.confidences.pop();
        assert!(post_execution_entropy(&[short], &c).is_err());
    }

    #[test]
    fn pose_reward_examples() {
        let mut c = cfg();
        c.lambda_info_per_ms = 0.1;
        let r = pose_reward(10.0, 10.0, false, &c).unwrap();
        assert_eq!(r.info_gain_nats, 0.0);
        assert!(close(r.net, -8.0, 1e-12));
        let r = pose_reward(400.0, 377.4, false, &c).unwrap();
        assert!(close(r.net, 14.6, 1e-9));
        assert!(pose_reward(0.0, 100.0, true, &c).unwrap().forced);
    }

    #[test]
    fn confidence_history_degenerates_gracefully() {
        let c = cfg();
        let mut h = ConfidenceHistory::default();
        assert_eq!(h.extrapolate(4, &c).unwrap(), vec![0.5; 133]);
        h.record(3, vec![0.9; 133]);
        assert_eq!(h.extrapolate(40, &c).unwrap(), vec![0.9; 133]);
        h.record(5, vec![0.8; 133]);
        h.record(4, vec![0.1; 133]);
        assert_eq!(h.samples(), 2);
        let v = h.extrapolate(7, &c).unwrap();
        assert!(close(v[0], 0.7, 1e-12));
    }

    #[test]
    fn gain_grows_while_track_coasts() {
        let k = KalmanConfig::default();
        for clamp in [true, false] {
            let mut c = cfg();
            c.nonnegative_track_gain = clamp;
            let mut t = init_track(EntityId(1), [300.0, 200.0, 50.0, 120.0], &k).unwrap();
            let mut last = f64::NEG_INFINITY;
            for _ in 0..30 {
                t = predict(&t, &k).unwrap();
                let g = detection_info_gain(&[(t.clone(), 1.0)], &c, &k).unwrap();
                assert!(g > last);
                last = g;
            }
        }
    }

    fn keypoint_human() -> impl Strategy<Value = HumanKeypoints> {
        (
            proptest::collection::vec(0.01f64..=1.0, 4),
            proptest::collection::vec(0.5f64..5.0, 4),
            0.0f64..=1.0,
        )
            .prop_map(|(confidences, sigma_base, relevance)| HumanKeypoints {
                confidences,
                sigma_base,
                relevance,
            })
    }

    proptest! {
        #[test]
        fn entropy_doubling_identity(sigma in 1e-3f64..1e3) {
            prop_assert!(close(keypoint_entropy(2.0 * sigma) - keypoint_entropy(sigma), 2.0 * LN_2, 1e-12));
        }

        #[test]
        fn entropy_of_sigma_monotone_in_confidence(a in 1e-6f64..=1.0, b in 1e-6f64..=1.0, base in 0.01f64..10.0) {
            let c = cfg();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let h_lo = keypoint_entropy(keypoint_sigma(lo, base, &c));
            let h_hi = keypoint_entropy(keypoint_sigma(hi, base, &c));
            prop_assert!(h_hi <= h_lo + 1e-12);
        }

        #[test]
        fn pose_gain_is_permutation_invariant(
            humans in proptest::collection::vec(keypoint_human(), 1..4),
            rot in 0usize..4,
        ) {
            let mut c = cfg();
            c.keypoint_count = 4;
            let base = post_execution_entropy(&humans, &c).unwrap();
            let mut shuffled: Vec<HumanKeypoints> = humans.iter().rev().cloned().collect();
            for h in shuffled.iter_mut() {
                h.confidences.rotate_left(rot);
                h.sigma_base.rotate_left(rot);
            }
            let other = post_execution_entropy(&shuffled, &c).unwrap();
            prop_assert!(close(base, other, 1e-9 * base.abs().max(1.0)));
        }

        #[test]
        fn detection_gain_additive_and_linear(c1 in 1.0f64..50.0, c2 in 1.0f64..50.0, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
            let k = KalmanConfig::default();
            let c = cfg();
            let a = (scaled_track(c1), r1);
            let b = (scaled_track(c2), r2);
            let joint = detection_info_gain(&[a.clone(), b.clone()], &c, &k).unwrap();
            let sep = detection_info_gain(std::slice::from_ref(&a), &c, &k).unwrap() + detection_info_gain(&[b], &c, &k).unwrap();
            prop_assert!(close(joint, sep, 1e-9));
            let full = detection_info_gain(&[(a.0.clone(), 1.0)], &c, &k).unwrap();
            prop_assert!(close(detection_info_gain(&[a], &c, &k).unwrap(), r1 * full, 1e-9));
        }

        #[test]
        fn net_is_gain_minus_penalty(g in -1e3f64..1e3, lambda in 0.0f64..10.0, forced: bool) {
            let c = RewardConfig::with_lambda(lambda);
            for r in [detection_reward(g, forced, &c).unwrap(), pose_reward(g, 0.0, forced, &c).unwrap()] {
                prop_assert_eq!(r.net, r.info_gain_nats - r.cost_penalty_nats);
                prop_assert_eq!(r.forced, forced);
            }
        }
    }
}
