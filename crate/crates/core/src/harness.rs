//! Runs policies over a trace and scores them against offline keyframes.

use std::thread;

use crate::config::RunConfig;
use crate::engine::{run, PolicyKind, RunLog};
use crate::error::{structural, Result};
use crate::metrics::{extract_keyframes, report, GroundTruthKeyframes, MetricsReport};
use crate::toolkit::Trace;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log: RunLog,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub keyframes: GroundTruthKeyframes,
    /// One entry per requested policy, in request order.
    pub evaluations: Vec<Evaluation>,
}

impl Comparison {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.evaluations.iter().map(|e| e.report.clone()).collect()
    }
}

/// Every module on every frame with instant outputs, then keyframe labelling.
pub fn ground_truth(trace: &Trace, cfg: &RunConfig) -> Result<GroundTruthKeyframes> {
    let modules = cfg.modules()?;
    let offline = run(trace, PolicyKind::Offline, &cfg.settings(), &modules, None)?;
    extract_keyframes(&offline, &cfg.metrics)
}

pub fn evaluate(
    trace: &Trace,
    policy: PolicyKind,
    cfg: &RunConfig,
    keyframes: &GroundTruthKeyframes,
) -> Result<Evaluation> {
    let modules = cfg.modules()?;
    let log = run(trace, policy, &cfg.settings(), &modules, Some(&keyframes.required))?;
    let report = report(&log, keyframes, &cfg.metrics)?;
    Ok(Evaluation { log, report })
}

/// Runs each policy on its own thread; results keep the order of `policies`.
pub fn compare(trace: &Trace, policies: &[PolicyKind], cfg: &RunConfig) -> Result<Comparison> {
    if policies.len() < 2 {
        return Err(structural("a comparison needs at least two policies"));
    }
    let keyframes = ground_truth(trace, cfg)?;
    let evaluations = thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter()
            .map(|p| {
                let keyframes = &keyframes;
                s.spawn(move || evaluate(trace, *p, cfg, keyframes))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("policy thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Comparison { keyframes, evaluations })
}
