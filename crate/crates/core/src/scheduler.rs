//! Activation selection: a module runs iff its net reward is positive or it is forced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{structural, Result};
use crate::reward::RewardBreakdown;
use crate::scene::{FrameStamp, ModuleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationDecision {
    pub stamp: FrameStamp,
    pub activations: BTreeMap<ModuleId, bool>,
    pub rewards: BTreeMap<ModuleId, RewardBreakdown>,
    pub decision_time_ms: f64,
}

fn check_registered(
    registered: &[ModuleId],
    rewards: &BTreeMap<ModuleId, RewardBreakdown>,
) -> Result<()> {
    for m in registered {
        if !rewards.contains_key(m) {
            return Err(structural(format!("no reward entry for registered module {m}")));
        }
    }
    for (key, r) in rewards {
        if *key != r.module {
            return Err(structural(format!("reward keyed {key} describes module {}", r.module)));
        }
    }
    Ok(())
}

/// Per-module sign rule; zero net stays inactive.
pub fn select(
    stamp: FrameStamp,
    registered: &[ModuleId],
    rewards: BTreeMap<ModuleId, RewardBreakdown>,
) -> Result<ActivationDecision> {
    check_registered(registered, &rewards)?;
    let activations = rewards
        .iter()
        .map(|(m, r)| (m.clone(), r.forced || r.net > 0.0))
        .collect();
    Ok(ActivationDecision {
        stamp,
        activations,
        rewards,
        decision_time_ms: 0.0,
    })
}

/// Exhaustive search over all feasible activation vectors; a test oracle for [`select`].
///
/// Ties in cumulative reward go to the vector with the fewest activations.
pub fn brute_force_select(
    stamp: FrameStamp,
    registered: &[ModuleId],
    rewards: BTreeMap<ModuleId, RewardBreakdown>,
) -> Result<ActivationDecision> {
    check_registered(registered, &rewards)?;
    let modules: Vec<&RewardBreakdown> = rewards.values().collect();
    let n = modules.len();
    if n > 20 {
        return Err(structural(format!("brute force limited to 20 modules, got {n}")));
    }
    let mut best: Option<(f64, u32, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        let feasible = modules
            .iter()
            .enumerate()
            .all(|(i, r)| !r.forced || mask & (1 << i) != 0);
        if !feasible {
            continue;
        }
        let total: f64 = modules
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, r)| r.net)
            .sum();
        let count = mask.count_ones();
        let better = match best {
            None => true,
            Some((bt, bc, _)) => total > bt || (total == bt && count < bc),
        };
        if better {
            best = Some((total, count, mask));
        }
    }
    let mask = best.map(|b| b.2).unwrap_or(0);
    let activations = rewards
        .keys()
        .enumerate()
        .map(|(i, m)| (m.clone(), mask & (1 << i) != 0))
        .collect();
    Ok(ActivationDecision {
        stamp,
        activations,
        rewards,
        decision_time_ms: 0.0,
    })
}
