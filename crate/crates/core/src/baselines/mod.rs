//! Comparison policies and ablation wrappers: fixed-time control, SOTL,
//! independent DQN, fixed-protocol messaging, blank messages, and blind
//! agents.

pub mod dqn;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agentpolicy::{AgentPolicy, PolicyError};
use crate::graphnet::{AgentId, JunctionSpec};
use crate::traffic::{RewardComponents, RoadNet, TrafficState};

pub use dqn::DqnConfig;

/// How outgoing messages are produced on the bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommMode {
    /// Learned Gumbel-Softmax messages (the full method).
    Learned,
    /// Every message on the wire replaced by the all-zeros vector.
    Blank,
    /// Messages carry a fixed encoding of the sender's reward components;
    /// the learned message head is excluded from optimization.
    FixedProtocol,
}

/// Baseline selector, recorded in experiment manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaselineKind {
    FixedTime,
    Sotl { threshold: usize },
    IndependentDqn(DqnConfig),
    FixedProtocol,
    BlankMessage,
    Blind(Vec<AgentId>),
}

/// Round-robin fixed-time control: at the end of window `k` the junction
/// switches to phase `k mod |A|`. Ignores traffic entirely.
pub fn fixed_time_policy(junction: &JunctionSpec, tick: u64) -> u8 {
    let window = tick / crate::agentpolicy::WINDOW as u64;
    (window % junction.kind.action_count() as u64) as u8
}

/// Halted-vehicle queue length per approach arm, aligned with the
/// junction's action indices. SOTL reads whole-lane queues from the
/// simulator state (its threshold of 5 exceeds the 4-cell learned-agent
/// view).
pub fn sotl_queues(state: &TrafficState, net: &RoadNet, agent: AgentId) -> Vec<usize> {
    let junction = &net.graph.agents()[agent];
    junction
        .arm_slots()
        .iter()
        .map(|slot| match net.in_lanes[agent][slot.index()] {
            Some(lane) => state.cells[lane]
                .iter()
                .flatten()
                .filter(|vid| state.vehicles[vid].speed == 0)
                .count(),
            None => 0,
        })
        .collect()
}

/// SOTL's per-arm pressure: the halted queue plus its time integral,
/// measured as `sum over halted vehicles of (1 + waiting ticks)`. A fresh
/// queue contributes its length immediately; standing vehicles keep
/// accumulating, so no approach starves below the threshold forever.
pub fn sotl_pressure(state: &TrafficState, net: &RoadNet, agent: AgentId) -> Vec<f64> {
    let junction = &net.graph.agents()[agent];
    junction
        .arm_slots()
        .iter()
        .map(|slot| match net.in_lanes[agent][slot.index()] {
            Some(lane) => state.cells[lane]
                .iter()
                .flatten()
                .map(|vid| {
                    let v = &state.vehicles[vid];
                    if v.speed == 0 {
                        1.0 + f64::from(v.waiting)
                    } else {
                        0.0
                    }
                })
                .sum(),
            None => 0.0,
        })
        .collect()
}

/// Self-organizing traffic lights: if any red-served approach pressure
/// exceeds the threshold, switch to the phase serving the largest such
/// pressure (lowest action index wins ties); otherwise hold the current
/// phase.
pub fn sotl_policy(
    junction: &JunctionSpec,
    pressures: &[f64],
    current_phase: u8,
    threshold: f64,
) -> u8 {
    debug_assert_eq!(pressures.len(), junction.kind.action_count());
    let mut best: Option<(f64, usize)> = None;
    for (phase, &p) in pressures.iter().enumerate() {
        if phase == usize::from(current_phase) || p <= threshold {
            continue;
        }
        let better = match best {
            None => true,
            Some((bp, _)) => p > bp,
        };
        if better {
            best = Some((p, phase));
        }
    }
    match best {
        Some((_, phase)) => phase as u8,
        None => current_phase,
    }
}

/// Number of bits in the documented fixed-protocol layout.
pub const FIXED_PROTOCOL_BITS: usize = 14;

fn push_bits(out: &mut Vec<f64>, value: u32, bits: usize) {
    for i in (0..bits).rev() {
        out.push(f64::from((value >> i) & 1));
    }
}

/// Fixed-protocol message layout (big-endian fields, in order):
///
/// - bits 0..4: halted count, clamped to [0, 15]
/// - bits 4..8: waiting sum bucketed as floor(log2(1 + w)), clamped to [0, 15]
/// - bits 8..12: mean lane delay quantized to round(d * 15)
/// - bits 12..14: emergency brakes, clamped to [0, 3]
///
/// Padded with zeros or truncated (prefix kept) to the configured message
/// width.
pub fn encode_fixed_message(c: &RewardComponents, msg_bits: usize) -> Vec<f64> {
    let mut bits = Vec::with_capacity(FIXED_PROTOCOL_BITS);
    push_bits(&mut bits, c.halted.min(15), 4);
    let w_bucket = (f64::from(c.waiting_sum) + 1.0).log2().floor() as u32;
    push_bits(&mut bits, w_bucket.min(15), 4);
    let mean_delay = if c.lane_delays.is_empty() {
        1.0
    } else {
        c.lane_delays.iter().sum::<f64>() / c.lane_delays.len() as f64
    };
    push_bits(&mut bits, (mean_delay * 15.0).round().clamp(0.0, 15.0) as u32, 4);
    push_bits(&mut bits, c.brakes.min(3), 2);
    bits.resize(msg_bits, 0.0);
    bits
}

/// Marks the listed agents blind: their action selectors ignore the local
/// observation while communication stays active.
pub fn blind_wrapper(
    policies: &mut [AgentPolicy],
    blind: &BTreeSet<AgentId>,
) -> Result<(), PolicyError> {
    for &agent in blind {
        if agent >= policies.len() {
            return Err(PolicyError::UnknownAgent(agent));
        }
    }
    for p in policies.iter_mut() {
        p.blind = blind.contains(&p.agent);
    }
    Ok(())
}

/// Rollout mode for the blank-message ablation: every wire message becomes
/// the zero vector, cutting the communication channel while leaving the
/// training algorithm untouched.
pub fn blank_message_mode() -> CommMode {
    CommMode::Blank
}

/// Rollout mode for the fixed-communication baseline.
pub fn fixed_protocol_mode() -> CommMode {
    CommMode::FixedProtocol
}
