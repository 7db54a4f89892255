//! Per-agent partial observations as structured occupancy grids.
//!
//! Each agent sees only the 4 cells next to the stop line on each of its
//! incoming lanes, plus its own current phase. The grid has the same shape
//! for every agent: 3-way junctions zero-pad the missing arm and the mask
//! channel marks which arms exist.

use serde::{Deserialize, Serialize};

use crate::graphnet::{AgentId, GraphError, COMPASS};
use crate::traffic::{RoadNet, TrafficState, OBSERVABLE_CELLS};

/// Arm slots in the grid (compass order).
pub const ARMS: usize = 4;
/// Flattened length: 3 vehicle channels per arm-cell, phase one-hot, mask.
pub const FLAT_LEN: usize = ARMS * OBSERVABLE_CELLS * 3 + 4 + ARMS;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationGrid {
    /// Occupancy in {0,1}; `[arm][cell]`, cell 0 at the stop line.
    pub occupancy: [[f64; OBSERVABLE_CELLS]; ARMS],
    /// Vehicle speed / v_max in [0,1].
    pub speed: [[f64; OBSERVABLE_CELLS]; ARMS],
    /// 1.0 where an occupying vehicle is halted.
    pub waiting: [[f64; OBSERVABLE_CELLS]; ARMS],
    /// One-hot of the junction's current phase (action index), up to 4.
    pub phase: [f64; 4],
    /// 1.0 for arms that exist at this junction.
    pub arm_mask: [f64; ARMS],
}

impl ObservationGrid {
    /// Fixed-length vector; identical length for all agents.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FLAT_LEN);
        for arm in 0..ARMS {
            out.extend_from_slice(&self.occupancy[arm]);
            out.extend_from_slice(&self.speed[arm]);
            out.extend_from_slice(&self.waiting[arm]);
        }
        out.extend_from_slice(&self.phase);
        out.extend_from_slice(&self.arm_mask);
        out
    }

    /// Inverse of [`ObservationGrid::flatten`].
    pub fn unflatten(v: &[f64]) -> Option<ObservationGrid> {
        if v.len() != FLAT_LEN {
            return None;
        }
        let mut g = ObservationGrid::default();
        let mut at = 0;
        for arm in 0..ARMS {
            g.occupancy[arm].copy_from_slice(&v[at..at + OBSERVABLE_CELLS]);
            at += OBSERVABLE_CELLS;
            g.speed[arm].copy_from_slice(&v[at..at + OBSERVABLE_CELLS]);
            at += OBSERVABLE_CELLS;
            g.waiting[arm].copy_from_slice(&v[at..at + OBSERVABLE_CELLS]);
            at += OBSERVABLE_CELLS;
        }
        g.phase.copy_from_slice(&v[at..at + 4]);
        at += 4;
        g.arm_mask.copy_from_slice(&v[at..at + ARMS]);
        Some(g)
    }

    /// Vehicles visible per arm, used as the logged observation digest.
    pub fn occupancy_counts(&self) -> [u8; ARMS] {
        let mut counts = [0u8; ARMS];
        for arm in 0..ARMS {
            counts[arm] = self.occupancy[arm].iter().map(|&o| o as u8).sum();
        }
        counts
    }
}

/// Observes the state from `agent`'s junction.
///
/// Depends only on the cells of the agent's incoming observable regions and
/// its own phase, never on other junctions' phases or more distant cells.
pub fn observe(
    state: &TrafficState,
    net: &RoadNet,
    agent: AgentId,
    v_max: u8,
) -> Result<ObservationGrid, GraphError> {
    if agent >= net.graph.agent_count() {
        return Err(GraphError::UnknownAgent(agent));
    }
    let mut g = ObservationGrid::default();
    let junction = &net.graph.agents()[agent];
    for compass in COMPASS {
        let arm = compass.index();
        if junction.arms[arm].is_some() {
            g.arm_mask[arm] = 1.0;
        }
        let Some(lane_id) = net.in_lanes[agent][arm] else {
            continue;
        };
        let len = net.lanes[lane_id].len;
        for cell in 0..OBSERVABLE_CELLS {
            let pos = len - 1 - cell;
            let Some(vid) = state.cells[lane_id][pos] else {
                continue;
            };
            let vehicle = &state.vehicles[&vid];
            g.occupancy[arm][cell] = 1.0;
            g.speed[arm][cell] = f64::from(vehicle.speed) / f64::from(v_max);
            g.waiting[arm][cell] = if vehicle.speed == 0 { 1.0 } else { 0.0 };
        }
    }
    g.phase[usize::from(state.phases[agent])] = 1.0;
    Ok(g)
}
