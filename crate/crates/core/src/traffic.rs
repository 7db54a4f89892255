//! Deterministic discrete-time traffic microsimulation over an [`AgentGraph`].
//!
//! Dynamics are a single-lane cellular automaton (accelerate, clamp to the
//! gap or a red stop line, random slowdown, advance) with traffic lights at
//! junctions. Phases use split signalling: phase `k` of a junction gives green
//! to every movement departing its `k`-th arm (N, E, S, W order), which keeps
//! simultaneously-green movements trivially conflict-free under the left-hand
//! traffic convention.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graphnet::{AgentGraph, AgentId, Compass, JunctionSpec, RoadId, Terminal, COMPASS};

pub type LaneId = usize;
pub type VehicleId = u64;

/// Cells next to the stop line that an agent (and the reward) can see,
/// per incoming lane.
pub const OBSERVABLE_CELLS: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Maximum speed in cells per tick.
    pub v_max: u8,
    /// Per-vehicle random slowdown probability per tick.
    pub p_slow: f64,
    /// Spawn probability per boundary source per tick.
    pub spawn_rate: f64,
    /// A speed drop greater than this many cells/tick counts as emergency
    /// braking.
    pub brake_threshold: u8,
    /// Turn weights; renormalized over the turns a junction actually offers.
    pub p_straight: f64,
    pub p_left: f64,
    pub p_right: f64,
    /// Episode length in ticks.
    pub episode_len: usize,
    /// Cap on the per-vehicle consecutive-waiting counter, keeping the
    /// waiting term on the same scale as the other reward components.
    pub waiting_cap: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v_max: 3,
            p_slow: 0.1,
            spawn_rate: 0.15,
            brake_threshold: 2,
            p_straight: 0.5,
            p_left: 0.25,
            p_right: 0.25,
            episode_len: 500,
            waiting_cap: 50,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrafficError {
    #[error("agent {agent}: action index {index} out of range")]
    InvalidAction { agent: AgentId, index: u8 },
    #[error("expected {expected} actions, got {got}")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("corrupt state snapshot: {0}")]
    CorruptSnapshot(String),
}

/// One legal traffic-light configuration: all movements departing one arm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phase {
    pub served_arm: Compass,
    /// Permitted (incoming arm, outgoing arm) movements.
    pub movements: Vec<(Compass, Compass)>,
}

/// Phase table for a junction: one phase per existing arm, in N, E, S, W
/// order. 4-way junctions have 4 actions, 3-way junctions have 3.
pub fn legal_actions(junction: &JunctionSpec) -> Vec<Phase> {
    let slots = junction.arm_slots();
    slots
        .iter()
        .map(|&served| Phase {
            served_arm: served,
            movements: slots
                .iter()
                .filter(|&&o| o != served)
                .map(|&o| (served, o))
                .collect(),
        })
        .collect()
}

/// A directed lane derived from a road.
#[derive(Clone, Debug)]
pub struct Lane {
    pub road: RoadId,
    pub from: Terminal,
    pub to: Terminal,
    pub len: usize,
    /// Arm slot of this road at the junction the lane flows into.
    pub arm_at_to: Option<Compass>,
    pub blocked: bool,
}

/// Precomputed routing tables for a graph. Immutable during simulation.
#[derive(Clone, Debug)]
pub struct RoadNet {
    pub graph: AgentGraph,
    pub lanes: Vec<Lane>,
    /// Per agent, per compass slot: the lane flowing into the junction.
    pub in_lanes: Vec<[Option<LaneId>; 4]>,
    /// Per agent, per compass slot: the lane flowing out of the junction.
    pub out_lanes: Vec<[Option<LaneId>; 4]>,
    /// Boundary-source lanes where vehicles may spawn.
    pub sources: Vec<LaneId>,
    /// Per agent, per approach arm: cumulative turn distribution over exit
    /// arms (blocked or absent exits excluded, weights renormalized).
    turns: Vec<[Vec<(Compass, f64)>; 4]>,
}

impl RoadNet {
    /// Derives lanes and routing tables; turn weights come from `cfg`.
    pub fn new(graph: &AgentGraph, cfg: &SimConfig) -> RoadNet {
        let n = graph.agent_count();
        let mut lanes: Vec<Lane> = Vec::new();
        let mut in_lanes = vec![[None; 4]; n];
        let mut out_lanes = vec![[None; 4]; n];

        let arm_of = |j: AgentId, road: RoadId| -> Compass {
            let spec = &graph.agents()[j];
            COMPASS
                .into_iter()
                .find(|c| spec.arms[c.index()] == Some(road))
                .expect("road listed in junction arms")
        };

        for road in graph.roads() {
            let mut push = |from: Terminal, to: Terminal, blocked: bool| {
                let arm_at_to = match to {
                    Terminal::Junction(j) => Some(arm_of(j, road.id)),
                    Terminal::Boundary => None,
                };
                let id = lanes.len();
                lanes.push(Lane {
                    road: road.id,
                    from,
                    to,
                    len: road.length_cells,
                    arm_at_to,
                    blocked,
                });
                if let Terminal::Junction(j) = to {
                    in_lanes[j][arm_of(j, road.id).index()] = Some(id);
                }
                if let Terminal::Junction(j) = from {
                    out_lanes[j][arm_of(j, road.id).index()] = Some(id);
                }
            };
            push(road.from, road.to, road.blocked.forward_blocked());
            if !road.one_way {
                push(road.to, road.from, road.blocked.reverse_blocked());
            }
        }

        let sources = lanes
            .iter()
            .enumerate()
            .filter(|(_, l)| l.from == Terminal::Boundary && !l.blocked)
            .map(|(i, _)| i)
            .collect();

        // Turn tables. Left-hand traffic: for heading h (= opposite of the
        // approach arm), the near-side (left) exit sits at (h+3) mod 4 and
        // the crossing (right) exit at (h+1) mod 4.
        let mut turns: Vec<[Vec<(Compass, f64)>; 4]> = vec![Default::default(); n];
        for (j, turn_row) in turns.iter_mut().enumerate() {
            for approach in COMPASS {
                let heading = approach.opposite();
                let mut options: Vec<(Compass, f64)> = Vec::new();
                for exit in COMPASS {
                    if exit == approach {
                        continue;
                    }
                    let Some(lane) = out_lanes[j][exit.index()] else {
                        continue;
                    };
                    if lanes[lane].blocked {
                        continue;
                    }
                    let w = if exit == heading {
                        cfg.p_straight
                    } else if exit.index() == (heading.index() + 3) % 4 {
                        cfg.p_left
                    } else {
                        cfg.p_right
                    };
                    options.push((exit, w));
                }
                let total: f64 = options.iter().map(|(_, w)| w).sum();
                let mut cum = 0.0;
                turn_row[approach.index()] = options
                    .into_iter()
                    .map(|(c, w)| {
                        cum += w / total;
                        (c, cum)
                    })
                    .collect();
            }
        }

        RoadNet {
            graph: graph.clone(),
            lanes,
            in_lanes,
            out_lanes,
            sources,
            turns,
        }
    }

    fn sample_turn(&self, j: AgentId, approach: Compass, rng: &mut ChaCha8Rng) -> Option<Compass> {
        let table = &self.turns[j][approach.index()];
        if table.is_empty() {
            return None;
        }
        let u: f64 = rng.gen();
        table
            .iter()
            .find(|(_, cum)| u < *cum)
            .or(table.last())
            .map(|(exit, _)| *exit)
    }

    /// Samples the turn a vehicle entering `lane` will take at the lane's
    /// end junction, if any.
    fn turn_for_lane(&self, lane: LaneId, rng: &mut ChaCha8Rng) -> Option<Compass> {
        match (self.lanes[lane].to, self.lanes[lane].arm_at_to) {
            (Terminal::Junction(j), Some(arm)) => self.sample_turn(j, arm, rng),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub lane: LaneId,
    pub pos: usize,
    pub speed: u8,
    /// Speed at the end of the previous tick, for brake detection.
    pub prev_speed: u8,
    /// Consecutive ticks at speed 0, capped at `SimConfig::waiting_cap`.
    pub waiting: u32,
    /// Exit arm the vehicle will take at the junction its lane flows into.
    pub turn_to: Option<Compass>,
    pub entry_tick: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    pub tick: u64,
    /// Per junction: current phase as an action index into `legal_actions`.
    pub phases: Vec<u8>,
    /// Per lane: cell occupancy.
    pub cells: Vec<Vec<Option<VehicleId>>>,
    pub vehicles: BTreeMap<VehicleId, Vehicle>,
    next_vehicle_id: VehicleId,
}

impl TrafficState {
    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }
}

/// Empty state: no vehicles, all junctions at phase 0, tick 0.
pub fn init_state(net: &RoadNet, _config: &SimConfig, _rng_seed: u64) -> TrafficState {
    TrafficState {
        tick: 0,
        phases: vec![0; net.graph.agent_count()],
        cells: net.lanes.iter().map(|l| vec![None; l.len]).collect(),
        vehicles: BTreeMap::new(),
        next_vehicle_id: 0,
    }
}

/// Per-junction reward ingredients measured after a tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    /// Vehicles at speed 0 on the junction's incoming observable cells.
    pub halted: u32,
    /// Sum of the (capped) waiting counters of those halted vehicles.
    pub waiting_sum: u32,
    /// Per incoming lane: mean speed / v_max, 1.0 for empty lanes.
    pub lane_delays: Vec<f64>,
    /// Vehicles on incoming lanes that braked harder than the threshold.
    pub brakes: u32,
}

/// Scalar reward: `-(halted + waiting - sum(delays) + brakes)`, unit weights.
pub fn reward(c: &RewardComponents) -> f64 {
    let delays: f64 = c.lane_delays.iter().sum();
    -(f64::from(c.halted) + f64::from(c.waiting_sum) - delays + f64::from(c.brakes))
}

/// Vehicle bookkeeping from one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepDelta {
    pub spawned: usize,
    pub exited: usize,
}

/// True iff the vehicle count evolved consistently with spawns and exits.
pub fn conservation_audit(
    state: &TrafficState,
    next: &TrafficState,
    spawned: usize,
    exited: usize,
) -> bool {
    state.vehicle_count() + spawned == next.vehicle_count() + exited
}

/// Index of the first occupied cell, or the lane length if empty.
fn free_prefix(cells: &[Option<VehicleId>]) -> usize {
    cells.iter().position(|c| c.is_some()).unwrap_or(cells.len())
}

fn served_arm(junction: &JunctionSpec, phase: u8) -> Compass {
    junction.arm_slots()[phase as usize]
}

/// Advances the simulation by one tick.
///
/// Sets phases from `actions`, applies the cellular-automaton speed and
/// movement rules (junction crossing only on green, spawn and exit handling
/// at boundaries), and measures per-agent [`RewardComponents`] on the
/// resulting state. Pure in `(state, actions, rng)`: identical inputs give
/// identical outputs.
pub fn step(
    state: &TrafficState,
    actions: &[u8],
    net: &RoadNet,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrafficState, Vec<RewardComponents>, StepDelta), TrafficError> {
    let n_agents = net.graph.agent_count();
    if actions.len() != n_agents {
        return Err(TrafficError::ActionCountMismatch {
            expected: n_agents,
            got: actions.len(),
        });
    }
    for (agent, &a) in actions.iter().enumerate() {
        if usize::from(a) >= net.graph.agents()[agent].kind.action_count() {
            return Err(TrafficError::InvalidAction { agent, index: a });
        }
    }

    let mut next = state.clone();
    next.phases = actions.to_vec();
    next.tick = state.tick + 1;
    let mut delta = StepDelta::default();

    let old_cells = state.cells.clone();

    // Speed pass: accelerate, clamp to the gap / stop line / junction
    // headroom, then random slowdown. Reads only the snapshot.
    for (lane_id, lane) in net.lanes.iter().enumerate() {
        for pos in (0..lane.len).rev() {
            let Some(vid) = old_cells[lane_id][pos] else {
                continue;
            };
            let vehicle = next.vehicles.get_mut(&vid).expect("vehicle in table");
            let mut v = usize::from(vehicle.speed.saturating_add(1).min(cfg.v_max));
            let gap_ahead = (pos + 1..lane.len)
                .find(|&p| old_cells[lane_id][p].is_some())
                .map(|p| p - pos - 1);
            let max_adv = match gap_ahead {
                Some(gap) => gap,
                None => {
                    let to_end = lane.len - 1 - pos;
                    match (lane.to, lane.arm_at_to) {
                        (Terminal::Boundary, _) => to_end + usize::from(cfg.v_max) + 1,
                        (Terminal::Junction(j), Some(arm)) => {
                            let junction = &net.graph.agents()[j];
                            let green = served_arm(junction, next.phases[j]) == arm;
                            match (green, vehicle.turn_to) {
                                (true, Some(exit)) => {
                                    let target = net.out_lanes[j][exit.index()]
                                        .expect("turn targets an existing lane");
                                    to_end + free_prefix(&old_cells[target])
                                }
                                _ => to_end,
                            }
                        }
                        (Terminal::Junction(_), None) => to_end,
                    }
                }
            };
            v = v.min(max_adv);
            if rng.gen::<f64>() < cfg.p_slow {
                v = v.saturating_sub(1);
            }
            vehicle.prev_speed = vehicle.speed;
            vehicle.speed = v as u8;
        }
    }

    // Movement pass: apply displacements against the live grid, crossing
    // junctions or exiting at boundary sinks. Under split phasing all
    // vehicles entering a lane in one tick come from the same source lane,
    // so downstream-first processing is collision-free by construction.
    for (lane_id, lane) in net.lanes.iter().enumerate() {
        for pos in (0..lane.len).rev() {
            let Some(vid) = old_cells[lane_id][pos] else {
                continue;
            };
            let speed = usize::from(next.vehicles[&vid].speed);
            if speed == 0 {
                let vehicle = next.vehicles.get_mut(&vid).unwrap();
                vehicle.waiting = (vehicle.waiting + 1).min(cfg.waiting_cap);
                continue;
            }
            let linear = pos + speed;
            if linear < lane.len {
                next.cells[lane_id][pos] = None;
                next.cells[lane_id][linear] = Some(vid);
                let vehicle = next.vehicles.get_mut(&vid).unwrap();
                vehicle.pos = linear;
                vehicle.waiting = 0;
                continue;
            }
            match lane.to {
                Terminal::Boundary => {
                    next.cells[lane_id][pos] = None;
                    next.vehicles.remove(&vid);
                    delta.exited += 1;
                }
                Terminal::Junction(j) => {
                    let exit = next.vehicles[&vid]
                        .turn_to
                        .expect("crossing vehicles have a sampled turn");
                    let target = net.out_lanes[j][exit.index()].expect("target lane exists");
                    let mut q = (linear - lane.len) as isize;
                    while q >= 0 && next.cells[target][q as usize].is_some() {
                        q -= 1; // defensive; unreachable under split phasing
                    }
                    if q < 0 {
                        // No room after all: hold at the stop line.
                        let new_pos = lane.len - 1;
                        next.cells[lane_id][pos] = None;
                        next.cells[lane_id][new_pos] = Some(vid);
                        let vehicle = next.vehicles.get_mut(&vid).unwrap();
                        vehicle.pos = new_pos;
                        vehicle.speed = (new_pos - pos) as u8;
                        if vehicle.speed == 0 {
                            vehicle.waiting = (vehicle.waiting + 1).min(cfg.waiting_cap);
                        } else {
                            vehicle.waiting = 0;
                        }
                    } else {
                        let q = q as usize;
                        next.cells[lane_id][pos] = None;
                        next.cells[target][q] = Some(vid);
                        let turn = net.turn_for_lane(target, rng);
                        let vehicle = next.vehicles.get_mut(&vid).unwrap();
                        vehicle.lane = target;
                        vehicle.pos = q;
                        vehicle.speed = (lane.len - 1 - pos + 1 + q) as u8;
                        vehicle.waiting = 0;
                        vehicle.turn_to = turn;
                    }
                }
            }
        }
    }

    // Spawn pass.
    for &src in &net.sources {
        if rng.gen::<f64>() < cfg.spawn_rate && next.cells[src][0].is_none() {
            let turn = net.turn_for_lane(src, rng);
            let id = next.next_vehicle_id;
            next.next_vehicle_id += 1;
            next.cells[src][0] = Some(id);
            next.vehicles.insert(
                id,
                Vehicle {
                    id,
                    lane: src,
                    pos: 0,
                    speed: 1,
                    prev_speed: 1,
                    waiting: 0,
                    turn_to: turn,
                    entry_tick: next.tick,
                },
            );
            delta.spawned += 1;
        }
    }

    let components = measure_components(&next, net, cfg);
    Ok((next, components, delta))
}

/// Measures [`RewardComponents`] for every agent on a state.
pub fn measure_components(
    state: &TrafficState,
    net: &RoadNet,
    cfg: &SimConfig,
) -> Vec<RewardComponents> {
    (0..net.graph.agent_count())
        .map(|j| {
            let mut c = RewardComponents::default();
            for compass in COMPASS {
                let Some(lane_id) = net.in_lanes[j][compass.index()] else {
                    continue;
                };
                let lane = &net.lanes[lane_id];
                let mut speed_sum = 0u32;
                let mut count = 0u32;
                for cell in &state.cells[lane_id] {
                    let Some(vid) = cell else { continue };
                    let vehicle = &state.vehicles[vid];
                    count += 1;
                    speed_sum += u32::from(vehicle.speed);
                    if vehicle.prev_speed.saturating_sub(vehicle.speed) > cfg.brake_threshold {
                        c.brakes += 1;
                    }
                }
                c.lane_delays.push(if count == 0 {
                    1.0
                } else {
                    f64::from(speed_sum) / (f64::from(count) * f64::from(cfg.v_max))
                });
                for pos in lane.len.saturating_sub(OBSERVABLE_CELLS)..lane.len {
                    let Some(vid) = state.cells[lane_id][pos] else {
                        continue;
                    };
                    let vehicle = &state.vehicles[&vid];
                    if vehicle.speed == 0 {
                        c.halted += 1;
                        c.waiting_sum += vehicle.waiting;
                    }
                }
            }
            c
        })
        .collect()
}

/// Plain-text lane dump for debugging: one row per lane, one char per cell
/// ('.' empty, digit = vehicle speed), flowing left to right.
pub fn render_text(state: &TrafficState, net: &RoadNet) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let term = |t: Terminal| match t {
        Terminal::Junction(j) => format!("j{j}"),
        Terminal::Boundary => "b".to_string(),
    };
    let _ = writeln!(out, "tick {}", state.tick);
    for (i, lane) in net.lanes.iter().enumerate() {
        let row: String = state.cells[i]
            .iter()
            .map(|c| match c {
                Some(vid) => {
                    char::from_digit(u32::from(state.vehicles[vid].speed), 10).unwrap_or('?')
                }
                None => '.',
            })
            .collect();
        let _ = writeln!(
            out,
            "lane {i:3} {:>3}->{:<3} |{row}>",
            term(lane.from),
            term(lane.to)
        );
    }
    out
}

// Versioned binary state snapshot for replay.

const SNAPSHOT_MAGIC: &[u8; 8] = b"GTSIM001";

impl TrafficState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&self.tick.to_le_bytes());
        out.extend_from_slice(&(self.phases.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.phases);
        out.extend_from_slice(&(self.cells.len() as u32).to_le_bytes());
        for lane in &self.cells {
            out.extend_from_slice(&(lane.len() as u32).to_le_bytes());
            for cell in lane {
                out.extend_from_slice(&cell.unwrap_or(u64::MAX).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.vehicles.len() as u32).to_le_bytes());
        for v in self.vehicles.values() {
            out.extend_from_slice(&v.id.to_le_bytes());
            out.extend_from_slice(&(v.lane as u64).to_le_bytes());
            out.extend_from_slice(&(v.pos as u32).to_le_bytes());
            out.push(v.speed);
            out.push(v.prev_speed);
            out.extend_from_slice(&v.waiting.to_le_bytes());
            out.push(v.turn_to.map_or(255, |c| c.index() as u8));
            out.extend_from_slice(&v.entry_tick.to_le_bytes());
        }
        out.extend_from_slice(&self.next_vehicle_id.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrafficState, TrafficError> {
        fn corrupt(m: &str) -> TrafficError {
            TrafficError::CorruptSnapshot(m.to_string())
        }
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TrafficError> {
            if at + n > bytes.len() {
                return Err(corrupt("truncated"));
            }
            let s = &bytes[at..at + n];
            at += n;
            Ok(s)
        };
        if take(8)? != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic or version"));
        }
        let tick = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let n_phases = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let phases = take(n_phases)?.to_vec();
        let n_lanes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut cells = Vec::with_capacity(n_lanes);
        for _ in 0..n_lanes {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut lane = Vec::with_capacity(len);
            for _ in 0..len {
                let raw = u64::from_le_bytes(take(8)?.try_into().unwrap());
                lane.push(if raw == u64::MAX { None } else { Some(raw) });
            }
            cells.push(lane);
        }
        let n_vehicles = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut vehicles = BTreeMap::new();
        for _ in 0..n_vehicles {
            let id = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let lane = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let pos = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let speed = take(1)?[0];
            let prev_speed = take(1)?[0];
            let waiting = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let turn_to = match take(1)?[0] {
                255 => None,
                i if i < 4 => Some(Compass::from_index(i as usize)),
                _ => return Err(corrupt("bad turn value")),
            };
            let entry_tick = u64::from_le_bytes(take(8)?.try_into().unwrap());
            vehicles.insert(
                id,
                Vehicle {
                    id,
                    lane,
                    pos,
                    speed,
                    prev_speed,
                    waiting,
                    turn_to,
                    entry_tick,
                },
            );
        }
        let next_vehicle_id = u64::from_le_bytes(take(8)?.try_into().unwrap());
        Ok(TrafficState {
            tick,
            phases,
            cells,
            vehicles,
            next_vehicle_id,
        })
    }
}
