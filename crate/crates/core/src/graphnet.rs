//! Agent network topologies: junctions, roads, communication edges, and
//! road-blocking perturbations.
//!
//! Junctions are the agents. Roads carry one lane per direction (a one-way
//! road carries a single forward lane) and induce the communication topology:
//! two agents may exchange messages iff at least one road connects them.
//! Blocking a road removes it from vehicle routing but never from the
//! communication edge set.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rngstream;

pub type AgentId = usize;
pub type RoadId = usize;

/// Minimum road length so the 4-cell observable queue region fits.
pub const MIN_ROAD_CELLS: usize = 6;
/// Default road length used by the built-in networks.
pub const DEFAULT_ROAD_CELLS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JunctionKind {
    ThreeWay,
    FourWay,
}

impl JunctionKind {
    /// Size of the action space: one phase per arm.
    pub fn action_count(self) -> usize {
        match self {
            JunctionKind::ThreeWay => 3,
            JunctionKind::FourWay => 4,
        }
    }
}

/// Compass slot of a junction arm. Arms are always reported in N, E, S, W
/// order so observation layouts are identical across agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Compass {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

pub const COMPASS: [Compass; 4] = [Compass::North, Compass::East, Compass::South, Compass::West];

impl Compass {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Compass {
        COMPASS[i % 4]
    }

    /// The opposite slot (straight-through exit for this approach).
    pub fn opposite(self) -> Compass {
        Compass::from_index(self.index() + 2)
    }

    pub fn label(self) -> char {
        match self {
            Compass::North => 'N',
            Compass::East => 'E',
            Compass::South => 'S',
            Compass::West => 'W',
        }
    }

    fn from_label(c: char) -> Option<Compass> {
        Some(match c {
            'N' => Compass::North,
            'E' => Compass::East,
            'S' => Compass::South,
            'W' => Compass::West,
            _ => return None,
        })
    }
}

/// One endpoint of a road: an agent junction or the world outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    Junction(AgentId),
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionSpec {
    pub id: AgentId,
    pub kind: JunctionKind,
    /// Incident road per compass slot; `None` marks the missing arm of a
    /// 3-way junction.
    pub arms: [Option<RoadId>; 4],
}

impl JunctionSpec {
    /// Existing arms in N, E, S, W order.
    pub fn arm_slots(&self) -> Vec<Compass> {
        COMPASS
            .iter()
            .copied()
            .filter(|c| self.arms[c.index()].is_some())
            .collect()
    }
}

/// Which directed lanes of a road are closed to vehicle entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockState {
    Open,
    /// The from->to lane is blocked.
    Forward,
    /// The to->from lane is blocked.
    Reverse,
    Both,
}

impl BlockState {
    pub fn forward_blocked(self) -> bool {
        matches!(self, BlockState::Forward | BlockState::Both)
    }

    pub fn reverse_blocked(self) -> bool {
        matches!(self, BlockState::Reverse | BlockState::Both)
    }

    pub fn any(self) -> bool {
        self != BlockState::Open
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub id: RoadId,
    /// Tail of the forward direction.
    pub from: Terminal,
    /// Head of the forward direction.
    pub to: Terminal,
    /// One-way roads carry only the forward lane.
    pub one_way: bool,
    pub length_cells: usize,
    pub blocked: BlockState,
}

impl RoadSpec {
    pub fn endpoints(&self) -> (Terminal, Terminal) {
        (self.from, self.to)
    }

    /// The two junction endpoints, if any.
    pub fn junctions(&self) -> impl Iterator<Item = AgentId> + '_ {
        [self.from, self.to].into_iter().filter_map(|t| match t {
            Terminal::Junction(j) => Some(j),
            Terminal::Boundary => None,
        })
    }

    pub fn is_internal(&self) -> bool {
        matches!(
            (self.from, self.to),
            (Terminal::Junction(_), Terminal::Junction(_))
        )
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked.any()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
    #[error("no blockable road in graph")]
    NoBlockableRoad,
    #[error("junction {junction}: arm count {arms} does not match kind")]
    ArmCountMismatch { junction: AgentId, arms: usize },
    #[error("road {road} is shorter than {MIN_ROAD_CELLS} cells")]
    RoadTooShort { road: RoadId },
    #[error("road {road} and junction {junction} arm tables disagree")]
    InconsistentArms { road: RoadId, junction: AgentId },
    #[error("graph is not connected")]
    Disconnected,
    #[error("only {available} distinct perturbations available, {wanted} requested")]
    InsufficientVariants { wanted: usize, available: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A validated junction network.
///
/// Immutable after construction; safe to share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentGraph {
    agents: Vec<JunctionSpec>,
    roads: Vec<RoadSpec>,
    comm_edges: BTreeSet<(AgentId, AgentId)>,
}

impl AgentGraph {
    /// Validates and assembles a graph. Connectivity is judged over all
    /// roads regardless of the blocked flag: blocking affects vehicle
    /// routing, not the physical (and communication) structure.
    pub fn new(agents: Vec<JunctionSpec>, roads: Vec<RoadSpec>) -> Result<Self, GraphError> {
        for (i, j) in agents.iter().enumerate() {
            if j.id != i {
                return Err(GraphError::UnknownAgent(j.id));
            }
            let arms = j.arms.iter().flatten().count();
            if arms != j.kind.action_count() {
                return Err(GraphError::ArmCountMismatch {
                    junction: j.id,
                    arms,
                });
            }
            for road in j.arms.iter().flatten() {
                let r = roads
                    .get(*road)
                    .ok_or(GraphError::InconsistentArms {
                        road: *road,
                        junction: j.id,
                    })?;
                if !r.junctions().any(|e| e == j.id) {
                    return Err(GraphError::InconsistentArms {
                        road: *road,
                        junction: j.id,
                    });
                }
            }
        }
        for (i, r) in roads.iter().enumerate() {
            if r.id != i {
                return Err(GraphError::InconsistentArms {
                    road: r.id,
                    junction: usize::MAX,
                });
            }
            if r.length_cells < MIN_ROAD_CELLS {
                return Err(GraphError::RoadTooShort { road: r.id });
            }
            for j in r.junctions() {
                let spec = agents.get(j).ok_or(GraphError::UnknownAgent(j))?;
                if !spec.arms.iter().flatten().any(|a| *a == r.id) {
                    return Err(GraphError::InconsistentArms {
                        road: r.id,
                        junction: j,
                    });
                }
            }
        }

        let mut comm_edges = BTreeSet::new();
        for r in &roads {
            if let (Terminal::Junction(a), Terminal::Junction(b)) = (r.from, r.to) {
                comm_edges.insert((a.min(b), a.max(b)));
            }
        }

        let graph = AgentGraph {
            agents,
            roads,
            comm_edges,
        };
        if !graph.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    pub fn agents(&self) -> &[JunctionSpec] {
        &self.agents
    }

    pub fn roads(&self) -> &[RoadSpec] {
        &self.roads
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn junction(&self, id: AgentId) -> Result<&JunctionSpec, GraphError> {
        self.agents.get(id).ok_or(GraphError::UnknownAgent(id))
    }

    pub fn comm_edges(&self) -> &BTreeSet<(AgentId, AgentId)> {
        &self.comm_edges
    }

    /// Agents that may exchange messages with `agent`. Symmetric, excludes
    /// self.
    pub fn neighbors(&self, agent: AgentId) -> Result<BTreeSet<AgentId>, GraphError> {
        if agent >= self.agents.len() {
            return Err(GraphError::UnknownAgent(agent));
        }
        Ok(self
            .comm_edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == agent {
                    Some(b)
                } else if b == agent {
                    Some(a)
                } else {
                    None
                }
            })
            .collect())
    }

    fn is_connected(&self) -> bool {
        if self.agents.is_empty() {
            return false;
        }
        if self.agents.len() == 1 {
            return true;
        }
        let mut seen = vec![false; self.agents.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for &(x, y) in &self.comm_edges {
                let other = if x == a {
                    y
                } else if y == a {
                    x
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Directed internal lanes that a perturbation may block, in road order.
    fn blockable_lanes(&self) -> Vec<(RoadId, BlockState)> {
        let mut lanes = Vec::new();
        for r in &self.roads {
            if r.is_internal() && !r.one_way {
                lanes.push((r.id, BlockState::Forward));
                lanes.push((r.id, BlockState::Reverse));
            }
        }
        lanes
    }

    /// Returns a copy with exactly one uniformly chosen internal directed
    /// lane marked blocked (roads carry one lane per direction, so this is
    /// the smallest unit a road closure can take). One-way connectors and
    /// boundary roads are never blocked. Deterministic given the seed; the
    /// original is unmodified.
    pub fn perturb(&self, rng_seed: u64) -> Result<AgentGraph, GraphError> {
        let candidates = self.blockable_lanes();
        if candidates.is_empty() {
            return Err(GraphError::NoBlockableRoad);
        }
        let mut rng = rngstream::substream(rng_seed, rngstream::PERTURB, &[]);
        let (road, state) = candidates[rng.gen_range(0..candidates.len())];
        let mut out = self.clone();
        for r in &mut out.roads {
            r.blocked = if r.id == road { state } else { BlockState::Open };
        }
        Ok(out)
    }

    /// The first `n` pairwise-distinct perturbed variants found by scanning
    /// seeds 0, 1, 2, ... deterministically.
    pub fn perturb_distinct(&self, n: usize) -> Result<Vec<AgentGraph>, GraphError> {
        let available = self.blockable_lanes().len();
        if available == 0 {
            return Err(GraphError::NoBlockableRoad);
        }
        if available < n {
            return Err(GraphError::InsufficientVariants {
                wanted: n,
                available,
            });
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        let mut seed = 0u64;
        while out.len() < n {
            let g = self.perturb(seed)?;
            let key: Vec<(RoadId, BlockState)> = g
                .roads
                .iter()
                .filter(|r| r.is_blocked())
                .map(|r| (r.id, r.blocked))
                .collect();
            if seen.insert(key) {
                out.push(g);
            }
            seed += 1;
        }
        Ok(out)
    }

    /// Ids of roads with any blocked lane.
    pub fn blocked_roads(&self) -> Vec<RoadId> {
        self.roads
            .iter()
            .filter(|r| r.is_blocked())
            .map(|r| r.id)
            .collect()
    }

    /// Serializes to the versioned structured-text format. Parsing the output
    /// reproduces the graph exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gridtalk-graph v1");
        let _ = writeln!(s, "junctions {}", self.agents.len());
        let _ = writeln!(s, "roads {}", self.roads.len());
        for j in &self.agents {
            let kind = match j.kind {
                JunctionKind::ThreeWay => "3way",
                JunctionKind::FourWay => "4way",
            };
            let arms: Vec<String> = COMPASS
                .iter()
                .map(|c| match j.arms[c.index()] {
                    Some(r) => format!("{}=r{}", c.label(), r),
                    None => format!("{}=-", c.label()),
                })
                .collect();
            let _ = writeln!(s, "junction {} {} {}", j.id, kind, arms.join(" "));
        }
        for r in &self.roads {
            let term = |t: Terminal| match t {
                Terminal::Junction(j) => format!("j{j}"),
                Terminal::Boundary => "boundary".to_string(),
            };
            let _ = writeln!(
                s,
                "road {} {} {} len={} {} {}",
                r.id,
                term(r.from),
                term(r.to),
                r.length_cells,
                if r.one_way { "one_way" } else { "two_way" },
                match r.blocked {
                    BlockState::Open => "open",
                    BlockState::Forward => "blocked_fwd",
                    BlockState::Reverse => "blocked_rev",
                    BlockState::Both => "blocked",
                },
            );
        }
        s
    }

    /// Parses the structured-text format produced by [`AgentGraph::to_text`].
    pub fn from_text(text: &str) -> Result<AgentGraph, GraphError> {
        let err = |line: usize, message: &str| GraphError::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (n, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        if header.trim() != "gridtalk-graph v1" {
            return Err(err(n + 1, "unsupported format or version"));
        }
        let mut agents: Vec<JunctionSpec> = Vec::new();
        let mut roads: Vec<RoadSpec> = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("junctions") | Some("roads") => {}
                Some("junction") => {
                    let id: AgentId = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(n + 1, "bad junction id"))?;
                    let kind = match tok.next() {
                        Some("3way") => JunctionKind::ThreeWay,
                        Some("4way") => JunctionKind::FourWay,
                        _ => return Err(err(n + 1, "bad junction kind")),
                    };
                    let mut arms = [None; 4];
                    for part in tok {
                        let (label, value) = part
                            .split_once('=')
                            .ok_or_else(|| err(n + 1, "bad arm entry"))?;
                        let slot = label
                            .chars()
                            .next()
                            .and_then(Compass::from_label)
                            .ok_or_else(|| err(n + 1, "bad arm label"))?;
                        if value != "-" {
                            let rid: RoadId = value
                                .strip_prefix('r')
                                .and_then(|v| v.parse().ok())
                                .ok_or_else(|| err(n + 1, "bad arm road id"))?;
                            arms[slot.index()] = Some(rid);
                        }
                    }
                    agents.push(JunctionSpec { id, kind, arms });
                }
                Some("road") => {
                    let id: RoadId = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(n + 1, "bad road id"))?;
                    let term = |t: Option<&str>| -> Result<Terminal, GraphError> {
                        match t {
                            Some("boundary") => Ok(Terminal::Boundary),
                            Some(s) => s
                                .strip_prefix('j')
                                .and_then(|v| v.parse().ok())
                                .map(Terminal::Junction)
                                .ok_or_else(|| err(n + 1, "bad terminal")),
                            None => Err(err(n + 1, "missing terminal")),
                        }
                    };
                    let from = term(tok.next())?;
                    let to = term(tok.next())?;
                    let length_cells: usize = tok
                        .next()
                        .and_then(|t| t.strip_prefix("len="))
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(n + 1, "bad length"))?;
                    let one_way = match tok.next() {
                        Some("one_way") => true,
                        Some("two_way") => false,
                        _ => return Err(err(n + 1, "bad directedness flag")),
                    };
                    let blocked = match tok.next() {
                        Some("open") => BlockState::Open,
                        Some("blocked_fwd") => BlockState::Forward,
                        Some("blocked_rev") => BlockState::Reverse,
                        Some("blocked") => BlockState::Both,
                        _ => return Err(err(n + 1, "bad blocked flag")),
                    };
                    roads.push(RoadSpec {
                        id,
                        from,
                        to,
                        one_way,
                        length_cells,
                        blocked,
                    });
                }
                Some(other) => {
                    return Err(GraphError::Parse {
                        line: n + 1,
                        message: format!("unknown record '{other}'"),
                    })
                }
                None => {}
            }
        }
        AgentGraph::new(agents, roads)
    }
}

/// Incremental assembly of a graph with compass-consistent arms.
#[derive(Default)]
pub struct GraphBuilder {
    arms: Vec<[Option<RoadId>; 4]>,
    roads: Vec<RoadSpec>,
}

impl GraphBuilder {
    pub fn with_agents(n: usize) -> Self {
        GraphBuilder {
            arms: vec![[None; 4]; n],
            roads: Vec::new(),
        }
    }

    fn attach(&mut self, j: AgentId, slot: Compass, road: RoadId) {
        assert!(
            self.arms[j][slot.index()].is_none(),
            "junction {j} arm {} already used",
            slot.label()
        );
        self.arms[j][slot.index()] = Some(road);
    }

    /// Two-way road between junctions; forward direction a→b.
    pub fn link(&mut self, a: AgentId, slot_a: Compass, b: AgentId, slot_b: Compass) -> RoadId {
        self.road(a, slot_a, b, slot_b, false)
    }

    /// One-way road a→b (a single forward lane).
    pub fn one_way(&mut self, a: AgentId, slot_a: Compass, b: AgentId, slot_b: Compass) -> RoadId {
        self.road(a, slot_a, b, slot_b, true)
    }

    fn road(
        &mut self,
        a: AgentId,
        slot_a: Compass,
        b: AgentId,
        slot_b: Compass,
        one_way: bool,
    ) -> RoadId {
        let id = self.roads.len();
        self.roads.push(RoadSpec {
            id,
            from: Terminal::Junction(a),
            to: Terminal::Junction(b),
            one_way,
            length_cells: DEFAULT_ROAD_CELLS,
            blocked: BlockState::Open,
        });
        self.attach(a, slot_a, id);
        self.attach(b, slot_b, id);
        id
    }

    /// Two-way boundary road at the given arm (source + sink for vehicles).
    pub fn boundary(&mut self, j: AgentId, slot: Compass) -> RoadId {
        let id = self.roads.len();
        self.roads.push(RoadSpec {
            id,
            from: Terminal::Junction(j),
            to: Terminal::Boundary,
            one_way: false,
            length_cells: DEFAULT_ROAD_CELLS,
            blocked: BlockState::Open,
        });
        self.attach(j, slot, id);
        id
    }

    pub fn finish(self) -> Result<AgentGraph, GraphError> {
        let agents = self
            .arms
            .iter()
            .enumerate()
            .map(|(id, arms)| {
                let kind = match arms.iter().flatten().count() {
                    3 => JunctionKind::ThreeWay,
                    _ => JunctionKind::FourWay,
                };
                JunctionSpec {
                    id,
                    kind,
                    arms: *arms,
                }
            })
            .collect();
        AgentGraph::new(agents, self.roads)
    }
}

/// The 10-agent network: a 3x3 arterial grid (agents 0..8, row-major) with
/// agent 9 appended east of agent 8. Deterministic across calls.
pub fn build_network1() -> AgentGraph {
    use Compass::*;
    let mut b = GraphBuilder::with_agents(10);
    // Grid rows.
    b.link(0, East, 1, West);
    b.link(1, East, 2, West);
    b.link(3, East, 4, West);
    b.link(4, East, 5, West);
    b.link(6, East, 7, West);
    b.link(7, East, 8, West);
    // Grid columns.
    b.link(0, South, 3, North);
    b.link(1, South, 4, North);
    b.link(2, South, 5, North);
    b.link(3, South, 6, North);
    b.link(4, South, 7, North);
    b.link(5, South, 8, North);
    // Appendage.
    b.link(8, East, 9, West);
    // Boundary arms.
    b.boundary(0, North);
    b.boundary(1, North);
    b.boundary(2, North);
    b.boundary(3, West);
    b.boundary(5, East);
    b.boundary(6, South);
    b.boundary(7, South);
    b.boundary(9, North);
    b.boundary(9, East);
    b.finish().expect("network 1 is valid")
}

/// Builds one 14-agent community of network 2 into `b` with agent ids offset
/// by `base`: a 3x4 grid (local 0..11, row-major) plus local 12 east of 11
/// and local 13 east of 3.
fn build_community(b: &mut GraphBuilder, base: AgentId) {
    use Compass::*;
    let a = |local: usize| base + local;
    // Grid rows.
    b.link(a(0), East, a(1), West);
    b.link(a(1), East, a(2), West);
    b.link(a(2), East, a(3), West);
    b.link(a(4), East, a(5), West);
    b.link(a(5), East, a(6), West);
    b.link(a(6), East, a(7), West);
    b.link(a(8), East, a(9), West);
    b.link(a(9), East, a(10), West);
    b.link(a(10), East, a(11), West);
    // Grid columns.
    b.link(a(0), South, a(4), North);
    b.link(a(1), South, a(5), North);
    b.link(a(2), South, a(6), North);
    b.link(a(3), South, a(7), North);
    b.link(a(4), South, a(8), North);
    b.link(a(5), South, a(9), North);
    b.link(a(6), South, a(10), North);
    b.link(a(7), South, a(11), North);
    // Appendages.
    b.link(a(11), East, a(12), West);
    b.link(a(3), East, a(13), West);
    // Boundary arms.
    b.boundary(a(1), North);
    b.boundary(a(2), North);
    b.boundary(a(4), West);
    b.boundary(a(7), East);
    b.boundary(a(8), South);
    b.boundary(a(9), South);
    b.boundary(a(10), South);
    b.boundary(a(12), North);
    b.boundary(a(12), East);
    b.boundary(a(13), North);
    b.boundary(a(0), North);
}

/// The 28-agent network: two structurally identical 14-agent communities
/// (A = agents 0..13, B = agents 14..27) joined by exactly two one-way
/// connector roads. Removing the connectors disconnects A from B.
pub fn build_network2() -> AgentGraph {
    use Compass::*;
    let mut b = GraphBuilder::with_agents(28);
    build_community(&mut b, 0);
    build_community(&mut b, 14);
    // Connectors: A's east appendage feeds B's north-west corner and back.
    b.one_way(13, East, 14, West);
    b.one_way(27, East, 0, West);
    b.finish().expect("network 2 is valid")
}

/// Agent ids of the two communities of network 2.
pub fn network2_partition() -> (Vec<AgentId>, Vec<AgentId>) {
    ((0..14).collect(), (14..28).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network1_meets_adjacency_constraints() {
        let g = build_network1();
        assert_eq!(g.agent_count(), 10);
        for (a, b) in [(0, 1), (1, 4), (3, 4), (4, 5), (4, 7)] {
            assert!(g.comm_edges().contains(&(a, b)), "missing edge {a}-{b}");
        }
        let n4 = g.neighbors(4).unwrap();
        assert_eq!(n4, BTreeSet::from([1, 3, 5, 7]));
        let kinds: Vec<JunctionKind> = g.agents().iter().map(|j| j.kind).collect();
        assert!(kinds.contains(&JunctionKind::ThreeWay));
        assert!(kinds.contains(&JunctionKind::FourWay));
    }

    #[test]
    fn network1_is_deterministic() {
        assert_eq!(build_network1().to_text(), build_network1().to_text());
        assert_eq!(build_network2().to_text(), build_network2().to_text());
    }

    #[test]
    fn network2_has_two_oneway_connectors() {
        let g = build_network2();
        assert_eq!(g.agent_count(), 28);
        let connectors: Vec<&RoadSpec> = g
            .roads()
            .iter()
            .filter(|r| {
                r.junctions()
                    .map(|j| usize::from(j >= 14))
                    .collect::<BTreeSet<_>>()
                    .len()
                    == 2
            })
            .collect();
        assert_eq!(connectors.len(), 2);
        assert!(connectors.iter().all(|r| r.one_way));

        // Removing the connectors splits the graph into the two communities.
        let connector_ids: BTreeSet<RoadId> = connectors.iter().map(|r| r.id).collect();
        let (com_a, com_b) = network2_partition();
        for part in [&com_a, &com_b] {
            let mut seen = BTreeSet::from([part[0]]);
            let mut stack = vec![part[0]];
            while let Some(x) = stack.pop() {
                for r in g.roads() {
                    if connector_ids.contains(&r.id) {
                        continue;
                    }
                    let js: Vec<AgentId> = r.junctions().collect();
                    if js.len() == 2 && js.contains(&x) {
                        let other = if js[0] == x { js[1] } else { js[0] };
                        if seen.insert(other) {
                            stack.push(other);
                        }
                    }
                }
            }
            assert_eq!(seen.len(), 14, "community internally connected");
            assert!(part.iter().all(|a| seen.contains(a)));
        }
    }

    #[test]
    fn neighbor_symmetry_holds_on_network2() {
        let g = build_network2();
        for i in 0..g.agent_count() {
            for j in g.neighbors(i).unwrap() {
                assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }

    #[test]
    fn neighbors_rejects_unknown_agent() {
        let g = build_network1();
        assert_eq!(g.neighbors(99), Err(GraphError::UnknownAgent(99)));
    }

    #[test]
    fn isolated_single_agent_has_no_neighbors() {
        use Compass::*;
        let mut b = GraphBuilder::with_agents(1);
        b.boundary(0, North);
        b.boundary(0, East);
        b.boundary(0, South);
        let g = b.finish().unwrap();
        assert!(g.neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn perturb_is_deterministic_and_blocks_one_internal_road() {
        let g = build_network1();
        let p1 = g.perturb(7).unwrap();
        let p2 = g.perturb(7).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.blocked_roads().len(), 1);
        let blocked = p1.roads()[p1.blocked_roads()[0]].clone();
        assert!(blocked.is_internal());
        assert!(matches!(
            blocked.blocked,
            BlockState::Forward | BlockState::Reverse
        ));
        assert!(g.blocked_roads().is_empty(), "original unmodified");
        assert_eq!(p1.comm_edges(), g.comm_edges());
    }

    #[test]
    fn perturb_covers_every_internal_road_and_direction() {
        let g = build_network1();
        let internal: BTreeSet<RoadId> = g
            .roads()
            .iter()
            .filter(|r| r.is_internal() && !r.one_way)
            .map(|r| r.id)
            .collect();
        let mut roads_hit = BTreeSet::new();
        let mut lanes_hit = BTreeSet::new();
        for seed in 0..1000 {
            let p = g.perturb(seed).unwrap();
            let road = p.blocked_roads()[0];
            roads_hit.insert(road);
            lanes_hit.insert((road, p.roads()[road].blocked));
        }
        assert_eq!(roads_hit, internal);
        assert_eq!(lanes_hit.len(), internal.len() * 2, "both directions seen");
    }

    #[test]
    fn perturb_distinct_yields_pairwise_distinct_variants() {
        let g = build_network1();
        let variants = g.perturb_distinct(25).unwrap();
        assert_eq!(variants.len(), 25);
        let keys: BTreeSet<Vec<(RoadId, BlockState)>> = variants
            .iter()
            .map(|v| {
                v.roads()
                    .iter()
                    .filter(|r| r.is_blocked())
                    .map(|r| (r.id, r.blocked))
                    .collect()
            })
            .collect();
        assert_eq!(keys.len(), 25);
        assert!(matches!(
            g.perturb_distinct(100).unwrap_err(),
            GraphError::InsufficientVariants { available: 26, .. }
        ));
    }

    #[test]
    fn perturb_never_blocks_network2_connectors() {
        let g = build_network2();
        for seed in 0..500 {
            let blocked = g.perturb(seed).unwrap().blocked_roads()[0];
            assert!(!g.roads()[blocked].one_way);
        }
    }

    #[test]
    fn text_round_trip_is_identity() {
        for g in [build_network1(), build_network2()] {
            let text = g.to_text();
            let parsed = AgentGraph::from_text(&text).unwrap();
            assert_eq!(parsed, g);
            assert_eq!(parsed.to_text(), text);
        }
        let p = build_network1().perturb(3).unwrap();
        assert_eq!(AgentGraph::from_text(&p.to_text()).unwrap(), p);
    }
}
