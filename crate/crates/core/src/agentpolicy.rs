//! Per-agent policies: observation encoder, communicator, and action
//! selector, plus the one-tick-delay message bus.
//!
//! Every agent owns its parameters by default (an optional weight-sharing
//! flag exists for sample efficiency at small scale). Messages are broadcast
//! every tick; actions are taken at the last tick of each 5-tick window. A
//! message posted at tick `t` is readable by neighbors at tick `t+1` only:
//! the bus is double-buffered so all agents within a tick read the same
//! snapshot regardless of processing order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    attention_aggregate, dense_layer, gumbel_binary, lstm_step, xavier_uniform, DiffError,
    LstmNodes, LstmParamIds, NodeId, ParamId, ParamStore, Tape,
};
use crate::graphnet::{AgentGraph, AgentId};
use crate::obsgrid::{ObservationGrid, FLAT_LEN};

/// Ticks per action window.
pub const WINDOW: usize = 5;

/// A broadcast message: d bits on the wire.
pub type MessageVec = Vec<f64>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Observation-encoder LSTM hidden size.
    pub hidden: usize,
    /// Message-history LSTM hidden size.
    pub msg_hidden: usize,
    /// Message width d; the vocabulary is {0,1}^d.
    pub msg_bits: usize,
    /// Share encoder/communicator weights across agents (action heads are
    /// shared per junction kind). Off by default: each agent owns its
    /// modules.
    pub share_weights: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 32,
            msg_hidden: 32,
            msg_bits: 8,
            share_weights: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("agent {agent}: action requested at tick {tick}, not a window end")]
    WrongTick { agent: AgentId, tick: u64 },
    #[error("agent {agent} received a message from non-neighbor {sender}")]
    NonNeighborMessage { agent: AgentId, sender: AgentId },
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
}

/// Resolved parameter ids of one agent's three modules.
#[derive(Clone, Copy, Debug)]
pub struct PolicyParams {
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub enc_lstm: LstmParamIds,
    pub msg_w: ParamId,
    pub msg_b: ParamId,
    pub att_w: ParamId,
    pub msg_lstm: LstmParamIds,
    pub act_obs_w: ParamId,
    pub act_obs_b: ParamId,
    pub act_msg_w: ParamId,
    pub act_msg_b: ParamId,
}

/// One agent's policy: parameter handles plus the blind ablation flag.
#[derive(Clone, Debug)]
pub struct AgentPolicy {
    pub agent: AgentId,
    pub action_count: usize,
    /// A blind agent ignores its own observation when selecting actions; it
    /// still encodes observations, broadcasts, and receives messages.
    pub blind: bool,
    pub params: PolicyParams,
}

fn register_block(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &PolicyConfig,
    action_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyParams, DiffError> {
    let h = cfg.hidden;
    let m = cfg.msg_hidden;
    let d = cfg.msg_bits;
    let enc_w = store.register(
        &format!("{prefix}/enc/w"),
        &[h, FLAT_LEN],
        xavier_uniform(rng, FLAT_LEN, h, h * FLAT_LEN),
    )?;
    let enc_b = store.register(&format!("{prefix}/enc/b"), &[h], vec![0.0; h])?;
    let enc_lstm = LstmParamIds::register(store, &format!("{prefix}/enc/lstm"), h, h, rng)?;
    let msg_w = store.register(
        &format!("{prefix}/comm/msg_w"),
        &[2 * d, h],
        xavier_uniform(rng, h, 2 * d, 2 * d * h),
    )?;
    let msg_b = store.register(&format!("{prefix}/comm/msg_b"), &[2 * d], vec![0.0; 2 * d])?;
    let att_w = store.register(
        &format!("{prefix}/comm/att_w"),
        &[d, h],
        xavier_uniform(rng, h, d, d * h),
    )?;
    let msg_lstm = LstmParamIds::register(store, &format!("{prefix}/comm/lstm"), d, m, rng)?;
    let act_obs_w = store.register(
        &format!("{prefix}/act/obs_w"),
        &[action_count, h],
        xavier_uniform(rng, h, action_count, action_count * h),
    )?;
    let act_obs_b = store.register(
        &format!("{prefix}/act/obs_b"),
        &[action_count],
        vec![0.0; action_count],
    )?;
    let act_msg_w = store.register(
        &format!("{prefix}/act/msg_w"),
        &[action_count, m],
        xavier_uniform(rng, m, action_count, action_count * m),
    )?;
    let act_msg_b = store.register(
        &format!("{prefix}/act/msg_b"),
        &[action_count],
        vec![0.0; action_count],
    )?;
    Ok(PolicyParams {
        enc_w,
        enc_b,
        enc_lstm,
        msg_w,
        msg_b,
        att_w,
        msg_lstm,
        act_obs_w,
        act_obs_b,
        act_msg_w,
        act_msg_b,
    })
}

/// Registers policies for every agent of a graph into `store`.
///
/// Initialization is drawn from per-agent substreams of `init_seed`, so the
/// result is independent of registration order.
pub fn build_policies(
    graph: &AgentGraph,
    cfg: &PolicyConfig,
    store: &mut ParamStore,
    init_seed: u64,
) -> Result<Vec<AgentPolicy>, DiffError> {
    let mut shared: Option<PolicyParams> = None;
    let mut shared_by_kind: [Option<(ParamId, ParamId, ParamId, ParamId)>; 2] = [None, None];
    let mut policies = Vec::with_capacity(graph.agent_count());
    for junction in graph.agents() {
        let action_count = junction.kind.action_count();
        let params = if cfg.share_weights {
            let kind_slot = action_count - 3;
            let mut rng = crate::rngstream::substream(init_seed, crate::rngstream::INIT, &[9000]);
            let base = match shared {
                Some(p) => p,
                None => {
                    let p = register_block(store, "shared", cfg, 4, &mut rng)?;
                    shared = Some(p);
                    p
                }
            };
            let heads = match shared_by_kind[kind_slot] {
                Some(h) => h,
                None => {
                    let mut rng = crate::rngstream::substream(
                        init_seed,
                        crate::rngstream::INIT,
                        &[9100 + kind_slot as u64],
                    );
                    let prefix = format!("shared/act{action_count}");
                    let w1 = store.register(
                        &format!("{prefix}/obs_w"),
                        &[action_count, cfg.hidden],
                        xavier_uniform(&mut rng, cfg.hidden, action_count, action_count * cfg.hidden),
                    )?;
                    let b1 = store.register(
                        &format!("{prefix}/obs_b"),
                        &[action_count],
                        vec![0.0; action_count],
                    )?;
                    let w2 = store.register(
                        &format!("{prefix}/msg_w"),
                        &[action_count, cfg.msg_hidden],
                        xavier_uniform(
                            &mut rng,
                            cfg.msg_hidden,
                            action_count,
                            action_count * cfg.msg_hidden,
                        ),
                    )?;
                    let b2 = store.register(
                        &format!("{prefix}/msg_b"),
                        &[action_count],
                        vec![0.0; action_count],
                    )?;
                    let h = (w1, b1, w2, b2);
                    shared_by_kind[kind_slot] = Some(h);
                    h
                }
            };
            PolicyParams {
                act_obs_w: heads.0,
                act_obs_b: heads.1,
                act_msg_w: heads.2,
                act_msg_b: heads.3,
                ..base
            }
        } else {
            let mut rng = crate::rngstream::substream(
                init_seed,
                crate::rngstream::INIT,
                &[junction.id as u64],
            );
            register_block(
                store,
                &format!("agent{:02}", junction.id),
                cfg,
                action_count,
                &mut rng,
            )?
        };
        policies.push(AgentPolicy {
            agent: junction.id,
            action_count,
            blind: false,
            params,
        });
    }
    Ok(policies)
}

/// Per-episode recurrent state of one agent, carried across tape segments.
pub struct PolicyRuntime {
    enc_h: Vec<f64>,
    enc_c: Vec<f64>,
    msg_h: Vec<f64>,
    msg_c: Vec<f64>,
    enc_nodes: Option<LstmNodes>,
    msg_nodes: Option<LstmNodes>,
}

impl PolicyRuntime {
    /// Fresh state for an episode start (LSTM states reset to zero).
    pub fn new(cfg: &PolicyConfig) -> PolicyRuntime {
        PolicyRuntime {
            enc_h: vec![0.0; cfg.hidden],
            enc_c: vec![0.0; cfg.hidden],
            msg_h: vec![0.0; cfg.msg_hidden],
            msg_c: vec![0.0; cfg.msg_hidden],
            enc_nodes: None,
            msg_nodes: None,
        }
    }

    /// Copies current state values out of a segment's tape; gradients are cut
    /// here when the next segment rebinds them as constants.
    pub fn harvest(&mut self, tape: &Tape) {
        if let Some(nodes) = self.enc_nodes.take() {
            self.enc_h.copy_from_slice(tape.val(nodes.h));
            self.enc_c.copy_from_slice(tape.val(nodes.c));
        }
        if let Some(nodes) = self.msg_nodes.take() {
            self.msg_h.copy_from_slice(tape.val(nodes.h));
            self.msg_c.copy_from_slice(tape.val(nodes.c));
        }
    }

    fn enc_nodes(&mut self, tape: &mut Tape) -> LstmNodes {
        *self.enc_nodes.get_or_insert_with(|| LstmNodes {
            h: tape.input(&self.enc_h),
            c: tape.input(&self.enc_c),
        })
    }

    fn msg_nodes(&mut self, tape: &mut Tape) -> LstmNodes {
        *self.msg_nodes.get_or_insert_with(|| LstmNodes {
            h: tape.input(&self.msg_h),
            c: tape.input(&self.msg_c),
        })
    }

    /// Encoder hidden-state value (for diagnostics).
    pub fn encoder_hidden(&self, tape: Option<&Tape>) -> Vec<f64> {
        match (self.enc_nodes, tape) {
            (Some(nodes), Some(tape)) => tape.val(nodes.h).to_vec(),
            _ => self.enc_h.clone(),
        }
    }
}

/// One slot of the message bus.
#[derive(Clone, Debug)]
pub struct BusMsg {
    pub sender: AgentId,
    pub bits: MessageVec,
    /// Tape node of the sender's message head; present only while sender and
    /// receiver share a tape segment (the cross-agent gradient path).
    pub node: Option<NodeId>,
}

/// Double-buffered broadcast slots: writers post into the next tick, readers
/// see only the previous tick.
pub struct MessageBus {
    prev: Vec<Option<BusMsg>>,
    next: Vec<Option<BusMsg>>,
}

impl MessageBus {
    pub fn new(agents: usize) -> MessageBus {
        MessageBus {
            prev: vec![None; agents],
            next: vec![None; agents],
        }
    }

    /// Posts this tick's outgoing broadcast; neighbors read it next tick.
    pub fn post(&mut self, msg: BusMsg) {
        let sender = msg.sender;
        self.next[sender] = Some(msg);
    }

    /// Messages visible to `agent` this tick: the previous tick's broadcasts
    /// of its graph neighbors, in ascending sender order.
    pub fn inbox(&self, graph: &AgentGraph, agent: AgentId) -> Vec<&BusMsg> {
        let neighbors = graph.neighbors(agent).expect("valid agent");
        neighbors
            .iter()
            .filter_map(|j| self.prev[*j].as_ref())
            .collect()
    }

    /// Tick boundary: this tick's posts become visible, slots clear.
    pub fn advance(&mut self) {
        self.prev = std::mem::take(&mut self.next);
        self.next = vec![None; self.prev.len()];
    }

    /// Cuts cross-segment gradient paths by dropping tape node references
    /// (message values stay on the wire).
    pub fn invalidate_nodes(&mut self) {
        for slot in self.prev.iter_mut().chain(self.next.iter_mut()) {
            if let Some(msg) = slot {
                msg.node = None;
            }
        }
    }
}

/// Message sampling behavior for one rollout.
#[derive(Clone, Copy, Debug)]
pub struct MsgSampling {
    pub tau: f64,
    /// Straight-through hard bits (0/1 on the wire) when sampling.
    pub hard: bool,
    /// Deterministic execution: bit k is 1 iff its logit pair favors 1, no
    /// Gumbel noise drawn.
    pub greedy: bool,
}

/// Output of the communicator for one tick.
#[derive(Debug)]
pub struct CommOut {
    /// Broadcast bits (exactly 0/1 under hard sampling).
    pub outgoing_bits: MessageVec,
    pub outgoing_node: NodeId,
    /// Attention weights over the inbox, aligned with its order.
    pub attention: Vec<f64>,
    /// Message-history summary node.
    pub qhat: NodeId,
}

/// Encoder: dense + ReLU over the flattened grid, then one LSTM step.
/// Returns the tick summary h.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    policy: &AgentPolicy,
    rt: &mut PolicyRuntime,
    obs: &ObservationGrid,
) -> Result<NodeId, PolicyError> {
    let x = tape.input(&obs.flatten());
    let lin = dense_layer(tape, store, x, policy.params.enc_w, Some(policy.params.enc_b))?;
    let pre = tape.relu(lin);
    let state = rt.enc_nodes(tape);
    let next = lstm_step(tape, store, pre, state, policy.params.enc_lstm)?;
    rt.enc_nodes = Some(next);
    Ok(next.h)
}

/// Communicator: Gumbel-Softmax message head plus attention aggregation of
/// the inbox and the message-history LSTM. An empty inbox aggregates to the
/// zero vector.
#[allow(clippy::too_many_arguments)]
pub fn communicate(
    tape: &mut Tape,
    store: &ParamStore,
    policy: &AgentPolicy,
    rt: &mut PolicyRuntime,
    graph: &AgentGraph,
    h: NodeId,
    inbox: &[&BusMsg],
    sampling: MsgSampling,
    rng: &mut ChaCha8Rng,
) -> Result<CommOut, PolicyError> {
    let neighbors = graph
        .neighbors(policy.agent)
        .map_err(|_| PolicyError::UnknownAgent(policy.agent))?;
    for msg in inbox {
        if !neighbors.contains(&msg.sender) {
            return Err(PolicyError::NonNeighborMessage {
                agent: policy.agent,
                sender: msg.sender,
            });
        }
    }

    let logits = dense_layer(tape, store, h, policy.params.msg_w, Some(policy.params.msg_b))?;
    let outgoing_node = if sampling.greedy {
        let lv = tape.val(logits);
        let bits: Vec<f64> = lv
            .chunks_exact(2)
            .map(|pair| if pair[0] > pair[1] { 1.0 } else { 0.0 })
            .collect();
        tape.input(&bits)
    } else {
        gumbel_binary(tape, logits, sampling.tau, sampling.hard, rng)?
    };
    let outgoing_bits = tape.val(outgoing_node).to_vec();

    let d = outgoing_bits.len();
    let (qbar, attention) = if inbox.is_empty() {
        (tape.zeros(d), Vec::new())
    } else {
        let query = dense_layer(tape, store, h, policy.params.att_w, None)?;
        let nodes: Vec<NodeId> = inbox
            .iter()
            .map(|m| m.node.unwrap_or_else(|| tape.input(&m.bits)))
            .collect();
        attention_aggregate(tape, query, &nodes)?
    };
    let state = rt.msg_nodes(tape);
    let next = lstm_step(tape, store, qbar, state, policy.params.msg_lstm)?;
    rt.msg_nodes = Some(next);
    Ok(CommOut {
        outgoing_bits,
        outgoing_node,
        attention,
        qhat: next.h,
    })
}

/// Action selector: `softmax(linear(h) + linear(q̂))`, sampled (or argmax
/// under `greedy`), with the log-probability recorded on the tape.
///
/// May only be called at window-end ticks (`tick % 5 == 4`). A blind agent's
/// observation branch input is replaced by a zero vector; communication is
/// unaffected.
#[allow(clippy::too_many_arguments)]
pub fn act(
    tape: &mut Tape,
    store: &ParamStore,
    policy: &AgentPolicy,
    h: NodeId,
    qhat: NodeId,
    tick: u64,
    rng: &mut ChaCha8Rng,
    greedy: bool,
) -> Result<(u8, f64, NodeId), PolicyError> {
    if tick as usize % WINDOW != WINDOW - 1 {
        return Err(PolicyError::WrongTick {
            agent: policy.agent,
            tick,
        });
    }
    let obs_branch = if policy.blind {
        let zero = tape.zeros(tape.val(h).len());
        dense_layer(tape, store, zero, policy.params.act_obs_w, Some(policy.params.act_obs_b))?
    } else {
        dense_layer(tape, store, h, policy.params.act_obs_w, Some(policy.params.act_obs_b))?
    };
    let msg_branch = dense_layer(
        tape,
        store,
        qhat,
        policy.params.act_msg_w,
        Some(policy.params.act_msg_b),
    )?;
    let z = tape.add(obs_branch, msg_branch)?;
    let probs = action_distribution(tape.val(z));
    let action = if greedy {
        probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    } else {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                chosen = i;
                break;
            }
        }
        chosen
    };
    let logp_node = tape.log_softmax_pick(z, action)?;
    let logp = tape.val(logp_node)[0];
    Ok((action as u8, logp, logp_node))
}

/// Stable softmax over action logits.
pub fn action_distribution(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphnet::build_network1;
    use crate::rngstream;
    use crate::traffic::{init_state, RoadNet, SimConfig};

    const SAMPLE: MsgSampling = MsgSampling {
        tau: 1.0,
        hard: true,
        greedy: false,
    };

    fn setup() -> (ParamStore, Vec<AgentPolicy>, PolicyConfig) {
        let graph = build_network1();
        let cfg = PolicyConfig::default();
        let mut store = ParamStore::new();
        let policies = build_policies(&graph, &cfg, &mut store, 7).unwrap();
        (store, policies, cfg)
    }

    #[test]
    fn builds_one_policy_per_agent_with_matching_action_heads() {
        let (store, policies, _) = setup();
        assert_eq!(policies.len(), 10);
        for p in &policies {
            assert_eq!(store.shape(p.params.act_obs_w)[0], p.action_count);
        }
        assert_eq!(policies[4].action_count, 4);
        assert_eq!(policies[9].action_count, 3);
    }

    #[test]
    fn zero_initialized_heads_give_uniform_distribution() {
        let graph = build_network1();
        let cfg = PolicyConfig::default();
        let mut store = ParamStore::new();
        let policies = build_policies(&graph, &cfg, &mut store, 7).unwrap();
        // Zero the action heads of agent 4.
        for pid in [
            policies[4].params.act_obs_w,
            policies[4].params.act_obs_b,
            policies[4].params.act_msg_w,
            policies[4].params.act_msg_b,
        ] {
            store.value_mut(pid).iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let mut rt = PolicyRuntime::new(&cfg);
        let sim = SimConfig::default();
        let net = RoadNet::new(&graph, &sim);
        let state = init_state(&net, &sim, 0);
        let obs = crate::obsgrid::observe(&state, &net, 4, sim.v_max).unwrap();
        let h = encode(&mut tape, &store, &policies[4], &mut rt, &obs).unwrap();
        let mut rng = rngstream::substream(0, rngstream::AGENT, &[4, 4]);
        let comm = communicate(
            &mut tape, &store, &policies[4], &mut rt, &graph, h, &[], SAMPLE, &mut rng,
        )
        .unwrap();
        let (_, logp, _) = act(
            &mut tape, &store, &policies[4], h, comm.qhat, 4, &mut rng, false,
        )
        .unwrap();
        assert!((logp - (1.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn act_rejects_non_window_ticks() {
        let (store, policies, cfg) = setup();
        let graph = build_network1();
        let mut tape = Tape::new();
        let mut rt = PolicyRuntime::new(&cfg);
        let obs = ObservationGrid::default();
        let h = encode(&mut tape, &store, &policies[0], &mut rt, &obs).unwrap();
        let mut rng = rngstream::substream(0, rngstream::AGENT, &[0, 0]);
        let comm = communicate(
            &mut tape, &store, &policies[0], &mut rt, &graph, h, &[], SAMPLE, &mut rng,
        )
        .unwrap();
        let err = act(
            &mut tape, &store, &policies[0], h, comm.qhat, 3, &mut rng, false,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::WrongTick { tick: 3, .. }));
    }

    #[test]
    fn communicate_rejects_non_neighbor_messages() {
        let (store, policies, cfg) = setup();
        let graph = build_network1();
        let mut tape = Tape::new();
        let mut rt = PolicyRuntime::new(&cfg);
        let obs = ObservationGrid::default();
        let h = encode(&mut tape, &store, &policies[0], &mut rt, &obs).unwrap();
        let mut rng = rngstream::substream(0, rngstream::AGENT, &[0, 0]);
        // Agent 9 is not a neighbor of agent 0.
        let msg = BusMsg {
            sender: 9,
            bits: vec![0.0; cfg.msg_bits],
            node: None,
        };
        let err = communicate(
            &mut tape, &store, &policies[0], &mut rt, &graph, h, &[&msg], SAMPLE, &mut rng,
        )
        .unwrap_err();
        assert_eq!(
            err,
            PolicyError::NonNeighborMessage { agent: 0, sender: 9 }
        );
    }

    #[test]
    fn outgoing_messages_are_binary_and_empty_inbox_gives_zero_aggregate() {
        let (store, policies, cfg) = setup();
        let graph = build_network1();
        let mut tape = Tape::new();
        let mut rt = PolicyRuntime::new(&cfg);
        let obs = ObservationGrid::default();
        let mut rng = rngstream::substream(3, rngstream::AGENT, &[1, 0]);
        let h = encode(&mut tape, &store, &policies[1], &mut rt, &obs).unwrap();
        let comm = communicate(
            &mut tape, &store, &policies[1], &mut rt, &graph, h, &[], SAMPLE, &mut rng,
        )
        .unwrap();
        assert_eq!(comm.outgoing_bits.len(), cfg.msg_bits);
        assert!(comm.outgoing_bits.iter().all(|b| *b == 0.0 || *b == 1.0));
        assert!(comm.attention.is_empty());

        // Single-message inbox passes the message through attention exactly.
        let msg = BusMsg {
            sender: 0,
            bits: vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            node: None,
        };
        let h2 = encode(&mut tape, &store, &policies[1], &mut rt, &obs).unwrap();
        let comm2 = communicate(
            &mut tape, &store, &policies[1], &mut rt, &graph, h2, &[&msg], SAMPLE, &mut rng,
        )
        .unwrap();
        assert_eq!(comm2.attention, vec![1.0]);
    }

    #[test]
    fn blind_agents_ignore_observations_in_action_choice() {
        let graph = build_network1();
        let cfg = PolicyConfig::default();
        let mut store = ParamStore::new();
        let mut policies = build_policies(&graph, &cfg, &mut store, 11).unwrap();
        policies[4].blind = true;

        let run = |obs: &ObservationGrid, store: &ParamStore, policy: &AgentPolicy| -> (u8, f64) {
            let mut tape = Tape::new();
            let mut rt = PolicyRuntime::new(&cfg);
            let mut rng = rngstream::substream(5, rngstream::AGENT, &[4, 4]);
            let h = encode(&mut tape, store, policy, &mut rt, obs).unwrap();
            let comm = communicate(
                &mut tape,
                store,
                policy,
                &mut rt,
                &graph,
                h,
                &[],
                SAMPLE,
                &mut rng,
            )
            .unwrap();
            let (a, logp, _) = act(
                &mut tape, store, policy, h, comm.qhat, 4, &mut rng, false,
            )
            .unwrap();
            (a, logp)
        };

        let zero_obs = ObservationGrid::default();
        let mut busy_obs = ObservationGrid::default();
        busy_obs.occupancy[0] = [1.0; 4];
        busy_obs.speed[0] = [0.5; 4];
        busy_obs.phase[2] = 1.0;

        let blind = &policies[4];
        assert_eq!(
            run(&zero_obs, &store, blind),
            run(&busy_obs, &store, blind),
            "blind action log-probs invariant to observations"
        );
        let mut sighted = policies[4].clone();
        sighted.blind = false;
        assert_ne!(
            run(&zero_obs, &store, &sighted).1,
            run(&busy_obs, &store, &sighted).1,
            "sighted agent reacts to observations"
        );
    }

    #[test]
    fn bus_delivers_messages_with_one_tick_delay() {
        let graph = build_network1();
        let mut bus = MessageBus::new(10);
        assert!(bus.inbox(&graph, 4).is_empty(), "tick 0: nothing from tick -1");
        bus.post(BusMsg {
            sender: 1,
            bits: vec![1.0, 0.0],
            node: None,
        });
        // Same tick: not yet visible, even to neighbors.
        assert!(bus.inbox(&graph, 4).is_empty());
        bus.advance();
        let inbox = bus.inbox(&graph, 4);
        assert_eq!(inbox.len(), 1);
        assert_eq!(inbox[0].sender, 1);
        // Non-neighbors of 1 never see it.
        assert!(bus.inbox(&graph, 9).is_empty());
        bus.advance();
        assert!(bus.inbox(&graph, 4).is_empty(), "slots live one tick");
    }

    #[test]
    fn shared_weights_reuse_blocks() {
        let graph = build_network1();
        let cfg = PolicyConfig {
            share_weights: true,
            ..PolicyConfig::default()
        };
        let mut store = ParamStore::new();
        let policies = build_policies(&graph, &cfg, &mut store, 7).unwrap();
        assert_eq!(policies[0].params.enc_w, policies[9].params.enc_w);
        // Action heads shared per kind: 1 and 4 are 4-way, 0 and 9 are 3-way.
        assert_eq!(policies[1].params.act_obs_w, policies[4].params.act_obs_w);
        assert_eq!(policies[0].params.act_obs_w, policies[9].params.act_obs_w);
        assert_ne!(policies[0].params.act_obs_w, policies[1].params.act_obs_w);
    }
}
