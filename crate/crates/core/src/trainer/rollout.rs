//! Episode rollouts: the tick loop tying simulator, observations, message
//! bus, and policies together under the paper's timing contract (message
//! every tick, action every fifth tick, one-tick message delay).

use crate::agentpolicy::{
    act, communicate, encode, AgentPolicy, BusMsg, MessageBus, MsgSampling, PolicyConfig,
    PolicyRuntime, WINDOW,
};
use crate::baselines::{encode_fixed_message, CommMode};
use crate::diffcore::{NodeId, ParamStore, Tape};
use crate::graphnet::AgentId;
use crate::langlab::word_id;
use crate::obsgrid::observe;
use crate::rngstream;
use crate::traffic::{
    conservation_audit, init_state, measure_components, reward, step, RoadNet, SimConfig,
    TrafficState,
};

use super::log::{EpisodeLog, InboxEntry, LogHeader, TickRecord, TAIL_TICKS};
use super::TrainError;

/// How an episode is executed.
#[derive(Clone, Debug)]
pub struct RolloutOptions {
    /// Keep tape segments and log-probability references for training.
    pub keep_trace: bool,
    /// Segment length in ticks; hidden states carry across boundaries,
    /// gradients are cut.
    pub bptt_window: usize,
    /// Argmax instead of sampling (actions and message bits).
    pub greedy: bool,
    pub tau: f64,
    pub hard: bool,
    pub comm: CommMode,
    /// Agent processing order within a tick; `None` is ascending. Outcomes
    /// are order-invariant (per-agent rng substreams, double-buffered bus),
    /// which the test suite asserts by permuting this.
    pub agent_order: Option<Vec<AgentId>>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            keep_trace: false,
            bptt_window: 25,
            greedy: false,
            tau: 1.0,
            hard: true,
            comm: CommMode::Learned,
            agent_order: None,
        }
    }
}

/// Location of one action's log-probability node.
#[derive(Clone, Copy, Debug)]
pub struct LogpRef {
    pub agent: AgentId,
    pub window: usize,
    pub segment: usize,
    pub node: NodeId,
}

/// Tape segments spanning an episode plus the action log-prob references
/// needed to assemble the REINFORCE loss.
pub struct TrainingTrace {
    pub segments: Vec<Tape>,
    pub refs: Vec<LogpRef>,
    /// Filled by the loss builder: one loss root per segment that has terms.
    pub loss_nodes: Vec<(usize, NodeId)>,
}

struct Pending {
    obs_occ: [u8; 4],
    word: Option<u32>,
    inbox: Vec<InboxEntry>,
    action: Option<u8>,
    logp: Option<f64>,
}

/// Rolls out one full episode of learned (or wrapped) policies.
///
/// Deterministic given `seed`: the simulator consumes one substream, and each
/// (agent, tick) pair derives its own, so per-tick agent processing order
/// cannot affect any outcome. Runs `episode_len` policy ticks plus
/// [`TAIL_TICKS`] env-only steps so the last action's reward window is
/// complete.
pub fn run_episode(
    net: &RoadNet,
    policies: &[AgentPolicy],
    store: &ParamStore,
    policy_cfg: &PolicyConfig,
    sim_cfg: &SimConfig,
    opts: &RolloutOptions,
    seed: u64,
    header: LogHeader,
) -> Result<(EpisodeLog, Option<TrainingTrace>), TrainError> {
    run_episode_observed(
        net, policies, store, policy_cfg, sim_cfg, opts, seed, header, |_, _| {},
    )
}

/// [`run_episode`] with a per-tick observer called after each env step,
/// e.g. for streaming the text renderer.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_observed(
    net: &RoadNet,
    policies: &[AgentPolicy],
    store: &ParamStore,
    policy_cfg: &PolicyConfig,
    sim_cfg: &SimConfig,
    opts: &RolloutOptions,
    seed: u64,
    header: LogHeader,
    mut observer: impl FnMut(&TrafficState, &RoadNet),
) -> Result<(EpisodeLog, Option<TrainingTrace>), TrainError> {
    let episode_len = header.episode_len;
    if episode_len == 0 || episode_len % WINDOW != 0 {
        return Err(TrainError::InvalidConfig(format!(
            "episode_len {episode_len} must be a positive multiple of {WINDOW}"
        )));
    }
    if opts.keep_trace && opts.bptt_window % WINDOW != 0 {
        return Err(TrainError::InvalidConfig(format!(
            "bptt_window {} must be a multiple of {WINDOW}",
            opts.bptt_window
        )));
    }
    let n = net.graph.agent_count();
    debug_assert_eq!(policies.len(), n);

    let mut state = init_state(net, sim_cfg, seed);
    let mut comps = measure_components(&state, net, sim_cfg);
    let mut bus = MessageBus::new(n);
    let mut runtimes: Vec<PolicyRuntime> =
        (0..n).map(|_| PolicyRuntime::new(policy_cfg)).collect();
    let mut sim_rng = rngstream::substream(seed, rngstream::SIM, &[]);
    let mut tape = Tape::new();
    let mut segments: Vec<Tape> = Vec::new();
    let mut refs: Vec<LogpRef> = Vec::new();
    let mut held_actions = vec![0u8; n];
    let mut records: Vec<TickRecord> = Vec::with_capacity((episode_len + TAIL_TICKS) * n);

    let segment_len = if opts.keep_trace {
        opts.bptt_window
    } else {
        WINDOW
    };

    for t in 0..episode_len {
        if t > 0 && t % segment_len == 0 {
            for rt in &mut runtimes {
                rt.harvest(&tape);
            }
            bus.invalidate_nodes();
            let old = std::mem::take(&mut tape);
            if opts.keep_trace {
                segments.push(old);
            }
        }

        let order: Vec<AgentId> = match &opts.agent_order {
            Some(order) => order.clone(),
            None => (0..n).collect(),
        };
        let mut pending: Vec<Option<Pending>> = (0..n).map(|_| None).collect();
        for agent in order {
            let mut rng = rngstream::substream(seed, rngstream::AGENT, &[agent as u64, t as u64]);
            let obs = observe(&state, net, agent, sim_cfg.v_max)?;
            let h = encode(&mut tape, store, &policies[agent], &mut runtimes[agent], &obs)?;
            let inbox = bus.inbox(&net.graph, agent);
            let comm = communicate(
                &mut tape,
                store,
                &policies[agent],
                &mut runtimes[agent],
                &net.graph,
                h,
                &inbox,
                MsgSampling {
                    tau: opts.tau,
                    hard: opts.hard,
                    greedy: opts.greedy,
                },
                &mut rng,
            )?;
            let inbox_entries: Vec<InboxEntry> = inbox
                .iter()
                .zip(comm.attention.iter())
                .map(|(m, att)| InboxEntry {
                    from: m.sender,
                    word: word_id(&m.bits),
                    attention: *att,
                })
                .collect();

            let (wire_bits, wire_node) = match opts.comm {
                CommMode::Learned => (
                    comm.outgoing_bits.clone(),
                    if opts.keep_trace {
                        Some(comm.outgoing_node)
                    } else {
                        None
                    },
                ),
                CommMode::Blank => (vec![0.0; policy_cfg.msg_bits], None),
                CommMode::FixedProtocol => (
                    encode_fixed_message(&comps[agent], policy_cfg.msg_bits),
                    None,
                ),
            };
            let word = word_id(&wire_bits);
            bus.post(BusMsg {
                sender: agent,
                bits: wire_bits,
                node: wire_node,
            });

            let mut p = Pending {
                obs_occ: obs.occupancy_counts(),
                word: Some(word),
                inbox: inbox_entries,
                action: None,
                logp: None,
            };
            if t % WINDOW == WINDOW - 1 {
                let (a, logp, node) = act(
                    &mut tape,
                    store,
                    &policies[agent],
                    h,
                    comm.qhat,
                    t as u64,
                    &mut rng,
                    opts.greedy,
                )?;
                if opts.keep_trace {
                    refs.push(LogpRef {
                        agent,
                        window: t / WINDOW,
                        segment: segments.len(),
                        node,
                    });
                }
                p.action = Some(a);
                p.logp = Some(logp);
            }
            pending[agent] = Some(p);
        }

        for (agent, p) in pending.iter().enumerate() {
            if let Some(a) = p.as_ref().and_then(|p| p.action) {
                held_actions[agent] = a;
            }
        }
        bus.advance();

        let (next, new_comps, delta) = step(&state, &held_actions, net, sim_cfg, &mut sim_rng)?;
        debug_assert!(conservation_audit(&state, &next, delta.spawned, delta.exited));
        state = next;
        comps = new_comps;
        observer(&state, net);

        for (agent, p) in pending.into_iter().enumerate() {
            let p = p.expect("every agent processed");
            records.push(TickRecord {
                tick: t as u64,
                agent,
                obs_occ: p.obs_occ,
                word: p.word,
                inbox: p.inbox,
                action: p.action,
                logp: p.logp,
                components: comps[agent].clone(),
                reward: reward(&comps[agent]),
            });
        }
    }

    // Tail: env-only steps completing the last reward window; phases hold
    // and the observer stays quiet (it sees exactly episode_len frames).
    for t in episode_len..episode_len + TAIL_TICKS {
        let (next, new_comps, _) = step(&state, &held_actions, net, sim_cfg, &mut sim_rng)?;
        state = next;
        comps = new_comps;
        for agent in 0..n {
            let obs = observe(&state, net, agent, sim_cfg.v_max)?;
            records.push(TickRecord {
                tick: t as u64,
                agent,
                obs_occ: obs.occupancy_counts(),
                word: None,
                inbox: Vec::new(),
                action: None,
                logp: None,
                components: comps[agent].clone(),
                reward: reward(&comps[agent]),
            });
        }
    }

    for rt in &mut runtimes {
        rt.harvest(&tape);
    }
    let trace = if opts.keep_trace {
        segments.push(tape);
        Some(TrainingTrace {
            segments,
            refs,
            loss_nodes: Vec::new(),
        })
    } else {
        None
    };

    let log = EpisodeLog { header, records };
    log.validate()?;
    Ok((log, trace))
}

/// Rolls out a scripted controller (fixed-time, SOTL): no policies, no
/// messages, same log schema and timing contract.
pub fn run_scripted_episode(
    net: &RoadNet,
    sim_cfg: &SimConfig,
    seed: u64,
    header: LogHeader,
    controller: impl FnMut(u64, &TrafficState, &RoadNet) -> Vec<u8>,
) -> Result<EpisodeLog, TrainError> {
    run_scripted_episode_observed(net, sim_cfg, seed, header, controller, |_, _| {})
}

/// [`run_scripted_episode`] with a per-tick observer.
pub fn run_scripted_episode_observed(
    net: &RoadNet,
    sim_cfg: &SimConfig,
    seed: u64,
    header: LogHeader,
    mut controller: impl FnMut(u64, &TrafficState, &RoadNet) -> Vec<u8>,
    mut observer: impl FnMut(&TrafficState, &RoadNet),
) -> Result<EpisodeLog, TrainError> {
    let episode_len = header.episode_len;
    if episode_len == 0 || episode_len % WINDOW != 0 {
        return Err(TrainError::InvalidConfig(format!(
            "episode_len {episode_len} must be a positive multiple of {WINDOW}"
        )));
    }
    let n = net.graph.agent_count();
    let mut state = init_state(net, sim_cfg, seed);
    let mut sim_rng = rngstream::substream(seed, rngstream::SIM, &[]);
    let mut held_actions = vec![0u8; n];
    let mut records = Vec::with_capacity((episode_len + TAIL_TICKS) * n);

    for t in 0..episode_len + TAIL_TICKS {
        let mut actions: Vec<Option<u8>> = vec![None; n];
        if t < episode_len && t % WINDOW == WINDOW - 1 {
            let chosen = controller(t as u64, &state, net);
            debug_assert_eq!(chosen.len(), n);
            for (agent, a) in chosen.into_iter().enumerate() {
                held_actions[agent] = a;
                actions[agent] = Some(a);
            }
        }
        let obs_occ: Vec<[u8; 4]> = (0..n)
            .map(|agent| {
                observe(&state, net, agent, sim_cfg.v_max)
                    .map(|o| o.occupancy_counts())
                    .unwrap_or_default()
            })
            .collect();
        let (next, comps, delta) = step(&state, &held_actions, net, sim_cfg, &mut sim_rng)?;
        debug_assert!(conservation_audit(&state, &next, delta.spawned, delta.exited));
        state = next;
        if t < episode_len {
            observer(&state, net);
        }
        for agent in 0..n {
            records.push(TickRecord {
                tick: t as u64,
                agent,
                obs_occ: obs_occ[agent],
                word: None,
                inbox: Vec::new(),
                action: actions[agent],
                logp: actions[agent].map(|_| 0.0),
                components: comps[agent].clone(),
                reward: reward(&comps[agent]),
            });
        }
    }
    let log = EpisodeLog { header, records };
    log.validate()?;
    Ok(log)
}
