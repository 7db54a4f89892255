//! Independent deep Q-learning baseline: one Q-network per agent, no
//! communication. The encoder mirrors the policy encoder (dense + LSTM over
//! the 5 observations of a window, from a zero state) so the comparison
//! isolates the training signal, not the architecture.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentpolicy::WINDOW;
use crate::diffcore::{
    dense_layer, lstm_step, xavier_uniform, LstmNodes, LstmParamIds, NodeId, ParamId, ParamStore,
    Tape,
};
use crate::graphnet::AgentGraph;
use crate::obsgrid::{observe, FLAT_LEN};
use crate::rngstream;
use crate::traffic::{init_state, reward, step, RoadNet, SimConfig};
use crate::trainer::{
    EpisodeLog, LogHeader, MetricsRow, TickRecord, TimingMode, TrainError, LOG_SCHEMA, TAIL_TICKS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Target-network sync period, in gradient updates.
    pub target_sync: usize,
    pub updates_per_episode: usize,
    /// Linear epsilon decay from start to end over the first half of
    /// training, then flat.
    pub eps_start: f64,
    pub eps_end: f64,
    pub hidden: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            lr: 1e-3,
            gamma: 0.99,
            buffer_capacity: 10_000,
            batch_size: 32,
            target_sync: 500,
            updates_per_episode: 4,
            eps_start: 1.0,
            eps_end: 0.05,
            hidden: 32,
        }
    }
}

/// Exploration rate at `episode` of `total`: exact endpoints, flat tail.
pub fn epsilon_at(cfg: &DqnConfig, episode: usize, total: usize) -> f64 {
    let half = (total / 2).max(1);
    if episode >= half {
        cfg.eps_end
    } else {
        cfg.eps_start + (cfg.eps_end - cfg.eps_start) * episode as f64 / half as f64
    }
}

/// One window-level transition. Observations are stored compactly as f32.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: u8,
    pub reward: f64,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

/// Uniform replay buffer with a fixed capacity.
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(65_536)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<'a>(
        &'a self,
        batch: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<&'a Transition> {
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QParams {
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub lstm: LstmParamIds,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub actions: usize,
}

/// Registers one agent's Q-network parameters.
pub fn register_q_network(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &DqnConfig,
    actions: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<QParams, crate::diffcore::DiffError> {
    let h = cfg.hidden;
    let enc_w = store.register(
        &format!("{prefix}/enc/w"),
        &[h, FLAT_LEN],
        xavier_uniform(rng, FLAT_LEN, h, h * FLAT_LEN),
    )?;
    let enc_b = store.register(&format!("{prefix}/enc/b"), &[h], vec![0.0; h])?;
    let lstm = LstmParamIds::register(store, &format!("{prefix}/enc/lstm"), h, h, rng)?;
    let head_w = store.register(
        &format!("{prefix}/q/w"),
        &[actions, h],
        xavier_uniform(rng, h, actions, actions * h),
    )?;
    let head_b = store.register(&format!("{prefix}/q/b"), &[actions], vec![0.0; actions])?;
    Ok(QParams {
        enc_w,
        enc_b,
        lstm,
        head_w,
        head_b,
        actions,
    })
}

/// Q-values for a window observation (5 stacked frames), run from a zero
/// LSTM state so replayed windows are self-contained.
pub fn q_forward(
    tape: &mut Tape,
    store: &ParamStore,
    p: &QParams,
    window_obs: &[f64],
) -> Result<NodeId, crate::diffcore::DiffError> {
    debug_assert_eq!(window_obs.len(), WINDOW * FLAT_LEN);
    let hidden = p.lstm.hidden;
    let mut state = LstmNodes {
        h: tape.zeros(hidden),
        c: tape.zeros(hidden),
    };
    for k in 0..WINDOW {
        let x = tape.input(&window_obs[k * FLAT_LEN..(k + 1) * FLAT_LEN]);
        let lin = dense_layer(tape, store, x, p.enc_w, Some(p.enc_b))?;
        let a = tape.relu(lin);
        state = lstm_step(tape, store, a, state, p.lstm)?;
    }
    dense_layer(tape, store, state.h, p.head_w, Some(p.head_b))
}

/// Squared TD loss on a batch; returns the loss value after accumulating
/// gradients. No update happens when the buffer holds fewer than
/// `batch_size` transitions.
pub fn td_update(
    online: &mut ParamStore,
    target: &ParamStore,
    params: &QParams,
    buffer: &ReplayBuffer,
    cfg: &DqnConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<f64>, crate::diffcore::DiffError> {
    if buffer.len() < cfg.batch_size {
        return Ok(None);
    }
    let batch = buffer.sample(cfg.batch_size, rng);
    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(batch.len());
    for t in &batch {
        let s: Vec<f64> = t.state.iter().map(|v| f64::from(*v)).collect();
        let q = q_forward(&mut tape, online, params, &s)?;
        let q_sa = tape.slice(q, usize::from(t.action), 1)?;
        let y = if t.terminal {
            t.reward
        } else {
            let s2: Vec<f64> = t.next_state.iter().map(|v| f64::from(*v)).collect();
            let mut target_tape = Tape::new();
            let tq = q_forward(&mut target_tape, target, params, &s2)?;
            let best = target_tape
                .val(tq)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            t.reward + cfg.gamma * best
        };
        let neg_y = tape.input(&[-y]);
        let diff = tape.add(q_sa, neg_y)?;
        let sq = tape.mul(diff, diff)?;
        terms.push(sq);
    }
    let total = tape.sum_n(&terms)?;
    let loss_node = tape.scale(total, 1.0 / batch.len() as f64);
    let loss = tape.val(loss_node)[0];
    tape.backward(loss_node, online)?;
    online.adam_update(cfg.lr, 0.9, 0.999, 1e-8)?;
    Ok(Some(loss))
}

/// Outcome of independent DQN training for one seed.
pub struct DqnRun {
    pub seed: u64,
    pub store: ParamStore,
    pub params: Vec<QParams>,
    pub metrics: Vec<MetricsRow>,
}

/// Trains independent per-agent Q-networks: shared environment, zero
/// inter-agent communication (the message bus is never constructed).
#[allow(clippy::too_many_arguments)]
pub fn dqn_independent_train(
    graph: &AgentGraph,
    cfg: &DqnConfig,
    episodes: usize,
    episode_len: usize,
    seed: u64,
    sc: &SimConfig,
    network: &str,
    config_digest: &str,
    timing: TimingMode,
) -> Result<DqnRun, TrainError> {
    let mut online = ParamStore::new();
    let mut target = ParamStore::new();
    let mut params = Vec::new();
    for junction in graph.agents() {
        let mut rng = rngstream::substream(seed, rngstream::INIT, &[junction.id as u64]);
        let p = register_q_network(
            &mut online,
            &format!("agent{:02}", junction.id),
            cfg,
            junction.kind.action_count(),
            &mut rng,
        )?;
        let mut rng2 = rngstream::substream(seed, rngstream::INIT, &[junction.id as u64]);
        register_q_network(
            &mut target,
            &format!("agent{:02}", junction.id),
            cfg,
            junction.kind.action_count(),
            &mut rng2,
        )?;
        params.push(p);
    }
    target.load_values(&online.snapshot_values())?;

    let mut sim = sc.clone();
    sim.episode_len = episode_len;
    let net = RoadNet::new(graph, &sim);
    let n = graph.agent_count();
    let mut buffers: Vec<ReplayBuffer> = (0..n)
        .map(|_| ReplayBuffer::new(cfg.buffer_capacity))
        .collect();
    let mut metrics = Vec::with_capacity(episodes);
    let mut updates = 0usize;

    for episode in 0..episodes {
        let started = std::time::Instant::now();
        let eps = epsilon_at(cfg, episode, episodes);
        let ep_seed = rngstream::mix(seed, rngstream::EPISODE, &[episode as u64]);
        let (log, windows) = dqn_rollout(
            &net, &online, &params, &sim, ep_seed, eps, network, config_digest, seed,
            episode as u64,
        )?;

        // Window transitions: action k earns the rewards of its own window;
        // the next window's stacked observation is the successor state.
        for agent in 0..n {
            let wr: Vec<f64> = log.window_rewards(agent);
            let frames = &windows[agent];
            for k in 0..wr.len() {
                let terminal = k + 1 == wr.len();
                buffers[agent].push(Transition {
                    state: frames[k].0.clone(),
                    action: frames[k].1,
                    reward: wr[k],
                    next_state: if terminal {
                        vec![0.0; WINDOW * FLAT_LEN]
                    } else {
                        frames[k + 1].0.clone()
                    },
                    terminal,
                });
            }
        }

        for agent in 0..n {
            for u in 0..cfg.updates_per_episode {
                let mut rng = rngstream::substream(
                    ep_seed,
                    "dqn-batch",
                    &[agent as u64, u as u64],
                );
                if td_update(
                    &mut online,
                    &target,
                    &params[agent],
                    &buffers[agent],
                    cfg,
                    &mut rng,
                )?
                .is_some()
                {
                    updates += 1;
                    if updates % cfg.target_sync == 0 {
                        target.load_values(&online.snapshot_values())?;
                    }
                }
            }
        }

        metrics.push(MetricsRow {
            episode: episode as u64,
            seed,
            mean_reward: log.mean_episode_reward(),
            std_over_agents: log.std_over_agents(),
            tau: eps,
            wall_ms: match timing {
                TimingMode::Zero => 0,
                TimingMode::Real => started.elapsed().as_millis() as u64,
            },
        });
    }

    Ok(DqnRun {
        seed,
        store: online,
        params,
        metrics,
    })
}

type WindowFrames = Vec<Vec<(Vec<f32>, u8)>>;

/// One DQN episode: epsilon-greedy window actions, no messages. Returns the
/// log plus each agent's per-window stacked observation and chosen action.
#[allow(clippy::too_many_arguments)]
pub fn dqn_rollout(
    net: &RoadNet,
    store: &ParamStore,
    params: &[QParams],
    sim: &SimConfig,
    ep_seed: u64,
    eps: f64,
    network: &str,
    config_digest: &str,
    seed: u64,
    episode: u64,
) -> Result<(EpisodeLog, WindowFrames), TrainError> {
    let n = net.graph.agent_count();
    let episode_len = sim.episode_len;
    let mut state = init_state(net, sim, ep_seed);
    let mut sim_rng = rngstream::substream(ep_seed, rngstream::SIM, &[]);
    let mut held = vec![0u8; n];
    let mut frame_buf: Vec<Vec<f64>> = vec![Vec::with_capacity(WINDOW * FLAT_LEN); n];
    let mut windows: WindowFrames = vec![Vec::new(); n];
    let mut records = Vec::with_capacity((episode_len + TAIL_TICKS) * n);

    for t in 0..episode_len + TAIL_TICKS {
        let mut tick_actions: Vec<Option<u8>> = vec![None; n];
        let mut tick_occ = vec![[0u8; 4]; n];
        if t < episode_len {
            for agent in 0..n {
                let obs = observe(&state, net, agent, sim.v_max)?;
                tick_occ[agent] = obs.occupancy_counts();
                frame_buf[agent].extend_from_slice(&obs.flatten());
                if t % WINDOW == WINDOW - 1 {
                    let stacked = std::mem::take(&mut frame_buf[agent]);
                    let mut rng =
                        rngstream::substream(ep_seed, rngstream::AGENT, &[agent as u64, t as u64]);
                    let a = if rng.gen::<f64>() < eps {
                        rng.gen_range(0..params[agent].actions) as u8
                    } else {
                        let mut tape = Tape::new();
                        let q = q_forward(&mut tape, store, &params[agent], &stacked)?;
                        tape.val(q)
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .map(|(i, _)| i as u8)
                            .unwrap_or(0)
                    };
                    windows[agent].push((stacked.iter().map(|v| *v as f32).collect(), a));
                    tick_actions[agent] = Some(a);
                    held[agent] = a;
                }
            }
        } else {
            for (agent, occ) in tick_occ.iter_mut().enumerate() {
                *occ = observe(&state, net, agent, sim.v_max)?.occupancy_counts();
            }
        }
        let (next, comps, _) = step(&state, &held, net, sim, &mut sim_rng)?;
        state = next;
        for agent in 0..n {
            records.push(TickRecord {
                tick: t as u64,
                agent,
                obs_occ: tick_occ[agent],
                word: None,
                inbox: Vec::new(),
                action: tick_actions[agent],
                logp: tick_actions[agent].map(|_| 0.0),
                components: comps[agent].clone(),
                reward: reward(&comps[agent]),
            });
        }
    }

    let log = EpisodeLog {
        header: LogHeader {
            schema: LOG_SCHEMA,
            config_digest: config_digest.to_string(),
            network: network.to_string(),
            method: "dqn".to_string(),
            seed,
            episode,
            agents: n,
            msg_bits: 0,
            episode_len,
            blocked_road: None,
            tau: eps,
        },
        records,
    };
    log.validate()?;
    Ok((log, windows))
}
