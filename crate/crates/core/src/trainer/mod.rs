//! Training and evaluation: REINFORCE with a per-agent mean-window-reward
//! baseline, cross-agent gradient flow through messages, robustness
//! training over perturbed networks, and checkpointed evaluation runs.

pub mod log;
mod rollout;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agentpolicy::{build_policies, AgentPolicy, PolicyConfig, PolicyError, WINDOW};
use crate::baselines::{blind_wrapper, sotl_policy, sotl_pressure, CommMode};
use crate::diffcore::{save_checkpoint, DiffError, GumbelConfig, ParamStore};
use crate::graphnet::{AgentGraph, AgentId, GraphError};
use crate::rngstream;
use crate::traffic::{RoadNet, SimConfig, TrafficError};

pub use log::{EpisodeLog, InboxEntry, LogError, LogHeader, TickRecord, LOG_SCHEMA, TAIL_TICKS};
pub use rollout::{
    run_episode, run_episode_observed, run_scripted_episode, run_scripted_episode_observed,
    LogpRef, RolloutOptions, TrainingTrace,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation requested with zero episodes")]
    EmptyEvaluation,
    #[error("incomplete training trace: {0}")]
    IncompleteTrace(String),
    #[error("io failure at {path}: {message}")]
    Io { path: String, message: String },
}

/// Robust-training regime: sample one of n pre-generated perturbed networks
/// per training episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Robustness {
    Off,
    Perturbed(usize),
}

/// Source of the metrics `wall_ms` column. The deterministic default writes
/// zero so reruns are byte-identical; real timing is opt-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingMode {
    Zero,
    Real,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub episode_len: usize,
    pub gamma: f64,
    pub lr: f64,
    /// Backpropagation-through-time truncation length in ticks.
    pub bptt_window: usize,
    pub seeds: Vec<u64>,
    pub robustness: Robustness,
    pub gumbel: GumbelConfig,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    /// Parallel seed workers (1 = sequential).
    pub jobs: usize,
    pub timing: TimingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 500,
            episode_len: 500,
            gamma: 0.99,
            lr: 1e-4,
            bptt_window: 25,
            seeds: vec![0, 1, 2, 3, 4],
            robustness: Robustness::Off,
            gumbel: GumbelConfig::default(),
            grad_clip: 5.0,
            checkpoint_every: 200,
            jobs: 1,
            timing: TimingMode::Zero,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        if self.bptt_window == 0 || self.bptt_window % WINDOW != 0 {
            return Err(TrainError::InvalidConfig(format!(
                "bptt_window {} must be a positive multiple of {WINDOW}",
                self.bptt_window
            )));
        }
        if self.episode_len == 0 || self.episode_len % WINDOW != 0 {
            return Err(TrainError::InvalidConfig(format!(
                "episode_len {} must be a positive multiple of {WINDOW}",
                self.episode_len
            )));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("no seeds given".to_string()));
        }
        Ok(())
    }
}

/// What is being trained/evaluated: the graph plus the method variant.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub graph: AgentGraph,
    pub network: String,
    pub method: String,
    pub comm: CommMode,
    pub blind: BTreeSet<AgentId>,
    pub config_digest: String,
}

impl Experiment {
    pub fn new(graph: AgentGraph, network: &str, method: &str) -> Experiment {
        Experiment {
            graph,
            network: network.to_string(),
            method: method.to_string(),
            comm: CommMode::Learned,
            blind: BTreeSet::new(),
            config_digest: "unconfigured".to_string(),
        }
    }

    pub fn with_comm(mut self, comm: CommMode) -> Experiment {
        self.comm = comm;
        self
    }

    pub fn with_blind(mut self, blind: BTreeSet<AgentId>) -> Experiment {
        self.blind = blind;
        self
    }

    pub fn with_digest(mut self, digest: &str) -> Experiment {
        self.config_digest = digest.to_string();
        self
    }

    fn header(&self, seed: u64, episode: u64, episode_len: usize, msg_bits: usize, tau: f64) -> LogHeader {
        LogHeader {
            schema: LOG_SCHEMA,
            config_digest: self.config_digest.clone(),
            network: self.network.clone(),
            method: self.method.clone(),
            seed,
            episode,
            agents: self.graph.agent_count(),
            msg_bits,
            episode_len,
            blocked_road: None,
            tau,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub seed: u64,
    pub mean_reward: f64,
    pub std_over_agents: f64,
    pub tau: f64,
    pub wall_ms: u64,
}

/// Renders metrics rows as the canonical CSV (fixed six-decimal floats, so
/// identical runs are byte-identical).
pub fn metrics_csv(rows: &[MetricsRow], config_digest: &str) -> String {
    let mut out = format!("# gridtalk-metrics v1 digest={config_digest}\n");
    out.push_str("episode,seed,mean_reward,std_over_agents,tau,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            r.episode, r.seed, r.mean_reward, r.std_over_agents, r.tau, r.wall_ms
        ));
    }
    out
}

/// Parses the canonical metrics CSV; returns (digest, rows).
pub fn parse_metrics_csv(text: &str) -> Result<(String, Vec<MetricsRow>), TrainError> {
    let bad = |m: &str| TrainError::InvalidConfig(format!("metrics csv: {m}"));
    let mut lines = text.lines();
    let digest = lines
        .next()
        .and_then(|l| l.strip_prefix("# gridtalk-metrics v1 digest="))
        .ok_or_else(|| bad("missing version header"))?
        .to_string();
    let header = lines.next().ok_or_else(|| bad("missing column header"))?;
    if header != "episode,seed,mean_reward,std_over_agents,tau,wall_ms" {
        return Err(bad("unexpected columns"));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("wrong field count"));
        }
        rows.push(MetricsRow {
            episode: f[0].parse().map_err(|_| bad("episode"))?,
            seed: f[1].parse().map_err(|_| bad("seed"))?,
            mean_reward: f[2].parse().map_err(|_| bad("mean_reward"))?,
            std_over_agents: f[3].parse().map_err(|_| bad("std_over_agents"))?,
            tau: f[4].parse().map_err(|_| bad("tau"))?,
            wall_ms: f[5].parse().map_err(|_| bad("wall_ms"))?,
        });
    }
    Ok((digest, rows))
}

/// Discounted returns over window rewards, the per-agent mean-window-reward
/// baseline, and the resulting advantages.
pub fn window_advantages(log: &EpisodeLog, gamma: f64) -> Vec<Vec<f64>> {
    (0..log.header.agents)
        .map(|agent| {
            let wr = log.window_rewards(agent);
            let mut returns = vec![0.0; wr.len()];
            let mut acc = 0.0;
            for k in (0..wr.len()).rev() {
                acc = wr[k] + gamma * acc;
                returns[k] = acc;
            }
            let baseline = crate::stats::mean(&wr);
            returns.iter().map(|g| g - baseline).collect()
        })
        .collect()
}

/// Builds the REINFORCE loss on the trace's tape segments:
/// `loss_i = -sum_T (G_i(T) - b_i) log pi_i(a_T)`, summed over agents so
/// message-producing parameters receive gradients through every neighbor's
/// log-probability terms. Returns the per-agent loss values.
pub fn reinforce_loss(
    trace: &mut TrainingTrace,
    log: &EpisodeLog,
    gamma: f64,
) -> Result<Vec<f64>, TrainError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "gamma {gamma} outside (0, 1]"
        )));
    }
    log.validate()?;
    let agents = log.header.agents;
    let windows = log.window_count();
    if trace.refs.len() != agents * windows {
        return Err(TrainError::IncompleteTrace(format!(
            "{} log-prob refs, expected {}",
            trace.refs.len(),
            agents * windows
        )));
    }
    let advantages = window_advantages(log, gamma);

    let mut losses = vec![0.0; agents];
    for agent in 0..agents {
        for (k, adv) in advantages[agent].iter().enumerate() {
            let t = k * WINDOW + WINDOW - 1;
            let logp = log.record(t, agent).logp.expect("validated action tick");
            losses[agent] += -adv * logp;
        }
    }

    let mut per_segment: Vec<Vec<crate::diffcore::NodeId>> =
        vec![Vec::new(); trace.segments.len()];
    for r in &trace.refs {
        let adv = advantages[r.agent][r.window];
        let term = trace.segments[r.segment].scale(r.node, -adv);
        per_segment[r.segment].push(term);
    }
    trace.loss_nodes.clear();
    for (seg, terms) in per_segment.into_iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let root = trace.segments[seg].sum_n(&terms)?;
        trace.loss_nodes.push((seg, root));
    }
    Ok(losses)
}

/// Runs backward on every segment loss, accumulating parameter gradients.
pub fn backward_trace(trace: &TrainingTrace, store: &mut ParamStore) -> Result<(), DiffError> {
    for (seg, root) in &trace.loss_nodes {
        trace.segments[*seg].backward(*root, store)?;
    }
    Ok(())
}

/// One trained seed: final parameters and the per-episode metrics series.
pub struct SeedRun {
    pub seed: u64,
    pub store: ParamStore,
    pub policies: Vec<AgentPolicy>,
    pub metrics: Vec<MetricsRow>,
    pub final_checkpoint: Option<PathBuf>,
}

fn write_checkpoint(
    store: &ParamStore,
    dir: &Path,
    digest: &str,
    seed: u64,
    tag: &str,
) -> Result<PathBuf, TrainError> {
    let path = dir.join("checkpoints").join(format!("seed{seed:03}_{tag}.ckpt"));
    save_checkpoint(store, &path, digest).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(path)
}

fn train_one_seed(
    exp: &Experiment,
    tc: &TrainConfig,
    sc: &SimConfig,
    pc: &PolicyConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SeedRun, TrainError> {
    let mut store = ParamStore::new();
    let mut policies = build_policies(&exp.graph, pc, &mut store, seed)?;
    blind_wrapper(&mut policies, &exp.blind)?;

    let mut sim = sc.clone();
    sim.episode_len = tc.episode_len;

    let base_net = RoadNet::new(&exp.graph, &sim);
    let variants: Vec<RoadNet> = match tc.robustness {
        Robustness::Off => Vec::new(),
        Robustness::Perturbed(n) => exp
            .graph
            .perturb_distinct(n)?
            .iter()
            .map(|g| RoadNet::new(g, &sim))
            .collect(),
    };

    let mut metrics = Vec::with_capacity(tc.episodes);
    let mut final_checkpoint = None;
    if let Some(dir) = out_dir {
        final_checkpoint = Some(write_checkpoint(&store, dir, &exp.config_digest, seed, "init")?);
    }

    for episode in 0..tc.episodes {
        let started = Instant::now();
        let tau = tc.gumbel.tau_at(episode as u64);
        let (net, blocked_road) = if variants.is_empty() {
            (&base_net, None)
        } else {
            let mut pick = rngstream::substream(seed, "variant", &[episode as u64]);
            let v = &variants[pick.gen_range(0..variants.len())];
            (v, v.graph.blocked_roads().first().copied())
        };
        let ep_seed = rngstream::mix(seed, rngstream::EPISODE, &[episode as u64]);
        let mut header = exp.header(seed, episode as u64, tc.episode_len, pc.msg_bits, tau);
        header.blocked_road = blocked_road;
        let opts = RolloutOptions {
            keep_trace: true,
            bptt_window: tc.bptt_window,
            greedy: false,
            tau,
            hard: tc.gumbel.hard,
            comm: exp.comm,
            agent_order: None,
        };
        let (log, trace) = run_episode(net, &policies, &store, pc, &sim, &opts, ep_seed, header)?;
        let mut trace = trace.expect("training rollout keeps trace");
        reinforce_loss(&mut trace, &log, tc.gamma)?;
        backward_trace(&trace, &mut store)?;
        store.clip_grads(tc.grad_clip);
        store.adam_update(tc.lr, 0.9, 0.999, 1e-8)?;

        metrics.push(MetricsRow {
            episode: episode as u64,
            seed,
            mean_reward: log.mean_episode_reward(),
            std_over_agents: log.std_over_agents(),
            tau,
            wall_ms: match tc.timing {
                TimingMode::Zero => 0,
                TimingMode::Real => started.elapsed().as_millis() as u64,
            },
        });

        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && (episode + 1) % tc.checkpoint_every == 0 {
                write_checkpoint(&store, dir, &exp.config_digest, seed, &format!("ep{:06}", episode + 1))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        final_checkpoint = Some(write_checkpoint(&store, dir, &exp.config_digest, seed, "final")?);
    }
    Ok(SeedRun {
        seed,
        store,
        policies,
        metrics,
        final_checkpoint,
    })
}

/// Trains one model per seed (in parallel when `jobs > 1`); emits checkpoints
/// and per-episode metrics. With `robustness = Perturbed(n)`, each episode
/// uniformly samples one of n pre-generated pairwise-distinct road-blocked
/// variants.
pub fn train(
    exp: &Experiment,
    tc: &TrainConfig,
    sc: &SimConfig,
    pc: &PolicyConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<SeedRun>, TrainError> {
    tc.validate()?;
    if tc.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(tc.jobs)
            .build()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        pool.install(|| {
            tc.seeds
                .par_iter()
                .map(|&seed| train_one_seed(exp, tc, sc, pc, seed, out_dir))
                .collect()
        })
    } else {
        tc.seeds
            .iter()
            .map(|&seed| train_one_seed(exp, tc, sc, pc, seed, out_dir))
            .collect()
    }
}

/// Evaluation request: sampled or greedy execution, optionally on
/// road-blocked perturbations of the network.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub perturbed: bool,
    pub greedy: bool,
    pub episode_len: usize,
    pub tau: f64,
    pub hard: bool,
    /// Keep per-episode logs (needed for language analysis).
    pub keep_logs: bool,
}

pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub per_episode: Vec<f64>,
    pub logs: Vec<EpisodeLog>,
}

/// Evaluates trained policies without a training trace: the fig-style
/// statistic is the episode reward averaged over agents, reported as mean
/// and standard deviation over episodes.
pub fn evaluate(
    exp: &Experiment,
    store: &ParamStore,
    policies: &[AgentPolicy],
    pc: &PolicyConfig,
    sc: &SimConfig,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    if opts.episodes == 0 {
        return Err(TrainError::EmptyEvaluation);
    }
    let mut sim = sc.clone();
    sim.episode_len = opts.episode_len;
    let base_net = RoadNet::new(&exp.graph, &sim);
    let mut per_episode = Vec::with_capacity(opts.episodes);
    let mut logs = Vec::new();
    for episode in 0..opts.episodes {
        let (net, blocked) = if opts.perturbed {
            let g = exp
                .graph
                .perturb(rngstream::mix(opts.seed, rngstream::PERTURB, &[episode as u64]))?;
            let blocked = g.blocked_roads().first().copied();
            (RoadNet::new(&g, &sim), blocked)
        } else {
            (base_net.clone(), None)
        };
        let ep_seed = rngstream::mix(opts.seed, rngstream::EPISODE, &[episode as u64]);
        let mut header = exp.header(
            opts.seed,
            episode as u64,
            opts.episode_len,
            pc.msg_bits,
            opts.tau,
        );
        header.blocked_road = blocked;
        let ro = RolloutOptions {
            keep_trace: false,
            bptt_window: WINDOW,
            greedy: opts.greedy,
            tau: opts.tau,
            hard: opts.hard,
            comm: exp.comm,
            agent_order: None,
        };
        let (log, _) = run_episode(&net, policies, store, pc, &sim, &ro, ep_seed, header)?;
        per_episode.push(log.mean_episode_reward());
        if opts.keep_logs {
            logs.push(log);
        }
    }
    Ok(EvalReport {
        mean: crate::stats::mean(&per_episode),
        std: crate::stats::sample_std(&per_episode),
        per_episode,
        logs,
    })
}

/// Scripted controllers evaluated through the same protocol.
#[derive(Clone, Copy, Debug)]
pub enum ScriptedController {
    FixedTime,
    Sotl { threshold: usize },
}

pub fn evaluate_scripted(
    exp: &Experiment,
    controller: ScriptedController,
    sc: &SimConfig,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    if opts.episodes == 0 {
        return Err(TrainError::EmptyEvaluation);
    }
    let mut sim = sc.clone();
    sim.episode_len = opts.episode_len;
    let base_net = RoadNet::new(&exp.graph, &sim);
    let mut per_episode = Vec::with_capacity(opts.episodes);
    let mut logs = Vec::new();
    for episode in 0..opts.episodes {
        let (net, blocked) = if opts.perturbed {
            let g = exp
                .graph
                .perturb(rngstream::mix(opts.seed, rngstream::PERTURB, &[episode as u64]))?;
            let blocked = g.blocked_roads().first().copied();
            (RoadNet::new(&g, &sim), blocked)
        } else {
            (base_net.clone(), None)
        };
        let ep_seed = rngstream::mix(opts.seed, rngstream::EPISODE, &[episode as u64]);
        let mut header = exp.header(opts.seed, episode as u64, opts.episode_len, 0, 0.0);
        header.blocked_road = blocked;
        let log = run_scripted_episode(&net, &sim, ep_seed, header, |tick, state, net| {
            (0..net.graph.agent_count())
                .map(|agent| match controller {
                    ScriptedController::FixedTime => {
                        crate::baselines::fixed_time_policy(&net.graph.agents()[agent], tick)
                    }
                    ScriptedController::Sotl { threshold } => {
                        let pressure = sotl_pressure(state, net, agent);
                        sotl_policy(
                            &net.graph.agents()[agent],
                            &pressure,
                            state.phases[agent],
                            threshold as f64,
                        )
                    }
                })
                .collect()
        })?;
        per_episode.push(log.mean_episode_reward());
        if opts.keep_logs {
            logs.push(log);
        }
    }
    Ok(EvalReport {
        mean: crate::stats::mean(&per_episode),
        std: crate::stats::sample_std(&per_episode),
        per_episode,
        logs,
    })
}
