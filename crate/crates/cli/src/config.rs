//! Experiment configuration: a sectioned key=value (TOML) file with
//! documented defaults, unknown-key rejection, and a stable digest recorded
//! in every artifact.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gridtalk_core::agentpolicy::PolicyConfig;
use gridtalk_core::baselines::{CommMode, DqnConfig};
use gridtalk_core::diffcore::GumbelConfig;
use gridtalk_core::graphnet::{build_network1, build_network2, AgentGraph};
use gridtalk_core::langlab::Alignment;
use gridtalk_core::trainer::{Robustness, TimingMode, TrainConfig};
use gridtalk_core::traffic::SimConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config parse failure: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_network() -> String {
    "net1".to_string()
}
fn default_method() -> String {
    "emergent".to_string()
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_jobs() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// "net1", "net2", or a path to a graph text file.
    pub network: String,
    /// emergent | fixed_time | sotl | dqn | fixed_protocol | blank | blind
    pub method: String,
    /// Agents blinded when method = "blind".
    pub blind_agents: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Parallel seed workers.
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            network: default_network(),
            method: default_method(),
            blind_agents: vec![4],
            seeds: default_seeds(),
            output_dir: default_output(),
            jobs: default_jobs(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub v_max: u8,
    pub p_slow: f64,
    pub spawn_rate: f64,
    pub brake_threshold: u8,
    pub p_straight: f64,
    pub p_left: f64,
    pub p_right: f64,
    pub waiting_cap: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            v_max: d.v_max,
            p_slow: d.p_slow,
            spawn_rate: d.spawn_rate,
            brake_threshold: d.brake_threshold,
            p_straight: d.p_straight,
            p_left: d.p_left,
            p_right: d.p_right,
            waiting_cap: d.waiting_cap,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub episodes: usize,
    pub episode_len: usize,
    pub gamma: f64,
    pub lr: f64,
    pub bptt_window: usize,
    /// 0 disables robustness training; n > 0 samples one of n perturbed
    /// variants per episode.
    pub robustness: usize,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    /// "zero" writes wall_ms = 0 (byte-identical reruns); "real" measures.
    pub timing: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            episodes: d.episodes,
            episode_len: d.episode_len,
            gamma: d.gamma,
            lr: d.lr,
            bptt_window: d.bptt_window,
            robustness: 0,
            grad_clip: d.grad_clip,
            checkpoint_every: d.checkpoint_every,
            timing: "zero".to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GumbelSection {
    pub tau0: f64,
    pub decay: f64,
    pub floor: f64,
    pub hard: bool,
}

impl Default for GumbelSection {
    fn default() -> Self {
        let d = GumbelConfig::default();
        GumbelSection {
            tau0: d.tau0,
            decay: d.decay,
            floor: d.floor,
            hard: d.hard,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub hidden: usize,
    pub msg_hidden: usize,
    pub msg_bits: usize,
    pub share_weights: bool,
}

impl Default for PolicySection {
    fn default() -> Self {
        let d = PolicyConfig::default();
        PolicySection {
            hidden: d.hidden,
            msg_hidden: d.msg_hidden,
            msg_bits: d.msg_bits,
            share_weights: d.share_weights,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSection {
    pub lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    pub updates_per_episode: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub hidden: usize,
}

impl Default for DqnSection {
    fn default() -> Self {
        let d = DqnConfig::default();
        DqnSection {
            lr: d.lr,
            gamma: d.gamma,
            buffer_capacity: d.buffer_capacity,
            batch_size: d.batch_size,
            target_sync: d.target_sync,
            updates_per_episode: d.updates_per_episode,
            eps_start: d.eps_start,
            eps_end: d.eps_end,
            hidden: d.hidden,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SotlSection {
    pub threshold: usize,
}

impl Default for SotlSection {
    fn default() -> Self {
        SotlSection { threshold: 5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub episode_len: usize,
    pub greedy: bool,
    pub perturbed: bool,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 20,
            episode_len: 500,
            greedy: false,
            perturbed: false,
            seed: 1000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// "last" pairs an action with the word one tick before it; "window"
    /// pairs it with all five window words.
    pub alignment: String,
    pub smoothing: f64,
    pub svd_k: usize,
    pub min_support: u64,
    pub kmeans_restarts: usize,
    pub null_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            alignment: "last".to_string(),
            smoothing: 1.0,
            svd_k: 2,
            min_support: 10,
            kmeans_restarts: 50,
            null_seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub blind_one: Vec<usize>,
    pub blind_two: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            blind_one: vec![4],
            blind_two: vec![4, 5],
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub sim: SimSection,
    pub train: TrainSection,
    pub gumbel: GumbelSection,
    pub policy: PolicySection,
    pub dqn: DqnSection,
    pub sotl: SotlSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
    pub ablate: AblateSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let methods = [
            "emergent",
            "fixed_time",
            "sotl",
            "dqn",
            "fixed_protocol",
            "blank",
            "blind",
        ];
        if !methods.contains(&self.experiment.method.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown method '{}'; expected one of {methods:?}",
                self.experiment.method
            )));
        }
        if self.experiment.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".to_string()));
        }
        if self.policy.msg_bits == 0 || self.policy.msg_bits > 16 {
            return Err(ConfigError::Invalid(format!(
                "msg_bits {} outside 1..=16",
                self.policy.msg_bits
            )));
        }
        if !["zero", "real"].contains(&self.train.timing.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "timing '{}' must be zero or real",
                self.train.timing
            )));
        }
        if !["last", "window"].contains(&self.analysis.alignment.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "alignment '{}' must be last or window",
                self.analysis.alignment
            )));
        }
        Ok(())
    }

    /// Stable digest over the fully-resolved config (defaults applied),
    /// recorded in every artifact.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }

    pub fn graph(&self) -> Result<AgentGraph, ConfigError> {
        match self.experiment.network.as_str() {
            "net1" => Ok(build_network1()),
            "net2" => Ok(build_network2()),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                    path: path.to_string(),
                    message: e.to_string(),
                })?;
                AgentGraph::from_text(&text).map_err(|e| ConfigError::Parse(e.to_string()))
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            v_max: self.sim.v_max,
            p_slow: self.sim.p_slow,
            spawn_rate: self.sim.spawn_rate,
            brake_threshold: self.sim.brake_threshold,
            p_straight: self.sim.p_straight,
            p_left: self.sim.p_left,
            p_right: self.sim.p_right,
            episode_len: self.train.episode_len,
            waiting_cap: self.sim.waiting_cap,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.train.episodes,
            episode_len: self.train.episode_len,
            gamma: self.train.gamma,
            lr: self.train.lr,
            bptt_window: self.train.bptt_window,
            seeds: self.experiment.seeds.clone(),
            robustness: if self.train.robustness == 0 {
                Robustness::Off
            } else {
                Robustness::Perturbed(self.train.robustness)
            },
            gumbel: self.gumbel_config(),
            grad_clip: self.train.grad_clip,
            checkpoint_every: self.train.checkpoint_every,
            jobs: self.experiment.jobs,
            timing: if self.train.timing == "real" {
                TimingMode::Real
            } else {
                TimingMode::Zero
            },
        }
    }

    pub fn gumbel_config(&self) -> GumbelConfig {
        GumbelConfig {
            tau0: self.gumbel.tau0,
            decay: self.gumbel.decay,
            floor: self.gumbel.floor,
            hard: self.gumbel.hard,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            hidden: self.policy.hidden,
            msg_hidden: self.policy.msg_hidden,
            msg_bits: self.policy.msg_bits,
            share_weights: self.policy.share_weights,
        }
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            lr: self.dqn.lr,
            gamma: self.dqn.gamma,
            buffer_capacity: self.dqn.buffer_capacity,
            batch_size: self.dqn.batch_size,
            target_sync: self.dqn.target_sync,
            updates_per_episode: self.dqn.updates_per_episode,
            eps_start: self.dqn.eps_start,
            eps_end: self.dqn.eps_end,
            hidden: self.dqn.hidden,
        }
    }

    pub fn alignment(&self) -> Alignment {
        if self.analysis.alignment == "window" {
            Alignment::AllWindowTicks
        } else {
            Alignment::LastTick
        }
    }

    /// Communication mode implied by the method.
    pub fn comm_mode(&self) -> CommMode {
        match self.experiment.method.as_str() {
            "blank" => CommMode::Blank,
            "fixed_protocol" => CommMode::FixedProtocol,
            _ => CommMode::Learned,
        }
    }

    pub fn blind_set(&self) -> BTreeSet<usize> {
        if self.experiment.method == "blind" {
            self.experiment.blind_agents.iter().copied().collect()
        } else {
            BTreeSet::new()
        }
    }
}
