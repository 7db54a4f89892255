//! Episode logs: the per-tick record of observations digests, messages,
//! actions, and reward components. Logs are the sole input to the language
//! analysis and serialize as schema-versioned JSON lines.

use serde::{Deserialize, Serialize};

use crate::agentpolicy::WINDOW;
use crate::traffic::{reward, RewardComponents};

pub const LOG_SCHEMA: u32 = 1;
/// Env steps appended after the last action so its reward window completes.
pub const TAIL_TICKS: usize = WINDOW - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: u32,
    pub config_digest: String,
    pub network: String,
    pub method: String,
    pub seed: u64,
    pub episode: u64,
    pub agents: usize,
    pub msg_bits: usize,
    pub episode_len: usize,
    /// Road blocked for this episode, if perturbed.
    pub blocked_road: Option<usize>,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InboxEntry {
    pub from: usize,
    pub word: u32,
    pub attention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub agent: usize,
    /// Visible vehicles per arm.
    pub obs_occ: [u8; 4],
    /// Word on the wire this tick (absent on tail ticks).
    pub word: Option<u32>,
    pub inbox: Vec<InboxEntry>,
    pub action: Option<u8>,
    pub logp: Option<f64>,
    pub components: RewardComponents,
    pub reward: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log parse failure at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported log schema {found} (expected {LOG_SCHEMA})")]
    SchemaDrift { found: u32 },
    #[error("incomplete log: {0}")]
    Incomplete(String),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t")]
enum LogLine {
    #[serde(rename = "h")]
    Header(LogHeader),
    #[serde(rename = "r")]
    Tick(TickRecord),
}

/// A full episode: header plus one record per (tick, agent), tick-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
}

impl EpisodeLog {
    /// Env ticks recorded: the episode plus the tail that completes the last
    /// reward window.
    pub fn tick_count(&self) -> usize {
        self.header.episode_len + TAIL_TICKS
    }

    pub fn window_count(&self) -> usize {
        self.header.episode_len / WINDOW
    }

    pub fn record(&self, tick: usize, agent: usize) -> &TickRecord {
        &self.records[tick * self.header.agents + agent]
    }

    /// Verifies shape and field presence; actions must sit exactly at
    /// window-end ticks.
    pub fn validate(&self) -> Result<(), LogError> {
        let expected = self.tick_count() * self.header.agents;
        if self.records.len() != expected {
            return Err(LogError::Incomplete(format!(
                "{} records, expected {expected}",
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            let tick = i / self.header.agents;
            let agent = i % self.header.agents;
            if r.tick as usize != tick || r.agent != agent {
                return Err(LogError::Incomplete(format!(
                    "record {i} holds (tick {}, agent {}), expected ({tick}, {agent})",
                    r.tick, r.agent
                )));
            }
            let is_action_tick = tick < self.header.episode_len && tick % WINDOW == WINDOW - 1;
            if is_action_tick != r.action.is_some() || is_action_tick != r.logp.is_some() {
                return Err(LogError::Incomplete(format!(
                    "record {i}: action presence does not match tick {tick}"
                )));
            }
        }
        Ok(())
    }

    /// Per-window accumulated rewards for one agent: the action at tick
    /// `5k+4` earns the rewards of ticks `5k+4 ..= 5k+8`.
    pub fn window_rewards(&self, agent: usize) -> Vec<f64> {
        (0..self.window_count())
            .map(|k| {
                let start = k * WINDOW + WINDOW - 1;
                (start..start + WINDOW)
                    .map(|t| self.record(t, agent).reward)
                    .sum()
            })
            .collect()
    }

    /// Mean window reward of one agent.
    pub fn agent_mean_reward(&self, agent: usize) -> f64 {
        let wr = self.window_rewards(agent);
        crate::stats::mean(&wr)
    }

    /// Episode statistic: per-agent mean window reward, averaged over agents.
    pub fn mean_episode_reward(&self) -> f64 {
        let per_agent: Vec<f64> = (0..self.header.agents)
            .map(|a| self.agent_mean_reward(a))
            .collect();
        crate::stats::mean(&per_agent)
    }

    pub fn std_over_agents(&self) -> f64 {
        let per_agent: Vec<f64> = (0..self.header.agents)
            .map(|a| self.agent_mean_reward(a))
            .collect();
        crate::stats::sample_std(&per_agent)
    }

    /// Checks that every logged scalar reward equals the reward recomputed
    /// from its components, which makes the window sums audit-exact.
    pub fn window_reward_audit(&self) -> bool {
        self.records
            .iter()
            .all(|r| (r.reward - reward(&r.components)).abs() < 1e-12)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&LogLine::Header(self.header.clone())).unwrap());
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&LogLine::Tick(r.clone())).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeLog, LogError> {
        let mut header: Option<LogHeader> = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(line).map_err(|e| LogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                LogLine::Header(h) => {
                    if h.schema != LOG_SCHEMA {
                        return Err(LogError::SchemaDrift { found: h.schema });
                    }
                    header = Some(h);
                }
                LogLine::Tick(r) => records.push(r),
            }
        }
        let header = header.ok_or(LogError::Parse {
            line: 0,
            message: "missing header line".to_string(),
        })?;
        let log = EpisodeLog { header, records };
        log.validate()?;
        Ok(log)
    }
}
