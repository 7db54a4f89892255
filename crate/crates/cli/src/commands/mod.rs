//! Subcommand implementations and shared experiment plumbing.

pub mod ablate;
pub mod analyze;
pub mod eval;
pub mod simulate;
pub mod train;
pub mod verify;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gridtalk_core::agentpolicy::{build_policies, AgentPolicy};
use gridtalk_core::baselines::CommMode;
use gridtalk_core::diffcore::{load_checkpoint, ParamStore};
use gridtalk_core::trainer::{evaluate, EvalOptions, Experiment};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Builds the Experiment descriptor for an explicit variant.
pub fn experiment_for(
    cfg: &ExperimentConfig,
    method: &str,
    comm: CommMode,
    blind: BTreeSet<usize>,
) -> Result<Experiment, CliError> {
    let graph = cfg.graph()?;
    Ok(Experiment::new(graph, &cfg.experiment.network, method)
        .with_comm(comm)
        .with_blind(blind)
        .with_digest(&cfg.digest()))
}

/// The Experiment implied by the config's own method.
pub fn configured_experiment(cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    experiment_for(
        cfg,
        &cfg.experiment.method,
        cfg.comm_mode(),
        cfg.blind_set(),
    )
}

/// Resolves a per-seed final checkpoint path: an explicit file, an explicit
/// run directory, or the config's output directory.
pub fn checkpoint_path(base: Option<&Path>, default_dir: &Path, seed: u64) -> PathBuf {
    match base {
        Some(p) if p.is_file() => p.to_path_buf(),
        Some(p) => p.join("checkpoints").join(format!("seed{seed:03}_final.ckpt")),
        None => default_dir
            .join("checkpoints")
            .join(format!("seed{seed:03}_final.ckpt")),
    }
}

/// Rebuilds policies for a seed and loads its checkpoint.
pub fn load_policies(
    exp: &Experiment,
    cfg: &ExperimentConfig,
    seed: u64,
    ckpt: &Path,
) -> Result<(ParamStore, Vec<AgentPolicy>), CliError> {
    if !ckpt.exists() {
        return Err(CliError::Artifact(format!(
            "checkpoint not found: {}",
            ckpt.display()
        )));
    }
    let pc = cfg.policy_config();
    let mut store = ParamStore::new();
    let mut policies = build_policies(&exp.graph, &pc, &mut store, seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    gridtalk_core::baselines::blind_wrapper(&mut policies, &exp.blind)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    load_checkpoint(&mut store, ckpt, &exp.config_digest)?;
    Ok((store, policies))
}

/// Per-seed evaluation summary across a seed set.
pub struct VariantEval {
    pub per_seed_mean: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates one learned variant across the config's seeds using final
/// checkpoints from `ckpt_base`.
pub fn evaluate_variant(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    ckpt_base: &Path,
    perturbed: bool,
    greedy: bool,
    keep_logs: bool,
) -> Result<VariantEval, CliError> {
    let sc = cfg.sim_config();
    let pc = cfg.policy_config();
    let mut per_seed_mean = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let ckpt = checkpoint_path(Some(ckpt_base), ckpt_base, seed);
        let (store, policies) = load_policies(exp, cfg, seed, &ckpt)?;
        let opts = EvalOptions {
            episodes: cfg.eval.episodes,
            seed: gridtalk_core::rngstream::mix(cfg.eval.seed, "eval", &[seed]),
            perturbed,
            greedy,
            episode_len: cfg.eval.episode_len,
            tau: cfg.gumbel.floor,
            hard: cfg.gumbel.hard,
            keep_logs,
        };
        let report = evaluate(exp, &store, &policies, &pc, &sc, &opts)?;
        per_seed_mean.push(report.mean);
    }
    Ok(VariantEval {
        mean: gridtalk_core::stats::mean(&per_seed_mean),
        std: gridtalk_core::stats::sample_std(&per_seed_mean),
        per_seed_mean,
    })
}
