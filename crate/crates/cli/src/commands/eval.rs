//! `gridtalk eval`: replay trained checkpoints (or scripted baselines) on
//! test episodes and report the episode reward averaged over agents.

use std::fmt::Write as _;
use std::path::Path;

use gridtalk_core::baselines::dqn::{dqn_rollout, register_q_network, QParams};
use gridtalk_core::diffcore::{load_checkpoint, ParamStore};
use gridtalk_core::rngstream;
use gridtalk_core::trainer::{evaluate_scripted, EvalOptions, EvalReport, ScriptedController};
use gridtalk_core::traffic::RoadNet;

use crate::config::ExperimentConfig;
use crate::outputs::{write_file, Manifest};
use crate::CliError;

pub fn run(
    config_path: &Path,
    checkpoint: Option<&Path>,
    perturbed: bool,
    greedy: bool,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let digest = cfg.digest();
    let out = cfg.experiment.output_dir.clone();
    let method = cfg.experiment.method.as_str();
    let perturbed = perturbed || cfg.eval.perturbed;
    let greedy = greedy || cfg.eval.greedy;

    let (per_seed, logs): (Vec<(u64, EvalReport)>, bool) = match method {
        "fixed_time" | "sotl" => {
            let exp = super::configured_experiment(&cfg)?;
            let controller = if method == "sotl" {
                ScriptedController::Sotl {
                    threshold: cfg.sotl.threshold,
                }
            } else {
                ScriptedController::FixedTime
            };
            let mut reports = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let opts = EvalOptions {
                    episodes: cfg.eval.episodes,
                    seed: rngstream::mix(cfg.eval.seed, "eval", &[seed]),
                    perturbed,
                    greedy,
                    episode_len: cfg.eval.episode_len,
                    tau: cfg.gumbel.floor,
                    hard: cfg.gumbel.hard,
                    keep_logs: true,
                };
                reports.push((seed, evaluate_scripted(&exp, controller, &cfg.sim_config(), &opts)?));
            }
            (reports, true)
        }
        "dqn" => {
            let reports = eval_dqn(&cfg, checkpoint, &digest)?;
            (reports, true)
        }
        _ => {
            let exp = super::configured_experiment(&cfg)?;
            let mut reports = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let ckpt = super::checkpoint_path(checkpoint, &out, seed);
                let (store, policies) = super::load_policies(&exp, &cfg, seed, &ckpt)?;
                let opts = EvalOptions {
                    episodes: cfg.eval.episodes,
                    seed: rngstream::mix(cfg.eval.seed, "eval", &[seed]),
                    perturbed,
                    greedy,
                    episode_len: cfg.eval.episode_len,
                    tau: cfg.gumbel.floor,
                    hard: cfg.gumbel.hard,
                    keep_logs: true,
                };
                reports.push((
                    seed,
                    gridtalk_core::trainer::evaluate(
                        &exp,
                        &store,
                        &policies,
                        &cfg.policy_config(),
                        &cfg.sim_config(),
                        &opts,
                    )?,
                ));
            }
            (reports, true)
        }
    };

    let mut csv = format!("# gridtalk-eval v1 digest={digest}\nseed,episode,mean_reward\n");
    let mut seed_means = Vec::new();
    for (seed, report) in &per_seed {
        for (e, r) in report.per_episode.iter().enumerate() {
            let _ = writeln!(csv, "{seed},{e},{r:.6}");
        }
        seed_means.push(report.mean);
        println!(
            "seed {seed}: mean {:.3} +/- {:.3} over {} episodes{}",
            report.mean,
            report.std,
            report.per_episode.len(),
            if perturbed { " (perturbed)" } else { "" }
        );
        if logs {
            for log in &report.logs {
                let path = out
                    .join("logs")
                    .join(format!("eval_seed{seed:03}_ep{:03}.jsonl", log.header.episode));
                write_file(&path, &log.to_jsonl())?;
            }
        }
    }
    let mean = gridtalk_core::stats::mean(&seed_means);
    let std = gridtalk_core::stats::sample_std(&seed_means);
    println!(
        "{method} on {}: {:.3} +/- {:.3} (mean +/- std over {} seeds)",
        cfg.experiment.network,
        mean,
        std,
        seed_means.len()
    );
    write_file(&out.join("eval.csv"), &csv)?;
    Manifest::new(
        "eval",
        &digest,
        &cfg.experiment.network,
        method,
        &cfg.experiment.seeds,
        format!("perturbed={perturbed} greedy={greedy}"),
    )
    .write(&out)?;
    Ok(())
}

fn eval_dqn(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    digest: &str,
) -> Result<Vec<(u64, EvalReport)>, CliError> {
    let graph = cfg.graph()?;
    let dqn_cfg = cfg.dqn_config();
    let mut sim = cfg.sim_config();
    sim.episode_len = cfg.eval.episode_len;
    let net = RoadNet::new(&graph, &sim);
    let mut reports = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let ckpt = super::checkpoint_path(checkpoint, &cfg.experiment.output_dir, seed);
        if !ckpt.exists() {
            return Err(CliError::Artifact(format!(
                "checkpoint not found: {}",
                ckpt.display()
            )));
        }
        let mut store = ParamStore::new();
        let mut params: Vec<QParams> = Vec::new();
        for junction in graph.agents() {
            let mut rng = rngstream::substream(seed, rngstream::INIT, &[junction.id as u64]);
            params.push(
                register_q_network(
                    &mut store,
                    &format!("agent{:02}", junction.id),
                    &dqn_cfg,
                    junction.kind.action_count(),
                    &mut rng,
                )
                .map_err(|e| CliError::Runtime(e.to_string()))?,
            );
        }
        load_checkpoint(&mut store, &ckpt, digest)?;
        let eval_seed = rngstream::mix(cfg.eval.seed, "eval", &[seed]);
        let mut per_episode = Vec::new();
        let mut logs = Vec::new();
        for episode in 0..cfg.eval.episodes {
            let ep_seed = rngstream::mix(eval_seed, rngstream::EPISODE, &[episode as u64]);
            let (log, _) = dqn_rollout(
                &net,
                &store,
                &params,
                &sim,
                ep_seed,
                0.0,
                &cfg.experiment.network,
                digest,
                seed,
                episode as u64,
            )?;
            per_episode.push(log.mean_episode_reward());
            logs.push(log);
        }
        reports.push((
            seed,
            EvalReport {
                mean: gridtalk_core::stats::mean(&per_episode),
                std: gridtalk_core::stats::sample_std(&per_episode),
                per_episode,
                logs,
            },
        ));
    }
    Ok(reports)
}
