//! `gridtalk simulate`: roll out the configured method without training,
//! optionally streaming the lane renderer, and write the episode log.

use std::path::Path;

use gridtalk_core::agentpolicy::build_policies;
use gridtalk_core::baselines::{blind_wrapper, fixed_time_policy, sotl_policy, sotl_pressure};
use gridtalk_core::diffcore::{load_checkpoint, ParamStore};
use gridtalk_core::trainer::{
    run_episode_observed, run_scripted_episode_observed, EpisodeLog, LogHeader, RolloutOptions,
    ScriptedController, LOG_SCHEMA,
};
use gridtalk_core::traffic::{render_text, RoadNet};

use crate::config::ExperimentConfig;
use crate::outputs::{write_file, Manifest};
use crate::CliError;

pub fn run(
    config_path: &Path,
    ticks: Option<usize>,
    render: bool,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let digest = cfg.digest();
    let out = cfg.experiment.output_dir.clone();
    let method = cfg.experiment.method.as_str();
    let graph = cfg.graph()?;
    let episode_len = ticks
        .map(|t| t.div_ceil(5) * 5)
        .unwrap_or(cfg.eval.episode_len);
    let mut sim = cfg.sim_config();
    sim.episode_len = episode_len;
    let net = RoadNet::new(&graph, &sim);
    let seed = cfg.experiment.seeds.first().copied().unwrap_or(0);

    let mut frames = 0usize;
    let mut observer = |state: &gridtalk_core::traffic::TrafficState, net: &RoadNet| {
        frames += 1;
        if render {
            println!("{}", render_text(state, net));
        }
    };

    let header = LogHeader {
        schema: LOG_SCHEMA,
        config_digest: digest.clone(),
        network: cfg.experiment.network.clone(),
        method: method.to_string(),
        seed,
        episode: 0,
        agents: graph.agent_count(),
        msg_bits: cfg.policy.msg_bits,
        episode_len,
        blocked_road: None,
        tau: cfg.gumbel.floor,
    };

    let log: EpisodeLog = match method {
        "fixed_time" | "sotl" => {
            let threshold = cfg.sotl.threshold;
            let scripted = if method == "sotl" {
                ScriptedController::Sotl { threshold }
            } else {
                ScriptedController::FixedTime
            };
            run_scripted_episode_observed(
                &net,
                &sim,
                seed,
                header,
                |tick, state, net| {
                    (0..net.graph.agent_count())
                        .map(|agent| match scripted {
                            ScriptedController::FixedTime => {
                                fixed_time_policy(&net.graph.agents()[agent], tick)
                            }
                            ScriptedController::Sotl { threshold } => sotl_policy(
                                &net.graph.agents()[agent],
                                &sotl_pressure(state, net, agent),
                                state.phases[agent],
                                threshold as f64,
                            ),
                        })
                        .collect()
                },
                &mut observer,
            )?
        }
        "dqn" => {
            return Err(CliError::Config(
                "simulate supports scripted and policy methods; use 'gridtalk eval' for dqn"
                    .to_string(),
            ))
        }
        _ => {
            let pc = cfg.policy_config();
            let mut store = ParamStore::new();
            let mut policies = build_policies(&graph, &pc, &mut store, seed)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            blind_wrapper(&mut policies, &cfg.blind_set())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            if let Some(ckpt) = checkpoint {
                load_checkpoint(&mut store, ckpt, &digest)?;
            }
            let opts = RolloutOptions {
                keep_trace: false,
                bptt_window: 5,
                greedy: cfg.eval.greedy,
                tau: cfg.gumbel.floor,
                hard: cfg.gumbel.hard,
                comm: cfg.comm_mode(),
                agent_order: None,
            };
            let (log, _) = run_episode_observed(
                &net,
                &policies,
                &store,
                &pc,
                &sim,
                &opts,
                seed,
                header,
                &mut observer,
            )?;
            log
        }
    };

    let path = out.join("logs").join(format!("simulate_seed{seed:03}.jsonl"));
    write_file(&path, &log.to_jsonl())?;
    println!(
        "simulated {} ticks ({} frames), mean reward {:.3}; log at {}",
        log.tick_count(),
        frames,
        log.mean_episode_reward(),
        path.display()
    );
    Manifest::new(
        "simulate",
        &digest,
        &cfg.experiment.network,
        method,
        &[seed],
        format!("ticks={episode_len} render={render}"),
    )
    .write(&out)?;
    Ok(())
}
