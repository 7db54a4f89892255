//! `gridtalk train`: train the configured method and persist checkpoints,
//! metrics, and the run manifest.

use std::path::Path;

use gridtalk_core::baselines::dqn::dqn_independent_train;
use gridtalk_core::diffcore::save_checkpoint;
use gridtalk_core::trainer::{metrics_csv, train, MetricsRow};

use crate::config::ExperimentConfig;
use crate::outputs::{write_file, Manifest};
use crate::CliError;

pub fn run(config_path: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let digest = cfg.digest();
    let out = cfg.experiment.output_dir.clone();
    let method = cfg.experiment.method.as_str();

    if matches!(method, "fixed_time" | "sotl") {
        return Err(CliError::Config(format!(
            "method '{method}' has no trainable parameters; run 'gridtalk eval' directly"
        )));
    }

    let mut rows: Vec<MetricsRow> = Vec::new();
    let variant = match method {
        "dqn" => {
            let graph = cfg.graph()?;
            let dqn_cfg = cfg.dqn_config();
            let tc = cfg.train_config();
            for &seed in &cfg.experiment.seeds {
                let run = dqn_independent_train(
                    &graph,
                    &dqn_cfg,
                    tc.episodes,
                    tc.episode_len,
                    seed,
                    &cfg.sim_config(),
                    &cfg.experiment.network,
                    &digest,
                    tc.timing,
                )?;
                let path = out
                    .join("checkpoints")
                    .join(format!("seed{seed:03}_final.ckpt"));
                save_checkpoint(&run.store, &path, &digest)?;
                if let Some(last) = run.metrics.last() {
                    println!(
                        "seed {seed}: final mean reward {:.3} (eps {:.3})",
                        last.mean_reward, last.tau
                    );
                }
                rows.extend(run.metrics);
            }
            format!("{dqn_cfg:?}")
        }
        _ => {
            let exp = super::configured_experiment(&cfg)?;
            let tc = cfg.train_config();
            let runs = train(&exp, &tc, &cfg.sim_config(), &cfg.policy_config(), Some(&out))?;
            // Parameter-block manifest: agent id -> tensor names.
            let mut blocks = serde_json::Map::new();
            if let Some(first) = runs.first() {
                for policy in &first.policies {
                    let names: Vec<String> = first
                        .store
                        .names()
                        .filter(|n| {
                            n.starts_with(&format!("agent{:02}/", policy.agent))
                                || n.starts_with("shared")
                        })
                        .map(|s| s.to_string())
                        .collect();
                    blocks.insert(policy.agent.to_string(), names.into());
                }
            }
            write_file(
                &out.join("params_manifest.json"),
                &serde_json::to_string_pretty(&serde_json::Value::Object(blocks))
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
            )?;
            for run in &runs {
                if let Some(last) = run.metrics.last() {
                    println!(
                        "seed {}: final mean reward {:.3} (tau {:.3})",
                        run.seed, last.mean_reward, last.tau
                    );
                }
                rows.extend(run.metrics.clone());
            }
            format!("comm={:?} blind={:?}", exp.comm, exp.blind)
        }
    };

    rows.sort_by_key(|r| (r.seed, r.episode));
    write_file(&out.join("metrics.csv"), &metrics_csv(&rows, &digest))?;
    Manifest::new(
        "train",
        &digest,
        &cfg.experiment.network,
        method,
        &cfg.experiment.seeds,
        variant,
    )
    .write(&out)?;
    println!(
        "wrote {} metric rows and checkpoints to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}
