//! `gridtalk ablate`: the matched communication-ablation suite. Trains
//! {full, blank, blind(1), blind(2-adjacent)} on shared seeds, evaluates
//! each on shared test episodes, and emits the comparison table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use gridtalk_core::baselines::CommMode;
use gridtalk_core::trainer::train;

use crate::config::ExperimentConfig;
use crate::outputs::{write_file, Manifest};
use crate::CliError;

pub fn run(config_path: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let digest = cfg.digest();
    let out = cfg.experiment.output_dir.clone();

    let conditions: Vec<(&str, CommMode, BTreeSet<usize>)> = vec![
        ("full", CommMode::Learned, BTreeSet::new()),
        ("blank", CommMode::Blank, BTreeSet::new()),
        (
            "blind1",
            CommMode::Learned,
            cfg.ablate.blind_one.iter().copied().collect(),
        ),
        (
            "blind2",
            CommMode::Learned,
            cfg.ablate.blind_two.iter().copied().collect(),
        ),
    ];

    let mut csv = format!("# gridtalk-ablate v1 digest={digest}\ncondition,mean,std,n_seeds\n");
    println!("condition      mean      std   (shared seeds {:?})", cfg.experiment.seeds);
    for (name, comm, blind) in conditions {
        let exp = super::experiment_for(&cfg, name, comm, blind)?;
        let cond_dir = out.join(name);
        let tc = cfg.train_config();
        train(&exp, &tc, &cfg.sim_config(), &cfg.policy_config(), Some(&cond_dir))?;
        let eval = super::evaluate_variant(&cfg, &exp, &cond_dir, false, cfg.eval.greedy, false)?;
        let _ = writeln!(
            csv,
            "{name},{:.6},{:.6},{}",
            eval.mean,
            eval.std,
            eval.per_seed_mean.len()
        );
        println!(
            "{name:<12} {:>9.3} {:>8.3}",
            eval.mean, eval.std
        );
    }
    write_file(&out.join("ablate.csv"), &csv)?;
    Manifest::new(
        "ablate",
        &digest,
        &cfg.experiment.network,
        "ablate",
        &cfg.experiment.seeds,
        format!(
            "conditions=full,blank,blind{:?},blind{:?}",
            cfg.ablate.blind_one, cfg.ablate.blind_two
        ),
    )
    .write(&out)?;
    Ok(())
}
