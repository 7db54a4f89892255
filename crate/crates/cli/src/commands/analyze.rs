//! `gridtalk analyze`: the emergent-language lab over recorded episode
//! logs: per-pair grounding, neighbor consistency, tf-idf projections, and
//! community separation.

use std::fmt::Write as _;
use std::path::Path;

use gridtalk_core::graphnet::network2_partition;
use gridtalk_core::langlab::{
    community_separation, grounding_null, grounding_score, neighbor_consistency, pair_counts,
    pmi, project2d, svd_embed, tfidf_profiles,
};
use gridtalk_core::trainer::EpisodeLog;

use crate::config::ExperimentConfig;
use crate::outputs::{write_file, Manifest};
use crate::CliError;

pub fn run(config_path: &Path, logs_dir: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let digest = cfg.digest();
    let out = cfg.experiment.output_dir.join("analysis");
    let graph = cfg.graph()?;
    let a = &cfg.analysis;

    let logs = read_logs(logs_dir)?;
    if logs.is_empty() {
        return Err(CliError::Config(format!(
            "no .jsonl episode logs in {}",
            logs_dir.display()
        )));
    }
    println!("loaded {} episode logs from {}", logs.len(), logs_dir.display());

    // Grounding per neighbor pair; insufficient data is recorded, not fatal.
    let mut grounding = format!(
        "# gridtalk-grounding v1 digest={digest}\nreceiver,sender,words,purity,null_purity,status\n"
    );
    let mut pair_ok = 0;
    for (i, j) in neighbor_pairs(&graph) {
        match grounding_score(
            &logs,
            &graph,
            i,
            j,
            a.svd_k,
            cfg.alignment(),
            a.smoothing,
            a.min_support,
            a.kmeans_restarts,
            a.null_seed,
        ) {
            Ok(report) => {
                let null = grounding_null(
                    &logs,
                    &graph,
                    i,
                    j,
                    a.svd_k,
                    cfg.alignment(),
                    a.smoothing,
                    a.min_support,
                    a.kmeans_restarts,
                    a.null_seed,
                    a.null_seed + 1,
                )
                .unwrap_or(f64::NAN);
                let _ = writeln!(
                    grounding,
                    "{i},{j},{},{:.6},{null:.6},ok",
                    report.words.len(),
                    report.purity
                );
                pair_ok += 1;

                // PMI matrix dump for the pair.
                if let Ok(counts) = pair_counts(&logs, &graph, i, j, cfg.alignment()) {
                    if let Ok(p) = pmi(&counts, a.smoothing) {
                        let mut text = format!(
                            "gridtalk-pmi v1 digest={digest} receiver={i} sender={j} rows={} cols={}\n",
                            p.data.rows, p.data.cols
                        );
                        for r in 0..p.data.rows {
                            let row: Vec<String> =
                                (0..p.data.cols).map(|c| format!("{:.6}", p.data.get(r, c))).collect();
                            text.push_str(&row.join(" "));
                            text.push('\n');
                        }
                        if let Ok(emb) = svd_embed(&p, a.svd_k) {
                            text.push_str(&format!("singular_values {:?}\n", emb.s));
                        }
                        write_file(&out.join("pmi").join(format!("pair_{i:02}_{j:02}.txt")), &text)?;
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(grounding, "{i},{j},0,nan,nan,{e}");
            }
        }
    }
    write_file(&out.join("grounding.csv"), &grounding)?;

    // Neighbor consistency per receiver with at least two neighbors.
    let mut consistency = format!(
        "# gridtalk-consistency v1 digest={digest}\nagent,statistic,shuffled_null,pairs,status\n"
    );
    for agent in 0..graph.agent_count() {
        match neighbor_consistency(
            &logs,
            &graph,
            agent,
            a.svd_k,
            cfg.alignment(),
            a.smoothing,
            a.null_seed,
        ) {
            Ok(nc) => {
                let _ = writeln!(
                    consistency,
                    "{agent},{:.6},{:.6},{},ok",
                    nc.statistic, nc.shuffled_null, nc.pairs
                );
            }
            Err(e) => {
                let _ = writeln!(consistency, "{agent},nan,nan,0,{e}");
            }
        }
    }
    write_file(&out.join("consistency.csv"), &consistency)?;

    // tf-idf profiles projected to 2-D.
    let profiles = tfidf_profiles(&logs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let points = project2d(&profiles).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut tfidf = format!("# gridtalk-tfidf v1 digest={digest}\nagent,x,y\n");
    for (agent, (x, y)) in points.iter().enumerate() {
        let _ = writeln!(tfidf, "{agent},{x:.6},{y:.6}");
    }
    write_file(&out.join("tfidf_points.csv"), &tfidf)?;

    // Community separation: defined for network 2's two sub-networks.
    if cfg.experiment.network == "net2" {
        let (com_a, _) = network2_partition();
        let partition: Vec<usize> = (0..graph.agent_count())
            .map(|agent| usize::from(!com_a.contains(&agent)))
            .collect();
        match community_separation(&profiles, &partition) {
            Ok(s) => {
                let text = format!(
                    "# gridtalk-community v1 digest={digest}\npartition,silhouette\nA/B,{s:.6}\n"
                );
                write_file(&out.join("community.csv"), &text)?;
                println!("community silhouette (A/B): {s:.4}");
            }
            Err(e) => println!("community separation unavailable: {e}"),
        }
    }

    println!(
        "analysis bundle in {} ({pair_ok} grounded pairs)",
        out.display()
    );
    Manifest::new(
        "analyze",
        &digest,
        &cfg.experiment.network,
        &cfg.experiment.method,
        &cfg.experiment.seeds,
        format!("alignment={} k={}", a.alignment, a.svd_k),
    )
    .write(&cfg.experiment.output_dir)?;
    Ok(())
}

fn neighbor_pairs(graph: &gridtalk_core::graphnet::AgentGraph) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..graph.agent_count() {
        for j in graph.neighbors(i).unwrap() {
            pairs.push((i, j));
        }
    }
    pairs
}

fn read_logs(dir: &Path) -> Result<Vec<EpisodeLog>, CliError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut logs = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
        let log = EpisodeLog::from_jsonl(&text)
            .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
        logs.push(log);
    }
    Ok(logs)
}
