//! Language-analysis pipeline checks on synthetic planted-protocol logs.

use gridtalk_core::graphnet::{AgentGraph, Compass, GraphBuilder};
use gridtalk_core::langlab::{
    community_separation, grounding_null, grounding_score, neighbor_consistency, pair_counts, pmi, project2d,
    svd_embed, tfidf_profiles, word_decode, word_id, Alignment, LangError, Matrix, PairCounts,
};
use gridtalk_core::trainer::{EpisodeLog, LogHeader, TickRecord, LOG_SCHEMA, TAIL_TICKS};
use gridtalk_core::traffic::RewardComponents;
use rand::Rng;

const WINDOW: usize = 5;

/// Line graph 1 - 0 - 2: agent 0 has two neighbors.
fn line3() -> AgentGraph {
    let mut b = GraphBuilder::with_agents(3);
    b.link(1, Compass::East, 0, Compass::West);
    b.link(0, Compass::East, 2, Compass::West);
    b.boundary(0, Compass::North);
    b.boundary(1, Compass::North);
    b.boundary(1, Compass::South);
    b.boundary(2, Compass::North);
    b.boundary(2, Compass::South);
    b.finish().unwrap()
}

fn two_agents() -> AgentGraph {
    let mut b = GraphBuilder::with_agents(2);
    b.link(0, Compass::East, 1, Compass::West);
    b.boundary(0, Compass::North);
    b.boundary(0, Compass::South);
    b.boundary(1, Compass::North);
    b.boundary(1, Compass::South);
    b.finish().unwrap()
}

/// Builds a log where words and actions come from closures.
fn synthetic_log(
    agents: usize,
    episode_len: usize,
    msg_bits: usize,
    mut word_at: impl FnMut(usize, usize) -> u32,
    mut action_at: impl FnMut(usize, usize) -> u8,
) -> EpisodeLog {
    let mut records = Vec::new();
    for tick in 0..episode_len + TAIL_TICKS {
        for agent in 0..agents {
            let is_action = tick < episode_len && tick % WINDOW == WINDOW - 1;
            records.push(TickRecord {
                tick: tick as u64,
                agent,
                obs_occ: [0; 4],
                word: (tick < episode_len).then(|| word_at(tick, agent)),
                inbox: Vec::new(),
                action: is_action.then(|| action_at(tick / WINDOW, agent)),
                logp: is_action.then_some(0.0),
                components: RewardComponents::default(),
                reward: 0.0,
            });
        }
    }
    let log = EpisodeLog {
        header: LogHeader {
            schema: LOG_SCHEMA,
            config_digest: "synthetic".to_string(),
            network: "fixture".to_string(),
            method: "planted".to_string(),
            seed: 0,
            episode: 0,
            agents,
            msg_bits,
            episode_len,
            blocked_road: None,
            tau: 1.0,
        },
        records,
    };
    log.validate().unwrap();
    log
}

#[test]
fn pair_counts_single_window() {
    let graph = two_agents();
    let log = synthetic_log(2, 5, 4, |_, agent| if agent == 1 { 9 } else { 2 }, |_, _| 1);
    let counts = pair_counts(&[log], &graph, 0, 1, Alignment::LastTick).unwrap();
    assert_eq!(counts.total, 1);
    assert_eq!(counts.joint.get(&(1, 9)), Some(&1));
    assert_eq!(counts.action_marginals[1], 1);
}

#[test]
fn pair_counts_alignment_pairs_the_preceding_tick() {
    let graph = two_agents();
    // Sender 1 says word = tick; action tick T = 4 pairs with word 3.
    let log = synthetic_log(2, 10, 4, |tick, _| tick as u32, |_, _| 0);
    let counts = pair_counts(&[log.clone()], &graph, 0, 1, Alignment::LastTick).unwrap();
    assert_eq!(counts.total, 2);
    assert_eq!(counts.joint.get(&(0, 3)), Some(&1));
    assert_eq!(counts.joint.get(&(0, 8)), Some(&1));

    let all5 = pair_counts(&[log], &graph, 0, 1, Alignment::AllWindowTicks).unwrap();
    assert_eq!(all5.total, 10, "all-window alignment multiplies N by 5");
}

#[test]
fn pair_counts_rejects_non_neighbors_and_empty_logs() {
    let graph = line3();
    let log = synthetic_log(3, 10, 4, |_, _| 0, |_, _| 0);
    assert_eq!(
        pair_counts(&[log], &graph, 1, 2, Alignment::LastTick).unwrap_err(),
        LangError::NotNeighbors { i: 1, j: 2 }
    );
    assert_eq!(
        pair_counts(&[], &graph, 0, 1, Alignment::LastTick).unwrap_err(),
        LangError::EmptyLogs
    );
}

#[test]
fn pair_counts_marginals_are_consistent_on_random_logs() {
    let graph = two_agents();
    let mut rng = gridtalk_core::rngstream::substream(3, "langtest", &[]);
    for _ in 0..100 {
        let words: Vec<u32> = (0..50).map(|_| rng.gen_range(0..16)).collect();
        let actions: Vec<u8> = (0..10).map(|_| rng.gen_range(0..3)).collect();
        let log = synthetic_log(
            2,
            50,
            4,
            |tick, _| words[tick],
            |window, _| actions[window],
        );
        let counts = pair_counts(&[log], &graph, 0, 1, Alignment::LastTick).unwrap();
        let joint_total: u64 = counts.joint.values().sum();
        assert_eq!(joint_total, counts.total);
        assert_eq!(counts.action_marginals.iter().sum::<u64>(), counts.total);
        assert_eq!(counts.word_marginals.values().sum::<u64>(), counts.total);
        // Marginals re-derived from the joint.
        for (a, na) in counts.action_marginals.iter().enumerate() {
            let derived: u64 = counts
                .joint
                .iter()
                .filter(|((ja, _), _)| usize::from(*ja) == a)
                .map(|(_, n)| n)
                .sum();
            assert_eq!(derived, *na);
        }
    }
}

fn manual_counts(actions: usize, vocab: usize, entries: &[((u8, u32), u64)]) -> PairCounts {
    let mut joint = std::collections::BTreeMap::new();
    let mut action_marginals = vec![0u64; actions];
    let mut word_marginals = std::collections::BTreeMap::new();
    let mut total = 0;
    for ((a, w), n) in entries {
        joint.insert((*a, *w), *n);
        action_marginals[usize::from(*a)] += n;
        *word_marginals.entry(*w).or_insert(0) += n;
        total += n;
    }
    PairCounts {
        actions,
        vocab,
        joint,
        action_marginals,
        word_marginals,
        total,
    }
}

#[test]
fn pmi_of_uniform_counts_is_zero() {
    let entries: Vec<((u8, u32), u64)> = (0..3u8)
        .flat_map(|a| (0..8u32).map(move |w| ((a, w), 5)))
        .collect();
    let counts = manual_counts(3, 8, &entries);
    let p = pmi(&counts, 1.0).unwrap();
    for a in 0..3 {
        for w in 0..8 {
            assert!(p.data.get(a, w).abs() < 1e-12);
        }
    }
}

#[test]
fn pmi_scale_identity_with_proportional_smoothing() {
    let entries = [((0u8, 1u32), 7u64), ((1, 3), 2), ((2, 1), 4), ((0, 5), 1)];
    let counts1 = manual_counts(3, 8, &entries);
    let doubled: Vec<((u8, u32), u64)> = entries.iter().map(|(k, n)| (*k, 2 * n)).collect();
    let counts2 = manual_counts(3, 8, &doubled);
    let p1 = pmi(&counts1, 1.0).unwrap();
    let p2 = pmi(&counts2, 2.0).unwrap();
    for a in 0..3 {
        for w in 0..8 {
            assert!((p1.data.get(a, w) - p2.data.get(a, w)).abs() < 1e-9);
        }
    }
}

#[test]
fn pmi_diagonal_case_matches_closed_form() {
    // Bijective action <-> word counts, n each, 3 actions over an 8-word
    // vocabulary.
    let n = 10u64;
    let counts = manual_counts(3, 8, &[((0, 0), n), ((1, 1), n), ((2, 2), n)]);
    let p = pmi(&counts, 1.0).unwrap();
    let nf = n as f64;
    let total = 3.0 * nf;
    let diag = ((nf + 1.0) * (total + 24.0) / ((nf + 8.0) * (nf + 3.0))).ln();
    let off = (1.0 * (total + 24.0) / ((nf + 8.0) * (nf + 3.0))).ln();
    let unused = (1.0 * (total + 24.0) / ((nf + 8.0) * 3.0)).ln();
    assert!((p.data.get(0, 0) - diag).abs() < 1e-12);
    assert!((p.data.get(1, 1) - diag).abs() < 1e-12);
    assert!((p.data.get(0, 1) - off).abs() < 1e-12);
    assert!((p.data.get(0, 7) - unused).abs() < 1e-12);
    assert!(diag > 0.0 && off < 0.0);
}

#[test]
fn svd_embed_truncates_with_descending_values() {
    let counts = manual_counts(3, 8, &[((0, 0), 30), ((1, 1), 20), ((2, 2), 10)]);
    let p = pmi(&counts, 1.0).unwrap();
    let emb = svd_embed(&p, 2).unwrap();
    assert_eq!(emb.u.rows, 3);
    assert_eq!(emb.u.cols, 2);
    assert_eq!(emb.v.rows, 8);
    assert!(emb.s[0] >= emb.s[1]);
    assert!(svd_embed(&p, 5).is_err(), "k above min dimension");
}

#[test]
fn planted_protocol_grounds_perfectly() {
    let graph = two_agents();
    // Agent 0's action at window k is k % 3; sender 1 announces it one tick
    // ahead with a dedicated word.
    let word_of = |action: u8| -> u32 { [3u32, 9, 14][usize::from(action)] };
    let log = synthetic_log(
        2,
        300,
        4,
        |tick, agent| {
            if agent == 1 {
                // Word at tick T-1 = 5k+3 must predict action at window k.
                let window = (tick + 1) / WINDOW;
                word_of((window % 3) as u8)
            } else {
                7
            }
        },
        |window, _| (window % 3) as u8,
    );
    let report = grounding_score(
        &[log],
        &graph,
        0,
        1,
        2,
        Alignment::LastTick,
        1.0,
        10,
        50,
        99,
    )
    .unwrap();
    assert!(report.purity >= 0.99, "purity {}", report.purity);
    assert_eq!(report.words.len(), 3);
}

#[test]
fn random_words_ground_at_chance_level() {
    // A large vocabulary keeps small-sample purity inflation negligible.
    let graph = two_agents();
    let mut rng = gridtalk_core::rngstream::substream(17, "null", &[]);
    let words: Vec<u32> = (0..20_000).map(|_| rng.gen_range(0..256)).collect();
    let actions: Vec<u8> = (0..4000).map(|_| rng.gen_range(0..3)).collect();
    let log = synthetic_log(
        2,
        20_000,
        8,
        |tick, _| words[tick],
        |window, _| actions[window],
    );
    let report = grounding_score(
        &[log.clone()],
        &graph,
        0,
        1,
        2,
        Alignment::LastTick,
        1.0,
        10,
        50,
        99,
    )
    .unwrap();
    assert!(
        report.words.len() > 100,
        "meaningful vocabulary ({})",
        report.words.len()
    );
    let null = grounding_null(
        &[log],
        &graph,
        0,
        1,
        2,
        Alignment::LastTick,
        1.0,
        10,
        50,
        99,
        7,
    )
    .unwrap();
    assert!(
        (null - 1.0 / 3.0).abs() <= 0.1,
        "decoupled null purity {null} should sit near 1/3"
    );
    // Self-coupled purity on random data exceeds chance by construction
    // (labels and clusters share the counts); planted signal must clear it.
    assert!(report.purity < 0.8);
}

#[test]
fn grounding_needs_enough_distinct_words() {
    let graph = two_agents();
    // Sender only ever uses two words; receiver has three actions.
    let log = synthetic_log(
        2,
        100,
        4,
        |tick, _| (tick % 2) as u32,
        |window, _| (window % 3) as u8,
    );
    assert!(matches!(
        grounding_score(&[log], &graph, 0, 1, 2, Alignment::LastTick, 1.0, 10, 50, 99),
        Err(LangError::InsufficientData(_))
    ));
}

#[test]
fn identical_protocols_have_near_zero_consistency_distance() {
    let graph = line3();
    let word_of = |action: u8| -> u32 { [3u32, 9, 14][usize::from(action)] };
    let log = synthetic_log(
        3,
        300,
        4,
        |tick, agent| {
            if agent == 0 {
                1
            } else {
                // Both neighbors announce agent 0's next action identically.
                let window = (tick + 1) / WINDOW;
                word_of((window % 3) as u8)
            }
        },
        |window, agent| {
            if agent == 0 {
                (window % 3) as u8
            } else {
                0
            }
        },
    );
    let nc = neighbor_consistency(&[log], &graph, 0, 2, Alignment::LastTick, 1.0, 5).unwrap();
    assert!(nc.statistic < 1e-6, "statistic {}", nc.statistic);
    assert_eq!(nc.pairs, 1);

    // Independent random protocols: distance at least 10x the planted one.
    let mut rng = gridtalk_core::rngstream::substream(23, "indep", &[]);
    let w1: Vec<u32> = (0..600).map(|_| rng.gen_range(0..16)).collect();
    let w2: Vec<u32> = (0..600).map(|_| rng.gen_range(0..16)).collect();
    let actions: Vec<u8> = (0..120).map(|_| rng.gen_range(0..3)).collect();
    let log2 = synthetic_log(
        3,
        600,
        4,
        |tick, agent| match agent {
            1 => w1[tick],
            2 => w2[tick],
            _ => 0,
        },
        |window, agent| if agent == 0 { actions[window] } else { 0 },
    );
    let nc2 = neighbor_consistency(&[log2], &graph, 0, 2, Alignment::LastTick, 1.0, 5).unwrap();
    assert!(
        nc2.statistic > nc.statistic.max(1e-9) * 10.0,
        "{} vs {}",
        nc2.statistic,
        nc.statistic
    );
}

#[test]
fn consistency_requires_two_neighbors() {
    let graph = two_agents();
    let log = synthetic_log(2, 50, 4, |_, _| 1, |_, _| 0);
    assert!(matches!(
        neighbor_consistency(&[log], &graph, 0, 2, Alignment::LastTick, 1.0, 5),
        Err(LangError::InsufficientData(_))
    ));
}

#[test]
fn tfidf_profiles_follow_definitions() {
    // Agent 0 always says word 2; agents 1, 2 share word 5.
    let log = synthetic_log(
        3,
        50,
        3,
        |_, agent| if agent == 0 { 2 } else { 5 },
        |_, _| 0,
    );
    let m = tfidf_profiles(&[log.clone()]).unwrap();
    assert_eq!(m.rows, 3);
    assert_eq!(m.cols, 8);
    // tf(0, 2) = 1; idf = ln(3 / (1 + 1)) > 0.
    let expect = (3.0f64 / 2.0).ln();
    assert!((m.get(0, 2) - expect).abs() < 1e-12);
    // Word 5 used by two of three agents: idf = ln(3/3) = 0.
    assert_eq!(m.get(1, 5), 0.0);

    // Concatenation order of episodes cannot matter.
    let log2 = synthetic_log(
        3,
        50,
        3,
        |tick, agent| ((tick + agent) % 8) as u32,
        |_, _| 0,
    );
    let ab = tfidf_profiles(&[log.clone(), log2.clone()]).unwrap();
    let ba = tfidf_profiles(&[log2, log]).unwrap();
    assert_eq!(ab, ba);
    assert!(matches!(tfidf_profiles(&[]), Err(LangError::EmptyLogs)));
}

#[test]
fn word_ids_and_profiles_share_the_same_encoding() {
    assert_eq!(word_id(&word_decode(13, 4)), 13);
    assert_eq!(word_id(&[1.0, 1.0, 0.0, 1.0]), 13);
}

#[test]
fn project2d_preserves_planar_geometry() {
    let points = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 2.0],
        vec![0.0, -2.0],
    ]);
    let projected = project2d(&points).unwrap();
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    // Pairwise distances preserved under the orthogonal projection.
    let orig = |r: usize| (points.get(r, 0), points.get(r, 1));
    for i in 0..4 {
        for j in (i + 1)..4 {
            assert!(
                (dist(projected[i], projected[j]) - dist(orig(i), orig(j))).abs() < 1e-8,
                "distance {i}-{j}"
            );
        }
    }

    // Duplicate rows project identically.
    let dup = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![4.0, 0.0, 1.0]]);
    let p = project2d(&dup).unwrap();
    assert!((p[0].0 - p[1].0).abs() < 1e-10 && (p[0].1 - p[1].1).abs() < 1e-10);
}

#[test]
fn project2d_separates_planted_blobs() {
    let mut rows = Vec::new();
    let mut rng = gridtalk_core::rngstream::substream(5, "blobs", &[]);
    for i in 0..20 {
        let base = if i < 10 { 0.0 } else { 20.0 };
        rows.push(vec![
            base + rng.gen_range(-0.5..0.5),
            base + rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ]);
    }
    let m = Matrix::from_rows(&rows);
    let p = project2d(&m).unwrap();
    let centroid = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        let (mut x, mut y) = (0.0, 0.0);
        for i in range {
            x += p[i].0;
            y += p[i].1;
        }
        (x / n, y / n)
    };
    let (ax, ay) = centroid(0..10);
    let (bx, by) = centroid(10..20);
    let between = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let spread: f64 = (0..10)
        .map(|i| ((p[i].0 - ax).powi(2) + (p[i].1 - ay).powi(2)).sqrt())
        .sum::<f64>()
        / 10.0;
    assert!(between > 5.0 * spread, "between {between}, spread {spread}");
}

#[test]
fn community_separation_scores_and_rejections() {
    let profiles = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 9.0],
        vec![0.0, 9.0],
    ]);
    let s = community_separation(&profiles, &[0, 0, 1, 1]).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    assert_eq!(
        community_separation(&profiles, &[0, 0, 0, 0]).unwrap_err(),
        LangError::DegeneratePartition
    );
    assert_eq!(
        community_separation(&profiles, &[0, 1, 1, 1]).unwrap_err(),
        LangError::DegeneratePartition
    );

    // Random assignments on structureless rows hover near zero.
    let mut rng = gridtalk_core::rngstream::substream(31, "nullpart", &[]);
    let rows: Vec<Vec<f64>> = (0..16)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let flat = Matrix::from_rows(&rows);
    let mut scores = Vec::new();
    for _ in 0..20 {
        let mut labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
        for i in (1..16).rev() {
            let j = rng.gen_range(0..=i);
            labels.swap(i, j);
        }
        scores.push(community_separation(&flat, &labels).unwrap());
    }
    let mean = gridtalk_core::stats::mean(&scores);
    assert!(mean.abs() < 0.15, "null mean {mean}");
}
