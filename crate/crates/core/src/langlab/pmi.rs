//! PMI matrices, embeddings, tf-idf profiles, and the grounding /
//! consistency / community statistics built on them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::agentpolicy::WINDOW;
use crate::graphnet::{AgentGraph, AgentId};
use crate::rngstream;
use crate::trainer::EpisodeLog;

use super::cluster::{kmeans, procrustes_distance, silhouette};
use super::svd::svd;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LangError {
    #[error("agents {i} and {j} are not neighbors")]
    NotNeighbors { i: AgentId, j: AgentId },
    #[error("no episode logs given")]
    EmptyLogs,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("svd did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
    #[error("degenerate partition (singleton or all-in-one class)")]
    DegeneratePartition,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Dense row-major matrix, small-scale analysis use.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut m = Matrix::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m.set(r, c, *v);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// L2-normalizes each row; zero rows stay zero.
    pub fn row_normalized(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let norm = self.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in 0..self.cols {
                    out.set(r, c, self.get(r, c) / norm);
                }
            }
        }
        out
    }
}

/// Which of sender j's words explains receiver i's action at window end T:
/// the last word consumed before acting (tick T-1), or all five words of the
/// window (ticks T-4 ..= T).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Alignment {
    LastTick,
    AllWindowTicks,
}

/// Co-occurrence counts of receiver actions and sender words.
#[derive(Clone, Debug, PartialEq)]
pub struct PairCounts {
    pub actions: usize,
    pub vocab: usize,
    pub joint: BTreeMap<(u8, u32), u64>,
    pub action_marginals: Vec<u64>,
    pub word_marginals: BTreeMap<u32, u64>,
    pub total: u64,
}

impl PairCounts {
    pub fn observed_words(&self) -> Vec<u32> {
        self.word_marginals.keys().copied().collect()
    }

    fn add(&mut self, action: u8, word: u32) {
        *self.joint.entry((action, word)).or_insert(0) += 1;
        self.action_marginals[usize::from(action)] += 1;
        *self.word_marginals.entry(word).or_insert(0) += 1;
        self.total += 1;
    }
}

/// Words broadcast by `sender`, ordered by (log, tick); optionally permuted
/// for null models.
fn sender_word_stream(logs: &[EpisodeLog], sender: AgentId, shuffle_seed: Option<u64>) -> Vec<Vec<Option<u32>>> {
    let mut per_log: Vec<Vec<Option<u32>>> = logs
        .iter()
        .map(|log| {
            (0..log.tick_count())
                .map(|t| log.record(t, sender).word)
                .collect()
        })
        .collect();
    if let Some(seed) = shuffle_seed {
        let mut flat: Vec<u32> = per_log
            .iter()
            .flatten()
            .filter_map(|w| *w)
            .collect();
        let mut rng = rngstream::substream(seed, "shuffle", &[sender as u64]);
        flat.shuffle(&mut rng);
        let mut it = flat.into_iter();
        for log_words in &mut per_log {
            for w in log_words.iter_mut() {
                if w.is_some() {
                    *w = it.next();
                }
            }
        }
    }
    per_log
}

fn pair_counts_impl(
    logs: &[EpisodeLog],
    graph: &AgentGraph,
    receiver: AgentId,
    sender: AgentId,
    alignment: Alignment,
    shuffle_seed: Option<u64>,
) -> Result<PairCounts, LangError> {
    if logs.is_empty() {
        return Err(LangError::EmptyLogs);
    }
    let neighbors = graph
        .neighbors(receiver)
        .map_err(|_| LangError::InsufficientData(format!("unknown agent {receiver}")))?;
    if !neighbors.contains(&sender) {
        return Err(LangError::NotNeighbors {
            i: receiver,
            j: sender,
        });
    }
    let actions = graph.agents()[receiver].kind.action_count();
    let msg_bits = logs[0].header.msg_bits;
    let mut counts = PairCounts {
        actions,
        vocab: 1 << msg_bits,
        joint: BTreeMap::new(),
        action_marginals: vec![0; actions],
        word_marginals: BTreeMap::new(),
        total: 0,
    };
    let words = sender_word_stream(logs, sender, shuffle_seed);
    for (log, sender_words) in logs.iter().zip(&words) {
        for k in 0..log.window_count() {
            let t = k * WINDOW + WINDOW - 1;
            let action = log.record(t, receiver).action.expect("window tick");
            match alignment {
                Alignment::LastTick => {
                    if let Some(w) = sender_words[t - 1] {
                        counts.add(action, w);
                    }
                }
                Alignment::AllWindowTicks => {
                    for t2 in (t + 1 - WINDOW)..=t {
                        if let Some(w) = sender_words[t2] {
                            counts.add(action, w);
                        }
                    }
                }
            }
        }
    }
    Ok(counts)
}

/// Counts co-occurrences of receiver `i`'s actions with sender `j`'s words
/// under the given alignment.
pub fn pair_counts(
    logs: &[EpisodeLog],
    graph: &AgentGraph,
    i: AgentId,
    j: AgentId,
    alignment: Alignment,
) -> Result<PairCounts, LangError> {
    pair_counts_impl(logs, graph, i, j, alignment, None)
}

/// Additive-smoothed pointwise mutual information matrix (actions x words).
#[derive(Clone, Debug)]
pub struct PmiMatrix {
    pub data: Matrix,
    pub smoothing: f64,
    /// Words observed at least once, in ascending id order (column index ->
    /// word id is still the full vocabulary; this is for convenience).
    pub observed: Vec<u32>,
}

/// `P[a,w] = ln(((N(a,w)+e) * (N + e*|A|*V)) / ((N(a)+e*V) * (N(w)+e*|A|)))`.
/// Exactly zero everywhere for independent (uniform) smoothed counts.
pub fn pmi(counts: &PairCounts, smoothing: f64) -> Result<PmiMatrix, LangError> {
    if counts.total == 0 {
        return Err(LangError::InsufficientData("no co-occurrences".to_string()));
    }
    let a = counts.actions;
    let v = counts.vocab;
    let n = counts.total as f64;
    let e = smoothing;
    let mut m = Matrix::zeros(a, v);
    let norm = n + e * a as f64 * v as f64;
    for action in 0..a {
        let na = counts.action_marginals[action] as f64;
        for word in 0..v as u32 {
            let nw = counts.word_marginals.get(&word).copied().unwrap_or(0) as f64;
            let naw = counts
                .joint
                .get(&(action as u8, word))
                .copied()
                .unwrap_or(0) as f64;
            let value = ((naw + e) * norm / ((na + e * v as f64) * (nw + e * a as f64))).ln();
            m.set(action, word as usize, value);
        }
    }
    Ok(PmiMatrix {
        data: m,
        smoothing,
        observed: counts.observed_words(),
    })
}

/// Truncated SVD embeddings of a PMI matrix: `U` holds action embeddings,
/// `V` word embeddings, singular values descending.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
    pub k: usize,
}

pub fn svd_embed(p: &PmiMatrix, k: usize) -> Result<EmbeddingSet, LangError> {
    let (rows, cols) = (p.data.rows, p.data.cols);
    if k == 0 || k > rows.min(cols) {
        return Err(LangError::ShapeMismatch(format!(
            "k {k} outside 1..={}",
            rows.min(cols)
        )));
    }
    let full = svd(&p.data, 10_000)?;
    let mut u = Matrix::zeros(rows, k);
    let mut v = Matrix::zeros(cols, k);
    for j in 0..k {
        for r in 0..rows {
            u.set(r, j, full.u.get(r, j));
        }
        for r in 0..cols {
            v.set(r, j, full.v.get(r, j));
        }
    }
    Ok(EmbeddingSet {
        u,
        s: full.singular_values[..k].to_vec(),
        v,
        k,
    })
}

/// Outcome of the word-grounding analysis for one (receiver, sender) pair.
#[derive(Clone, Debug)]
pub struct GroundingReport {
    /// Fraction of words whose cluster's majority PMI label matches their
    /// own.
    pub purity: f64,
    /// (word, PMI argmax action label, k-means cluster) per qualifying word.
    pub words: Vec<(u32, u8, usize)>,
}

fn qualifying_words(counts: &PairCounts, min_support: u64) -> Result<Vec<u32>, LangError> {
    let words: Vec<u32> = counts
        .word_marginals
        .iter()
        .filter(|(_, n)| **n >= min_support)
        .map(|(w, _)| *w)
        .collect();
    if words.len() < counts.actions {
        return Err(LangError::InsufficientData(format!(
            "{} qualifying words for {} actions",
            words.len(),
            counts.actions
        )));
    }
    Ok(words)
}

fn argmax_labels(p: &PmiMatrix, actions: usize, words: &[u32]) -> Vec<u8> {
    words
        .iter()
        .map(|&w| {
            let mut best = 0u8;
            let mut best_v = f64::NEG_INFINITY;
            for a in 0..actions {
                let v = p.data.get(a, w as usize);
                if v > best_v {
                    best_v = v;
                    best = a as u8;
                }
            }
            best
        })
        .collect()
}

fn cluster_purity(clusters: &[usize], labels: &[u8]) -> f64 {
    let mut majority: BTreeMap<usize, BTreeMap<u8, usize>> = BTreeMap::new();
    for (c, l) in clusters.iter().zip(labels) {
        *majority.entry(*c).or_default().entry(*l).or_insert(0) += 1;
    }
    let agree: usize = majority
        .values()
        .map(|dist| dist.values().max().copied().unwrap_or(0))
        .sum();
    agree as f64 / labels.len() as f64
}

fn cluster_assignments(
    counts: &PairCounts,
    p: &PmiMatrix,
    words: &[u32],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<usize>, LangError> {
    let emb = svd_embed(p, k)?;
    let points: Vec<Vec<f64>> = words.iter().map(|&w| emb.v.row(w as usize).to_vec()).collect();
    Ok(kmeans(&points, counts.actions, restarts, seed))
}

/// Grounding analysis: embed qualifying words (support >= `min_support`) via
/// the PMI SVD, label each by its argmax-PMI action, k-means them into
/// |A_i| clusters, and score purity.
#[allow(clippy::too_many_arguments)]
pub fn grounding_score(
    logs: &[EpisodeLog],
    graph: &AgentGraph,
    i: AgentId,
    j: AgentId,
    k: usize,
    alignment: Alignment,
    smoothing: f64,
    min_support: u64,
    kmeans_restarts: usize,
    seed: u64,
) -> Result<GroundingReport, LangError> {
    let counts = pair_counts(logs, graph, i, j, alignment)?;
    let qualifying = qualifying_words(&counts, min_support)?;
    let p = pmi(&counts, smoothing)?;
    let labels = argmax_labels(&p, counts.actions, &qualifying);
    let clusters = cluster_assignments(&counts, &p, &qualifying, k, kmeans_restarts, seed)?;
    let purity = cluster_purity(&clusters, &labels);
    Ok(GroundingReport {
        purity,
        words: qualifying
            .iter()
            .zip(&labels)
            .zip(&clusters)
            .map(|((w, l), c)| (*w, *l, *c))
            .collect(),
    })
}

/// Shuffled-log null for the grounding purity: clusters come from the real
/// logs while labels are recomputed from a copy with the sender's word
/// sequence permuted. Labels and clusters are then independent, so on
/// ungrounded data this sits near `1 / |A_i|`; computing purity with labels
/// and clusters from the same counts would correlate them by construction
/// even for independent data.
#[allow(clippy::too_many_arguments)]
pub fn grounding_null(
    logs: &[EpisodeLog],
    graph: &AgentGraph,
    i: AgentId,
    j: AgentId,
    k: usize,
    alignment: Alignment,
    smoothing: f64,
    min_support: u64,
    kmeans_restarts: usize,
    seed: u64,
    shuffle_seed: u64,
) -> Result<f64, LangError> {
    let counts = pair_counts(logs, graph, i, j, alignment)?;
    let qualifying = qualifying_words(&counts, min_support)?;
    let p = pmi(&counts, smoothing)?;
    let clusters = cluster_assignments(&counts, &p, &qualifying, k, kmeans_restarts, seed)?;
    // Word marginals are invariant under the shuffle, so the qualifying set
    // is identical; only the joint counts decouple.
    let shuffled = pair_counts_impl(logs, graph, i, j, alignment, Some(shuffle_seed))?;
    let p_null = pmi(&shuffled, smoothing)?;
    let null_labels = argmax_labels(&p_null, shuffled.actions, &qualifying);
    Ok(cluster_purity(&clusters, &null_labels))
}

/// Mean Procrustes distance between the receiver's action embeddings across
/// sender pairs, against a shuffled-word null.
#[derive(Clone, Debug)]
pub struct NeighborConsistency {
    pub statistic: f64,
    pub shuffled_null: f64,
    pub pairs: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn neighbor_consistency(
    logs: &[EpisodeLog],
    graph: &AgentGraph,
    i: AgentId,
    k: usize,
    alignment: Alignment,
    smoothing: f64,
    null_seed: u64,
) -> Result<NeighborConsistency, LangError> {
    let neighbors: Vec<AgentId> = graph
        .neighbors(i)
        .map_err(|_| LangError::InsufficientData(format!("unknown agent {i}")))?
        .into_iter()
        .collect();
    if neighbors.len() < 2 {
        return Err(LangError::InsufficientData(format!(
            "agent {i} has {} neighbors, need 2",
            neighbors.len()
        )));
    }
    let embed = |shuffle: Option<u64>| -> Result<Vec<Matrix>, LangError> {
        neighbors
            .iter()
            .map(|&j| {
                let counts = pair_counts_impl(logs, graph, i, j, alignment, shuffle)?;
                let p = pmi(&counts, smoothing)?;
                Ok(svd_embed(&p, k)?.u.row_normalized())
            })
            .collect()
    };
    let mean_pair_distance = |mats: &[Matrix]| -> (f64, usize) {
        let mut total = 0.0;
        let mut pairs = 0;
        for a in 0..mats.len() {
            for b in (a + 1)..mats.len() {
                total += procrustes_distance(&mats[a], &mats[b]);
                pairs += 1;
            }
        }
        (total / pairs as f64, pairs)
    };
    let (statistic, pairs) = mean_pair_distance(&embed(None)?);
    let (shuffled_null, _) = mean_pair_distance(&embed(Some(null_seed))?);
    Ok(NeighborConsistency {
        statistic,
        shuffled_null,
        pairs,
    })
}

/// tf-idf profile matrix: rows are agents, columns the 2^d vocabulary.
/// tf = agent's relative frequency of the word; idf = ln(N / (1 + df))
/// floored at zero.
pub fn tfidf_profiles(logs: &[EpisodeLog]) -> Result<Matrix, LangError> {
    if logs.is_empty() {
        return Err(LangError::EmptyLogs);
    }
    let agents = logs[0].header.agents;
    let vocab = 1usize << logs[0].header.msg_bits;
    let mut counts: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); agents];
    let mut totals = vec![0u64; agents];
    for log in logs {
        for r in &log.records {
            if let Some(w) = r.word {
                *counts[r.agent].entry(w).or_insert(0) += 1;
                totals[r.agent] += 1;
            }
        }
    }
    let mut df = vec![0u64; vocab];
    for agent_counts in &counts {
        for w in agent_counts.keys() {
            df[*w as usize] += 1;
        }
    }
    let mut m = Matrix::zeros(agents, vocab);
    for agent in 0..agents {
        if totals[agent] == 0 {
            continue;
        }
        for (w, c) in &counts[agent] {
            let tf = *c as f64 / totals[agent] as f64;
            let idf = (agents as f64 / (1.0 + df[*w as usize] as f64)).ln().max(0.0);
            m.set(agent, *w as usize, tf * idf);
        }
    }
    Ok(m)
}

/// Mean-centered truncated SVD to two components; preserves cluster
/// structure deterministically (no stochastic embedding).
pub fn project2d(matrix: &Matrix) -> Result<Vec<(f64, f64)>, LangError> {
    if matrix.rows < 2 {
        return Err(LangError::InsufficientData(
            "need at least 2 rows to project".to_string(),
        ));
    }
    let mut centered = matrix.clone();
    for c in 0..matrix.cols {
        let mean: f64 = (0..matrix.rows).map(|r| matrix.get(r, c)).sum::<f64>() / matrix.rows as f64;
        for r in 0..matrix.rows {
            centered.set(r, c, matrix.get(r, c) - mean);
        }
    }
    let full = svd(&centered, 10_000)?;
    let k = 2.min(full.singular_values.len());
    Ok((0..matrix.rows)
        .map(|r| {
            let x = if k > 0 { full.u.get(r, 0) * full.singular_values[0] } else { 0.0 };
            let y = if k > 1 { full.u.get(r, 1) * full.singular_values[1] } else { 0.0 };
            (x, y)
        })
        .collect())
}

/// Silhouette of the profile rows against a given agent partition.
pub fn community_separation(profiles: &Matrix, partition: &[usize]) -> Result<f64, LangError> {
    if partition.len() != profiles.rows {
        return Err(LangError::ShapeMismatch(format!(
            "partition covers {} agents, profiles have {}",
            partition.len(),
            profiles.rows
        )));
    }
    let mut class_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for c in partition {
        *class_sizes.entry(*c).or_insert(0) += 1;
    }
    if class_sizes.len() < 2 || class_sizes.values().any(|&n| n < 2) {
        return Err(LangError::DegeneratePartition);
    }
    Ok(silhouette(&profiles.rows_vec(), partition))
}
