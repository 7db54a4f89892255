//! Quantitative emergent-language analysis: word encodings, PMI matrices,
//! SVD embeddings, tf-idf agent profiles, projections, and cluster metrics.

mod cluster;
mod pmi;
mod svd;

pub use cluster::{kmeans, procrustes_distance, silhouette};
pub use pmi::{
    community_separation, grounding_null, grounding_score, neighbor_consistency, pair_counts,
    pmi, project2d, svd_embed, tfidf_profiles, Alignment, EmbeddingSet, GroundingReport,
    LangError, Matrix, NeighborConsistency, PairCounts, PmiMatrix,
};

/// Integer encoding of a d-bit message: big-endian binary, bijective over
/// {0,1}^d.
pub fn word_id(bits: &[f64]) -> u32 {
    debug_assert!(bits.len() <= 32);
    bits.iter()
        .fold(0u32, |acc, b| (acc << 1) | u32::from(*b >= 0.5))
}

/// Inverse of [`word_id`] for a given message width.
pub fn word_decode(word: u32, msg_bits: usize) -> Vec<f64> {
    (0..msg_bits)
        .rev()
        .map(|i| f64::from((word >> i) & 1))
        .collect()
}

#[cfg(test)]
mod word_tests {
    use super::*;

    #[test]
    fn word_id_examples() {
        assert_eq!(word_id(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(word_id(&[1.0, 0.0, 1.0]), 5);
    }

    #[test]
    fn word_id_round_trips_exhaustively() {
        for d in 1..=10usize {
            for w in 0..(1u32 << d) {
                assert_eq!(word_id(&word_decode(w, d)), w);
            }
        }
    }
}
