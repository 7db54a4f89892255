//! Small statistics helpers shared by evaluation and the analysis suite.

/// Arithmetic mean; 0.0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0.0 below two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Exact one-sided Wilcoxon signed-rank test for a positive median of
/// `diffs` (H1: median > 0).
///
/// Zeros are dropped, ties get average ranks, and the p-value is computed by
/// enumerating all sign assignments, so it is exact for the small sample
/// sizes used here (n <= 20).
pub fn wilcoxon_signed_rank_one_sided(diffs: &[f64]) -> f64 {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return 1.0;
    }
    assert!(n <= 20, "exact enumeration supports up to 20 samples");

    // Rank |d| ascending with average ranks for ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        nonzero[a]
            .abs()
            .partial_cmp(&nonzero[b].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nonzero[order[j + 1]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }

    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    // Null distribution: each rank positive with probability 1/2.
    let total = 1u64 << n;
    let mut at_least = 0u64;
    for mask in 0..total {
        let w: f64 = (0..n)
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| ranks[k])
            .sum();
        if w >= w_plus - 1e-12 {
            at_least += 1;
        }
    }
    at_least as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_basics() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(mean(&[]), 0.0);
        assert!((sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935).abs() < 1e-6);
        assert_eq!(sample_std(&[1.0]), 0.0);
    }

    #[test]
    fn wilcoxon_all_positive_five_samples() {
        // W+ takes its maximum; exactly one of 32 assignments reaches it.
        let p = wilcoxon_signed_rank_one_sided(&[1.0, 2.0, 0.5, 3.0, 1.5]);
        assert!((p - 1.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_four_positive_one_small_negative() {
        // The negative sample holds the smallest rank: W+ = 14, and only
        // masks {all} and {all but rank 1} reach 14.
        let p = wilcoxon_signed_rank_one_sided(&[5.0, 4.0, 3.0, 2.0, -1.0]);
        assert!((p - 2.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_symmetric_data_is_insignificant() {
        let p = wilcoxon_signed_rank_one_sided(&[1.0, -1.0, 2.0, -2.0]);
        assert!(p > 0.4);
        assert_eq!(wilcoxon_signed_rank_one_sided(&[0.0, 0.0]), 1.0);
    }
}
