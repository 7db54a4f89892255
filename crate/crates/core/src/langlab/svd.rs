//! Truncated SVD via one-sided Jacobi rotations.

use super::pmi::{LangError, Matrix};

/// Orthogonalizes the columns of `b` (n x m, m small) by Jacobi rotations,
/// accumulating the rotations into `v` (m x m). Returns the sweep count.
fn jacobi_orthogonalize(b: &mut Matrix, v: &mut Matrix, max_sweeps: usize) -> Result<usize, LangError> {
    let m = b.cols;
    let tol = 1e-14;
    let fro2: f64 = (0..b.rows)
        .flat_map(|r| (0..m).map(move |c| (r, c)))
        .map(|(r, c)| b.get(r, c).powi(2))
        .sum();
    let tiny = 1e-28 * fro2.max(f64::MIN_POSITIVE);
    for sweep in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..b.rows {
                    let bp = b.get(r, p);
                    let bq = b.get(r, q);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 || app <= tiny || aqq <= tiny
                {
                    continue;
                }
                rotated = true;
                // Angle zeroing the off-diagonal Gram entry of columns p, q
                // under b_p' = c b_p - s b_q, b_q' = s b_p + c b_q.
                let theta = 0.5 * (2.0 * apq).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                for r in 0..b.rows {
                    let bp = b.get(r, p);
                    let bq = b.get(r, q);
                    b.set(r, p, c * bp - s * bq);
                    b.set(r, q, s * bp + c * bq);
                }
                for r in 0..m {
                    let vp = v.get(r, p);
                    let vq = v.get(r, q);
                    v.set(r, p, c * vp - s * vq);
                    v.set(r, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            return Ok(sweep + 1);
        }
    }
    Err(LangError::ConvergenceFailure { sweeps: max_sweeps })
}

pub struct RawSvd {
    /// Left singular vectors of the input (rows x rank).
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    /// Right singular vectors (cols x rank).
    pub v: Matrix,
}

/// Full thin SVD of `a` (rows x cols) with `rank = min(rows, cols)`
/// components, singular values descending, and a deterministic sign
/// convention: the largest-magnitude entry of each right singular vector is
/// non-negative.
///
/// Jacobi rotations run over the smaller dimension: for a wide matrix the
/// sweep orthogonalizes the columns of `a^T`, for a tall matrix the columns
/// of `a` itself.
pub fn svd(a: &Matrix, max_sweeps: usize) -> Result<RawSvd, LangError> {
    let wide = a.rows <= a.cols;
    // b holds min(rows, cols) columns; after sweeps b = w * sigma with
    // orthonormal w, and rot accumulates the applied rotations.
    let mut b = if wide { a.transpose() } else { a.clone() };
    let m = b.cols;
    let mut rot = Matrix::identity(m);
    jacobi_orthogonalize(&mut b, &mut rot, max_sweeps)?;

    let mut cols: Vec<(f64, usize)> = (0..m)
        .map(|j| {
            let norm = (0..b.rows).map(|r| b.get(r, j).powi(2)).sum::<f64>().sqrt();
            (norm, j)
        })
        .collect();
    cols.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let rank = m;
    let mut u = Matrix::zeros(a.rows, rank);
    let mut v = Matrix::zeros(a.cols, rank);
    let mut singular_values = Vec::with_capacity(rank);
    let max_sigma = cols.first().map(|c| c.0).unwrap_or(0.0);
    for (k, (sigma, j)) in cols.into_iter().take(rank).enumerate() {
        singular_values.push(sigma);
        if sigma > 1e-12 * max_sigma.max(1e-300) {
            if wide {
                // a = rot * sigma * w^T.
                for r in 0..a.cols {
                    v.set(r, k, b.get(r, j) / sigma);
                }
                for r in 0..a.rows {
                    u.set(r, k, rot.get(r, j));
                }
            } else {
                // a = w * sigma * rot^T.
                for r in 0..a.rows {
                    u.set(r, k, b.get(r, j) / sigma);
                }
                for r in 0..a.cols {
                    v.set(r, k, rot.get(r, j));
                }
            }
        }
        // Sign convention on the right singular vector.
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for r in 0..a.cols {
            let x = v.get(r, k).abs();
            if x > best_abs {
                best_abs = x;
                best = r;
            }
        }
        if v.get(best, k) < 0.0 {
            for r in 0..a.cols {
                let x = v.get(r, k);
                v.set(r, k, -x);
            }
            for r in 0..a.rows {
                let x = u.get(r, k);
                u.set(r, k, -x);
            }
        }
    }
    Ok(RawSvd {
        u,
        singular_values,
        v,
    })
}
