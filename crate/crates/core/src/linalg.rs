//! Small dense complex linear algebra on top of `nalgebra`: sorted SVD,
//! null spaces, least squares, cofactor determinants and polynomial roots.

use nalgebra::{DMatrix, DVector};

use crate::error::{GarnierError, Result};
use crate::theta_kernel::C64;

/// SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<C64>,
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: DMatrix<C64>,
}

pub fn svd(m: &DMatrix<C64>) -> SortedSvd {
    let s = m.clone().svd(true, true);
    let u = s.u.expect("u requested");
    let v_t = s.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..s.singular_values.len()).collect();
    order.sort_by(|&a, &b| s.singular_values[b].total_cmp(&s.singular_values[a]));
    let sigma = order.iter().map(|&i| s.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)].conj());
    SortedSvd { u, sigma, v }
}

/// Scale every row to unit Euclidean norm (zero rows are left alone).
pub fn normalize_rows(m: &mut DMatrix<C64>) {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= C64::new(n, 0.0);
        }
    }
}

/// Full SVD of a possibly wide matrix, padding with zero rows so that the
/// complete set of right singular vectors is available.
pub fn svd_padded(m: &DMatrix<C64>) -> SortedSvd {
    if m.nrows() >= m.ncols() {
        return svd(m);
    }
    let mut padded = DMatrix::zeros(m.ncols(), m.ncols());
    padded.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
    svd(&padded)
}

/// Result of a one-dimensional kernel extraction.
pub struct Kernel {
    pub vector: DVector<C64>,
    /// Ratio of the second-smallest to the smallest singular value.
    pub gap: f64,
    /// Ratio of the largest to the second-smallest singular value.
    pub condition: f64,
}

/// Extract the kernel of `m`, which must be numerically one-dimensional:
/// the singular-value gap must be at least `min_gap`.
pub fn kernel_1d(m: &DMatrix<C64>, min_gap: f64, context: &'static str) -> Result<Kernel> {
    let s = svd_padded(m);
    let n = s.sigma.len();
    if n == 0 {
        return Err(GarnierError::Degenerate { context, gap: 0.0 });
    }
    let smallest = s.sigma[n - 1];
    let second = if n >= 2 { s.sigma[n - 2] } else { s.sigma[0] };
    let gap = if smallest > 0.0 {
        second / smallest
    } else {
        f64::INFINITY
    };
    let gap = gap.min(1e300);
    if n < 2 || !(gap >= min_gap) {
        return Err(GarnierError::Degenerate { context, gap });
    }
    let condition = s.sigma[0] / second;
    Ok(Kernel {
        vector: s.v.column(n - 1).into_owned(),
        gap,
        condition,
    })
}

/// Least-squares solution of `m x = b` with column equilibration.
/// Returns the solution and the condition number of the equilibrated matrix.
pub fn least_squares(m: &DMatrix<C64>, b: &DVector<C64>) -> (DVector<C64>, f64) {
    let scales: Vec<f64> = m
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] / scales[c]);
    let s = svd(&scaled);
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    let smin = s.sigma.last().copied().unwrap_or(0.0);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let mut x = DVector::zeros(m.ncols());
    for (k, &sig) in s.sigma.iter().enumerate() {
        if sig <= smax * 1e-300 || sig == 0.0 {
            continue;
        }
        let coef = s.u.column(k).dotc(b) / sig;
        x += s.v.column(k) * coef;
    }
    for (i, xi) in x.iter_mut().enumerate() {
        *xi /= scales[i];
    }
    (x, condition)
}

/// Determinant by Laplace expansion along the first row.
pub fn det_cofactor(m: &[Vec<C64>]) -> C64 {
    let n = m.len();
    match n {
        0 => C64::new(1.0, 0.0),
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            let mut total = C64::new(0.0, 0.0);
            for j in 0..n {
                let minor: Vec<Vec<C64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|&(c, _)| c != j)
                            .map(|(_, &v)| v)
                            .collect()
                    })
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                total += m[0][j] * sign * det_cofactor(&minor);
            }
            total
        }
    }
}

/// Roots of `Σ_i coeffs[i] x^i` as eigenvalues of the companion matrix.
/// Leading coefficients that vanish are dropped first.
pub fn polynomial_roots(coeffs: &[C64]) -> Vec<C64> {
    let max = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let mut hi = coeffs.len();
    while hi > 0 && coeffs[hi - 1].norm() == 0.0 {
        hi -= 1;
    }
    let mut lo = 0;
    while lo < hi && coeffs[lo].norm() == 0.0 {
        lo += 1;
    }
    let mut roots = vec![C64::new(0.0, 0.0); lo];
    let c = &coeffs[lo..hi];
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return roots;
    }
    let lead = c[deg];
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let schur = nalgebra::linalg::Schur::new(comp);
    let (_, t) = schur.unpack();
    roots.extend((0..deg).map(|i| t[(i, i)]));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (x - 1)(x - 2i)(x + 0.5) = x^3 + (-0.5 - 2i) x^2 + (-0.5 + i) x + i
        let rs = [c(1.0, 0.0), c(0.0, 2.0), c(-0.5, 0.0)];
        let mut coeffs = vec![c(1.0, 0.0)];
        for r in rs {
            let mut next = vec![c(0.0, 0.0); coeffs.len() + 1];
            for (i, &a) in coeffs.iter().enumerate() {
                next[i + 1] += a;
                next[i] -= a * r;
            }
            coeffs = next;
        }
        let found = polynomial_roots(&coeffs);
        assert_eq!(found.len(), 3);
        for r in rs {
            assert!(found.iter().any(|f| (f - r).norm() < 1e-12));
        }
    }

    #[test]
    fn kernel_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 3, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(0.0, 1.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let k = kernel_1d(&m, 1e6, "test").unwrap();
        let r = &m * &k.vector;
        assert!(r.norm() < 1e-14);
        let full = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(kernel_1d(&full, 1e6, "test").is_err());
    }

    #[test]
    fn cofactor_determinant() {
        let m = vec![
            vec![c(2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)],
            vec![c(1.0, 1.0), c(3.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0), c(4.0, -1.0)],
        ];
        let d = det_cofactor(&m);
        let dm = DMatrix::from_fn(3, 3, |r, cc| m[r][cc]).determinant();
        assert!((d - dm).norm() < 1e-13);
        assert_eq!(det_cofactor(&[]), c(1.0, 0.0));
    }

    #[test]
    fn least_squares_exact() {
        let m = DMatrix::from_row_slice(3, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(1.0, 0.0), c(3.0, 1.0)]);
        let x0 = DVector::from_vec(vec![c(0.5, -1.0), c(2.0, 0.25)]);
        let b = &m * &x0;
        let (x, cond) = least_squares(&m, &b);
        assert!((x - x0).norm() < 1e-13);
        assert!(cond < 10.0);
    }
}
