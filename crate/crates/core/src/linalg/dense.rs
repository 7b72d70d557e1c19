use nalgebra::{DMatrix, DVector};

use super::LinalgError;

/// How the Gram system is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GramMode {
    Plain,
    /// Symmetric diagonal scaling `P^{-1/2} G P^{-1/2}` with `P = diag(G)`.
    Jacobi,
    /// Diagonal scaling followed by a pseudoinverse that drops singular
    /// values below `eps * sigma_max`.
    JacobiThreshold(f64),
}

impl GramMode {
    pub fn name(&self) -> &'static str {
        match self {
            GramMode::Plain => "plain",
            GramMode::Jacobi => "jacobi",
            GramMode::JacobiThreshold(_) => "jacobi_threshold",
        }
    }

    pub fn eps(&self) -> Option<f64> {
        match self {
            GramMode::JacobiThreshold(e) => Some(*e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramReport {
    /// Condition number of the (scaled) matrix before truncation.
    pub cond: f64,
    /// Ratio of the largest to the smallest retained singular value.
    pub cond_retained: f64,
    pub rank: usize,
}

fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let s = singular_values(a);
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn pinv_solve(g: &DMatrix<f64>, rhs: &[f64], mode: GramMode) -> Result<(Vec<f64>, GramReport), LinalgError> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(LinalgError::NotSquare { rows: n, cols: g.ncols() });
    }
    assert_eq!(rhs.len(), n);
    if g.iter().chain(rhs).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let b = DVector::from_column_slice(rhs);
    match mode {
        GramMode::Plain => {
            let x = g.clone().lu().solve(&b).ok_or(LinalgError::Singular(n))?;
            let cond = condition_number(g);
            Ok((x.as_slice().to_vec(), GramReport { cond, cond_retained: cond, rank: n }))
        }
        GramMode::Jacobi | GramMode::JacobiThreshold(_) => {
            let mut scale = DVector::zeros(n);
            for i in 0..n {
                let d = g[(i, i)];
                if !(d > 0.0) {
                    return Err(LinalgError::ZeroDiagonal { index: i });
                }
                scale[i] = 1.0 / d.sqrt();
            }
            let gp = DMatrix::from_fn(n, n, |i, j| scale[i] * g[(i, j)] * scale[j]);
            let bp = b.component_mul(&scale);
            let (y, report) = match mode {
                GramMode::JacobiThreshold(eps) => {
                    let svd = gp.clone().svd(true, true);
                    let sigma = &svd.singular_values;
                    let smax = sigma.max();
                    let smin = sigma.min();
                    let cutoff = eps * smax;
                    let u = svd.u.as_ref().expect("left vectors");
                    let vt = svd.v_t.as_ref().expect("right vectors");
                    let mut y = DVector::zeros(n);
                    let mut rank = 0;
                    let mut smallest_kept = f64::INFINITY;
                    for k in 0..sigma.len() {
                        if sigma[k] > 0.0 && sigma[k] >= cutoff {
                            rank += 1;
                            smallest_kept = smallest_kept.min(sigma[k]);
                            let coeff = u.column(k).dot(&bp) / sigma[k];
                            y += vt.row(k).transpose() * coeff;
                        }
                    }
                    let cond = if smin == 0.0 { f64::INFINITY } else { smax / smin };
                    let cond_retained = if rank == 0 { f64::INFINITY } else { smax / smallest_kept };
                    (y, GramReport { cond, cond_retained, rank })
                }
                _ => {
                    let y = gp.clone().lu().solve(&bp).ok_or(LinalgError::Singular(n))?;
                    let cond = condition_number(&gp);
                    (y, GramReport { cond, cond_retained: cond, rank: n })
                }
            };
            Ok((y.component_mul(&scale).as_slice().to_vec(), report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_condition_number() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3]));
        assert!((condition_number(&a) - 1e3).abs() < 1e-9);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(condition_number(&s), f64::INFINITY);
    }

    #[test]
    fn threshold_drops_tiny_singular_value() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12]));
        let (x, rep) = pinv_solve(&g, &[1.0, 1.0], GramMode::JacobiThreshold(1e-10)).unwrap();
        // Jacobi scaling makes the matrix the identity, so nothing is dropped.
        assert_eq!(rep.rank, 2);
        assert!((x[1] - 1e12).abs() < 1e-3);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 - 1e-13, 1.0 - 1e-13, 1.0]);
        let (x, rep) = pinv_solve(&h, &[1.0, 1.0], GramMode::JacobiThreshold(1e-10)).unwrap();
        assert_eq!(rep.rank, 1);
        assert!(rep.cond > 1e12);
        assert!((x[0] - 0.5).abs() < 1e-10 && (x[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn jacobi_rejects_zero_diagonal() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.0]);
        assert_eq!(
            pinv_solve(&g, &[1.0, 1.0], GramMode::Jacobi).unwrap_err(),
            LinalgError::ZeroDiagonal { index: 1 }
        );
    }

    #[test]
    fn plain_rejects_singular() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(pinv_solve(&g, &[1.0, 1.0], GramMode::Plain).unwrap_err(), LinalgError::Singular(2));
    }

    proptest! {
        #[test]
        fn modes_agree_on_well_conditioned(entries in prop::collection::vec(-1.0f64..1.0, 16),
                                           rhs in prop::collection::vec(-1.0f64..1.0, 4)) {
            let a = DMatrix::from_column_slice(4, 4, &entries);
            let g = &a * a.transpose() + DMatrix::identity(4, 4);
            let (xp, _) = pinv_solve(&g, &rhs, GramMode::Plain).unwrap();
            let (xj, _) = pinv_solve(&g, &rhs, GramMode::Jacobi).unwrap();
            let (xt, rt) = pinv_solve(&g, &rhs, GramMode::JacobiThreshold(0.0)).unwrap();
            prop_assert_eq!(rt.rank, 4);
            let n = DVector::from_vec(xj.clone()).norm();
            for i in 0..4 {
                prop_assert!((xp[i] - xj[i]).abs() <= 1e-10 * n);
                prop_assert!((xt[i] - xj[i]).abs() <= 1e-10 * n);
            }
        }

        #[test]
        fn scaled_condition_is_scale_invariant(entries in prop::collection::vec(-1.0f64..1.0, 9),
                                               d in prop::collection::vec(0.1f64..10.0, 3)) {
            let a = DMatrix::from_column_slice(3, 3, &entries);
            let g = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let dm = DMatrix::from_diagonal(&DVector::from_vec(d));
            let h = &dm * &g * &dm;
            let (_, r1) = pinv_solve(&g, &[1.0; 3], GramMode::Jacobi).unwrap();
            let (_, r2) = pinv_solve(&h, &[1.0; 3], GramMode::Jacobi).unwrap();
            prop_assert!((r1.cond - r2.cond).abs() <= 1e-8 * r1.cond);
        }
    }
}
