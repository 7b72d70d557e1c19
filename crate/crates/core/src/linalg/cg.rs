use super::sparse::{axpy, dot, CsrMatrix};
use super::{Factorization, LinalgError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `|r| <= tol |b|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tol: 1e-9, max_iter: 5000 }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions { tol, ..Default::default() }
    }
}

/// Final iterate of a CG run. When `converged` is false, `x` is the last
/// iterate, which has the smallest energy-norm error seen.
#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
/// `project`, when given, is applied to the right-hand side and to every
/// residual and search direction, keeping iterates in its range.
pub fn cg_solve(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: CgOptions,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<CgResult, LinalgError> {
    let many = |xs: &[Vec<f64>]| xs.iter().map(|x| apply(x)).collect::<Vec<_>>();
    let mut out = cg_solve_batch(many, std::slice::from_ref(&b.to_vec()), opts, project)?;
    Ok(out.remove(0))
}

/// Runs independent CG iterations for several right-hand sides in lockstep so
/// that each step applies the operator to all active directions at once.
pub fn cg_solve_batch(
    mut apply: impl FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>,
    rhs: &[Vec<f64>],
    opts: CgOptions,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<Vec<CgResult>, LinalgError> {
    struct State {
        x: Vec<f64>,
        r: Vec<f64>,
        p: Vec<f64>,
        rr: f64,
        bnorm: f64,
        iterations: usize,
        done: bool,
    }
    let proj = |v: &mut [f64]| {
        if let Some(f) = project {
            f(v)
        }
    };
    let mut states: Vec<State> = rhs
        .iter()
        .map(|b| {
            let mut r = b.clone();
            proj(&mut r);
            let rr = dot(&r, &r);
            State { x: vec![0.0; b.len()], p: r.clone(), r, rr, bnorm: rr.sqrt(), iterations: 0, done: rr == 0.0 }
        })
        .collect();
    if states.iter().any(|s| !s.bnorm.is_finite()) {
        return Err(LinalgError::NonFinite);
    }

    for it in 0..opts.max_iter {
        let active: Vec<usize> = (0..states.len()).filter(|&j| !states[j].done).collect();
        if active.is_empty() {
            break;
        }
        let dirs: Vec<Vec<f64>> = active.iter().map(|&j| states[j].p.clone()).collect();
        let images = apply(&dirs);
        for (&j, mut ap) in active.iter().zip(images) {
            proj(&mut ap);
            let s = &mut states[j];
            let pap = dot(&s.p, &ap);
            if !(pap > 0.0) {
                return Err(LinalgError::Breakdown(it));
            }
            let alpha = s.rr / pap;
            axpy(alpha, &s.p, &mut s.x);
            axpy(-alpha, &ap, &mut s.r);
            proj(&mut s.r);
            let rr_new = dot(&s.r, &s.r);
            if !rr_new.is_finite() {
                return Err(LinalgError::Breakdown(it));
            }
            s.iterations = it + 1;
            if rr_new.sqrt() <= opts.tol * s.bnorm {
                s.rr = rr_new;
                s.done = true;
                continue;
            }
            let beta = rr_new / s.rr;
            s.rr = rr_new;
            for (pi, ri) in s.p.iter_mut().zip(&s.r) {
                *pi = ri + beta * *pi;
            }
            proj(&mut s.p);
        }
    }

    Ok(states
        .into_iter()
        .map(|s| {
            let relative_residual = if s.bnorm == 0.0 { 0.0 } else { s.rr.sqrt() / s.bnorm };
            CgResult { converged: relative_residual <= opts.tol, x: s.x, iterations: s.iterations, relative_residual }
        })
        .collect())
}

/// Saddle point system `[K B^T; B 0] [u; p] = [f; g]` solved through the
/// pressure Schur complement `S = B K^{-1} B^T` with a direct inner solve.
///
/// With `pressure_weights` set (the integrals of the pressure basis), the
/// pressure space is restricted to zero mean: the constant null vector of `S`
/// is projected out during CG and the result is shifted to `m^T p = 0`. The
/// pressure equation then only holds up to a multiple of `m`.
pub struct SaddleSystem<'a> {
    pub k: &'a Factorization,
    pub b: &'a CsrMatrix,
    pub pressure_weights: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

impl SaddleSystem<'_> {
    pub fn schur_apply_many(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let bt: Vec<Vec<f64>> = xs.iter().map(|x| self.b.tr_mul_vec(x)).collect();
        self.k.solve_many(&bt).iter().map(|y| self.b.mul_vec(y)).collect()
    }

    pub fn solve(&self, f: &[f64], g: &[f64], opts: CgOptions) -> Result<SaddleSolution, LinalgError> {
        let mut out = self.solve_many(&[(f.to_vec(), g.to_vec())], opts)?;
        Ok(out.remove(0))
    }

    pub fn solve_many(&self, rhs: &[(Vec<f64>, Vec<f64>)], opts: CgOptions) -> Result<Vec<SaddleSolution>, LinalgError> {
        let fs: Vec<Vec<f64>> = rhs.iter().map(|(f, _)| f.clone()).collect();
        let kf = self.k.solve_many(&fs);
        let schur_rhs: Vec<Vec<f64>> = kf
            .iter()
            .zip(rhs)
            .map(|(y, (_, g))| {
                let mut r = self.b.mul_vec(y);
                axpy(-1.0, g, &mut r);
                if let Some(m) = self.pressure_weights {
                    let c = r.iter().sum::<f64>() / m.iter().sum::<f64>();
                    axpy(-c, m, &mut r);
                }
                r
            })
            .collect();
        let projector: Option<&dyn Fn(&mut [f64])> = match self.pressure_weights {
            Some(_) => Some(&remove_mean),
            None => None,
        };
        let results = cg_solve_batch(|xs| self.schur_apply_many(xs), &schur_rhs, opts, projector)?;
        let pressures: Vec<Vec<f64>> = results
            .iter()
            .map(|res| {
                let mut p = res.x.clone();
                if let Some(m) = self.pressure_weights {
                    let c = dot(m, &p) / m.iter().sum::<f64>();
                    p.iter_mut().for_each(|x| *x -= c);
                }
                p
            })
            .collect();
        let vel_rhs: Vec<Vec<f64>> = pressures
            .iter()
            .zip(rhs)
            .map(|(p, (f, _))| {
                let mut v = f.clone();
                self.b.tr_mul_vec_add(-1.0, p, &mut v);
                v
            })
            .collect();
        let velocities = self.k.solve_many(&vel_rhs);
        Ok(results
            .into_iter()
            .zip(pressures.into_iter().zip(velocities))
            .map(|(res, (pressure, velocity))| SaddleSolution {
                velocity,
                pressure,
                iterations: res.iterations,
                relative_residual: res.relative_residual,
                converged: res.converged,
            })
            .collect())
    }
}

#[cfg(test)]
fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    use super::sparse::norm;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spd(n: usize, seed: &[f64]) -> nalgebra::DMatrix<f64> {
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        &a * a.transpose() + nalgebra::DMatrix::identity(n, n) * 0.5
    }

    fn dense_apply(a: &nalgebra::DMatrix<f64>) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |x| (a * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }

    #[test]
    fn solves_spd_system() {
        let a = spd(6, &[0.3, -1.2, 0.8, 2.0, 0.1, -0.4, 0.9]);
        let b = vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let res = cg_solve(dense_apply(&a), &b, CgOptions::with_tol(1e-12), None).unwrap();
        assert!(res.converged);
        let exact = a.clone().lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        assert!(relative_difference(&res.x, exact.as_slice()) < 1e-10);
    }

    #[test]
    fn max_iter_returns_flag() {
        let a = spd(8, &[0.3, -1.2, 0.8, 2.0, 0.1, -0.4, 0.9]);
        let b = vec![1.0; 8];
        let res = cg_solve(dense_apply(&a), &b, CgOptions { tol: 1e-14, max_iter: 2 }, None).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn nan_operator_breaks_down() {
        let res = cg_solve(|x| x.iter().map(|_| f64::NAN).collect(), &[1.0, 1.0], CgOptions::default(), None);
        assert_eq!(res.unwrap_err(), LinalgError::Breakdown(0));
    }

    #[test]
    fn batch_matches_single() {
        let a = spd(5, &[1.0, 0.2, -0.7, 0.4]);
        let rhs = vec![vec![1.0, 0.0, 0.0, 2.0, 1.0], vec![0.0, 0.0, 0.0, 0.0, 0.0], vec![3.0, -1.0, 2.0, 0.5, 0.0]];
        let apply = dense_apply(&a);
        let batch =
            cg_solve_batch(|xs| xs.iter().map(|x| apply(x)).collect(), &rhs, CgOptions::with_tol(1e-12), None).unwrap();
        for (b, res) in rhs.iter().zip(&batch) {
            let single = cg_solve(&apply, b, CgOptions::with_tol(1e-12), None).unwrap();
            assert_eq!(single, *res);
        }
        assert!(batch[1].converged && batch[1].iterations == 0);
    }

    proptest! {
        #[test]
        fn energy_error_is_non_increasing(seed in prop::collection::vec(-2.0f64..2.0, 7..20),
                                          b in prop::collection::vec(-1.0f64..1.0, 6)) {
            let a = spd(6, &seed);
            let exact = a.clone().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..6 {
                let res = cg_solve(dense_apply(&a), &b, CgOptions { tol: 0.0, max_iter: k }, None);
                let x = match res { Ok(r) => r.x, Err(_) => break };
                let e = nalgebra::DVector::from_vec(x) - &exact;
                let energy = (e.transpose() * &a * &e)[(0, 0)].sqrt();
                prop_assert!(energy <= prev * (1.0 + 1e-9) + 1e-12);
                prev = energy;
            }
        }
    }
}
