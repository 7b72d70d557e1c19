use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use faer::sparse::linalg::solvers::SymbolicLlt;

use super::sparse::{axpy, CsrMatrix};
use super::{Factorization, LinalgError};

/// Sinc quadrature for `(1 + mu)^(-t)`, `0 < t < 1`, with step `k` and nodes
/// `y_l = k l` for `l = -m_neg..=n_pos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SincRule {
    pub t: f64,
    pub k: f64,
    pub m_neg: usize,
    pub n_pos: usize,
}

impl SincRule {
    pub fn new(t: f64, k: f64) -> Result<Self, LinalgError> {
        if !(t > 0.0 && t < 1.0) {
            return Err(LinalgError::InvalidOrder(t));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(LinalgError::InvalidStep(k));
        }
        let m_neg = (PI * PI / (2.0 * (1.0 - t) * k * k)).ceil() as usize;
        let n_pos = (PI * PI / (2.0 * t * k * k)).ceil() as usize;
        Ok(SincRule { t, k, m_neg, n_pos })
    }

    pub fn node_count(&self) -> usize {
        self.m_neg + self.n_pos + 1
    }

    /// `(weight, shift)` pairs: the rule is `sum weight * ((shift) M + L)^{-1}`.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let scale = self.k * (PI * self.t).sin() / PI;
        (-(self.m_neg as i64)..=self.n_pos as i64)
            .map(|l| {
                let y = self.k * l as f64;
                (scale * ((1.0 - self.t) * y).exp(), y.exp() + 1.0)
            })
            .collect()
    }

    /// The rule applied to a scalar: approximates `(1 + mu)^(-t)`.
    pub fn scalar(&self, mu: f64) -> f64 {
        self.nodes().iter().map(|(w, s)| w / (s + mu)).sum()
    }
}

type NodeFactors = Arc<Vec<(f64, Factorization)>>;

/// Inverse of the discrete `H^s` operator on a trace space with mass `M` and
/// stiffness `L`: with `T = M^{-1}(M + L)` the operator applies `T^{-s} M^{-1}`.
/// Integer orders use direct solves with `M + L` chained through `M`; a
/// fractional part uses the sinc rule. Per-node factorizations are cached.
pub struct FractionalOperator {
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    a1: Factorization,
    symbolic: SymbolicLlt<usize>,
    nodes: Mutex<HashMap<(u64, u64), NodeFactors>>,
}

impl FractionalOperator {
    pub fn new(mass: CsrMatrix, stiffness: CsrMatrix) -> Result<Self, LinalgError> {
        let a = mass.add(1.0, &stiffness, 1.0);
        let symbolic = Factorization::symbolic_of(&a)?;
        let a1 = Factorization::with_symbolic(&symbolic, &a)?;
        Ok(FractionalOperator { mass, stiffness, a1, symbolic, nodes: Mutex::new(HashMap::new()) })
    }

    pub fn size(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    fn split(s: f64) -> Result<(usize, f64), LinalgError> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(LinalgError::InvalidOrder(s));
        }
        let m = s.floor();
        let t = s - m;
        if t < 1e-12 {
            Ok((m as usize, 0.0))
        } else if 1.0 - t < 1e-12 {
            Ok((m as usize + 1, 0.0))
        } else {
            Ok((m as usize, t))
        }
    }

    fn node_factors(&self, rule: &SincRule) -> Result<NodeFactors, LinalgError> {
        let key = (rule.t.to_bits(), rule.k.to_bits());
        if let Some(f) = self.nodes.lock().unwrap().get(&key) {
            return Ok(f.clone());
        }
        let mut out = Vec::with_capacity(rule.node_count());
        for (w, shift) in rule.nodes() {
            let a = self.mass.add(shift, &self.stiffness, 1.0);
            out.push((w, Factorization::with_symbolic(&self.symbolic, &a)?));
        }
        let out = Arc::new(out);
        self.nodes.lock().unwrap().insert(key, out.clone());
        Ok(out)
    }

    /// Sinc approximation of `T^{-t} M^{-1} b` for `0 < t < 1`.
    pub fn sinc_apply(&self, t: f64, k: f64, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let rule = SincRule::new(t, k)?;
        let factors = self.node_factors(&rule)?;
        let mut y = vec![0.0; b.len()];
        for (w, f) in factors.iter() {
            axpy(*w, &f.solve(b), &mut y);
        }
        Ok(y)
    }

    /// `A_s^{-1} b`; `k` is only used when `s` is not an integer.
    pub fn apply_inverse(&self, s: f64, k: f64, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        assert_eq!(b.len(), self.size());
        let (m, t) = Self::split(s)?;
        let mut y = b.to_vec();
        if m >= 1 {
            y = self.a1.solve(&y);
            for _ in 1..m {
                y = self.a1.solve(&self.mass.mul_vec(&y));
            }
            if t > 0.0 {
                y = self.mass.mul_vec(&y);
            }
        }
        if t > 0.0 {
            y = self.sinc_apply(t, k, &y)?;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts() {
        let r = SincRule::new(0.6, 0.4).unwrap();
        assert_eq!((r.m_neg, r.n_pos), (78, 52));
        assert_eq!(r.node_count(), 131);
    }

    #[test]
    fn scalar_rule_converges() {
        let mut prev = f64::INFINITY;
        for k in [0.8, 0.6, 0.4, 0.2] {
            let r = SincRule::new(0.3, k).unwrap();
            let err = [0.0, 1.0, 10.0, 1e3, 1e5]
                .iter()
                .map(|&mu| (r.scalar(mu) - (1.0 + mu).powf(-0.3)).abs() / (1.0 + mu).powf(-0.3))
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn invalid_parameters() {
        assert_eq!(SincRule::new(1.0, 0.4).unwrap_err(), LinalgError::InvalidOrder(1.0));
        assert_eq!(SincRule::new(0.5, 0.0).unwrap_err(), LinalgError::InvalidStep(0.0));
    }

    #[test]
    fn diagonal_operator_matches_powers() {
        let n = 4;
        let mu = [0.0, 0.5, 3.0, 40.0];
        let mass = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 2.0)).collect());
        let stiff = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 2.0 * mu[i])).collect());
        let op = FractionalOperator::new(mass, stiff).unwrap();
        for s in [0.5, 1.0, 1.4, 2.0, 2.7] {
            let y = op.apply_inverse(s, 0.2, &[2.0; 4]).unwrap();
            for i in 0..n {
                let exact = (1.0 + mu[i]).powf(-s);
                assert!((y[i] - exact).abs() < 1e-7 * exact, "s={s} i={i} {} {exact}", y[i]);
            }
        }
    }
}
