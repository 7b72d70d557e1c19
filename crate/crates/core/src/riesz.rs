//! Riesz representers of measurement functionals in the space of discrete
//! Stokes solutions with unknown boundary trace, normed by the `H^s` trace
//! norm plus the squared pressure mean.
//!
//! A representer `(w, r0 + Lambda)` is computed in three decoupled steps:
//! Lagrange multipliers from a Stokes solve, the boundary trace from a
//! fractional diffusion problem with a flux constraint, and the interior
//! lift from a second Stokes solve.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{assemble_system, functional_vectors, AssemblyError, FunctionalVectors, StokesOperators};
use crate::element::DegenerateJacobian;
use crate::femspace::{DofLayout, FemError, DIM};
use crate::linalg::sparse::{axpy, dot};
use crate::linalg::{CgOptions, Factorization, FractionalOperator, LinalgError, SaddleSystem};
use crate::measurements::{Functional, FunctionalQuadrature};
use crate::mesh::Mesh;

/// Right-hand sides processed together by the batched Schur solver.
pub const BATCH: usize = 32;

/// Largest system (total unknowns) the dense oracle accepts; the unit
/// square at level 3 needs 1193.
pub const ORACLE_MAX_UNKNOWNS: usize = 1500;

#[derive(Debug, Error)]
pub enum RieszError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Quadrature(#[from] DegenerateJacobian),
    #[error("{stage}: {source}")]
    Linalg { stage: &'static str, source: LinalgError },
    #[error("{stage}: CG stopped at relative residual {residual:e} after {iterations} iterations")]
    NotConverged { stage: &'static str, residual: f64, iterations: usize },
    #[error("the unknown boundary is empty")]
    EmptyBoundary,
    #[error("boundary flux constraint is degenerate (D^T A_s^-1 D = {0:e})")]
    DegenerateConstraint(f64),
    #[error("oracle limited to {ORACLE_MAX_UNKNOWNS} unknowns, system has {0}")]
    OracleTooLarge(usize),
    #[error("oracle requires s = 1, got {0}")]
    OracleOrder(f64),
}

fn stage(stage: &'static str) -> impl Fn(LinalgError) -> RieszError {
    move |source| RieszError::Linalg { stage, source }
}

/// Mesh, dofs, assembled operators and the factorizations shared by all solves.
pub struct Discretization {
    pub mesh: Mesh,
    pub layout: DofLayout,
    pub ops: StokesOperators,
    pub k0: Factorization,
    pub trace: FractionalOperator,
    pub quad: FunctionalQuadrature,
}

impl Discretization {
    pub fn new(mesh: Mesh, unknown_markers: &[u32]) -> Result<Self, RieszError> {
        let layout = DofLayout::build(&mesh, unknown_markers)?;
        if layout.n_boundary() == 0 {
            return Err(RieszError::EmptyBoundary);
        }
        let ops = assemble_system(&mesh, &layout)?;
        let k0 = Factorization::new(&ops.k0).map_err(stage("interior stiffness factorization"))?;
        let trace = FractionalOperator::new(ops.trace_mass.clone(), ops.trace_stiffness.clone())
            .map_err(stage("trace operator factorization"))?;
        let quad = FunctionalQuadrature::new(&mesh)?;
        Ok(Discretization { mesh, layout, ops, k0, trace, quad })
    }

    pub fn saddle(&self) -> SaddleSystem<'_> {
        SaddleSystem { k: &self.k0, b: &self.ops.b0, pressure_weights: Some(&self.ops.pressure_weights) }
    }

    pub fn functional_vectors(&self, f: &Functional) -> FunctionalVectors {
        functional_vectors(&self.quad, &self.layout, f)
    }

    /// Interior part of a functional's velocity vector with constrained entries zeroed.
    fn interior_load(&self, fv: &FunctionalVectors) -> Vec<f64> {
        let ni = self.layout.interior_len();
        fv.velocity[..ni].iter().zip(&self.ops.constrained).map(|(&v, &c)| if c { 0.0 } else { v }).collect()
    }

    /// `A_s^{-1}` applied separately to each velocity component of a boundary vector.
    pub fn fractional_inverse(&self, s: f64, k: f64, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let nb = self.layout.n_boundary();
        let mut out = Vec::with_capacity(v.len());
        for c in 0..DIM {
            out.extend(self.trace.apply_inverse(s, k, &v[c * nb..(c + 1) * nb])?);
        }
        Ok(out)
    }

    /// `a_1(x, y) = x^T (M + L) y` componentwise.
    pub fn trace_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let nb = self.layout.n_boundary();
        let mut total = 0.0;
        for c in 0..DIM {
            let r = c * nb..(c + 1) * nb;
            total += dot(&x[r.clone()], &self.trace.mass().mul_vec(&y[r.clone()]));
            total += dot(&x[r.clone()], &self.trace.stiffness().mul_vec(&y[r]));
        }
        total
    }
}

/// Step-1 output: Lagrange multipliers of the first equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub pi: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RieszRepresenter {
    pub functional: Functional,
    pub w0: Vec<f64>,
    pub wb: Vec<f64>,
    pub r0: Vec<f64>,
    pub lambda: f64,
    pub pi: Vec<f64>,
    pub p: Vec<f64>,
    pub gamma: f64,
    pub s: f64,
    pub tol: f64,
}

impl RieszRepresenter {
    /// Velocity over all dofs, interior block first.
    pub fn velocity(&self) -> Vec<f64> {
        let mut v = self.w0.clone();
        v.extend_from_slice(&self.wb);
        v
    }
}

/// `Lambda = lambda(0, 1)`, the pressure mean of the representer.
pub fn mean_constant(fv: &FunctionalVectors) -> f64 {
    fv.pressure.iter().sum()
}

fn check_converged(stage: &'static str, residual: f64, iterations: usize, converged: bool) -> Result<(), RieszError> {
    if converged {
        Ok(())
    } else {
        Err(RieszError::NotConverged { stage, residual, iterations })
    }
}

/// Step 1: `S P = B0 K0^{-1} F0 - G`, then `K0 Pi = F0 - B0^T P`, for a batch.
pub fn solve_multipliers(
    disc: &Discretization,
    fvecs: &[&FunctionalVectors],
    cg: CgOptions,
) -> Result<Vec<Multipliers>, RieszError> {
    let rhs: Vec<(Vec<f64>, Vec<f64>)> = fvecs.iter().map(|fv| (disc.interior_load(fv), fv.pressure.clone())).collect();
    let sols = disc.saddle().solve_many(&rhs, cg).map_err(stage("multiplier solve"))?;
    sols.into_iter()
        .map(|s| {
            check_converged("multiplier solve", s.relative_residual, s.iterations, s.converged)?;
            Ok(Multipliers { pi: s.velocity, p: s.pressure, iterations: s.iterations })
        })
        .collect()
}

/// Representer computation for fixed order `s`, sinc step `k` and CG tolerance.
pub struct RieszContext<'a> {
    pub disc: &'a Discretization,
    pub s: f64,
    pub k: f64,
    pub cg: CgOptions,
    ad: Vec<f64>,
    dad: f64,
}

impl<'a> RieszContext<'a> {
    pub fn new(disc: &'a Discretization, s: f64, k: f64, cg: CgOptions) -> Result<Self, RieszError> {
        let ad = disc.fractional_inverse(s, k, &disc.ops.d).map_err(stage("fractional inverse of D"))?;
        let dad = dot(&disc.ops.d, &ad);
        if !(dad > 0.0) {
            return Err(RieszError::DegenerateConstraint(dad));
        }
        Ok(RieszContext { disc, s, k, cg, ad, dad })
    }

    /// Reuses a previously computed `A_s^{-1} D` and `D^T A_s^{-1} D`.
    pub fn from_constraint(disc: &'a Discretization, s: f64, k: f64, cg: CgOptions, ad: Vec<f64>, dad: f64) -> Self {
        RieszContext { disc, s, k, cg, ad, dad }
    }

    pub fn constraint(&self) -> (&[f64], f64) {
        (&self.ad, self.dad)
    }

    /// Step 2: `gamma` and the compatible boundary trace `W_b`.
    pub fn boundary_trace(&self, fv: &FunctionalVectors, m: &Multipliers) -> Result<(Vec<f64>, f64), RieszError> {
        let ops = &self.disc.ops;
        let ni = self.disc.layout.interior_len();
        let mut rhs = fv.velocity[ni..].to_vec();
        ops.kb.tr_mul_vec_add(-1.0, &m.pi, &mut rhs);
        ops.bb.tr_mul_vec_add(-1.0, &m.p, &mut rhs);
        let mut u = self.disc.fractional_inverse(self.s, self.k, &rhs).map_err(stage("boundary trace"))?;
        let gamma = dot(&ops.d, &u) / self.dad;
        axpy(-gamma, &self.ad, &mut u);
        Ok((u, gamma))
    }

    /// Step 3: `S R0 = (B_b - B0 K0^{-1} K_b) W_b`, then `K0 W0 = -K_b W_b - B0^T R0`.
    pub fn lift_interior(&self, wbs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, RieszError> {
        let ops = &self.disc.ops;
        let rhs: Vec<(Vec<f64>, Vec<f64>)> = wbs
            .iter()
            .map(|wb| {
                let mut f = ops.kb.mul_vec(wb);
                let mut g = ops.bb.mul_vec(wb);
                f.iter_mut().for_each(|x| *x = -*x);
                g.iter_mut().for_each(|x| *x = -*x);
                (f, g)
            })
            .collect();
        let sols = self.disc.saddle().solve_many(&rhs, self.cg).map_err(stage("interior lift"))?;
        sols.into_iter()
            .map(|s| {
                check_converged("interior lift", s.relative_residual, s.iterations, s.converged)?;
                Ok((s.velocity, s.pressure))
            })
            .collect()
    }

    /// Steps 2 and 3 given precomputed Step-1 multipliers.
    pub fn complete(
        &self,
        functionals: &[Functional],
        fvecs: &[&FunctionalVectors],
        mults: Vec<Multipliers>,
    ) -> Result<Vec<RieszRepresenter>, RieszError> {
        let traces: Vec<(Vec<f64>, f64)> =
            fvecs.iter().zip(&mults).map(|(fv, m)| self.boundary_trace(fv, m)).collect::<Result<_, _>>()?;
        let wbs: Vec<Vec<f64>> = traces.iter().map(|(wb, _)| wb.clone()).collect();
        let lifts = self.lift_interior(&wbs)?;
        Ok(functionals
            .iter()
            .zip(fvecs)
            .zip(mults.into_iter().zip(traces.into_iter().zip(lifts)))
            .map(|((f, fv), (m, ((wb, gamma), (w0, r0))))| RieszRepresenter {
                functional: *f,
                w0,
                wb,
                r0,
                lambda: mean_constant(fv),
                pi: m.pi,
                p: m.p,
                gamma,
                s: self.s,
                tol: self.cg.tol,
            })
            .collect())
    }

    /// Representers in input order; batches run in parallel.
    pub fn compute_representers(&self, functionals: &[Functional]) -> Result<Vec<RieszRepresenter>, RieszError> {
        let chunks: Vec<Result<Vec<RieszRepresenter>, RieszError>> = functionals
            .par_chunks(BATCH)
            .map(|chunk| {
                let fvecs: Vec<FunctionalVectors> = chunk.iter().map(|f| self.disc.functional_vectors(f)).collect();
                let refs: Vec<&FunctionalVectors> = fvecs.iter().collect();
                let mults = solve_multipliers(self.disc, &refs, self.cg)?;
                self.complete(chunk, &refs, mults)
            })
            .collect();
        let mut out = Vec::with_capacity(functionals.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn compute_representer(&self, f: &Functional) -> Result<RieszRepresenter, RieszError> {
        Ok(self.compute_representers(std::slice::from_ref(f))?.remove(0))
    }
}

/// Dense direct solve of the coupled saddle system for `s = 1`.
///
/// Unknowns are `[W0, W_b, R0, Pi, P, gamma, mu_P, mu_R]`, where the last
/// two multiply the zero-mean constraints on `P` and `R0`. Returns the
/// representer and the relative residual of the dense solve.
pub fn monolithic_oracle(disc: &Discretization, f: &Functional, s: f64) -> Result<(RieszRepresenter, f64), RieszError> {
    if s != 1.0 {
        return Err(RieszError::OracleOrder(s));
    }
    let layout = &disc.layout;
    let ops = &disc.ops;
    let ni = layout.interior_len();
    let nb = layout.boundary_len();
    let np = layout.pressure_len();
    let total = 2 * ni + nb + 2 * np + 3;
    if total > ORACLE_MAX_UNKNOWNS {
        return Err(RieszError::OracleTooLarge(total));
    }
    let (o_w0, o_wb, o_r0, o_pi, o_p) = (0, ni, ni + nb, ni + nb + np, 2 * ni + nb + np);
    let (o_g, o_mp, o_mr) = (total - 3, total - 2, total - 1);
    let mut a = DMatrix::<f64>::zeros(total, total);
    let put = |a: &mut DMatrix<f64>, r0: usize, c0: usize, m: &crate::linalg::CsrMatrix, transpose: bool| {
        for (r, c, v) in m.triplets() {
            if transpose {
                a[(r0 + c, c0 + r)] += v;
            } else {
                a[(r0 + r, c0 + c)] += v;
            }
        }
    };
    // First equation, tested with interior velocity, boundary velocity and pressure.
    let rows_v0 = 0;
    let rows_vb = ni;
    let rows_q = ni + nb;
    put(&mut a, rows_v0, o_pi, &ops.k0, false);
    put(&mut a, rows_v0, o_p, &ops.b0, true);
    let nbs = layout.n_boundary();
    for c in 0..DIM {
        let off = c * nbs;
        for (r, cc, v) in ops.trace_mass.triplets().chain(ops.trace_stiffness.triplets()) {
            a[(rows_vb + off + r, o_wb + off + cc)] += v;
        }
    }
    put(&mut a, rows_vb, o_pi, &ops.kb, true);
    put(&mut a, rows_vb, o_p, &ops.bb, true);
    for (i, &d) in ops.d.iter().enumerate() {
        a[(rows_vb + i, o_g)] += d;
    }
    put(&mut a, rows_q, o_pi, &ops.b0, false);
    for (i, &m) in ops.pressure_weights.iter().enumerate() {
        a[(rows_q + i, o_mp)] += m;
    }
    // Second equation, tested with interior velocity, pressure and constants.
    let rows_z = ni + nb + np;
    let rows_t = 2 * ni + nb + np;
    put(&mut a, rows_z, o_w0, &ops.k0, false);
    put(&mut a, rows_z, o_wb, &ops.kb, false);
    put(&mut a, rows_z, o_r0, &ops.b0, true);
    put(&mut a, rows_t, o_w0, &ops.b0, false);
    put(&mut a, rows_t, o_wb, &ops.bb, false);
    for (i, &m) in ops.pressure_weights.iter().enumerate() {
        a[(rows_t + i, o_mr)] += m;
        a[(o_mp, o_p + i)] += m;
        a[(o_mr, o_r0 + i)] += m;
    }
    for (i, &d) in ops.d.iter().enumerate() {
        a[(o_g, o_wb + i)] += d;
    }

    let fv = disc.functional_vectors(f);
    let mut b = DVector::<f64>::zeros(total);
    for (i, v) in disc.interior_load(&fv).into_iter().enumerate() {
        b[rows_v0 + i] = v;
    }
    for (i, &v) in fv.velocity[ni..].iter().enumerate() {
        b[rows_vb + i] = v;
    }
    for (i, &v) in fv.pressure.iter().enumerate() {
        b[rows_q + i] = v;
    }
    let x = a.clone().lu().solve(&b).ok_or_else(|| RieszError::Linalg {
        stage: "dense oracle",
        source: LinalgError::Singular(total),
    })?;
    let residual = (&a * &x - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
    let seg = |o: usize, n: usize| x.rows(o, n).iter().copied().collect::<Vec<f64>>();
    let rep = RieszRepresenter {
        functional: *f,
        w0: seg(o_w0, ni),
        wb: seg(o_wb, nb),
        r0: seg(o_r0, np),
        lambda: mean_constant(&fv),
        pi: seg(o_pi, ni),
        p: seg(o_p, np),
        gamma: x[o_g],
        s,
        tol: 0.0,
    };
    Ok((rep, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::norm;
    use crate::measurements::Component;

    fn square(n: u32) -> Discretization {
        Discretization::new(Mesh::unit_square(n).unwrap(), &[1]).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b).max(1e-300)
    }

    #[test]
    fn mean_constant_of_velocity_functional_is_zero() {
        let disc = square(2);
        let f = Functional::gaussian([0.3, 0.6], 0.1, Component::Velocity(0)).unwrap();
        assert_eq!(mean_constant(&disc.functional_vectors(&f)), 0.0);
        let g = Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap();
        assert!((mean_constant(&disc.functional_vectors(&g)) - 0.25066).abs() < 1e-4);
    }

    #[test]
    fn manufactured_multipliers_are_recovered() {
        let disc = square(2);
        let ni = disc.layout.interior_len();
        let np = disc.layout.pressure_len();
        let pi: Vec<f64> = (0..ni).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let mut p: Vec<f64> = (0..np).map(|i| ((i * 5 % 11) as f64) / 11.0).collect();
        let m = &disc.ops.pressure_weights;
        let c = dot(m, &p) / m.iter().sum::<f64>();
        p.iter_mut().for_each(|x| *x -= c);
        let mut f0 = disc.ops.k0.mul_vec(&pi);
        disc.ops.b0.tr_mul_vec_add(1.0, &p, &mut f0);
        let g = disc.ops.b0.mul_vec(&pi);
        let tol = 1e-10;
        let sol = disc.saddle().solve(&f0, &g, CgOptions::with_tol(tol)).unwrap();
        assert!(rel(&sol.velocity, &pi) < 10.0 * tol * 100.0);
        assert!(rel(&sol.pressure, &p) < 10.0 * tol * 100.0);
    }

    #[test]
    fn representer_invariants() {
        let disc = square(2);
        let ctx = RieszContext::new(&disc, 1.0, 0.4, CgOptions::with_tol(1e-11)).unwrap();
        let fs = [
            Functional::gaussian([0.3, 0.4], 0.1, Component::Velocity(0)).unwrap(),
            Functional::gaussian([0.6, 0.7], 0.1, Component::Velocity(1)).unwrap(),
            Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap(),
        ];
        let reps = ctx.compute_representers(&fs).unwrap();
        let m = &disc.ops.pressure_weights;
        for r in &reps {
            assert!(dot(&disc.ops.d, &r.wb).abs() <= 1e-9 * norm(&r.wb));
            assert!(dot(m, &r.r0).abs() <= 1e-12 * norm(&r.r0).max(1.0));
            assert!(dot(m, &r.p).abs() <= 1e-12 * norm(&r.p).max(1.0));
        }
        assert_eq!(reps[0].lambda, 0.0);
        assert!(reps[2].lambda > 0.2);
    }

    #[test]
    fn zero_functional_gives_zero_representer() {
        let disc = square(1);
        let ctx = RieszContext::new(&disc, 1.0, 0.4, CgOptions::default()).unwrap();
        let fv = FunctionalVectors {
            velocity: vec![0.0; disc.layout.velocity_len()],
            pressure: vec![0.0; disc.layout.pressure_len()],
        };
        let f = Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap();
        let mults = solve_multipliers(&disc, &[&fv], ctx.cg).unwrap();
        assert!(mults[0].pi.iter().all(|&x| x == 0.0) && mults[0].p.iter().all(|&x| x == 0.0));
        let rep = ctx.complete(&[f], &[&fv], mults).unwrap().remove(0);
        assert!(rep.wb.iter().all(|&x| x == 0.0) && rep.gamma == 0.0);
        assert!(rep.w0.iter().all(|&x| x == 0.0) && rep.r0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rigid_motion_trace_lifts_exactly() {
        let disc = square(2);
        let ctx = RieszContext::new(&disc, 1.0, 0.4, CgOptions::with_tol(1e-12)).unwrap();
        let layout = &disc.layout;
        let rigid = |p: [f64; 2]| [0.3 - 1.2 * p[1], -0.7 + 1.2 * p[0]];
        let mut full = vec![0.0; layout.velocity_len()];
        for (i, node) in layout.nodes().iter().enumerate() {
            let v = rigid(node.point);
            for c in 0..DIM {
                full[layout.velocity_dof(i, c)] = v[c];
            }
        }
        let ni = layout.interior_len();
        let wb = full[ni..].to_vec();
        assert!(dot(&disc.ops.d, &wb).abs() < 1e-12);
        let (w0, r0) = ctx.lift_interior(&[wb]).unwrap().remove(0);
        assert!(rel(&w0, &full[..ni]) < 1e-10);
        assert!(norm(&r0) < 1e-10);
    }

    #[test]
    fn oracle_agrees_with_decoupled_path() {
        let disc = square(2);
        let ctx = RieszContext::new(&disc, 1.0, 0.4, CgOptions::with_tol(1e-13)).unwrap();
        for f in [
            Functional::gaussian([0.3, 0.4], 0.1, Component::Velocity(0)).unwrap(),
            Functional::gaussian([0.7, 0.2], 0.1, Component::Pressure).unwrap(),
        ] {
            let rep = ctx.compute_representer(&f).unwrap();
            let (orc, res) = monolithic_oracle(&disc, &f, 1.0).unwrap();
            assert!(res < 1e-10);
            assert!(rel(&rep.wb, &orc.wb) < 1e-8);
            assert!(rel(&rep.w0, &orc.w0) < 1e-8);
            assert!(rel(&rep.r0, &orc.r0) < 1e-8);
            assert!(rel(&rep.pi, &orc.pi) < 1e-8);
            assert!(rel(&rep.p, &orc.p) < 1e-8);
            assert!((rep.gamma - orc.gamma).abs() <= 1e-8 * orc.gamma.abs().max(1e-12));
        }
    }

    #[test]
    fn oracle_guards() {
        let disc = square(1);
        let f = Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap();
        assert!(matches!(monolithic_oracle(&disc, &f, 0.5), Err(RieszError::OracleOrder(_))));
        let big = square(4);
        assert!(matches!(monolithic_oracle(&big, &f, 1.0), Err(RieszError::OracleTooLarge(_))));
    }
}
