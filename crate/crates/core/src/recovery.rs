//! Optimal recovery pipeline: background solve, measurement shift, Gram
//! system, recovered field, error norms and boundary forces.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{assemble_load, cell_points, AssemblyError, FunctionalVectors, StokesOperators};
use crate::element::{edge_point, gauss, q1_values, CellMap, QuadPoint};
use crate::femspace::{DofLayout, CENTER_NODE, DIM};
use crate::linalg::sparse::{axpy, dot};
use crate::linalg::{condition_number, pinv_solve, CgOptions, Factorization, GramMode, GramReport, LinalgError, SaddleSystem};
use crate::measurements::{
    apply_to_discrete, measurement_vector, AnalyticField, Functional, MeasurementError, MeasurementSet,
};
use crate::mesh::{Mesh, Point};
use crate::riesz::{solve_multipliers, Discretization, Multipliers, RieszContext, RieszError, RieszRepresenter, BATCH};

/// Cell rule for error norms.
pub const ERROR_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Riesz(#[from] RieszError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("{stage}: {source}")]
    Linalg { stage: &'static str, source: LinalgError },
    #[error("{stage}: CG stopped at relative residual {residual:e} after {iterations} iterations")]
    NotConverged { stage: &'static str, residual: f64, iterations: usize },
    #[error("measurement values are missing and no reference solution is configured")]
    MissingValues,
    #[error("field does not match the layout: {0}")]
    LayoutMismatch(String),
    #[error("marker {0} has no boundary edges")]
    UnknownMarker(u32),
}

fn stage(stage: &'static str) -> impl Fn(LinalgError) -> RecoveryError {
    move |source| RecoveryError::Linalg { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureMean {
    /// The pressure vector has zero mass-weighted mean; the field's mean is `pressure_shift`.
    MeanFree,
    General,
}

/// Finite element velocity and pressure. The pressure is the Q1 expansion of
/// `pressure` plus the constant `pressure_shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub pressure_shift: f64,
    pub convention: PressureMean,
}

impl DiscreteField {
    pub fn zeros(layout: &DofLayout) -> Self {
        DiscreteField {
            velocity: vec![0.0; layout.velocity_len()],
            pressure: vec![0.0; layout.pressure_len()],
            pressure_shift: 0.0,
            convention: PressureMean::MeanFree,
        }
    }

    /// Nodal interpolant of an analytic field.
    pub fn interpolate(mesh: &Mesh, layout: &DofLayout, field: &dyn AnalyticField) -> Self {
        let mut velocity = vec![0.0; layout.velocity_len()];
        for (i, node) in layout.nodes().iter().enumerate() {
            let v = field.velocity(node.point);
            for c in 0..DIM {
                velocity[layout.velocity_dof(i, c)] = v[c];
            }
        }
        let pressure = mesh.vertices().iter().map(|&x| field.pressure(x)).collect();
        DiscreteField { velocity, pressure, pressure_shift: 0.0, convention: PressureMean::General }
    }

    pub fn check(&self, layout: &DofLayout) -> Result<(), String> {
        if self.velocity.len() != layout.velocity_len() {
            return Err(format!("velocity has {} entries, layout needs {}", self.velocity.len(), layout.velocity_len()));
        }
        if self.pressure.len() != layout.pressure_len() {
            return Err(format!("pressure has {} entries, layout needs {}", self.pressure.len(), layout.pressure_len()));
        }
        Ok(())
    }

    /// `int p / |Omega|` from the pressure basis integrals.
    pub fn pressure_mean(&self, pressure_weights: &[f64]) -> f64 {
        dot(pressure_weights, &self.pressure) / pressure_weights.iter().sum::<f64>() + self.pressure_shift
    }

    /// Moves the pressure mean into `pressure_shift`.
    pub fn normalize_mean(&mut self, pressure_weights: &[f64]) {
        let c = dot(pressure_weights, &self.pressure) / pressure_weights.iter().sum::<f64>();
        self.pressure.iter_mut().for_each(|p| *p -= c);
        self.pressure_shift += c;
        self.convention = PressureMean::MeanFree;
    }

    fn values_at(&self, layout: &DofLayout, c: usize, q: &QuadPoint) -> ([f64; 2], [[f64; 2]; 2], f64) {
        let nodes = layout.cell_nodes(c);
        let mut u = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for a in 0..9 {
            for comp in 0..DIM {
                let v = self.velocity[layout.velocity_dof(nodes[a], comp)];
                u[comp] += v * q.q2[a];
                g[comp][0] += v * q.q2_grad[a][0];
                g[comp][1] += v * q.q2_grad[a][1];
            }
        }
        let p = layout.cell_pressure(c);
        let pv = (0..4).map(|i| q.q1[i] * self.pressure[p[i]]).sum::<f64>() + self.pressure_shift;
        (u, g, pv)
    }

    /// CSV `x,y,u1,u2,p`, one row per Q2 node in layout order.
    pub fn to_csv(&self, layout: &DofLayout) -> String {
        let n = layout.nodes().len();
        let mut p_nodes = vec![f64::NAN; n];
        for c in 0..layout.cell_count() {
            let nodes = layout.cell_nodes(c);
            let pd = layout.cell_pressure(c);
            for (a, &node) in nodes.iter().enumerate() {
                if p_nodes[node].is_nan() {
                    let w = q1_values((a % 3) as f64 - 1.0, (a / 3) as f64 - 1.0);
                    p_nodes[node] = (0..4).map(|i| w[i] * self.pressure[pd[i]]).sum::<f64>() + self.pressure_shift;
                }
            }
        }
        let mut out = String::from("x,y,u1,u2,p\n");
        for (i, node) in layout.nodes().iter().enumerate() {
            let u1 = self.velocity[layout.velocity_dof(i, 0)];
            let u2 = self.velocity[layout.velocity_dof(i, 1)];
            writeln!(out, "{:e},{:e},{:e},{:e},{:e}", node.point[0], node.point[1], u1, u2, p_nodes[i]).unwrap();
        }
        out
    }
}

/// Closed-form Stokes solutions with their body forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    /// `u = (e^x cos y, -e^x sin y + 2x^2)`, `p = 2(2y - 1)`, no body force.
    Case1,
    /// `u = (-cos(pi x) sin(pi y), sin(pi x) cos(pi y))`, `p = -cos(2 pi x) - cos(2 pi y)`.
    Case2,
    /// `u = (a - c y, b + c x)`, `p = p0`.
    Rigid { a: f64, b: f64, c: f64, p0: f64 },
    Zero,
}

impl ExactSolution {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "case1" => Some(ExactSolution::Case1),
            "case2" => Some(ExactSolution::Case2),
            "zero" => Some(ExactSolution::Zero),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExactSolution::Case1 => "case1",
            ExactSolution::Case2 => "case2",
            ExactSolution::Rigid { .. } => "rigid",
            ExactSolution::Zero => "zero",
        }
    }

    /// `grad[i][j] = d u_i / d x_j`.
    pub fn gradient(&self, x: Point) -> [[f64; 2]; 2] {
        let [x, y] = x;
        match self {
            ExactSolution::Case1 => {
                let (c, s) = (x.exp() * y.cos(), x.exp() * y.sin());
                [[c, -s], [-s + 4.0 * x, -c]]
            }
            ExactSolution::Case2 => {
                let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
                [[PI * sx * sy, -PI * cx * cy], [PI * cx * cy, -PI * sx * sy]]
            }
            ExactSolution::Rigid { c, .. } => [[0.0, -c], [*c, 0.0]],
            ExactSolution::Zero => [[0.0; 2]; 2],
        }
    }

    /// `f = -div(2 eps(u)) + grad p`.
    pub fn force(&self, x: Point) -> [f64; 2] {
        let [x, y] = x;
        match self {
            ExactSolution::Case2 => [
                -2.0 * PI * PI * (PI * x).cos() * (PI * y).sin() + 2.0 * PI * (2.0 * PI * x).sin(),
                2.0 * PI * PI * (PI * x).sin() * (PI * y).cos() + 2.0 * PI * (2.0 * PI * y).sin(),
            ],
            _ => [0.0, 0.0],
        }
    }

    pub fn has_force(&self) -> bool {
        matches!(self, ExactSolution::Case2)
    }

    /// Largest deviation of `force` from a central-difference evaluation of
    /// `-div(grad u + grad u^T) + grad p` at `x`, relative to `max(1, |f|)`.
    pub fn force_defect(&self, x: Point, h: f64) -> f64 {
        let shift = |d: usize, t: f64| {
            let mut y = x;
            y[d] += t;
            y
        };
        let mut div_stress = [0.0; 2];
        for i in 0..DIM {
            for j in 0..DIM {
                let gp = self.gradient(shift(j, h));
                let gm = self.gradient(shift(j, -h));
                div_stress[i] += ((gp[i][j] + gp[j][i]) - (gm[i][j] + gm[j][i])) / (2.0 * h);
            }
        }
        let f = self.force(x);
        (0..DIM)
            .map(|i| {
                let dp = (self.pressure(shift(i, h)) - self.pressure(shift(i, -h))) / (2.0 * h);
                (f[i] - (-div_stress[i] + dp)).abs() / f[i].abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

impl AnalyticField for ExactSolution {
    fn velocity(&self, x: Point) -> [f64; 2] {
        let [x, y] = x;
        match self {
            ExactSolution::Case1 => [x.exp() * y.cos(), -x.exp() * y.sin() + 2.0 * x * x],
            ExactSolution::Case2 => [-(PI * x).cos() * (PI * y).sin(), (PI * x).sin() * (PI * y).cos()],
            ExactSolution::Rigid { a, b, c, .. } => [a - c * y, b + c * x],
            ExactSolution::Zero => [0.0, 0.0],
        }
    }

    fn pressure(&self, x: Point) -> f64 {
        let [x, y] = x;
        match self {
            ExactSolution::Case1 => 2.0 * (2.0 * y - 1.0),
            ExactSolution::Case2 => -(2.0 * PI * x).cos() - (2.0 * PI * y).cos(),
            ExactSolution::Rigid { p0, .. } => *p0,
            ExactSolution::Zero => 0.0,
        }
    }
}

/// Solution of the Stokes problem with the body force of `exact`.
///
/// Without known boundary the velocity vanishes on the whole boundary and
/// the pressure has zero mean. Otherwise the velocity equals the trace of
/// `exact` on the known boundary and satisfies the natural condition on the
/// unknown one; the pressure is then moved to zero mean with the constant
/// kept in `pressure_shift` subtracted, so the returned field has zero mean
/// pressure in both cases. Returns the CG iteration count as well.
pub fn solve_background(
    mesh: &Mesh,
    layout: &DofLayout,
    ops: &StokesOperators,
    k0: Option<&Factorization>,
    exact: &ExactSolution,
    tol: f64,
) -> Result<(DiscreteField, usize), RecoveryError> {
    let nv = layout.velocity_len();
    let ni = layout.interior_len();
    let np = layout.pressure_len();
    let load = if exact.has_force() {
        assemble_load(mesh, layout, &|x| exact.force(x))?
    } else {
        vec![0.0; nv]
    };
    let cg = CgOptions::with_tol(tol);
    let check = |s: &crate::linalg::SaddleSolution| {
        if s.converged {
            Ok(())
        } else {
            Err(RecoveryError::NotConverged { stage: "background", residual: s.relative_residual, iterations: s.iterations })
        }
    };
    if !layout.has_constraints() {
        let owned;
        let k = match k0 {
            Some(k) => k,
            None => {
                owned = Factorization::new(&ops.k0).map_err(stage("background factorization"))?;
                &owned
            }
        };
        let saddle = SaddleSystem { k, b: &ops.b0, pressure_weights: Some(&ops.pressure_weights) };
        let sol = saddle.solve(&load[..ni], &vec![0.0; np], cg).map_err(stage("background"))?;
        check(&sol)?;
        let mut velocity = sol.velocity;
        velocity.resize(nv, 0.0);
        let field = DiscreteField { velocity, pressure: sol.pressure, pressure_shift: 0.0, convention: PressureMean::MeanFree };
        return Ok((field, sol.iterations));
    }

    let mut known = vec![false; nv];
    known[..ni].copy_from_slice(&ops.constrained);
    let mut g = vec![0.0; nv];
    for dof in (0..nv).filter(|&d| known[d]) {
        let (node, comp) = layout.velocity_node(dof);
        g[dof] = exact.velocity(layout.nodes()[node].point)[comp];
    }
    let free: Vec<usize> = (0..nv).filter(|&d| !known[d]).collect();
    let all_p: Vec<usize> = (0..np).collect();
    let k_free = ops.k_full.select(&free, &free);
    let b_free = ops.b_full.select(&all_p, &free);
    let kg = ops.k_full.mul_vec(&g);
    let rhs_v: Vec<f64> = free.iter().map(|&d| load[d] - kg[d]).collect();
    let rhs_p: Vec<f64> = ops.b_full.mul_vec(&g).iter().map(|v| -v).collect();
    let factor = Factorization::new(&k_free).map_err(stage("background factorization"))?;
    let weights = if layout.n_boundary() == 0 { Some(ops.pressure_weights.as_slice()) } else { None };
    let saddle = SaddleSystem { k: &factor, b: &b_free, pressure_weights: weights };
    let sol = saddle.solve(&rhs_v, &rhs_p, cg).map_err(stage("background"))?;
    check(&sol)?;
    let mut velocity = g;
    for (i, &d) in free.iter().enumerate() {
        velocity[d] = sol.velocity[i];
    }
    let mut field = DiscreteField { velocity, pressure: sol.pressure, pressure_shift: 0.0, convention: PressureMean::General };
    field.normalize_mean(&ops.pressure_weights);
    field.pressure_shift = 0.0;
    Ok((field, sol.iterations))
}

/// `w - lambda(background)`.
pub fn shifted_measurements(
    w: &[f64],
    background: &DiscreteField,
    set: &MeasurementSet,
    disc: &Discretization,
) -> Result<Vec<f64>, RecoveryError> {
    if w.len() != set.len() {
        return Err(MeasurementError::LengthMismatch { functionals: set.len(), values: w.len() }.into());
    }
    set.functionals
        .iter()
        .zip(w)
        .map(|(f, wi)| Ok(wi - apply_to_discrete(f, &disc.quad, &disc.layout, background)?))
        .collect()
}

/// `g_ij = lambda_i(phi_j)` with the representer pressure including its mean constant.
pub fn gram(disc: &Discretization, reps: &[Arc<RieszRepresenter>]) -> DMatrix<f64> {
    let m = reps.len();
    let fvecs: Vec<FunctionalVectors> = reps.par_iter().map(|r| disc.functional_vectors(&r.functional)).collect();
    let ni = disc.layout.interior_len();
    let rows: Vec<Vec<f64>> = fvecs
        .par_iter()
        .map(|fv| {
            let lam_i = fv.pressure.iter().sum::<f64>();
            reps.iter()
                .map(|r| {
                    dot(&fv.velocity[..ni], &r.w0)
                        + dot(&fv.velocity[ni..], &r.wb)
                        + dot(&fv.pressure, &r.r0)
                        + lam_i * r.lambda
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(m, m, |i, j| rows[i][j])
}

/// `a_1(W_b,i, W_b,j) + Lambda_i Lambda_j`, the inner product the Gram entries reproduce.
pub fn representer_inner(disc: &Discretization, a: &RieszRepresenter, b: &RieszRepresenter) -> f64 {
    disc.trace_inner(&a.wb, &b.wb) + a.lambda * b.lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryParams {
    pub s: f64,
    pub k: f64,
    pub mode: GramMode,
    /// CG tolerance of the background solve.
    pub tol_background: f64,
    /// CG tolerance of the representer solves.
    pub tol_riesz: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams { s: 1.0, k: 0.4, mode: GramMode::JacobiThreshold(1e-10), tol_background: 1e-9, tol_riesz: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub err_u: f64,
    pub err_p: f64,
    pub err: f64,
    /// `|mean(p) - mean(p_h)|`.
    pub mean_error: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub field: DiscreteField,
    pub alpha: Vec<f64>,
    pub gram: DMatrix<f64>,
    /// Condition number of the unscaled Gram matrix.
    pub cond_g: f64,
    pub report: GramReport,
    pub measurements: Vec<f64>,
    /// `lambda_i(u_h, p_h) - w_i`.
    pub residuals: Vec<f64>,
    pub errors: Option<ErrorReport>,
}

/// H1 velocity and L2 pressure errors against a closed form.
pub fn recovery_errors(mesh: &Mesh, layout: &DofLayout, exact: &ExactSolution, field: &DiscreteField) -> Result<ErrorReport, RecoveryError> {
    field.check(layout).map_err(RecoveryError::LayoutMismatch)?;
    let parts: Vec<[f64; 5]> = (0..layout.cell_count())
        .into_par_iter()
        .map(|c| -> Result<[f64; 5], RecoveryError> {
            let mut acc = [0.0; 5];
            for q in cell_points(mesh, c, ERROR_ORDER).map_err(AssemblyError::from)? {
                let (u, g, p) = field.values_at(layout, c, &q);
                let ue = exact.velocity(q.x);
                let ge = exact.gradient(q.x);
                let pe = exact.pressure(q.x);
                for i in 0..DIM {
                    acc[0] += q.weight * (ue[i] - u[i]).powi(2);
                    for j in 0..DIM {
                        acc[1] += q.weight * (ge[i][j] - g[i][j]).powi(2);
                    }
                }
                acc[2] += q.weight * (pe - p).powi(2);
                acc[3] += q.weight * (pe - p);
                acc[4] += q.weight;
            }
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;
    let mut t = [0.0; 5];
    for a in parts {
        for i in 0..5 {
            t[i] += a[i];
        }
    }
    let err_u = (t[0] + t[1]).sqrt();
    let err_p = t[2].sqrt();
    Ok(ErrorReport { err_u, err_p, err: err_u.hypot(err_p), mean_error: (t[3] / t[4]).abs() })
}

/// `-int_{marker} (2 eps(u) n - p n)` with three Gauss points per edge.
pub fn drag_lift(mesh: &Mesh, layout: &DofLayout, field: &DiscreteField, marker: u32) -> Result<[f64; 2], RecoveryError> {
    field.check(layout).map_err(RecoveryError::LayoutMismatch)?;
    let mut total = [0.0; 2];
    let mut found = false;
    for (e, edge) in mesh.boundary_edges().iter().enumerate() {
        if edge.marker != marker {
            continue;
        }
        found = true;
        let (c, k) = mesh.boundary_owner(e);
        let map = CellMap::new(mesh.cell_corners(c));
        for &(t, w) in gauss(3) {
            let (xi, eta) = edge_point(k, t);
            let q = map.eval(c, xi, eta, 1.0).map_err(AssemblyError::from)?;
            let (_, g, p) = field.values_at(layout, c, &q);
            // d x / d t along the edge; the domain lies to its left.
            let jac = map.jacobian(xi, eta);
            let (dxi, deta) = match k {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            };
            let tx = jac[0][0] * dxi + jac[0][1] * deta;
            let ty = jac[1][0] * dxi + jac[1][1] * deta;
            let nds = [ty * w, -tx * w];
            for i in 0..DIM {
                let mut traction = -p * nds[i];
                for j in 0..DIM {
                    traction += (g[i][j] + g[j][i]) * nds[j];
                }
                total[i] -= traction;
            }
        }
    }
    if !found {
        return Err(RecoveryError::UnknownMarker(marker));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qoi {
    Functional(Functional),
    DragLift(u32),
}

pub fn evaluate_qoi(disc: &Discretization, q: &Qoi, field: &DiscreteField) -> Result<Vec<f64>, RecoveryError> {
    match q {
        Qoi::Functional(f) => Ok(vec![apply_to_discrete(f, &disc.quad, &disc.layout, field)?]),
        Qoi::DragLift(m) => Ok(drag_lift(&disc.mesh, &disc.layout, field, *m)?.to_vec()),
    }
}

type FunctionalKey = ([u64; 2], u64, usize);

fn functional_key(f: &Functional) -> FunctionalKey {
    ([f.center[0].to_bits(), f.center[1].to_bits()], f.width.to_bits(), f.component.index())
}

/// A discretization with caches for background fields, multipliers,
/// constraint vectors and representers, shared across recoveries that
/// differ in measurements, order `s` or Gram mode.
pub struct Session {
    pub disc: Discretization,
    backgrounds: Mutex<HashMap<(String, u64), Arc<DiscreteField>>>,
    multipliers: Mutex<HashMap<(FunctionalKey, u64), Arc<Multipliers>>>,
    constraints: Mutex<HashMap<(u64, u64), Arc<(Vec<f64>, f64)>>>,
    representers: Mutex<HashMap<(FunctionalKey, u64, u64, u64), Arc<RieszRepresenter>>>,
}

impl Session {
    pub fn new(mesh: Mesh, unknown_markers: &[u32]) -> Result<Self, RecoveryError> {
        Ok(Self::from_discretization(Discretization::new(mesh, unknown_markers)?))
    }

    pub fn from_discretization(disc: Discretization) -> Self {
        Session {
            disc,
            backgrounds: Mutex::default(),
            multipliers: Mutex::default(),
            constraints: Mutex::default(),
            representers: Mutex::default(),
        }
    }

    pub fn background(&self, exact: &ExactSolution, tol: f64) -> Result<Arc<DiscreteField>, RecoveryError> {
        let key = (format!("{exact:?}"), tol.to_bits());
        if let Some(f) = self.backgrounds.lock().unwrap().get(&key) {
            return Ok(f.clone());
        }
        let d = &self.disc;
        let (field, _) = solve_background(&d.mesh, &d.layout, &d.ops, Some(&d.k0), exact, tol)?;
        let field = Arc::new(field);
        self.backgrounds.lock().unwrap().insert(key, field.clone());
        Ok(field)
    }

    pub fn context(&self, s: f64, k: f64, tol: f64) -> Result<RieszContext<'_>, RecoveryError> {
        let key = (s.to_bits(), k.to_bits());
        let cg = CgOptions::with_tol(tol);
        let cached = self.constraints.lock().unwrap().get(&key).cloned();
        let ctx = match cached {
            Some(c) => RieszContext::from_constraint(&self.disc, s, k, cg, c.0.clone(), c.1),
            None => {
                let ctx = RieszContext::new(&self.disc, s, k, cg)?;
                let (ad, dad) = ctx.constraint();
                self.constraints.lock().unwrap().insert(key, Arc::new((ad.to_vec(), dad)));
                ctx
            }
        };
        Ok(ctx)
    }

    /// Representers of `functionals` in order, computing only the missing ones.
    pub fn representers(&self, functionals: &[Functional], s: f64, k: f64, tol: f64) -> Result<Vec<Arc<RieszRepresenter>>, RecoveryError> {
        let rkey = |f: &Functional| (functional_key(f), s.to_bits(), k.to_bits(), tol.to_bits());
        let mut missing: Vec<Functional> = Vec::new();
        {
            let cache = self.representers.lock().unwrap();
            for f in functionals {
                if !cache.contains_key(&rkey(f)) && !missing.iter().any(|g| functional_key(g) == functional_key(f)) {
                    missing.push(*f);
                }
            }
        }
        if !missing.is_empty() {
            let ctx = self.context(s, k, tol)?;
            let computed: Vec<Result<Vec<RieszRepresenter>, RecoveryError>> = missing
                .par_chunks(BATCH)
                .map(|chunk| {
                    let fvecs: Vec<FunctionalVectors> = chunk.iter().map(|f| self.disc.functional_vectors(f)).collect();
                    let refs: Vec<&FunctionalVectors> = fvecs.iter().collect();
                    let mults = self.multipliers_for(chunk, &refs, tol)?;
                    Ok(ctx.complete(chunk, &refs, mults)?)
                })
                .collect();
            let mut cache = self.representers.lock().unwrap();
            for batch in computed {
                for r in batch? {
                    cache.insert(rkey(&r.functional), Arc::new(r));
                }
            }
        }
        let cache = self.representers.lock().unwrap();
        Ok(functionals.iter().map(|f| cache[&rkey(f)].clone()).collect())
    }

    fn multipliers_for(&self, chunk: &[Functional], fvecs: &[&FunctionalVectors], tol: f64) -> Result<Vec<Multipliers>, RecoveryError> {
        let key = |f: &Functional| (functional_key(f), tol.to_bits());
        let mut out: Vec<Option<Multipliers>> = {
            let cache = self.multipliers.lock().unwrap();
            chunk.iter().map(|f| cache.get(&key(f)).map(|m| (**m).clone())).collect()
        };
        let todo: Vec<usize> = (0..chunk.len()).filter(|&i| out[i].is_none()).collect();
        if !todo.is_empty() {
            let sub: Vec<&FunctionalVectors> = todo.iter().map(|&i| fvecs[i]).collect();
            let solved = solve_multipliers(&self.disc, &sub, CgOptions::with_tol(tol))?;
            let mut cache = self.multipliers.lock().unwrap();
            for (&i, m) in todo.iter().zip(solved) {
                cache.insert(key(&chunk[i]), Arc::new(m.clone()));
                out[i] = Some(m);
            }
        }
        Ok(out.into_iter().map(|m| m.expect("filled above")).collect())
    }

    /// Drops cached representers and multipliers.
    pub fn clear_representers(&self) {
        self.representers.lock().unwrap().clear();
        self.multipliers.lock().unwrap().clear();
    }

    /// Runs the full recovery. Measurement values are taken from `set` when
    /// present and synthesized from `exact` otherwise; errors are reported
    /// when `exact` is given.
    pub fn recover(&self, set: &MeasurementSet, exact: Option<&ExactSolution>, params: &RecoveryParams) -> Result<RecoveryResult, RecoveryError> {
        let source = exact.copied().unwrap_or(ExactSolution::Zero);
        self.recover_with_background(set, &source, exact, params)
    }

    /// As [`Session::recover`], with the body force and known boundary data
    /// taken from `known` instead of `exact`.
    pub fn recover_with_background(
        &self,
        set: &MeasurementSet,
        known: &ExactSolution,
        exact: Option<&ExactSolution>,
        params: &RecoveryParams,
    ) -> Result<RecoveryResult, RecoveryError> {
        let disc = &self.disc;
        set.check_domain(&disc.mesh)?;
        let background = self.background(known, params.tol_background)?;
        let w = match (&set.values, exact) {
            (Some(v), _) => v.clone(),
            (None, Some(e)) => measurement_vector(set, &disc.quad, e),
            (None, None) => return Err(RecoveryError::MissingValues),
        };
        let ws = shifted_measurements(&w, &background, set, disc)?;
        let reps = self.representers(&set.functionals, params.s, params.k, params.tol_riesz)?;
        let g = gram(disc, &reps);
        let (alpha, report, cond_g) = if reps.is_empty() {
            (Vec::new(), GramReport { cond: 1.0, cond_retained: 1.0, rank: 0 }, 1.0)
        } else {
            let (alpha, report) = pinv_solve(&g, &ws, params.mode).map_err(stage("gram solve"))?;
            (alpha, report, condition_number(&g))
        };

        let mut field = (*background).clone();
        let ni = disc.layout.interior_len();
        for (a, r) in alpha.iter().zip(&reps) {
            axpy(*a, &r.w0, &mut field.velocity[..ni]);
            axpy(*a, &r.wb, &mut field.velocity[ni..]);
            axpy(*a, &r.r0, &mut field.pressure);
            field.pressure_shift += a * r.lambda;
        }
        let residuals = set
            .functionals
            .iter()
            .zip(&w)
            .map(|(f, wi)| Ok(apply_to_discrete(f, &disc.quad, &disc.layout, &field)? - wi))
            .collect::<Result<Vec<f64>, RecoveryError>>()?;
        let errors = match exact {
            Some(e) => Some(recovery_errors(&disc.mesh, &disc.layout, e, &field)?),
            None => None,
        };
        Ok(RecoveryResult { field, alpha, gram: g, cond_g, report, measurements: w, residuals, errors })
    }
}

/// Interior Q2 node index of a cell center, for tests and dumps.
pub fn cell_center_node(layout: &DofLayout, c: usize) -> usize {
    layout.cell_nodes(c)[CENTER_NODE]
}
