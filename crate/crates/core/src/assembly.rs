//! Finite element matrices and vectors for the Stokes problem
//! `k(u, v) = (2 eps(u), eps(v))`, `b(v, q) = -(q, div v)` and the trace
//! mass and stiffness matrices of the unknown boundary.

use thiserror::Error;

use crate::element::{gauss, lagrange2, CellMap, DegenerateJacobian, QuadPoint};
use crate::femspace::{DofLayout, TraceMesh, DIM};
use crate::linalg::CsrMatrix;
use crate::measurements::{Component, Functional, FunctionalQuadrature};
use crate::mesh::{Mesh, Point};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Degenerate(#[from] DegenerateJacobian),
    #[error("mesh has {mesh} cells but the layout has {layout}")]
    LayoutMismatch { mesh: usize, layout: usize },
}

/// Stokes operators split into interior and boundary velocity blocks.
///
/// Interior rows and columns belonging to known boundary nodes are replaced
/// by the identity in `k0` and removed from `kb` and `b0`; the unmodified
/// full matrices are kept for solves with prescribed boundary values.
#[derive(Debug, Clone)]
pub struct StokesOperators {
    pub k_full: CsrMatrix,
    pub b_full: CsrMatrix,
    pub k0: CsrMatrix,
    pub kb: CsrMatrix,
    pub b0: CsrMatrix,
    pub bb: CsrMatrix,
    /// `D_i = -(div phi_i, 1)` over boundary-block velocity dofs.
    pub d: Vec<f64>,
    /// Integrals of the pressure basis functions.
    pub pressure_weights: Vec<f64>,
    /// Scalar trace mass and stiffness on the unknown boundary.
    pub trace_mass: CsrMatrix,
    pub trace_stiffness: CsrMatrix,
    /// Constrained flags of the interior velocity block.
    pub constrained: Vec<bool>,
}

pub(crate) fn cell_points(mesh: &Mesh, c: usize, order: usize) -> Result<Vec<QuadPoint>, DegenerateJacobian> {
    CellMap::new(mesh.cell_corners(c)).quadrature(c, order)
}

fn check(mesh: &Mesh, layout: &DofLayout) -> Result<(), AssemblyError> {
    if mesh.cell_count() != layout.cell_count() {
        return Err(AssemblyError::LayoutMismatch { mesh: mesh.cell_count(), layout: layout.cell_count() });
    }
    Ok(())
}

pub fn assemble_system(mesh: &Mesh, layout: &DofLayout) -> Result<StokesOperators, AssemblyError> {
    check(mesh, layout)?;
    let nv = layout.velocity_len();
    let np = layout.pressure_len();
    let mut kt = Vec::with_capacity(layout.cell_count() * 324);
    let mut bt = Vec::with_capacity(layout.cell_count() * 72);
    let mut weights = vec![0.0; np];
    for c in 0..layout.cell_count() {
        let qps = cell_points(mesh, c, 3)?;
        let nodes = layout.cell_nodes(c);
        let pdofs = layout.cell_pressure(c);
        let mut kl = [[[[0.0; DIM]; 9]; DIM]; 9];
        let mut bl = [[[0.0; DIM]; 9]; 4];
        for q in &qps {
            for a in 0..9 {
                let ga = q.q2_grad[a];
                for b in 0..9 {
                    let gb = q.q2_grad[b];
                    let lap = ga[0] * gb[0] + ga[1] * gb[1];
                    for ci in 0..DIM {
                        for e in 0..DIM {
                            let mut v = ga[e] * gb[ci];
                            if ci == e {
                                v += lap;
                            }
                            kl[b][e][a][ci] += q.weight * v;
                        }
                    }
                }
                for i in 0..4 {
                    for ci in 0..DIM {
                        bl[i][a][ci] -= q.weight * q.q1[i] * ga[ci];
                    }
                }
            }
            for i in 0..4 {
                weights[pdofs[i]] += q.weight * q.q1[i];
            }
        }
        for b in 0..9 {
            for e in 0..DIM {
                let row = layout.velocity_dof(nodes[b], e);
                for a in 0..9 {
                    for ci in 0..DIM {
                        kt.push((row, layout.velocity_dof(nodes[a], ci), kl[b][e][a][ci]));
                    }
                }
            }
        }
        for i in 0..4 {
            for a in 0..9 {
                for ci in 0..DIM {
                    bt.push((pdofs[i], layout.velocity_dof(nodes[a], ci), bl[i][a][ci]));
                }
            }
        }
    }
    let k_full = CsrMatrix::from_triplets(nv, nv, kt);
    let b_full = CsrMatrix::from_triplets(np, nv, bt);

    let ni = layout.interior_len();
    let constrained = layout.constrained();
    let mut k0 = k_full.block(0, ni, 0, ni).map_entries(|r, c, v| (!constrained[r] && !constrained[c]).then_some(v));
    if constrained.iter().any(|&x| x) {
        let ident: Vec<(usize, usize, f64)> =
            (0..ni).filter(|&i| constrained[i]).map(|i| (i, i, 1.0)).collect();
        k0 = k0.add(1.0, &CsrMatrix::from_triplets(ni, ni, ident), 1.0);
    }
    let kb = k_full.block(0, ni, ni, nv).map_entries(|r, _, v| (!constrained[r]).then_some(v));
    let b0 = b_full.block(0, np, 0, ni).map_entries(|_, c, v| (!constrained[c]).then_some(v));
    let bb = b_full.block(0, np, ni, nv);
    let d = bb.tr_mul_vec(&vec![1.0; np]);
    let (trace_mass, trace_stiffness) = assemble_trace(&layout.trace_mesh(mesh));

    Ok(StokesOperators {
        k_full,
        b_full,
        k0,
        kb,
        b0,
        bb,
        d,
        pressure_weights: weights,
        trace_mass,
        trace_stiffness,
        constrained,
    })
}

/// Scalar `H^1` trace matrices with a 3-point rule per segment. Trace nodes
/// shared with the known boundary are dropped.
pub fn assemble_trace(trace: &TraceMesh) -> (CsrMatrix, CsrMatrix) {
    let mut mt = Vec::new();
    let mut lt = Vec::new();
    for seg in &trace.segments {
        let half = 0.5 * seg.length;
        for &(t, w) in gauss(3) {
            let (v, d) = lagrange2(t);
            for a in 0..3 {
                let Some(ia) = seg.nodes[a] else { continue };
                for b in 0..3 {
                    let Some(ib) = seg.nodes[b] else { continue };
                    mt.push((ia, ib, w * v[a] * v[b] * half));
                    lt.push((ia, ib, w * d[a] * d[b] / half));
                }
            }
        }
    }
    (CsrMatrix::from_triplets(trace.size, trace.size, mt), CsrMatrix::from_triplets(trace.size, trace.size, lt))
}

/// Body force load `(f, phi_i)` over all velocity dofs.
pub fn assemble_load(mesh: &Mesh, layout: &DofLayout, f: &dyn Fn(Point) -> [f64; 2]) -> Result<Vec<f64>, AssemblyError> {
    check(mesh, layout)?;
    let mut out = vec![0.0; layout.velocity_len()];
    for c in 0..layout.cell_count() {
        let nodes = layout.cell_nodes(c);
        for q in cell_points(mesh, c, 3)? {
            let fx = f(q.x);
            for a in 0..9 {
                for ci in 0..DIM {
                    out[layout.velocity_dof(nodes[a], ci)] += q.weight * fx[ci] * q.q2[a];
                }
            }
        }
    }
    Ok(out)
}

/// Coefficient vectors of a functional: `velocity[i] = lambda(phi_i, 0)` over
/// all velocity dofs and `pressure[i] = lambda(0, psi_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalVectors {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

pub fn functional_vectors(quad: &FunctionalQuadrature, layout: &DofLayout, f: &Functional) -> FunctionalVectors {
    let mut velocity = vec![0.0; layout.velocity_len()];
    let mut pressure = vec![0.0; layout.pressure_len()];
    for (c, cell) in quad.cells().iter().enumerate() {
        for q in cell {
            let w = q.weight * f.kernel(q.x);
            match f.component {
                Component::Velocity(comp) => {
                    let nodes = layout.cell_nodes(c);
                    for a in 0..9 {
                        velocity[layout.velocity_dof(nodes[a], comp)] += w * q.q2[a];
                    }
                }
                Component::Pressure => {
                    let p = layout.cell_pressure(c);
                    for i in 0..4 {
                        pressure[p[i]] += w * q.q1[i];
                    }
                }
            }
        }
    }
    FunctionalVectors { velocity, pressure }
}

/// Splits a full velocity vector into its interior and boundary blocks.
pub fn split_velocity(layout: &DofLayout, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ni = layout.interior_len();
    (v[..ni].to_vec(), v[ni..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::dot;

    fn setup(n: u32) -> (Mesh, DofLayout, StokesOperators) {
        let mesh = Mesh::unit_square(n).unwrap();
        let layout = DofLayout::build(&mesh, &[1]).unwrap();
        let ops = assemble_system(&mesh, &layout).unwrap();
        (mesh, layout, ops)
    }

    fn interpolate(layout: &DofLayout, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; layout.velocity_len()];
        for (i, node) in layout.nodes().iter().enumerate() {
            let val = f(node.point);
            for c in 0..DIM {
                v[layout.velocity_dof(i, c)] = val[c];
            }
        }
        v
    }

    #[test]
    fn stiffness_is_symmetric_and_kills_rigid_motions() {
        let (_, layout, ops) = setup(2);
        let dense = ops.k_full.to_dense();
        assert!((&dense - dense.transpose()).amax() < 1e-12);
        for rigid in [
            interpolate(&layout, |_| [1.0, 0.0]),
            interpolate(&layout, |_| [0.0, 1.0]),
            interpolate(&layout, |p| [-p[1], p[0]]),
        ] {
            let kv = ops.k_full.mul_vec(&rigid);
            assert!(kv.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn energy_of_linear_strain() {
        let (_, layout, ops) = setup(2);
        // u = (x, -y): eps = diag(1, -1), 2 eps:eps = 4.
        let u = interpolate(&layout, |p| [p[0], -p[1]]);
        let e = dot(&u, &ops.k_full.mul_vec(&u));
        assert!((e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_matches_flux() {
        let (_, layout, ops) = setup(2);
        // u = (x^2, 0): -(1, div u) = -1.
        let u = interpolate(&layout, |p| [p[0] * p[0], 0.0]);
        let bu = ops.b_full.mul_vec(&u);
        assert!((bu.iter().sum::<f64>() + 1.0).abs() < 1e-12);
        let (_, ub) = split_velocity(&layout, &u);
        assert!((dot(&ops.d, &ub) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_block_annihilates_constants() {
        let (_, layout, ops) = setup(2);
        let ones = vec![1.0; layout.pressure_len()];
        assert!(ops.b0.tr_mul_vec(&ones).iter().all(|x| x.abs() < 1e-13));
        assert!((ops.pressure_weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn trace_matrices_measure_boundary() {
        let (_, layout, ops) = setup(3);
        let ones = vec![1.0; layout.n_boundary()];
        assert!((dot(&ones, &ops.trace_mass.mul_vec(&ones)) - 4.0).abs() < 1e-12);
        assert!(ops.trace_stiffness.mul_vec(&ones).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn constrained_rows_are_identity() {
        let mesh = Mesh::square_with_hole(1, [0.5, 0.5], 0.1).unwrap();
        let layout = DofLayout::build(&mesh, &[2]).unwrap();
        let ops = assemble_system(&mesh, &layout).unwrap();
        for (i, &c) in ops.constrained.iter().enumerate() {
            if c {
                let row: Vec<_> = ops.k0.row(i).collect();
                assert_eq!(row, vec![(i, 1.0)]);
                assert_eq!(ops.kb.row(i).count(), 0);
            }
        }
        let area = mesh.area();
        assert!((ops.pressure_weights.iter().sum::<f64>() - area).abs() < 1e-12);
    }

    #[test]
    fn load_integrates_force() {
        let (mesh, layout, _) = setup(2);
        let f = assemble_load(&mesh, &layout, &|p| [1.0, p[0]]).unwrap();
        let ones = interpolate(&layout, |_| [1.0, 1.0]);
        assert!((dot(&f, &ones) - 1.5).abs() < 1e-13);
    }
}
