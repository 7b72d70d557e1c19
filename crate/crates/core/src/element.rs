//! Reference Q2/Q1 shape functions, Gauss rules and bilinear cell maps.

use thiserror::Error;

use crate::mesh::Point;

#[derive(Debug, Error, PartialEq)]
#[error("cell {cell}: Jacobian determinant {det:e} is not positive")]
pub struct DegenerateJacobian {
    pub cell: usize,
    pub det: f64,
}

/// Gauss-Legendre points and weights on `[-1, 1]`.
pub fn gauss(n: usize) -> &'static [(f64, f64)] {
    const G1: [(f64, f64); 1] = [(0.0, 2.0)];
    const G2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
    const G3: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        (0.0, 0.888_888_888_888_888_9),
        (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    ];
    const G4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
        (-0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    ];
    const G5: [(f64, f64); 5] = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
        (0.906_179_845_938_664, 0.236_926_885_056_189_08),
    ];
    match n {
        1 => &G1,
        2 => &G2,
        3 => &G3,
        4 => &G4,
        5 => &G5,
        _ => panic!("no {n}-point Gauss rule"),
    }
}

/// 1D quadratic Lagrange basis on nodes `-1, 0, 1` and its derivative.
pub fn lagrange2(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)],
        [t - 0.5, -2.0 * t, t + 0.5],
    )
}

/// Q1 corner values in counter-clockwise corner order.
pub fn q1_values(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn q1_ref_grads(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

/// Q2 values and reference gradients in local tensor order `3 * j + i`.
pub fn q2_ref(xi: f64, eta: f64) -> ([f64; 9], [[f64; 2]; 9]) {
    let (lx, dx) = lagrange2(xi);
    let (ly, dy) = lagrange2(eta);
    let mut v = [0.0; 9];
    let mut g = [[0.0; 2]; 9];
    for j in 0..3 {
        for i in 0..3 {
            v[3 * j + i] = lx[i] * ly[j];
            g[3 * j + i] = [dx[i] * ly[j], lx[i] * dy[j]];
        }
    }
    (v, g)
}

/// Values at one quadrature point with physical gradients.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub x: Point,
    /// Weight times Jacobian determinant.
    pub weight: f64,
    pub q2: [f64; 9],
    pub q2_grad: [[f64; 2]; 9],
    pub q1: [f64; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct CellMap {
    pub corners: [Point; 4],
}

impl CellMap {
    pub fn new(corners: [Point; 4]) -> Self {
        CellMap { corners }
    }

    pub fn map(&self, xi: f64, eta: f64) -> Point {
        let n = q1_values(xi, eta);
        let mut x = [0.0; 2];
        for (k, c) in self.corners.iter().enumerate() {
            x[0] += n[k] * c[0];
            x[1] += n[k] * c[1];
        }
        x
    }

    /// `J[i][j] = d x_i / d xi_j`.
    pub fn jacobian(&self, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let g = q1_ref_grads(xi, eta);
        let mut j = [[0.0; 2]; 2];
        for (k, c) in self.corners.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    j[a][b] += c[a] * g[k][b];
                }
            }
        }
        j
    }

    /// Shape data at `(xi, eta)`; `cell` only labels errors.
    pub fn eval(&self, cell: usize, xi: f64, eta: f64, weight: f64) -> Result<QuadPoint, DegenerateJacobian> {
        let j = self.jacobian(xi, eta);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det > 0.0) {
            return Err(DegenerateJacobian { cell, det });
        }
        let (q2, gref) = q2_ref(xi, eta);
        let mut q2_grad = [[0.0; 2]; 9];
        for a in 0..9 {
            let (gx, ge) = (gref[a][0], gref[a][1]);
            q2_grad[a] = [(j[1][1] * gx - j[1][0] * ge) / det, (-j[0][1] * gx + j[0][0] * ge) / det];
        }
        Ok(QuadPoint { x: self.map(xi, eta), weight: weight * det, q2, q2_grad, q1: q1_values(xi, eta) })
    }

    /// Tensor Gauss rule with `order` points per direction.
    pub fn quadrature(&self, cell: usize, order: usize) -> Result<Vec<QuadPoint>, DegenerateJacobian> {
        let rule = gauss(order);
        let mut out = Vec::with_capacity(order * order);
        for &(eta, we) in rule {
            for &(xi, wx) in rule {
                out.push(self.eval(cell, xi, eta, wx * we)?);
            }
        }
        Ok(out)
    }
}

/// Reference coordinates of the point at parameter `t in [-1, 1]` along local edge `k`,
/// traversed from corner `k` to corner `k + 1`.
pub fn edge_point(k: usize, t: f64) -> (f64, f64) {
    match k {
        0 => (t, -1.0),
        1 => (1.0, t),
        2 => (-t, 1.0),
        _ => (-1.0, -t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for n in 1..=5 {
            for p in 0..2 * n {
                let q: f64 = gauss(n).iter().map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert_relative_eq!(q, exact, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn q2_partition_of_unity_and_nodality() {
        let (v, g) = q2_ref(0.3, -0.7);
        assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(g.iter().map(|d| d[0]).sum::<f64>().abs() < 1e-14);
        for j in 0..3 {
            for i in 0..3 {
                let (v, _) = q2_ref(i as f64 - 1.0, j as f64 - 1.0);
                for (a, val) in v.iter().enumerate() {
                    let expect = if a == 3 * j + i { 1.0 } else { 0.0 };
                    assert_relative_eq!(*val, expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn physical_gradients_reproduce_linear_field() {
        let map = CellMap::new([[0.0, 0.0], [2.0, 0.2], [2.3, 1.5], [-0.1, 1.1]]);
        let nodes: Vec<Point> = (0..9).map(|a| map.map((a % 3) as f64 - 1.0, (a / 3) as f64 - 1.0)).collect();
        let f = |p: Point| 3.0 * p[0] - 2.0 * p[1];
        let qp = map.eval(0, 0.2, 0.4, 1.0).unwrap();
        let mut grad = [0.0; 2];
        for a in 0..9 {
            grad[0] += f(nodes[a]) * qp.q2_grad[a][0];
            grad[1] += f(nodes[a]) * qp.q2_grad[a][1];
        }
        assert_relative_eq!(grad[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(grad[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_measures_area() {
        let map = CellMap::new([[0.0, 0.0], [2.0, 0.2], [2.3, 1.5], [-0.1, 1.1]]);
        let area: f64 = map.quadrature(0, 3).unwrap().iter().map(|q| q.weight).sum();
        let p = map.corners;
        let shoelace = 0.5 * (0..4).map(|k| p[k][0] * p[(k + 1) % 4][1] - p[(k + 1) % 4][0] * p[k][1]).sum::<f64>();
        assert_relative_eq!(area, shoelace, epsilon = 1e-13);
    }

    #[test]
    fn inverted_map_is_degenerate() {
        let map = CellMap::new([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]);
        assert!(map.quadrature(3, 2).is_err());
    }
}
