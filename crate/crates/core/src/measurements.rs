//! Gaussian measurement functionals
//! `lambda(psi) = (2 pi r^2)^{-1/2} int exp(-|x - z|^2 / 2r^2) psi_i dx`
//! and their application to closed-form and finite element fields. Every
//! integral uses the same 5 x 5 Gauss rule per cell.

use std::fmt::Write as _;

use thiserror::Error;

use crate::assembly::cell_points;
use crate::element::{DegenerateJacobian, QuadPoint};
use crate::femspace::{DofLayout, DIM};
use crate::mesh::{Mesh, Point};
use crate::recovery::DiscreteField;

/// Gauss points per direction for functional integrals.
pub const FUNCTIONAL_ORDER: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("functional width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("functional center {0:?} is not inside the domain")]
    CenterOutside(Point),
    #[error("component {0} is not one of 1, 2 (velocity) or 3 (pressure)")]
    InvalidComponent(usize),
    #[error("functional {0} duplicates an earlier center and component")]
    Duplicate(usize),
    #[error("{values} values given for {functionals} functionals")]
    LengthMismatch { functionals: usize, values: usize },
    #[error("field does not match the layout: {0}")]
    LayoutMismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Degenerate(#[from] DegenerateJacobian),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Velocity(usize),
    Pressure,
}

impl Component {
    /// 1-based index: velocity components first, pressure last.
    pub fn index(&self) -> usize {
        match self {
            Component::Velocity(c) => c + 1,
            Component::Pressure => DIM + 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self, MeasurementError> {
        match i {
            1..=DIM => Ok(Component::Velocity(i - 1)),
            i if i == DIM + 1 => Ok(Component::Pressure),
            _ => Err(MeasurementError::InvalidComponent(i)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functional {
    pub center: Point,
    pub width: f64,
    pub component: Component,
}

impl Functional {
    pub fn gaussian(center: Point, width: f64, component: Component) -> Result<Self, MeasurementError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(MeasurementError::InvalidWidth(width));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(MeasurementError::CenterOutside(center));
        }
        Ok(Functional { center, width, component })
    }

    pub fn kernel(&self, x: Point) -> f64 {
        let r2 = self.width * self.width;
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        (-(dx * dx + dy * dy) / (2.0 * r2)).exp() / (2.0 * std::f64::consts::PI * r2).sqrt()
    }

    fn same_target(&self, other: &Functional) -> bool {
        self.center == other.center && self.component == other.component
    }
}

/// A velocity/pressure pair in closed form.
pub trait AnalyticField {
    fn velocity(&self, x: Point) -> [f64; 2];
    fn pressure(&self, x: Point) -> f64;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub functionals: Vec<Functional>,
    pub values: Option<Vec<f64>>,
}

impl MeasurementSet {
    pub fn new(functionals: Vec<Functional>, values: Option<Vec<f64>>) -> Result<Self, MeasurementError> {
        if let Some(v) = &values {
            if v.len() != functionals.len() {
                return Err(MeasurementError::LengthMismatch { functionals: functionals.len(), values: v.len() });
            }
        }
        for (i, f) in functionals.iter().enumerate() {
            if functionals[..i].iter().any(|g| g.same_target(f)) {
                return Err(MeasurementError::Duplicate(i));
            }
        }
        Ok(MeasurementSet { functionals, values })
    }

    /// Both velocity components at every velocity center, then the pressure centers.
    pub fn from_centers(velocity: &[Point], pressure: &[Point], width: f64) -> Result<Self, MeasurementError> {
        let mut f = Vec::with_capacity(DIM * velocity.len() + pressure.len());
        for &z in velocity {
            for c in 0..DIM {
                f.push(Functional::gaussian(z, width, Component::Velocity(c))?);
            }
        }
        for &z in pressure {
            f.push(Functional::gaussian(z, width, Component::Pressure)?);
        }
        MeasurementSet::new(f, None)
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    /// Rejects centers outside the mesh or inside one of its holes.
    pub fn check_domain(&self, mesh: &Mesh) -> Result<(), MeasurementError> {
        for f in &self.functionals {
            if !inside(mesh, f.center) {
                return Err(MeasurementError::CenterOutside(f.center));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,component,cx,cy,r,value\n");
        for (i, f) in self.functionals.iter().enumerate() {
            let value = self.values.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            let _ = writeln!(s, "gaussian,{},{},{},{},{}", f.component.index(), f.center[0], f.center[1], f.width, value);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, MeasurementError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: String| MeasurementError::Parse { line: line + 1, message };
        match lines.next() {
            Some((_, h)) if h.trim().starts_with("kind,component,cx,cy,r") => {}
            Some((i, _)) => return Err(parse_err(i, "expected header kind,component,cx,cy,r,value".into())),
            None => return Ok(MeasurementSet::default()),
        }
        let mut functionals = Vec::new();
        let mut values = Vec::new();
        let mut any_value = false;
        let mut all_values = true;
        for (i, line) in lines {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 5 || cols.len() > 6 {
                return Err(parse_err(i, format!("expected 5 or 6 columns, found {}", cols.len())));
            }
            if cols[0] != "gaussian" {
                return Err(parse_err(i, format!("unsupported functional kind `{}`", cols[0])));
            }
            let num = |k: usize| -> Result<f64, MeasurementError> {
                cols[k].parse().map_err(|_| parse_err(i, format!("invalid number `{}`", cols[k])))
            };
            let comp: usize = cols[1].parse().map_err(|_| parse_err(i, format!("invalid component `{}`", cols[1])))?;
            functionals.push(Functional::gaussian([num(2)?, num(3)?], num(4)?, Component::from_index(comp)?)?);
            match cols.get(5).filter(|v| !v.is_empty()) {
                Some(_) => {
                    values.push(num(5)?);
                    any_value = true;
                }
                None => all_values = false,
            }
        }
        if any_value && !all_values {
            return Err(MeasurementError::LengthMismatch { functionals: functionals.len(), values: values.len() });
        }
        MeasurementSet::new(functionals, any_value.then_some(values))
    }
}

fn inside(mesh: &Mesh, p: Point) -> bool {
    mesh.contains(p) && !mesh.holes().iter().any(|b| b.contains_strictly(p))
}

/// Grid centers `(i / (l + 1), j / (l + 1))`, `i` running fastest, without
/// the points that fall outside the domain or strictly inside a hole.
pub fn gaussian_centers_grid(l: usize, mesh: &Mesh) -> Vec<Point> {
    let h = 1.0 / (l + 1) as f64;
    let mut out = Vec::with_capacity(l * l);
    for j in 1..=l {
        for i in 1..=l {
            let p = [i as f64 * h, j as f64 * h];
            if inside(mesh, p) {
                out.push(p);
            }
        }
    }
    out
}

/// Quadrature points of every cell with the functional rule.
pub struct FunctionalQuadrature {
    cells: Vec<Vec<QuadPoint>>,
}

impl FunctionalQuadrature {
    pub fn new(mesh: &Mesh) -> Result<Self, DegenerateJacobian> {
        let cells = (0..mesh.cell_count()).map(|c| cell_points(mesh, c, FUNCTIONAL_ORDER)).collect::<Result<_, _>>()?;
        Ok(FunctionalQuadrature { cells })
    }

    pub fn cells(&self) -> &[Vec<QuadPoint>] {
        &self.cells
    }
}

pub fn apply_to_analytic(f: &Functional, quad: &FunctionalQuadrature, field: &dyn AnalyticField) -> f64 {
    let mut total = 0.0;
    for cell in quad.cells() {
        for q in cell {
            let value = match f.component {
                Component::Velocity(c) => field.velocity(q.x)[c],
                Component::Pressure => field.pressure(q.x),
            };
            total += q.weight * f.kernel(q.x) * value;
        }
    }
    total
}

pub fn apply_to_discrete(
    f: &Functional,
    quad: &FunctionalQuadrature,
    layout: &DofLayout,
    field: &DiscreteField,
) -> Result<f64, MeasurementError> {
    field.check(layout).map_err(MeasurementError::LayoutMismatch)?;
    if quad.cells().len() != layout.cell_count() {
        return Err(MeasurementError::LayoutMismatch("quadrature built for another mesh".into()));
    }
    let mut total = 0.0;
    for (c, cell) in quad.cells().iter().enumerate() {
        for q in cell {
            let value = match f.component {
                Component::Velocity(comp) => {
                    let nodes = layout.cell_nodes(c);
                    (0..9).map(|a| q.q2[a] * field.velocity[layout.velocity_dof(nodes[a], comp)]).sum::<f64>()
                }
                Component::Pressure => {
                    let p = layout.cell_pressure(c);
                    (0..4).map(|i| q.q1[i] * field.pressure[p[i]]).sum::<f64>() + field.pressure_shift
                }
            };
            total += q.weight * f.kernel(q.x) * value;
        }
    }
    Ok(total)
}

pub fn measurement_vector(set: &MeasurementSet, quad: &FunctionalQuadrature, field: &dyn AnalyticField) -> Vec<f64> {
    set.functionals.iter().map(|f| apply_to_analytic(f, quad, field)).collect()
}

pub fn measurement_vector_discrete(
    set: &MeasurementSet,
    quad: &FunctionalQuadrature,
    layout: &DofLayout,
    field: &DiscreteField,
) -> Result<Vec<f64>, MeasurementError> {
    set.functionals.iter().map(|f| apply_to_discrete(f, quad, layout, field)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);
    impl AnalyticField for Constant {
        fn velocity(&self, _: Point) -> [f64; 2] {
            [0.0, 0.0]
        }
        fn pressure(&self, _: Point) -> f64 {
            self.0
        }
    }

    #[test]
    fn grid_centers() {
        let square = Mesh::unit_square(1).unwrap();
        assert_eq!(gaussian_centers_grid(1, &square), vec![[0.5, 0.5]]);
        let g = gaussian_centers_grid(2, &square);
        let t = 1.0 / 3.0;
        assert_eq!(g, vec![[t, t], [2.0 * t, t], [t, 2.0 * t], [2.0 * t, 2.0 * t]]);
        assert_eq!(gaussian_centers_grid(6, &square).len(), 36);
        let holed = Mesh::square_with_hole(1, [0.5, 0.5], 0.1).unwrap();
        let g = gaussian_centers_grid(5, &holed);
        assert_eq!(g.len(), 24);
        assert!(!g.contains(&[0.5, 0.5]));
        assert_eq!(gaussian_centers_grid(3, &holed).len(), 8);
    }

    #[test]
    fn gaussian_mass_on_unit_square() {
        let mesh = Mesh::unit_square(3).unwrap();
        let quad = FunctionalQuadrature::new(&mesh).unwrap();
        let f = Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap();
        let v = apply_to_analytic(&f, &quad, &Constant(1.0));
        let r: f64 = 0.1;
        let erf = libm::erf(0.5 / (r * 2f64.sqrt()));
        let exact = (2.0 * std::f64::consts::PI * r * r).sqrt() * erf * erf;
        assert!((v - exact).abs() < 1e-6 * exact);
        assert!((v - 0.25066).abs() < 1e-5);
        let g = Functional::gaussian([0.5, 0.5], 0.1, Component::Velocity(1)).unwrap();
        assert_eq!(apply_to_analytic(&g, &quad, &Constant(1.0)), 0.0);
    }

    #[test]
    fn symmetric_grid_gives_equal_values() {
        let mesh = Mesh::unit_square(4).unwrap();
        let quad = FunctionalQuadrature::new(&mesh).unwrap();
        let centers = gaussian_centers_grid(2, &mesh);
        let set = MeasurementSet::from_centers(&[], &centers, 0.1).unwrap();
        let w = measurement_vector(&set, &quad, &Constant(1.0));
        for v in &w {
            assert!((v - w[0]).abs() < 1e-8);
        }
        assert!(measurement_vector(&MeasurementSet::default(), &quad, &Constant(1.0)).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let set = MeasurementSet::from_centers(&[[0.25, 0.5]], &[[0.75, 0.5]], 0.1).unwrap();
        let with_values = MeasurementSet { values: Some(vec![1.5, -2.0, 0.125]), ..set.clone() };
        assert_eq!(MeasurementSet::from_csv(&with_values.to_csv()).unwrap(), with_values);
        assert_eq!(MeasurementSet::from_csv(&set.to_csv()).unwrap(), set);
    }

    #[test]
    fn csv_errors() {
        let bad = "kind,component,cx,cy,r,value\ngaussian,4,0.5,0.5,0.1,\n";
        assert_eq!(MeasurementSet::from_csv(bad).unwrap_err(), MeasurementError::InvalidComponent(4));
        let bad = "kind,component,cx,cy,r,value\ngaussian,1,x,0.5,0.1,\n";
        assert!(matches!(MeasurementSet::from_csv(bad), Err(MeasurementError::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicates_and_widths_are_rejected() {
        let f = Functional::gaussian([0.5, 0.5], 0.1, Component::Pressure).unwrap();
        assert_eq!(MeasurementSet::new(vec![f, f], None).unwrap_err(), MeasurementError::Duplicate(1));
        assert_eq!(Functional::gaussian([0.5, 0.5], 0.0, Component::Pressure).unwrap_err(), MeasurementError::InvalidWidth(0.0));
        let mesh = Mesh::square_with_hole(1, [0.5, 0.5], 0.1).unwrap();
        let set = MeasurementSet::new(vec![f], None).unwrap();
        assert_eq!(set.check_domain(&mesh).unwrap_err(), MeasurementError::CenterOutside([0.5, 0.5]));
    }
}
