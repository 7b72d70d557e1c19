//! Experiment configuration: TOML text, parsed into raw serde structures and
//! then resolved into a validated [`Config`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stokes_recovery::linalg::GramMode;
use stokes_recovery::{ExactSolution, Point};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Syntax { path: String, reason: String },
    #[error("{path}: key `{key}`: {reason}")]
    Invalid { path: String, key: String, reason: String },
}

/// A scalar or a list of scalars.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub output: PathBuf,
    #[serde(default = "default_solution")]
    pub solution: String,
    pub domain: RawDomain,
    #[serde(default)]
    pub recovery: RawSweep,
    #[serde(default)]
    pub measurements: RawMeasurements,
    #[serde(default)]
    pub qoi: RawQoi,
    #[serde(default)]
    pub table: Vec<RawTable>,
}

fn default_solution() -> String {
    "case2".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawDomain {
    pub kind: String,
    pub n: Option<OneOrMany<u32>>,
    pub center: Option<Point>,
    pub radius: Option<f64>,
    pub path: Option<PathBuf>,
    pub unknown: Option<Vec<u32>>,
    pub known: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub s: Option<OneOrMany<f64>>,
    pub k: Option<f64>,
    pub mode: Option<OneOrMany<String>>,
    pub eps: Option<f64>,
    pub tol_background: Option<OneOrMany<f64>>,
    pub tol_riesz: Option<OneOrMany<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeasurements {
    pub width: Option<f64>,
    pub pairs: Option<Vec<[usize; 2]>>,
    pub grids: Option<Vec<[usize; 2]>>,
    pub velocity_centers: Option<Vec<Point>>,
    pub pressure_centers: Option<Vec<Point>>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawQoi {
    pub drag_lift: Option<u32>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawTable {
    pub name: String,
    pub n: Option<OneOrMany<u32>>,
    pub s: Option<OneOrMany<f64>>,
    pub k: Option<f64>,
    pub mode: Option<OneOrMany<String>>,
    pub eps: Option<f64>,
    pub tol_background: Option<OneOrMany<f64>>,
    pub tol_riesz: Option<OneOrMany<f64>>,
    pub pairs: Option<Vec<[usize; 2]>>,
    pub grids: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    UnitSquare,
    SquareWithHole { center: Point, radius: f64 },
    MeshFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementSpec {
    /// `l_u x l_u` velocity and `l_p x l_p` pressure grids.
    Grid { lu: usize, lp: usize },
    Explicit { velocity: Vec<Point>, pressure: Vec<Point> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub levels: Vec<u32>,
    pub s: Vec<f64>,
    pub k: f64,
    pub modes: Vec<GramMode>,
    /// `(background, representer)` CG tolerances.
    pub tolerances: Vec<(f64, f64)>,
    pub measurements: Vec<MeasurementSpec>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub path: PathBuf,
    pub text: String,
    pub raw: RawConfig,
    pub output: PathBuf,
    pub domain: DomainKind,
    pub unknown_markers: Vec<u32>,
    pub solution: Option<ExactSolution>,
    pub known: ExactSolution,
    pub width: f64,
    pub drag_lift: Option<u32>,
    pub tables: Vec<Table>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, path)
    }

    /// Parses `text`; relative paths inside resolve against the directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax { path: shown.clone(), reason: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Resolver { path: &shown, base: &base }.resolve(raw, text, path)
    }
}

struct Resolver<'a> {
    path: &'a str,
    base: &'a Path,
}

impl Resolver<'_> {
    fn err(&self, key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { path: self.path.to_string(), key: key.into(), reason: reason.into() }
    }

    fn rel(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn solution(&self, key: &str, name: &str) -> Result<Option<ExactSolution>, ConfigError> {
        if name == "none" {
            return Ok(None);
        }
        ExactSolution::from_name(name)
            .map(Some)
            .ok_or_else(|| self.err(key, format!("unknown solution `{name}`; expected case1, case2, zero or none")))
    }

    fn resolve(&self, raw: RawConfig, text: &str, path: &Path) -> Result<Config, ConfigError> {
        let solution = self.solution("solution", &raw.solution)?;
        let d = &raw.domain;
        let (domain, default_unknown) = match d.kind.as_str() {
            "unit_square" => (DomainKind::UnitSquare, vec![1]),
            "square_with_hole" => {
                let radius = d.radius.unwrap_or(0.1);
                if !(radius > 0.0) {
                    return Err(self.err("domain.radius", "must be positive"));
                }
                (DomainKind::SquareWithHole { center: d.center.unwrap_or([0.5, 0.5]), radius }, vec![2])
            }
            "mesh_file" => {
                let p = d.path.as_ref().ok_or_else(|| self.err("domain.path", "required for kind = \"mesh_file\""))?;
                if d.unknown.is_none() {
                    return Err(self.err("domain.unknown", "required for kind = \"mesh_file\""));
                }
                (DomainKind::MeshFile(self.rel(p)), vec![])
            }
            other => {
                return Err(self.err("domain.kind", format!("unknown domain `{other}`; expected unit_square, square_with_hole or mesh_file")))
            }
        };
        if !matches!(domain, DomainKind::SquareWithHole { .. }) && (d.center.is_some() || d.radius.is_some()) {
            return Err(self.err("domain.center", "only valid for kind = \"square_with_hole\""));
        }
        let unknown_markers = d.unknown.clone().unwrap_or(default_unknown);
        if unknown_markers.is_empty() {
            return Err(self.err("domain.unknown", "at least one marker must carry unknown data"));
        }
        let known = match &d.known {
            Some(name) => self.solution("domain.known", name)?.unwrap_or(ExactSolution::Zero),
            None => solution.unwrap_or(ExactSolution::Zero),
        };
        let default_levels = match (&domain, &d.n) {
            (DomainKind::MeshFile(_), Some(_)) => return Err(self.err("domain.n", "refinement levels do not apply to a mesh file")),
            (DomainKind::MeshFile(_), None) => vec![0],
            (_, Some(n)) => n.to_vec(),
            (_, None) => return Err(self.err("domain.n", "required for generated domains")),
        };

        let m = &raw.measurements;
        let width = m.width.unwrap_or(0.1);
        if !(width > 0.0) {
            return Err(self.err("measurements.width", "must be positive"));
        }
        let default_measurements = self.measurements(m, solution.is_none())?;
        let drag_lift = raw.qoi.drag_lift;

        let top = &raw.recovery;
        let mut tables = Vec::new();
        if raw.table.is_empty() {
            tables.push(self.table("results", "recovery", top, &RawSweep::default(), default_levels.clone(), default_measurements.clone())?);
        }
        for (i, t) in raw.table.iter().enumerate() {
            let key = format!("table[{i}]");
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(self.err(format!("{key}.name"), "must be non-empty and use only letters, digits, `_` or `-`"));
            }
            if raw.table[..i].iter().any(|u| u.name == t.name) {
                return Err(self.err(format!("{key}.name"), format!("duplicate table name `{}`", t.name)));
            }
            let levels = match (&domain, &t.n) {
                (DomainKind::MeshFile(_), Some(_)) => return Err(self.err(format!("{key}.n"), "refinement levels do not apply to a mesh file")),
                (_, Some(n)) => n.to_vec(),
                (_, None) => default_levels.clone(),
            };
            let measurements = match (&t.pairs, &t.grids) {
                (None, None) => default_measurements.clone(),
                _ => self.grids(&key, t.pairs.as_deref(), t.grids.as_deref())?,
            };
            let own = RawSweep {
                s: t.s.clone(),
                k: t.k,
                mode: t.mode.clone(),
                eps: t.eps,
                tol_background: t.tol_background.clone(),
                tol_riesz: t.tol_riesz.clone(),
            };
            tables.push(self.table(&t.name, &key, top, &own, levels, measurements)?);
        }
        Ok(Config {
            path: path.to_path_buf(),
            text: text.to_string(),
            output: self.rel(&raw.output),
            domain,
            unknown_markers,
            solution,
            known,
            width,
            drag_lift,
            tables,
            raw,
        })
    }

    fn measurements(&self, m: &RawMeasurements, need_values: bool) -> Result<Vec<MeasurementSpec>, ConfigError> {
        let explicit = m.velocity_centers.is_some() || m.pressure_centers.is_some();
        let sources = [m.pairs.is_some() || m.grids.is_some(), explicit, m.file.is_some()].iter().filter(|b| **b).count();
        if sources > 1 {
            return Err(self.err("measurements", "use only one of pairs/grids, velocity_centers/pressure_centers or file"));
        }
        if need_values && m.file.is_none() {
            return Err(self.err("measurements.file", "solution = \"none\" needs measured values from a file"));
        }
        if let Some(f) = &m.file {
            return Ok(vec![MeasurementSpec::File(self.rel(f))]);
        }
        if explicit {
            return Ok(vec![MeasurementSpec::Explicit {
                velocity: m.velocity_centers.clone().unwrap_or_default(),
                pressure: m.pressure_centers.clone().unwrap_or_default(),
            }]);
        }
        if m.pairs.is_none() && m.grids.is_none() {
            return Ok(Vec::new());
        }
        self.grids("measurements", m.pairs.as_deref(), m.grids.as_deref())
    }

    fn grids(&self, key: &str, pairs: Option<&[[usize; 2]]>, grids: Option<&[[usize; 2]]>) -> Result<Vec<MeasurementSpec>, ConfigError> {
        let mut out = Vec::new();
        if let Some(pairs) = pairs {
            for (i, [mu, mp]) in pairs.iter().enumerate() {
                let side = |m: usize| {
                    let l = (m as f64).sqrt().round() as usize;
                    (l * l == m).then_some(l)
                };
                match (side(*mu), side(*mp)) {
                    (Some(lu), Some(lp)) => out.push(MeasurementSpec::Grid { lu, lp }),
                    _ => return Err(self.err(format!("{key}.pairs[{i}]"), format!("({mu}, {mp}) are not both perfect squares; use grids for other counts"))),
                }
            }
        }
        if let Some(grids) = grids {
            out.extend(grids.iter().map(|[lu, lp]| MeasurementSpec::Grid { lu: *lu, lp: *lp }));
        }
        if out.is_empty() {
            return Err(self.err(format!("{key}.pairs"), "sweep list is empty"));
        }
        Ok(out)
    }

    fn table(&self, name: &str, key: &str, top: &RawSweep, own: &RawSweep, levels: Vec<u32>, measurements: Vec<MeasurementSpec>) -> Result<Table, ConfigError> {
        let pick = |field: &str| if key == "recovery" { format!("recovery.{field}") } else { format!("{key}.{field}") };
        let nonempty = |v: Vec<f64>, field: &str| -> Result<Vec<f64>, ConfigError> {
            if v.is_empty() {
                Err(self.err(pick(field), "sweep list is empty"))
            } else if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                Err(self.err(pick(field), "entries must be positive"))
            } else {
                Ok(v)
            }
        };
        if levels.is_empty() {
            return Err(self.err(pick("n"), "sweep list is empty"));
        }
        if measurements.is_empty() {
            return Err(self.err("measurements", "no measurement sweep given (pairs, grids, centers or file)"));
        }
        let s = nonempty(own.s.as_ref().or(top.s.as_ref()).map(|v| v.to_vec()).unwrap_or(vec![1.0]), "s")?;
        let k = own.k.or(top.k).unwrap_or(0.4);
        if !(k > 0.0) {
            return Err(self.err(pick("k"), "must be positive"));
        }
        let eps = own.eps.or(top.eps).unwrap_or(1e-10);
        if !(eps > 0.0 && eps < 1.0) {
            return Err(self.err(pick("eps"), "must lie in (0, 1)"));
        }
        let mode_names = own.mode.as_ref().or(top.mode.as_ref()).map(|v| v.to_vec()).unwrap_or(vec!["jacobi_threshold".into()]);
        if mode_names.is_empty() {
            return Err(self.err(pick("mode"), "sweep list is empty"));
        }
        let modes = mode_names
            .iter()
            .map(|m| match m.as_str() {
                "plain" => Ok(GramMode::Plain),
                "jacobi" => Ok(GramMode::Jacobi),
                "jacobi_threshold" => Ok(GramMode::JacobiThreshold(eps)),
                other => Err(self.err(pick("mode"), format!("unknown Gram mode `{other}`; expected plain, jacobi or jacobi_threshold"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let t1 = nonempty(own.tol_background.as_ref().or(top.tol_background.as_ref()).map(|v| v.to_vec()).unwrap_or(vec![1e-9]), "tol_background")?;
        let t2 = nonempty(own.tol_riesz.as_ref().or(top.tol_riesz.as_ref()).map(|v| v.to_vec()).unwrap_or(vec![1e-9]), "tol_riesz")?;
        let tolerances = t1.iter().flat_map(|a| t2.iter().map(move |b| (*a, *b))).collect();
        Ok(Table { name: name.to_string(), levels, s, k, modes, tolerances, measurements })
    }
}
