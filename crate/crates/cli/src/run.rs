//! Executes the sweeps of a [`Config`] and writes tables, field dumps and
//! the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use stokes_recovery::measurements::{gaussian_centers_grid, Component, MeasurementSet};
use stokes_recovery::recovery::drag_lift;
use stokes_recovery::{Mesh, RecoveryParams, Session};

use crate::config::{Config, DomainKind, MeasurementSpec, Table};
use crate::table::{emit_table, Columns, Row};

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` ({context}): {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub context: String,
    pub message: String,
}

fn fail(stage: &'static str, context: impl Into<String>) -> impl FnOnce(String) -> StageError {
    let context = context.into();
    move |message| StageError { stage, context, message }
}

pub struct RunOptions {
    pub dump_fields: bool,
}

/// The mesh a config describes at refinement level `n`.
pub fn build_mesh(domain: &DomainKind, n: u32) -> Result<Mesh, StageError> {
    let context = format!("level {n}");
    match domain {
        DomainKind::UnitSquare => Mesh::unit_square(n),
        DomainKind::SquareWithHole { center, radius } => Mesh::square_with_hole(n, *center, *radius),
        DomainKind::MeshFile(p) => Mesh::read(p),
    }
    .map_err(|e| fail("mesh", context)(e.to_string()))
}

fn measurement_set(spec: &MeasurementSpec, mesh: &Mesh, width: f64) -> Result<(MeasurementSet, usize, usize), StageError> {
    let err = |e: String| fail("measurements", format!("{spec:?}"))(e);
    match spec {
        MeasurementSpec::Grid { lu, lp } => {
            let pts = |l: usize| if l == 0 { Vec::new() } else { gaussian_centers_grid(l, mesh) };
            let (vu, vp) = (pts(*lu), pts(*lp));
            let set = MeasurementSet::from_centers(&vu, &vp, width).map_err(|e| err(e.to_string()))?;
            Ok((set, vu.len(), vp.len()))
        }
        MeasurementSpec::Explicit { velocity, pressure } => {
            let set = MeasurementSet::from_centers(velocity, pressure, width).map_err(|e| err(e.to_string()))?;
            Ok((set, velocity.len(), pressure.len()))
        }
        MeasurementSpec::File(p) => {
            let text = fs::read_to_string(p).map_err(|e| err(format!("{}: {e}", p.display())))?;
            let set = MeasurementSet::from_csv(&text).map_err(|e| err(format!("{}: {e}", p.display())))?;
            let mut centers: Vec<[u64; 2]> = set
                .functionals
                .iter()
                .filter(|f| f.component != Component::Pressure)
                .map(|f| f.center.map(f64::to_bits))
                .collect();
            centers.sort_unstable();
            centers.dedup();
            let m_p = set.functionals.iter().filter(|f| f.component == Component::Pressure).count();
            Ok((set, centers.len(), m_p))
        }
    }
}

struct Sessions {
    by_level: BTreeMap<u32, Session>,
    setup_seconds: BTreeMap<u32, f64>,
}

impl Sessions {
    fn get(&mut self, cfg: &Config, n: u32) -> Result<&Session, StageError> {
        if !self.by_level.contains_key(&n) {
            let t = Instant::now();
            let mesh = build_mesh(&cfg.domain, n)?;
            let session = Session::new(mesh, &cfg.unknown_markers).map_err(|e| fail("discretization", format!("level {n}"))(e.to_string()))?;
            self.setup_seconds.insert(n, t.elapsed().as_secs_f64());
            self.by_level.insert(n, session);
        }
        Ok(&self.by_level[&n])
    }
}

/// Runs every table of `cfg` and returns the manifest that was written.
pub fn execute(cfg: &Config, opts: &RunOptions) -> Result<serde_json::Value, StageError> {
    let started = Instant::now();
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| fail("output", p)(e.to_string())
    };
    fs::create_dir_all(&cfg.output).map_err(io(&cfg.output))?;
    let fields_dir = cfg.output.join("fields");
    if opts.dump_fields {
        fs::create_dir_all(&fields_dir).map_err(io(&fields_dir))?;
    }
    let mut sessions = Sessions { by_level: BTreeMap::new(), setup_seconds: BTreeMap::new() };
    let mut tables = Vec::new();
    for table in &cfg.tables {
        let (rows, entries) = run_table(cfg, table, &mut sessions, opts.dump_fields.then_some(fields_dir.as_path()))?;
        let cols = Columns { drag_lift: cfg.drag_lift.is_some(), tolerances: table.tolerances.len() > 1 };
        let csv_path = cfg.output.join(format!("{}.csv", table.name));
        fs::write(&csv_path, emit_table(&rows, cols)).map_err(io(&csv_path))?;
        tables.push(json!({ "name": table.name, "csv": file_name(&csv_path), "rows": entries }));
    }
    let manifest = json!({
        "config_path": cfg.path.display().to_string(),
        "config_text": cfg.text,
        "config": cfg.raw,
        "versions": { "recover": env!("CARGO_PKG_VERSION"), "stokes-recovery": stokes_recovery::VERSION },
        "threads": rayon::current_num_threads(),
        "setup_seconds": sessions.setup_seconds,
        "tables": tables,
        "total_seconds": started.elapsed().as_secs_f64(),
    });
    let manifest_path = cfg.output.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| fail("output", "manifest")(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(io(&manifest_path))?;
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run_table(
    cfg: &Config,
    table: &Table,
    sessions: &mut Sessions,
    fields_dir: Option<&Path>,
) -> Result<(Vec<Row>, Vec<serde_json::Value>), StageError> {
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &n in &table.levels {
        let session = sessions.get(cfg, n)?;
        let disc = &session.disc;
        let sets = table
            .measurements
            .iter()
            .map(|spec| measurement_set(spec, &disc.mesh, cfg.width))
            .collect::<Result<Vec<_>, _>>()?;
        for &s in &table.s {
            for &(tol_background, tol_riesz) in &table.tolerances {
                for (set, m_u, m_p) in &sets {
                    for &mode in &table.modes {
                        let t = Instant::now();
                        let context = format!("table {}, n={n}, s={s}, m_u={m_u}, m_p={m_p}, mode={}", table.name, mode.name());
                        let params = RecoveryParams { s, k: table.k, mode, tol_background, tol_riesz };
                        let r = session
                            .recover_with_background(set, &cfg.known, cfg.solution.as_ref(), &params)
                            .map_err(|e| fail("recovery", context.clone())(e.to_string()))?;
                        let qoi = match cfg.drag_lift {
                            Some(marker) => Some(
                                drag_lift(&disc.mesh, &disc.layout, &r.field, marker)
                                    .map_err(|e| fail("quantities of interest", context.clone())(e.to_string()))?,
                            ),
                            None => None,
                        };
                        let index = rows.len();
                        let field_file = match fields_dir {
                            Some(dir) => {
                                let p: PathBuf = dir.join(format!("{}_{index:04}.csv", table.name));
                                fs::write(&p, r.field.to_csv(&disc.layout)).map_err(|e| fail("output", p.display().to_string())(e.to_string()))?;
                                Some(format!("fields/{}", file_name(&p)))
                            }
                            None => None,
                        };
                        let e = r.errors;
                        rows.push(Row {
                            m_u: *m_u,
                            m_p: *m_p,
                            s,
                            n,
                            mode: mode.name().to_string(),
                            eps: mode.eps().unwrap_or(0.0),
                            cond_g: r.cond_g,
                            cond_gp: r.report.cond,
                            rank: r.report.rank,
                            err_u: e.map(|e| e.err_u),
                            err_p: e.map(|e| e.err_p),
                            err: e.map(|e| e.err),
                            drag_lift: qoi,
                            tol_background,
                            tol_riesz,
                        });
                        entries.push(json!({
                            "row": index,
                            "n": n,
                            "s": s,
                            "m_u": m_u,
                            "m_p": m_p,
                            "mode": mode.name(),
                            "tol_background": tol_background,
                            "tol_riesz": tol_riesz,
                            "cond_retained": r.report.cond_retained,
                            "field": field_file,
                            "seconds": t.elapsed().as_secs_f64(),
                        }));
                    }
                }
            }
        }
    }
    Ok((rows, entries))
}
