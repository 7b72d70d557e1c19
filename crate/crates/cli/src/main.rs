//! `recover`: batch runner for Stokes recovery experiments.

mod config;
mod run;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use stokes_recovery::Mesh;

use config::Config;
use run::RunOptions;

#[derive(Parser)]
#[command(name = "recover", version, about = "Optimal recovery of Stokes flows from linear measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every table of a config, with field dumps.
    Run { config: PathBuf },
    /// Run every table of a config without field dumps.
    Table { config: PathBuf },
    #[command(subcommand)]
    Mesh(MeshCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinMesh {
    UnitSquare,
    SquareWithHole,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write a generated mesh.
    Gen {
        #[arg(long, value_enum)]
        kind: BuiltinMesh,
        #[arg(long)]
        n: u32,
        /// Hole center as `x,y`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.5, 0.5])]
        center: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Validate a mesh file and print a summary; optionally rewrite it.
    Import {
        path: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the mesh a config uses at one refinement level.
    Export {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        n: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
}

const THREADS_VAR: &str = "RECOVER_THREADS";

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = match value.trim().parse() {
        Ok(t) if t > 0 => t,
        _ => bail!("{THREADS_VAR}={value:?} is not a positive integer"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    Ok(())
}

fn summary(mesh: &Mesh) -> serde_json::Value {
    let mut edges = std::collections::BTreeMap::new();
    for e in mesh.boundary_edges() {
        *edges.entry(e.marker).or_insert(0usize) += 1;
    }
    let markers: Vec<_> = mesh
        .markers()
        .iter()
        .map(|(id, name)| json!({ "id": id, "name": name, "edges": edges.get(id).copied().unwrap_or(0) }))
        .collect();
    let loops = mesh.boundary_loops();
    json!({
        "vertices": mesh.vertex_count(),
        "cells": mesh.cell_count(),
        "area": mesh.area(),
        "markers": markers,
        "boundary_loops": loops.len(),
        "holes": loops.iter().filter(|l| l.is_hole()).count(),
    })
}

fn mesh_command(cmd: MeshCommand) -> anyhow::Result<()> {
    match cmd {
        MeshCommand::Gen { kind, n, center, radius, output } => {
            let mesh = match kind {
                BuiltinMesh::UnitSquare => Mesh::unit_square(n)?,
                BuiltinMesh::SquareWithHole => Mesh::square_with_hole(n, [center[0], center[1]], radius)?,
            };
            mesh.write(&output).with_context(|| format!("writing {}", output.display()))?;
            println!("{}", summary(&mesh));
        }
        MeshCommand::Import { path, output } => {
            let mesh = Mesh::read(&path).with_context(|| format!("reading {}", path.display()))?;
            println!("{}", summary(&mesh));
            if let Some(out) = output {
                mesh.write(&out).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        MeshCommand::Export { config, n, output } => {
            let cfg = Config::load(&config)?;
            let mesh = run::build_mesh(&cfg.domain, n)?;
            mesh.write(&output).with_context(|| format!("writing {}", output.display()))?;
            println!("{}", summary(&mesh));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let (config, dump_fields) = match cli.command {
        Command::Run { config } => (config, true),
        Command::Table { config } => (config, false),
        Command::Mesh(cmd) => {
            return match mesh_command(cmd) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    let cfg = match Config::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(2);
        }
    };
    match run::execute(&cfg, &RunOptions { dump_fields }) {
        Ok(manifest) => {
            for t in manifest["tables"].as_array().into_iter().flatten() {
                println!("{}", cfg.output.join(t["csv"].as_str().unwrap_or_default()).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
