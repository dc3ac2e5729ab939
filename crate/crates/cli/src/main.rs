use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lcnfem::flow::FlowStatus;
use lcnfem::harness::{self, convergence_study, preset, run_experiment, Experiment, ExperimentSpec, TauPolicy, TauSelection};
use lcnfem::vtk::export_surface;
use lcnfem::Result;

#[derive(Parser)]
#[command(name = "lcnfem", version, about = "Gradient flow simulations of actuated LCN membranes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its surface, iteration log and summary.
    Run {
        spec: PathBuf,
        /// Output directory (defaults to the current directory).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the number of subdivisions.
        #[arg(long)]
        n: Option<usize>,
        /// Override the time step.
        #[arg(long)]
        tau: Option<f64>,
        /// Evaluate elements on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Run a spec on several meshes and fit convergence rates.
    Sweep {
        spec: PathBuf,
        /// Comma-separated inverse mesh sizes 1/h, e.g. 16,32,64,128
        /// (an n-subdivision grid has h = 1/(2n)).
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<usize>,
        /// Fixed time step for all meshes (default: the spec's policy).
        #[arg(long, conflicts_with = "tau_max")]
        tau: Option<f64>,
        /// Search the largest admissible time step on every mesh.
        #[arg(long)]
        tau_max: bool,
        /// Write the table to this file instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Search the largest time step for which the flow converges.
    Taumax {
        spec: PathBuf,
        #[arg(long, default_value_t = harness::TAU_SEARCH_START)]
        start: f64,
        #[arg(long, default_value_t = harness::TAU_SEARCH_TOL)]
        tol: f64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sequential: bool,
    },
    /// Write the mesh and the initial surface without running the flow.
    Export {
        spec: PathBuf,
        /// Plain-text vertex/triangle listing.
        #[arg(long)]
        mesh_dump: Option<PathBuf>,
        /// Legacy VTK file of the initial deformation.
        #[arg(long)]
        vtk: Option<PathBuf>,
    },
    /// Print a built-in experiment specification as JSON.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(harness::PRESET_NAMES))]
        name: String,
    },
}

fn load(path: &Path, n: Option<usize>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(n) = n {
        spec = spec.with_resolution(n);
    }
    Ok(spec)
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            spec,
            out,
            n,
            tau,
            sequential,
        } => {
            let mut spec = load(&spec, n)?;
            if let Some(tau) = tau {
                spec.tau = TauPolicy::Fixed(tau);
            }
            let result = run_experiment(&spec, Some(&out), !sequential)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            for f in &result.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(result.summary.status == FlowStatus::Converged)
        }
        Command::Sweep {
            spec,
            h,
            tau,
            tau_max,
            csv,
            sequential,
        } => {
            let spec = load(&spec, None)?;
            let selection = match (tau, tau_max) {
                (Some(t), _) => TauSelection::Fixed(t),
                (None, true) => TauSelection::Max,
                (None, false) => TauSelection::FromSpec,
            };
            let ns = h.iter().map(|&inv_h| harness::subdivisions_for(inv_h)).collect::<Result<Vec<_>>>()?;
            let table = convergence_study(&spec, &ns, selection, !sequential)?;
            match csv {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| lcnfem::Error::Io { path: path.clone(), source: e })?;
                    table.write_csv(file)?;
                    eprintln!("wrote {}", path.display());
                }
                None => table.write_csv(std::io::stdout().lock())?,
            }
            let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            eprintln!("slope e_h: {}  slope |E_h|: {}", fmt(table.e_h_slope), fmt(table.energy_slope));
            Ok(table.rows.iter().all(|r| r.status == FlowStatus::Converged))
        }
        Command::Taumax {
            spec,
            start,
            tol,
            n,
            sequential,
        } => {
            let spec = load(&spec, n)?;
            let experiment = Experiment::build(&spec, !sequential)?;
            let tau = experiment.tau_max(start, tol)?;
            println!("{tau}");
            Ok(true)
        }
        Command::Export { spec, mesh_dump, vtk } => {
            let spec = load(&spec, None)?;
            let experiment = Experiment::build(&spec, true)?;
            if let Some(path) = mesh_dump {
                let file = std::fs::File::create(&path).map_err(|e| lcnfem::Error::Io { path: path.clone(), source: e })?;
                experiment
                    .mesh
                    .write_dump(std::io::BufWriter::new(file))
                    .map_err(|e| lcnfem::Error::Io { path: path.clone(), source: e })?;
                eprintln!("wrote {}", path.display());
            }
            if let Some(path) = vtk {
                export_surface(&experiment.initial, &experiment.mesh, &path)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Preset { name } => {
            println!("{}", preset(&name)?.to_json());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
