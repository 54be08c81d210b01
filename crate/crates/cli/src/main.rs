//! `hyperent`: simulate, reconstruct and characterize hyperentangled photon pairs.

mod commands;
mod error;
mod grid;
mod output;
mod subspace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hyperent::tomography::Method;

use crate::error::{CliError, CliResult};
use crate::output::{Run, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "hyperent", version, about = "Hyperentangled photon-pair toolkit")]
struct Cli {
    /// Seed for every random draw (overrides a config file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory outputs and the run manifest are written to.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Source configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Linear,
    Mle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Linear => Method::Linear,
            MethodArg::Mle => Method::Mle,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a catalog state or one built from --config.
    MakeState {
        #[arg(long)]
        name: Option<String>,
        /// Print the catalog and exit.
        #[arg(long)]
        list: bool,
        /// Also write a tidy CSV of matrix elements.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value = "state.json")]
        output: String,
    },
    /// Draw Poisson counts for every setting.
    Simulate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        settings: PathBuf,
        /// Acquisition time per setting, seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Scale the pair rate so the mean expected count per setting is this.
        #[arg(long)]
        mean_counts: Option<f64>,
        #[arg(long, default_value = "counts.csv")]
        output: String,
    },
    /// Reconstruct a density matrix from a tomography bundle.
    Reconstruct {
        /// Directory holding settings.json, counts.csv and options.json.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Parametric bootstrap resamples.
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long)]
        grid: bool,
    },
    /// Entanglement and fidelity metrics, or fringe visibility.
    Metrics {
        #[arg(long)]
        rho: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// CSV of `phase,probability` rows.
        #[arg(long)]
        fringe: Option<PathBuf>,
        #[arg(long, default_value = "metrics.json")]
        output: String,
    },
    /// CHSH value of a state or of CHSH counts.
    Bell {
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Degree of freedom to test: poln, spatial or etime.
        #[arg(long)]
        dof: Option<String>,
        /// Project a spectator DOF, e.g. `spatial=g` or `poln=H/V`.
        #[arg(long)]
        project: Vec<String>,
        /// Two spatial modes spanning the analyzed qubit, e.g. `l,r`.
        #[arg(long)]
        restrict: Option<String>,
        /// Search for the settings maximizing S.
        #[arg(long)]
        optimize: bool,
        /// ChshSettings JSON; the textbook settings if omitted.
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Also write fringe.csv from a phase scan of analyzer a.
        #[arg(long)]
        fringe: bool,
        #[arg(long, default_value_t = 64)]
        fringe_points: usize,
        #[arg(long, default_value = "bell.json")]
        output: String,
    },
    /// Generate measurement settings.
    SettingsGen {
        #[command(subcommand)]
        kind: SettingsKind,
    },
    /// Rerun a recorded command; with --out-dir, also compare outputs byte for byte.
    Replay { manifest: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SettingsKind {
    /// Complete product tomography settings plus options.json.
    Tomography {
        /// Take the layout from this state.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Comma-separated DOFs per photon, e.g. `poln,spatial`.
        #[arg(long)]
        dofs: Option<String>,
        #[arg(long, default_value_t = 3)]
        spatial_dim: usize,
        #[arg(long, value_enum, default_value = "mle")]
        method: MethodArg,
    },
    /// The 16 CHSH settings.
    Chsh {
        #[arg(long, default_value = "poln")]
        dof: String,
        /// Dimension of the tested DOF (spatial may be 3).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Use the optimal settings for this two-qubit state.
        #[arg(long)]
        optimize_from: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeState { .. } => "make-state",
            Command::Simulate { .. } => "simulate",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Metrics { .. } => "metrics",
            Command::Bell { .. } => "bell",
            Command::SettingsGen {
                kind: SettingsKind::Tomography { .. },
            } => "settings-gen-tomography",
            Command::SettingsGen {
                kind: SettingsKind::Chsh { .. },
            } => "settings-gen-chsh",
            Command::Replay { .. } => "replay",
        }
    }
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        // A second build in the same process (replay) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one command and returns the paths it wrote.
fn execute(cli: Cli, args: Vec<String>) -> CliResult<Vec<PathBuf>> {
    init_threads(cli.threads)?;
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.out_dir.as_deref());
    }
    if let Command::MakeState { list: true, .. } = &cli.command {
        commands::list_states();
        return Ok(Vec::new());
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut run = Run::new(cli.command.name(), args, out_dir);
    run.seed = cli.seed;
    let config = cli.config.as_deref();
    match &cli.command {
        Command::MakeState { name, grid, output, .. } => commands::make_state(
            commands::MakeState {
                name: name.as_deref(),
                config,
                output,
                grid: *grid,
            },
            &mut run,
        )?,
        Command::Simulate {
            state,
            settings,
            duration,
            mean_counts,
            output,
        } => commands::simulate(
            commands::Simulate {
                state,
                settings,
                config,
                seed: cli.seed,
                duration: *duration,
                mean_counts: *mean_counts,
                output,
            },
            &mut run,
        )?,
        Command::Reconstruct {
            bundle,
            counts,
            settings,
            options,
            method,
            max_iterations,
            tolerance,
            bootstrap,
            grid,
        } => commands::reconstruct(
            commands::Reconstruct {
                bundle: bundle.as_deref(),
                counts: counts.as_deref(),
                settings: settings.as_deref(),
                options: options.as_deref(),
                method: method.map(Into::into),
                max_iterations: *max_iterations,
                tolerance: *tolerance,
                bootstrap: *bootstrap,
                seed: cli.seed,
                grid: *grid,
            },
            &mut run,
        )?,
        Command::Metrics {
            rho,
            target,
            fringe,
            output,
        } => commands::metrics_cmd(
            commands::Metrics {
                rho: rho.as_deref(),
                target: target.as_deref(),
                fringe: fringe.as_deref(),
                output,
            },
            &mut run,
        )?,
        Command::Bell {
            state,
            counts,
            dof,
            project,
            restrict,
            optimize,
            settings,
            fringe,
            fringe_points,
            output,
        } => commands::bell(
            commands::Bell {
                state: state.as_deref(),
                counts: counts.as_deref(),
                dof: dof.as_deref(),
                project,
                restrict: restrict.as_deref(),
                optimize: *optimize,
                settings: settings.as_deref(),
                fringe: *fringe,
                fringe_points: *fringe_points,
                output,
            },
            &mut run,
        )?,
        Command::SettingsGen {
            kind:
                SettingsKind::Tomography {
                    state,
                    dofs,
                    spatial_dim,
                    method,
                },
        } => commands::settings_tomography(
            commands::TomographySettings {
                state: state.as_deref(),
                dofs: dofs.as_deref(),
                spatial_dim: *spatial_dim,
                method: (*method).into(),
            },
            &mut run,
        )?,
        Command::SettingsGen {
            kind:
                SettingsKind::Chsh {
                    dof,
                    dim,
                    settings,
                    optimize_from,
                },
        } => commands::settings_chsh(
            commands::ChshSettingsGen {
                dof,
                dim: *dim,
                settings: settings.as_deref(),
                optimize_from: optimize_from.as_deref(),
            },
            &mut run,
        )?,
        Command::Replay { .. } => unreachable!("handled above"),
    }
    debug_assert!(run.has_outputs());
    run.commit()
}

fn replay(manifest_path: &Path, out_dir: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| CliError::from(e).with_context(manifest_path))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    // Resolve the override before changing directory.
    let out_dir = out_dir.map(std::path::absolute).transpose()?;
    std::env::set_current_dir(&manifest.cwd).map_err(|e| CliError::from(e).with_context(&manifest.cwd))?;
    let argv = std::iter::once("hyperent".to_string()).chain(manifest.args.iter().cloned());
    let mut cli = Cli::try_parse_from(argv).map_err(|e| CliError::validation(format!("manifest arguments: {e}")))?;
    if out_dir.is_some() {
        cli.out_dir = out_dir.clone();
    }
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::validation("a replay manifest cannot itself be replayed"));
    }
    let written = execute(cli, manifest.args.clone())?;
    if out_dir.is_some() {
        let mut mismatched = Vec::new();
        for (original, fresh) in manifest.outputs.iter().zip(&written) {
            let a = std::fs::read(original).map_err(|e| CliError::from(e).with_context(original))?;
            let b = std::fs::read(fresh)?;
            if a != b {
                mismatched.push(original.display().to_string());
            }
        }
        if manifest.outputs.len() != written.len() {
            return Err(CliError::validation("replay produced a different set of outputs"));
        }
        if !mismatched.is_empty() {
            return Err(CliError::validation(format!(
                "replay outputs differ: {}",
                mismatched.join(", ")
            )));
        }
        println!("replay reproduced {} output(s) byte for byte", written.len());
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match execute(cli, args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
