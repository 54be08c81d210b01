use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use hyperent::analyzers::{read_settings, settings_to_json, SettingsEntry};
use hyperent::bell::{
    chsh_from_counts, chsh_from_state, optimal_chsh_in, BellResult, BlochDomain, ChshSettings, LocalAnalyzer,
};
use hyperent::metrics::{self, MetricReport};
use hyperent::qcore::json::{density_to_json, read_density, LayoutJson, StateJson};
use hyperent::qcore::{DensityOperator, Dof, SubsystemLayout, Tolerances};
use hyperent::source::{
    build_hyper_state, make_named_state, pair_rate_for_mean_counts, read_counts_csv, simulate_counts, write_counts_csv,
    SourceConfig, CATALOG,
};
use hyperent::tomography::{
    bootstrap_errors, canonical_set, linear_inversion, mle_reconstruct, BundleOptions, Diagnostics, Method,
    TomographyProblem,
};
use serde_json::json;

use crate::error::{with_path, CliError, CliResult};
use crate::grid::density_grid_csv;
use crate::output::Run;
use crate::subspace::{parse_dof, parse_projections, pick_dof, reduce_to_qubits};

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn read_state(path: &Path, run: &mut Run) -> CliResult<DensityOperator> {
    run.input(path);
    with_path(read_density(path, &Tolerances::default()), path)
}

fn read_source_config(path: Option<&Path>, run: &mut Run) -> CliResult<SourceConfig> {
    match path {
        Some(p) => {
            run.input(p);
            let text = with_path(std::fs::read_to_string(p).map_err(Into::into), p)?;
            with_path(SourceConfig::from_json(&text), p)
        }
        None => Ok(SourceConfig::default()),
    }
}

fn read_settings_file(path: &Path, run: &mut Run) -> CliResult<Vec<SettingsEntry>> {
    run.input(path);
    with_path(read_settings(path), path)
}

pub struct MakeState<'a> {
    pub name: Option<&'a str>,
    pub config: Option<&'a Path>,
    pub output: &'a str,
    pub grid: bool,
}

pub fn make_state(args: MakeState, run: &mut Run) -> CliResult<()> {
    let rho = match (args.name, args.config) {
        (Some(_), Some(_)) => return Err(CliError::validation("give either --name or --config, not both")),
        (Some(name), None) => {
            run.config = json!({ "name": name });
            make_named_state(name)?
        }
        (None, Some(path)) => {
            let cfg = read_source_config(Some(path), run)?;
            run.config = serde_json::to_value(&cfg).expect("config serializes");
            build_hyper_state(&cfg)?
        }
        (None, None) => return Err(CliError::validation("make-state needs --name or --config (see --list)")),
    };
    println!("dimension {}, purity {:.12}", rho.dim(), rho.purity());
    let mut text = density_to_json(&rho);
    text.push('\n');
    run.stage(args.output, text);
    if args.grid {
        run.stage(grid_name(args.output), density_grid_csv(rho.matrix(), rho.layout()));
    }
    Ok(())
}

pub fn list_states() {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for (name, description) in CATALOG {
        // A closed pipe (`| head`) just ends the listing.
        if writeln!(out, "{name:<14} {description}").is_err() {
            return;
        }
    }
}

fn grid_name(output: &str) -> String {
    let stem = output.strip_suffix(".json").unwrap_or(output);
    format!("{stem}_grid.csv")
}

pub struct Simulate<'a> {
    pub state: &'a Path,
    pub settings: &'a Path,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub duration: f64,
    pub mean_counts: Option<f64>,
    pub output: &'a str,
}

pub fn simulate(args: Simulate, run: &mut Run) -> CliResult<()> {
    let rho = read_state(args.state, run)?;
    let settings = read_settings_file(args.settings, run)?;
    let mut cfg = read_source_config(args.config, run)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(CliError::validation(format!(
            "duration {} must be positive",
            args.duration
        )));
    }
    if let Some(mean) = args.mean_counts {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(CliError::validation(format!("mean counts {mean} must be positive")));
        }
        cfg.pair_rate = pair_rate_for_mean_counts(&rho, &settings, mean, args.duration)?;
    }
    let records = simulate_counts(&rho, &settings, &cfg, args.duration)?;
    let total: u64 = records.iter().map(|r| r.counts).sum();
    println!(
        "{} records, {total} counts (pair rate {:.6e} Hz)",
        records.len(),
        cfg.pair_rate
    );
    let mut buf = Vec::new();
    write_counts_csv(&records, &mut buf)?;
    run.seed = Some(cfg.seed);
    run.config = json!({ "source": cfg, "duration": args.duration, "mean_counts": args.mean_counts });
    run.stage(args.output, buf);
    Ok(())
}

pub struct Reconstruct<'a> {
    pub bundle: Option<&'a Path>,
    pub counts: Option<&'a Path>,
    pub settings: Option<&'a Path>,
    pub options: Option<&'a Path>,
    pub method: Option<Method>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub bootstrap: usize,
    pub seed: Option<u64>,
    pub grid: bool,
}

fn bundle_path(explicit: Option<&Path>, bundle: Option<&Path>, name: &str) -> CliResult<PathBuf> {
    match (explicit, bundle) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(dir)) => Ok(dir.join(name)),
        (None, None) => Err(CliError::validation(format!("no --bundle and no path for {name}"))),
    }
}

pub fn reconstruct(args: Reconstruct, run: &mut Run) -> CliResult<()> {
    let counts_path = bundle_path(args.counts, args.bundle, "counts.csv")?;
    let settings_path = bundle_path(args.settings, args.bundle, "settings.json")?;
    let options_path = bundle_path(args.options, args.bundle, "options.json")?;
    let settings = read_settings_file(&settings_path, run)?;
    run.input(&counts_path);
    let file = with_path(std::fs::File::open(&counts_path).map_err(Into::into), &counts_path)?;
    let records = with_path(read_counts_csv(file), &counts_path)?;
    run.input(&options_path);
    let text = with_path(
        std::fs::read_to_string(&options_path).map_err(Into::into),
        &options_path,
    )?;
    let mut bundle: BundleOptions =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", options_path.display())))?;
    if let Some(m) = args.method {
        bundle.method = m;
    }
    if let Some(n) = args.max_iterations {
        bundle.max_iterations = n;
    }
    if let Some(t) = args.tolerance {
        if !(t > 0.0) {
            return Err(CliError::validation(format!("tolerance {t} must be positive")));
        }
        bundle.tolerance = t;
    }
    let layout = bundle.layout.to_layout()?;
    let problem = TomographyProblem::from_records(layout, &settings, &records, bundle.tomography_options())?;
    run.config = serde_json::to_value(&bundle).expect("options serialize");

    let (matrix, diagnostics) = match bundle.method {
        Method::Linear => {
            let est = linear_inversion(&problem)?;
            println!("linear inversion, min eigenvalue {:.3e}", est.min_eigenvalue);
            let matrix = if est.is_physical() {
                est.to_density()?.into_parts().0
            } else {
                eprintln!(
                    "warning: linear estimate is not positive semidefinite (min eigenvalue {:.3e}); \
                     rho.json holds the raw matrix, use --method mle for a physical state",
                    est.min_eigenvalue
                );
                est.matrix.clone()
            };
            (matrix, Diagnostics::from_linear(&problem, &est))
        }
        Method::Mle => {
            let result = mle_reconstruct(&problem)?;
            println!(
                "maximum likelihood: {} iterations, log-likelihood {:.6}",
                result.iterations,
                result.final_log_likelihood()
            );
            if !result.converged {
                eprintln!(
                    "warning: reconstruction did not converge within {} iterations; writing the last iterate",
                    bundle.max_iterations
                );
            }
            if args.bootstrap > 0 {
                if result.converged {
                    let seed = args.seed.unwrap_or(0);
                    run.seed = Some(seed);
                    let report = bootstrap_errors(&problem, &result, args.bootstrap, seed)?;
                    run.stage("bootstrap.json", pretty(&report));
                } else {
                    eprintln!("warning: skipping bootstrap for a non-converged reconstruction");
                }
            }
            let diag = Diagnostics::from_mle(&result);
            (result.rho.into_parts().0, diag)
        }
    };
    let layout = problem.layout();
    let mut text = serde_json::to_string(&StateJson::from_matrix(&matrix, layout)).expect("state serializes");
    text.push('\n');
    run.stage("rho.json", text);
    run.stage("diagnostics.json", pretty(&diagnostics));
    if args.grid {
        run.stage("rho_grid.csv", density_grid_csv(&matrix, layout));
    }
    Ok(())
}

pub struct Metrics<'a> {
    pub rho: Option<&'a Path>,
    pub target: Option<&'a Path>,
    pub fringe: Option<&'a Path>,
    pub output: &'a str,
}

pub fn metrics_cmd(args: Metrics, run: &mut Run) -> CliResult<()> {
    if args.rho.is_none() && args.fringe.is_none() {
        return Err(CliError::validation("metrics needs --rho and/or --fringe"));
    }
    if args.target.is_some() && args.rho.is_none() {
        return Err(CliError::validation("--target needs --rho"));
    }
    let mut out = serde_json::Map::new();
    if let Some(path) = args.rho {
        let rho = read_state(path, run)?;
        let target = args.target.map(|t| read_state(t, run)).transpose()?;
        let report = MetricReport::compute(&rho, target.as_ref())?;
        if let serde_json::Value::Object(m) = serde_json::to_value(&report).expect("report serializes") {
            out.extend(m);
        }
    }
    if let Some(path) = args.fringe {
        run.input(path);
        let file = with_path(std::fs::File::open(path).map_err(Into::into), path)?;
        let fringe = with_path(metrics::read_fringe_csv(file), path)?;
        out.insert("visibility".into(), json!(metrics::visibility(&fringe)?));
    }
    for (k, v) in &out {
        println!("{k}: {v}");
    }
    run.stage(args.output, pretty(&out));
    Ok(())
}

pub struct Bell<'a> {
    pub state: Option<&'a Path>,
    pub counts: Option<&'a Path>,
    pub dof: Option<&'a str>,
    pub project: &'a [String],
    pub restrict: Option<&'a str>,
    pub optimize: bool,
    pub settings: Option<&'a Path>,
    pub fringe: bool,
    pub fringe_points: usize,
    pub output: &'a str,
}

fn domain_for(dof: Dof) -> BlochDomain {
    if dof == Dof::EnergyTime {
        BlochDomain::Equator
    } else {
        BlochDomain::Sphere
    }
}

/// `P(a(φ)+, b+)` with `a(φ)` scanning the Bloch equator and `b` fixed at φ = 0.
fn fringe_csv(rho: &DensityOperator, points: usize) -> CliResult<String> {
    let b = LocalAnalyzer::equatorial(0.0);
    let mut rows = Vec::with_capacity(points);
    for k in 0..points {
        let phase = 2.0 * PI * k as f64 / points as f64;
        let a = LocalAnalyzer::equatorial(phase);
        let ket = hyperent::qcore::kron_vec(&a.ket(), &b.ket());
        rows.push((phase, rho.ket_expectation(&ket)));
    }
    let mut buf = Vec::new();
    metrics::write_fringe_csv(&rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
}

pub fn bell(args: Bell, run: &mut Run) -> CliResult<()> {
    let result: serde_json::Value = match (args.state, args.counts) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(CliError::validation("bell needs exactly one of --state or --counts"))
        }
        (None, Some(path)) => {
            if args.optimize || args.settings.is_some() || args.fringe || !args.project.is_empty() {
                return Err(CliError::validation(
                    "--optimize, --settings, --fringe and --project apply to --state only",
                ));
            }
            run.input(path);
            let file = with_path(std::fs::File::open(path).map_err(Into::into), path)?;
            let records = with_path(read_counts_csv(file), path)?;
            let r = chsh_from_counts(&records)?;
            println!("S = {:.6} ± {:.6}", r.s, r.sigma.unwrap_or(0.0));
            serde_json::to_value(&r).expect("result serializes")
        }
        (Some(path), None) => {
            if args.optimize && args.settings.is_some() {
                return Err(CliError::validation("give either --optimize or --settings, not both"));
            }
            let rho = read_state(path, run)?;
            let requested = args.dof.map(parse_dof).transpose()?;
            let dof = pick_dof(&rho, requested)?;
            let projections = parse_projections(args.project)?;
            let qubits = reduce_to_qubits(&rho, dof, &projections, args.restrict)?;
            run.config = json!({
                "dof": dof,
                "project": args.project,
                "restrict": args.restrict,
                "optimize": args.optimize,
            });
            let mut value = if args.optimize {
                let o = optimal_chsh_in(&qubits, domain_for(dof))?;
                println!("S = {:.9} (closed form {:.9})", o.result.s, o.analytic);
                let mut v = serde_json::to_value(&o.result).expect("result serializes");
                v["S_max_analytic"] = json!(o.analytic);
                v
            } else {
                let settings = match args.settings {
                    Some(p) => {
                        run.input(p);
                        let text = with_path(std::fs::read_to_string(p).map_err(Into::into), p)?;
                        serde_json::from_str::<ChshSettings>(&text)
                            .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
                    }
                    None => ChshSettings::canonical(),
                };
                let r: BellResult = chsh_from_state(&qubits, &settings)?;
                println!("S = {:.9}", r.s);
                let mut v = serde_json::to_value(&r).expect("result serializes");
                v["settings"] = serde_json::to_value(&settings).expect("settings serialize");
                v
            };
            value["dof"] = json!(dof);
            if args.fringe {
                if args.fringe_points < 4 {
                    return Err(CliError::validation("--fringe-points must be at least 4"));
                }
                run.stage("fringe.csv", fringe_csv(&qubits, args.fringe_points)?);
            }
            value
        }
    };
    run.stage(args.output, pretty(&result));
    Ok(())
}

pub struct TomographySettings<'a> {
    pub state: Option<&'a Path>,
    pub dofs: Option<&'a str>,
    pub spatial_dim: usize,
    pub method: Method,
}

pub fn settings_tomography(args: TomographySettings, run: &mut Run) -> CliResult<()> {
    let layout = match (args.state, args.dofs) {
        (Some(p), None) => read_state(p, run)?.layout().clone(),
        (None, Some(list)) => {
            let mut per_photon = Vec::new();
            for name in list.split(',') {
                let dof = parse_dof(name.trim())?;
                let dim = match dof {
                    Dof::Spatial => args.spatial_dim,
                    Dof::Generic => return Err(CliError::validation("use --state for generic layouts")),
                    _ => 2,
                };
                per_photon.push((dof, dim));
            }
            per_photon.sort();
            per_photon.dedup();
            SubsystemLayout::symmetric(&per_photon)
        }
        _ => {
            return Err(CliError::validation(
                "settings-gen tomography needs exactly one of --state or --dofs",
            ))
        }
    };
    let set = canonical_set(layout.party_dim(hyperent::qcore::Party::A))?;
    let entries = set.settings(&layout)?;
    let options = BundleOptions {
        layout: LayoutJson::from_layout(&layout),
        method: args.method,
        max_iterations: hyperent::tomography::TomographyOptions::default().max_iterations,
        tolerance: hyperent::tomography::TomographyOptions::default().tolerance,
    };
    println!("{} settings for layout {layout}", entries.len());
    run.config = serde_json::to_value(&options).expect("options serialize");
    let mut text = settings_to_json(&entries);
    text.push('\n');
    run.stage("settings.json", text);
    run.stage("options.json", pretty(&options));
    Ok(())
}

pub struct ChshSettingsGen<'a> {
    pub dof: &'a str,
    pub dim: usize,
    pub settings: Option<&'a Path>,
    pub optimize_from: Option<&'a Path>,
}

pub fn settings_chsh(args: ChshSettingsGen, run: &mut Run) -> CliResult<()> {
    let dof = parse_dof(args.dof)?;
    let settings = match (args.settings, args.optimize_from) {
        (Some(_), Some(_)) => return Err(CliError::validation("give either --settings or --optimize-from")),
        (Some(p), None) => {
            run.input(p);
            let text = with_path(std::fs::read_to_string(p).map_err(Into::into), p)?;
            serde_json::from_str::<ChshSettings>(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
        }
        (None, Some(p)) => {
            let rho = read_state(p, run)?;
            let o = optimal_chsh_in(&rho, domain_for(dof))?;
            o.result.settings.expect("search returns settings")
        }
        (None, None) => ChshSettings::canonical(),
    };
    let entries = settings.entries(dof, args.dim)?;
    run.config = json!({ "dof": dof, "dim": args.dim, "settings": settings });
    let mut text = settings_to_json(&entries);
    text.push('\n');
    println!("{} CHSH settings for {dof}", entries.len());
    run.stage("settings.json", text);
    Ok(())
}
