//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::correlations::DEFAULT_EPS;
use crate::error::{Error, Result};
use crate::integrator::{self, Trajectory};
use crate::io::{self, Sidecar, Table, Tolerances};
use crate::lindblad::{self, FockSpace};
use crate::params::{RunConfig, SystemParams, PARAM_FIELDS};
use crate::scenarios;

#[derive(Debug, Parser)]
#[command(name = "optomech", version, about = "Moment-closure and master-equation runs for a quadratically coupled optomechanical cavity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the closed moment equations.
    Simulate(SimulateArgs),
    /// Evolve the truncated master equation.
    Oracle(OracleArgs),
    /// Compare two observables tables column by column.
    Compare(CompareArgs),
    /// Run one simulation per value of a parameter.
    Sweep(SweepArgs),
    /// Run a named preset and check its claims.
    Preset(PresetArgs),
    /// Print the available presets.
    ListPresets,
}

/// Parameter and numerics overrides; the highest-precedence layer.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, allow_hyphen_values = true)]
    pub delta_c: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega_m: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub g_opt: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub rabi: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_a: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub nbar_a: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub nbar_b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_end: Option<String>,
    #[arg(long)]
    pub n_samples: Option<String>,
    #[arg(long)]
    pub rel_tol: Option<String>,
    #[arg(long)]
    pub abs_tol: Option<String>,
    /// `closed` or `composed`.
    #[arg(long)]
    pub rhs_variant: Option<String>,
    /// `vacuum` or 28 comma-separated reals.
    #[arg(long, allow_hyphen_values = true)]
    pub initial_state: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("delta_c", &self.delta_c),
            ("omega_m", &self.omega_m),
            ("g_opt", &self.g_opt),
            ("rabi", &self.rabi),
            ("gamma_a", &self.gamma_a),
            ("gamma_b", &self.gamma_b),
            ("nbar_a", &self.nbar_a),
            ("nbar_b", &self.nbar_b),
            ("t_end", &self.t_end),
            ("n_samples", &self.n_samples),
            ("rel_tol", &self.rel_tol),
            ("abs_tol", &self.abs_tol),
            ("rhs_variant", &self.rhs_variant),
            ("initial_state", &self.initial_state),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

/// Layers: built-in default < preset or replayed sidecar < config file < flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Start from a named preset.
    #[arg(long, conflicts_with = "replay")]
    pub preset: Option<String>,
    /// `key = value` file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the settings recorded in a run sidecar.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Population floor below which g² is left undefined.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub eps: f64,
    pub preset: Option<String>,
    pub space: Option<FockSpace>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let mut run = RunConfig::default();
        let mut eps = DEFAULT_EPS;
        let mut space = None;
        if let Some(name) = &self.preset {
            let p = scenarios::preset(name)?;
            run.params = p.params;
            run.sim = p.sim;
        }
        if let Some(path) = &self.replay {
            let spec = io::ReplaySpec::read(path)?;
            run.params = spec.params;
            run.sim = spec.sim;
            eps = spec.eps;
            space = spec.oracle.map(|o| o.space);
        }
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            run.apply_config_text(&text)?;
        }
        for (key, value) in self.overrides.pairs() {
            run.set(key, value)?;
        }
        if let Some(e) = self.eps {
            eps = e;
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        run.validate()?;
        Ok(Resolved {
            run,
            eps,
            preset: self.preset.clone(),
            space,
        })
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// CSV destination; standard output when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Sidecar destination; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

impl OutputArgs {
    fn emit(&self, csv: &[u8], sidecar: &Sidecar) -> Result<()> {
        match &self.out {
            Some(path) => io::write_file(path, csv)?,
            None => std::io::stdout().write_all(csv)?,
        }
        let side = self
            .sidecar
            .clone()
            .or_else(|| self.out.as_deref().map(io::sidecar_path));
        if let Some(path) = side {
            io::write_file(&path, sidecar.to_json()?.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub n_cut_a: Option<usize>,
    #[arg(long)]
    pub n_cut_b: Option<usize>,
    /// Skip the rerun at raised cutoffs.
    #[arg(long)]
    pub no_convergence: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    #[arg(long, default_value_t = Tolerances::default().abs)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = Tolerances::default().rel)]
    pub rel_tol: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Parameter to vary.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    pub name: String,
    /// `closed` or `composed`.
    #[arg(long, default_value = "closed")]
    pub rhs_variant: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn stderr_line(msg: &str) {
    let _ = writeln!(std::io::stderr(), "{msg}");
}

/// Fails with a numerical error when the run stopped early; the partial
/// output has already been written by then.
fn check_outcome(outcome: &integrator::Outcome) -> Result<()> {
    match outcome {
        integrator::Outcome::Completed => Ok(()),
        integrator::Outcome::Aborted { reason, t } => Err(Error::Numerical(format!(
            "integration aborted at t = {t}: {reason:?}"
        ))),
    }
}

fn warn_stability(traj: &Trajectory) {
    if traj.stability_warning() {
        stderr_line(&format!(
            "warning: membrane stability margin reached {:.3e}",
            traj.min_stability_margin()
        ));
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let r = args.config.resolve()?;
    let traj = integrator::simulate(&r.run.params, &r.run.sim)?;
    warn_stability(&traj);
    let sidecar = Sidecar::for_trajectory(&traj, r.eps, r.preset.as_deref());
    args.output.emit(&io::trajectory_csv(&traj, r.eps)?, &sidecar)?;
    check_outcome(&traj.meta.outcome)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let r = args.config.resolve()?;
    let base = r.space.unwrap_or_default();
    let space = FockSpace {
        n_cut_a: args.n_cut_a.unwrap_or(base.n_cut_a),
        n_cut_b: args.n_cut_b.unwrap_or(base.n_cut_b),
    };
    space.validate()?;
    let run = lindblad::run_oracle(&r.run.params, &r.run.sim, space, r.eps)?;
    let convergence = if args.no_convergence || !run.is_complete() {
        None
    } else {
        let report = lindblad::convergence_report(&run, r.eps)?;
        if report.under_resolved {
            stderr_line(&format!(
                "warning: under-resolved; raising cutoffs by {} changes <a†a>(t_end) by {:.3e}",
                lindblad::CUTOFF_BUMP,
                report.delta
            ));
        }
        Some(report)
    };
    let sidecar = Sidecar::for_oracle(&run, r.eps, r.preset.as_deref(), convergence);
    args.output.emit(&io::oracle_csv(&run)?, &sidecar)?;
    check_outcome(&run.outcome)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let a = Table::read(&args.run_a)?;
    let b = Table::read(&args.run_b)?;
    let tol = Tolerances {
        abs: args.abs_tol,
        rel: args.rel_tol,
    };
    let report = io::compare_tables(&a, &b, tol)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "column,max_abs,max_rel,violations")?;
    for c in &report.columns {
        writeln!(
            out,
            "{},{},{},{}",
            c.column,
            io::format_f64(c.max_abs),
            io::format_f64(c.max_rel),
            c.violations
        )?;
    }
    if let Some(path) = &args.report {
        io::write_file(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    if report.within_tolerance {
        Ok(())
    } else {
        let bad: Vec<_> = report
            .columns
            .iter()
            .filter(|c| c.violations > 0)
            .map(|c| c.column.as_str())
            .collect();
        Err(Error::Comparison(format!("outside tolerance in {}", bad.join(", "))))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub csv: String,
    pub sidecar: String,
    pub completed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepIndex {
    pub param: String,
    pub code_version: &'static str,
    pub entries: Vec<SweepEntry>,
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("sweep value `{s}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// Runs every sweep point and writes `<param>_<k>.csv` with its sidecar,
/// then `index.json`.
pub fn run_sweep(
    base: &Resolved,
    param: &str,
    values: &[f64],
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<SweepIndex> {
    if !PARAM_FIELDS.contains(&param) {
        return Err(Error::Config(format!(
            "cannot sweep `{param}`; choose one of {}",
            PARAM_FIELDS.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let points: Vec<SystemParams> = values
        .iter()
        .map(|&v| base.run.params.with_field(param, v))
        .collect::<Result<_>>()?;
    fs::create_dir_all(out_dir)?;
    let run_point = |(k, params): (usize, &SystemParams)| -> Result<SweepEntry> {
        let traj = integrator::simulate(params, &base.run.sim)?;
        let csv = format!("{param}_{k}.csv");
        let json = format!("{param}_{k}.json");
        io::write_file(&out_dir.join(&csv), &io::trajectory_csv(&traj, base.eps)?)?;
        let sidecar = Sidecar::for_trajectory(&traj, base.eps, base.preset.as_deref());
        io::write_file(&out_dir.join(&json), sidecar.to_json()?.as_bytes())?;
        Ok(SweepEntry {
            value: values[k],
            csv,
            sidecar: json,
            completed: traj.is_complete(),
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(run_point)
            .collect::<Result<Vec<_>>>()
    })?;
    let index = SweepIndex {
        param: param.to_string(),
        code_version: io::CODE_VERSION,
        entries,
    };
    io::write_file(
        &out_dir.join("index.json"),
        serde_json::to_string_pretty(&index)?.as_bytes(),
    )?;
    Ok(index)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let values = parse_values(&args.values)?;
    let index = run_sweep(&base, &args.param, &values, &args.out_dir, args.jobs)?;
    let failed: Vec<String> = index
        .entries
        .iter()
        .filter(|e| !e.completed)
        .map(|e| e.csv.clone())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("aborted runs: {}", failed.join(", "))))
    }
}

pub fn cmd_preset(args: &PresetArgs) -> Result<()> {
    let variant = args.rhs_variant.parse()?;
    let run = scenarios::run_preset(&args.name, variant)?;
    warn_stability(&run.trajectory);
    let sidecar = Sidecar::for_trajectory(&run.trajectory, DEFAULT_EPS, Some(&args.name));
    args.output
        .emit(&io::trajectory_csv(&run.trajectory, DEFAULT_EPS)?, &sidecar)?;
    for c in &run.claims {
        stderr_line(&format!(
            "{} {}: {} (measured {}, threshold {})",
            if c.passed { "PASS" } else { "FAIL" },
            args.name,
            c.description,
            c.statistic,
            c.threshold
        ));
    }
    check_outcome(&run.trajectory.meta.outcome)?;
    if run.claims_pass() {
        Ok(())
    } else {
        Err(Error::Comparison(format!("{} claims not met", args.name)))
    }
}

pub fn cmd_list_presets() -> Result<()> {
    let mut out = std::io::stdout().lock();
    for p in scenarios::all_presets() {
        writeln!(out, "{}", scenarios::describe_preset(&p))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Preset(a) => cmd_preset(a),
        Command::ListPresets => cmd_list_presets(),
    }
}

/// Parses `args` and runs; returns the process exit code. Usage errors map
/// to the configuration exit code rather than clap's default.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            stderr_line(&format!("error: {e}"));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: &[&str]) -> Result<Resolved> {
        let mut full = vec!["optomech", "simulate"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Simulate(a) => a.config.resolve(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_preset() {
        let r = resolve(&["--preset", "fig3b", "--g-opt", "0.2", "--t-end", "5"]).unwrap();
        assert_eq!(r.run.params.g_opt, 0.2);
        assert_eq!(r.run.params.nbar_b, 2.0);
        assert_eq!(r.run.sim.t_end, 5.0);
    }

    #[test]
    fn config_file_sits_between_preset_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# test\ng_opt = 0.7\nrabi = 0.2\n").unwrap();
        let p = path.to_str().unwrap();
        let r = resolve(&["--preset", "fig1a", "--config", p, "--rabi", "0.3"]).unwrap();
        assert_eq!(r.run.params.delta_c, 0.5);
        assert_eq!(r.run.params.g_opt, 0.7);
        assert_eq!(r.run.params.rabi, 0.3);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let e = resolve(&["--t-end", "0"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = resolve(&["--gamma-a", "-1"]).unwrap_err();
        assert!(e.to_string().contains("gamma_a"));
        assert!(resolve(&["--preset", "nope"]).is_err());
    }

    #[test]
    fn sweep_values() {
        assert_eq!(parse_values("0.8, 1.7,3").unwrap(), vec![0.8, 1.7, 3.0]);
        assert!(parse_values("").is_err());
        assert!(parse_values("1,x").is_err());
    }

    #[test]
    fn sweep_rejects_unknown_field() {
        let base = resolve(&[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(run_sweep(&base, "t_end", &[1.0], dir.path(), None).is_err());
        assert!(run_sweep(&base, "g_opt", &[], dir.path(), None).is_err());
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(main_with_args(["optomech", "simulate", "--bogus"]), 1);
        assert_eq!(main_with_args(["optomech", "oracle", "--n-cut-a", "1", "--t-end", "1"]), 1);
    }
}
