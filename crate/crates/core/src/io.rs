//! CSV tables, JSON sidecars and table comparison.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlations::{self, G2};
use crate::error::{Error, Result};
use crate::integrator::{IntegratorStats, Outcome, StepperConfig, Trajectory};
use crate::lindblad::{ConvergenceReport, Diagnostics, FockSpace, OracleTrajectory};
use crate::moments::{MomentState, Slot};
use crate::params::{RhsVariant, SimConfig, SystemParams};

pub const CSV_HEADER: &str = "t,re_a,im_a,re_ad,im_ad,re_b,im_b,re_bd,im_bd,n_a,n_b,\
re_abd,im_abd,re_adb,im_adb,re_ab,im_ab,re_adbd,im_adbd,re_aa,im_aa,re_adad,im_adad,\
re_bb,im_bb,re_bdbd,im_bdbd,g2_a,g2_b,g2_ab";

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seventeen significant digits, enough to round-trip any double.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_g2(g: G2) -> String {
    g.map(format_f64).unwrap_or_default()
}

fn row_fields(t: f64, s: &MomentState, g2: [G2; 3]) -> Vec<String> {
    let mut out = vec![format_f64(t)];
    for slot in Slot::ALL {
        let z = s.get(slot);
        match slot {
            Slot::Na | Slot::Nb => out.push(format_f64(z.re)),
            _ => {
                out.push(format_f64(z.re));
                out.push(format_f64(z.im));
            }
        }
    }
    out.extend(g2.into_iter().map(format_g2));
    out
}

/// Writes the observables table for samples `(t, moments, [g2_a, g2_b, g2_ab])`.
pub fn write_table<W: Write>(
    mut w: W,
    rows: impl IntoIterator<Item = (f64, MomentState, [G2; 3])>,
) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (t, s, g2) in rows {
        writeln!(w, "{}", row_fields(t, &s, g2).join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_rows(
    traj: &Trajectory,
    eps: f64,
) -> impl Iterator<Item = (f64, MomentState, [G2; 3])> + '_ {
    traj.times.iter().zip(&traj.states).map(move |(&t, s)| {
        let g2 = [
            correlations::g2_a(s, eps),
            correlations::g2_b(s, eps),
            correlations::g2_ab(s, eps),
        ];
        (t, *s, g2)
    })
}

pub fn oracle_rows(o: &OracleTrajectory) -> impl Iterator<Item = (f64, MomentState, [G2; 3])> + '_ {
    o.times
        .iter()
        .zip(&o.states)
        .zip(&o.g2)
        .map(|((&t, s), g)| (t, *s, *g))
}

pub fn trajectory_csv(traj: &Trajectory, eps: f64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_table(&mut buf, trajectory_rows(traj, eps))?;
    Ok(buf)
}

pub fn oracle_csv(o: &OracleTrajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_table(&mut buf, oracle_rows(o))?;
    Ok(buf)
}

/// Parsed CSV table; empty fields are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Config("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>().map(Some).map_err(|e| {
                            Error::Config(format!("row {}: cannot parse `{f}`: {e}", k + 1))
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != header.len() {
                return Err(Error::Config(format!(
                    "row {} has {} fields, header has {}",
                    k + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { abs: 1e-9, rel: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnDeviation {
    pub column: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Rows where exactly one side is undefined.
    pub definedness_mismatches: usize,
    /// Rows outside `max(abs, rel * max(|x|, |y|))`.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub tolerances: Tolerances,
    pub rows: usize,
    pub columns: Vec<ColumnDeviation>,
    pub within_tolerance: bool,
}

/// Grids are considered equal when times agree to this relative precision.
const GRID_MATCH: f64 = 1e-12;

/// Column-wise deviations of `b` from `a`. Schemas and time grids must match.
pub fn compare_tables(a: &Table, b: &Table, tol: Tolerances) -> Result<CompareReport> {
    if a.header != b.header {
        return Err(Error::Config("CSV headers differ".into()));
    }
    let t = a.header.iter().position(|h| h == "t");
    let t = t.ok_or_else(|| Error::Config("CSV has no `t` column".into()))?;
    if a.rows.len() != b.rows.len() {
        return Err(Error::Config(format!(
            "time grids differ: {} vs {} rows",
            a.rows.len(),
            b.rows.len()
        )));
    }
    for (k, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        let (x, y) = (ra[t], rb[t]);
        let same = match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= GRID_MATCH * x.abs().max(y.abs()).max(1.0),
            _ => false,
        };
        if !same {
            return Err(Error::Config(format!("time grids differ at row {}", k + 1)));
        }
    }
    let mut columns = Vec::new();
    for (c, name) in a.header.iter().enumerate() {
        let mut dev = ColumnDeviation {
            column: name.clone(),
            max_abs: 0.0,
            max_rel: 0.0,
            definedness_mismatches: 0,
            violations: 0,
        };
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            match (ra[c], rb[c]) {
                (Some(x), Some(y)) => {
                    let d = (x - y).abs();
                    let scale = x.abs().max(y.abs());
                    let rel = if d == 0.0 { 0.0 } else { d / scale };
                    dev.max_abs = dev.max_abs.max(d);
                    dev.max_rel = dev.max_rel.max(rel);
                    if !(d <= tol.abs.max(tol.rel * scale)) {
                        dev.violations += 1;
                    }
                }
                (None, None) => {}
                _ => {
                    dev.definedness_mismatches += 1;
                    dev.violations += 1;
                }
            }
        }
        columns.push(dev);
    }
    let within_tolerance = columns.iter().all(|c| c.violations == 0);
    Ok(CompareReport {
        tolerances: tol,
        rows: a.rows.len(),
        columns,
        within_tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Closure,
    Oracle,
}

/// Oracle-only sidecar fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleInfo {
    pub space: FockSpace,
    pub diagnostics: Diagnostics,
    pub convergence: Option<ConvergenceReport>,
}

/// Everything needed to reproduce and audit one CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sidecar {
    pub code_version: &'static str,
    pub kind: RunKind,
    pub preset: Option<String>,
    pub params: SystemParams,
    pub sim: SimConfig,
    pub rhs_variant: RhsVariant,
    pub eps: f64,
    pub stepper: StepperConfig,
    pub stats: IntegratorStats,
    pub outcome: Outcome,
    pub stability_warning: bool,
    pub min_stability_margin: Option<f64>,
    pub oracle: Option<OracleInfo>,
}

impl Sidecar {
    pub fn for_trajectory(traj: &Trajectory, eps: f64, preset: Option<&str>) -> Self {
        let margin = traj.min_stability_margin();
        Self {
            code_version: CODE_VERSION,
            kind: RunKind::Closure,
            preset: preset.map(str::to_string),
            params: traj.meta.params,
            sim: traj.meta.sim,
            rhs_variant: traj.meta.sim.rhs_variant,
            eps,
            stepper: traj.meta.stepper,
            stats: traj.meta.stats,
            outcome: traj.meta.outcome.clone(),
            stability_warning: traj.stability_warning(),
            min_stability_margin: margin.is_finite().then_some(margin),
            oracle: None,
        }
    }

    pub fn for_oracle(
        o: &OracleTrajectory,
        eps: f64,
        preset: Option<&str>,
        convergence: Option<ConvergenceReport>,
    ) -> Self {
        Self {
            code_version: CODE_VERSION,
            kind: RunKind::Oracle,
            preset: preset.map(str::to_string),
            params: o.params,
            sim: o.sim,
            rhs_variant: o.sim.rhs_variant,
            eps,
            stepper: o.stepper,
            stats: o.stats,
            outcome: o.outcome.clone(),
            stability_warning: false,
            min_stability_margin: None,
            oracle: Some(OracleInfo {
                space: o.space,
                diagnostics: o.diagnostics,
                convergence,
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The part of a sidecar read back by `--replay`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReplaySpec {
    pub kind: RunKind,
    pub params: SystemParams,
    pub sim: SimConfig,
    pub eps: f64,
    #[serde(default)]
    pub oracle: Option<ReplayOracle>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReplayOracle {
    pub space: FockSpace,
}

impl ReplaySpec {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: not a run sidecar: {e}", path.display())))
    }
}

/// `run.csv` becomes `run.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
