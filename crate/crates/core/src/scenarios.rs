//! Named parameter presets for each figure panel, with the qualitative
//! claims checked against their runs.

use serde::Serialize;

use crate::correlations::{self, ObservableRow};
use crate::error::{Error, Result};
use crate::integrator::{self, Trajectory};
use crate::params::{RhsVariant, SimConfig, SystemParams};

/// Column of the observables table a claim looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    NA,
    NB,
    G2A,
    G2B,
    G2Ab,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::NA => "n_a",
            Column::NB => "n_b",
            Column::G2A => "g2_a",
            Column::G2B => "g2_b",
            Column::G2Ab => "g2_ab",
        }
    }

    fn value(self, row: &ObservableRow) -> Option<f64> {
        match self {
            Column::NA => Some(row.n_a),
            Column::NB => Some(row.n_b),
            Column::G2A => row.g2_a,
            Column::G2B => row.g2_b,
            Column::G2Ab => row.g2_ab,
        }
    }

    fn defined(self, rows: &[ObservableRow]) -> impl Iterator<Item = f64> + '_ {
        rows.iter().filter_map(move |r| self.value(r))
    }
}

/// Machine-checkable qualitative statement about a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Claim {
    /// Peak of `column` stays strictly below the peak of the same column in
    /// the `reference` preset.
    PeakBelowReference {
        column: Column,
        reference: &'static str,
    },
    /// Backward-difference slope of `column` at the last sample is below
    /// `fraction · omega_m · nbar_b` in magnitude.
    Saturates { column: Column, fraction: f64 },
    /// Minimum over defined samples is at least `bound`.
    NeverBelow { column: Column, bound: f64 },
    /// Some defined sample is strictly below `bound`.
    DropsBelow { column: Column, bound: f64 },
}

impl Claim {
    pub fn describe(&self) -> String {
        match self {
            Claim::PeakBelowReference { column, reference } => {
                format!("max {} < max {} of {}", column.name(), column.name(), reference)
            }
            Claim::Saturates { column, fraction } => {
                format!("|d{}/dt| at t_end < {} * omega_m * nbar_b", column.name(), fraction)
            }
            Claim::NeverBelow { column, bound } => format!("min {} >= {}", column.name(), bound),
            Claim::DropsBelow { column, bound } => {
                format!("{} < {} at some defined time", column.name(), bound)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimOutcome {
    pub claim: Claim,
    pub description: String,
    /// The measured quantity the claim is decided on.
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioPreset {
    pub name: &'static str,
    pub params: SystemParams,
    pub sim: SimConfig,
    pub claims: Vec<Claim>,
}

const fn caption(
    delta_c: f64,
    g_opt: f64,
    rabi: f64,
    gamma_a: f64,
    gamma_b: f64,
    nbar_b: f64,
) -> SystemParams {
    SystemParams {
        delta_c,
        omega_m: 1.0,
        g_opt,
        rabi,
        gamma_a,
        gamma_b,
        nbar_a: 0.0,
        nbar_b,
    }
}

/// Caption parameters by panel.
pub const PRESET_PARAMS: [(&str, SystemParams); 19] = [
    ("fig1a", caption(0.5, 1.4, 0.6, 0.01, 0.001, 0.0)),
    ("fig1b", caption(1.0, 1.4, 0.6, 0.01, 0.001, 0.0)),
    ("fig1c", caption(2.0, 1.4, 0.6, 0.01, 0.001, 0.0)),
    ("fig1d", caption(5.0, 1.4, 0.6, 0.01, 0.001, 0.0)),
    ("fig2a", caption(1.0, 1.4, 0.4, 0.01, 0.001, 0.0)),
    ("fig2b", caption(1.0, 1.4, 0.4, 0.1, 0.001, 0.0)),
    ("fig3a", caption(1.0, 1.4, 0.4, 0.1, 0.1, 0.0)),
    ("fig3b", caption(1.0, 1.4, 0.4, 0.1, 0.1, 2.0)),
    ("fig4a", caption(0.0, 1.5, 0.6, 0.01, 0.001, 0.0)),
    ("fig4b", caption(1.3, 1.5, 0.6, 0.01, 0.001, 0.0)),
    ("fig4c", caption(2.5, 1.5, 0.6, 0.01, 0.001, 0.0)),
    ("fig4d", caption(4.0, 1.5, 0.6, 0.01, 0.001, 0.0)),
    ("fig5a", caption(0.5, 0.8, 0.6, 0.01, 0.001, 0.0)),
    ("fig5b", caption(0.5, 1.7, 0.6, 0.01, 0.001, 0.0)),
    ("fig5c", caption(0.5, 3.0, 0.6, 0.01, 0.001, 0.0)),
    ("fig5d", caption(0.5, 5.0, 0.6, 0.01, 0.001, 0.0)),
    ("fig6a", caption(1.0, 1.4, 0.4, 0.01, 0.001, 0.0)),
    ("fig6b", caption(1.0, 1.4, 0.4, 0.1, 0.001, 0.0)),
    ("fig6c", caption(1.0, 1.4, 0.4, 0.1, 0.1, 0.0)),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESET_PARAMS.iter().map(|(n, _)| *n).collect()
}

fn claims_for(name: &str) -> Vec<Claim> {
    match name {
        "fig1d" => vec![Claim::PeakBelowReference {
            column: Column::NA,
            reference: "fig1b",
        }],
        "fig3b" => vec![Claim::Saturates {
            column: Column::NB,
            fraction: 0.01,
        }],
        "fig4d" => vec![Claim::NeverBelow {
            column: Column::G2A,
            bound: 0.95,
        }],
        "fig6b" => vec![Claim::DropsBelow {
            column: Column::G2A,
            bound: 0.5,
        }],
        _ => Vec::new(),
    }
}

pub fn preset(name: &str) -> Result<ScenarioPreset> {
    let (name, params) = PRESET_PARAMS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: preset_names().join(", "),
        })?;
    Ok(ScenarioPreset {
        name,
        params: *params,
        sim: SimConfig::default(),
        claims: claims_for(name),
    })
}

pub fn all_presets() -> Vec<ScenarioPreset> {
    preset_names().into_iter().map(|n| preset(n).unwrap()).collect()
}

/// Decides `claim` from the observables table alone. `reference` holds the
/// table of the preset named by a [`Claim::PeakBelowReference`].
pub fn check_claim(
    claim: &Claim,
    params: &SystemParams,
    rows: &[ObservableRow],
    reference: Option<&[ObservableRow]>,
) -> Result<ClaimOutcome> {
    let peak = |c: Column, rows: &[ObservableRow]| c.defined(rows).fold(f64::NEG_INFINITY, f64::max);
    let (statistic, threshold, passed) = match claim {
        Claim::PeakBelowReference { column, reference: name } => {
            let reference = reference.ok_or_else(|| {
                Error::Config(format!("claim needs the observables of `{name}`"))
            })?;
            let (mine, theirs) = (peak(*column, rows), peak(*column, reference));
            (mine, theirs, mine < theirs)
        }
        Claim::Saturates { column, fraction } => {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| column.value(r).map(|v| (r.t, v)))
                .collect();
            if pts.len() < 2 {
                return Err(Error::Domain("saturation check needs two samples".into()));
            }
            let ((t0, y0), (t1, y1)) = (pts[pts.len() - 2], pts[pts.len() - 1]);
            let slope = ((y1 - y0) / (t1 - t0)).abs();
            let limit = fraction * params.omega_m * params.nbar_b;
            (slope, limit, slope < limit)
        }
        Claim::NeverBelow { column, bound } => {
            let min = column.defined(rows).fold(f64::INFINITY, f64::min);
            (min, *bound, min >= *bound)
        }
        Claim::DropsBelow { column, bound } => {
            let min = column.defined(rows).fold(f64::INFINITY, f64::min);
            (min, *bound, min < *bound)
        }
    };
    Ok(ClaimOutcome {
        claim: claim.clone(),
        description: claim.describe(),
        statistic,
        threshold,
        passed,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub preset: ScenarioPreset,
    pub trajectory: Trajectory,
    pub observables: Vec<ObservableRow>,
    pub claims: Vec<ClaimOutcome>,
}

impl ScenarioRun {
    pub fn claims_pass(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }
}

fn simulate_preset(p: &ScenarioPreset, variant: RhsVariant) -> Result<(Trajectory, Vec<ObservableRow>)> {
    let sim = SimConfig {
        rhs_variant: variant,
        ..p.sim
    };
    let traj = integrator::simulate(&p.params, &sim)?;
    let rows = correlations::observables_series(&traj, correlations::DEFAULT_EPS);
    Ok((traj, rows))
}

/// Integrates a preset and evaluates its claims. A run that aborts early is
/// returned with its partial samples; claims are then judged on those.
pub fn run_preset(name: &str, variant: RhsVariant) -> Result<ScenarioRun> {
    let p = preset(name)?;
    let (trajectory, observables) = simulate_preset(&p, variant)?;
    let mut claims = Vec::new();
    for claim in &p.claims {
        let reference = match claim {
            Claim::PeakBelowReference { reference, .. } => {
                Some(simulate_preset(&preset(reference)?, variant)?.1)
            }
            _ => None,
        };
        claims.push(check_claim(claim, &p.params, &observables, reference.as_deref())?);
    }
    Ok(ScenarioRun {
        preset: p,
        trajectory,
        observables,
        claims,
    })
}

/// One `list-presets` line.
pub fn describe_preset(p: &ScenarioPreset) -> String {
    let q = &p.params;
    format!(
        "{:<6} delta_c={} g_opt={} rabi={} gamma_a={} gamma_b={} nbar_a={} nbar_b={} omega_m={}",
        p.name, q.delta_c, q.g_opt, q.rabi, q.gamma_a, q.gamma_b, q.nbar_a, q.nbar_b, q.omega_m
    )
}
