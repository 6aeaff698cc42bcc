//! Physical and numerical run parameters.
//!
//! All frequencies and rates are expressed in units of the mechanical
//! frequency `omega_m`, which is kept as an explicit field (default 1).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentState;

/// Rates and strengths of the driven, damped, quadratically coupled cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity detuning from the drive.
    pub delta_c: f64,
    /// Mechanical frequency.
    pub omega_m: f64,
    /// Quadratic optomechanical coupling; may be negative.
    pub g_opt: f64,
    /// Drive Rabi frequency.
    pub rabi: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    /// Thermal photon number of the cavity bath.
    pub nbar_a: f64,
    /// Thermal phonon number of the membrane bath.
    pub nbar_b: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            delta_c: 1.0,
            omega_m: 1.0,
            g_opt: 1.4,
            rabi: 0.6,
            gamma_a: 0.01,
            gamma_b: 0.001,
            nbar_a: 0.0,
            nbar_b: 0.0,
        }
    }
}

/// Field names in declaration order; also the config-file keys.
pub const PARAM_FIELDS: [&str; 8] = [
    "delta_c", "omega_m", "g_opt", "rabi", "gamma_a", "gamma_b", "nbar_a", "nbar_b",
];

impl SystemParams {
    pub fn get(&self, field: &str) -> Option<f64> {
        Some(match field {
            "delta_c" => self.delta_c,
            "omega_m" => self.omega_m,
            "g_opt" => self.g_opt,
            "rabi" => self.rabi,
            "gamma_a" => self.gamma_a,
            "gamma_b" => self.gamma_b,
            "nbar_a" => self.nbar_a,
            "nbar_b" => self.nbar_b,
            _ => return None,
        })
    }

    pub fn field_mut(&mut self, field: &str) -> Option<&mut f64> {
        Some(match field {
            "delta_c" => &mut self.delta_c,
            "omega_m" => &mut self.omega_m,
            "g_opt" => &mut self.g_opt,
            "rabi" => &mut self.rabi,
            "gamma_a" => &mut self.gamma_a,
            "gamma_b" => &mut self.gamma_b,
            "nbar_a" => &mut self.nbar_a,
            "nbar_b" => &mut self.nbar_b,
            _ => return None,
        })
    }

    /// Returns a copy with one named field replaced.
    pub fn with_field(mut self, field: &str, value: f64) -> Result<Self> {
        let slot = self
            .field_mut(field)
            .ok_or_else(|| Error::Config(format!("unknown parameter field `{field}`")))?;
        *slot = value;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }
}

/// A single broken invariant, e.g. `gamma_a ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (got {})", self.rule, self.value)
    }
}

/// Every invariant violation of `params`; empty iff the parameters are valid.
pub fn validate(params: &SystemParams) -> Vec<Violation> {
    let mut out = Vec::new();
    for field in PARAM_FIELDS {
        let value = params.get(field).unwrap();
        if !value.is_finite() {
            out.push(Violation {
                field,
                rule: finite_rule(field),
                value,
            });
        }
    }
    let mut check = |ok: bool, field: &'static str, rule: &'static str, value: f64| {
        if value.is_finite() && !ok {
            out.push(Violation { field, rule, value });
        }
    };
    check(params.omega_m > 0.0, "omega_m", "omega_m > 0", params.omega_m);
    check(params.gamma_a >= 0.0, "gamma_a", "gamma_a ≥ 0", params.gamma_a);
    check(params.gamma_b >= 0.0, "gamma_b", "gamma_b ≥ 0", params.gamma_b);
    check(params.nbar_a >= 0.0, "nbar_a", "nbar_a ≥ 0", params.nbar_a);
    check(params.nbar_b >= 0.0, "nbar_b", "nbar_b ≥ 0", params.nbar_b);
    out
}

fn finite_rule(field: &str) -> &'static str {
    match field {
        "delta_c" => "delta_c finite",
        "omega_m" => "omega_m finite",
        "g_opt" => "g_opt finite",
        "rabi" => "rabi finite",
        "gamma_a" => "gamma_a finite",
        "gamma_b" => "gamma_b finite",
        "nbar_a" => "nbar_a finite",
        _ => "nbar_b finite",
    }
}

/// Membrane stability margin `omega_m + 4 s g_opt` for `s` intracavity
/// photons. The membrane is stable iff the margin is positive.
pub fn stability_margin(params: &SystemParams, photons: f64) -> Result<f64> {
    if !(photons >= 0.0) {
        return Err(Error::Domain(format!(
            "photon number must be non-negative, got {photons}"
        )));
    }
    Ok(params.omega_m + 4.0 * photons * params.g_opt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsVariant {
    /// The closed second-order system as tabulated.
    #[default]
    Closed,
    /// Raw Heisenberg-Langevin equations with every higher moment decorrelated on the fly.
    Composed,
}

impl std::str::FromStr for RhsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "closed" => Ok(RhsVariant::Closed),
            "composed" => Ok(RhsVariant::Composed),
            other => Err(Error::Config(format!(
                "rhs_variant must be `closed` or `composed`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for RhsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RhsVariant::Closed => "closed",
            RhsVariant::Composed => "composed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Vacuum,
    Custom(MomentState),
}

impl InitialState {
    pub fn state(&self) -> MomentState {
        match self {
            InitialState::Vacuum => MomentState::zero(),
            InitialState::Custom(s) => *s,
        }
    }
}

impl std::str::FromStr for InitialState {
    type Err = Error;

    /// `vacuum`, or 28 comma-separated reals (interleaved re/im in slot order).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "vacuum" {
            return Ok(InitialState::Vacuum);
        }
        let reals = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("initial_state: {e}")))?;
        let state = MomentState::from_reals(&reals).ok_or_else(|| {
            Error::Config(format!(
                "initial_state needs `vacuum` or 28 reals, got {} values",
                reals.len()
            ))
        })?;
        Ok(InitialState::Custom(state))
    }
}

/// Time grid and integrator settings for one moment-equation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub n_samples: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub rhs_variant: RhsVariant,
    pub initial_state: InitialState,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 50.0,
            n_samples: 2001,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            rhs_variant: RhsVariant::Closed,
            initial_state: InitialState::Vacuum,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut msgs = Vec::new();
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            msgs.push(format!("t_end > 0 (got {})", self.t_end));
        }
        if self.n_samples < 2 {
            msgs.push(format!("n_samples ≥ 2 (got {})", self.n_samples));
        }
        if !(self.rel_tol > 0.0) {
            msgs.push(format!("rel_tol > 0 (got {})", self.rel_tol));
        }
        if !(self.abs_tol > 0.0) {
            msgs.push(format!("abs_tol > 0 (got {})", self.abs_tol));
        }
        if msgs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(msgs.join("; ")))
        }
    }

    /// Uniform sample grid on `[0, t_end]`.
    pub fn time_grid(&self) -> Vec<f64> {
        uniform_grid(self.t_end, self.n_samples)
    }
}

pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|k| t_end * (k as f64) / last).collect()
}

/// Physical plus simulation settings, as merged from defaults, a config
/// file and command-line overrides.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: SystemParams,
    pub sim: SimConfig,
}

impl RunConfig {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
        };
        if let Some(slot) = self.params.field_mut(key) {
            *slot = num()?;
            return Ok(());
        }
        match key {
            "t_end" => self.sim.t_end = num()?,
            "n_samples" => {
                self.sim.n_samples = value.trim().parse().map_err(|e| {
                    Error::Config(format!("n_samples: cannot parse `{value}`: {e}"))
                })?
            }
            "rel_tol" => self.sim.rel_tol = num()?,
            "abs_tol" => self.sim.abs_tol = num()?,
            "rhs_variant" => self.sim.rhs_variant = value.parse()?,
            "initial_state" => self.sim.initial_state = value.parse()?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_config_text(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate()
    }
}

/// Splits a plain-text config into `(key, value)` pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}
