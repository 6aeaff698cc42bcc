//! Explicit Runge-Kutta time stepping on flat real vectors.
//!
//! Complex systems are integrated as interleaved `re, im` vectors. Output is
//! produced exactly on the requested sample times: the adaptive stepper
//! shortens whichever step would cross a sample so that it lands on it, and
//! the fixed stepper splits every sample interval into equal substeps.
//! Nothing is interpolated, so runs are bitwise reproducible.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{self, MomentState, N_REALS};
use crate::params::{self, SimConfig, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Dormand-Prince 5(4) embedded pair with local extrapolation.
    AdaptiveEmbedded,
    /// Classical fourth-order Runge-Kutta with step `h_init`.
    FixedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub mode: StepMode,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: u64,
}

impl StepperConfig {
    pub fn adaptive(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            mode: StepMode::AdaptiveEmbedded,
            rel_tol,
            abs_tol,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1.0,
            max_steps: 50_000_000,
        }
    }

    pub fn fixed_rk4(h: f64) -> Self {
        Self {
            mode: StepMode::FixedRk4,
            rel_tol: 1.0,
            abs_tol: 1.0,
            h_init: h,
            h_min: h,
            h_max: h,
            max_steps: u64::MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h_min > 0.0
            && self.h_min <= self.h_init
            && self.h_init <= self.h_max
            && self.h_max.is_finite()
            && self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "stepper needs 0 < h_min <= h_init <= h_max, positive tolerances and max_steps; got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    StepUnderflow,
    NonFinite,
    MaxSteps,
    /// Stopped by the sample observer, with its message.
    Observer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Aborted { reason: AbortReason, t: f64 },
}

impl Outcome {
    pub fn is_complete(&self) -> bool {
        matches!(self, Outcome::Completed)
    }
}

/// Bookkeeping for one integration; the samples themselves go to the observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// Sample times actually delivered (a prefix of the grid when aborted).
    pub times: Vec<f64>,
    pub stats: IntegratorStats,
    pub outcome: Outcome,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Config("time grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::Config("time grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Config("time grid must be strictly increasing and finite".into()));
    }
    Ok(())
}

/// Integrates `dy/dt = rhs(t, y)` from `y0` at `grid[0]`, calling
/// `observer(k, t_k, y(t_k))` at every grid point. The observer may stop the
/// run by returning `Break(reason)`.
pub fn integrate_observed<F, O>(
    mut rhs: F,
    y0: &[f64],
    grid: &[f64],
    cfg: &StepperConfig,
    mut observer: O,
) -> Result<Integration>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &[f64]) -> ControlFlow<String>,
{
    cfg.validate()?;
    check_grid(grid)?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state is not finite".into()));
    }
    let mut run = Run {
        times: Vec::with_capacity(grid.len()),
        stats: IntegratorStats::default(),
    };
    if let ControlFlow::Break(msg) = observer(0, grid[0], y0) {
        return Ok(run.finish(Outcome::Aborted {
            reason: AbortReason::Observer(msg),
            t: grid[0],
        }));
    }
    run.times.push(grid[0]);
    let outcome = match cfg.mode {
        StepMode::AdaptiveEmbedded => dopri(&mut rhs, y0, grid, cfg, &mut observer, &mut run),
        StepMode::FixedRk4 => rk4(&mut rhs, y0, grid, cfg, &mut observer, &mut run),
    };
    Ok(run.finish(outcome))
}

/// Like [`integrate_observed`] but keeps every sample.
pub fn integrate<F>(
    rhs: F,
    y0: &[f64],
    grid: &[f64],
    cfg: &StepperConfig,
) -> Result<(Integration, Vec<Vec<f64>>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut samples = Vec::with_capacity(grid.len());
    let integration = integrate_observed(rhs, y0, grid, cfg, |_, _, y| {
        samples.push(y.to_vec());
        ControlFlow::Continue(())
    })?;
    Ok((integration, samples))
}

struct Run {
    times: Vec<f64>,
    stats: IntegratorStats,
}

impl Run {
    fn finish(self, outcome: Outcome) -> Integration {
        Integration {
            times: self.times,
            stats: self.stats,
            outcome,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth- minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn dopri<F, O>(
    rhs: &mut F,
    y0: &[f64],
    grid: &[f64],
    cfg: &StepperConfig,
    observer: &mut O,
    run: &mut Run,
) -> Outcome
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &[f64]) -> ControlFlow<String>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut t = grid[0];
    let mut h = cfg.h_init;
    let mut steps = 0u64;

    rhs(t, &y, &mut k[0]);
    run.stats.rhs_evals += 1;

    for (idx, &target) in grid.iter().enumerate().skip(1) {
        while t < target {
            if steps >= cfg.max_steps {
                return Outcome::Aborted {
                    reason: AbortReason::MaxSteps,
                    t,
                };
            }
            steps += 1;
            let remaining = target - t;
            let (h_try, lands) = if h >= remaining { (remaining, true) } else { (h, false) };

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = y[i] + h_try * acc;
                }
                rhs(t + C[s] * h_try, &stage, &mut k[s]);
                run.stats.rhs_evals += 1;
                if s == 6 {
                    // the last stage is evaluated at the fifth-order solution
                    y_new.copy_from_slice(&stage);
                }
            }

            let mut err = 0.0f64;
            for i in 0..n {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
                let r = (h_try * e).abs() / scale;
                err = if r.is_nan() { f64::INFINITY } else { err.max(r) };
            }

            if err <= 1.0 {
                run.stats.accepted += 1;
                t = if lands { target } else { t + h_try };
                std::mem::swap(&mut y, &mut y_new);
                if y.iter().any(|v| !v.is_finite()) {
                    return Outcome::Aborted {
                        reason: AbortReason::NonFinite,
                        t,
                    };
                }
                k.swap(0, 6);
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                let proposal = h_try * factor;
                h = if lands { h.max(proposal) } else { proposal };
                h = h.min(cfg.h_max);
            } else {
                run.stats.rejected += 1;
                let factor = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                h = h_try * factor;
                if h < cfg.h_min {
                    return Outcome::Aborted {
                        reason: AbortReason::StepUnderflow,
                        t,
                    };
                }
            }
        }
        if let ControlFlow::Break(msg) = observer(idx, t, &y) {
            return Outcome::Aborted {
                reason: AbortReason::Observer(msg),
                t,
            };
        }
        run.times.push(t);
    }
    Outcome::Completed
}

fn rk4<F, O>(
    rhs: &mut F,
    y0: &[f64],
    grid: &[f64],
    cfg: &StepperConfig,
    observer: &mut O,
    run: &mut Run,
) -> Outcome
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &[f64]) -> ControlFlow<String>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut tmp = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut steps = 0u64;

    for idx in 1..grid.len() {
        let (t0, t1) = (grid[idx - 1], grid[idx]);
        let ratio = (t1 - t0) / cfg.h_init;
        let n_sub = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        }
        .max(1.0) as u64;
        let h = (t1 - t0) / n_sub as f64;
        for m in 0..n_sub {
            if steps >= cfg.max_steps {
                return Outcome::Aborted {
                    reason: AbortReason::MaxSteps,
                    t: t0 + m as f64 * h,
                };
            }
            steps += 1;
            let t = t0 + m as f64 * h;
            rhs(t, &y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(t + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            run.stats.accepted += 1;
            run.stats.rhs_evals += 4;
            if y.iter().any(|v| !v.is_finite()) {
                return Outcome::Aborted {
                    reason: AbortReason::NonFinite,
                    t: t + h,
                };
            }
        }
        if let ControlFlow::Break(msg) = observer(idx, t1, &y) {
            return Outcome::Aborted {
                reason: AbortReason::Observer(msg),
                t: t1,
            };
        }
        run.times.push(t1);
    }
    Outcome::Completed
}

/// Run metadata carried alongside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub params: SystemParams,
    pub sim: SimConfig,
    pub stepper: StepperConfig,
    pub stats: IntegratorStats,
    pub outcome: Outcome,
}

/// Moment-equation solution sampled on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MomentState>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.meta.outcome.is_complete()
    }

    pub fn max_conjugacy_defect(&self) -> f64 {
        self.states.iter().map(|s| s.conjugacy_defect()).fold(0.0, f64::max)
    }

    pub fn max_population_imag(&self) -> f64 {
        self.states.iter().map(|s| s.population_imag()).fold(0.0, f64::max)
    }

    /// Smallest membrane stability margin over the samples, taking the
    /// instantaneous photon number (clamped at zero) as `s`.
    pub fn min_stability_margin(&self) -> f64 {
        self.states
            .iter()
            .map(|s| {
                params::stability_margin(&self.meta.params, s.n_a.re.max(0.0))
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn stability_warning(&self) -> bool {
        self.min_stability_margin() <= 0.0
    }
}

/// Stepper used for moment runs configured through [`SimConfig`].
pub fn default_stepper(sim: &SimConfig) -> StepperConfig {
    StepperConfig {
        h_max: sim.t_end,
        h_init: 1e-3f64.min(sim.t_end),
        h_min: 1e-12f64.min(sim.t_end),
        ..StepperConfig::adaptive(sim.rel_tol, sim.abs_tol)
    }
}

/// Integrates the moment equations for `params` under `sim`.
pub fn simulate(params: &SystemParams, sim: &SimConfig) -> Result<Trajectory> {
    simulate_with(params, sim, &default_stepper(sim))
}

pub fn simulate_with(
    params: &SystemParams,
    sim: &SimConfig,
    stepper: &StepperConfig,
) -> Result<Trajectory> {
    params.validate()?;
    sim.validate()?;
    let grid = sim.time_grid();
    let variant = sim.rhs_variant;
    let p = *params;
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        let s = MomentState::from_reals(y).expect("moment vector length");
        dy.copy_from_slice(&moments::rhs(variant, &s, &p).to_reals());
    };
    let y0 = sim.initial_state.state().to_reals();
    let (integration, samples) = integrate(rhs, &y0, &grid, stepper)?;
    debug_assert!(samples.iter().all(|s| s.len() == N_REALS));
    Ok(Trajectory {
        times: integration.times,
        states: samples
            .iter()
            .map(|y| MomentState::from_reals(y).unwrap())
            .collect(),
        meta: TrajectoryMeta {
            params: *params,
            sim: *sim,
            stepper: *stepper,
            stats: integration.stats,
            outcome: integration.outcome,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn decay(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    // dy/dt = i y as interleaved (re, im)
    fn rotate(_: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[1];
        dy[1] = y[0];
    }

    #[test]
    fn exponential_decay() {
        let cfg = StepperConfig::adaptive(1e-10, 1e-10);
        let (run, ys) = integrate(decay, &[1.0], &[0.0, 1.0], &cfg).unwrap();
        assert!(run.outcome.is_complete());
        assert!((ys[1][0] - 0.3678794412).abs() < 1e-8);
        assert_eq!(run.times, vec![0.0, 1.0]);
    }

    #[test]
    fn unit_circle_rotation() {
        let cfg = StepperConfig::adaptive(1e-10, 1e-10);
        let (_, ys) = integrate(rotate, &[1.0, 0.0], &[0.0, 2.0 * PI], &cfg).unwrap();
        let (re, im) = (ys[1][0], ys[1][1]);
        assert!(((re * re + im * im).sqrt() - 1.0).abs() < 1e-8);
        assert!((re - 1.0).abs() < 1e-8 && im.abs() < 1e-8);
    }

    #[test]
    fn fixed_rk4_matches_decay() {
        let cfg = StepperConfig::fixed_rk4(1e-3);
        let grid = params::uniform_grid(1.0, 11);
        let (run, ys) = integrate(decay, &[1.0], &grid, &cfg).unwrap();
        assert_eq!(run.stats.accepted, 1000);
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_land_exactly_on_grid() {
        let grid = params::uniform_grid(3.0, 7);
        let cfg = StepperConfig::adaptive(1e-8, 1e-10);
        let run = integrate_observed(decay, &[1.0], &grid, &cfg, |k, t, _| {
            assert_eq!(t, grid[k]);
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(run.times, grid);
    }

    #[test]
    fn blow_up_is_flagged_with_partial_samples() {
        // y' = y², y(0) = 1 diverges at t = 1
        let blow = |_: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let cfg = StepperConfig::adaptive(1e-8, 1e-8);
        let grid = params::uniform_grid(2.0, 21);
        let (run, ys) = integrate(blow, &[1.0], &grid, &cfg).unwrap();
        match run.outcome {
            Outcome::Aborted { t, ref reason } => {
                assert!(t < 1.0 + 1e-6, "{t}");
                assert!(matches!(reason, AbortReason::StepUnderflow | AbortReason::NonFinite));
            }
            Outcome::Completed => panic!("expected abort"),
        }
        assert_eq!(ys.len(), run.times.len());
        assert!(ys.len() <= 11);
    }

    #[test]
    fn max_steps_is_enforced() {
        let cfg = StepperConfig {
            max_steps: 5,
            ..StepperConfig::adaptive(1e-12, 1e-12)
        };
        let (run, _) = integrate(rotate, &[1.0, 0.0], &[0.0, 100.0], &cfg).unwrap();
        assert!(matches!(
            run.outcome,
            Outcome::Aborted {
                reason: AbortReason::MaxSteps,
                ..
            }
        ));
    }

    #[test]
    fn observer_can_stop_the_run() {
        let cfg = StepperConfig::adaptive(1e-8, 1e-8);
        let grid = params::uniform_grid(1.0, 5);
        let run = integrate_observed(decay, &[1.0], &grid, &cfg, |k, _, _| {
            if k == 2 {
                ControlFlow::Break("enough".into())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(run.times.len(), 2);
        assert!(matches!(run.outcome, Outcome::Aborted { reason: AbortReason::Observer(_), .. }));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = StepperConfig::adaptive(1e-8, 1e-8);
        assert!(integrate(decay, &[1.0], &[0.0], &cfg).is_err());
        assert!(integrate(decay, &[1.0], &[0.5, 1.0], &cfg).is_err());
        assert!(integrate(decay, &[1.0], &[0.0, 1.0, 1.0], &cfg).is_err());
        assert!(integrate(decay, &[f64::NAN], &[0.0, 1.0], &cfg).is_err());
        let bad = StepperConfig { h_min: 1.0, h_init: 0.1, ..cfg };
        assert!(integrate(decay, &[1.0], &[0.0, 1.0], &bad).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_bits() {
        let cfg = StepperConfig::adaptive(1e-9, 1e-12);
        let grid = params::uniform_grid(10.0, 101);
        let (_, a) = integrate(rotate, &[1.0, 0.5], &grid, &cfg).unwrap();
        let (_, b) = integrate(rotate, &[1.0, 0.5], &grid, &cfg).unwrap();
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
