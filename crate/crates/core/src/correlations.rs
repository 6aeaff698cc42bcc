//! Equal-time second-order correlation functions.
//!
//! The moment-based estimators use the decorrelated fourth-order numerators,
//! so they are only as good as the closure. Exact values computed from a
//! density matrix live in [`crate::lindblad`].

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::moments::MomentState;

/// Populations below this are treated as zero and g² is left undefined.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Tie band around 1 used by [`classify`].
pub const DEFAULT_TIE: f64 = 1e-6;

/// A g² value, or `None` where the normalizing population vanishes.
pub type G2 = Option<f64>;

/// `(2 <a†a>² + <a†²><a²>) / <a†a>²`, unreduced.
pub(crate) fn g2_a_complex(s: &MomentState) -> Complex64 {
    (2.0 * s.n_a * s.n_a + s.adad * s.aa) / (s.n_a * s.n_a)
}

pub(crate) fn g2_b_complex(s: &MomentState) -> Complex64 {
    (2.0 * s.n_b * s.n_b + s.bdbd * s.bb) / (s.n_b * s.n_b)
}

/// `(<a†b><b†a> + <b†b><a†a> + <a†b†><ba>) / (<b†b><a†a>)`; the modes
/// commute, so `<b†a>` is the `<ab†>` slot and `<ba>` the `<ab>` slot.
pub(crate) fn g2_ab_complex(s: &MomentState) -> Complex64 {
    (s.adb * s.abd + s.n_b * s.n_a + s.adbd * s.ab) / (s.n_b * s.n_a)
}

/// Cavity autocorrelation from the moment closure.
pub fn g2_a(s: &MomentState, eps: f64) -> G2 {
    (s.n_a.re >= eps).then(|| g2_a_complex(s).re)
}

/// Membrane autocorrelation from the moment closure.
pub fn g2_b(s: &MomentState, eps: f64) -> G2 {
    (s.n_b.re >= eps).then(|| g2_b_complex(s).re)
}

/// Photon-phonon cross-correlation from the moment closure. Undefined when
/// either population is below `eps`.
pub fn g2_ab(s: &MomentState, eps: f64) -> G2 {
    let defined = s.n_a.re >= eps && s.n_b.re >= eps && s.n_a.re * s.n_b.re >= eps * eps;
    defined.then(|| g2_ab_complex(s).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonStatistics {
    SubPoissonian,
    Poissonian,
    SuperPoissonian,
}

/// Sorts a g² value into sub-Poissonian, Poissonian (within `tie` of 1) or
/// super-Poissonian.
pub fn classify(g2: f64, tie: f64) -> Result<PhotonStatistics> {
    if g2.is_nan() {
        return Err(Error::Domain("cannot classify NaN g²".into()));
    }
    Ok(if g2 < 1.0 - tie {
        PhotonStatistics::SubPoissonian
    } else if g2 > 1.0 + tie {
        PhotonStatistics::SuperPoissonian
    } else {
        PhotonStatistics::Poissonian
    })
}

/// One output row: populations and the three correlation functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservableRow {
    pub t: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub g2_a: G2,
    pub g2_b: G2,
    pub g2_ab: G2,
}

impl ObservableRow {
    pub fn from_state(t: f64, s: &MomentState, eps: f64) -> Self {
        Self {
            t,
            n_a: s.n_a.re,
            n_b: s.n_b.re,
            g2_a: g2_a(s, eps),
            g2_b: g2_b(s, eps),
            g2_ab: g2_ab(s, eps),
        }
    }
}

pub fn observables_series(traj: &Trajectory, eps: f64) -> Vec<ObservableRow> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| ObservableRow::from_state(t, s, eps))
        .collect()
}
