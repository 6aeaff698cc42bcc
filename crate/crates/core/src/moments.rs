//! Second-order moment state and the closed equations of motion.
//!
//! Two independent constructions of the right-hand side live here:
//! [`closed_rhs`] is a direct transcription of the tabulated closed system,
//! and [`composed_rhs`] evaluates the raw Heisenberg-Langevin moment
//! equations, replacing each third- and fourth-order product on the fly with
//! [`decorrelate_triple`] / [`decorrelate_quad`]. They should agree
//! slot by slot; [`rhs_discrepancy_report`] measures by how much.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::params::{RhsVariant, SystemParams};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Number of complex slots in a [`MomentState`].
pub const N_SLOTS: usize = 14;
/// Length of the interleaved real representation.
pub const N_REALS: usize = 2 * N_SLOTS;

/// Named slot of the moment vector, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    A,
    Ad,
    B,
    Bd,
    Na,
    Nb,
    Abd,
    Adb,
    Ab,
    Adbd,
    Aa,
    Adad,
    Bb,
    Bdbd,
}

impl Slot {
    pub const ALL: [Slot; N_SLOTS] = [
        Slot::A,
        Slot::Ad,
        Slot::B,
        Slot::Bd,
        Slot::Na,
        Slot::Nb,
        Slot::Abd,
        Slot::Adb,
        Slot::Ab,
        Slot::Adbd,
        Slot::Aa,
        Slot::Adad,
        Slot::Bb,
        Slot::Bdbd,
    ];

    /// Short column-name stem (`a`, `ad`, `n_a`, ...).
    pub fn name(self) -> &'static str {
        match self {
            Slot::A => "a",
            Slot::Ad => "ad",
            Slot::B => "b",
            Slot::Bd => "bd",
            Slot::Na => "n_a",
            Slot::Nb => "n_b",
            Slot::Abd => "abd",
            Slot::Adb => "adb",
            Slot::Ab => "ab",
            Slot::Adbd => "adbd",
            Slot::Aa => "aa",
            Slot::Adad => "adad",
            Slot::Bb => "bb",
            Slot::Bdbd => "bdbd",
        }
    }

    /// The expectation value this slot holds, in operator notation.
    pub fn symbol(self) -> &'static str {
        match self {
            Slot::A => "<a>",
            Slot::Ad => "<a†>",
            Slot::B => "<b>",
            Slot::Bd => "<b†>",
            Slot::Na => "<a†a>",
            Slot::Nb => "<b†b>",
            Slot::Abd => "<ab†>",
            Slot::Adb => "<a†b>",
            Slot::Ab => "<ab>",
            Slot::Adbd => "<a†b†>",
            Slot::Aa => "<a²>",
            Slot::Adad => "<a†²>",
            Slot::Bb => "<b²>",
            Slot::Bdbd => "<b†²>",
        }
    }

    /// Slot holding the adjoint expectation value.
    pub fn partner(self) -> Slot {
        match self {
            Slot::A => Slot::Ad,
            Slot::Ad => Slot::A,
            Slot::B => Slot::Bd,
            Slot::Bd => Slot::B,
            Slot::Na => Slot::Na,
            Slot::Nb => Slot::Nb,
            Slot::Abd => Slot::Adb,
            Slot::Adb => Slot::Abd,
            Slot::Ab => Slot::Adbd,
            Slot::Adbd => Slot::Ab,
            Slot::Aa => Slot::Adad,
            Slot::Adad => Slot::Aa,
            Slot::Bb => Slot::Bdbd,
            Slot::Bdbd => Slot::Bb,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// The fourteen first- and second-order expectation values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentState {
    pub a: Complex64,
    pub ad: Complex64,
    pub b: Complex64,
    pub bd: Complex64,
    pub n_a: Complex64,
    pub n_b: Complex64,
    pub abd: Complex64,
    pub adb: Complex64,
    pub ab: Complex64,
    pub adbd: Complex64,
    pub aa: Complex64,
    pub adad: Complex64,
    pub bb: Complex64,
    pub bdbd: Complex64,
}

/// Time derivative of every slot of a [`MomentState`].
pub type MomentDerivative = MomentState;

impl MomentState {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slots(s: [Complex64; N_SLOTS]) -> Self {
        Self {
            a: s[0],
            ad: s[1],
            b: s[2],
            bd: s[3],
            n_a: s[4],
            n_b: s[5],
            abd: s[6],
            adb: s[7],
            ab: s[8],
            adbd: s[9],
            aa: s[10],
            adad: s[11],
            bb: s[12],
            bdbd: s[13],
        }
    }

    pub fn to_slots(&self) -> [Complex64; N_SLOTS] {
        [
            self.a, self.ad, self.b, self.bd, self.n_a, self.n_b, self.abd, self.adb, self.ab,
            self.adbd, self.aa, self.adad, self.bb, self.bdbd,
        ]
    }

    pub fn get(&self, slot: Slot) -> Complex64 {
        self.to_slots()[slot.index()]
    }

    pub fn set(&mut self, slot: Slot, value: Complex64) {
        let mut s = self.to_slots();
        s[slot.index()] = value;
        *self = Self::from_slots(s);
    }

    /// Interleaved `re, im` pairs in slot order.
    pub fn to_reals(&self) -> [f64; N_REALS] {
        let mut out = [0.0; N_REALS];
        for (k, z) in self.to_slots().iter().enumerate() {
            out[2 * k] = z.re;
            out[2 * k + 1] = z.im;
        }
        out
    }

    /// Inverse of [`to_reals`](Self::to_reals); `None` unless exactly 28 values.
    pub fn from_reals(reals: &[f64]) -> Option<Self> {
        if reals.len() != N_REALS {
            return None;
        }
        let mut s = [Complex64::default(); N_SLOTS];
        for (k, z) in s.iter_mut().enumerate() {
            *z = Complex64::new(reals[2 * k], reals[2 * k + 1]);
        }
        Some(Self::from_slots(s))
    }

    /// Swaps every conjugate pair and conjugates all slots. A state built
    /// from a physical density matrix is a fixed point.
    pub fn conj_flip(&self) -> Self {
        let s = self.to_slots();
        let mut out = [Complex64::default(); N_SLOTS];
        for slot in Slot::ALL {
            out[slot.index()] = s[slot.partner().index()].conj();
        }
        Self::from_slots(out)
    }

    /// Largest `|x_partner - conj(x)|` over the six conjugate pairs.
    pub fn conjugacy_defect(&self) -> f64 {
        [
            (self.a, self.ad),
            (self.b, self.bd),
            (self.abd, self.adb),
            (self.ab, self.adbd),
            (self.aa, self.adad),
            (self.bb, self.bdbd),
        ]
        .iter()
        .map(|(x, y)| (y - x.conj()).norm())
        .fold(0.0, f64::max)
    }

    /// Largest imaginary part of the two populations.
    pub fn population_imag(&self) -> f64 {
        self.n_a.im.abs().max(self.n_b.im.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.to_slots().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        let (x, y) = (self.to_slots(), other.to_slots());
        let mut out = [Complex64::default(); N_SLOTS];
        for k in 0..N_SLOTS {
            out[k] = f(x[k], y[k]);
        }
        Self::from_slots(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, k: Complex64) -> Self {
        self.zip_with(self, |x, _| x * k)
    }
}

impl Serialize for MomentState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_reals().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MomentState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let reals = <[f64; N_REALS]>::deserialize(deserializer)?;
        Ok(Self::from_reals(&reals).expect("fixed-size array"))
    }
}

/// Third-order decorrelation `<ABC> ≈ <A><BC> + <AB><C> + <AC><B>`.
pub fn decorrelate_triple(
    s_a: Complex64,
    s_b: Complex64,
    s_c: Complex64,
    p_ab: Complex64,
    p_ac: Complex64,
    p_bc: Complex64,
) -> Complex64 {
    s_a * p_bc + p_ab * s_c + p_ac * s_b
}

/// Fourth-order decorrelation `<ABCD> ≈ <AB><CD> + <AC><BD> + <AD><BC>`.
pub fn decorrelate_quad(
    p_ab: Complex64,
    p_cd: Complex64,
    p_ac: Complex64,
    p_bd: Complex64,
    p_ad: Complex64,
    p_bc: Complex64,
) -> Complex64 {
    p_ab * p_cd + p_ac * p_bd + p_ad * p_bc
}

/// Closed right-hand side, transcribed term by term from the tabulated
/// decorrelated system. Grouping follows the printed braces.
pub fn closed_rhs(s: &MomentState, p: &SystemParams) -> MomentDerivative {
    let MomentState {
        a,
        ad,
        b,
        bd,
        n_a,
        n_b,
        abd,
        adb,
        ab,
        adbd,
        aa,
        adad,
        bb,
        bdbd,
    } = *s;
    let (dc, wm, g, rabi) = (p.delta_c, p.omega_m, p.g_opt, p.rabi);
    let (ga, gb) = (p.gamma_a, p.gamma_b);
    let gab = 0.5 * (ga + gb);
    let one = Complex64::new(1.0, 0.0);

    let d_a = -I * dc * a - I * rabi - 0.5 * ga * a
        + (-I * g)
            * ((a * bdbd + 2.0 * abd * bd)
                + (a * bb + 2.0 * ab * b)
                + 2.0 * (a * n_b + abd * b + ab * bd)
                + a);

    let d_ad = I * dc * ad + I * rabi - 0.5 * ga * ad
        + (I * g)
            * ((ad * bdbd + 2.0 * adbd * bd)
                + (ad * bb + 2.0 * adb * b)
                + 2.0 * (ad * n_b + adbd * b + adb * bd)
                + ad);

    let d_b = -I * wm * b - 0.5 * gb * b
        + (-2.0 * I * g) * (ad * (ab + abd) + n_a * (b + bd) + a * (adb + adbd));

    let d_bd = I * wm * bd - 0.5 * gb * bd
        + (2.0 * I * g) * (ad * (ab + abd) + n_a * (b + bd) + a * (adb + adbd));

    let d_na = -I * rabi * (ad - a) - ga * n_a + ga * p.nbar_a;

    let d_nb = -gb * n_b
        + gb * p.nbar_b
        + (-2.0 * I * g) * ((n_a * bdbd + 2.0 * adbd * abd) - (n_a * bb + 2.0 * adb * ab));

    let d_abd = I * (wm - dc) * abd - I * rabi * bd - gab * abd
        + (I * g)
            * (2.0 * (2.0 * n_a * ab + adb * aa)
                - (abd * bb + 2.0 * ab * n_b)
                + 2.0 * ((2.0 * n_a * abd + adbd * aa) - (2.0 * n_b * abd + ab * bdbd))
                - abd * (3.0 * bdbd + one));

    let d_adb = I * (dc - wm) * adb + I * rabi * b - gab * adb
        + (I * g)
            * ((adb * bdbd + 2.0 * adbd * n_b)
                - 2.0 * (adad * abd + 2.0 * n_a * adbd)
                + 2.0 * ((adbd * bb + 2.0 * adb * n_b) - (adad * ab + 2.0 * adb * n_a))
                + adb * (3.0 * bb + one));

    let d_ab = -I * (dc + wm) * ab - I * rabi * b - gab * ab
        + (-I * g) * (2.0 * abd + 3.0 * ab * (bb + one))
        + (-I * g) * (ab * bdbd + 2.0 * abd * n_b)
        + (-2.0 * I * g)
            * ((2.0 * n_a * abd + adbd * aa) + (abd * bb + 2.0 * ab * n_b) + (2.0 * n_a * ab + adb * aa));

    let d_adbd = I * (dc + wm) * adbd + I * rabi * bd - gab * adbd
        + (I * g) * (2.0 * adb + 3.0 * adbd * (bdbd + one))
        + (I * g) * (adbd * bb + 2.0 * adb * n_b)
        + (2.0 * I * g)
            * ((adad * ab + 2.0 * n_a * adb)
                + (bdbd * adb + 2.0 * adbd * n_b)
                + (2.0 * n_a * adbd + abd * adad));

    let d_aa = -2.0 * I * dc * aa - 2.0 * I * rabi * a - ga * aa
        + (-2.0 * I * g) * aa
        + (-2.0 * I * g)
            * (aa * (bdbd + bb + 2.0 * n_b) + 2.0 * (abd * abd + ab * ab + 2.0 * ab * abd));

    let d_adad = 2.0 * I * dc * adad + 2.0 * I * rabi * ad - ga * adad
        + (2.0 * I * g) * adad
        + (2.0 * I * g)
            * (adad * (bdbd + bb + 2.0 * n_b)
                + 2.0 * (adbd * adbd + adb * adb + 2.0 * adbd * adb));

    let d_bb = -2.0 * I * wm * bb - gb * bb
        + (-2.0 * I * g) * n_a
        + (-4.0 * I * g) * (n_a * (bb + n_b) + ab * (adbd + 2.0 * adb) + adb * abd);

    let d_bdbd = 2.0 * I * wm * bdbd - gb * bdbd
        + (2.0 * I * g) * n_a
        + (4.0 * I * g) * (n_a * (bdbd + n_b) + adbd * (ab + 2.0 * abd) + adb * abd);

    MomentState {
        a: d_a,
        ad: d_ad,
        b: d_b,
        bd: d_bd,
        n_a: d_na,
        n_b: d_nb,
        abd: d_abd,
        adb: d_adb,
        ab: d_ab,
        adbd: d_adbd,
        aa: d_aa,
        adad: d_adad,
        bb: d_bb,
        bdbd: d_bdbd,
    }
}

/// Single-mode ladder operators appearing in operator words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    A,
    Ad,
    B,
    Bd,
}

use Op::{Ad, Bd, A as Aop, B as Bop};

/// Evaluates first- and second-order words on a state and decorrelates
/// longer ones, assigning factors to A, B, C, D left to right.
struct Words<'a>(&'a MomentState);

impl Words<'_> {
    fn one(&self, x: Op) -> Complex64 {
        match x {
            Aop => self.0.a,
            Ad => self.0.ad,
            Bop => self.0.b,
            Bd => self.0.bd,
        }
    }

    /// `<xy>`; cross-mode operators commute and same-mode reversed pairs
    /// follow from `[a, a†] = 1`.
    fn two(&self, x: Op, y: Op) -> Complex64 {
        let s = self.0;
        let one = Complex64::new(1.0, 0.0);
        match (x, y) {
            (Aop, Aop) => s.aa,
            (Ad, Ad) => s.adad,
            (Bop, Bop) => s.bb,
            (Bd, Bd) => s.bdbd,
            (Ad, Aop) => s.n_a,
            (Aop, Ad) => s.n_a + one,
            (Bd, Bop) => s.n_b,
            (Bop, Bd) => s.n_b + one,
            (Aop, Bop) | (Bop, Aop) => s.ab,
            (Aop, Bd) | (Bd, Aop) => s.abd,
            (Ad, Bop) | (Bop, Ad) => s.adb,
            (Ad, Bd) | (Bd, Ad) => s.adbd,
        }
    }

    fn three(&self, x: Op, y: Op, z: Op) -> Complex64 {
        decorrelate_triple(
            self.one(x),
            self.one(y),
            self.one(z),
            self.two(x, y),
            self.two(x, z),
            self.two(y, z),
        )
    }

    fn four(&self, w: Op, x: Op, y: Op, z: Op) -> Complex64 {
        decorrelate_quad(
            self.two(w, x),
            self.two(y, z),
            self.two(w, y),
            self.two(x, z),
            self.two(w, z),
            self.two(x, y),
        )
    }
}

/// Right-hand side built from the unclosed moment equations with every
/// higher-order word decorrelated mechanically.
pub fn composed_rhs(s: &MomentState, p: &SystemParams) -> MomentDerivative {
    let w = Words(s);
    let (dc, wm, g, rabi) = (p.delta_c, p.omega_m, p.g_opt, p.rabi);
    let (ga, gb) = (p.gamma_a, p.gamma_b);
    let gab = 0.5 * (ga + gb);

    let d_a = -I * dc * s.a - I * rabi - 0.5 * ga * s.a
        + (-I * g)
            * (w.three(Aop, Bd, Bd) + w.three(Aop, Bop, Bop) + 2.0 * w.three(Aop, Bd, Bop) + s.a);

    let d_ad = I * dc * s.ad + I * rabi - 0.5 * ga * s.ad
        + (I * g) * (w.three(Ad, Bd, Bd) + w.three(Ad, Bop, Bop) + 2.0 * w.three(Ad, Bd, Bop) + s.ad);

    let d_b = -I * wm * s.b - 0.5 * gb * s.b
        + (-2.0 * I * g) * (w.three(Ad, Aop, Bop) + w.three(Ad, Aop, Bd));

    let d_bd = I * wm * s.bd - 0.5 * gb * s.bd
        + (2.0 * I * g) * (w.three(Ad, Aop, Bd) + w.three(Ad, Aop, Bop));

    let d_na = -I * rabi * (s.ad - s.a) - ga * s.n_a + ga * p.nbar_a;

    let d_nb = -gb * s.n_b
        + gb * p.nbar_b
        + (-2.0 * I * g) * (w.four(Ad, Aop, Bd, Bd) - w.four(Ad, Aop, Bop, Bop));

    let d_abd = I * (wm - dc) * s.abd - I * rabi * s.bd - gab * s.abd
        + (I * g)
            * (2.0 * w.four(Ad, Aop, Aop, Bop)
                - w.four(Aop, Bd, Bop, Bop)
                - w.four(Aop, Bd, Bd, Bd)
                + 2.0 * (w.four(Ad, Aop, Aop, Bd) - w.four(Aop, Bd, Bd, Bop))
                - s.abd);

    let d_adb = I * (dc - wm) * s.adb + I * rabi * s.b - gab * s.adb
        + (I * g)
            * (w.four(Ad, Bd, Bd, Bop) + w.four(Ad, Bop, Bop, Bop)
                - 2.0 * w.four(Ad, Ad, Aop, Bd)
                + 2.0 * (w.four(Ad, Bd, Bop, Bop) - w.four(Ad, Ad, Aop, Bop))
                + s.adb);

    let d_ab = -I * (dc + wm) * s.ab - I * rabi * s.b - gab * s.ab
        + (-I * g)
            * (2.0 * s.abd
                + w.four(Aop, Bd, Bd, Bop)
                + 2.0 * w.four(Ad, Aop, Aop, Bd)
                + w.four(Aop, Bop, Bop, Bop)
                + 2.0 * (s.ab + w.four(Aop, Bd, Bop, Bop) + w.four(Ad, Aop, Aop, Bop))
                + s.ab);

    let d_adbd = I * (dc + wm) * s.adbd + I * rabi * s.bd - gab * s.adbd
        + (I * g)
            * (2.0 * s.adb
                + w.four(Ad, Bd, Bop, Bop)
                + 2.0 * w.four(Ad, Ad, Aop, Bop)
                + w.four(Ad, Bd, Bd, Bd)
                + 2.0 * (s.adbd + w.four(Ad, Bd, Bd, Bop) + w.four(Ad, Ad, Aop, Bd))
                + s.adbd);

    let d_aa = -2.0 * I * dc * s.aa - 2.0 * I * rabi * s.a - ga * s.aa
        + (-2.0 * I * g)
            * (w.four(Aop, Aop, Bd, Bd)
                + w.four(Aop, Aop, Bop, Bop)
                + 2.0 * w.four(Aop, Aop, Bd, Bop)
                + s.aa);

    let d_adad = 2.0 * I * dc * s.adad + 2.0 * I * rabi * s.ad - ga * s.adad
        + (2.0 * I * g)
            * (w.four(Ad, Ad, Bd, Bd) + w.four(Ad, Ad, Bop, Bop) + 2.0 * w.four(Ad, Ad, Bd, Bop) + s.adad);

    let d_bb = -2.0 * I * wm * s.bb - gb * s.bb
        + (-2.0 * I * g)
            * (s.n_a + 2.0 * w.four(Ad, Aop, Bd, Bop) + 2.0 * w.four(Ad, Aop, Bop, Bop));

    let d_bdbd = 2.0 * I * wm * s.bdbd - gb * s.bdbd
        + (2.0 * I * g) * (s.n_a + 2.0 * w.four(Ad, Aop, Bd, Bop) + 2.0 * w.four(Ad, Aop, Bd, Bd));

    MomentState {
        a: d_a,
        ad: d_ad,
        b: d_b,
        bd: d_bd,
        n_a: d_na,
        n_b: d_nb,
        abd: d_abd,
        adb: d_adb,
        ab: d_ab,
        adbd: d_adbd,
        aa: d_aa,
        adad: d_adad,
        bb: d_bb,
        bdbd: d_bdbd,
    }
}

pub fn rhs(variant: RhsVariant, s: &MomentState, p: &SystemParams) -> MomentDerivative {
    match variant {
        RhsVariant::Closed => closed_rhs(s, p),
        RhsVariant::Composed => composed_rhs(s, p),
    }
}

/// Equations whose two constructions are known to differ, with the
/// symbolic difference `closed - composed`. Every equation currently agrees,
/// so the table is empty; a mismatch that is not listed here fails the
/// equivalence check.
pub const KNOWN_DIFFERENCES: &[(Slot, &str)] = &[];

/// Relative agreement required for an equation to count as matching.
pub const MATCH_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquationDeviation {
    pub equation: &'static str,
    /// `max |closed - composed| / max(|closed|, |composed|, 1)`.
    pub max_rel_deviation: f64,
    pub matches: bool,
    /// Symbolic difference, when the equation is a known mismatch.
    pub documented_difference: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub seed: u64,
    pub n_random: usize,
    pub equations: Vec<EquationDeviation>,
}

impl DiscrepancyReport {
    /// Equations that disagree and are not documented.
    pub fn unflagged(&self) -> Vec<&EquationDeviation> {
        self.equations
            .iter()
            .filter(|e| !e.matches && e.documented_difference.is_none())
            .collect()
    }
}

impl fmt::Display for DiscrepancyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "closed vs composed, {} random states, seed {}", self.n_random, self.seed)?;
        for e in &self.equations {
            write!(
                f,
                "  d{:<8} max rel dev {:>10.3e}  {}",
                e.equation,
                e.max_rel_deviation,
                if e.matches { "match" } else { "MISMATCH" }
            )?;
            if let Some(d) = e.documented_difference {
                write!(f, "  [{d}]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Draws a state with every slot uniform in the complex disc of radius 2
/// and real non-negative populations in `[0, 2)`.
pub fn random_state<R: Rng>(rng: &mut R) -> MomentState {
    let mut s = [Complex64::default(); N_SLOTS];
    for z in s.iter_mut() {
        let r = 2.0 * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        *z = Complex64::from_polar(r, theta);
    }
    s[Slot::Na.index()] = Complex64::new(2.0 * rng.gen::<f64>(), 0.0);
    s[Slot::Nb.index()] = Complex64::new(2.0 * rng.gen::<f64>(), 0.0);
    MomentState::from_slots(s)
}

/// Compares [`closed_rhs`] against [`composed_rhs`] on `n_random` seeded
/// random states, one row per equation.
pub fn rhs_discrepancy_report(
    params: &SystemParams,
    n_random: usize,
    seed: u64,
) -> Result<DiscrepancyReport> {
    if n_random == 0 {
        return Err(Error::Domain("n_random must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; N_SLOTS];
    for _ in 0..n_random {
        let s = random_state(&mut rng);
        let c = closed_rhs(&s, params).to_slots();
        let p = composed_rhs(&s, params).to_slots();
        for k in 0..N_SLOTS {
            let scale = c[k].norm().max(p[k].norm()).max(1.0);
            let dev = (c[k] - p[k]).norm() / scale;
            worst[k] = if dev.is_nan() { f64::INFINITY } else { worst[k].max(dev) };
        }
    }
    let equations = Slot::ALL
        .iter()
        .map(|&slot| EquationDeviation {
            equation: slot.symbol(),
            max_rel_deviation: worst[slot.index()],
            matches: worst[slot.index()] <= MATCH_TOLERANCE,
            documented_difference: KNOWN_DIFFERENCES
                .iter()
                .find(|(s, _)| *s == slot)
                .map(|(_, d)| *d),
        })
        .collect();
    Ok(DiscrepancyReport {
        seed,
        n_random,
        equations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fig1b() -> SystemParams {
        SystemParams {
            delta_c: 1.0,
            omega_m: 1.0,
            g_opt: 1.4,
            rabi: 0.6,
            gamma_a: 0.01,
            gamma_b: 0.001,
            nbar_a: 0.0,
            nbar_b: 2.0,
        }
    }

    #[test]
    fn triple_examples() {
        let z = Complex64::default();
        let one = c(1.0, 0.0);
        assert_eq!(decorrelate_triple(one, z, z, z, z, c(5.0, 0.0)), c(5.0, 0.0));
        assert_eq!(decorrelate_triple(one, one, one, one, one, one), c(3.0, 0.0));
        assert_eq!(decorrelate_triple(z, z, z, z, z, z), z);
    }

    #[test]
    fn quad_examples() {
        let z = Complex64::default();
        let r = |x: f64| c(x, 0.0);
        assert_eq!(decorrelate_quad(r(1.), r(2.), r(3.), r(4.), r(5.), r(6.)), r(44.0));
        assert_eq!(decorrelate_quad(z, z, z, z, z, z), z);
        assert_eq!(decorrelate_quad(r(1.), r(1.), z, z, z, z), r(1.0));
    }

    #[test]
    fn vacuum_derivative_has_only_drive_and_noise() {
        let p = fig1b();
        for d in [closed_rhs(&MomentState::zero(), &p), composed_rhs(&MomentState::zero(), &p)] {
            assert_eq!(d.a, c(0.0, -0.6));
            assert_eq!(d.ad, c(0.0, 0.6));
            assert_eq!(d.n_a, c(0.0, 0.0));
            assert!((d.n_b - c(0.002, 0.0)).norm() < 1e-18);
            for slot in Slot::ALL {
                if ![Slot::A, Slot::Ad, Slot::Nb].contains(&slot) {
                    assert_eq!(d.get(slot).norm(), 0.0, "{slot}");
                }
            }
        }
    }

    #[test]
    fn free_rotation_without_coupling_drive_or_damping() {
        let p = SystemParams {
            delta_c: 0.7,
            omega_m: 1.3,
            g_opt: 0.0,
            rabi: 0.0,
            gamma_a: 0.0,
            gamma_b: 0.0,
            nbar_a: 0.0,
            nbar_b: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&mut rng);
        for d in [closed_rhs(&s, &p), composed_rhs(&s, &p)] {
            assert!((d.a - (-I * 0.7 * s.a)).norm() < 1e-15);
            assert!((d.b - (-I * 1.3 * s.b)).norm() < 1e-15);
        }
    }

    #[test]
    fn composed_population_equation_has_no_coupling() {
        let p = SystemParams {
            g_opt: 0.0,
            nbar_a: 0.3,
            ..fig1b()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mut rng);
        let d = composed_rhs(&s, &p);
        let expected = -I * p.rabi * (s.ad - s.a) - p.gamma_a * s.n_a + p.gamma_a * p.nbar_a;
        assert_eq!(d.n_a, expected);
    }

    #[test]
    fn decoupled_report_is_exactly_zero() {
        let p = SystemParams {
            g_opt: 0.0,
            ..fig1b()
        };
        for seed in [0, 1, 77] {
            let r = rhs_discrepancy_report(&p, 200, seed).unwrap();
            assert!(r.equations.iter().all(|e| e.max_rel_deviation == 0.0));
        }
    }

    #[test]
    fn report_is_deterministic_and_rejects_empty_sample() {
        let p = fig1b();
        let r1 = rhs_discrepancy_report(&p, 50, 1).unwrap();
        let r2 = rhs_discrepancy_report(&p, 50, 1).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.equations.len(), 14);
        assert!(rhs_discrepancy_report(&p, 0, 1).is_err());
    }

    #[test]
    fn zero_is_fixed_point_without_drive_or_noise() {
        let p = SystemParams {
            rabi: 0.0,
            nbar_a: 0.0,
            nbar_b: 0.0,
            ..fig1b()
        };
        assert_eq!(closed_rhs(&MomentState::zero(), &p), MomentState::zero());
        assert_eq!(composed_rhs(&MomentState::zero(), &p), MomentState::zero());
    }

    #[test]
    fn reals_round_trip_and_json_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng);
        assert_eq!(MomentState::from_reals(&s.to_reals()), Some(s));
        assert!(MomentState::from_reals(&[0.0; 27]).is_none());
        let json = serde_json::to_value(s).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 28);
        let back: MomentState = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);
    }

    fn arb_complex() -> impl Strategy<Value = Complex64> {
        (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(re, im)| Complex64::new(re, im))
    }

    fn arb_state() -> impl Strategy<Value = MomentState> {
        proptest::collection::vec(arb_complex(), N_SLOTS)
            .prop_map(|v| MomentState::from_slots(v.try_into().unwrap()))
    }

    fn arb_params() -> impl Strategy<Value = SystemParams> {
        (-3.0f64..3.0, -3.0f64..3.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5, 0.0f64..3.0).prop_map(
            |(dc, g, rabi, ga, gb, nb)| SystemParams {
                delta_c: dc,
                omega_m: 1.0,
                g_opt: g,
                rabi,
                gamma_a: ga,
                gamma_b: gb,
                nbar_a: 0.5 * nb,
                nbar_b: nb,
            },
        )
    }

    proptest! {
        #[test]
        fn conjugation_symmetry(s in arb_state(), p in arb_params()) {
            for f in [closed_rhs, composed_rhs] {
                let lhs = f(&s, &p).conj_flip();
                let rhs = f(&s.conj_flip(), &p);
                for k in 0..N_SLOTS {
                    let (x, y) = (lhs.to_slots()[k], rhs.to_slots()[k]);
                    prop_assert!((x - y).norm() <= 1e-12 * (1.0 + x.norm()), "slot {k}: {x} vs {y}");
                }
            }
        }

        #[test]
        fn linear_without_coupling(s1 in arb_state(), s2 in arb_state(), p in arb_params()) {
            let p = SystemParams { g_opt: 0.0, ..p };
            let zero = MomentState::zero();
            for f in [closed_rhs, composed_rhs] {
                let lhs = f(&s1.add(&s2), &p);
                let rhs = f(&s1, &p).add(&f(&s2, &p)).sub(&f(&zero, &p));
                prop_assert!(lhs.sub(&rhs).to_slots().iter().all(|z| z.norm() < 1e-12));
            }
        }

        #[test]
        fn superposition_fails_with_coupling(s1 in arb_state(), s2 in arb_state(), p in arb_params()) {
            prop_assume!(p.g_opt.abs() > 0.1);
            let zero = MomentState::zero();
            let lhs = closed_rhs(&s1.add(&s2), &p);
            let rhs = closed_rhs(&s1, &p).add(&closed_rhs(&s2, &p)).sub(&closed_rhs(&zero, &p));
            let gap = lhs.sub(&rhs).to_slots().iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assume!(gap.is_finite());
            // a generic pair of states exposes the quadratic terms
            prop_assert!(gap > 1e-9);
        }

        #[test]
        fn decorrelation_is_multilinear(
            v in proptest::collection::vec((-8i32..8, -8i32..8), 6),
            x in (-8i32..8, -8i32..8),
            idx in 0usize..6,
            k in -4i32..4,
        ) {
            // small integers and powers of two keep every product exact
            let z = |(re, im): (i32, i32)| Complex64::new(re as f64, im as f64);
            let base: Vec<Complex64> = v.into_iter().map(z).collect();
            let t = |u: &[Complex64]| decorrelate_triple(u[0], u[1], u[2], u[3], u[4], u[5]);
            let q = |u: &[Complex64]| decorrelate_quad(u[0], u[1], u[2], u[3], u[4], u[5]);
            let with = |val: Complex64| {
                let mut u = base.clone();
                u[idx] = val;
                u
            };
            let (y0, y1) = (base[idx], z(x));
            let zero = Complex64::default();
            for f in [&t as &dyn Fn(&[Complex64]) -> Complex64, &q] {
                prop_assert_eq!(
                    f(&with(y0 + y1)),
                    f(&with(y0)) + f(&with(y1)) - f(&with(zero))
                );
            }
            let lambda = Complex64::new(2f64.powi(k), 0.0);
            let scaled: Vec<_> = base.iter().map(|w| w * lambda).collect();
            prop_assert_eq!(t(&scaled), t(&base) * lambda * lambda);
            prop_assert_eq!(q(&scaled), q(&base) * lambda * lambda);
        }
    }
}
