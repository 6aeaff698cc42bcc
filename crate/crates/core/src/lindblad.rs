//! Thermal master-equation reference in a truncated Fock space.
//!
//! Operators are stored sparse; the density matrix is dense, row-major in the
//! product basis `|n_a> ⊗ |n_b>` (index `n_a * n_cut_b + n_b`). It is evolved
//! as a flat vector through the shared integrator.

use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlations::{ObservableRow, G2};
use crate::error::{Error, Result};
use crate::integrator::{self, AbortReason, IntegratorStats, Outcome, StepperConfig};
use crate::moments::{MomentState, Slot};
use crate::params::{InitialState, SimConfig, SystemParams};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Trace drift beyond which an evolution is aborted.
pub const TRACE_ABORT: f64 = 1e-6;

/// Allowed change of `<a†a>(t_end)` when both cutoffs are raised by 4.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;

/// Cutoff increment used by the convergence check.
pub const CUTOFF_BUMP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    pub n_cut_a: usize,
    pub n_cut_b: usize,
}

impl Default for FockSpace {
    fn default() -> Self {
        Self {
            n_cut_a: 10,
            n_cut_b: 14,
        }
    }
}

impl FockSpace {
    pub fn new(n_cut_a: usize, n_cut_b: usize) -> Result<Self> {
        let space = Self { n_cut_a, n_cut_b };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cut_a < 2 || self.n_cut_b < 2 {
            return Err(Error::Config(format!(
                "Fock cutoffs must be at least 2, got {}x{}",
                self.n_cut_a, self.n_cut_b
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n_cut_a * self.n_cut_b
    }

    pub fn index(&self, n_a: usize, n_b: usize) -> usize {
        n_a * self.n_cut_b + n_b
    }

    pub fn bumped(&self, by: usize) -> Self {
        Self {
            n_cut_a: self.n_cut_a + by,
            n_cut_b: self.n_cut_b + by,
        }
    }
}

/// Square complex matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix from `(row, col, value)` entries. Duplicates
    /// are summed and exact zeros dropped.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, Complex64)>) -> Self {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            assert!(i < n && j < n, "entry ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }.pruned()
    }

    fn pruned(self) -> Self {
        let mut out = Vec::with_capacity(self.vals.len());
        for (i, j, v) in self.iter() {
            if v != ZERO {
                out.push((i, j, v));
            }
        }
        if out.len() == self.vals.len() {
            return self;
        }
        Self::from_triplets(self.n, out)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, ONE)).collect())
    }

    /// Single-mode annihilation operator with `<k-1|a|k> = √k`.
    pub fn annihilation(n: usize) -> Self {
        Self::from_triplets(
            n,
            (1..n).map(|k| (k - 1, k, Complex64::new((k as f64).sqrt(), 0.0))).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&k| self.cols[k] == j)
            .map_or(ZERO, |k| self.vals[k])
    }

    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut d = vec![ZERO; self.n * self.n];
        for (i, j, v) in self.iter() {
            d[i * self.n + j] = v;
        }
        d
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.n, self.iter().map(|(i, j, v)| (j, i, v.conj())).collect())
    }

    pub fn scale(&self, k: Complex64) -> Self {
        Self::from_triplets(self.n, self.iter().map(|(i, j, v)| (i, j, k * v)).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_triplets(self.n, self.iter().chain(other.iter()).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = Vec::new();
        for (i, k, v) in self.iter() {
            for p in other.row_ptr[k]..other.row_ptr[k + 1] {
                out.push((i, other.cols[p], v * other.vals[p]));
            }
        }
        Self::from_triplets(self.n, out)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let m = other.n;
        let mut out = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, v) in self.iter() {
            for (k, l, w) in other.iter() {
                out.push((i * m + k, j * m + l, v * w));
            }
        }
        Self::from_triplets(self.n * m, out)
    }

    /// Largest `|M - M†|` entry.
    pub fn hermiticity_defect(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// `Tr(rho · self)` for a dense row-major `rho`.
    pub fn expectation(&self, rho: &[Complex64]) -> Complex64 {
        self.iter().map(|(i, j, v)| v * rho[j * self.n + i]).sum()
    }

    /// `out = self · rho`.
    fn mul_dense(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        out.fill(ZERO);
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.vals[k];
                let src = &rho[self.cols[k] * n..(self.cols[k] + 1) * n];
                for (o, r) in row.iter_mut().zip(src) {
                    *o += v * r;
                }
            }
        }
    }

    /// `out += y · self†`.
    fn add_mul_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                let v = self.vals[k].conj();
                let c = self.cols[k];
                for i in 0..n {
                    out[i * n + j] += y[i * n + c] * v;
                }
            }
        }
    }
}

/// Ladder operators, number operators and the Hamiltonian on one Fock space.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub space: FockSpace,
    pub a: CsrMatrix,
    pub ad: CsrMatrix,
    pub b: CsrMatrix,
    pub bd: CsrMatrix,
    pub na: CsrMatrix,
    pub nb: CsrMatrix,
    /// `b†² + b² + 2b†b + 1`, the normal-ordered displacement square.
    pub x2: CsrMatrix,
    pub h: CsrMatrix,
    moments: Vec<(Slot, CsrMatrix)>,
    g2_numerators: [CsrMatrix; 3],
}

pub fn build_operators(space: FockSpace, params: &SystemParams) -> Result<OperatorSet> {
    space.validate()?;
    let (ia, ib) = (
        CsrMatrix::identity(space.n_cut_a),
        CsrMatrix::identity(space.n_cut_b),
    );
    let a = CsrMatrix::annihilation(space.n_cut_a).kron(&ib);
    let b = ia.kron(&CsrMatrix::annihilation(space.n_cut_b));
    let (ad, bd) = (a.adjoint(), b.adjoint());
    let na = ad.matmul(&a);
    let nb = bd.matmul(&b);
    let id = CsrMatrix::identity(space.dim());
    let x2 = bd
        .matmul(&bd)
        .add(&b.matmul(&b))
        .add(&nb.scale(Complex64::new(2.0, 0.0)))
        .add(&id);
    let re = |x: f64| Complex64::new(x, 0.0);
    let h = na
        .scale(re(params.delta_c))
        .add(&nb.scale(re(params.omega_m)))
        .add(&na.matmul(&x2).scale(re(params.g_opt)))
        .add(&ad.add(&a).scale(re(params.rabi)));
    let moments = Slot::ALL
        .iter()
        .map(|&slot| {
            let m = match slot {
                Slot::A => a.clone(),
                Slot::Ad => ad.clone(),
                Slot::B => b.clone(),
                Slot::Bd => bd.clone(),
                Slot::Na => na.clone(),
                Slot::Nb => nb.clone(),
                Slot::Abd => a.matmul(&bd),
                Slot::Adb => ad.matmul(&b),
                Slot::Ab => a.matmul(&b),
                Slot::Adbd => ad.matmul(&bd),
                Slot::Aa => a.matmul(&a),
                Slot::Adad => ad.matmul(&ad),
                Slot::Bb => b.matmul(&b),
                Slot::Bdbd => bd.matmul(&bd),
            };
            (slot, m)
        })
        .collect();
    let g2_numerators = [
        ad.matmul(&ad).matmul(&a).matmul(&a),
        bd.matmul(&bd).matmul(&b).matmul(&b),
        ad.matmul(&bd).matmul(&b).matmul(&a),
    ];
    Ok(OperatorSet {
        space,
        a,
        ad,
        b,
        bd,
        na,
        nb,
        x2,
        h,
        moments,
        g2_numerators,
    })
}

/// Dense density matrix on a [`FockSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub space: FockSpace,
    pub data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_data(space: FockSpace, data: Vec<Complex64>) -> Result<Self> {
        space.validate()?;
        let d = space.dim();
        if data.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: data.len(),
            });
        }
        Ok(Self { space, data })
    }

    pub fn fock(space: FockSpace, n_a: usize, n_b: usize) -> Result<Self> {
        space.validate()?;
        if n_a >= space.n_cut_a || n_b >= space.n_cut_b {
            return Err(Error::Domain(format!("Fock state |{n_a},{n_b}> outside cutoffs")));
        }
        let d = space.dim();
        let mut data = vec![ZERO; d * d];
        let k = space.index(n_a, n_b);
        data[k * d + k] = ONE;
        Ok(Self { space, data })
    }

    pub fn vacuum(space: FockSpace) -> Result<Self> {
        Self::fock(space, 0, 0)
    }

    /// `|psi><psi|` for a normalized ket.
    pub fn from_ket(space: FockSpace, psi: &[Complex64]) -> Result<Self> {
        space.validate()?;
        let d = space.dim();
        if psi.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: psi.len(),
            });
        }
        let mut data = vec![ZERO; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = psi[i] * psi[j].conj();
            }
        }
        Ok(Self { space, data })
    }

    /// Diagonal product state with the given single-mode populations.
    pub fn product_diagonal(space: FockSpace, p_a: &[f64], p_b: &[f64]) -> Result<Self> {
        space.validate()?;
        if p_a.len() != space.n_cut_a {
            return Err(Error::DimensionMismatch {
                expected: space.n_cut_a,
                got: p_a.len(),
            });
        }
        if p_b.len() != space.n_cut_b {
            return Err(Error::DimensionMismatch {
                expected: space.n_cut_b,
                got: p_b.len(),
            });
        }
        let d = space.dim();
        let mut data = vec![ZERO; d * d];
        for (i, pa) in p_a.iter().enumerate() {
            for (j, pb) in p_b.iter().enumerate() {
                let k = space.index(i, j);
                data[k * d + k] = Complex64::new(pa * pb, 0.0);
            }
        }
        Ok(Self { space, data })
    }

    /// Cavity vacuum with a thermal membrane, renormalized after truncation.
    pub fn thermal_b(space: FockSpace, nbar: f64) -> Result<Self> {
        let mut p_a = vec![0.0; space.n_cut_a];
        p_a[0] = 1.0;
        Self::product_diagonal(space, &p_a, &thermal_populations(space.n_cut_b, nbar))
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn trace(&self) -> Complex64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i]).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.data, self.dim())
    }

    pub fn min_diagonal(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i].re).fold(f64::INFINITY, f64::min)
    }
}

/// Geometric populations `n̄^k / (n̄+1)^(k+1)` truncated to `n` levels and
/// renormalized.
pub fn thermal_populations(n: usize, nbar: f64) -> Vec<f64> {
    let q = nbar / (nbar + 1.0);
    let raw: Vec<f64> = (0..n).map(|k| q.powi(k as i32) / (nbar + 1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn hermiticity_defect(data: &[Complex64], d: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((data[i * d + j] - data[j * d + i].conj()).norm());
        }
    }
    worst
}

/// Precomputed generator: non-Hermitian effective Hamiltonian plus jump
/// operators.
struct Liouvillian {
    n: usize,
    h_eff: CsrMatrix,
    jumps: Vec<CsrMatrix>,
}

impl Liouvillian {
    fn new(ops: &OperatorSet, p: &SystemParams) -> Self {
        let rates = [
            (p.gamma_a * (p.nbar_a + 1.0), &ops.a),
            (p.gamma_a * p.nbar_a, &ops.ad),
            (p.gamma_b * (p.nbar_b + 1.0), &ops.b),
            (p.gamma_b * p.nbar_b, &ops.bd),
        ];
        let n = ops.space.dim();
        let mut decay = CsrMatrix::zeros(n);
        let mut jumps = Vec::new();
        for (rate, op) in rates {
            if rate > 0.0 {
                let l = op.scale(Complex64::new(rate.sqrt(), 0.0));
                decay = decay.add(&l.adjoint().matmul(&l));
                jumps.push(l);
            }
        }
        let h_eff = ops.h.sub(&decay.scale(Complex64::new(0.0, 0.5)));
        Self { n, h_eff, jumps }
    }

    /// `drho = -i K rho + (-i K rho)† + Σ L rho L†`, with the jump part
    /// symmetrized so the result is Hermitian entry by entry.
    fn apply(&self, rho: &[Complex64], drho: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = self.n;
        scratch.resize(2 * n * n, ZERO);
        let (x, jump) = scratch.split_at_mut(n * n);
        jump.fill(ZERO);
        for l in &self.jumps {
            l.mul_dense(rho, x);
            l.add_mul_adjoint(x, jump);
        }
        self.h_eff.mul_dense(rho, x);
        for i in 0..n {
            for j in i..n {
                let coh = -I * x[i * n + j] + (-I * x[j * n + i]).conj();
                let jmp = 0.5 * (jump[i * n + j] + jump[j * n + i].conj());
                drho[i * n + j] = coh + jmp;
                drho[j * n + i] = (coh + jmp).conj();
            }
        }
    }
}

fn check_dims(rho: &DensityMatrix, ops: &OperatorSet) -> Result<()> {
    if rho.space != ops.space || rho.data.len() != ops.space.dim().pow(2) {
        return Err(Error::DimensionMismatch {
            expected: ops.space.dim().pow(2),
            got: rho.data.len(),
        });
    }
    Ok(())
}

/// Time derivative of `rho` under the thermal master equation.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    ops: &OperatorSet,
    params: &SystemParams,
) -> Result<DensityMatrix> {
    check_dims(rho, ops)?;
    let mut out = vec![ZERO; rho.data.len()];
    Liouvillian::new(ops, params).apply(&rho.data, &mut out, &mut Vec::new());
    Ok(DensityMatrix {
        space: rho.space,
        data: out,
    })
}

/// Largest trace drift and Hermiticity defect seen over delivered samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub stats: IntegratorStats,
    pub outcome: Outcome,
    pub diagnostics: Diagnostics,
}

/// Evolves `rho0`, handing each grid sample to `observer`. Aborts when the
/// trace drifts by more than [`TRACE_ABORT`].
pub fn evolve_observed<O>(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    params: &SystemParams,
    grid: &[f64],
    cfg: &StepperConfig,
    mut observer: O,
) -> Result<Evolution>
where
    O: FnMut(usize, f64, &DensityMatrix) -> ControlFlow<String>,
{
    check_dims(rho0, ops)?;
    let gen = Liouvillian::new(ops, params);
    let mut scratch = Vec::new();
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let rho: &[Complex64] = bytemuck::cast_slice(y);
        let drho: &mut [Complex64] = bytemuck::cast_slice_mut(dy);
        gen.apply(rho, drho, &mut scratch);
    };
    let mut diag = Diagnostics {
        min_diagonal: f64::INFINITY,
        ..Default::default()
    };
    let space = rho0.space;
    let y0: &[f64] = bytemuck::cast_slice(&rho0.data);
    let run = integrator::integrate_observed(rhs, y0, grid, cfg, |k, t, y| {
        let rho = DensityMatrix {
            space,
            data: bytemuck::cast_slice(y).to_vec(),
        };
        let drift = (rho.trace() - ONE).norm();
        diag.max_trace_drift = diag.max_trace_drift.max(drift);
        diag.max_hermiticity_defect = diag.max_hermiticity_defect.max(rho.hermiticity_defect());
        diag.min_diagonal = diag.min_diagonal.min(rho.min_diagonal());
        if drift > TRACE_ABORT {
            return ControlFlow::Break(format!("trace drift {drift:.3e} at t = {t}"));
        }
        observer(k, t, &rho)
    })?;
    Ok(Evolution {
        times: run.times,
        stats: run.stats,
        outcome: run.outcome,
        diagnostics: diag,
    })
}

/// Like [`evolve_observed`] but keeps every sample.
pub fn evolve(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    params: &SystemParams,
    grid: &[f64],
    cfg: &StepperConfig,
) -> Result<(Evolution, Vec<DensityMatrix>)> {
    let mut samples = Vec::with_capacity(grid.len());
    let ev = evolve_observed(rho0, ops, params, grid, cfg, |_, _, rho| {
        samples.push(rho.clone());
        ControlFlow::Continue(())
    })?;
    Ok((ev, samples))
}

/// All 14 moment slots as traces `Tr(rho X)`.
pub fn exact_moments(rho: &DensityMatrix, ops: &OperatorSet) -> MomentState {
    let mut s = MomentState::zero();
    for (slot, op) in &ops.moments {
        s.set(*slot, op.expectation(&rho.data));
    }
    s
}

/// Exact normally ordered g² values, undefined below `eps` as in the closure.
pub fn exact_g2(rho: &DensityMatrix, ops: &OperatorSet, eps: f64) -> [G2; 3] {
    let na = ops.na.expectation(&rho.data).re;
    let nb = ops.nb.expectation(&rho.data).re;
    let [num_a, num_b, num_ab] = ops.g2_numerators.each_ref().map(|m| m.expectation(&rho.data).re);
    [
        (na >= eps).then(|| num_a / (na * na)),
        (nb >= eps).then(|| num_b / (nb * nb)),
        (na >= eps && nb >= eps && na * nb >= eps * eps).then(|| num_ab / (na * nb)),
    ]
}

/// Stepper used for oracle runs.
pub fn oracle_stepper(sim: &SimConfig) -> StepperConfig {
    StepperConfig {
        h_max: sim.t_end,
        h_init: 1e-3f64.min(sim.t_end),
        h_min: 1e-12f64.min(sim.t_end),
        ..StepperConfig::adaptive(1e-8, 1e-10)
    }
}

/// Oracle output reduced to moments and exact g² on the sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub space: FockSpace,
    pub params: SystemParams,
    pub sim: SimConfig,
    pub stepper: StepperConfig,
    pub times: Vec<f64>,
    pub states: Vec<MomentState>,
    pub g2: Vec<[G2; 3]>,
    pub stats: IntegratorStats,
    pub outcome: Outcome,
    pub diagnostics: Diagnostics,
}

impl OracleTrajectory {
    pub fn is_complete(&self) -> bool {
        self.outcome.is_complete()
    }

    pub fn rows(&self) -> Vec<ObservableRow> {
        self.times
            .iter()
            .zip(&self.states)
            .zip(&self.g2)
            .map(|((&t, s), g)| ObservableRow {
                t,
                n_a: s.n_a.re,
                n_b: s.n_b.re,
                g2_a: g[0],
                g2_b: g[1],
                g2_ab: g[2],
            })
            .collect()
    }
}

/// Runs the oracle from the cavity and membrane vacuum.
pub fn run_oracle(
    params: &SystemParams,
    sim: &SimConfig,
    space: FockSpace,
    eps: f64,
) -> Result<OracleTrajectory> {
    params.validate()?;
    sim.validate()?;
    if sim.initial_state != InitialState::Vacuum {
        return Err(Error::Config(
            "the oracle only starts from vacuum; moments do not fix a density matrix".into(),
        ));
    }
    let ops = build_operators(space, params)?;
    let rho0 = DensityMatrix::vacuum(space)?;
    let stepper = oracle_stepper(sim);
    let grid = sim.time_grid();
    let mut states = Vec::with_capacity(grid.len());
    let mut g2 = Vec::with_capacity(grid.len());
    let ev = evolve_observed(&rho0, &ops, params, &grid, &stepper, |_, _, rho| {
        states.push(exact_moments(rho, &ops));
        g2.push(exact_g2(rho, &ops, eps));
        ControlFlow::Continue(())
    })?;
    // the observer records the aborting sample too; keep samples aligned with times
    states.truncate(ev.times.len());
    g2.truncate(ev.times.len());
    Ok(OracleTrajectory {
        space,
        params: *params,
        sim: *sim,
        stepper,
        times: ev.times,
        states,
        g2,
        stats: ev.stats,
        outcome: ev.outcome,
        diagnostics: ev.diagnostics,
    })
}

/// Cutoff convergence of `<a†a>(t_end)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub cutoffs: Vec<FockSpace>,
    pub n_a_end: Vec<f64>,
    pub delta: f64,
    pub threshold: f64,
    pub under_resolved: bool,
}

/// Compares a finished run against one at cutoffs raised by [`CUTOFF_BUMP`].
pub fn convergence_report(base: &OracleTrajectory, eps: f64) -> Result<ConvergenceReport> {
    let bumped_space = base.space.bumped(CUTOFF_BUMP);
    let bumped = run_oracle(&base.params, &base.sim, bumped_space, eps)?;
    let end = |t: &OracleTrajectory| {
        if t.is_complete() {
            t.states.last().map_or(f64::NAN, |s| s.n_a.re)
        } else {
            f64::NAN
        }
    };
    let (x, y) = (end(base), end(&bumped));
    let delta = (x - y).abs();
    Ok(ConvergenceReport {
        cutoffs: vec![base.space, bumped_space],
        n_a_end: vec![x, y],
        delta,
        threshold: CONVERGENCE_THRESHOLD,
        under_resolved: !(delta < CONVERGENCE_THRESHOLD),
    })
}

/// True when the run stopped on the trace-drift guard.
pub fn aborted_on_trace(outcome: &Outcome) -> bool {
    matches!(
        outcome,
        Outcome::Aborted {
            reason: AbortReason::Observer(msg),
            ..
        } if msg.starts_with("trace drift")
    )
}
