//! Lindblad propagation, steady states and the steady-state moment relations.

use crate::error::{Error, Result};
use crate::fock::{Basis, DensityMatrix, Operator};
use crate::io::{fmt12, write_rows};
use crate::linalg::{expm, rcm_order, symmetrize, BandLu, CMat};
use crate::model::{build_dissipators, build_hamiltonian, DissipatorSet, ModelParams};
use crate::ode::{integrate, OdeOptions, OdeStats};
use crate::sparse::Csr;
use num_complex::Complex64 as C;
use std::io::Write;

const I: C = C::new(0.0, 1.0);
const ZERO: C = C::new(0.0, 0.0);

/// Sparse Lindblad generator: dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ r cρc†,
/// with H_eff = H − (i/2) Σ r c†c.
#[derive(Clone, Debug)]
pub struct Generator {
    d: usize,
    h: Csr,
    h_eff: Csr,
    jumps: Vec<(Csr, f64)>,
}

impl Generator {
    pub fn new(h: &Operator, diss: &DissipatorSet) -> Result<Self> {
        let d = h.dim();
        let hs = Csr::from_dense(h.matrix());
        let mut h_eff = hs.clone();
        let mut jumps = Vec::new();
        for ch in &diss.channels {
            if ch.op.dim() != d {
                return Err(Error::DimensionMismatch(ch.op.dim(), d));
            }
            let c = Csr::from_dense(ch.op.matrix());
            let cdc = c.adjoint().mul(&c);
            h_eff = h_eff.add(&cdc.scale(C::new(0.0, -0.5 * ch.rate)));
            jumps.push((c, ch.rate));
        }
        Ok(Generator { d, h: hs, h_eff, jumps })
    }

    pub fn from_sparse(h: Csr, jumps: Vec<(Csr, f64)>) -> Self {
        let d = h.nrows;
        let mut h_eff = h.clone();
        for (c, r) in &jumps {
            h_eff = h_eff.add(&c.adjoint().mul(c).scale(C::new(0.0, -0.5 * r)));
        }
        Generator { d, h, h_eff, jumps }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hamiltonian(&self) -> &Csr {
        &self.h
    }

    pub fn jumps(&self) -> &[(Csr, f64)] {
        &self.jumps
    }

    /// `out = L(x)` for column-major `x`.
    pub fn apply(&self, x: &[C], out: &mut [C], scratch: &mut Vec<C>) {
        let d = self.d;
        out.iter_mut().for_each(|v| *v = ZERO);
        self.h_eff.mul_dense_acc(x, d, -I, out);
        self.h_eff.mul_dense_right_adj_acc(x, d, I, out);
        scratch.resize(d * d, ZERO);
        for (c, r) in &self.jumps {
            scratch.iter_mut().for_each(|v| *v = ZERO);
            c.mul_dense_acc(x, d, C::new(1.0, 0.0), scratch);
            c.mul_dense_right_adj_acc(scratch, d, C::new(*r, 0.0), out);
        }
    }

    pub fn apply_dense(&self, rho: &CMat) -> CMat {
        let mut out = vec![ZERO; self.d * self.d];
        let mut scratch = Vec::new();
        self.apply(rho.as_slice(), &mut out, &mut scratch);
        CMat::from_vec(self.d, self.d, out)
    }

    /// Dense d²×d² superoperator acting on column-major vec(ρ).
    pub fn superoperator(&self) -> CMat {
        let d = self.d;
        let mut l = CMat::zeros(d * d, d * d);
        let v = |i: usize, j: usize| i + j * d;
        for (i, k, h) in self.h_eff.iter() {
            for j in 0..d {
                l[(v(i, j), v(k, j))] += -I * h;
                l[(v(j, i), v(j, k))] += I * h.conj();
            }
        }
        for (c, r) in &self.jumps {
            for (i, k, a) in c.iter() {
                for (j, m, b) in c.iter() {
                    l[(v(i, j), v(k, m))] += a * b.conj() * *r;
                }
            }
        }
        l
    }
}

/// dρ/dt for dense inputs.
pub fn lindblad_rhs(rho: &DensityMatrix, h: &Operator, d: &DissipatorSet) -> Result<Operator> {
    if rho.basis() != h.basis() {
        return Err(Error::DimensionMismatch(rho.dim(), h.dim()));
    }
    let g = Generator::new(h, d)?;
    Operator::new(h.basis(), g.apply_dense(rho.matrix()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times[0] < 0.0 || *times.last().unwrap() <= 0.0 {
            return Err(Error::InvalidConfig("time grid must end after 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `samples` points from 0 to `t_end` inclusive.
    pub fn uniform(t_end: f64, samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidConfig("need at least 2 samples".into()));
        }
        Self::new((0..samples).map(|k| t_end * k as f64 / (samples - 1) as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub p_d: Vec<f64>,
    pub n_avg: Vec<f64>,
    pub a: Vec<C>,
    /// ⟨σz(a† − a)⟩
    pub corr: Vec<C>,
    pub trace_defect: Vec<f64>,
    pub top_population: Vec<f64>,
    pub snapshots: Option<Vec<CMat>>,
    pub stats: Option<StatsRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StatsRecord {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl From<OdeStats> for StatsRecord {
    fn from(s: OdeStats) -> Self {
        StatsRecord { accepted: s.accepted, rejected: s.rejected, rhs_evals: s.rhs_evals }
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 9] =
    ["t", "omega_t_over_2pi", "P_D", "n_avg", "re_a", "im_a", "re_corr", "im_corr", "trace_defect"];

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn csv_rows(&self, omega: f64) -> Vec<Vec<String>> {
        (0..self.len())
            .map(|k| {
                vec![
                    fmt12(self.times[k]),
                    fmt12(omega * self.times[k] / (2.0 * std::f64::consts::PI)),
                    fmt12(self.p_d[k]),
                    fmt12(self.n_avg[k]),
                    fmt12(self.a[k].re),
                    fmt12(self.a[k].im),
                    fmt12(self.corr[k].re),
                    fmt12(self.corr[k].im),
                    fmt12(self.trace_defect[k]),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W, omega: f64) -> Result<()> {
        let header: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
        write_rows(w, &header, &self.csv_rows(omega))
    }

    pub fn max_trace_defect(&self) -> f64 {
        self.trace_defect.iter().copied().fold(0.0, f64::max)
    }
}

/// Sparse observables recorded along a trajectory.
#[derive(Clone, Debug)]
pub struct Observables {
    d: usize,
    levels: usize,
    spin: bool,
    a: Csr,
    corr: Csr,
}

impl Observables {
    pub fn new(basis: Basis) -> Self {
        let s = basis.space();
        let l = s.levels();
        let mut low = Vec::new();
        for n in 1..l {
            low.push((n - 1, n, C::new((n as f64).sqrt(), 0.0)));
        }
        let am = Csr::from_triplets(l, l, low);
        let (spin, a, corr) = match basis {
            Basis::Mode(_) => {
                let c = am.adjoint().add(&am.scale(C::new(-1.0, 0.0)));
                (false, am, c)
            }
            Basis::SpinMode(_) => {
                let id2 = Csr::identity(2);
                let sz = Csr::diag(&[C::new(1.0, 0.0), C::new(-1.0, 0.0)]);
                let a = id2.kron(&am);
                let c = sz.kron(&am.adjoint().add(&am.scale(C::new(-1.0, 0.0))));
                (true, a, c)
            }
        };
        Observables { d: basis.dim(), levels: l, spin, a, corr }
    }

    fn diag(&self, x: &[C], i: usize) -> f64 {
        x[i + i * self.d].re
    }

    pub fn record(&self, traj: &mut Trajectory, t: f64, x: &[C]) {
        let l = self.levels;
        let mut tr = 0.0;
        let mut n = 0.0;
        let mut pd = 0.0;
        for i in 0..self.d {
            let p = self.diag(x, i);
            tr += p;
            n += (i % l) as f64 * p;
            if i < l {
                pd += p;
            }
        }
        let top = if self.spin {
            self.diag(x, l - 1) + self.diag(x, 2 * l - 1)
        } else {
            self.diag(x, l - 1)
        };
        traj.times.push(t);
        traj.p_d.push(if self.spin { pd } else { 1.0 });
        traj.n_avg.push(n);
        traj.a.push(self.a.trace_with(x));
        traj.corr.push(self.corr.trace_with(x));
        traj.trace_defect.push((tr - 1.0).abs());
        traj.top_population.push(top);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub tol: f64,
    /// Top-Fock population above which evolution aborts; `None` disables the check.
    pub leak_tol: Option<f64>,
    pub snapshots: bool,
    pub h_max: f64,
}

impl EvolveOptions {
    pub fn new(tol: f64) -> Self {
        EvolveOptions { tol, leak_tol: Some(1e-6), snapshots: false, h_max: f64::INFINITY }
    }
}

pub fn check_tol(tol: f64) -> Result<()> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::InvalidConfig(format!("tol {tol} outside [1e-12, 1e-4]")));
    }
    Ok(())
}

pub fn evolve(rho0: &DensityMatrix, h: &Operator, d: &DissipatorSet, grid: &TimeGrid, tol: f64) -> Result<Trajectory> {
    evolve_with(rho0, h, d, grid, &EvolveOptions::new(tol))
}

pub fn evolve_with(
    rho0: &DensityMatrix,
    h: &Operator,
    d: &DissipatorSet,
    grid: &TimeGrid,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if rho0.basis() != h.basis() {
        return Err(Error::DimensionMismatch(rho0.dim(), h.dim()));
    }
    let gen = Generator::new(h, d)?;
    evolve_generator(&gen, rho0, grid, opts)
}

pub fn evolve_generator(gen: &Generator, rho0: &DensityMatrix, grid: &TimeGrid, opts: &EvolveOptions) -> Result<Trajectory> {
    check_tol(opts.tol)?;
    let dim = gen.dim();
    let obs = Observables::new(rho0.basis());
    let mut traj = Trajectory { snapshots: opts.snapshots.then(Vec::new), ..Default::default() };
    let mut scratch = Vec::new();
    let mut ode = OdeOptions::new(opts.tol);
    ode.h_max = opts.h_max;
    let stats = integrate(
        |_, x, dx| gen.apply(x, dx, &mut scratch),
        0.0,
        rho0.matrix().as_slice(),
        grid.times(),
        ode,
        |x| symmetrize_slice(x, dim),
        |_, t, x| {
            obs.record(&mut traj, t, x);
            if let Some(s) = traj.snapshots.as_mut() {
                s.push(CMat::from_column_slice(dim, dim, x));
            }
            if let Some(lt) = opts.leak_tol {
                let top = *traj.top_population.last().unwrap();
                if top > lt {
                    return Err(Error::TruncationLeak { t, population: top });
                }
            }
            Ok(())
        },
    )?;
    traj.stats = Some(stats.into());
    Ok(traj)
}

pub fn symmetrize_slice(x: &mut [C], d: usize) {
    for j in 0..d {
        x[j + j * d].im = 0.0;
        for i in j + 1..d {
            let v = (x[i + j * d] + x[j + i * d].conj()) * 0.5;
            x[i + j * d] = v;
            x[j + i * d] = v.conj();
        }
    }
}

/// Reference propagation by exponentiating the dense superoperator.
pub fn propagate_superoperator(gen: &Generator, rho0: &CMat, times: &[f64]) -> Vec<CMat> {
    let l = gen.superoperator();
    let d = gen.dim();
    let v0 = nalgebra::DVector::from_column_slice(rho0.as_slice());
    times
        .iter()
        .map(|&t| {
            let v = expm(&(&l * C::new(t, 0.0))) * &v0;
            CMat::from_column_slice(d, d, v.as_slice())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteadyMethod {
    NullSpace,
    Evolution,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// ‖L(ρ)‖_F / ‖ρ‖_F
    pub residual: f64,
    pub degenerate: bool,
    pub method: SteadyMethod,
}

#[derive(Clone, Debug, Default)]
pub struct SteadyOptions {
    /// Initial state for the long-time fallback; maximally mixed if absent.
    pub fallback_initial: Option<DensityMatrix>,
    /// Fallback horizon; defaults to 20 over the largest cooling rate.
    pub fallback_time: Option<f64>,
}

fn has_dissipation(d: &DissipatorSet) -> bool {
    d.channels
        .iter()
        .any(|c| c.rate > 0.0 && crate::linalg::hermitian_defect(c.op.matrix()) > 1e-12)
}

pub fn steady_state(h: &Operator, d: &DissipatorSet) -> Result<SteadyState> {
    steady_state_with(h, d, &SteadyOptions::default())
}

pub fn steady_state_with(h: &Operator, d: &DissipatorSet, opts: &SteadyOptions) -> Result<SteadyState> {
    if !has_dissipation(d) {
        return Err(Error::NoDissipation);
    }
    let gen = Generator::new(h, d)?;
    let basis = h.basis();
    let solved = null_space_solve(&gen);
    if let Some(rho) = solved.as_ref() {
        let residual = relative_residual(&gen, rho);
        if residual < 1e-8 {
            if let Ok(dm) = DensityMatrix::from_hermitian_part(basis, rho.clone()) {
                return Ok(SteadyState { rho: dm, residual, degenerate: false, method: SteadyMethod::NullSpace });
            }
        }
    }
    let rate = d
        .channels
        .iter()
        .filter(|c| crate::linalg::hermitian_defect(c.op.matrix()) > 1e-12)
        .map(|c| c.rate)
        .fold(0.0, f64::max);
    let dim = basis.dim();
    let rho0 = match &opts.fallback_initial {
        Some(r) => r.clone(),
        None => DensityMatrix::from_raw(basis, CMat::identity(dim, dim) / C::new(dim as f64, 0.0)),
    };
    let grid = TimeGrid::new(vec![opts.fallback_time.unwrap_or(20.0 / rate)])?;
    let mut eo = EvolveOptions::new(1e-10);
    eo.leak_tol = None;
    eo.snapshots = true;
    let traj = evolve_generator(&gen, &rho0, &grid, &eo)?;
    let mut rho = traj.snapshots.unwrap().pop().unwrap();
    let tr = crate::linalg::trace(&rho);
    rho /= tr;
    symmetrize(&mut rho);
    let residual = relative_residual(&gen, &rho);
    Ok(SteadyState {
        rho: DensityMatrix::from_raw(basis, rho),
        residual,
        degenerate: solved.is_none(),
        method: SteadyMethod::Evolution,
    })
}

fn relative_residual(gen: &Generator, rho: &CMat) -> f64 {
    gen.apply_dense(rho).norm() / rho.norm()
}

/// Banded solve of L(ρ) = 0 with one diagonal unknown pinned; `None` when singular.
fn null_space_solve(gen: &Generator) -> Option<CMat> {
    let d = gen.dim();
    let mut adj = vec![Vec::new(); d];
    let mut link = |i: usize, j: usize| {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    };
    for (i, j, _) in gen.h_eff.iter() {
        link(i, j);
    }
    for (c, _) in &gen.jumps {
        for (i, j, _) in c.iter() {
            link(i, j);
        }
    }
    let perm = rcm_order(d, &adj);
    let mut pos = vec![0usize; d];
    for (new, &old) in perm.iter().enumerate() {
        pos[old] = new;
    }
    let mut b = 0usize;
    let mut widen = |i: usize, j: usize| b = b.max(pos[i].abs_diff(pos[j]));
    for (i, j, _) in gen.h_eff.iter() {
        widen(i, j);
    }
    for (c, _) in &gen.jumps {
        for (i, j, _) in c.iter() {
            widen(i, j);
        }
    }
    let v = |i: usize, j: usize| pos[i] * d + pos[j];
    let n = d * d;
    let band = b * (d + 1);
    let assemble = || {
        let mut lu = BandLu::new(n, band, band);
        for (i, k, h) in gen.h_eff.iter() {
            for j in 0..d {
                lu.add(v(i, j), v(k, j), -I * h);
                lu.add(v(j, i), v(j, k), I * h.conj());
            }
        }
        for (c, r) in &gen.jumps {
            for (i, k, a) in c.iter() {
                for (j, m, bb) in c.iter() {
                    lu.add(v(i, j), v(k, m), a * bb.conj() * *r);
                }
            }
        }
        lu
    };
    let solve_pinned = |pin: usize| -> Option<CMat> {
        let mut lu = assemble();
        let row = v(pin, pin);
        lu.set_row_unit(row);
        lu.factor();
        if !(lu.min_pivot > 1e-12 * lu.max_pivot) {
            return None;
        }
        let mut x = vec![ZERO; n];
        x[row] = C::new(1.0, 0.0);
        lu.solve(&mut x);
        if x.iter().any(|z| !z.is_finite()) {
            return None;
        }
        let mut rho = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                rho[(i, j)] = x[v(i, j)];
            }
        }
        let tr = crate::linalg::trace(&rho);
        if tr.norm() == 0.0 {
            return None;
        }
        rho /= tr;
        symmetrize(&mut rho);
        Some(rho)
    };
    let first = solve_pinned(0)?;
    let (imax, pmax) = (0..d).map(|i| (i, first[(i, i)].re)).fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    if first[(0, 0)].re < 1e-3 * pmax {
        return solve_pinned(imax);
    }
    Some(first)
}

/// Steady state of the model plus the moment relations derived from it.
#[derive(Clone, Debug)]
pub struct SteadyStateReport {
    pub rho_ss: DensityMatrix,
    pub p_d: f64,
    pub n_ss: f64,
    pub a_ss: C,
    /// ⟨σz(a†−a)⟩_ss
    pub corr: C,
    /// Measured ⟨a + a†⟩/2 in units of y0.
    pub y_ss: f64,
    /// n̄ − (i/2)(g/γ)⟨σz(a†−a)⟩_ss
    pub n_ss_relation: f64,
    /// −ig⟨σz⟩/(2iω+γ)
    pub a_ss_relation: C,
    /// −2ωg(2P_D−1)/(4ω²+γ²)
    pub y_ss_relation: f64,
    /// n̄ + g²(2P_D−1)²/(4ω²+γ²)
    pub n_ss_uncorrelated: f64,
    pub residual: f64,
    pub degenerate: bool,
    pub method: SteadyMethod,
}

pub fn steady_state_report(p: &ModelParams) -> Result<SteadyStateReport> {
    let space = p.space()?;
    let h = build_hamiltonian(p, space);
    let d = build_dissipators(p, space, true);
    let ss = steady_state(&h, &d)?;
    Ok(report_from(p, ss))
}

pub fn report_from(p: &ModelParams, ss: SteadyState) -> SteadyStateReport {
    let mut t = Trajectory::default();
    Observables::new(ss.rho.basis()).record(&mut t, 0.0, ss.rho.matrix().as_slice());
    let (pd, n, a, corr) = (t.p_d[0], t.n_avg[0], t.a[0], t.corr[0]);
    let sz = 2.0 * pd - 1.0;
    let w = p.omega;
    let den = 4.0 * w * w + p.gamma * p.gamma;
    SteadyStateReport {
        p_d: pd,
        n_ss: n,
        a_ss: a,
        corr,
        y_ss: a.re,
        n_ss_relation: (C::new(p.nbar, 0.0) - I * 0.5 * (p.g / p.gamma) * corr).re,
        a_ss_relation: -I * p.g * sz / (I * 2.0 * w + p.gamma),
        y_ss_relation: -2.0 * w * p.g * sz / den,
        n_ss_uncorrelated: p.nbar + p.g * p.g * sz * sz / den,
        residual: ss.residual,
        degenerate: ss.degenerate,
        method: ss.method,
        rho_ss: ss.rho,
    }
}

/// |n_ss − [n̄ − (i/2)(g/γ)⟨σz(a†−a)⟩_ss]|
pub fn occupation_relation_residual(r: &SteadyStateReport) -> f64 {
    (r.n_ss - r.n_ss_relation).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{ladder_ops, mode_displacement, mode_ladder_ops, number_op, spin_ops, thermal_state, FockSpace};
    use crate::linalg::{eigvalsh, trace_distance};
    use crate::model::{build_mode_dissipators, initial_state, DephasingBasis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    pub fn params(delta_e: f64, v_x: f64, g: f64, gamma: f64, ncut: usize) -> ModelParams {
        ModelParams {
            omega: 1.0,
            delta_e,
            v_x,
            g,
            gamma,
            nbar: 0.2,
            gamma_z: 0.0,
            gamma_m: 0.0,
            nbar0: None,
            ncut,
            dephasing_basis: DephasingBasis::ModelZ,
        }
    }

    /// Random state supported on Fock levels ≤ nmax.
    fn random_state(space: FockSpace, nmax: usize, seed: u64) -> DensityMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = space.total_dim();
        let mut g = CMat::zeros(d, d);
        for s in 0..2 {
            for n in 0..=nmax {
                for j in 0..d {
                    g[(space.index(s, n), j)] = C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
        }
        let m = &g * g.adjoint();
        let tr = crate::linalg::trace(&m);
        DensityMatrix::from_hermitian_part(Basis::SpinMode(space), m / tr).unwrap()
    }

    fn tr_op(op: &CMat, rho: &CMat) -> C {
        crate::linalg::trace(&(op * rho))
    }

    #[test]
    fn rhs_trivial_cases() {
        let s = FockSpace::new(4).unwrap();
        let b = Basis::SpinMode(s);
        let rho = random_state(s, 4, 1);
        let zero = Operator::hermitian(b, CMat::zeros(10, 10)).unwrap();
        let out = lindblad_rhs(&rho, &zero, &DissipatorSet::default()).unwrap();
        assert_eq!(crate::linalg::max_abs(out.matrix()), 0.0);

        let mixed = DensityMatrix::new(b, CMat::identity(10, 10) / C::new(10.0, 0.0)).unwrap();
        let (a, _) = ladder_ops(s);
        let mut d = DissipatorSet::default();
        d.push("a", a, 0.3);
        let out = lindblad_rhs(&mixed, &zero, &d).unwrap();
        assert!(crate::linalg::trace(out.matrix()).norm() < 1e-12);
        let n = number_op(b);
        let dn = tr_op(n.matrix(), out.matrix()).re;
        let navg = tr_op(n.matrix(), mixed.matrix()).re;
        assert!((dn + 0.3 * navg).abs() < 1e-12);
    }

    #[test]
    fn occupation_rate_identity() {
        let mut p = params(0.8, 0.3, 1.3, 0.07, 12);
        p.gamma_z = 0.01;
        p.gamma_m = 0.02;
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, s);
        let d = build_dissipators(&p, s, true);
        let (a, ad) = ladder_ops(s);
        let (_, _, sz) = spin_ops(s);
        let corr = sz.matrix() * (ad.matrix() - a.matrix());
        let n = number_op(Basis::SpinMode(s));
        for seed in 0..5 {
            let rho = random_state(s, 8, seed);
            assert!(rho.fock_populations()[12] < 1e-10);
            let drho = lindblad_rhs(&rho, &h, &d).unwrap();
            assert!(crate::linalg::trace(drho.matrix()).norm() < 1e-12);
            let lhs = tr_op(n.matrix(), drho.matrix());
            let nv = tr_op(n.matrix(), rho.matrix()).re;
            let rhs = -I * (p.g / 2.0) * tr_op(&corr, rho.matrix()) + p.gamma * (p.nbar - nv);
            assert!((lhs - rhs).norm() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn eigenstate_stays_put() {
        let p = params(1.0, 0.0, 0.0, 0.0, 6);
        let s = p.space().unwrap();
        let rho = initial_state(&ModelParams { nbar0: Some(0.0), ..p.clone() }, s).unwrap();
        let tr = evolve(&rho, &build_hamiltonian(&p, s), &DissipatorSet::default(), &TimeGrid::uniform(50.0, 51).unwrap(), 1e-9).unwrap();
        assert!(tr.p_d.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(tr.n_avg.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn cooling_only_relaxation() {
        let mut p = params(0.0, 0.0, 0.0, 0.05, 40);
        p.nbar0 = Some(1.0);
        let s = p.space().unwrap();
        let rho = initial_state(&p, s).unwrap();
        let tr = evolve(&rho, &build_hamiltonian(&p, s), &build_dissipators(&p, s, false), &TimeGrid::uniform(60.0, 31).unwrap(), 1e-9)
            .unwrap();
        for (t, n) in tr.times.iter().zip(&tr.n_avg) {
            let exact = p.nbar + (1.0 - p.nbar) * (-p.gamma * t).exp();
            assert!((n - exact).abs() < 2e-3, "t={t}");
        }
    }

    #[test]
    fn donor_polaron_is_stationary() {
        let mut p = params(0.6, 0.0, 1.2, 0.0, 24);
        p.nbar0 = Some(0.3);
        let s = p.space().unwrap();
        let rho = initial_state(&p, s).unwrap();
        let tr = evolve(&rho, &build_hamiltonian(&p, s), &DissipatorSet::default(), &TimeGrid::uniform(40.0, 41).unwrap(), 1e-10).unwrap();
        let n0 = tr.n_avg[0];
        for k in 0..tr.len() {
            assert!((tr.p_d[k] - 1.0).abs() < 1e-8);
            assert!((tr.n_avg[k] - n0).abs() < 1e-8);
        }
    }

    #[test]
    fn superoperator_cross_check() {
        let mut p = params(0.9, 0.2, 0.8, 0.05, 6);
        p.gamma_z = 0.01;
        p.gamma_m = 0.004;
        p.nbar0 = Some(0.1);
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, s);
        let d = build_dissipators(&p, s, true);
        let rho = random_state(s, 3, 7);
        let times = [0.0, 3.0, 11.0, 20.0];
        let gen = Generator::new(&h, &d).unwrap();
        let mut eo = EvolveOptions::new(1e-11);
        eo.snapshots = true;
        eo.leak_tol = None;
        let traj = evolve_generator(&gen, &rho, &TimeGrid::new(times.to_vec()).unwrap(), &eo).unwrap();
        let refs = propagate_superoperator(&gen, rho.matrix(), &times);
        for (a, b) in traj.snapshots.unwrap().iter().zip(&refs) {
            assert!(crate::linalg::max_abs(&(a - b)) < 1e-6);
        }
    }

    #[test]
    fn steady_state_requires_dissipation() {
        let p = params(1.0, 0.1, 0.5, 0.0, 6);
        let s = p.space().unwrap();
        assert!(matches!(steady_state(&build_hamiltonian(&p, s), &build_dissipators(&p, s, true)), Err(Error::NoDissipation)));
    }

    #[test]
    fn detailed_balance_limit() {
        let p = params(0.0, 0.0, 0.0, 0.03, 25);
        let s = p.space().unwrap();
        let (a, ad) = mode_ladder_ops(s);
        let h = Operator::hermitian(Basis::Mode(s), ad.matrix() * a.matrix()).unwrap();
        let ss = steady_state(&h, &build_mode_dissipators(&p, s)).unwrap();
        assert_eq!(ss.method, SteadyMethod::NullSpace);
        let th = thermal_state(p.nbar, s).unwrap();
        assert!(trace_distance(ss.rho.matrix(), th.matrix()) < 1e-7);
    }

    #[test]
    fn spin_frozen_steady_state_is_displaced_thermal() {
        let (g, gamma, w) = (1.91, 0.038, 1.0);
        let p = params(0.0, 0.0, g, gamma, 30);
        let s = p.space().unwrap();
        let (a, ad) = mode_ladder_ops(s);
        let hm = ad.matrix() * a.matrix() * C::new(w, 0.0) + (a.matrix() + ad.matrix()) * C::new(g / 2.0, 0.0);
        let h = Operator::hermitian(Basis::Mode(s), hm).unwrap();
        let ss = steady_state(&h, &build_mode_dissipators(&p, s)).unwrap();
        let den = 4.0 * w * w + gamma * gamma;
        let alpha = C::new(2.0 * g * w / den, g * gamma / den);
        let dm = mode_displacement(-alpha, s).unwrap().op;
        let th = thermal_state(p.nbar, s).unwrap();
        let expect = dm.matrix() * th.matrix() * dm.matrix().adjoint();
        assert!(trace_distance(ss.rho.matrix(), &expect) < 1e-6);
        let r = report_from(&p, ss);
        assert!((r.n_ss - (p.nbar + g * g / den)).abs() < 1e-6);
    }

    #[test]
    fn degenerate_model_falls_back() {
        let p = params(0.5, 0.0, 0.6, 0.05, 10);
        let s = p.space().unwrap();
        let opts = SteadyOptions { fallback_initial: Some(initial_state(&p, s).unwrap()), fallback_time: Some(600.0) };
        let ss = steady_state_with(&build_hamiltonian(&p, s), &build_dissipators(&p, s, false), &opts).unwrap();
        assert!(ss.degenerate);
        assert_eq!(ss.method, SteadyMethod::Evolution);
        let r = report_from(&p, ss);
        assert!((r.p_d - 1.0).abs() < 1e-9);
        let den = 4.0 + p.gamma * p.gamma;
        assert!((r.n_ss - (p.nbar + p.g * p.g / den)).abs() < 1e-6);
    }

    #[test]
    fn steady_state_relations() {
        let mut p = params(1.0, 0.19, 1.91, 0.038, 22);
        p.gamma_m = 0.0013;
        let r = steady_state_report(&p).unwrap();
        assert_eq!(r.method, SteadyMethod::NullSpace);
        assert!(r.residual < 1e-8);
        assert!(occupation_relation_residual(&r) < 1e-6, "{}", occupation_relation_residual(&r));

        // motional dephasing damps ⟨a⟩ beyond the cooling rate, so the ⟨a⟩ relation needs γm = 0
        p.gamma_m = 0.0;
        let r = steady_state_report(&p).unwrap();
        assert!((r.a_ss - r.a_ss_relation).norm() < 1e-6);
        assert!((r.y_ss - r.y_ss_relation).abs() < 1e-6);

        p.delta_e = 9.0;
        let r = steady_state_report(&p).unwrap();
        assert!(r.p_d < 0.01);
        let lim = 2.0 * p.g / (4.0 + p.gamma * p.gamma);
        assert!((r.y_ss_relation - lim).abs() < 0.02 * lim);
        assert!((r.y_ss - r.y_ss_relation).abs() < 1e-6);
    }

    #[test]
    fn relation_residual_vanishes_without_coupling() {
        let mut p = params(1.0, 0.3, 0.0, 0.05, 14);
        p.gamma_z = 0.002;
        let r = steady_state_report(&p).unwrap();
        assert!((r.n_ss_relation - p.nbar).abs() < 1e-15);
        assert!(occupation_relation_residual(&r) < 1e-8);
    }

    fn check_hygiene(p: &ModelParams, t_end: f64) {
        let s = p.space().unwrap();
        let mut eo = EvolveOptions::new(1e-9);
        eo.snapshots = true;
        let tr = evolve_with(&initial_state(p, s).unwrap(), &build_hamiltonian(p, s), &build_dissipators(p, s, true), &TimeGrid::uniform(t_end, 21).unwrap(), &eo).unwrap();
        assert!(tr.max_trace_defect() < 1e-7);
        for m in tr.snapshots.as_ref().unwrap() {
            assert!(eigvalsh(m)[0] > -1e-7);
        }
    }

    #[test]
    fn unitary_energy_conservation() {
        let p = params(1.0, 0.18, 1.0, 0.0, 20);
        let s = p.space().unwrap();
        let h = build_hamiltonian(&p, s);
        let mut eo = EvolveOptions::new(1e-10);
        eo.snapshots = true;
        let tr = evolve_with(&initial_state(&p, s).unwrap(), &h, &DissipatorSet::default(), &TimeGrid::uniform(50.0 * 2.0 * std::f64::consts::PI, 26).unwrap(), &eo).unwrap();
        let e: Vec<f64> = tr.snapshots.unwrap().iter().map(|m| tr_op(h.matrix(), m).re).collect();
        for x in &e {
            assert!((x - e[0]).abs() < 1e-7 * e[0].abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn trace_and_positivity(de in 0.0f64..3.0, vx in 0.0f64..0.3, g in 0.0f64..1.2, gamma in 0.0f64..0.1) {
            let mut p = params(de, vx, g, gamma, 16);
            p.gamma_z = 0.002;
            p.gamma_m = 0.001;
            check_hygiene(&p, 60.0);
        }
    }
}
