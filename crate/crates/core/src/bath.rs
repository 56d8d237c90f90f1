//! System coupled to a discretized Ohmic bath, evolved as a closed system and
//! reduced back onto the electron-transfer model.

use crate::error::{Error, Result};
use crate::fock::{ladder_ops, Basis, DensityMatrix};
use crate::linalg::eigh;
use crate::model::{build_dissipators, build_hamiltonian, ModelParams};
use crate::ode::{integrate, OdeOptions};
use crate::propagation::{check_tol, evolve_with, EvolveOptions, Observables, TimeGrid, Trajectory};
use crate::sparse::Csr;
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathDiscretization {
    pub n_modes: usize,
    pub omega: Vec<f64>,
    pub c: Vec<f64>,
    /// Exponential cutoff of J(ω); infinite means a flat Ohmic slope.
    pub omega_c: f64,
    pub eta: f64,
    pub ncut_b: usize,
    pub band: (f64, f64),
    pub delta_omega: f64,
    pub t_rec: f64,
    pub gamma_target: f64,
    pub omega0: f64,
}

impl BathDiscretization {
    pub fn spectral_density(&self, w: f64) -> f64 {
        ohmic(self.eta, self.omega_c, w)
    }

    pub fn coupling_sum(&self) -> f64 {
        self.c.iter().map(|c| c * c).sum()
    }

    /// ∫J(ω)dω over the band in closed form.
    pub fn band_integral(&self) -> f64 {
        let (lo, hi) = self.band;
        if self.omega_c.is_infinite() {
            return self.eta * (hi * hi - lo * lo) / 2.0;
        }
        let c = self.omega_c;
        let prim = |w: f64| -c * (-w / c).exp() * (w + c);
        self.eta * (prim(hi) - prim(lo))
    }

    pub fn dim(&self) -> usize {
        (self.ncut_b + 1).pow(self.n_modes as u32)
    }

    /// Evolution must end before this time.
    pub fn horizon(&self) -> f64 {
        0.8 * self.t_rec
    }
}

fn ohmic(eta: f64, omega_c: f64, w: f64) -> f64 {
    if omega_c.is_infinite() {
        eta * w
    } else {
        eta * w * (-w / omega_c).exp()
    }
}

pub fn discretize_ohmic(
    gamma_target: f64,
    omega0: f64,
    n_modes: usize,
    band: (f64, f64),
    ncut_b: usize,
) -> Result<BathDiscretization> {
    discretize_ohmic_with_cutoff(gamma_target, omega0, n_modes, band, ncut_b, f64::INFINITY)
}

pub fn discretize_ohmic_with_cutoff(
    gamma_target: f64,
    omega0: f64,
    n_modes: usize,
    band: (f64, f64),
    ncut_b: usize,
    omega_c: f64,
) -> Result<BathDiscretization> {
    let (lo, hi) = band;
    if n_modes < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 bath modes, got {n_modes}")));
    }
    if ncut_b < 1 {
        return Err(Error::InvalidConfig("bath mode truncation must be ≥ 1".into()));
    }
    if !(gamma_target >= 0.0) || !(omega0 > 0.0) || !(omega_c > 0.0) || !(lo >= 0.0) || !(hi > lo) {
        return Err(Error::InvalidConfig("invalid bath parameters".into()));
    }
    if !(lo < omega0 && omega0 < hi) {
        return Err(Error::BandExcludesResonance { lo, hi, omega0 });
    }
    let eta = gamma_target / (2.0 * PI * omega0);
    let dw = (hi - lo) / n_modes as f64;
    let omega: Vec<f64> = (0..n_modes).map(|k| lo + (k as f64 + 0.5) * dw).collect();
    let c = omega.iter().map(|&w| (ohmic(eta, omega_c, w) * dw).sqrt()).collect();
    Ok(BathDiscretization {
        n_modes,
        omega,
        c,
        omega_c,
        eta,
        ncut_b,
        band,
        delta_omega: dw,
        t_rec: 2.0 * PI / dw,
        gamma_target,
        omega0,
    })
}

#[derive(Clone, Debug)]
pub struct FullModel {
    pub params: ModelParams,
    pub bath: BathDiscretization,
    h: Csr,
    sys_dim: usize,
    bath_dim: usize,
}

impl FullModel {
    pub fn dim(&self) -> usize {
        self.sys_dim * self.bath_dim
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_dim
    }

    pub fn bath_dim(&self) -> usize {
        self.bath_dim
    }

    pub fn hamiltonian(&self) -> &Csr {
        &self.h
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.h.hermitian_defect()
    }

    /// Composite index of system state `s` and bath product state `b`.
    pub fn index(&self, s: usize, b: usize) -> usize {
        s * self.bath_dim + b
    }

    /// Bath product state index for per-mode occupations (first mode most significant).
    pub fn bath_index(&self, occ: &[usize]) -> usize {
        let l = self.bath.ncut_b + 1;
        occ.iter().fold(0, |acc, &n| acc * l + n)
    }
}

pub fn build_full_model(p: &ModelParams, bath: &BathDiscretization) -> Result<FullModel> {
    build_full_model_capped(p, bath, DEFAULT_DIMENSION_CAP)
}

/// H = H_s ⊗ 1 + 1 ⊗ Σ ω_n b†b + (a + a†) ⊗ Σ c_n (b_n + b_n†).
pub fn build_full_model_capped(p: &ModelParams, bath: &BathDiscretization, cap: usize) -> Result<FullModel> {
    p.validate()?;
    let space = p.space()?;
    let sys_dim = space.total_dim();
    let bath_dim = bath.dim();
    let dim = sys_dim.checked_mul(bath_dim).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let hs = Csr::from_dense(build_hamiltonian(p, space).matrix());
    let (a, ad) = ladder_ops(space);
    let x = Csr::from_dense(&(a.matrix() + ad.matrix()));

    let l = bath.ncut_b + 1;
    let b = Csr::from_triplets(l, l, (1..l).map(|n| (n - 1, n, C::new((n as f64).sqrt(), 0.0))));
    let nb = b.adjoint().mul(&b);
    let xb = b.add(&b.adjoint());
    let embed = |op: &Csr, k: usize| {
        let left = Csr::identity(l.pow(k as u32));
        let right = Csr::identity(l.pow((bath.n_modes - k - 1) as u32));
        left.kron(op).kron(&right)
    };
    let mut hb = Csr::zeros(bath_dim, bath_dim);
    let mut coupling = Csr::zeros(bath_dim, bath_dim);
    for k in 0..bath.n_modes {
        hb = hb.add(&embed(&nb, k).scale(C::new(bath.omega[k], 0.0)));
        coupling = coupling.add(&embed(&xb, k).scale(C::new(bath.c[k], 0.0)));
    }
    let h = hs
        .kron(&Csr::identity(bath_dim))
        .add(&Csr::identity(sys_dim).kron(&hb))
        .add(&x.kron(&coupling));
    Ok(FullModel { params: p.clone(), bath: bath.clone(), h, sys_dim, bath_dim })
}

#[derive(Clone, Copy, Debug)]
pub struct BathOptions {
    pub tol: f64,
    /// Number of sampled bath occupations when the bath is warm.
    pub samples: usize,
    pub seed: u64,
    pub cap: usize,
}

impl Default for BathOptions {
    fn default() -> Self {
        BathOptions { tol: 1e-9, samples: 64, seed: 0, cap: DEFAULT_DIMENSION_CAP }
    }
}

#[derive(Clone, Debug)]
pub struct FullEvolution {
    /// Reduced system observables.
    pub traj: Trajectory,
    pub energy_drift: f64,
    pub norm_defect: f64,
    pub branches: usize,
    /// Mean initial occupation per bath mode over the sampled configurations.
    pub bath_mean_occupation: f64,
}

fn sample_occupations(bath: &BathDiscretization, nbar: f64, opts: &BathOptions) -> Result<Vec<Vec<usize>>> {
    if nbar == 0.0 {
        return Ok(vec![vec![0; bath.n_modes]]);
    }
    if !(nbar > 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid bath occupation {nbar}")));
    }
    let q = nbar / (1.0 + nbar);
    let tail = q.powi(bath.ncut_b as i32 + 1);
    if tail > 0.05 {
        return Err(Error::InvalidConfig(format!(
            "bath occupation {nbar} puts weight {tail:.3} above ncut_b = {}",
            bath.ncut_b
        )));
    }
    if opts.samples == 0 {
        return Err(Error::InvalidConfig("need at least one bath sample".into()));
    }
    let geo = Geometric::new(1.0 / (1.0 + nbar)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    Ok((0..opts.samples)
        .map(|_| {
            (0..bath.n_modes)
                .map(|_| loop {
                    let n = geo.sample(&mut rng) as usize;
                    if n <= bath.ncut_b {
                        break n;
                    }
                })
                .collect()
        })
        .collect())
}

fn reduce(psi: &[C], ds: usize, db: usize, w: f64, out: &mut [C]) {
    for j in 0..ds {
        let pj = &psi[j * db..(j + 1) * db];
        for i in 0..ds {
            let pi = &psi[i * db..(i + 1) * db];
            let mut acc = C::new(0.0, 0.0);
            for b in 0..db {
                acc += pi[b] * pj[b].conj();
            }
            out[i + j * ds] += acc * w;
        }
    }
}

struct Branch {
    states: Vec<Vec<C>>,
    energy_drift: f64,
    norm_defect: f64,
}

fn evolve_branch(fm: &FullModel, psi0: Vec<C>, w: f64, grid: &TimeGrid, tol: f64) -> Result<Branch> {
    let (ds, db) = (fm.sys_dim, fm.bath_dim);
    let h = &fm.h;
    let energy = |psi: &[C]| {
        let hp = h.matvec(psi);
        psi.iter().zip(&hp).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
    };
    let e0 = energy(&psi0);
    let mut states = Vec::with_capacity(grid.times().len());
    let mut norm_defect = 0.0f64;
    let mut last = psi0.clone();
    integrate(
        |_, y, dy| {
            h.matvec_into(y, dy);
            for v in dy.iter_mut() {
                *v = C::new(v.im, -v.re);
            }
        },
        0.0,
        &psi0,
        grid.times(),
        OdeOptions::new(tol),
        |_| {},
        |_, _, y| {
            let nrm: f64 = y.iter().map(|v| v.norm_sqr()).sum();
            norm_defect = norm_defect.max((nrm - 1.0).abs());
            let mut r = vec![C::new(0.0, 0.0); ds * ds];
            reduce(y, ds, db, w, &mut r);
            states.push(r);
            last.copy_from_slice(y);
            Ok(())
        },
    )?;
    let e1 = energy(&last);
    let energy_drift = (e1 - e0).abs() / e0.abs().max(1.0);
    Ok(Branch { states, energy_drift, norm_defect })
}

/// Evolves ρ_s ⊗ ρ_bath unitarily and records reduced system observables.
/// A warm bath is represented by seeded samples of product Fock states.
pub fn evolve_full(
    fm: &FullModel,
    rho0_system: &DensityMatrix,
    bath_nbar: f64,
    grid: &TimeGrid,
    opts: &BathOptions,
) -> Result<FullEvolution> {
    check_tol(opts.tol)?;
    if rho0_system.dim() != fm.sys_dim || !matches!(rho0_system.basis(), Basis::SpinMode(_)) {
        return Err(Error::DimensionMismatch(rho0_system.dim(), fm.sys_dim));
    }
    let t_end = grid.t_end();
    if t_end >= fm.bath.horizon() {
        return Err(Error::RecurrenceHorizonExceeded { t_end, t_rec: fm.bath.t_rec });
    }
    let configs = sample_occupations(&fm.bath, bath_nbar, opts)?;
    let bath_mean_occupation = configs.iter().flatten().sum::<usize>() as f64 / (configs.len() * fm.bath.n_modes) as f64;

    let (vals, vecs) = eigh(rho0_system.matrix());
    let comps: Vec<(f64, Vec<C>)> = vals
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-14)
        .map(|(k, &l)| (l, vecs.column(k).iter().copied().collect()))
        .collect();

    let mut jobs = Vec::new();
    for occ in &configs {
        let b = fm.bath_index(occ);
        for (l, v) in &comps {
            let mut psi = vec![C::new(0.0, 0.0); fm.dim()];
            for (s, amp) in v.iter().enumerate() {
                psi[fm.index(s, b)] = *amp;
            }
            jobs.push((l / configs.len() as f64, psi));
        }
    }
    let branches: Vec<Result<Branch>> =
        jobs.into_par_iter().map(|(w, psi)| evolve_branch(fm, psi, w, grid, opts.tol)).collect();

    let ds = fm.sys_dim;
    let nt = grid.times().len();
    let mut acc = vec![vec![C::new(0.0, 0.0); ds * ds]; nt];
    let mut energy_drift = 0.0f64;
    let mut norm_defect = 0.0f64;
    let n_branches = branches.len();
    for br in branches {
        let br = br?;
        energy_drift = energy_drift.max(br.energy_drift);
        norm_defect = norm_defect.max(br.norm_defect);
        for (a, s) in acc.iter_mut().zip(&br.states) {
            for (x, y) in a.iter_mut().zip(s) {
                *x += y;
            }
        }
    }
    let obs = Observables::new(rho0_system.basis());
    let mut traj = Trajectory::default();
    for (t, x) in grid.times().iter().zip(&acc) {
        obs.record(&mut traj, *t, x);
    }
    Ok(FullEvolution { traj, energy_drift, norm_defect, branches: n_branches, bath_mean_occupation })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambShifts {
    /// ω̃ = P∫J(ω)/(ω₀−ω)dω
    pub omega_shift: f64,
    /// g̃/g = 4P∫J(ω)/(ω₀²−ω²)dω
    pub g_shift_per_g: f64,
    /// Δ_d = P∫(2n̄(ω)+1)J(ω)/(ω₀−ω)dω
    pub delta_d: f64,
}

/// P∫_lo^hi f(ω)/(ω₀−ω)dω with a symmetric excision window around ω₀.
pub fn principal_value<F: Fn(f64) -> f64>(f: F, omega0: f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let eps = (omega0 - lo).min(hi - omega0);
    let panels = panels.max(2) + panels % 2;
    let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let mut s = g(a) + g(b);
        for k in 1..panels {
            s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let sym = |u: f64| {
        if u == 0.0 {
            let h = 1e-6 * eps.max(1e-300);
            -(f(omega0 + h) - f(omega0 - h)) / (2.0 * h) * 2.0
        } else {
            (f(omega0 - u) - f(omega0 + u)) / u
        }
    };
    let outer = |w: f64| f(w) / (omega0 - w);
    simpson(&sym, 0.0, eps) + simpson(&outer, lo, omega0 - eps) + simpson(&outer, omega0 + eps, hi)
}

/// Bath-induced Hamiltonian corrections over the discretized band.
/// `nbar0` fixes the bath temperature through the occupation at ω₀.
pub fn lamb_shift_diagnostics(bath: &BathDiscretization, nbar0: f64) -> LambShifts {
    let (lo, hi) = bath.band;
    let w0 = bath.omega0;
    let beta = if nbar0 > 0.0 { (1.0 + 1.0 / nbar0).ln() / w0 } else { f64::INFINITY };
    let occ = |w: f64| if beta.is_infinite() || w <= 0.0 { 0.0 } else { 1.0 / (beta * w).exp_m1() };
    let j = |w: f64| bath.spectral_density(w);
    let n = 4000;
    LambShifts {
        omega_shift: principal_value(j, w0, lo, hi, n),
        g_shift_per_g: 4.0 * principal_value(|w| j(w) / (w0 + w), w0, lo, hi, n),
        delta_d: principal_value(|w| (2.0 * occ(w) + 1.0) * j(w), w0, lo, hi, n),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathComparison {
    pub params: ModelParams,
    pub n_modes: usize,
    pub ncut_b: usize,
    pub band: (f64, f64),
    pub eta: f64,
    pub gamma_target: f64,
    pub bath_nbar: f64,
    pub dim: usize,
    pub t_end: f64,
    pub t_rec: f64,
    pub horizon: f64,
    pub sup_dev_p_d: f64,
    pub sup_dev_n: f64,
    pub energy_drift: f64,
    pub norm_defect: f64,
    pub branches: usize,
    pub shifts: LambShifts,
}

/// Lindblad parameters matching a bath: γ from the discretization, n̄ from the bath,
/// no dephasing.
pub fn lindblad_counterpart(p: &ModelParams, bath: &BathDiscretization, bath_nbar: f64) -> ModelParams {
    ModelParams {
        gamma: bath.gamma_target,
        nbar: bath_nbar,
        nbar0: None,
        gamma_z: 0.0,
        gamma_m: 0.0,
        ..p.clone()
    }
}

/// Runs full and Lindblad evolutions from the same system state and reports sup-norm deviations.
pub fn compare_with_lindblad(
    p: &ModelParams,
    bath: &BathDiscretization,
    rho0_system: &DensityMatrix,
    bath_nbar: f64,
    grid: &TimeGrid,
    opts: &BathOptions,
) -> Result<(BathComparison, FullEvolution, Trajectory)> {
    let fm = build_full_model_capped(p, bath, opts.cap)?;
    let full = evolve_full(&fm, rho0_system, bath_nbar, grid, opts)?;
    let q = lindblad_counterpart(p, bath, bath_nbar);
    let space = q.space()?;
    let eo = EvolveOptions { leak_tol: None, ..EvolveOptions::new(opts.tol) };
    let lind = evolve_with(rho0_system, &build_hamiltonian(&q, space), &build_dissipators(&q, space, true), grid, &eo)?;
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let report = BathComparison {
        params: p.clone(),
        n_modes: bath.n_modes,
        ncut_b: bath.ncut_b,
        band: bath.band,
        eta: bath.eta,
        gamma_target: bath.gamma_target,
        bath_nbar,
        dim: fm.dim(),
        t_end: grid.t_end(),
        t_rec: bath.t_rec,
        horizon: bath.horizon(),
        sup_dev_p_d: sup(&full.traj.p_d, &lind.p_d),
        sup_dev_n: sup(&full.traj.n_avg, &lind.n_avg),
        energy_drift: full.energy_drift,
        norm_defect: full.norm_defect,
        branches: full.branches,
        shifts: lamb_shift_diagnostics(bath, bath_nbar),
    };
    Ok((report, full, lind))
}
