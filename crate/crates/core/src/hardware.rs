//! Trapped-ion layer: multi-tone Raman Hamiltonian, its reduction to the transfer model,
//! the displacement pulse, sideband phonon readout and sequence emulation.

use crate::error::{Error, Result};
use crate::fock::{mode_displacement, spin_product, thermal_state, Basis, DensityMatrix, FockSpace, Operator};
use crate::linalg::{expm, kron, CMat};
use crate::model::{build_dissipators, build_hamiltonian, initial_state, DissipatorSet, ModelParams};
use crate::ode::{integrate, OdeOptions};
use crate::propagation::{check_tol, evolve_generator, EvolveOptions, Generator, Observables, TimeGrid, Trajectory};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_MU: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub rabi: f64,
    /// Beatnote minus the carrier frequency.
    pub detuning: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub tones: Vec<Tone>,
    /// Lamb-Dicke parameter.
    pub eta: f64,
    /// Sideband detuning from the mode; maps to −ω.
    pub delta: f64,
    /// Sideband beatnote offset.
    pub mu: f64,
}

impl ToneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tones.iter().all(|t| t.rabi.is_finite() && t.detuning.is_finite() && t.phase.is_finite())
            && self.eta.is_finite()
            && self.eta >= 0.0
            && self.delta.is_finite()
            && self.mu.is_finite()
            && self.mu >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig("invalid tone configuration".into()));
        }
        Ok(())
    }

    /// Single carrier tone, no motion coupling.
    pub fn carrier(rabi: f64, phase: f64) -> Self {
        ToneConfig { tones: vec![Tone { rabi, detuning: 0.0, phase }], eta: 0.0, delta: 0.0, mu: 0.0 }
    }

    /// Red and blue sidebands at ∓μ with equal Rabi frequency and phases π.
    pub fn sideband_pair(rabi: f64, eta: f64, delta: f64, mu: f64) -> Self {
        ToneConfig {
            tones: vec![
                Tone { rabi, detuning: -mu, phase: PI },
                Tone { rabi, detuning: mu, phase: PI },
            ],
            eta,
            delta,
            mu,
        }
    }

    /// Four tones realizing the transfer model: Ω_y = ΔE, Ω_x = 2Vx, ηΩ = g, δ = −ω.
    pub fn from_model(p: &ModelParams, eta: f64, mu: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidConfig("eta must be > 0 to map g".into()));
        }
        let mut tc = ToneConfig::sideband_pair(p.g / eta, eta, -p.omega, mu);
        tc.tones.push(Tone { rabi: 2.0 * p.v_x, detuning: 0.0, phase: 0.0 });
        tc.tones.push(Tone { rabi: p.delta_e, detuning: 0.0, phase: PI / 2.0 });
        tc.validate()?;
        Ok(tc)
    }

    fn sideband_kind(&self, t: &Tone) -> Option<bool> {
        let tol = 1e-12 * self.mu.max(1.0);
        if self.mu > 0.0 && (t.detuning + self.mu).abs() < tol {
            Some(false)
        } else if self.mu > 0.0 && (t.detuning - self.mu).abs() < tol {
            Some(true)
        } else {
            None
        }
    }
}

/// η·√⟨(a+a†)²⟩ and whether it stays below the 0.3 advisory bound.
pub fn lamb_dicke_advisory(eta: f64, rho: &DensityMatrix) -> (f64, bool) {
    let s = rho.basis().space();
    let l = s.levels();
    let x = mode_x(s);
    let m = rho.mode_part();
    let x2 = &x * &x;
    let mut acc = 0.0;
    for i in 0..l {
        for k in 0..l {
            acc += (x2[(i, k)] * m.matrix()[(k, i)]).re;
        }
    }
    let v = eta * acc.max(0.0).sqrt();
    (v, v < 0.3)
}

fn mode_lowering(s: FockSpace) -> CMat {
    let l = s.levels();
    let mut a = CMat::zeros(l, l);
    for n in 1..l {
        a[(n - 1, n)] = C::new((n as f64).sqrt(), 0.0);
    }
    a
}

fn mode_x(s: FockSpace) -> CMat {
    let a = mode_lowering(s);
    &a + a.adjoint()
}

fn pauli() -> (CMat, CMat, CMat) {
    let z = C::new(0.0, 0.0);
    let o = C::new(1.0, 0.0);
    let i = C::new(0.0, 1.0);
    (
        CMat::from_row_slice(2, 2, &[z, o, o, z]),
        CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        CMat::from_row_slice(2, 2, &[o, z, z, -o]),
    )
}

fn raising() -> CMat {
    let mut m = CMat::zeros(2, 2);
    m[(0, 1)] = C::new(1.0, 0.0);
    m
}

/// U_x(θ) = exp(−iθσx/2) on spin ⊗ mode.
pub fn spin_rotation_x(space: FockSpace, theta: f64) -> Operator {
    let (sx, _, _) = pauli();
    let u = CMat::identity(2, 2) * C::new((theta / 2.0).cos(), 0.0) - sx * C::new(0.0, (theta / 2.0).sin());
    let id = CMat::identity(space.levels(), space.levels());
    Operator::new(Basis::SpinMode(space), kron(&u, &id)).expect("rotation")
}

fn conjugate(u: &CMat, m: &CMat) -> CMat {
    u * m * u.adjoint()
}

/// Lab state → transfer-model frame, ρ ↦ U_x(π/2) ρ U_x(π/2)†.
pub fn to_model_frame(rho_lab: &DensityMatrix) -> Result<DensityMatrix> {
    let u = spin_rotation_x(rho_lab.basis().space(), PI / 2.0);
    DensityMatrix::from_hermitian_part(rho_lab.basis(), conjugate(u.matrix(), rho_lab.matrix()))
}

pub fn to_lab_frame(rho_model: &DensityMatrix) -> Result<DensityMatrix> {
    let u = spin_rotation_x(rho_model.basis().space(), PI / 2.0);
    DensityMatrix::from_hermitian_part(rho_model.basis(), conjugate(&u.matrix().adjoint(), rho_model.matrix()))
}

/// Model channels seen from the lab frame, c ↦ U† c U.
pub fn lab_dissipators(p: &ModelParams, space: FockSpace) -> DissipatorSet {
    let u = spin_rotation_x(space, PI / 2.0);
    let ud = u.matrix().adjoint();
    let mut set = DissipatorSet::default();
    for ch in build_dissipators(p, space, true).channels {
        let m = conjugate(&ud, ch.op.matrix());
        set.push(ch.label, Operator::new(Basis::SpinMode(space), m).expect("channel"), ch.rate);
    }
    set
}

fn tone_factor(t: &Tone, time: f64) -> C {
    C::from_polar(t.rabi / 2.0, -t.detuning * time - t.phase)
}

fn assemble(space: FockSpace, tc: &ToneConfig, up: &CMat) -> Operator {
    let l = space.levels();
    let mut h = kron(&raising(), up);
    h += h.adjoint();
    let mut n = CMat::zeros(l, l);
    for k in 0..l {
        n[(k, k)] = C::new(-tc.delta * k as f64, 0.0);
    }
    h += kron(&CMat::identity(2, 2), &n);
    crate::linalg::symmetrize(&mut h);
    Operator::hermitian(Basis::SpinMode(space), h).expect("Hermitian by construction")
}

/// Exact exponential factor e^{iη(a e^{−iμt} + a† e^{iμt})} = R(μt) e^{iη(a+a†)} R(μt)†,
/// with R(θ) = e^{iθ a†a}.
struct MotionFactor {
    m: CMat,
}

impl MotionFactor {
    fn new(space: FockSpace, eta: f64) -> Self {
        MotionFactor { m: expm(&(mode_x(space) * C::new(0.0, eta))) }
    }

    fn at(&self, mu: f64, t: f64) -> CMat {
        let l = self.m.nrows();
        CMat::from_fn(l, l, |i, k| self.m[(i, k)] * C::from_polar(1.0, mu * t * (i as f64 - k as f64)))
    }
}

/// Lab-frame interaction Hamiltonian Σ_k (Ω_k/2)(e^{iη(a e^{−iμt}+a†e^{iμt})} e^{−iΔ_k t − iφ_k} σ⁺ + h.c.) − δ a†a.
pub fn interaction_hamiltonian(tc: &ToneConfig, space: FockSpace, t: f64) -> Operator {
    let mf = MotionFactor::new(space, tc.eta);
    full_at(tc, space, &mf, t)
}

fn full_at(tc: &ToneConfig, space: FockSpace, mf: &MotionFactor, t: f64) -> Operator {
    let f: C = tc.tones.iter().map(|k| tone_factor(k, t)).sum();
    assemble(space, tc, &(mf.at(tc.mu, t) * f))
}

/// Same Hamiltonian with the motional exponential expanded to first order in η.
pub fn taylor_hamiltonian(tc: &ToneConfig, space: FockSpace, t: f64) -> Operator {
    let f: C = tc.tones.iter().map(|k| tone_factor(k, t)).sum();
    let a = mode_lowering(space);
    let l = space.levels();
    let lin = CMat::identity(l, l) + (&a * C::from_polar(1.0, -tc.mu * t) + a.adjoint() * C::from_polar(1.0, tc.mu * t)) * C::new(0.0, tc.eta);
    assemble(space, tc, &(lin * f))
}

/// Lamb-Dicke, rotating-wave form: carriers give (Ω/2)(cosφ σx + sinφ σy), sidebands at ∓μ give
/// (iηΩ/2)(a e^{−iφ_r} or a† e^{−iφ_b})σ⁺ + h.c., other tones are dropped.
pub fn effective_hamiltonian(tc: &ToneConfig, space: FockSpace) -> Operator {
    let a = mode_lowering(space);
    let l = space.levels();
    let mut up = CMat::zeros(l, l);
    for t in &tc.tones {
        let amp = C::from_polar(t.rabi / 2.0, -t.phase);
        if t.detuning == 0.0 {
            up += CMat::identity(l, l) * amp;
        } else if let Some(blue) = tc.sideband_kind(t) {
            let op = if blue { a.adjoint() } else { a.clone() };
            up += op * (amp * C::new(0.0, tc.eta));
        }
    }
    assemble(space, tc, &up)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianForm {
    /// Time-dependent exponential form.
    #[default]
    Full,
    /// Lamb-Dicke, rotating-wave reduction.
    Effective,
}

#[derive(Clone, Debug)]
pub struct LabOptions {
    pub tol: f64,
    pub form: HamiltonianForm,
    /// Lab-frame channels.
    pub dissipators: DissipatorSet,
}

impl LabOptions {
    pub fn new(tol: f64) -> Self {
        LabOptions { tol, form: HamiltonianForm::Full, dissipators: DissipatorSet::default() }
    }
}

#[derive(Clone, Debug)]
pub struct LabTrajectory {
    /// Observables after mapping each state into the model frame.
    pub model: Trajectory,
    /// Lab-frame spin-up population.
    pub p_up: Vec<f64>,
    pub states: Vec<CMat>,
}

/// Times snapped to multiples of π/μ, where the carrier-level micromotion of the
/// sideband pair returns to identity.
pub fn stroboscopic_grid(t_end: f64, samples: usize, mu: f64) -> Result<TimeGrid> {
    let g = TimeGrid::uniform(t_end, samples)?;
    if !(mu > 0.0) {
        return Ok(g);
    }
    let q = PI / mu;
    let mut times: Vec<f64> = g.times().iter().map(|t| (t / q).round() * q).collect();
    times.dedup();
    TimeGrid::new(times)
}

pub fn evolve_lab(tc: &ToneConfig, rho0: &DensityMatrix, grid: &TimeGrid, tol: f64) -> Result<LabTrajectory> {
    evolve_lab_with(tc, rho0, grid, &LabOptions::new(tol))
}

pub fn evolve_lab_with(tc: &ToneConfig, rho0: &DensityMatrix, grid: &TimeGrid, opts: &LabOptions) -> Result<LabTrajectory> {
    tc.validate()?;
    check_tol(opts.tol)?;
    let space = match rho0.basis() {
        Basis::SpinMode(s) => s,
        Basis::Mode(_) => return Err(Error::DimensionMismatch(rho0.dim(), 2 * rho0.dim())),
    };
    let d = rho0.dim();
    let states = match opts.form {
        HamiltonianForm::Effective => {
            let gen = Generator::new(&effective_hamiltonian(tc, space), &opts.dissipators)?;
            let eo = EvolveOptions { leak_tol: None, snapshots: true, ..EvolveOptions::new(opts.tol) };
            evolve_generator(&gen, rho0, grid, &eo)?.snapshots.unwrap()
        }
        HamiltonianForm::Full => {
            let fastest = tc.tones.iter().map(|t| t.detuning.abs()).fold(tc.mu, f64::max);
            let mut ode = OdeOptions::new(opts.tol);
            if fastest > 0.0 {
                ode.h_max = 2.0 * PI / fastest / 40.0;
            }
            let diss = Generator::new(&Operator::hermitian(Basis::SpinMode(space), CMat::zeros(d, d))?, &opts.dissipators)?;
            let mf = MotionFactor::new(space, tc.eta);
            let mut scratch = Vec::new();
            let mut out = Vec::new();
            integrate(
                |t, x, dx| {
                    diss.apply(x, dx, &mut scratch);
                    let h = full_at(tc, space, &mf, t).into_matrix();
                    let rho = CMat::from_column_slice(d, d, x);
                    let comm = &h * &rho - &rho * &h;
                    for (o, c) in dx.iter_mut().zip(comm.as_slice()) {
                        *o += C::new(c.im, -c.re);
                    }
                },
                0.0,
                rho0.matrix().as_slice(),
                grid.times(),
                ode,
                |x| crate::propagation::symmetrize_slice(x, d),
                |_, _, x| {
                    out.push(CMat::from_column_slice(d, d, x));
                    Ok(())
                },
            )?;
            out
        }
    };
    let u = spin_rotation_x(space, PI / 2.0);
    let obs = Observables::new(rho0.basis());
    let mut model = Trajectory::default();
    let l = space.levels();
    let mut p_up = Vec::with_capacity(states.len());
    for (t, s) in grid.times().iter().zip(&states) {
        p_up.push((0..l).map(|n| s[(n, n)].re).sum());
        let m = conjugate(u.matrix(), s);
        obs.record(&mut model, *t, m.as_slice());
    }
    Ok(LabTrajectory { model, p_up, states })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementPulse {
    pub tones: ToneConfig,
    pub duration: f64,
    /// Expected net displacement g/2δ = −g/2ω.
    pub target: f64,
}

/// Sideband pair at half the transfer Rabi frequency, applied for π/|δ|.
pub fn displacement_pulse(p: &ModelParams, eta: f64, mu: f64) -> Result<DisplacementPulse> {
    let delta = -p.omega;
    if delta == 0.0 {
        return Err(Error::ZeroDetuning);
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig("eta must be > 0".into()));
    }
    let tones = ToneConfig::sideband_pair(p.g / eta / 2.0, eta, delta, mu);
    Ok(DisplacementPulse { tones, duration: PI / delta.abs(), target: p.g / (2.0 * delta) })
}

/// P_↑(t) = ½ Σ p(n) [1 − e^{−α_m t} cos(√(n+1) ηΩ t)].
pub fn bsb_signal(populations: &[f64], eta_omega: f64, alpha_m: f64, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            let damp = (-alpha_m * t).exp();
            0.5 * populations
                .iter()
                .enumerate()
                .map(|(n, p)| p * (1.0 - damp * (((n + 1) as f64).sqrt() * eta_omega * t).cos()))
                .sum::<f64>()
        })
        .collect()
}

pub fn bsb_readout(rho_m: &DensityMatrix, eta_omega: f64, alpha_m: f64, times: &[f64]) -> Result<Vec<f64>> {
    if !(alpha_m >= 0.0) {
        return Err(Error::InvalidConfig("alpha_m must be ≥ 0".into()));
    }
    let pops = match rho_m.basis() {
        Basis::Mode(_) => rho_m.fock_populations(),
        Basis::SpinMode(_) => rho_m.mode_part().fock_populations(),
    };
    Ok(bsb_signal(&pops, eta_omega, alpha_m, times))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhononFit {
    pub populations: Vec<f64>,
    pub n_avg: f64,
    pub residual: f64,
}

/// Least squares over p(n), n < n_fit, with p ≥ 0 and Σp = 1. Solved exactly by
/// enumerating supports of the simplex-constrained problem.
pub fn fit_phonon_populations(
    times: &[f64],
    signal: &[f64],
    eta_omega: f64,
    alpha_m: f64,
    n_fit: usize,
) -> Result<PhononFit> {
    if times.len() != signal.len() {
        return Err(Error::DimensionMismatch(times.len(), signal.len()));
    }
    if n_fit == 0 || n_fit > 12 {
        return Err(Error::InvalidConfig(format!("n_fit {n_fit} outside 1..=12")));
    }
    if times.len() < n_fit {
        return Err(Error::FitDiverged("fewer samples than populations".into()));
    }
    let cols: Vec<Vec<f64>> = (0..n_fit)
        .map(|n| {
            let mut e = vec![0.0; n_fit];
            e[n] = 1.0;
            bsb_signal(&e, eta_omega, alpha_m, times)
        })
        .collect();
    let cost = |p: &[f64]| -> f64 {
        (0..times.len())
            .map(|k| {
                let m: f64 = (0..n_fit).map(|n| p[n] * cols[n][k]).sum();
                (m - signal[k]).powi(2)
            })
            .sum()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n_fit) {
        let sup: Vec<usize> = (0..n_fit).filter(|n| mask >> n & 1 == 1).collect();
        let s = sup.len();
        let mut kkt = DMatrix::<f64>::zeros(s + 1, s + 1);
        let mut rhs = DVector::<f64>::zeros(s + 1);
        for (i, &ni) in sup.iter().enumerate() {
            for (j, &nj) in sup.iter().enumerate() {
                kkt[(i, j)] = 2.0 * cols[ni].iter().zip(&cols[nj]).map(|(a, b)| a * b).sum::<f64>();
            }
            kkt[(i, s)] = 1.0;
            kkt[(s, i)] = 1.0;
            rhs[i] = 2.0 * cols[ni].iter().zip(signal).map(|(a, b)| a * b).sum::<f64>();
        }
        rhs[s] = 1.0;
        let Some(x) = kkt.lu().solve(&rhs) else { continue };
        if sup.iter().enumerate().any(|(i, _)| x[i] < -1e-12) {
            continue;
        }
        let mut p = vec![0.0; n_fit];
        for (i, &n) in sup.iter().enumerate() {
            p[n] = x[i].max(0.0);
        }
        let c = cost(&p);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, p));
        }
    }
    let (residual, populations) = best.ok_or_else(|| Error::FitDiverged("no feasible population vector".into()))?;
    let n_avg = populations.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    Ok(PhononFit { populations, n_avg, residual })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementPath {
    /// Apply D(∓g/2ω) on the donor/acceptor branches directly.
    #[default]
    Ideal,
    /// Evolve the sideband-pair pulse.
    Pulsed,
}

impl DisplacementPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            DisplacementPath::Ideal => "ideal",
            DisplacementPath::Pulsed => "pulsed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    PD,
    Phonon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum Step {
    Prepare { nbar0: f64 },
    RotateX { angle: f64 },
    /// Duration defaults to π/|δ|.
    Displace { duration: Option<f64> },
    Simulate { times: Vec<f64> },
    Measure { kind: MeasureKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequencePlan {
    pub steps: Vec<Step>,
    #[serde(default)]
    pub path: DisplacementPath,
    pub eta: f64,
    pub mu: f64,
    /// Hamiltonian used for the pulsed displacement.
    #[serde(default)]
    pub pulse_form: HamiltonianForm,
    /// Hamiltonian used during the transfer evolution.
    #[serde(default = "effective_form")]
    pub simulate_form: HamiltonianForm,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    pub tol: f64,
}

fn effective_form() -> HamiltonianForm {
    HamiltonianForm::Effective
}

impl SequencePlan {
    /// prepare → U_x(π/2) → displace → simulate → U_x(π/2) → measure.
    pub fn standard(nbar0: f64, times: Vec<f64>, path: DisplacementPath, measure: MeasureKind) -> Self {
        SequencePlan {
            steps: vec![
                Step::Prepare { nbar0 },
                Step::RotateX { angle: PI / 2.0 },
                Step::Displace { duration: None },
                Step::Simulate { times },
                Step::RotateX { angle: PI / 2.0 },
                Step::Measure { kind: measure },
            ],
            path,
            eta: 0.1,
            mu: DEFAULT_MU,
            pulse_form: HamiltonianForm::Effective,
            simulate_form: HamiltonianForm::Effective,
            shots: None,
            seed: 0,
            tol: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_tol(self.tol)?;
        if !matches!(self.steps.first(), Some(Step::Prepare { .. })) {
            return Err(Error::InvalidConfig("sequence must start with prepare".into()));
        }
        let measures = self.steps.iter().filter(|s| matches!(s, Step::Measure { .. })).count();
        if measures != 1 || !matches!(self.steps.last(), Some(Step::Measure { .. })) {
            return Err(Error::InvalidConfig("sequence must end with a single measure".into()));
        }
        let mut simulate = 0;
        for s in &self.steps {
            match s {
                Step::Prepare { nbar0 } if !(*nbar0 >= 0.0) => {
                    return Err(Error::InvalidConfig("nbar0 must be ≥ 0".into()))
                }
                Step::RotateX { angle } if !angle.is_finite() => {
                    return Err(Error::InvalidConfig("rotation angle must be finite".into()))
                }
                Step::Displace { duration: Some(d) } if !(*d > 0.0) => {
                    return Err(Error::InvalidConfig("displacement duration must be > 0".into()))
                }
                Step::Simulate { times } => {
                    simulate += 1;
                    if !times.iter().all(|t| *t == 0.0) {
                        TimeGrid::new(times.clone())?;
                    } else if times.is_empty() {
                        return Err(Error::InvalidConfig("simulate needs at least one time".into()));
                    }
                }
                _ => {}
            }
        }
        if simulate > 1 {
            return Err(Error::InvalidConfig("at most one simulate step".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    pub path: DisplacementPath,
    pub kind: MeasureKind,
    /// Model-frame observables of the state before the final rotation.
    pub traj: Trajectory,
    /// Measured value per time: P(↑z) or ⟨n⟩, shot-sampled when requested.
    pub measured: Vec<f64>,
    pub phonon_populations: Option<Vec<Vec<f64>>>,
}

pub const SEQUENCE_COLUMNS: [&str; 4] = ["t", "omega_t_over_2pi", "measured", "path"];

impl SequenceResult {
    pub fn csv_rows(&self, omega: f64) -> Vec<Vec<String>> {
        let mut rows = self.traj.csv_rows(omega);
        for (r, m) in rows.iter_mut().zip(&self.measured) {
            r.push(crate::io::fmt12(*m));
            r.push(self.path.as_str().to_string());
        }
        rows
    }

    pub fn csv_header() -> Vec<String> {
        crate::propagation::TRAJECTORY_COLUMNS
            .iter()
            .chain(["measured", "path"].iter())
            .map(|s| s.to_string())
            .collect()
    }
}

fn apply_unitary(states: &mut [CMat], u: &CMat) {
    for s in states.iter_mut() {
        *s = conjugate(u, s);
    }
}

/// Runs the plan in the lab frame with transfer tones and cooling mapped from `p`.
pub fn emulate_sequence(plan: &SequencePlan, p: &ModelParams) -> Result<SequenceResult> {
    plan.validate()?;
    p.validate()?;
    let space = p.space()?;
    let basis = Basis::SpinMode(space);
    let l = space.levels();
    let mut states: Vec<CMat> = Vec::new();
    let mut times = vec![0.0];
    let mut before_final: Option<Vec<CMat>> = None;
    let mut kind = MeasureKind::PD;
    let n_rot = plan.steps.iter().filter(|s| matches!(s, Step::RotateX { .. })).count();
    let mut rot_seen = 0;
    for step in &plan.steps {
        match step {
            Step::Prepare { nbar0 } => {
                let th = thermal_state(*nbar0, space)?;
                states = vec![spin_product(1, &th)?.into_matrix()];
            }
            Step::RotateX { angle } => {
                rot_seen += 1;
                if rot_seen == n_rot && n_rot > 1 {
                    before_final = Some(states.clone());
                }
                apply_unitary(&mut states, spin_rotation_x(space, *angle).matrix());
            }
            Step::Displace { duration } => match plan.path {
                DisplacementPath::Ideal => {
                    let alpha = C::new(-p.g / (2.0 * p.omega), 0.0);
                    let dp = mode_displacement(alpha, space)?.op.into_matrix();
                    let dm = mode_displacement(-alpha, space)?.op.into_matrix();
                    let (_, sy, _) = pauli();
                    let id2 = CMat::identity(2, 2);
                    let pu = (&id2 + &sy) * C::new(0.5, 0.0);
                    let pd = (&id2 - &sy) * C::new(0.5, 0.0);
                    let u = kron(&pu, &dp) + kron(&pd, &dm);
                    apply_unitary(&mut states, &u);
                }
                DisplacementPath::Pulsed => {
                    let pulse = displacement_pulse(p, plan.eta, plan.mu)?;
                    let dur = duration.unwrap_or(pulse.duration);
                    let opts = LabOptions { tol: plan.tol, form: plan.pulse_form, dissipators: DissipatorSet::default() };
                    let grid = TimeGrid::new(vec![0.0, dur])?;
                    let mut next = Vec::with_capacity(states.len());
                    for s in &states {
                        let rho = DensityMatrix::from_hermitian_part(basis, s.clone())?;
                        next.push(evolve_lab_with(&pulse.tones, &rho, &grid, &opts)?.states.pop().unwrap());
                    }
                    states = next;
                }
            },
            Step::Simulate { times: ts } => {
                if states.len() != 1 {
                    return Err(Error::InvalidConfig("simulate needs a single prepared state".into()));
                }
                let tc = ToneConfig::from_model(p, plan.eta, plan.mu)?;
                let opts = LabOptions { tol: plan.tol, form: plan.simulate_form, dissipators: lab_dissipators(p, space) };
                let rho = DensityMatrix::from_hermitian_part(basis, states.pop().unwrap())?;
                states = if ts.iter().all(|t| *t == 0.0) {
                    vec![rho.into_matrix(); ts.len()]
                } else {
                    evolve_lab_with(&tc, &rho, &TimeGrid::new(ts.clone())?, &opts)?.states
                };
                times = ts.clone();
            }
            Step::Measure { kind: k } => kind = *k,
        }
    }
    let pre = before_final.unwrap_or_else(|| states.clone());
    let obs = Observables::new(basis);
    let mut traj = Trajectory::default();
    let u = spin_rotation_x(space, PI / 2.0);
    for (t, s) in times.iter().zip(&pre) {
        obs.record(&mut traj, *t, conjugate(u.matrix(), s).as_slice());
    }
    let mut phonon = None;
    let mut measured: Vec<f64> = match kind {
        MeasureKind::PD => states.iter().map(|s| (0..l).map(|n| s[(n, n)].re).sum()).collect(),
        MeasureKind::Phonon => {
            let pops: Vec<Vec<f64>> = states.iter().map(|s| (0..l).map(|n| s[(n, n)].re + s[(n + l, n + l)].re).collect()).collect();
            let m = pops.iter().map(|p| p.iter().enumerate().map(|(n, v)| n as f64 * v).sum()).collect();
            phonon = Some(pops);
            m
        }
    };
    if let (Some(shots), MeasureKind::PD) = (plan.shots, kind) {
        if shots == 0 {
            return Err(Error::InvalidConfig("shots must be > 0".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(plan.seed);
        for m in measured.iter_mut() {
            let b = Binomial::new(shots, m.clamp(0.0, 1.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            *m = b.sample(&mut rng) as f64 / shots as f64;
        }
    }
    Ok(SequenceResult { path: plan.path, kind, traj, measured, phonon_populations: phonon })
}

/// Model-path reference: master-equation evolution from the prepared donor state with the same channels.
pub fn model_path(p: &ModelParams, times: &[f64], tol: f64) -> Result<Trajectory> {
    let space = p.space()?;
    let gen = Generator::new(&build_hamiltonian(p, space), &build_dissipators(p, space, true))?;
    let eo = EvolveOptions { leak_tol: None, ..EvolveOptions::new(tol) };
    evolve_generator(&gen, &initial_state(p, space)?, &TimeGrid::new(times.to_vec())?, &eo)
}
