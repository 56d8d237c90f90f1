//! Electron-transfer Hamiltonian, dissipators, initial state and regime metadata.

use crate::error::{Error, Result};
use crate::fock::{
    displacement, ladder_ops, mode_displacement, number_op, spin_ops, spin_product, thermal_state, Basis,
    DensityMatrix, FockSpace, Operator,
};
use crate::linalg::CMat;
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingBasis {
    /// σz in the donor/acceptor basis.
    #[default]
    ModelZ,
    /// σy, the literal lab-frame form.
    LabY,
}

/// Physical parameters in units of ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub omega: f64,
    pub delta_e: f64,
    pub v_x: f64,
    pub g: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub gamma_z: f64,
    pub gamma_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbar0: Option<f64>,
    pub ncut: usize,
    #[serde(default)]
    pub dephasing_basis: DephasingBasis,
}

impl ModelParams {
    pub fn nbar0(&self) -> f64 {
        self.nbar0.unwrap_or(self.nbar)
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.ncut)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.delta_e, self.v_x, self.g, self.gamma, self.nbar, self.gamma_z, self.gamma_m, self.nbar0()]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::InvalidConfig("omega must be > 0".into()));
        }
        if self.gamma < 0.0 || self.nbar < 0.0 || self.nbar0() < 0.0 || self.gamma_z < 0.0 || self.gamma_m < 0.0 {
            return Err(Error::InvalidConfig("rates and occupations must be >= 0".into()));
        }
        self.space().map(|_| ())
    }

    /// γ ≪ ω, recorded as γ < 0.1ω.
    pub fn weak_damping(&self) -> bool {
        self.gamma < 0.1 * self.omega
    }

    /// γβ ≪ 1 with k_BT = ω/ln(1+1/n̄), recorded as γβ < 0.1.
    pub fn markovian(&self) -> bool {
        if self.nbar <= 0.0 {
            return false;
        }
        let beta = (1.0 + 1.0 / self.nbar).ln() / self.omega;
        self.gamma * beta < 0.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Nonadiabatic,
    Adiabatic,
    Intermediate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub lambda: f64,
    pub activation: Option<f64>,
    pub regime: Regime,
    pub weak_damping: bool,
    pub markovian: bool,
}

pub fn derived_quantities(p: &ModelParams) -> DerivedQuantities {
    let lambda = p.g * p.g / p.omega;
    let activation = activation_energy(p).ok();
    let q = lambda / 4.0;
    let regime = if p.v_x < 0.25 * q && p.v_x <= 2.0 * p.gamma {
        Regime::Nonadiabatic
    } else if p.v_x > 0.5 * q && p.v_x > p.gamma {
        Regime::Adiabatic
    } else {
        Regime::Intermediate
    };
    DerivedQuantities { lambda, activation, regime, weak_damping: p.weak_damping(), markovian: p.markovian() }
}

/// U = (ΔE+λ)²/4λ.
pub fn activation_energy(p: &ModelParams) -> Result<f64> {
    if p.g == 0.0 {
        return Err(Error::DegenerateModel("activation energy undefined for g = 0".into()));
    }
    let lambda = p.g * p.g / p.omega;
    Ok((p.delta_e + lambda).powi(2) / (4.0 * lambda))
}

/// H = (ΔE/2)σz + Vx σx + (g/2)σz(a†+a) + ω a†a.
pub fn build_hamiltonian(p: &ModelParams, space: FockSpace) -> Operator {
    let (a, ad) = ladder_ops(space);
    let (sx, _, sz) = spin_ops(space);
    let n = number_op(Basis::SpinMode(space));
    let x = a.matrix() + ad.matrix();
    let r = |v: f64| C::new(v, 0.0);
    let mut h: CMat = sz.matrix() * r(p.delta_e / 2.0)
        + sx.matrix() * r(p.v_x)
        + (sz.matrix() * &x) * r(p.g / 2.0)
        + n.matrix() * r(p.omega);
    crate::linalg::symmetrize(&mut h);
    Operator::hermitian(Basis::SpinMode(space), h).expect("model Hamiltonian is Hermitian")
}

#[derive(Clone, Debug)]
pub struct Channel {
    pub label: &'static str,
    pub op: Operator,
    pub rate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct DissipatorSet {
    pub channels: Vec<Channel>,
}

impl DissipatorSet {
    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.rate).collect()
    }

    pub fn push(&mut self, label: &'static str, op: Operator, rate: f64) {
        assert!(rate >= 0.0);
        if rate > 0.0 {
            self.channels.push(Channel { label, op, rate });
        }
    }
}

/// Cooling channels (a, γ(n̄+1)), (a†, γn̄) plus optional spin and motional dephasing.
/// Zero-rate channels are omitted.
pub fn build_dissipators(p: &ModelParams, space: FockSpace, include_dephasing: bool) -> DissipatorSet {
    let (a, ad) = ladder_ops(space);
    let mut set = DissipatorSet::default();
    set.push("a", a.clone(), p.gamma * (p.nbar + 1.0));
    set.push("adag", ad.clone(), p.gamma * p.nbar);
    if include_dephasing {
        let (_, sy, sz) = spin_ops(space);
        let cz = match p.dephasing_basis {
            DephasingBasis::ModelZ => sz,
            DephasingBasis::LabY => sy,
        };
        set.push("spin", cz, p.gamma_z);
        let m = a.matrix() * ad.matrix() + ad.matrix() * a.matrix();
        set.push("motional", Operator::hermitian(Basis::SpinMode(space), m).unwrap(), p.gamma_m);
    }
    set
}

/// Same channels for the bare mode (used for spin-frozen reductions).
pub fn build_mode_dissipators(p: &ModelParams, space: FockSpace) -> DissipatorSet {
    let (a, ad) = crate::fock::mode_ladder_ops(space);
    let mut set = DissipatorSet::default();
    set.push("a", a, p.gamma * (p.nbar + 1.0));
    set.push("adag", ad, p.gamma * p.nbar);
    set
}

/// |D⟩⟨D| ⊗ D(−g/2ω) ρ_th(n̄0) D(−g/2ω)†.
pub fn initial_state(p: &ModelParams, space: FockSpace) -> Result<DensityMatrix> {
    let alpha = C::new(-p.g / (2.0 * p.omega), 0.0);
    let d = mode_displacement(alpha, space)?;
    let th = thermal_state(p.nbar0(), space)?;
    let m = d.op.matrix() * th.matrix() * d.op.matrix().adjoint();
    let mode = DensityMatrix::from_hermitian_part(Basis::Mode(space), m)?;
    spin_product(0, &mode)
}

/// Spin-embedded displacement used by the sequence emulator.
pub fn donor_displacement(p: &ModelParams, space: FockSpace) -> Result<Operator> {
    Ok(displacement(C::new(-p.g / (2.0 * p.omega), 0.0), space)?.op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::expectation;
    use crate::linalg::{eigvalsh, hermitian_defect};
    use proptest::prelude::*;

    pub(crate) fn params(delta_e: f64, v_x: f64, g: f64, gamma: f64, ncut: usize) -> ModelParams {
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

    #[test]
    fn bare_oscillator_spectrum() {
        let p = params(0.0, 0.0, 0.0, 0.0, 5);
        let h = build_hamiltonian(&p, p.space().unwrap());
        let ev = eigvalsh(h.matrix());
        for (k, e) in ev.iter().enumerate() {
            assert!((e - (k / 2) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn polaron_ladders() {
        let p = params(0.7, 0.0, 0.9, 0.0, 30);
        let h = build_hamiltonian(&p, p.space().unwrap());
        let ev = eigvalsh(h.matrix());
        let mut expect = vec![];
        for n in 0..=15 {
            for s in [1.0, -1.0] {
                expect.push(s * p.delta_e / 2.0 + n as f64 - p.g * p.g / 4.0);
            }
        }
        expect.sort_by(|a, b| a.total_cmp(b));
        for k in 0..20 {
            assert!((ev[k] - expect[k]).abs() < 1e-8, "{k}: {} vs {}", ev[k], expect[k]);
        }
    }

    #[test]
    fn fig1c_parameters_accepted() {
        let p = params(1.0, 0.18, 1.0, 0.014, 20);
        p.validate().unwrap();
        let s = p.space().unwrap();
        assert!(hermitian_defect(build_hamiltonian(&p, s).matrix()) < 1e-12);
        initial_state(&p, s).unwrap();
    }

    #[test]
    fn dissipator_rates() {
        let mut p = params(1.0, 0.0, 0.0, 0.0, 4);
        assert!(build_dissipators(&p, p.space().unwrap(), false).is_empty());
        p.gamma = 0.014;
        let d = build_dissipators(&p, p.space().unwrap(), false);
        let r = d.rates();
        assert!((r[0] - 0.0168).abs() < 1e-15 && (r[1] - 0.0028).abs() < 1e-15);
        p.gamma_z = 0.0013;
        p.gamma_m = 0.0013;
        let d = build_dissipators(&p, p.space().unwrap(), true);
        assert_eq!(d.channels.len(), 4);
        assert_eq!(d.channels[2].rate, 0.0013);
        assert_eq!(d.channels[3].rate, 0.0013);
    }

    #[test]
    fn initial_state_moments() {
        let mut p = params(1.0, 0.1, 0.0, 0.0, 4);
        p.nbar = 0.0;
        let s = p.space().unwrap();
        let rho = initial_state(&p, s).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 1.0).abs() < 1e-15);

        p.g = 1.0;
        p.ncut = 20;
        let s = p.space().unwrap();
        let rho = initial_state(&p, s).unwrap();
        let n = expectation(&number_op(Basis::SpinMode(s)), &rho).unwrap().re;
        assert!((n - 0.25).abs() < 1e-6);
        let (a, ad) = ladder_ops(s);
        let x = a.add(&ad).unwrap();
        assert!((expectation(&x, &rho).unwrap().re + 1.0).abs() < 1e-6);
        let (_, _, sz) = spin_ops(s);
        assert!((expectation(&sz, &rho).unwrap().re - 1.0).abs() < 1e-15);
        assert!((rho.trace() - 1.0).abs() < 1e-12);

        p.ncut = 4;
        assert!(matches!(initial_state(&p, p.space().unwrap()), Err(Error::TruncationTooSmall { .. })));
    }

    #[test]
    fn derived() {
        let p = params(1.0, 0.056, 1.4, 0.06, 12);
        let d = derived_quantities(&p);
        assert!((d.lambda - 1.96).abs() < 1e-12);
        assert!((d.lambda / 4.0 - 0.49).abs() < 1e-12);
        assert_eq!(d.regime, Regime::Nonadiabatic);

        let q = params(1.0, 0.046, 0.521, 0.025, 12);
        let lam = 0.521f64 * 0.521;
        assert!((derived_quantities(&q).lambda - 0.2714).abs() < 1e-4);
        let u = activation_energy(&q).unwrap();
        assert!((u - (1.0 + lam).powi(2) / (4.0 * lam)).abs() < 1e-14);
        assert!((u - 1.4886).abs() < 1e-3);

        let z = params(1.0, 0.1, 0.0, 0.02, 4);
        assert!(matches!(activation_energy(&z), Err(Error::DegenerateModel(_))));
        assert_eq!(derived_quantities(&params(1.0, 0.18, 0.95, 0.02, 12)).regime, Regime::Adiabatic);
    }

    proptest! {
        #[test]
        fn hamiltonian_hermitian(de in -5.0f64..5.0, vx in 0.0f64..1.0, g in 0.0f64..2.0, ncut in 1usize..15) {
            let p = params(de, vx, g, 0.0, ncut);
            prop_assert!(hermitian_defect(build_hamiltonian(&p, p.space().unwrap()).matrix()) < 1e-12);
        }
    }
}
