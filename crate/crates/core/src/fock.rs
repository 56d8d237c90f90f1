//! Truncated spin ⊗ Fock algebra.
//!
//! Basis ordering is spin-major: `index = s·(ncut+1) + n`, with `s = 0` the
//! donor (σz = +1) and `s = 1` the acceptor.

use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, expm, hermitian_defect, kron, symmetrize, trace, CMat};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockSpace {
    ncut: usize,
}

impl FockSpace {
    pub fn new(ncut: usize) -> Result<Self> {
        if ncut < 1 {
            return Err(Error::TruncationTooSmall { ncut, required: 1 });
        }
        Ok(FockSpace { ncut })
    }

    pub fn ncut(&self) -> usize {
        self.ncut
    }

    pub fn levels(&self) -> usize {
        self.ncut + 1
    }

    pub fn total_dim(&self) -> usize {
        2 * self.levels()
    }

    pub fn index(&self, spin: usize, n: usize) -> usize {
        spin * self.levels() + n
    }
}

/// Which space an operator acts on: the full spin ⊗ mode space or the mode alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    SpinMode(FockSpace),
    Mode(FockSpace),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match self {
            Basis::SpinMode(s) => s.total_dim(),
            Basis::Mode(s) => s.levels(),
        }
    }

    pub fn space(&self) -> FockSpace {
        match self {
            Basis::SpinMode(s) | Basis::Mode(s) => *s,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    basis: Basis,
    m: CMat,
    hermitian: bool,
}

impl Operator {
    pub fn new(basis: Basis, m: CMat) -> Result<Self> {
        if m.nrows() != basis.dim() || m.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch(m.nrows(), basis.dim()));
        }
        Ok(Operator { basis, m, hermitian: false })
    }

    /// Marks the operator Hermitian after verifying the defect is below 1e-12.
    pub fn hermitian(basis: Basis, m: CMat) -> Result<Self> {
        let mut op = Self::new(basis, m)?;
        let d = hermitian_defect(&op.m);
        if d >= 1e-12 {
            return Err(Error::NotHermitian(d));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn adjoint(&self) -> Operator {
        Operator { basis: self.basis, m: self.m.adjoint(), hermitian: self.hermitian }
    }

    pub fn mul(&self, o: &Operator) -> Result<Operator> {
        self.check(o.basis)?;
        Ok(Operator { basis: self.basis, m: &self.m * &o.m, hermitian: false })
    }

    pub fn add(&self, o: &Operator) -> Result<Operator> {
        self.check(o.basis)?;
        Ok(Operator { basis: self.basis, m: &self.m + &o.m, hermitian: self.hermitian && o.hermitian })
    }

    pub fn scale(&self, s: f64) -> Operator {
        Operator { basis: self.basis, m: &self.m * C::new(s, 0.0), hermitian: self.hermitian }
    }

    pub fn scale_complex(&self, s: C) -> Operator {
        Operator { basis: self.basis, m: &self.m * s, hermitian: self.hermitian && s.im == 0.0 }
    }

    fn check(&self, b: Basis) -> Result<()> {
        if self.basis != b {
            return Err(Error::DimensionMismatch(self.dim(), b.dim()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    basis: Basis,
    m: CMat,
}

impl DensityMatrix {
    /// Validates trace, Hermiticity and positivity.
    pub fn new(basis: Basis, m: CMat) -> Result<Self> {
        if m.nrows() != basis.dim() || m.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch(m.nrows(), basis.dim()));
        }
        let tr = trace(&m);
        if (tr - C::new(1.0, 0.0)).norm() >= 1e-9 {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let h = hermitian_defect(&m);
        if h >= 1e-12 {
            return Err(Error::InvalidState(format!("hermitian defect {h:.3e}")));
        }
        let lo = eigvalsh(&m)[0];
        if lo <= -1e-9 {
            return Err(Error::InvalidState(format!("min eigenvalue {lo:.3e}")));
        }
        Ok(DensityMatrix { basis, m })
    }

    /// Symmetrizes before validation; for states built from products.
    pub fn from_hermitian_part(basis: Basis, mut m: CMat) -> Result<Self> {
        symmetrize(&mut m);
        Self::new(basis, m)
    }

    pub(crate) fn from_raw(basis: Basis, m: CMat) -> Self {
        DensityMatrix { basis, m }
    }

    pub fn pure(basis: Basis, psi: &[C]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        let nrm = v.norm();
        let v = v / C::new(nrm, 0.0);
        Self::from_hermitian_part(basis, &v * v.adjoint())
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    pub fn trace(&self) -> f64 {
        trace(&self.m).re
    }

    /// Populations of each Fock level, summed over spin.
    pub fn fock_populations(&self) -> Vec<f64> {
        let s = self.basis.space();
        let l = s.levels();
        let mut p = vec![0.0; l];
        for (i, pi) in p.iter_mut().enumerate() {
            *pi = match self.basis {
                Basis::Mode(_) => self.m[(i, i)].re,
                Basis::SpinMode(_) => self.m[(i, i)].re + self.m[(l + i, l + i)].re,
            };
        }
        p
    }

    /// Reduced mode state (trace over spin).
    pub fn mode_part(&self) -> DensityMatrix {
        match self.basis {
            Basis::Mode(_) => self.clone(),
            Basis::SpinMode(s) => {
                let l = s.levels();
                let m = self.m.view((0, 0), (l, l)) + self.m.view((l, l), (l, l));
                DensityMatrix { basis: Basis::Mode(s), m }
            }
        }
    }
}

fn mode_lowering(space: FockSpace) -> CMat {
    let l = space.levels();
    let mut a = CMat::zeros(l, l);
    for n in 1..l {
        a[(n - 1, n)] = C::new((n as f64).sqrt(), 0.0);
    }
    a
}

fn embed(_space: FockSpace, spin: &CMat, mode: &CMat) -> CMat {
    kron(spin, mode)
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

/// (a, a†) on the spin ⊗ mode space.
pub fn ladder_ops(space: FockSpace) -> (Operator, Operator) {
    let a = embed(space, &CMat::identity(2, 2), &mode_lowering(space));
    let ad = a.adjoint();
    let b = Basis::SpinMode(space);
    (Operator { basis: b, m: a, hermitian: false }, Operator { basis: b, m: ad, hermitian: false })
}

/// (a, a†) on the mode alone.
pub fn mode_ladder_ops(space: FockSpace) -> (Operator, Operator) {
    let a = mode_lowering(space);
    let ad = a.adjoint();
    let b = Basis::Mode(space);
    (Operator { basis: b, m: a, hermitian: false }, Operator { basis: b, m: ad, hermitian: false })
}

pub fn spin_ops(space: FockSpace) -> (Operator, Operator, Operator) {
    let (x, y, z) = pauli();
    let id = CMat::identity(space.levels(), space.levels());
    let b = Basis::SpinMode(space);
    let mk = |s: &CMat| Operator { basis: b, m: embed(space, s, &id), hermitian: true };
    (mk(&x), mk(&y), mk(&z))
}

pub fn number_op(basis: Basis) -> Operator {
    let s = basis.space();
    let n = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        s.levels(),
        (0..s.levels()).map(|k| C::new(k as f64, 0.0)),
    ));
    let m = match basis {
        Basis::Mode(_) => n,
        Basis::SpinMode(_) => embed(s, &CMat::identity(2, 2), &n),
    };
    Operator { basis, m, hermitian: true }
}

pub fn identity(basis: Basis) -> Operator {
    Operator { basis, m: CMat::identity(basis.dim(), basis.dim()), hermitian: true }
}

/// Projector onto a spin state ⊗ mode identity; `spin = 0` is the donor.
pub fn spin_projector(space: FockSpace, spin: usize) -> Operator {
    let mut p = CMat::zeros(2, 2);
    p[(spin, spin)] = C::new(1.0, 0.0);
    let id = CMat::identity(space.levels(), space.levels());
    Operator { basis: Basis::SpinMode(space), m: embed(space, &p, &id), hermitian: true }
}

#[derive(Clone, Debug)]
pub struct Displacement {
    pub op: Operator,
    pub unitarity_defect: f64,
}

pub fn displacement_required_ncut(alpha: C) -> usize {
    (4.0 * (alpha.norm_sqr() + 1.0)).ceil() as usize
}

/// D(α) on the mode alone.
pub fn mode_displacement(alpha: C, space: FockSpace) -> Result<Displacement> {
    let req = displacement_required_ncut(alpha);
    if space.ncut() < req {
        return Err(Error::TruncationTooSmall { ncut: space.ncut(), required: req });
    }
    Ok(mode_displacement_unchecked(alpha, space))
}

pub(crate) fn mode_displacement_unchecked(alpha: C, space: FockSpace) -> Displacement {
    let a = mode_lowering(space);
    let gen = &a.adjoint() * alpha - &a * alpha.conj();
    let d = expm(&gen);
    let defect = crate::linalg::max_abs(&(d.adjoint() * &d - CMat::identity(d.nrows(), d.nrows())));
    Displacement { op: Operator { basis: Basis::Mode(space), m: d, hermitian: false }, unitarity_defect: defect }
}

/// 1 ⊗ D(α) on the spin ⊗ mode space.
pub fn displacement(alpha: C, space: FockSpace) -> Result<Displacement> {
    let d = mode_displacement(alpha, space)?;
    let m = embed(space, &CMat::identity(2, 2), d.op.matrix());
    Ok(Displacement { op: Operator { basis: Basis::SpinMode(space), m, hermitian: false }, unitarity_defect: d.unitarity_defect })
}

/// Occupation carried by the untruncated geometric tail beyond `ncut`,
/// Σ_{n>ncut} n·p_n. Callers treat values above 1e-8 as leakage.
pub fn thermal_tail_weight(nbar: f64, space: FockSpace) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    let q = nbar / (1.0 + nbar);
    let l = space.levels() as f64;
    q.powi(space.levels() as i32) * (l + q / (1.0 - q))
}

/// Mode thermal state ∝ e^{−nω/k_BT} with k_BT = ω/ln(1+1/n̄).
pub fn thermal_state(nbar: f64, space: FockSpace) -> Result<DensityMatrix> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidState(format!("nbar {nbar}")));
    }
    let p = thermal_populations(nbar, space.levels());
    let m = CMat::from_diagonal(&nalgebra::DVector::from_iterator(p.len(), p.iter().map(|&x| C::new(x, 0.0))));
    Ok(DensityMatrix { basis: Basis::Mode(space), m })
}

/// Normalized truncated geometric populations.
pub fn thermal_populations(nbar: f64, levels: usize) -> Vec<f64> {
    if nbar == 0.0 {
        let mut p = vec![0.0; levels];
        p[0] = 1.0;
        return p;
    }
    let q = nbar / (1.0 + nbar);
    let raw: Vec<f64> = (0..levels).map(|n| q.powi(n as i32)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Spin basis state (`spin = 0` donor) ⊗ mode state.
pub fn spin_product(spin: usize, mode: &DensityMatrix) -> Result<DensityMatrix> {
    let s = match mode.basis {
        Basis::Mode(s) => s,
        Basis::SpinMode(_) => return Err(Error::DimensionMismatch(mode.dim(), mode.dim() / 2)),
    };
    let mut p = CMat::zeros(2, 2);
    p[(spin, spin)] = C::new(1.0, 0.0);
    Ok(DensityMatrix { basis: Basis::SpinMode(s), m: embed(s, &p, &mode.m) })
}

/// Tr(op·ρ). For Hermitian operators the imaginary residue is checked and dropped.
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<C> {
    if op.basis != rho.basis {
        return Err(Error::DimensionMismatch(op.dim(), rho.dim()));
    }
    let d = op.dim();
    let mut acc = C::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            acc += op.m[(i, k)] * rho.m[(k, i)];
        }
    }
    if op.hermitian {
        let scale = crate::linalg::max_abs(&op.m).max(1.0);
        if acc.im.abs() > 1e-9 * scale {
            return Err(Error::NotHermitian(acc.im.abs()));
        }
        acc.im = 0.0;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(n: usize) -> FockSpace {
        FockSpace::new(n).unwrap()
    }

    #[test]
    fn space_dims() {
        assert!(FockSpace::new(0).is_err());
        assert_eq!(sp(2).total_dim(), 6);
        assert_eq!(sp(2).index(1, 2), 5);
    }

    #[test]
    fn ladder_action_and_truncation() {
        let s = sp(2);
        let (a, ad) = ladder_ops(s);
        assert_eq!(a.matrix()[(0, 1)], C::new(1.0, 0.0));
        assert_eq!(ad.matrix(), &a.matrix().adjoint());
        // a†|ncut⟩ = 0
        for i in 0..6 {
            assert_eq!(ad.matrix()[(i, 2)], C::new(0.0, 0.0));
        }
        let comm = a.matrix() * ad.matrix() - ad.matrix() * a.matrix();
        for n in 0..2 {
            assert!((comm[(n, n)] - C::new(1.0, 0.0)).norm() < 1e-15);
        }
        let num = ad.matrix() * a.matrix();
        for s_ in 0..2 {
            for n in 0..3 {
                assert!((num[(s_ * 3 + n, s_ * 3 + n)].re - n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pauli_algebra() {
        let (x, y, z) = spin_ops(sp(3));
        let d = z.dim();
        let id = CMat::identity(d, d);
        assert!(crate::linalg::max_abs(&(z.matrix() * z.matrix() - &id)) < 1e-15);
        let c = x.matrix() * y.matrix() - y.matrix() * x.matrix();
        assert!(crate::linalg::max_abs(&(c - z.matrix() * C::new(0.0, 2.0))) < 1e-15);
        assert_eq!(trace(z.matrix()), C::new(0.0, 0.0));
    }

    #[test]
    fn displacement_zero_is_identity() {
        let d = displacement(C::new(0.0, 0.0), sp(6)).unwrap();
        assert!(crate::linalg::max_abs(&(d.op.matrix() - CMat::identity(14, 14))) < 1e-15);
    }

    #[test]
    fn vacuum_overlap_of_unit_displacement() {
        let d = mode_displacement(C::new(1.0, 0.0), sp(40)).unwrap();
        let p = d.op.matrix()[(0, 0)].norm_sqr();
        assert!((p - (-1f64).exp()).abs() < 1e-9, "{p}");
    }

    #[test]
    fn displacement_inverse() {
        let s = sp(12);
        let d1 = mode_displacement(C::new(0.7, 0.0), s).unwrap();
        let d2 = mode_displacement(C::new(-0.7, 0.0), s).unwrap();
        let prod = d1.op.matrix() * d2.op.matrix();
        assert!(crate::linalg::max_abs(&(prod - CMat::identity(13, 13))) < 1e-9);
    }

    #[test]
    fn displacement_buffer_rule() {
        assert!(matches!(
            mode_displacement(C::new(1.0, 0.0), sp(7)),
            Err(Error::TruncationTooSmall { required: 8, .. })
        ));
        assert!(mode_displacement(C::new(1.0, 0.0), sp(8)).is_ok());
    }

    #[test]
    fn thermal_occupation() {
        let s = sp(15);
        let rho = thermal_state(0.2, s).unwrap();
        let n = expectation(&number_op(Basis::Mode(s)), &rho).unwrap();
        // geometric series on 0..=15 with q = 1/6
        let q: f64 = 1.0 / 6.0;
        let z: f64 = (0..16).map(|k| q.powi(k)).sum();
        let mean: f64 = (0..16).map(|k| k as f64 * q.powi(k)).sum::<f64>() / z;
        assert!((n.re - mean).abs() < 1e-14);
        assert!((n.re - 0.2).abs() < 1e-6);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        let vac = thermal_state(0.0, s).unwrap();
        assert_eq!(vac.matrix()[(0, 0)], C::new(1.0, 0.0));
    }

    #[test]
    fn expectation_basics() {
        let s = sp(3);
        let rho = spin_product(0, &thermal_state(0.0, s).unwrap()).unwrap();
        let (_, _, z) = spin_ops(s);
        assert_eq!(expectation(&z, &rho).unwrap(), C::new(1.0, 0.0));
        assert_eq!(expectation(&identity(Basis::SpinMode(s)), &rho).unwrap(), C::new(1.0, 0.0));
        let th = thermal_state(0.3, s).unwrap();
        assert!(expectation(&z, &th).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let s = sp(1);
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = C::new(1.5, 0.0);
        m[(1, 1)] = C::new(-0.5, 0.0);
        assert!(DensityMatrix::new(Basis::Mode(s), m).is_err());
    }

    proptest! {
        #[test]
        fn displacement_unitarity(re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let alpha = C::new(re, im);
            prop_assume!(alpha.norm() <= 2.0);
            let s = sp(displacement_required_ncut(alpha));
            let d = mode_displacement(alpha, s).unwrap();
            prop_assert!(d.unitarity_defect < 1e-8);
        }

        #[test]
        fn displaced_vacuum_is_poisson(re in -1.5f64..1.5, im in -1.5f64..1.5) {
            let alpha = C::new(re, im);
            let s = sp(displacement_required_ncut(alpha) + 5);
            let d = mode_displacement(alpha, s).unwrap();
            let x = alpha.norm_sqr();
            let mut fact = 1.0;
            for m in 0..=s.ncut() / 2 {
                if m > 0 { fact *= m as f64; }
                let p = (-x).exp() * x.powi(m as i32) / fact;
                prop_assert!((d.op.matrix()[(m, 0)].norm_sqr() - p).abs() < 1e-8);
            }
        }

        #[test]
        fn thermal_truncation_convergence(nbar in 0.0f64..2.0) {
            let base = (1..200).find(|&n| thermal_tail_weight(nbar, sp(n)) < 1e-8).unwrap();
            let s1 = sp(base);
            let s2 = sp(base + 5);
            let n1 = expectation(&number_op(Basis::Mode(s1)), &thermal_state(nbar, s1).unwrap()).unwrap().re;
            let n2 = expectation(&number_op(Basis::Mode(s2)), &thermal_state(nbar, s2).unwrap()).unwrap().re;
            prop_assert!((n1 - n2).abs() < 1e-8);
        }
    }
}
