//! Rate oracles (golden rule, two vibronic states) and rate extraction from trajectories.

use crate::error::{Error, Result};
use crate::fock::{mode_displacement_unchecked, thermal_populations, FockSpace};
use crate::model::ModelParams;
use crate::propagation::Trajectory;
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    ExpFit,
    Lifetime,
    Fgr,
    TwoState,
}

impl RateMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateMethod::ExpFit => "exp_fit",
            RateMethod::Lifetime => "lifetime",
            RateMethod::Fgr => "fgr",
            RateMethod::TwoState => "two_state",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub fit_residual: Option<f64>,
    pub p_inf: Option<f64>,
    pub p_d_final: Option<f64>,
    pub resamples: Option<usize>,
    /// Raw estimate before clipping at zero.
    pub raw: Option<f64>,
    pub clipped: bool,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub k_t: f64,
    pub stderr: f64,
    pub method: RateMethod,
    pub diagnostics: RateDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FranckCondonTable {
    pub d: f64,
    pub ncut: usize,
    /// fc[n][m] = |⟨n|D(d)|m⟩|²
    pub fc: Vec<Vec<f64>>,
    /// Largest gap between the matrix-exponential and Laguerre evaluations.
    pub max_discrepancy: f64,
}

impl FranckCondonTable {
    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.fc[n][m]
    }

    pub fn row_sum(&self, n: usize) -> f64 {
        self.fc[n].iter().sum()
    }
}

/// Generalized Laguerre L_n^{(k)}(x) by upward recurrence.
pub fn laguerre(n: usize, k: f64, x: f64) -> f64 {
    let mut l0 = 1.0;
    if n == 0 {
        return l0;
    }
    let mut l1 = 1.0 + k - x;
    for j in 1..n {
        let jf = j as f64;
        let l2 = ((2.0 * jf + 1.0 + k - x) * l1 - (jf + k) * l0) / (jf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// |⟨m|D(d)|n⟩|² from the closed form, real d.
pub fn fc_closed_form(n: usize, m: usize, d: f64) -> f64 {
    let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
    let x = d * d;
    let k = hi - lo;
    let mut log_ratio = 0.0;
    for j in lo + 1..=hi {
        log_ratio -= (j as f64).ln();
    }
    let lag = laguerre(lo, k as f64, x);
    if lag == 0.0 {
        return 0.0;
    }
    let log_pref = if k == 0 { 0.0 } else { log_ratio + k as f64 * x.ln() };
    (log_pref - x + 2.0 * lag.abs().ln()).exp()
}

pub fn franck_condon(d: f64, ncut: usize) -> Result<FranckCondonTable> {
    let req = crate::fock::displacement_required_ncut(C::new(d, 0.0));
    if ncut < req {
        return Err(Error::TruncationTooSmall { ncut, required: req });
    }
    let big = FockSpace::new(2 * ncut + 20)?;
    let dm = mode_displacement_unchecked(C::new(d, 0.0), big).op.into_matrix();
    let mut fc = vec![vec![0.0; ncut + 1]; ncut + 1];
    let mut disc: f64 = 0.0;
    for (n, row) in fc.iter_mut().enumerate() {
        for (m, v) in row.iter_mut().enumerate() {
            let num = dm[(n, m)].norm_sqr();
            let cf = fc_closed_form(n, m, d);
            disc = disc.max((num - cf).abs());
            *v = cf;
        }
    }
    Ok(FranckCondonTable { d, ncut, fc, max_discrepancy: disc })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    Nbar,
    Nbar0,
}

/// Golden-rule rate with Lorentzian lines of FWHM γ at ΔE + (n−m)ω.
pub fn fgr_rate(p: &ModelParams, source: PopulationSource) -> Result<f64> {
    if !(p.gamma > 0.0) {
        return Err(Error::InvalidRate("fgr_rate needs gamma > 0".into()));
    }
    let table = franck_condon(p.g / p.omega, p.ncut)?;
    Ok(fgr_with_table(p, source, &table))
}

pub fn fgr_with_table(p: &ModelParams, source: PopulationSource, table: &FranckCondonTable) -> f64 {
    let nbar = match source {
        PopulationSource::Nbar => p.nbar,
        PopulationSource::Nbar0 => p.nbar0(),
    };
    let pops = thermal_populations(nbar, table.ncut + 1);
    let g = p.gamma;
    let mut k = 0.0;
    for (n, pn) in pops.iter().enumerate() {
        if *pn < 1e-16 {
            continue;
        }
        for m in 0..=table.ncut {
            let e = p.delta_e + (n as f64 - m as f64) * p.omega;
            k += pn * table.fc[n][m] * (g / (2.0 * PI)) / (e * e + g * g / 4.0);
        }
    }
    2.0 * PI * p.v_x * p.v_x * k
}

/// Golden-rule rates over a list of ΔE values sharing one Franck-Condon table.
pub fn fgr_sweep(p: &ModelParams, delta_e: &[f64], source: PopulationSource) -> Result<Vec<f64>> {
    if !(p.gamma > 0.0) {
        return Err(Error::InvalidRate("fgr_rate needs gamma > 0".into()));
    }
    let table = franck_condon(p.g / p.omega, p.ncut)?;
    Ok(delta_e
        .iter()
        .map(|&de| fgr_with_table(&ModelParams { delta_e: de, ..p.clone() }, source, &table))
        .collect())
}

/// k = νγ(1+x²)/(1+x⁴/2), x = νγ/v_eff.
pub fn two_state_rate(v_eff: f64, nu: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(nu > 0.0) || !(v_eff >= 0.0) {
        return Err(Error::InvalidRate(format!("v_eff={v_eff} nu={nu} gamma={gamma}")));
    }
    if v_eff == 0.0 {
        return Ok(0.0);
    }
    let x = nu * gamma / v_eff;
    Ok(nu * gamma * (1.0 + x * x) / (1.0 + x.powi(4) / 2.0))
}

fn model(p_inf: f64, k: f64, t: f64) -> f64 {
    p_inf + (1.0 - p_inf) * (-k * t).exp()
}

fn best_p_inf(ts: &[f64], ps: &[f64], k: f64) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &p) in ts.iter().zip(ps) {
        let e = (-k * t).exp();
        num += (p - e) * (1.0 - e);
        den += (1.0 - e) * (1.0 - e);
    }
    let pi = if den > 0.0 { num / den } else { 1.0 };
    let ssr = ts.iter().zip(ps).map(|(&t, &p)| (p - model(pi, k, t)).powi(2)).sum();
    (pi, ssr)
}

/// Least squares of P_D(t) = P∞ + (1−P∞)e^{−kt}.
pub fn fit_exponential(traj: &Trajectory) -> Result<RateEstimate> {
    fit_exponential_data(&traj.times, &traj.p_d)
}

pub fn fit_exponential_data(ts: &[f64], ps: &[f64]) -> Result<RateEstimate> {
    if ts.len() < 8 {
        return Err(Error::FitDiverged(format!("{} samples, need 8", ts.len())));
    }
    let span = ts.last().unwrap() - ts[0];
    if ps.iter().all(|&p| (p - 1.0).abs() < 1e-12) {
        return Ok(RateEstimate {
            k_t: 0.0,
            stderr: 0.0,
            method: RateMethod::ExpFit,
            diagnostics: RateDiagnostics { fit_residual: Some(0.0), p_inf: Some(1.0), ..Default::default() },
        });
    }
    // coarse log-grid scan with P∞ eliminated, then Levenberg-Marquardt on (P∞, k)
    let (kmin, kmax) = (1e-3 / span, 1e3 / span);
    let steps = 400;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for s in 0..=steps {
        let k = kmin * (kmax / kmin).powf(s as f64 / steps as f64);
        let (pi, ssr) = best_p_inf(ts, ps, k);
        if ssr < best.0 {
            best = (ssr, k, pi);
        }
    }
    let (mut ssr, mut k, mut pi) = best;
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&t, &p) in ts.iter().zip(ps) {
            let e = (-k * t).exp();
            let r = p - model(pi, k, t);
            let jp = 1.0 - e;
            let jk = -(1.0 - pi) * t * e;
            jtj[0][0] += jp * jp;
            jtj[0][1] += jp * jk;
            jtj[1][1] += jk * jk;
            jtr[0] += jp * r;
            jtr[1] += jk * r;
        }
        jtj[1][0] = jtj[0][1];
        let a00 = jtj[0][0] * (1.0 + lambda);
        let a11 = jtj[1][1] * (1.0 + lambda);
        let det = a00 * a11 - jtj[0][1] * jtj[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dp = (a11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let dk = (a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (npi, nk) = (pi + dp, (k + dk).max(0.0));
        let nssr: f64 = ts.iter().zip(ps).map(|(&t, &p)| (p - model(npi, nk, t)).powi(2)).sum();
        if nssr <= ssr {
            let rel = (ssr - nssr) / ssr.max(1e-300);
            pi = npi;
            k = nk;
            ssr = nssr;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-14 || ssr < 1e-30 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    if !k.is_finite() || !pi.is_finite() {
        return Err(Error::FitDiverged(format!("k={k} p_inf={pi}")));
    }
    // covariance of (P∞, k)
    let n = ts.len() as f64;
    let s2 = ssr / (n - 2.0);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for &t in ts {
        let e = (-k * t).exp();
        let jp = 1.0 - e;
        let jk = -(1.0 - pi) * t * e;
        a += jp * jp;
        b += jp * jk;
        c += jk * jk;
    }
    let det = a * c - b * b;
    let stderr = if det > 0.0 { (s2 * a / det).sqrt() } else { f64::INFINITY };
    Ok(RateEstimate {
        k_t: k,
        stderr,
        method: RateMethod::ExpFit,
        diagnostics: RateDiagnostics {
            fit_residual: Some((ssr / n).sqrt()),
            p_inf: Some(pi),
            p_d_final: ps.last().copied(),
            warning: (!converged).then(|| "fit stopped at iteration cap".into()),
            ..Default::default()
        },
    })
}

/// Cubic Hermite interpolant with finite-difference slopes, sampled 10× finer and
/// integrated by trapezoid over [0, t_sim]. Returns (∫P, ∫tP, dP/dt at t_sim).
fn lifetime_integrals(ts: &[f64], ps: &[f64], t_sim: f64) -> (f64, f64, f64) {
    let n = ts.len();
    let slope = |i: usize| -> f64 {
        if i == 0 {
            (ps[1] - ps[0]) / (ts[1] - ts[0])
        } else if i == n - 1 {
            (ps[n - 1] - ps[n - 2]) / (ts[n - 1] - ts[n - 2])
        } else {
            (ps[i + 1] - ps[i - 1]) / (ts[i + 1] - ts[i - 1])
        }
    };
    let eval = |i: usize, t: f64| -> f64 {
        let h = ts[i + 1] - ts[i];
        let s = (t - ts[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * ps[i] + h10 * h * slope(i) + h01 * ps[i + 1] + h11 * h * slope(i + 1)
    };
    let (mut i0, mut i1) = (0.0, 0.0);
    let mut prev: Option<(f64, f64)> = None;
    let mut push = |t: f64, p: f64| {
        if let Some((tp, pp)) = prev {
            let dt = t - tp;
            i0 += 0.5 * dt * (p + pp);
            i1 += 0.5 * dt * (t * p + tp * pp);
        }
        prev = Some((t, p));
    };
    let mut end_slope = 0.0;
    for i in 0..n - 1 {
        if ts[i] >= t_sim {
            break;
        }
        let hi = ts[i + 1].min(t_sim);
        for s in 0..10 {
            let t = ts[i] + (hi - ts[i]) * s as f64 / 10.0;
            push(t, eval(i, t));
        }
        if ts[i + 1] >= t_sim {
            push(t_sim, eval(i, t_sim));
            let h = ts[i + 1] - ts[i];
            let s = (t_sim - ts[i]) / h;
            let d00 = 6.0 * s * s - 6.0 * s;
            let d10 = 3.0 * s * s - 4.0 * s + 1.0;
            let d01 = -d00;
            let d11 = 3.0 * s * s - 2.0 * s;
            end_slope = (d00 * ps[i] + d01 * ps[i + 1]) / h + d10 * slope(i) + d11 * slope(i + 1);
            break;
        }
    }
    (i0, i1, end_slope)
}

fn lifetime_raw(ts: &[f64], ps: &[f64], t_sim: f64) -> Result<(f64, f64)> {
    if ts.len() < 2 || *ts.last().unwrap() < t_sim * (1.0 - 1e-12) || ts[0] > 0.0 {
        return Err(Error::InsufficientCoverage { t_end: ts.last().copied().unwrap_or(0.0), t_sim });
    }
    let (i0, i1, slope) = lifetime_integrals(ts, ps, t_sim);
    Ok((i0 / i1 - 2.0 / t_sim, slope))
}

/// k_T = ∫P dt / ∫tP dt − 2/t_sim over [0, t_sim], clipped at zero.
pub fn lifetime_rate(traj: &Trajectory, t_sim: f64) -> Result<RateEstimate> {
    lifetime_rate_data(&traj.times, &traj.p_d, t_sim)
}

pub fn lifetime_rate_data(ts: &[f64], ps: &[f64], t_sim: f64) -> Result<RateEstimate> {
    let (raw, slope) = lifetime_raw(ts, ps, t_sim)?;
    let clipped = raw < 0.0;
    let warning = (slope.abs() * t_sim > 0.05).then(|| format!("P_D not settled at t_sim (slope {slope:.3e})"));
    Ok(RateEstimate {
        k_t: raw.max(0.0),
        stderr: 0.0,
        method: RateMethod::Lifetime,
        diagnostics: RateDiagnostics {
            raw: Some(raw),
            clipped,
            warning,
            p_d_final: ps.last().copied(),
            ..Default::default()
        },
    })
}

/// Per-sample Gaussian resampling; stderr is the spread of the lifetime estimate.
pub fn bootstrap_error(ts: &[f64], ps: &[f64], sigma: &[f64], t_sim: f64, n_resample: usize, seed: u64) -> Result<RateEstimate> {
    if n_resample < 100 {
        return Err(Error::InvalidRate(format!("n_resample {n_resample} < 100")));
    }
    if sigma.len() != ps.len() || sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidRate("sigma must match samples and be >= 0".into()));
    }
    let mut base = lifetime_rate_data(ts, ps, t_sim)?;
    let ks: Vec<f64> = (0..n_resample)
        .into_par_iter()
        .map(|r| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let noisy: Vec<f64> = ps
                .iter()
                .zip(sigma)
                .map(|(&p, &s)| if s > 0.0 { p + Normal::new(0.0, s).unwrap().sample(&mut rng) } else { p })
                .collect();
            lifetime_raw(ts, &noisy, t_sim).map(|x| x.0).unwrap_or(f64::NAN)
        })
        .collect();
    let n = ks.len() as f64;
    let mean = ks.iter().sum::<f64>() / n;
    let var = ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1.0);
    base.stderr = var.sqrt();
    base.diagnostics.resamples = Some(n_resample);
    Ok(base)
}
