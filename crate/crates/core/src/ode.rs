//! Dormand-Prince 5(4) with FSAL and cubic Hermite dense output.

use crate::error::{Error, Result};
use num_complex::Complex64 as C;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Per-step error bound, applied as absolute and relative tolerance.
    pub tol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(tol: f64) -> Self {
        OdeOptions { tol, h_init: None, h_max: f64::INFINITY, max_steps: 50_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

fn lin(out: &mut [C], y: &[C], h: f64, terms: &[(f64, &[C])]) {
    for i in 0..out.len() {
        let mut acc = C::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        out[i] = y[i] + acc * h;
    }
}

/// Integrates y' = f(t, y) from `t0` through every time in `t_out` (ascending, ≥ t0).
/// `post_step` may project the state after each accepted step; `observe` receives
/// interpolated states at each output time.
pub fn integrate<F, P, O>(
    mut f: F,
    t0: f64,
    y0: &[C],
    t_out: &[f64],
    opts: OdeOptions,
    mut post_step: P,
    mut observe: O,
) -> Result<OdeStats>
where
    F: FnMut(f64, &[C], &mut [C]),
    P: FnMut(&mut [C]),
    O: FnMut(usize, f64, &[C]) -> Result<()>,
{
    let n = y0.len();
    let z = C::new(0.0, 0.0);
    let mut y = y0.to_vec();
    let mut ynew = vec![z; n];
    let mut tmp = vec![z; n];
    let mut k: Vec<Vec<C>> = (0..7).map(|_| vec![z; n]).collect();
    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut idx = 0;
    while idx < t_out.len() && t_out[idx] <= t0 {
        observe(idx, t_out[idx], &y)?;
        idx += 1;
    }
    if idx == t_out.len() {
        return Ok(stats);
    }
    let t_end = *t_out.last().unwrap();
    f(t, &y, &mut k[0]);
    stats.rhs_evals += 1;
    let tol = opts.tol;
    let mut h = opts.h_init.unwrap_or_else(|| {
        let ny = y.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1e-300);
        let nf = k[0].iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1e-300);
        (0.01 * (tol.max(1e-12) / 1e-6).powf(0.2) * (ny / nf)).min(t_end - t0)
    });
    h = h.min(opts.h_max);
    let mut fac_max: f64 = 5.0;
    while idx < t_out.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::StepSizeUnderflow { t });
        }
        let h_min = 1e-13 * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        {
            let (k0, rest) = k.split_at_mut(1);
            let k0 = &k0[0];
            lin(&mut tmp, &y, h, &[(A21, k0)]);
            f(t + C2 * h, &tmp, &mut rest[0]);
            lin(&mut tmp, &y, h, &[(A31, k0), (A32, &rest[0])]);
            f(t + C3 * h, &tmp, &mut rest[1]);
            lin(&mut tmp, &y, h, &[(A41, k0), (A42, &rest[0]), (A43, &rest[1])]);
            f(t + C4 * h, &tmp, &mut rest[2]);
            lin(&mut tmp, &y, h, &[(A51, k0), (A52, &rest[0]), (A53, &rest[1]), (A54, &rest[2])]);
            f(t + C5 * h, &tmp, &mut rest[3]);
            lin(&mut tmp, &y, h, &[(A61, k0), (A62, &rest[0]), (A63, &rest[1]), (A64, &rest[2]), (A65, &rest[3])]);
            f(t + h, &tmp, &mut rest[4]);
            lin(&mut ynew, &y, h, &[(B1, k0), (B3, &rest[1]), (B4, &rest[2]), (B5, &rest[3]), (B6, &rest[4])]);
            f(t + h, &ynew, &mut rest[5]);
        }
        stats.rhs_evals += 6;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * h;
            let sc = tol + tol * y[i].norm().max(ynew[i].norm());
            err = err.max(e.norm() / sc);
        }
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = t + h;
            post_step(&mut ynew);
            // dense output on [t, t_new]
            while idx < t_out.len() && t_out[idx] <= t_new {
                let s = (t_out[idx] - t) / h;
                let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
                let h10 = s * (1.0 - s) * (1.0 - s);
                let h01 = s * s * (3.0 - 2.0 * s);
                let h11 = s * s * (s - 1.0);
                for i in 0..n {
                    tmp[i] = y[i] * h00 + k[0][i] * (h10 * h) + ynew[i] * h01 + k[6][i] * (h11 * h);
                }
                if s >= 1.0 {
                    tmp.copy_from_slice(&ynew);
                }
                observe(idx, t_out[idx], &tmp)?;
                idx += 1;
            }
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            t = t_new;
            let fac = if err == 0.0 { fac_max } else { (0.9 * err.powf(-0.2)).clamp(0.2, fac_max) };
            h = (h * fac).min(opts.h_max);
            fac_max = 5.0;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            fac_max = 1.0;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase() {
        // y' = -i y  → y = e^{-it}
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.7).collect();
        let mut out = vec![];
        integrate(
            |_, y, dy| dy[0] = C::new(0.0, -1.0) * y[0],
            0.0,
            &[C::new(1.0, 0.0)],
            &times,
            OdeOptions::new(1e-10),
            |_| {},
            |_, t, y| {
                out.push((t, y[0]));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(out.len(), times.len());
        for (t, y) in out {
            assert!((y - C::new(0.0, -t).exp()).norm() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn decay_with_time_dependent_rhs() {
        // y' = -2t y → y = e^{-t²}
        let times = [0.0, 0.5, 1.0, 2.0];
        let mut last = C::new(0.0, 0.0);
        integrate(
            |t, y, dy| dy[0] = y[0] * (-2.0 * t),
            0.0,
            &[C::new(1.0, 0.0)],
            &times,
            OdeOptions::new(1e-10),
            |_| {},
            |_, _, y| {
                last = y[0];
                Ok(())
            },
        )
        .unwrap();
        assert!((last.re - (-4f64).exp()).abs() < 1e-8);
    }
}
