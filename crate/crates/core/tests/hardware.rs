use et_core::hardware::*;
use et_core::model::{initial_state, DephasingBasis, ModelParams};
use std::f64::consts::PI;

fn params(gamma: f64, ncut: usize) -> ModelParams {
    ModelParams {
        omega: 1.0,
        delta_e: 1.0,
        v_x: 0.18,
        g: 1.0,
        gamma,
        nbar: 0.0,
        gamma_z: 0.0,
        gamma_m: 0.0,
        nbar0: Some(0.0),
        ncut,
        dephasing_basis: DephasingBasis::ModelZ,
    }
}

fn four_tone_deviation(p: &ModelParams, eta: f64, mu: f64, periods: f64, samples: usize) -> f64 {
    let space = p.space().unwrap();
    let tc = ToneConfig::from_model(p, eta, mu).unwrap();
    let grid = stroboscopic_grid(periods * 2.0 * PI, samples, mu).unwrap();
    let rho0 = to_lab_frame(&initial_state(p, space).unwrap()).unwrap();
    let mut opts = LabOptions::new(1e-9);
    opts.dissipators = lab_dissipators(p, space);
    let lab = evolve_lab_with(&tc, &rho0, &grid, &opts).unwrap();
    let model = model_path(p, grid.times(), 1e-10).unwrap();
    lab.model.p_d.iter().zip(&model.p_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn rotating_wave_error_shrinks_with_eta() {
    let p = params(0.0, 12);
    let devs: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&eta| four_tone_deviation(&p, eta, 200.0, 2.0, 41)).collect();
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    assert!(devs[2] < 5e-3, "{devs:?}");
}

#[test]
fn effective_form_reproduces_model_with_cooling() {
    let p = params(0.05, 12);
    let space = p.space().unwrap();
    let tc = ToneConfig::from_model(&p, 0.1, DEFAULT_MU).unwrap();
    let grid = et_core::propagation::TimeGrid::uniform(4.0 * 2.0 * PI, 81).unwrap();
    let mut opts = LabOptions::new(1e-10);
    opts.form = HamiltonianForm::Effective;
    opts.dissipators = lab_dissipators(&p, space);
    let lab = evolve_lab_with(&tc, &to_lab_frame(&initial_state(&p, space).unwrap()).unwrap(), &grid, &opts).unwrap();
    let model = model_path(&p, grid.times(), 1e-10).unwrap();
    let dev = lab.model.p_d.iter().zip(&model.p_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn pulsed_displacement_stays_within_budget() {
    let mut p = params(0.014, 16);
    p.gamma_z = 0.0013;
    p.gamma_m = 0.0013;
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 2.0 * PI * 2.0 / 20.0).collect();
    let ideal = emulate_sequence(&SequencePlan::standard(0.0, times.clone(), DisplacementPath::Ideal, MeasureKind::PD), &p).unwrap();
    let mut plan = SequencePlan::standard(0.0, times, DisplacementPath::Pulsed, MeasureKind::PD);
    plan.pulse_form = HamiltonianForm::Full;
    let pulsed = emulate_sequence(&plan, &p).unwrap();
    let dev = ideal.traj.p_d.iter().zip(&pulsed.traj.p_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 0.03, "{dev}");
    assert!(dev > 0.0);
}

#[test]
fn phonon_readout_recovers_displaced_distribution() {
    let p = params(0.0, 12);
    let times: Vec<f64> = (0..=4).map(|k| k as f64).collect();
    let r = emulate_sequence(&SequencePlan::standard(0.0, times, DisplacementPath::Ideal, MeasureKind::Phonon), &p).unwrap();
    let pops = r.phonon_populations.as_ref().unwrap();
    let alpha2 = (p.g / (2.0 * p.omega)).powi(2);
    let first = &pops[0];
    assert!((first[0] - (-alpha2).exp()).abs() < 1e-3, "{:?}", first);
    assert!((r.measured[0] - alpha2).abs() < 1e-3);
}
