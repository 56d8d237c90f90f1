use et_core::scan::*;

fn argmax(rows: &[&ScanRow], f: impl Fn(&ScanRow) -> f64) -> f64 {
    rows.iter().fold((f64::NAN, f64::MIN), |acc, r| if f(r) > acc.1 { (r.value, f(r)) } else { acc }).0
}

#[test]
fn fig4a_output_has_tagged_series() {
    let t = run_scan(&preset("fig4a").unwrap().spec).unwrap();
    let csv = csv_string(&t).unwrap();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    let tags: Vec<String> = rd.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(tags.iter().filter(|t| *t == "A").count(), 13);
    assert_eq!(tags.iter().filter(|t| *t == "B").count(), 13);
    assert_eq!(tags.len(), 26);
    assert!(t.rows.iter().all(|r| r.error.is_none()));
    for r in t.series("B") {
        assert_eq!((r.params.v_x, r.params.g, r.params.gamma), (0.21, 1.08, 0.038));
    }
}

#[test]
fn nonadiabatic_peaks_align_with_golden_rule() {
    let mut spec = preset("fig3d").unwrap().spec;
    let gamma = spec.base.gamma;
    for centre in [1.0, 2.0] {
        let pts: Vec<f64> = (-4..=4).map(|k| centre + 0.05 * k as f64).collect();
        spec.axis = Axis::list("delta_e", pts);
        spec.t_sim = TSim::Fixed { t: 660.0 };
        let t = compare_fgr(run_scan(&spec).unwrap());
        let rows: Vec<&ScanRow> = t.rows.iter().collect();
        let a = argmax(&rows, |r| r.k_t.unwrap());
        let b = argmax(&rows, |r| r.k_fgr.unwrap());
        assert!((a - b).abs() < gamma, "centre {centre}: k_T peak {a}, k_fgr peak {b}");
    }
}

#[test]
#[ignore = "known red: the single-width golden rule stays 25-60% above the perturbative Lindblad rate"]
fn weak_coupling_rates_approach_golden_rule() {
    let mut spec = preset("fig3d").unwrap().spec;
    spec.base.v_x /= 8.0;
    spec.axis = Axis::list("delta_e", vec![1.0, 2.0]);
    let t = compare_fgr(run_scan(&spec).unwrap());
    for r in &t.rows {
        let ratio = r.k_t.unwrap() / r.k_fgr.unwrap();
        assert!((ratio - 1.0).abs() < 0.15, "ΔE={}: k_T/k_fgr = {ratio:.3}", r.value);
    }
}
