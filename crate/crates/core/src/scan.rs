//! Parameter sweeps, figure presets and table output.

use crate::error::{Error, Result};
use crate::io::{fmt12, write_rows};
use crate::model::{build_dissipators, build_hamiltonian, initial_state, ModelParams};
use crate::propagation::{evolve, steady_state_report, TimeGrid};
use crate::rates::{fgr_rate, fgr_sweep, fit_exponential, lifetime_rate, PopulationSource, RateEstimate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub const AXIS_NAMES: [&str; 10] =
    ["omega", "delta_e", "v_x", "g", "gamma", "nbar", "gamma_z", "gamma_m", "nbar0", "vx_over_gamma"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

impl Axis {
    pub fn list(name: &str, values: Vec<f64>) -> Self {
        Axis { name: name.into(), values: Some(values), range: None }
    }

    pub fn range(name: &str, start: f64, stop: f64, step: f64) -> Self {
        Axis { name: name.into(), values: None, range: Some(Range { start, stop, step }) }
    }

    /// Sweep values; ranges include `stop` when it lies on the grid.
    pub fn points(&self) -> Result<Vec<f64>> {
        let v = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if !(r.step > 0.0) || !r.start.is_finite() || !r.stop.is_finite() || r.stop < r.start {
                    return Err(Error::InvalidConfig("invalid axis range".into()));
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize;
                (0..=n).map(|k| r.start + k as f64 * r.step).collect()
            }
            _ => return Err(Error::InvalidConfig("axis needs exactly one of values or range".into())),
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("axis values must be finite and non-empty".into()));
        }
        Ok(v)
    }
}

fn set_param(p: &mut ModelParams, name: &str, v: f64) -> Result<()> {
    match name {
        "omega" => p.omega = v,
        "delta_e" => p.delta_e = v,
        "v_x" => p.v_x = v,
        "g" => p.g = v,
        "gamma" => p.gamma = v,
        "nbar" => p.nbar = v,
        "gamma_z" => p.gamma_z = v,
        "gamma_m" => p.gamma_m = v,
        "nbar0" => p.nbar0 = Some(v),
        "vx_over_gamma" => p.v_x = v * p.gamma,
        _ => return Err(Error::InvalidConfig(format!("unknown axis or parameter `{name}`"))),
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub tag: String,
    /// Parameter overrides applied to the base before sweeping.
    pub set: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TSim {
    /// Absolute time in 1/ω.
    Fixed { t: f64 },
    /// ωt/2π periods.
    Periods { periods: f64 },
    /// multiple/γ.
    Decay { multiple: f64 },
    /// multiple·2π/γ̂ with γ̂ the largest golden-rule rate over the series' sweep.
    FgrPeak { multiple: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMethod {
    ExpFit,
    Lifetime,
    Fgr,
    /// Steady-state columns only.
    None,
}

impl ScanMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanMethod::ExpFit => "exp_fit",
            ScanMethod::Lifetime => "lifetime",
            ScanMethod::Fgr => "fgr",
            ScanMethod::None => "none",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    /// Unit note; only `omega` is accepted.
    pub units: String,
    pub base: ModelParams,
    pub axis: Axis,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Series>,
    pub t_sim: TSim,
    pub method: ScanMethod,
    /// Time samples per trajectory.
    pub samples: usize,
    pub tol: f64,
    /// Adds steady-state columns.
    #[serde(default)]
    pub steady: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub outputs: Outputs,
}

fn one() -> usize {
    1
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.units != "omega" {
            return Err(Error::InvalidConfig(format!("units must be `omega`, got `{}`", self.units)));
        }
        if !AXIS_NAMES.contains(&self.axis.name.as_str()) {
            return Err(Error::InvalidConfig(format!("axis `{}` not sweepable", self.axis.name)));
        }
        self.axis.points()?;
        for s in &self.series {
            for (k, v) in &s.set {
                if !AXIS_NAMES.contains(&k.as_str()) || !v.is_finite() {
                    return Err(Error::InvalidConfig(format!("bad series override `{k}`")));
                }
            }
        }
        if self.samples < 8 {
            return Err(Error::InvalidConfig("need at least 8 time samples".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be ≥ 1".into()));
        }
        crate::propagation::check_tol(self.tol)?;
        let ok = match &self.t_sim {
            TSim::Fixed { t } => *t > 0.0,
            TSim::Periods { periods } => *periods > 0.0,
            TSim::Decay { multiple } | TSim::FgrPeak { multiple } => *multiple > 0.0,
        };
        if !ok {
            return Err(Error::InvalidConfig("t_sim must be > 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ScanSpec = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    fn series_list(&self) -> Vec<Series> {
        if self.series.is_empty() {
            vec![Series { tag: String::new(), set: BTreeMap::new() }]
        } else {
            self.series.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub set: String,
    pub value: f64,
    pub params: ModelParams,
    pub t_sim: f64,
    pub k_t: Option<f64>,
    pub stderr: Option<f64>,
    pub p_d_final: Option<f64>,
    pub fit_residual: Option<f64>,
    pub p_inf: Option<f64>,
    pub p_d_ss: Option<f64>,
    pub n_ss: Option<f64>,
    pub n_ss_un: Option<f64>,
    pub k_fgr: Option<f64>,
    pub warning: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanTable {
    pub spec: ScanSpec,
    pub rows: Vec<ScanRow>,
    pub with_fgr: bool,
}

pub const BASE_COLUMNS: [&str; 23] = [
    "set", "axis", "value", "delta_e", "v_x", "g", "gamma", "nbar", "gamma_z", "gamma_m", "ncut", "t_sim", "method",
    "k_t", "stderr", "k_t_over_gamma", "p_d_final", "fit_residual", "p_inf", "p_d_ss", "n_ss", "n_ss_un", "warning",
];

fn opt(x: Option<f64>) -> String {
    x.map(fmt12).unwrap_or_default()
}

impl ScanTable {
    pub fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        if self.with_fgr {
            c.push("k_fgr".into());
        }
        c.push("error".into());
        c
    }

    pub fn string_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let p = &r.params;
                let mut v = vec![
                    r.set.clone(),
                    self.spec.axis.name.clone(),
                    fmt12(r.value),
                    fmt12(p.delta_e),
                    fmt12(p.v_x),
                    fmt12(p.g),
                    fmt12(p.gamma),
                    fmt12(p.nbar),
                    fmt12(p.gamma_z),
                    fmt12(p.gamma_m),
                    p.ncut.to_string(),
                    fmt12(r.t_sim),
                    self.spec.method.as_str().to_string(),
                    opt(r.k_t),
                    opt(r.stderr),
                    opt(r.k_t.filter(|_| p.gamma > 0.0).map(|k| k / p.gamma)),
                    opt(r.p_d_final),
                    opt(r.fit_residual),
                    opt(r.p_inf),
                    opt(r.p_d_ss),
                    opt(r.n_ss),
                    opt(r.n_ss_un),
                    r.warning.clone().unwrap_or_default(),
                ];
                if self.with_fgr {
                    v.push(opt(r.k_fgr));
                }
                v.push(r.error.clone().unwrap_or_default());
                v
            })
            .collect()
    }

    pub fn series(&self, tag: &str) -> Vec<&ScanRow> {
        self.rows.iter().filter(|r| r.set == tag).collect()
    }
}

struct Point {
    set: String,
    value: f64,
    params: ModelParams,
    t_sim: f64,
}

fn build_points(spec: &ScanSpec) -> Result<Vec<Point>> {
    let values = spec.axis.points()?;
    let mut pts = Vec::new();
    for s in spec.series_list() {
        let mut base = spec.base.clone();
        for (k, v) in &s.set {
            set_param(&mut base, k, *v)?;
        }
        let params: Vec<ModelParams> = values
            .iter()
            .map(|&v| {
                let mut p = base.clone();
                set_param(&mut p, &spec.axis.name, v).map(|_| p)
            })
            .collect::<Result<_>>()?;
        let peak = match spec.t_sim {
            TSim::FgrPeak { .. } => Some(fgr_peak(&spec.axis.name, &params)?),
            _ => None,
        };
        for (&v, p) in values.iter().zip(params) {
            let t_sim = match spec.t_sim {
                TSim::Fixed { t } => t,
                TSim::Periods { periods } => periods * 2.0 * PI / p.omega,
                TSim::Decay { multiple } => {
                    if !(p.gamma > 0.0) {
                        return Err(Error::InvalidConfig("decay t_sim needs gamma > 0".into()));
                    }
                    multiple / p.gamma
                }
                TSim::FgrPeak { multiple } => multiple * 2.0 * PI / peak.unwrap(),
            };
            pts.push(Point { set: s.tag.clone(), value: v, params: p, t_sim });
        }
    }
    Ok(pts)
}

fn fgr_peak(axis: &str, params: &[ModelParams]) -> Result<f64> {
    let ks = if axis == "delta_e" {
        let de: Vec<f64> = params.iter().map(|p| p.delta_e).collect();
        fgr_sweep(&params[0], &de, PopulationSource::Nbar)?
    } else {
        params.iter().map(|p| fgr_rate(p, PopulationSource::Nbar)).collect::<Result<_>>()?
    };
    let peak = ks.into_iter().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidRate("golden-rule peak is zero".into()));
    }
    Ok(peak)
}

fn run_point(spec: &ScanSpec, pt: &Point) -> ScanRow {
    let mut row = ScanRow {
        set: pt.set.clone(),
        value: pt.value,
        params: pt.params.clone(),
        t_sim: pt.t_sim,
        k_t: None,
        stderr: None,
        p_d_final: None,
        fit_residual: None,
        p_inf: None,
        p_d_ss: None,
        n_ss: None,
        n_ss_un: None,
        k_fgr: None,
        warning: None,
        error: None,
    };
    if let Err(e) = fill_point(spec, pt, &mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn fill_point(spec: &ScanSpec, pt: &Point, row: &mut ScanRow) -> Result<()> {
    let p = &pt.params;
    p.validate()?;
    let est: Option<RateEstimate> = match spec.method {
        ScanMethod::None => None,
        ScanMethod::Fgr => Some(RateEstimate {
            k_t: fgr_rate(p, PopulationSource::Nbar)?,
            stderr: 0.0,
            method: crate::rates::RateMethod::Fgr,
            diagnostics: Default::default(),
        }),
        ScanMethod::ExpFit | ScanMethod::Lifetime => {
            let space = p.space()?;
            let rho0 = initial_state(p, space)?;
            let grid = TimeGrid::uniform(pt.t_sim, spec.samples)?;
            let traj = evolve(&rho0, &build_hamiltonian(p, space), &build_dissipators(p, space, true), &grid, spec.tol)?;
            row.p_d_final = traj.p_d.last().copied();
            Some(if spec.method == ScanMethod::ExpFit { fit_exponential(&traj)? } else { lifetime_rate(&traj, pt.t_sim)? })
        }
    };
    if let Some(e) = est {
        row.k_t = Some(e.k_t);
        row.stderr = Some(e.stderr);
        row.fit_residual = e.diagnostics.fit_residual;
        row.p_inf = e.diagnostics.p_inf;
        row.warning = e.diagnostics.warning;
    }
    if spec.steady {
        let r = steady_state_report(p)?;
        row.p_d_ss = Some(r.p_d);
        row.n_ss = Some(r.n_ss);
        row.n_ss_un = Some(r.n_ss_uncorrelated);
    }
    Ok(())
}

/// One row per sweep point, ordered by series then axis value regardless of scheduling.
pub fn run_scan(spec: &ScanSpec) -> Result<ScanTable> {
    spec.validate()?;
    let pts = build_points(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rows = pool.install(|| pts.par_iter().map(|pt| run_point(spec, pt)).collect());
    Ok(ScanTable { spec: spec.clone(), rows, with_fgr: false })
}

/// Adds the golden-rule rate at every row.
pub fn compare_fgr(mut table: ScanTable) -> ScanTable {
    for r in table.rows.iter_mut() {
        r.k_fgr = fgr_rate(&r.params, PopulationSource::Nbar).ok();
    }
    table.with_fgr = true;
    table
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub spec_hash: String,
    pub crate_version: String,
    pub seed: u64,
    pub units: String,
    pub timestamp: u64,
}

pub fn metadata(spec: &ScanSpec) -> Metadata {
    Metadata {
        spec_hash: spec.hash(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: spec.seed,
        units: spec.units.clone(),
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

pub fn csv_string(table: &ScanTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::InvalidConfig("empty table".into()));
    }
    let mut buf = Vec::new();
    write_rows(&mut buf, &table.columns(), &table.string_rows())?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// Columns as in the CSV; numeric cells carry the 12-digit values, empty cells are null.
pub fn json_value(table: &ScanTable) -> Result<serde_json::Value> {
    if table.rows.is_empty() {
        return Err(Error::InvalidConfig("empty table".into()));
    }
    let cols = table.columns();
    let text = ["set", "axis", "method", "warning", "error"];
    let rows: Vec<serde_json::Value> = table
        .string_rows()
        .into_iter()
        .map(|r| {
            let mut m = serde_json::Map::new();
            for (c, v) in cols.iter().zip(r) {
                let cell = if text.contains(&c.as_str()) {
                    serde_json::Value::String(v)
                } else if v.is_empty() {
                    serde_json::Value::Null
                } else {
                    v.parse::<f64>().ok().and_then(serde_json::Number::from_f64).map(serde_json::Value::Number).unwrap_or(serde_json::Value::String(v))
                };
                m.insert(c.clone(), cell);
            }
            serde_json::Value::Object(m)
        })
        .collect();
    Ok(serde_json::json!({
        "metadata": metadata(&table.spec),
        "spec": table.spec,
        "columns": cols,
        "rows": rows,
    }))
}

/// Writes the table to `path` (csv) or `path` (json) and returns the path written.
pub fn emit(table: &ScanTable, format: Format, path: &Path) -> Result<PathBuf> {
    let body = match format {
        Format::Csv => csv_string(table)?,
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&json_value(table)?).map_err(|e| Error::Io(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FigurePreset {
    pub name: &'static str,
    pub version: u32,
    pub figure: &'static str,
    pub notes: &'static str,
    pub spec: ScanSpec,
}

fn base(delta_e: f64, v_x: f64, g: f64, gamma: f64, gamma_z: f64, gamma_m: f64, ncut: usize) -> ModelParams {
    ModelParams {
        omega: 1.0,
        delta_e,
        v_x,
        g,
        gamma,
        nbar: 0.2,
        gamma_z,
        gamma_m,
        nbar0: None,
        ncut,
        dephasing_basis: Default::default(),
    }
}

fn spec(base: ModelParams, axis: Axis, t_sim: TSim, method: ScanMethod, samples: usize) -> ScanSpec {
    ScanSpec {
        units: "omega".into(),
        base,
        axis,
        series: vec![],
        t_sim,
        method,
        samples,
        tol: 1e-8,
        steady: false,
        seed: 0,
        workers: 1,
        outputs: Outputs::default(),
    }
}

/// Figure presets. n̄ = 0.2 wherever a figure leaves it unstated.
pub fn presets() -> Vec<FigurePreset> {
    let mut fig1c = spec(
        base(1.0, 0.18, 1.0, 0.014, 0.0013, 0.0013, 20),
        Axis::list("gamma", vec![0.0, 0.014]),
        TSim::Periods { periods: 40.0 },
        ScanMethod::Lifetime,
        801,
    );
    fig1c.tol = 1e-9;
    let fig3a = spec(
        base(1.0, 0.056, 1.4, 0.06, 0.0, 0.001, 20),
        Axis::range("delta_e", 0.2, 4.5, 0.05),
        TSim::FgrPeak { multiple: 8.0 },
        ScanMethod::ExpFit,
        400,
    );
    let fig3d = spec(
        base(1.0, 0.046, 0.521, 0.025, 0.0, 0.0005, 14),
        Axis::range("delta_e", 0.2, 3.0, 0.05),
        TSim::FgrPeak { multiple: 8.0 },
        ScanMethod::ExpFit,
        400,
    );
    let mut fig4a = spec(
        base(1.0, 0.18, 0.95, 0.020, 0.0025, 0.0013, 16),
        Axis::range("delta_e", 0.5, 3.5, 0.25),
        TSim::Decay { multiple: 6.0 },
        ScanMethod::Lifetime,
        800,
    );
    fig4a.series = vec![
        Series { tag: "A".into(), set: BTreeMap::from([("v_x".into(), 0.18), ("g".into(), 0.95), ("gamma".into(), 0.020)]) },
        Series { tag: "B".into(), set: BTreeMap::from([("v_x".into(), 0.21), ("g".into(), 1.08), ("gamma".into(), 0.038)]) },
    ];
    let fig5 = spec(
        base(2.0, 0.11, 0.80, 0.11, 0.0013, 0.0013, 14),
        Axis::list("vx_over_gamma", vec![0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.3, 3.6, 4.0, 5.0, 6.0, 8.0]),
        TSim::Periods { periods: 25.0 },
        ScanMethod::Lifetime,
        1000,
    );
    let mut figs4 = spec(
        base(0.0, 0.19, 1.91, 0.038, 0.0, 0.0013, 22),
        Axis::range("delta_e", 0.0, 4.0, 0.25),
        TSim::Periods { periods: 1.0 },
        ScanMethod::None,
        8,
    );
    figs4.steady = true;
    vec![
        FigurePreset {
            name: "fig1c",
            version: 1,
            figure: "Fig. 1C",
            notes: "(Vx,g,ΔE)=(0.18,1,1)ω; γ ∈ {0, 0.014}ω with γz=γm=0.0013ω; 40 periods",
            spec: fig1c,
        },
        FigurePreset {
            name: "fig3a",
            version: 1,
            figure: "Fig. 3A",
            notes: "(Vx,g,γ)=(0.056,1.4,0.06)ω, γm=0.001ω; t_sim = 8·2π/γ̂ (derived)",
            spec: fig3a,
        },
        FigurePreset {
            name: "fig3d",
            version: 1,
            figure: "Fig. 3D",
            notes: "(Vx,g,γ)=(0.046,0.521,0.025)ω, γm=0.0005ω; t_sim = 8·2π/γ̂ (derived)",
            spec: fig3d,
        },
        FigurePreset {
            name: "fig4a",
            version: 1,
            figure: "Fig. 4A",
            notes: "sets A=(0.18,0.95,0.020)ω, B=(0.21,1.08,0.038)ω, γz=0.0025ω, γm=0.0013ω; t_sim = 6/γ (derived, 25-48 periods)",
            spec: fig4a,
        },
        FigurePreset {
            name: "fig5",
            version: 1,
            figure: "Fig. 5",
            notes: "(ΔE,g,γ)=(2,0.80,0.11)ω, γz=γm=0.0013ω; t_sim = 25 periods (derived)",
            spec: fig5,
        },
        FigurePreset {
            name: "figS4",
            version: 1,
            figure: "Fig. S4",
            notes: "(Vx,g,γ)=(0.19,1.91,0.038)ω, n̄=0.2, γm=0.0013ω; steady-state columns only",
            spec: figs4,
        },
    ]
}

pub fn preset(name: &str) -> Result<FigurePreset> {
    presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{name}`")))
}
