use clap::{Parser, Subcommand, ValueEnum};
use et_core::bath::{compare_with_lindblad, discretize_ohmic, BathOptions, DEFAULT_DIMENSION_CAP};
use et_core::hardware::{emulate_sequence, SequencePlan, SequenceResult};
use et_core::io::{fmt12, write_rows};
use et_core::model::{build_dissipators, build_hamiltonian, initial_state, ModelParams};
use et_core::propagation::{evolve, steady_state_report, TimeGrid, TRAJECTORY_COLUMNS};
use et_core::rates::{fgr_sweep, PopulationSource};
use et_core::scan::{self, Format, ScanSpec};
use et_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const ENV_WORKERS: &str = "ETSIM_WORKERS";
const ENV_OUT_DIR: &str = "ETSIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "etsim", version, about = "Dissipative electron-transfer simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Time evolution of the model; trajectory table.
    Evolve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Parameter sweep from a scan spec.
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// Add the golden-rule column.
        #[arg(long)]
        fgr: bool,
    },
    /// Golden-rule rates over a ΔE list.
    Fgr {
        #[arg(long)]
        config: PathBuf,
    },
    /// Steady state and moment relations.
    Steady {
        #[arg(long)]
        config: PathBuf,
    },
    /// Discrete-bath unitary evolution against the Lindblad model.
    OracleBath {
        #[arg(long)]
        config: PathBuf,
    },
    /// Lab-frame experimental sequence.
    Emulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Figure presets.
    Preset {
        #[command(subcommand)]
        action: PresetCmd,
    },
}

#[derive(Subcommand)]
enum PresetCmd {
    List,
    Run {
        name: String,
        #[arg(long)]
        fgr: bool,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvolveConfig {
    units: String,
    params: ModelParams,
    /// ωt/2π at the end of the run.
    periods: f64,
    samples: usize,
    #[serde(default = "default_tol")]
    tol: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FgrConfig {
    units: String,
    params: ModelParams,
    delta_e: Vec<f64>,
    #[serde(default)]
    populations: Populations,
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum Populations {
    #[default]
    Nbar,
    Nbar0,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SteadyConfig {
    units: String,
    params: ModelParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BathConfig {
    units: String,
    params: ModelParams,
    gamma_target: f64,
    n_modes: usize,
    band: (f64, f64),
    ncut_b: usize,
    bath_nbar: f64,
    periods: f64,
    samples: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_cap")]
    cap: usize,
    #[serde(default = "default_branches")]
    branch_samples: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmulateConfig {
    units: String,
    params: ModelParams,
    plan: SequencePlan,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

fn default_branches() -> usize {
    BathOptions::default().samples
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn check_units(units: &str) -> Result<()> {
    if units != "omega" {
        return Err(Error::InvalidConfig(format!("units must be `omega`, got `{units}`")));
    }
    Ok(())
}

fn env_workers() -> Result<Option<usize>> {
    match std::env::var(ENV_WORKERS) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{ENV_WORKERS}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Explicit `--out` wins; relative paths and defaults land under the output-directory override.
fn resolve_out(out: &Option<PathBuf>, default_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(ENV_OUT_DIR).map(PathBuf::from);
    match (out, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p.clone()),
        (None, Some(d)) => Some(d.join(default_name)),
        (None, None) => None,
    }
}

fn deliver(body: String, target: Option<PathBuf>) -> Result<()> {
    match target {
        None => {
            print!("{body}");
            Ok(())
        }
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            println!("{}", json!({ "status": "ok", "output": path }));
            Ok(())
        }
    }
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, header, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

fn json_table(header: &[String], rows: &[Vec<String>], meta: serde_json::Value) -> String {
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            let m: serde_json::Map<String, serde_json::Value> = header
                .iter()
                .zip(r)
                .map(|(c, v)| {
                    let cell = v
                        .parse::<f64>()
                        .ok()
                        .and_then(serde_json::Number::from_f64)
                        .map(serde_json::Value::Number)
                        .unwrap_or_else(|| serde_json::Value::String(v.clone()));
                    (c.clone(), cell)
                })
                .collect();
            serde_json::Value::Object(m)
        })
        .collect();
    pretty(&json!({ "metadata": meta, "columns": header, "rows": rows }))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn table(header: Vec<String>, rows: Vec<Vec<String>>, fmt: OutFormat, meta: serde_json::Value) -> Result<String> {
    match fmt {
        OutFormat::Csv => csv_text(&header, &rows),
        OutFormat::Json => Ok(json_table(&header, &rows, meta)),
    }
}

fn meta(seed: Option<u64>) -> serde_json::Value {
    json!({ "crate_version": env!("CARGO_PKG_VERSION"), "units": "omega", "seed": seed })
}

fn run_evolve(config: &Path, c: &Common) -> Result<()> {
    let cfg: EvolveConfig = read_config(config)?;
    check_units(&cfg.units)?;
    let p = cfg.params;
    p.validate()?;
    let tol = c.tol.unwrap_or(cfg.tol);
    let space = p.space()?;
    let grid = TimeGrid::uniform(cfg.periods * 2.0 * PI / p.omega, cfg.samples)?;
    let traj = evolve(&initial_state(&p, space)?, &build_hamiltonian(&p, space), &build_dissipators(&p, space, true), &grid, tol)?;
    let header: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    let fmt = c.format.unwrap_or(OutFormat::Csv);
    let body = table(header, traj.csv_rows(p.omega), fmt, meta(None))?;
    deliver(body, resolve_out(&c.out, &ext("trajectory", fmt)))
}

fn ext(stem: &str, fmt: OutFormat) -> String {
    match fmt {
        OutFormat::Csv => format!("{stem}.csv"),
        OutFormat::Json => format!("{stem}.json"),
    }
}

fn run_spec(mut spec: ScanSpec, name: &str, fgr: bool, c: &Common) -> Result<()> {
    if let Some(w) = c.workers.or(env_workers()?) {
        spec.workers = w;
    }
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(t) = c.tol {
        spec.tol = t;
    }
    let fmt = match c.format {
        Some(f) => f,
        None if spec.outputs.csv.is_none() && spec.outputs.json.is_some() => OutFormat::Json,
        None => OutFormat::Csv,
    };
    let from_spec = match fmt {
        OutFormat::Csv => spec.outputs.csv.clone(),
        OutFormat::Json => spec.outputs.json.clone(),
    };
    let mut t = scan::run_scan(&spec)?;
    if fgr {
        t = scan::compare_fgr(t);
    }
    let default = ext(name, fmt);
    let target = resolve_out(&c.out.clone().or(from_spec), &default);
    match target {
        Some(path) => {
            let f = if fmt == OutFormat::Csv { Format::Csv } else { Format::Json };
            let written = scan::emit(&t, f, &path)?;
            let errors = t.rows.iter().filter(|r| r.error.is_some()).count();
            println!("{}", json!({ "status": "ok", "output": written, "rows": t.rows.len(), "point_errors": errors }));
            Ok(())
        }
        None => {
            match fmt {
                OutFormat::Csv => print!("{}", scan::csv_string(&t)?),
                OutFormat::Json => print!("{}", pretty(&scan::json_value(&t)?)),
            }
            Ok(())
        }
    }
}

fn run_fgr(config: &Path, c: &Common) -> Result<()> {
    let cfg: FgrConfig = read_config(config)?;
    check_units(&cfg.units)?;
    cfg.params.validate()?;
    if cfg.delta_e.is_empty() || cfg.delta_e.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("delta_e must be finite and non-empty".into()));
    }
    let src = match cfg.populations {
        Populations::Nbar => PopulationSource::Nbar,
        Populations::Nbar0 => PopulationSource::Nbar0,
    };
    let ks = fgr_sweep(&cfg.params, &cfg.delta_e, src)?;
    let g = cfg.params.gamma;
    let rows: Vec<Vec<String>> = cfg
        .delta_e
        .iter()
        .zip(&ks)
        .map(|(&de, &k)| vec![fmt12(de), fmt12(k), if g > 0.0 { fmt12(k / g) } else { String::new() }])
        .collect();
    let header = vec!["delta_e".to_string(), "k_fgr".into(), "k_fgr_over_gamma".into()];
    let fmt = c.format.unwrap_or(OutFormat::Csv);
    deliver(table(header, rows, fmt, meta(None))?, resolve_out(&c.out, &ext("fgr", fmt)))
}

fn run_steady(config: &Path, c: &Common) -> Result<()> {
    let cfg: SteadyConfig = read_config(config)?;
    check_units(&cfg.units)?;
    let r = steady_state_report(&cfg.params)?;
    let fields: Vec<(&str, f64)> = vec![
        ("p_d", r.p_d),
        ("n_ss", r.n_ss),
        ("n_ss_relation", r.n_ss_relation),
        ("n_ss_un", r.n_ss_uncorrelated),
        ("a_re", r.a_ss.re),
        ("a_im", r.a_ss.im),
        ("a_relation_re", r.a_ss_relation.re),
        ("a_relation_im", r.a_ss_relation.im),
        ("y_ss", r.y_ss),
        ("y_ss_relation", r.y_ss_relation),
        ("residual", r.residual),
    ];
    let fmt = c.format.unwrap_or(OutFormat::Json);
    let body = match fmt {
        OutFormat::Csv => {
            let mut header: Vec<String> = fields.iter().map(|(k, _)| k.to_string()).collect();
            header.extend(["degenerate".to_string(), "method".into()]);
            let mut row: Vec<String> = fields.iter().map(|(_, v)| fmt12(*v)).collect();
            row.extend([r.degenerate.to_string(), format!("{:?}", r.method).to_lowercase()]);
            csv_text(&header, &[row])?
        }
        OutFormat::Json => {
            let mut m: serde_json::Map<String, serde_json::Value> = fields.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            m.insert("degenerate".into(), json!(r.degenerate));
            m.insert("method".into(), json!(format!("{:?}", r.method).to_lowercase()));
            m.insert("params".into(), json!(cfg.params));
            m.insert("metadata".into(), meta(None));
            pretty(&serde_json::Value::Object(m))
        }
    };
    deliver(body, resolve_out(&c.out, &ext("steady", fmt)))
}

fn run_bath(config: &Path, c: &Common) -> Result<()> {
    let cfg: BathConfig = read_config(config)?;
    check_units(&cfg.units)?;
    if c.format == Some(OutFormat::Csv) {
        return Err(Error::InvalidConfig("oracle-bath emits json only".into()));
    }
    let p = cfg.params;
    p.validate()?;
    let bath = discretize_ohmic(cfg.gamma_target, p.omega, cfg.n_modes, cfg.band, cfg.ncut_b)?;
    let opts = BathOptions {
        tol: c.tol.unwrap_or(cfg.tol),
        samples: cfg.branch_samples,
        seed: c.seed.unwrap_or(cfg.seed),
        cap: cfg.cap,
    };
    let space = p.space()?;
    let grid = TimeGrid::uniform(cfg.periods * 2.0 * PI / p.omega, cfg.samples)?;
    let (cmp, full, lind) = compare_with_lindblad(&p, &bath, &initial_state(&p, space)?, cfg.bath_nbar, &grid, &opts)?;
    let series: Vec<serde_json::Value> = grid
        .times()
        .iter()
        .enumerate()
        .map(|(i, &t)| json!({ "t": t, "p_d_full": full.traj.p_d[i], "p_d_lindblad": lind.p_d[i], "n_full": full.traj.n_avg[i], "n_lindblad": lind.n_avg[i] }))
        .collect();
    let body = pretty(&json!({ "metadata": meta(Some(opts.seed)), "comparison": cmp, "series": series }));
    deliver(body, resolve_out(&c.out, "oracle_bath.json"))
}

fn run_emulate(config: &Path, c: &Common) -> Result<()> {
    let cfg: EmulateConfig = read_config(config)?;
    check_units(&cfg.units)?;
    let mut plan = cfg.plan;
    if let Some(s) = c.seed {
        plan.seed = s;
    }
    if let Some(t) = c.tol {
        plan.tol = t;
    }
    let res = emulate_sequence(&plan, &cfg.params)?;
    let fmt = c.format.unwrap_or(OutFormat::Csv);
    let body = table(SequenceResult::csv_header(), res.csv_rows(cfg.params.omega), fmt, meta(Some(plan.seed)))?;
    deliver(body, resolve_out(&c.out, &ext("sequence", fmt)))
}

fn preset_list() -> Result<()> {
    let list: Vec<serde_json::Value> = scan::presets()
        .iter()
        .map(|p| json!({ "name": p.name, "version": p.version, "figure": p.figure, "notes": p.notes, "points": p.spec.axis.points().map(|v| v.len()).unwrap_or(0) * p.spec.series.len().max(1) }))
        .collect();
    print!("{}", pretty(&json!(list)));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Some(0) = c.workers {
        return Err(Error::InvalidConfig("workers must be ≥ 1".into()));
    }
    match &cli.cmd {
        Cmd::Evolve { config } => run_evolve(config, c),
        Cmd::Scan { config, fgr } => {
            let text = std::fs::read_to_string(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
            run_spec(ScanSpec::from_json(&text)?, "scan", *fgr, c)
        }
        Cmd::Fgr { config } => run_fgr(config, c),
        Cmd::Steady { config } => run_steady(config, c),
        Cmd::OracleBath { config } => run_bath(config, c),
        Cmd::Emulate { config } => run_emulate(config, c),
        Cmd::Preset { action: PresetCmd::List } => preset_list(),
        Cmd::Preset { action: PresetCmd::Run { name, fgr } } => {
            let p = scan::preset(name)?;
            run_spec(p.spec, p.name, *fgr, c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": e.to_string().trim() } }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::from(1)
        }
    }
}
