//! Config-driven scenario runs and parameter sweeps with CSV output.
//!
//! Config files are flat `key = value` lines; `#` starts a comment.
//!
//! ```text
//! scenario = bar1d
//! method = coupled            # coupled | backward_euler | monolithic_newmark
//! dt_system = 1e-3
//! duration = 0.05
//! output = bar.csv
//! subdomain.2.eta = 100       # subdomains are numbered from 1
//! subdomain.2.beta = 0
//! subdomain.2.gamma = 0.5
//! probes = 3:5, 2:0           # subdomain:dof, dof numbered from 0
//! bar1d.elements = 5,10,5
//! sweep.eta_subdomains = 2
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::coupling::CoupledSystem;
use crate::diagnostics::{subcycling_indicator, StepReport};
use crate::newmark::NewmarkParams;
use crate::problems::{build_bar_1d, build_scenario, Overrides, Probe, Scenario};
use crate::runner::{Method, Simulation, StepFailure};

pub const OUTPUT_DIR_ENV: &str = "MTS_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure at step {step}: {source}")]
    Solver {
        step: u64,
        #[source]
        source: crate::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver { .. } | CliError::Io { .. } => 3,
        }
    }
}

impl From<StepFailure> for CliError {
    fn from(f: StepFailure) -> Self {
        CliError::Solver {
            step: f.step,
            source: f.error,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubdomainOverride {
    pub eta: Option<usize>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub method: Method,
    pub dt_system: Option<f64>,
    pub duration: Option<f64>,
    pub output: PathBuf,
    /// Keyed by 1-based subdomain number.
    pub subdomains: BTreeMap<usize, SubdomainOverride>,
    /// `(subdomain, dof)`, both 0-based.
    pub probes: Option<Vec<(usize, usize)>>,
    pub bar_elements: Option<(usize, usize, usize)>,
    /// 1-based subdomains an integer `eta` sweep value applies to.
    pub sweep_eta_subdomains: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn new(scenario: &str) -> Self {
        Self {
            scenario: scenario.into(),
            method: Method::Coupled,
            dt_system: None,
            duration: None,
            output: PathBuf::from(format!("{scenario}.csv")),
            subdomains: BTreeMap::new(),
            probes: None,
            bar_elements: None,
            sweep_eta_subdomains: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Output path after applying the output-directory override.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let name = self.output.file_name().map(PathBuf::from).unwrap_or_else(|| "out.csv".into());
                PathBuf::from(dir).join(name)
            }
            _ => self.output.clone(),
        }
    }

    /// Builds the scenario with every override applied and validated.
    pub fn build(&self) -> Result<Scenario, CliError> {
        let base = match (self.scenario.as_str(), self.bar_elements) {
            ("bar1d", Some(e)) => build_bar_1d(e),
            (_, Some(_)) => return Err(config_err("bar1d.elements only applies to scenario bar1d")),
            (name, None) => build_scenario(name),
        }
        .map_err(|e| config_err(e.to_string()))?;
        let s = base.system.num_subdomains();
        if let Some(&k) = self.subdomains.keys().find(|&&k| k == 0 || k > s) {
            return Err(config_err(format!("subdomain {k} does not exist (scenario has {s})")));
        }
        let mut o = Overrides {
            dt_system: self.dt_system,
            eta: vec![None; s],
            params: vec![None; s],
        };
        for (&k, so) in &self.subdomains {
            o.eta[k - 1] = so.eta;
            if so.beta.is_some() || so.gamma.is_some() {
                let cur = base.system.subdomains()[k - 1].params();
                let p = NewmarkParams::new(so.beta.unwrap_or(cur.beta()), so.gamma.unwrap_or(cur.gamma()))
                    .map_err(|e| config_err(format!("subdomain {k}: {e}")))?;
                o.params[k - 1] = Some(p);
            }
        }
        if self.method.single_rate() {
            if let Some((k, _)) = self.subdomains.iter().find(|(_, so)| so.eta.is_some_and(|e| e != 1)) {
                return Err(config_err(format!(
                    "method {} does not support subcycling (subdomain {k} has eta != 1)",
                    self.method
                )));
            }
            o.eta = vec![Some(1); s];
        }
        let mut sc = base.with_overrides(&o).map_err(|e| config_err(e.to_string()))?;
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return Err(config_err("duration must be positive"));
            }
            sc.duration = d;
        }
        if let Some(p) = &self.probes {
            sc.oracle = None;
            sc.probes = Vec::with_capacity(p.len());
            for &(sub, dof) in p {
                if sub >= s || dof >= sc.system.subdomains()[sub].dofs() {
                    return Err(config_err(format!("probe {}:{dof} is out of range", sub + 1)));
                }
                sc.probes.push(Probe::new(sub, dof, format!("d_{}_{}", sub + 1, dof)));
            }
        }
        Ok(sc)
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| config_err(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn positive(key: &str, x: f64) -> Result<f64, CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(config_err(format!("{key} must be positive")))
    }
}

impl FromStr for RunConfig {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, CliError> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
            kv.push((no + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let scenario = kv
            .iter()
            .find(|(_, k, _)| k == "scenario")
            .map(|(_, _, v)| v.clone())
            .ok_or_else(|| config_err("missing key 'scenario'"))?;
        let mut c = RunConfig::new(&scenario);
        for (line, k, v) in kv {
            let key = k.as_str();
            match key {
                "scenario" => {}
                "method" => c.method = v.parse().map_err(config_err)?,
                "dt_system" => c.dt_system = Some(positive(key, parse_num(key, &v)?)?),
                "duration" => c.duration = Some(positive(key, parse_num(key, &v)?)?),
                "output" => c.output = PathBuf::from(v),
                "probes" | "probe" => {
                    let mut out = Vec::new();
                    for item in v.split(',') {
                        let (s, d) = item
                            .trim()
                            .split_once(':')
                            .ok_or_else(|| config_err(format!("line {line}: probe '{item}' is not subdomain:dof")))?;
                        let s: usize = parse_num(key, s.trim())?;
                        if s == 0 {
                            return Err(config_err("probe subdomains are numbered from 1"));
                        }
                        out.push((s - 1, parse_num(key, d.trim())?));
                    }
                    c.probes = Some(out);
                }
                "bar1d.elements" => match parse_list::<usize>(key, &v)?.as_slice() {
                    &[a, b, cc] if a > 0 && b > 0 && cc > 0 => c.bar_elements = Some((a, b, cc)),
                    _ => return Err(config_err("bar1d.elements needs three positive counts")),
                },
                "sweep.eta_subdomains" => {
                    let l = parse_list::<usize>(key, &v)?;
                    if l.contains(&0) {
                        return Err(config_err("subdomains are numbered from 1"));
                    }
                    c.sweep_eta_subdomains = Some(l);
                }
                _ => {
                    let parts: Vec<&str> = key.split('.').collect();
                    match parts.as_slice() {
                        ["subdomain", n, field] => {
                            let n: usize = parse_num(key, n)?;
                            let e = c.subdomains.entry(n).or_default();
                            match *field {
                                "eta" => {
                                    let eta: usize = parse_num(key, &v)?;
                                    if eta == 0 {
                                        return Err(config_err(format!("{key} must be positive")));
                                    }
                                    e.eta = Some(eta);
                                }
                                "beta" => e.beta = Some(parse_num(key, &v)?),
                                "gamma" => e.gamma = Some(parse_num(key, &v)?),
                                _ => return Err(config_err(format!("line {line}: unknown key '{key}'"))),
                            }
                        }
                        _ => return Err(config_err(format!("line {line}: unknown key '{key}'"))),
                    }
                }
            }
        }
        Ok(c)
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(sc: &Scenario) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "E_total",
        "E_kinetic",
        "E_potential",
        "e_algorithm",
        "e_interface",
        "norm_d_drift",
        "norm_a_drift",
        "norm_v_residual",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..sc.system.n_constraints()).map(|k| format!("lambda_{k}")));
    h.extend(sc.probes.iter().map(|p| p.label.clone()));
    h
}

fn row(sys: &CoupledSystem, probes: &[Probe], r: &StepReport) -> Vec<String> {
    let opt = |x: Option<f64>| x.map(fmt_f).unwrap_or_default();
    let (nd, na, nv) = r.drift.norms();
    let mut out = vec![
        fmt_f(r.t),
        fmt_f(r.energy.total),
        fmt_f(r.energy.kinetic_total()),
        fmt_f(r.energy.potential_total()),
        opt(r.energy.e_algorithm),
        opt(r.energy.e_interface),
        fmt_f(nd),
        fmt_f(na),
        fmt_f(nv),
    ];
    out.extend(r.lambda.iter().map(|&x| fmt_f(x)));
    out.extend(probes.iter().map(|p| fmt_f(sys.states()[p.subdomain].d[p.dof])));
    out
}

/// Summary of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub final_oracle_error: Option<f64>,
    pub max_abs_e_interface: f64,
    pub cumulative_abs_e_interface: f64,
    pub max_norm_d_drift: f64,
    pub max_norm_a_drift: f64,
    pub max_norm_v_residual: f64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Runs a built scenario and streams one CSV row per system level to `out`.
pub fn run_scenario(sc: &Scenario, method: Method, out: &Path) -> Result<RunSummary, CliError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(out).map_err(io_err(out))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header(sc)).map_err(csv_err(out))?;
    let mut sim = Simulation::new(sc.system.clone(), method).map_err(|e| config_err(e.to_string()))?;
    let r0 = sim.initial_report();
    w.write_record(row(sim.system(), &sc.probes, &r0)).map_err(csv_err(out))?;
    let steps = sc.num_steps();
    let mut e_int = Vec::with_capacity(steps);
    let mut s = RunSummary {
        steps,
        ..RunSummary::default()
    };
    let (d0, a0, v0) = r0.drift.norms();
    s.max_norm_d_drift = d0;
    s.max_norm_a_drift = a0;
    s.max_norm_v_residual = v0;
    let mut write_err = None;
    let res = sim.run(steps, |sys, r| {
        if write_err.is_none() {
            if let Err(e) = w.write_record(row(sys, &sc.probes, r)) {
                write_err = Some(e);
            }
        }
        e_int.push(r.energy.e_interface.unwrap_or(0.0));
        let (nd, na, nv) = r.drift.norms();
        s.max_norm_d_drift = s.max_norm_d_drift.max(nd);
        s.max_norm_a_drift = s.max_norm_a_drift.max(na);
        s.max_norm_v_residual = s.max_norm_v_residual.max(nv);
    });
    w.flush().map_err(io_err(out))?;
    if let Some(e) = write_err {
        return Err(csv_err(out)(e));
    }
    res?;
    let ind = subcycling_indicator(&e_int);
    s.max_abs_e_interface = ind.max_abs;
    s.cumulative_abs_e_interface = ind.cumulative_abs;
    let sys = sim.system();
    s.final_time = sys.time();
    if let Some(o) = &sc.oracle {
        let p = &sc.probes[o.probe];
        s.final_oracle_error = Some((sys.states()[p.subdomain].d[p.dof] - (o.displacement)(sys.time())).abs());
    }
    Ok(s)
}

pub fn run(config: &RunConfig) -> Result<RunSummary, CliError> {
    let sc = config.build()?;
    run_scenario(&sc, config.method, &config.output_path())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    DtSystem,
    Eta,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dt_system" => Ok(SweepAxis::DtSystem),
            "eta" => Ok(SweepAxis::Eta),
            _ => Err(format!("unknown sweep axis '{s}' (expected dt_system or eta)")),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DtSystem => "dt_system",
            SweepAxis::Eta => "eta",
        }
    }
}

/// Member config of a sweep for one value.
pub fn sweep_member(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig, CliError> {
    let mut c = base.clone();
    match axis {
        SweepAxis::DtSystem => c.dt_system = Some(positive("dt_system", parse_num("dt_system", value)?)?),
        SweepAxis::Eta => {
            if value.contains(':') {
                for (i, e) in value.split(':').enumerate() {
                    let eta: usize = parse_num("eta", e.trim())?;
                    if eta == 0 {
                        return Err(config_err("eta values must be positive"));
                    }
                    c.subdomains.entry(i + 1).or_default().eta = Some(eta);
                }
            } else {
                let eta: usize = parse_num("eta", value)?;
                if eta == 0 {
                    return Err(config_err("eta values must be positive"));
                }
                let targets = match &base.sweep_eta_subdomains {
                    Some(t) => t.clone(),
                    None => {
                        // subdomains with the largest default eta
                        let sc = base.build()?;
                        let m = *sc.system.eta().iter().max().expect("non-empty");
                        (1..=sc.system.num_subdomains()).filter(|&k| sc.system.eta()[k - 1] == m).collect()
                    }
                };
                for k in targets {
                    c.subdomains.entry(k).or_default().eta = Some(eta);
                }
            }
        }
    }
    let stem = base.output.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let tag: String = value.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' { ch } else { '_' }).collect();
    c.output = base.output.with_file_name(format!("{stem}_{}_{tag}.csv", axis.name()));
    Ok(c)
}

/// Runs every member (in parallel) and writes the summary CSV; returns its path.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<PathBuf, CliError> {
    if values.is_empty() {
        return Err(config_err("sweep needs at least one value"));
    }
    let members = values
        .iter()
        .map(|v| sweep_member(base, axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let scenarios = members.iter().map(RunConfig::build).collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<RunSummary, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = members
            .iter()
            .zip(&scenarios)
            .map(|(m, sc)| scope.spawn(move || run_scenario(sc, m.method, &m.output_path())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let stem = base.output.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let mut summary_cfg = base.clone();
    summary_cfg.output = base.output.with_file_name(format!("{stem}_sweep_{}.csv", axis.name()));
    let path = summary_cfg.output_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path).map_err(io_err(&path))?));
    w.write_record([
        axis.name(),
        "steps",
        "final_time",
        "final_oracle_error",
        "max_abs_e_interface",
        "cumulative_abs_e_interface",
        "max_norm_d_drift",
        "max_norm_a_drift",
        "max_norm_v_residual",
    ])
    .map_err(csv_err(&path))?;
    let mut first_err = None;
    for (v, r) in values.iter().zip(results) {
        match r {
            Ok(s) => w
                .write_record([
                    v.clone(),
                    s.steps.to_string(),
                    fmt_f(s.final_time),
                    s.final_oracle_error.map(fmt_f).unwrap_or_default(),
                    fmt_f(s.max_abs_e_interface),
                    fmt_f(s.cumulative_abs_e_interface),
                    fmt_f(s.max_norm_d_drift),
                    fmt_f(s.max_norm_a_drift),
                    fmt_f(s.max_norm_v_residual),
                ])
                .map_err(csv_err(&path))?,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    w.flush().map_err(io_err(&path))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(path),
    }
}
