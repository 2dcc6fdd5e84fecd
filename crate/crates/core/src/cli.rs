//! Command-line front end: config loading, seed resolution, dispatch and
//! artifact writing. `main.rs` only parses arguments and calls [`run`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{domination_run, hitting_bound_estimate, DominationReport, HittingEstimate};
use crate::ctmc::{self, EventKind, SimOptions, Trajectory, DEFAULT_MAX_EVENTS};
use crate::diagnostics::{self, MartingaleSuite, SweepTable};
use crate::ensemble::{child_seed, run_replicas};
use crate::error::Error;
use crate::graph_kernel::{DensityVector, SiteKernel};
use crate::presets::Preset;
use crate::rate_synthesis::{discrete_coefficients, limit_coefficients, Coefficients, ModelParams};
use crate::scaling::{preset_pair, ReactionPair, ScalingExponents, PRESET_PAIRS};
use crate::sde::{self, SdeSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TEST_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GUARD: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_cap: Option<f64>,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_replicas() -> u64 {
    1
}
fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            sample_dt: None,
            replicas: default_replicas(),
            seed: None,
            max_events: default_max_events(),
            mass_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub dt: f64,
}

/// On-disk run description. A `preset` supplies any of `model`, `kernel`
/// and `rho0` that are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<SiteKernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<DensityVector>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.resolve().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn from_preset(name: &str) -> Result<Self, String> {
        let p = Preset::named(name).map_err(|e| e.to_string())?;
        Ok(Self {
            preset: Some(name.to_string()),
            model: None,
            kernel: None,
            rho0: None,
            run: RunSection { horizon: p.horizon, ..RunSection::default() },
            sde: None,
        })
    }

    /// Fills in preset defaults and checks every invariant.
    pub fn resolve(&self) -> crate::Result<Resolved> {
        let base = self.preset.as_deref().map(Preset::named).transpose()?;
        let missing = |what: &str| Error::InvalidParameter(format!("config needs '{what}' (or a preset)"));
        let params = self.model.or(base.as_ref().map(|b| b.params)).ok_or_else(|| missing("model"))?;
        let kernel = self.kernel.clone().or(base.as_ref().map(|b| b.kernel.clone())).ok_or_else(|| missing("kernel"))?;
        let rho0 = self.rho0.clone().or(base.as_ref().map(|b| b.rho0.clone())).ok_or_else(|| missing("rho0"))?;
        params.validate()?;
        let kernel = SiteKernel::from_rows(&kernel.to_rows())?;
        let rho0 = DensityVector::new(rho0.into_inner())?;
        if rho0.len() != kernel.site_count() {
            return Err(Error::DimensionMismatch { expected: kernel.site_count(), actual: rho0.len() });
        }
        let run = &self.run;
        let opts = SimOptions {
            mass_cap: run.mass_cap,
            max_events: run.max_events,
            ..SimOptions::new(run.horizon, run.sample_dt.unwrap_or(run.horizon))
        };
        // same checks the engine applies, surfaced at load time
        if !(opts.horizon > 0.0 && opts.horizon.is_finite() && opts.sample_dt > 0.0 && opts.sample_dt.is_finite()) {
            return Err(Error::InvalidParameter("run.horizon and run.sample_dt must be positive".into()));
        }
        if run.replicas == 0 || run.max_events == 0 {
            return Err(Error::InvalidParameter("run.replicas and run.max_events must be positive".into()));
        }
        let spec = SdeSpec {
            alpha: params.alpha,
            beta: params.beta,
            k: params.k,
            ell: params.ell,
            kernel: kernel.clone(),
            rho0: rho0.clone(),
            dt: self.sde.map_or(1e-3, |s| s.dt),
            horizon: run.horizon,
            sample_dt: run.sample_dt,
            mass_guard: run.mass_cap,
        };
        spec.validate()?;
        Ok(Resolved { params, kernel, rho0, opts, replicas: run.replicas, sde: spec })
    }

    /// Canonical JSON (fixed key order) used for hashing and the manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub params: ModelParams,
    pub kernel: SiteKernel,
    pub rho0: DensityVector,
    pub opts: SimOptions,
    pub replicas: u64,
    pub sde: SdeSpec,
}

/// Seed priority: flag, then config, then `RD_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64, String> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| format!("RD_SEED is not a u64: '{v}'")),
        None => Ok(0),
    }
}

#[derive(Debug, Parser)]
#[command(name = "rdlab", version, about = "Reaction-diffusion particle systems and their diffusion limit")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model (feller, anderson, quadratic, critical).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Override the model's n.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long)]
    pub max_events: Option<u64>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact CTMC trajectories to CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write each replica's event log as JSON lines.
        #[arg(long)]
        verbose: bool,
    },
    /// Euler-Maruyama paths of the limit SDE to CSV.
    Sde {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Domination check and hitting-probability estimate for the total mass.
    Couple {
        #[command(flatten)]
        common: Common,
        /// Mass threshold K.
        #[arg(long, default_value_t = 10.0)]
        k_cap: f64,
        /// Coupled replicas for the pathwise domination check.
        #[arg(long, default_value_t = 1000)]
        domination_replicas: u64,
    },
    /// Martingale-problem checks (Dynkin, pair and quadratic variation).
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
    /// Terminal-law sweep of the particle system over n against the SDE.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "50,200,1000,2000")]
        n_list: Vec<u64>,
        #[arg(long, default_value_t = 10_000)]
        sde_paths: u64,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Fluctuation exponents of a birth-death reaction pair.
    Exponents {
        /// Built-in pair (quadratic, cubic, mixed, linear).
        #[arg(long)]
        pair: Option<String>,
        /// Polynomial coefficients of F+, constant term first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        f_plus: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        f_minus: Option<Vec<f64>>,
    },
    /// Discrete and limit coefficients at the initial configuration.
    Coeffs {
        #[command(flatten)]
        common: Common,
    },
}

/// Result of a command: JSON for stdout plus an exit code.
struct Outcome {
    report: serde_json::Value,
    code: i32,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Overflow { .. } | Error::SdeBlowUp { .. } | Error::AbsorbedState | Error::DominationViolated { .. } => {
                Failure::Runtime(e.to_string())
            }
            other => Failure::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name), runs the command, prints its
/// JSON report and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::Config(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes"));
            out.code
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_GUARD
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome, Failure> {
    match cmd {
        Command::Simulate { common, verbose } => cmd_simulate(&common, verbose),
        Command::Sde { common, dt } => cmd_sde(&common, dt),
        Command::Couple { common, k_cap, domination_replicas } => cmd_couple(&common, k_cap, domination_replicas),
        Command::Diagnose { common } => cmd_diagnose(&common),
        Command::Converge { common, n_list, sde_paths, dt } => cmd_converge(&common, &n_list, sde_paths, dt),
        Command::Exponents { pair, f_plus, f_minus } => cmd_exponents(pair, f_plus, f_minus),
        Command::Coeffs { common } => cmd_coeffs(&common),
    }
}

/// Config after flag overrides, with its resolved form and seed.
struct Loaded {
    config: RunConfig,
    resolved: Resolved,
    seed: u64,
}

fn load(common: &Common, dt: Option<f64>) -> Result<Loaded, Failure> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path).map_err(Failure::Config)?,
        (None, Some(name)) => RunConfig::from_preset(name).map_err(Failure::Config)?,
        (None, None) => return Err(Failure::Config("pass --config PATH or --preset NAME".into())),
    };
    if common.config.is_some() {
        if let Some(name) = &common.preset {
            config.preset = Some(name.clone());
        }
    }
    if let Some(n) = common.n {
        let base = config.resolve()?.params;
        config.model = Some(ModelParams { n, ..base });
    }
    let run = &mut config.run;
    if let Some(r) = common.replicas {
        run.replicas = r;
    }
    if let Some(h) = common.horizon {
        run.horizon = h;
    }
    if let Some(s) = common.sample_dt {
        run.sample_dt = Some(s);
    }
    if let Some(m) = common.max_events {
        run.max_events = m;
    }
    if let Some(dt) = dt {
        config.sde = Some(SdeSection { dt });
    }
    let seed = resolve_seed(common.seed, config.run.seed, std::env::var("RD_SEED").ok().as_deref()).map_err(Failure::Config)?;
    config.run.seed = Some(seed);
    let resolved = config.resolve()?;
    Ok(Loaded { config, resolved, seed })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    replicas: u64,
    config: &'a RunConfig,
}

fn write_manifest(dir: &Path, command: &str, loaded: &Loaded, replicas: u64) -> Result<(), Failure> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: loaded.config.hash(),
        seed: loaded.seed,
        replicas,
        config: &loaded.config,
    };
    write_json(&dir.join("manifest.json"), &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn out_dir(common: &Common) -> Result<Option<PathBuf>, Failure> {
    match &common.out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

/// 12 significant digits.
fn fmt(v: f64) -> String {
    format!("{v:.11e}")
}

/// Header `t,site_0,…` then one row per sample time.
pub fn write_path_csv<W: Write>(out: W, sites: usize, times: &[f64], row: impl Fn(usize) -> Vec<f64>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..sites).map(|x| format!("site_{x}")));
    w.write_record(&header)?;
    for (i, t) in times.iter().enumerate() {
        let mut rec = vec![fmt(*t)];
        rec.extend(row(i).into_iter().map(fmt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_events(path: &Path, traj: &Trajectory) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for ev in traj.events.iter().flatten() {
        let line = match ev.kind {
            EventKind::Jump { from, to } => serde_json::json!({"t": ev.time, "kind": "jump", "from": from, "to": to}),
            EventKind::Birth(x) => serde_json::json!({"t": ev.time, "kind": "birth", "site": x}),
            EventKind::Death(x) => serde_json::json!({"t": ev.time, "kind": "death", "site": x}),
        };
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct ReplicaSummary {
    replica: u64,
    termination: ctmc::Termination,
    end_time: f64,
    event_count: u64,
    peak_count: u64,
    terminal: Vec<f64>,
}

fn cmd_simulate(common: &Common, verbose: bool) -> Result<Outcome, Failure> {
    let loaded = load(common, None)?;
    let r = &loaded.resolved;
    let eta0 = ctmc::initial_configuration(&r.rho0, r.params.n);
    let opts = SimOptions { record_events: verbose, ..r.opts };
    let dir = out_dir(common)?;
    let trajectories = run_replicas(loaded.seed, r.replicas, |_, s| ctmc::simulate(&r.params, &r.kernel, &eta0, &opts, &s))?;
    if let Some(dir) = &dir {
        for (i, t) in trajectories.iter().enumerate() {
            let path = dir.join(format!("trajectory_{i:05}.csv"));
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            write_path_csv(BufWriter::new(file), t.sites, &t.sample_times, |j| t.density(j).to_vec())
                .map_err(|e| io_err(&path, e))?;
            if verbose {
                write_events(&dir.join(format!("events_{i:05}.jsonl")), t)?;
            }
        }
        write_manifest(dir, "simulate", &loaded, r.replicas)?;
    }
    let summaries: Vec<ReplicaSummary> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| ReplicaSummary {
            replica: i as u64,
            termination: t.termination,
            end_time: t.end_time,
            event_count: t.event_count,
            peak_count: t.peak_count,
            terminal: t.terminal().to_vec(),
        })
        .collect();
    let guard_hits = trajectories.iter().filter(|t| t.guard_hit()).count();
    if guard_hits > 0 {
        eprintln!("warning: {guard_hits} replica(s) stopped by the event guard; partial paths kept");
    }
    Ok(Outcome {
        report: serde_json::json!({
            "command": "simulate",
            "seed": loaded.seed,
            "replicas": r.replicas,
            "outside_theorem": r.params.outside_theorem(),
            "guard_hits": guard_hits,
            "runs": summaries,
        }),
        code: if guard_hits > 0 { EXIT_GUARD } else { EXIT_OK },
    })
}

fn cmd_sde(common: &Common, dt: Option<f64>) -> Result<Outcome, Failure> {
    let loaded = load(common, dt)?;
    let r = &loaded.resolved;
    if !r.sde.stability_ok() {
        eprintln!("warning: k < ell, moments of the SDE may grow; consider run.mass_cap");
    }
    let paths = sde::simulate_paths(&r.sde, r.replicas, loaded.seed)?;
    if let Some(dir) = out_dir(common)? {
        for (i, p) in paths.iter().enumerate() {
            let path = dir.join(format!("sde_{i:05}.csv"));
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            write_path_csv(BufWriter::new(file), p.sites, &p.sample_times, |j| p.state(j).to_vec())
                .map_err(|e| io_err(&path, e))?;
        }
        write_manifest(&dir, "sde", &loaded, r.replicas)?;
    }
    let guard_hits = paths.iter().filter(|p| p.guard_time.is_some()).count();
    let terminal: Vec<Vec<f64>> = paths.iter().map(|p| p.terminal().to_vec()).collect();
    Ok(Outcome {
        report: serde_json::json!({
            "command": "sde",
            "seed": loaded.seed,
            "replicas": r.replicas,
            "dt": r.sde.dt,
            "guard_hits": guard_hits,
            "terminal": terminal,
        }),
        code: if guard_hits > 0 { EXIT_GUARD } else { EXIT_OK },
    })
}

#[derive(Serialize)]
struct CoupleReport {
    c0: f64,
    k_cap: f64,
    bound: f64,
    hitting: HittingEstimate,
    domination_replicas: u64,
    violations: u64,
    min_margin: u64,
    gap_monotone: bool,
    pass: bool,
}

fn cmd_couple(common: &Common, k_cap: f64, domination_replicas: u64) -> Result<Outcome, Failure> {
    let loaded = load(common, None)?;
    let r = &loaded.resolved;
    let eta0 = ctmc::initial_configuration(&r.rho0, r.params.n);
    let c0 = eta0.total() as f64 / r.params.n as f64;
    let hitting =
        hitting_bound_estimate(&r.params, &r.kernel, &eta0, k_cap, r.replicas, r.opts.max_events, loaded.seed)?;
    let dom: Vec<DominationReport> = run_replicas(child_seed(loaded.seed, 1), domination_replicas, |_, s| {
        domination_run(&r.params, &r.kernel, &eta0, r.opts.horizon, &s)
    })?;
    let bound = c0 / k_cap;
    let violations = dom.iter().map(|d| d.violations).sum::<u64>();
    let pass = violations == 0 && hitting.within(bound, diagnostics::DEFAULT_Z);
    if let Some(dir) = out_dir(common)? {
        let path = dir.join("hitting_outcomes.csv");
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        hitting.write_csv(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
        write_manifest(&dir, "couple", &loaded, r.replicas)?;
    }
    let guarded = hitting.guarded;
    let report = CoupleReport {
        c0,
        k_cap,
        bound,
        domination_replicas,
        violations,
        min_margin: dom.iter().map(|d| d.min_margin).min().unwrap_or(0),
        gap_monotone: dom.iter().all(|d| d.gap_monotone),
        hitting,
        pass,
    };
    Ok(Outcome {
        report: serde_json::to_value(&report).expect("serializes"),
        code: if guarded > 0 {
            EXIT_GUARD
        } else if pass {
            EXIT_OK
        } else {
            EXIT_TEST_FAIL
        },
    })
}

fn cmd_diagnose(common: &Common) -> Result<Outcome, Failure> {
    let loaded = load(common, None)?;
    let r = &loaded.resolved;
    let eta0 = ctmc::initial_configuration(&r.rho0, r.params.n);
    let suite: MartingaleSuite =
        diagnostics::martingale_suite(&r.params, &r.kernel, &eta0, r.opts.horizon, r.replicas, loaded.seed)?;
    if let Some(dir) = out_dir(common)? {
        write_json(&dir.join("diagnose.json"), &suite)?;
        write_manifest(&dir, "diagnose", &loaded, r.replicas)?;
    }
    let code = if suite.guard_hits > 0 {
        EXIT_GUARD
    } else if suite.pass() {
        EXIT_OK
    } else {
        EXIT_TEST_FAIL
    };
    Ok(Outcome { report: serde_json::to_value(&suite).expect("serializes"), code })
}

/// Pass rule: moment z-scores within threshold for `n ≥ 200` and KS
/// nonincreasing within 1.36 noise scales.
pub fn sweep_pass(table: &SweepTable) -> bool {
    let z_ok = table
        .rows
        .iter()
        .filter(|r| r.n >= 200)
        .all(|r| r.mean_z.abs() <= diagnostics::DEFAULT_Z && r.second_moment_z.abs() <= diagnostics::DEFAULT_Z);
    z_ok && table.ks_nonincreasing(1.36)
}

fn cmd_converge(common: &Common, n_list: &[u64], sde_paths: u64, dt: Option<f64>) -> Result<Outcome, Failure> {
    let loaded = load(common, dt)?;
    let r = &loaded.resolved;
    if n_list.is_empty() {
        return Err(Failure::Config("--n-list is empty".into()));
    }
    let table =
        diagnostics::convergence_sweep(&r.params, &r.kernel, &r.rho0, n_list, &r.sde, r.replicas, sde_paths, loaded.seed)?;
    if let Some(dir) = out_dir(common)? {
        let path = dir.join("sweep.csv");
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut rows = || -> csv::Result<()> {
            w.write_record(["n", "replicas", "mean_z", "second_moment_z", "ks", "max_error_term", "guard_hits"])?;
            for row in &table.rows {
                w.write_record([
                    row.n.to_string(),
                    row.replicas.to_string(),
                    fmt(row.mean_z),
                    fmt(row.second_moment_z),
                    fmt(row.ks),
                    fmt(row.max_error_term),
                    row.guard_hits.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        rows().map_err(|e| io_err(&path, e))?;
        write_manifest(&dir, "converge", &loaded, r.replicas)?;
    }
    let guard = table.rows.iter().any(|r| r.guard_hits > 0);
    let pass = sweep_pass(&table);
    let mut report = serde_json::to_value(&table).expect("serializes");
    report["pass"] = pass.into();
    Ok(Outcome {
        report,
        code: if guard {
            EXIT_GUARD
        } else if pass {
            EXIT_OK
        } else {
            EXIT_TEST_FAIL
        },
    })
}

fn cmd_exponents(pair: Option<String>, f_plus: Option<Vec<f64>>, f_minus: Option<Vec<f64>>) -> Result<Outcome, Failure> {
    let r: ReactionPair = match (pair, f_plus, f_minus) {
        (Some(name), None, None) => preset_pair(&name)
            .ok_or_else(|| Failure::Config(format!("unknown pair '{name}' (known: {})", PRESET_PAIRS.join(", "))))?,
        (None, Some(p), Some(m)) => ReactionPair::new(p, m)?,
        _ => return Err(Failure::Config("pass --pair NAME or both --f-plus and --f-minus".into())),
    };
    let s = ScalingExponents::of(&r)?;
    Ok(Outcome { report: serde_json::to_value(s).expect("serializes"), code: EXIT_OK })
}

#[derive(Serialize)]
struct CoeffsReport {
    n: u64,
    zeta: Vec<f64>,
    discrete: Coefficients,
    limit: Coefficients,
    outside_theorem: bool,
}

fn cmd_coeffs(common: &Common) -> Result<Outcome, Failure> {
    let loaded = load(common, None)?;
    let r = &loaded.resolved;
    // ζ = η/n with η = ⌊nρ₀⌋
    let zeta = DensityVector::new(ctmc::initial_configuration(&r.rho0, r.params.n).densities(r.params.n as f64))?;
    let p = &r.params;
    let report = CoeffsReport {
        n: p.n,
        zeta: zeta.as_slice().to_vec(),
        discrete: discrete_coefficients(p, &r.kernel, &zeta)?,
        limit: limit_coefficients(p.alpha, p.beta, p.k, p.ell, &r.kernel, &zeta)?,
        outside_theorem: p.outside_theorem(),
    };
    if let Some(dir) = out_dir(common)? {
        write_json(&dir.join("coeffs.json"), &report)?;
        write_manifest(&dir, "coeffs", &loaded, 1)?;
    }
    Ok(Outcome { report: serde_json::to_value(&report).expect("serializes"), code: EXIT_OK })
}
