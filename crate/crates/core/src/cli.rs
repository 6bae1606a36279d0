//! Batch front-end: a JSON config names one experiment, its parameters and a
//! master seed; a run writes `<out>.csv` and `<out>.json`.
//!
//! Exit status: 0 success, 1 error, 2 statistical test failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{invalid, Error, Result};
use crate::estimate::{chi_square_homogeneity, McEstimate, ResultRecord};
use crate::flashing::{
    crossing_csv_row, crossing_mc_capped, fit_bound, flash_uniformity_diagnostic, run_flashing, shell_passage,
    BoundParams, FitPoint, FlashFate, FlashingPlan, ZeroPolicy, CROSSING_CSV_HEADER,
};
use crate::idla::{build_cluster, fluctuation_run, shape_counts, ExplorerConfig, OrderingPolicy};
use crate::lattice::{LatticePoint, SiteSet};
use crate::oracle::{exact_race_probability, full_shell, AbsorbingInstance, Solver};
use crate::shells::{
    cloud_runs, coverage_by_k, crossers_report, gamma_from_bounds, i_star, trace_csv_rows, width_sequence_stats,
    CloudParams, WidthScheme, TRACE_CSV_HEADER,
};
use crate::walk::{SeedSpec, DEFAULT_STEP_CAP};

#[derive(Parser, Debug, Clone, Default)]
#[command(
    name = "idla-lab",
    version,
    about = "Run an internal DLA experiment from a JSON config"
)]
pub struct Args {
    /// Path to the experiment config (JSON).
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `trials`.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Overrides `output` (path stem; `.csv` and `.json` are appended).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Crossing,
    FlashingDiagnostics,
    Idla,
    Abelian,
    PoissonCloud,
    Fluctuations,
    Fit,
    Oracle,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Crossing => "crossing",
            Experiment::FlashingDiagnostics => "flashing-diagnostics",
            Experiment::Idla => "idla",
            Experiment::Abelian => "abelian",
            Experiment::PoissonCloud => "poisson-cloud",
            Experiment::Fluctuations => "fluctuations",
            Experiment::Fit => "fit",
            Experiment::Oracle => "oracle",
        }
    }

    fn sweepable(self) -> bool {
        matches!(
            self,
            Experiment::Crossing | Experiment::Fluctuations | Experiment::Oracle
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub params: Value,
    pub trials: Option<u64>,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub sweep: Option<Sweep>,
}

/// Outcome of a run that did not error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub status: Status,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

/// Result of one experiment before it is written out.
struct Report {
    csv_header: String,
    csv_rows: Vec<String>,
    record: ResultRecord,
    fail: bool,
    sidecars: Vec<(&'static str, String)>,
}

fn config_error(key: &str, msg: impl std::fmt::Display) -> Error {
    invalid(format!("config key `{key}`: {msg}"))
}

/// Reads the config, applies flag overrides and runs it.
pub fn run_from_args(args: &Args) -> Result<RunOutput> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut raw: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config is not valid JSON: {e}")))?;
    let obj = raw
        .as_object_mut()
        .ok_or_else(|| invalid("config must be a JSON object"))?;
    if let Some(s) = args.seed {
        obj.insert("master_seed".into(), json!(s));
    }
    if let Some(t) = args.trials {
        obj.insert("trials".into(), json!(t));
    }
    if let Some(o) = &args.out {
        obj.insert("output".into(), json!(o));
    }
    if let Some(t) = args.threads {
        obj.insert("threads".into(), json!(t));
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    run_value(raw, &base)
}

/// Parses a config document; `base` resolves relative file paths.
pub fn parse_config(raw: &Value) -> Result<ExperimentConfig> {
    serde_json::from_value(raw.clone()).map_err(|e| invalid(format!("config: {e}")))
}

pub fn run_value(raw: Value, base: &Path) -> Result<RunOutput> {
    let cfg = parse_config(&raw)?;
    let threads = cfg.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(config_error("threads", "must be ≥ 1"));
    }
    let out = resolve(
        base,
        cfg.output
            .clone()
            .unwrap_or_else(|| PathBuf::from(cfg.experiment.name())),
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let report = pool.install(|| match &cfg.sweep {
        Some(s) => sweep(&cfg, s, base),
        None => run_experiment(&cfg, &cfg.params, SeedSpec::new(cfg.master_seed, 0), base),
    })?;
    write_outputs(&out, &raw, threads, report)
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_outputs(out: &Path, raw: &Value, threads: usize, report: Report) -> Result<RunOutput> {
    let csv_path = with_ext(out, "csv");
    let json_path = with_ext(out, "json");
    let write = |p: &Path, body: &str| {
        fs::write(p, body).map_err(|e| invalid(format!("cannot write output {}: {e}", p.display())))
    };
    let mut csv = report.csv_header.clone();
    csv.push('\n');
    for row in &report.csv_rows {
        csv.push_str(row);
        csv.push('\n');
    }
    write(&csv_path, &csv)?;
    for (ext, body) in &report.sidecars {
        write(&with_ext(out, ext), body)?;
    }
    let mut summary = serde_json::to_value(&report.record)?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    if let Value::Object(m) = &mut summary {
        m.insert("status".into(), json!(if report.fail { "FAIL" } else { "PASS" }));
        m.insert("config".into(), raw.clone());
        m.insert("threads".into(), json!(threads));
        m.insert("timestamp_unix".into(), json!(timestamp));
    }
    write(&json_path, &serde_json::to_string_pretty(&summary)?)?;
    info!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(RunOutput {
        status: if report.fail { Status::Fail } else { Status::Pass },
        csv_path,
        json_path,
    })
}

/// Runs the experiment once per axis value. Value `i` gets the master seed
/// derived from the config's seed with tag `i`.
fn sweep(cfg: &ExperimentConfig, s: &Sweep, base: &Path) -> Result<Report> {
    if !cfg.experiment.sweepable() {
        return Err(config_error(
            "sweep",
            format!("experiment {} cannot be swept", cfg.experiment.name()),
        ));
    }
    if s.values.is_empty() {
        return Err(config_error("sweep.values", "empty value list"));
    }
    let params = cfg.params.as_object().cloned().unwrap_or_default();
    let root = SeedSpec::new(cfg.master_seed, 0);
    let mut header = String::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut fail = false;
    for (i, &v) in s.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(config_error("sweep.values", format!("{v} is not finite")));
        }
        let mut p = params.clone();
        let value = if v.fract() == 0.0 && v.abs() < 9.0e15 {
            json!(v as i64)
        } else {
            json!(v)
        };
        p.insert(s.axis.clone(), value);
        let r = run_experiment(cfg, &Value::Object(p), root.derive(i as u64), base)?;
        header = r.csv_header;
        rows.extend(r.csv_rows);
        fail |= r.fail;
        runs.push(serde_json::to_value(&r.record)?);
    }
    let record = ResultRecord::new(cfg.experiment.name(), cfg.params.clone(), cfg.master_seed)
        .extra("sweep_axis", &s.axis)
        .extra("sweep_values", &s.values)
        .extra("runs", runs);
    Ok(Report {
        csv_header: header,
        csv_rows: rows,
        record,
        fail,
        sidecars: Vec::new(),
    })
}

fn run_experiment(cfg: &ExperimentConfig, params: &Value, seed: SeedSpec, base: &Path) -> Result<Report> {
    match cfg.experiment {
        Experiment::Crossing => crossing(params, cfg.trials, seed, base),
        Experiment::FlashingDiagnostics => flashing_diagnostics(params, cfg.trials, seed, base),
        Experiment::Idla => idla(params, seed, base),
        Experiment::Abelian => abelian(params, cfg.trials, seed, base),
        Experiment::PoissonCloud => poisson_cloud(params, cfg.trials, seed, base),
        Experiment::Fluctuations => fluctuations(params, cfg.trials, seed),
        Experiment::Fit => fit(params, base, seed.master_seed),
        Experiment::Oracle => oracle(params, seed.master_seed, base),
    }
}

fn typed<T: DeserializeOwned>(params: &Value) -> Result<T> {
    let v = if params.is_null() {
        Value::Object(Map::new())
    } else {
        params.clone()
    };
    serde_json::from_value(v).map_err(|e| invalid(format!("config key `params`: {e}")))
}

fn require_trials(trials: Option<u64>) -> Result<u64> {
    match trials {
        Some(0) => Err(config_error("trials", "must be ≥ 1")),
        Some(t) => Ok(t),
        None => Err(config_error("trials", "required for this experiment")),
    }
}

/// `"full"`, `"half"` (shell sites with first coordinate ≥ 0), or a site
/// file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VSpec {
    Named(VName),
    File { file: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VName {
    Full,
    Half,
}

fn build_v(spec: &VSpec, d: usize, r: f64, h: f64, base: &Path) -> Result<SiteSet> {
    match spec {
        VSpec::Named(VName::Full) => full_shell(d, r, h),
        VSpec::Named(VName::Half) => Ok(full_shell(d, r, h)?.filter(|p| p.coord(0) >= 0)),
        VSpec::File { file } => {
            let path = resolve(base, file.clone());
            let text = fs::read_to_string(&path)
                .map_err(|e| config_error("params.v.file", format!("{}: {e}", path.display())))?;
            SiteSet::from_text(&text)
        }
    }
}

fn default_z(d: usize, r: f64, z: Option<LatticePoint>) -> Result<LatticePoint> {
    match z {
        Some(z) => Ok(z),
        None => LatticePoint::on_axis(d, r.floor() as i32 + 1),
    }
}

fn check_shell_params(r: f64, h: f64) -> Result<()> {
    if !(h > 0.0 && h < r / 2.0) {
        return Err(config_error(
            "params.h",
            format!("need 0 < h < r/2, got r = {r}, h = {h}"),
        ));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossingParams {
    d: usize,
    r: f64,
    h: f64,
    v: VSpec,
    z: Option<LatticePoint>,
    step_cap: Option<u64>,
}

fn crossing(params: &Value, trials: Option<u64>, seed: SeedSpec, base: &Path) -> Result<Report> {
    let p: CrossingParams = typed(params)?;
    check_shell_params(p.r, p.h)?;
    let trials = require_trials(trials)?;
    let v = build_v(&p.v, p.d, p.r, p.h, base)?;
    let z = default_z(p.d, p.r, p.z)?;
    let est = crossing_mc_capped(p.r, p.h, &v, z, trials, seed, p.step_cap.unwrap_or(DEFAULT_STEP_CAP))?;
    Ok(Report {
        csv_header: CROSSING_CSV_HEADER.into(),
        csv_rows: vec![crossing_csv_row(&est)],
        record: ResultRecord::new("crossing", params.clone(), seed.master_seed)
            .with_estimate(&est)
            .extra("metadata", &est.metadata),
        fail: false,
        sidecars: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlashingParams {
    d: usize,
    r: f64,
    h: f64,
    n: usize,
    v: VSpec,
    z: Option<LatticePoint>,
    escape_radius: Option<f64>,
    #[serde(default)]
    uniformity_deltas: Vec<f64>,
    uniformity_samples: Option<u64>,
}

fn flashing_diagnostics(params: &Value, trials: Option<u64>, seed: SeedSpec, base: &Path) -> Result<Report> {
    let p: FlashingParams = typed(params)?;
    check_shell_params(p.r, p.h)?;
    let trials = require_trials(trials)?;
    let mut plan = FlashingPlan::new(p.d, p.r, p.h, p.n)?;
    if let Some(e) = p.escape_radius {
        plan = plan.with_escape_radius(e)?;
    }
    let v = build_v(&p.v, p.d, p.r, p.h, base)?;
    let z = default_z(p.d, p.r, p.z)?;
    let traces = (0..trials)
        .into_par_iter()
        .map(|i| run_flashing(z, &plan, &v, seed.stream(i)))
        .collect::<Result<Vec<_>>>()?;
    // A true crossing must never coexist with a flash site outside V.
    let violations = traces.iter().filter(|t| t.crossed && t.has_flash_outside(&v)).count();
    let true_crossings = traces.iter().filter(|t| t.crossed).count() as u64;
    let mut fates = BTreeMap::<String, u64>::new();
    for t in &traces {
        let key = match t.fate {
            FlashFate::Settled(_) => "settled",
            FlashFate::Crossed => "crossed",
            FlashFate::Escaped => "escaped",
        };
        *fates.entry(key.into()).or_insert(0) += 1;
    }
    let passage = shell_passage(&traces, plan.n);
    let rows = passage
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{}",
                s.k, s.entered, s.passed, s.conditional, s.joint, s.product
            )
        })
        .collect();
    let samples = p.uniformity_samples.unwrap_or(100_000);
    let uniformity = p
        .uniformity_deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| flash_uniformity_diagnostic(delta, p.d, samples, seed.derive(1 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let true_crossing = McEstimate::from_counts(trials, true_crossings, 0, seed.master_seed)?;
    if violations > 0 {
        warn!("{violations} traces crossed with a flash site outside V");
    }
    Ok(Report {
        csv_header: "k,entered,passed,conditional,joint,product".into(),
        csv_rows: rows,
        record: ResultRecord::new("flashing-diagnostics", params.clone(), seed.master_seed)
            .with_estimate(&true_crossing)
            .extra("delta", plan.delta)
            .extra("domination_violations", violations)
            .extra("fates", fates)
            .extra("uniformity", uniformity),
        fail: violations > 0,
        sidecars: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorerSpec {
    File(PathBuf),
    Stacked { site: LatticePoint, n: u32 },
    Sites(Vec<LatticePoint>),
}

fn build_explorers(spec: &ExplorerSpec, base: &Path) -> Result<ExplorerConfig> {
    match spec {
        ExplorerSpec::File(f) => {
            let path = resolve(base, f.clone());
            let text = fs::read_to_string(&path)
                .map_err(|e| config_error("params.explorers.file", format!("{}: {e}", path.display())))?;
            ExplorerConfig::from_text(&text)
        }
        ExplorerSpec::Stacked { site, n } => ExplorerConfig::stacked(*site, *n),
        ExplorerSpec::Sites(sites) => {
            let first = sites
                .first()
                .ok_or_else(|| config_error("params.explorers.sites", "empty list"))?;
            ExplorerConfig::from_counts(first.dim(), sites.iter().map(|p| (*p, 1)))
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdlaParams {
    explorers: ExplorerSpec,
    #[serde(default = "lex")]
    ordering: OrderingPolicy,
}

fn lex() -> OrderingPolicy {
    OrderingPolicy::BySiteLex
}

fn idla(params: &Value, seed: SeedSpec, base: &Path) -> Result<Report> {
    let p: IdlaParams = typed(params)?;
    let eta = build_explorers(&p.explorers, base)?;
    let cluster = build_cluster(&eta, &p.ordering, seed)?;
    let rows = cluster
        .settle_order
        .iter()
        .enumerate()
        .map(|(step, (site, idx))| format!("{step},{idx},{site}"))
        .collect();
    Ok(Report {
        csv_header: "step,explorer,site".into(),
        csv_rows: rows,
        record: ResultRecord::new("idla", params.clone(), seed.master_seed)
            .extra("explorers", eta.total())
            .extra(
                "covers_origin",
                cluster.occupied.contains(&LatticePoint::origin(eta.dim())?),
            ),
        fail: false,
        sidecars: vec![
            ("sites", cluster.occupied.to_text()),
            ("order", cluster.settle_order_text()),
        ],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AbelianParams {
    explorers: ExplorerSpec,
    ordering_a: OrderingPolicy,
    ordering_b: OrderingPolicy,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    0.01
}

fn shape_key(shape: &[LatticePoint]) -> String {
    shape.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";")
}

fn abelian(params: &Value, trials: Option<u64>, seed: SeedSpec, base: &Path) -> Result<Report> {
    let p: AbelianParams = typed(params)?;
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(config_error("params.alpha", "must lie in (0, 1)"));
    }
    let trials = require_trials(trials)?;
    let eta = build_explorers(&p.explorers, base)?;
    // Same seeds as `abelian_test`.
    let a = shape_counts(&eta, &p.ordering_a, trials, seed.derive(1), |_, _| true)?;
    let b = shape_counts(&eta, &p.ordering_b, trials, seed.derive(2), |_, _| true)?;
    let chi = chi_square_homogeneity(&a, &b)?;
    let mut shapes: Vec<&Vec<LatticePoint>> = a.keys().chain(b.keys()).collect();
    shapes.sort();
    shapes.dedup();
    let rows = shapes
        .into_iter()
        .map(|s| {
            format!(
                "{},{},{}",
                shape_key(s),
                a.get(s).copied().unwrap_or(0),
                b.get(s).copied().unwrap_or(0)
            )
        })
        .collect();
    let fail = chi.p_value < p.alpha;
    Ok(Report {
        csv_header: "shape,count_a,count_b".into(),
        csv_rows: rows,
        record: ResultRecord::new("abelian", params.clone(), seed.master_seed)
            .extra("trials", trials)
            .extra("chi_square", &chi),
        fail,
        sidecars: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsSpec {
    kappa: f64,
    c: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudConfig {
    d: usize,
    r: f64,
    epsilon: f64,
    gamma: Option<f64>,
    bounds: Option<BoundsSpec>,
    scheme: WidthScheme,
    eta_base: Option<ExplorerSpec>,
    step_cap: Option<u64>,
}

fn poisson_cloud(params: &Value, trials: Option<u64>, seed: SeedSpec, base: &Path) -> Result<Report> {
    let p: CloudConfig = typed(params)?;
    let runs = require_trials(trials)?;
    let gamma = match (p.gamma, &p.bounds) {
        (Some(g), None) => g,
        (None, Some(b)) => gamma_from_bounds(&BoundParams::new(b.kappa, b.c)?, p.d),
        (None, None) => return Err(config_error("params.gamma", "give either `gamma` or `bounds`")),
        (Some(_), Some(_)) => return Err(config_error("params.bounds", "give only one of `gamma` and `bounds`")),
    };
    let mut cp = CloudParams::new(p.d, p.r, p.epsilon, gamma, p.scheme)?;
    if let Some(spec) = &p.eta_base {
        cp = cp.with_base(build_explorers(spec, base)?)?;
    }
    if let Some(cap) = p.step_cap {
        cp.step_cap = cap;
    }
    let traces = cloud_runs(&cp, runs, seed)?;
    let rows = traces
        .iter()
        .enumerate()
        .flat_map(|(i, t)| trace_csv_rows(i as u64, t))
        .collect();
    let istar = i_star(p.epsilon, p.r, p.d);
    let widths = width_sequence_stats(&traces, p.r, istar)?;
    let aborted = traces.iter().filter(|t| t.aborted).count();
    let covered = traces.iter().filter(|t| t.covers_origin).count() as u64;
    let coverage = McEstimate::from_counts(runs, covered, 0, seed.master_seed)?;
    let mut record = ResultRecord::new("poisson-cloud", params.clone(), seed.master_seed)
        .with_estimate(&coverage)
        .extra("gamma", gamma)
        .extra("lambda0", cp.lambda0)
        .extra("aborted", aborted)
        .extra("width_stats", &widths)
        .extra("coverage_by_k", coverage_by_k(&traces));
    let mut fail = widths.inclusion_violations > 0;
    if p.scheme == WidthScheme::ArrivalCount && runs >= 1000 {
        let crossers = crossers_report(&traces, cp.lambda0, seed.master_seed)?;
        let fs = &crossers.first_shell;
        let first_ok = fs.p_hat <= (-1.0f64).exp() + 3.0 * fs.sigma();
        fail |= !crossers.domination.pass || !first_ok;
        record = record.extra("crossers", &crossers).extra("first_shell_ok", first_ok);
    }
    Ok(Report {
        csv_header: TRACE_CSV_HEADER.into(),
        csv_rows: rows,
        record,
        fail,
        sidecars: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FluctuationParams {
    d: usize,
    n: usize,
}

fn fluctuations(params: &Value, trials: Option<u64>, seed: SeedSpec) -> Result<Report> {
    let p: FluctuationParams = typed(params)?;
    let runs = trials.unwrap_or(1);
    if runs == 0 {
        return Err(config_error("trials", "must be ≥ 1"));
    }
    let results = (0..runs)
        .into_par_iter()
        .map(|i| fluctuation_run(p.d, p.n, seed.stream(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut max_outer = 0.0f64;
    let mut max_inner = 0.0f64;
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let vr = f.volume_radius(p.d);
            // A single site has both radii 0 by definition.
            let (outer_err, inner_err) = if p.n == 1 {
                (0.0, 0.0)
            } else {
                (f.outer_radius - vr, vr - f.inner_radius)
            };
            max_outer = max_outer.max(outer_err);
            max_inner = max_inner.max(inner_err);
            format!(
                "{},{},{},{},{},{},{}",
                p.n, i, f.inner_radius, f.outer_radius, vr, outer_err, inner_err
            )
        })
        .collect();
    Ok(Report {
        csv_header: "n,run,inner_radius,outer_radius,volume_radius,outer_error,inner_error".into(),
        csv_rows: rows,
        record: ResultRecord::new("fluctuations", params.clone(), seed.master_seed)
            .extra("runs", runs)
            .extra("max_outer_error", max_outer)
            .extra("max_inner_error", max_inner),
        fail: false,
        sidecars: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitParams {
    points: Option<Vec<FitPoint>>,
    csv: Option<PathBuf>,
    #[serde(default = "upper_bound")]
    zero_policy: ZeroPolicy,
    d: Option<usize>,
}

fn upper_bound() -> ZeroPolicy {
    ZeroPolicy::UpperBound
}

/// Reads `x,p_hat,ci_low,ci_high` from a crossing CSV; rows with `x = inf`
/// are skipped.
fn points_from_csv(text: &str) -> Result<Vec<FitPoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| invalid("empty CSV"))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| invalid(format!("CSV lacks column `{name}`")))
    };
    let (cx, cp, cl, ch) = (col("x")?, col("p_hat")?, col("ci_low")?, col("ci_high")?);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let get = |c: usize| -> Result<f64> {
            f.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    msg: format!("bad field in column {c}"),
                })
        };
        if f.get(cx).map(|s| s.trim()) == Some("inf") {
            continue;
        }
        out.push(FitPoint {
            x: get(cx)?,
            p_hat: get(cp)?,
            ci_low: get(cl)?,
            ci_high: get(ch)?,
        });
    }
    Ok(out)
}

fn fit(params: &Value, base: &Path, master_seed: u64) -> Result<Report> {
    let p: FitParams = typed(params)?;
    let points = match (&p.points, &p.csv) {
        (Some(pts), None) => pts.clone(),
        (None, Some(path)) => {
            let path = resolve(base, path.clone());
            let text = fs::read_to_string(&path)
                .map_err(|e| config_error("params.csv", format!("{}: {e}", path.display())))?;
            points_from_csv(&text)?
        }
        _ => return Err(config_error("params.points", "give exactly one of `points` and `csv`")),
    };
    let result = fit_bound(&points, p.zero_policy)?;
    let bounds = BoundParams::envelope(&result, &points)?;
    let gamma = p.d.map(|d| gamma_from_bounds(&bounds, d));
    let row = format!(
        "{},{},{},{},{},{},{},{}",
        result.kappa_hat,
        result.c_hat,
        result.r_squared,
        result.residuals.len(),
        result.substituted.len(),
        result.excluded.len(),
        bounds.c_d,
        gamma.map(|g| g.to_string()).unwrap_or_default()
    );
    Ok(Report {
        csv_header: "kappa_hat,c_hat,r_squared,points_used,substituted,excluded,c_envelope,gamma".into(),
        csv_rows: vec![row],
        record: ResultRecord::new("fit", params.clone(), master_seed)
            .extra("fit", &result)
            .extra("bounds", bounds)
            .extra("gamma", gamma),
        fail: false,
        sidecars: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleParams {
    d: Option<usize>,
    r: Option<f64>,
    h: Option<f64>,
    v: Option<VSpec>,
    z: Option<LatticePoint>,
    instance: Option<PathBuf>,
}

fn oracle(params: &Value, master_seed: u64, base: &Path) -> Result<Report> {
    let p: OracleParams = typed(params)?;
    let (inst, d, r, h, vol) = match (&p.instance, p.d, p.r, p.h, &p.v) {
        (Some(path), None, None, None, None) => {
            let path = resolve(base, path.clone());
            let text = fs::read_to_string(&path)
                .map_err(|e| config_error("params.instance", format!("{}: {e}", path.display())))?;
            let inst = AbsorbingInstance::from_text(&text)?;
            let d = inst.dim();
            (inst, d, String::new(), String::new(), String::new())
        }
        (None, Some(d), Some(r), Some(h), Some(v)) => {
            check_shell_params(r, h)?;
            let v = build_v(v, d, r, h, base)?;
            let z = default_z(d, r, p.z)?;
            let inst = AbsorbingInstance::crossing(r, h, &v, z)?;
            (inst, d, json!(r).to_string(), json!(h).to_string(), v.len().to_string())
        }
        _ => {
            return Err(config_error(
                "params",
                "give either `instance` or all of `d`, `r`, `h`, `v`",
            ))
        }
    };
    let sol = exact_race_probability(&inst)?;
    let solver = match sol.solver {
        Solver::DenseLu => "dense_lu".to_string(),
        Solver::ConjugateGradient { iterations } => format!("cg:{iterations}"),
    };
    let row = format!(
        "{d},{r},{h},{vol},{},{solver},{},{}",
        sol.unknowns, sol.probability, sol.residual
    );
    Ok(Report {
        csv_header: "d,r,h,vol_V,unknowns,solver,probability,residual".into(),
        csv_rows: vec![row],
        record: ResultRecord::new("oracle", params.clone(), master_seed).extra("solution", &sol),
        fail: false,
        sidecars: Vec::new(),
    })
}
