//! The `perfect` command-line front end.
//!
//! Every command resolves a [`RunConfig`] from flags, an optional key=value
//! file and the `PERFECT_SEED` environment variable (in that priority order),
//! validates every name and parameter, and only then computes.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cftp::{
    backward_paths, bounding_trace, cftp_bounding, cftp_bruteforce, cftp_monotone, BackoffSchedule,
    BoundingChain, CoalescenceCertificate,
};
use crate::chain::{FiniteSpace, Monotone, Recursion};
use crate::couplers::{
    gamma_minorizer, multigamma_exact_draw, CommonProposal, GammaMinorizer, SliceChain,
};
use crate::doubly_intractable::{
    run_moller, IsingPerfectSampler, IsingPosterior, ReflectedWalk, DEFAULT_PROPOSAL_SCALE,
};
use crate::error::Error;
use crate::fill::{fill_run, reverse_kernel};
use crate::models::{
    parse_fixture, perfect_alpha_draw, truncated_exponential_cdf, DecreasingDensity, Gaussian,
    Ising, IsingEnumeration, LadderWalk, MixtureModel, NonMonotoneWalk, MAX_ENUMERATION_SIDE,
};
use crate::noise::{derive_seed, KeyedNoise, NoiseSource, ScriptedNoise};
use crate::oracle::{exact_stationary, exact_tv_at, point_mass, FiniteChainSpec};
use crate::readonce::{
    all_starts, choose_block_size, extremal_starts, ro_cftp_stream, DEFAULT_BLOCK_CAP,
};
use crate::stats::{chi_square_gof, ks_one_sample, mean_se, tally, GofReport};
use crate::umcmc::{
    cv_estimate, h_estimate, pilot_plan, run_lagged_pair, ControlVariatePlan, LagConfig,
};

pub const SEED_ENV: &str = "PERFECT_SEED";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N: usize = 1000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

const DATA_TAG: u64 = 0xDA7A;

pub const MODELS: &[&str] = &[
    "ladder",
    "walk3",
    "mixture",
    "ising",
    "gamma",
    "trunc-exp",
    "normal",
];
pub const SAMPLERS: &[&str] = &[
    "cftp-bruteforce",
    "cftp-monotone",
    "cftp-bounding",
    "ro-cftp",
    "fill",
    "multigamma",
    "slice",
    "umcmc",
    "common-proposal",
];

#[derive(Debug, Parser)]
#[command(
    name = "perfect",
    version,
    about = "Perfect samplers with exact oracles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw i.i.d. exact samples.
    Sample(RunArgs),
    /// Emit per-step paths of one coupled run.
    Trace(RunArgs),
    /// Test a sample file against the model's exact law.
    Gof(GofArgs),
    /// Print exact quantities for a model.
    Oracle(RunArgs),
    /// Unbiased estimates from lagged coupled chains.
    Umcmc(RunArgs),
    /// Auxiliary-variable MH for the Ising inverse temperature.
    Moller(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Master seed (default: $PERFECT_SEED, then 1).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of replicates, draws or steps.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub sampler: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary file (defaults to the output path with a `.json` extension).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Sampler cap: backward depth, block count, attempts or steps.
    #[arg(long)]
    pub cap: Option<u64>,
    /// Model or sampler parameter, `key=value`. Repeatable.
    #[arg(long = "param", value_parser = parse_kv)]
    pub params: Vec<(String, String)>,
    /// key=value config file; flags win on conflict.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GofArgs {
    /// CSV produced by `sample`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Core(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                Error::OracleUnavailable(_) => EXIT_ORACLE,
                e if e.is_cap_breach() => EXIT_CAP,
                Error::InvalidParameter(_)
                | Error::InvalidState(_)
                | Error::InvalidDistribution(_)
                | Error::ShapeMismatch { .. }
                | Error::PlanMismatch { .. }
                | Error::NoiseExhausted { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_CAP => "cap_breach",
            EXIT_ORACLE => "oracle_unavailable",
            _ => "runtime",
        }
    }

    pub fn to_json(&self) -> Value {
        let message = match self {
            CliError::Config(m) | CliError::Io(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        };
        json!({ "error": { "kind": self.kind(), "message": message, "exit_code": self.exit_code() } })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

/// Fully resolved configuration, embedded in every summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: Option<String>,
    pub sampler: Option<String>,
    pub seed: u64,
    pub n: usize,
    pub cap: Option<u64>,
    pub params: BTreeMap<String, String>,
    pub out: Option<String>,
    pub summary: Option<String>,
}

/// Parses a key=value config file. `#` starts a comment line.
pub fn parse_config_file(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_kv(line) {
            Ok((k, v)) => {
                map.insert(k, v);
            }
            Err(e) => return config_err(format!("config line {}: {e}", i + 1)),
        }
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .or_else(|e| config_err(format!("{key}={v:?}: {e}")))
}

impl RunConfig {
    pub fn resolve(command: &str, args: &RunArgs) -> CliResult<Self> {
        let env_seed = std::env::var(SEED_ENV).ok();
        Self::resolve_with_env(command, args, env_seed.as_deref())
    }

    pub fn resolve_with_env(
        command: &str,
        args: &RunArgs,
        env_seed: Option<&str>,
    ) -> CliResult<Self> {
        let mut file = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .or_else(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
                parse_config_file(&text)?
            }
            None => BTreeMap::new(),
        };
        let take = |file: &mut BTreeMap<String, String>, k: &str| file.remove(k);
        let f_seed = take(&mut file, "seed");
        let f_n = take(&mut file, "n");
        let f_model = take(&mut file, "model");
        let f_sampler = take(&mut file, "sampler");
        let f_cap = take(&mut file, "cap");
        let f_out = take(&mut file, "out");
        let f_summary = take(&mut file, "summary");

        let seed = match (args.seed, f_seed, env_seed) {
            (Some(s), _, _) => s,
            (None, Some(s), _) => parse_num("seed", &s)?,
            (None, None, Some(s)) => parse_num(SEED_ENV, s)?,
            _ => DEFAULT_SEED,
        };
        let n = match (args.n, f_n) {
            (Some(n), _) => n,
            (None, Some(s)) => parse_num("n", &s)?,
            _ => DEFAULT_N,
        };
        let cap = match (args.cap, f_cap) {
            (Some(c), _) => Some(c),
            (None, Some(s)) => Some(parse_num("cap", &s)?),
            _ => None,
        };
        let mut params = file;
        for (k, v) in &args.params {
            params.insert(k.clone(), v.clone());
        }
        let model = args.model.clone().or(f_model);
        let sampler = args.sampler.clone().or(f_sampler);
        if let Some(m) = &model {
            if !MODELS.contains(&m.as_str()) {
                return config_err(format!("unknown model {m:?}; expected one of {MODELS:?}"));
            }
        }
        if let Some(s) = &sampler {
            if !SAMPLERS.contains(&s.as_str()) {
                return config_err(format!(
                    "unknown sampler {s:?}; expected one of {SAMPLERS:?}"
                ));
            }
        }
        let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Ok(Self {
            command: command.to_string(),
            model,
            sampler,
            seed,
            n,
            cap,
            params,
            out: path_str(&args.out).or(f_out),
            summary: path_str(&args.summary).or(f_summary),
        })
    }

    fn model_name(&self) -> CliResult<&str> {
        match &self.model {
            Some(m) => Ok(m),
            None => config_err("--model is required"),
        }
    }

    fn summary_path(&self) -> Option<PathBuf> {
        self.summary.as_ref().map(PathBuf::from).or_else(|| {
            self.out
                .as_ref()
                .map(|o| Path::new(o).with_extension("json"))
        })
    }
}

/// Parameter reader that tracks which keys were consumed.
struct Params<'a> {
    map: &'a BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, String>) -> Self {
        Self {
            map,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map_or(Ok(default), |v| parse_num(key, v))
    }

    fn text(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            config_err(format!("unknown parameters {unknown:?}"))
        }
    }
}

/// A model with its parameters validated.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Ladder(LadderWalk),
    Walk3(NonMonotoneWalk),
    Mixture(MixtureModel),
    Ising(Ising),
    Gamma(GammaMinorizer),
    TruncExp(SliceChain, f64),
    Normal(CommonProposal),
}

fn build_model(name: &str, p: &Params) -> CliResult<ModelSpec> {
    Ok(match name {
        "ladder" => ModelSpec::Ladder(LadderWalk::new(p.num("p", 0.5)?)?),
        "walk3" => ModelSpec::Walk3(NonMonotoneWalk::new(p.num("p", 0.5)?)?),
        "mixture" => match p.raw("fixture") {
            None => ModelSpec::Mixture(MixtureModel::default_fixture()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .or_else(|e| config_err(format!("fixture {path}: {e}")))?;
                ModelSpec::Mixture(MixtureModel::new(
                    parse_fixture(&text)?,
                    Gaussian { mean: 0.0, sd: 1.0 },
                    Gaussian { mean: 3.0, sd: 1.0 },
                )?)
            }
        },
        "ising" => ModelSpec::Ising(Ising::new(p.num("side", 4usize)?, p.num("beta", 0.3)?)?),
        "gamma" => ModelSpec::Gamma(gamma_minorizer(
            p.num("a", 2.0)?,
            p.num("b0", 1.0)?,
            p.num("b1", 3.0)?,
        )?),
        "trunc-exp" => {
            let c = p.num("c", 3.0)?;
            ModelSpec::TruncExp(
                SliceChain::new(DecreasingDensity::truncated_exponential(c)?),
                c,
            )
        }
        "normal" => ModelSpec::Normal(CommonProposal::new(p.num("g_sd", 2.0)?)?),
        other => return config_err(format!("unknown model {other:?}")),
    })
}

fn default_sampler(model: &ModelSpec) -> &'static str {
    match model {
        ModelSpec::Ladder(_) | ModelSpec::Mixture(_) | ModelSpec::Ising(_) => "cftp-monotone",
        ModelSpec::Walk3(_) => "cftp-bounding",
        ModelSpec::Gamma(_) => "multigamma",
        ModelSpec::TruncExp(..) => "slice",
        ModelSpec::Normal(_) => "common-proposal",
    }
}

/// One CSV row: `replicate,value[,extra...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub replicate: u64,
    pub value: f64,
    pub extras: Vec<f64>,
}

/// Rows plus column names and metadata not derivable from the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub extra_columns: Vec<String>,
    pub rows: Vec<Row>,
    pub run: BTreeMap<String, Value>,
}

/// Floats print with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_extra(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        format!("{}", x as i64)
    } else {
        fmt_float(x)
    }
}

pub fn render_csv(t: &Table) -> String {
    let mut s = String::from("replicate,value");
    for c in &t.extra_columns {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for r in &t.rows {
        let _ = write!(s, "{},{}", r.replicate, fmt_float(r.value));
        for &e in &r.extras {
            s.push(',');
            s.push_str(&fmt_extra(e));
        }
        s.push('\n');
    }
    s
}

/// Parses a `replicate,value[,extra...]` CSV.
pub fn parse_csv(text: &str) -> CliResult<(Vec<String>, Vec<Row>)> {
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h,
        None => return config_err("sample file is empty"),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "replicate" || cols[1] != "value" {
        return config_err(format!("unexpected header {header:?}"));
    }
    let extra_columns: Vec<String> = cols[2..].iter().map(|c| c.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return config_err(format!("line {}: expected {} fields", i + 2, cols.len()));
        }
        rows.push(Row {
            replicate: parse_num("replicate", f[0])?,
            value: parse_num("value", f[1])?,
            extras: f[2..]
                .iter()
                .map(|v| parse_num("extra", v))
                .collect::<CliResult<_>>()?,
        });
    }
    if rows.is_empty() {
        return config_err("sample file has no rows");
    }
    Ok((extra_columns, rows))
}

/// Statistics recomputable from the CSV alone.
pub fn table_stats(extra_columns: &[String], rows: &[Row]) -> Value {
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let (mean, se) = mean_se(&values);
    let mut extra = serde_json::Map::new();
    for (j, c) in extra_columns.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.extras[j]).collect();
        extra.insert(c.clone(), json!(mean_se(&col).0));
    }
    json!({ "count": rows.len(), "mean": mean, "se": se, "extra_means": extra })
}

/// Builds the JSON summary. Re-running this on a re-read CSV with the same
/// config and run metadata reproduces the summary exactly.
pub fn summarize(
    config: &Value,
    run: &BTreeMap<String, Value>,
    extra_columns: &[String],
    rows: &[Row],
) -> Value {
    json!({
        "config": config,
        "run": run,
        "stats": table_stats(extra_columns, rows),
    })
}

/// Re-reads an emitted CSV and rebuilds its summary from the stored config
/// and run metadata.
pub fn resummarize(csv_text: &str, summary: &Value) -> CliResult<Value> {
    let (cols, rows) = parse_csv(csv_text)?;
    let run: BTreeMap<String, Value> = summary
        .get("run")
        .and_then(Value::as_object)
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    Ok(summarize(&summary["config"], &run, &cols, &rows))
}

fn schedule(cap: Option<u64>) -> CliResult<BackoffSchedule> {
    Ok(match cap {
        Some(c) => BackoffSchedule::new(c)?,
        None => BackoffSchedule::default(),
    })
}

fn cftp_rows<M, F>(model: &M, n: usize, seed: u64, run: F) -> CliResult<Vec<Row>>
where
    M: Recursion + Sync,
    F: Fn(&KeyedNoise) -> crate::Result<CoalescenceCertificate<M::State>> + Sync,
{
    let rows: crate::Result<Vec<Row>> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let noise = KeyedNoise::new(seed, r, model.noise_shape());
            let c = run(&noise)?;
            Ok(Row {
                replicate: r,
                value: model.value(&c.draw),
                extras: vec![c.depth as f64],
            })
        })
        .collect();
    Ok(rows?)
}

fn depth_table(rows: Vec<Row>) -> Table {
    Table {
        extra_columns: vec!["depth".into()],
        rows,
        run: BTreeMap::new(),
    }
}

fn ro_table<M>(model: &M, starts: &[M::State], cfg: &RunConfig, p: &Params) -> CliResult<Table>
where
    M: Recursion + Sync,
    M::State: Send + Sync,
{
    let target = p.num("target", 0.5)?;
    let pilot = p.num("pilot", 10_000u64)?;
    let max_k = p.num("max_k", 1usize << 16)?;
    p.finish()?;
    let spec = choose_block_size(model, starts, target, pilot, cfg.seed, max_k)?;
    let s = ro_cftp_stream(
        model,
        starts,
        &spec,
        cfg.seed,
        0,
        cfg.n,
        cfg.cap.unwrap_or(DEFAULT_BLOCK_CAP),
    )?;
    let rows = s
        .draws
        .iter()
        .zip(&s.blocks)
        .enumerate()
        .map(|(i, (x, &b))| Row {
            replicate: i as u64,
            value: model.value(x),
            extras: vec![b as f64],
        })
        .collect();
    let mut run = BTreeMap::new();
    run.insert("k".into(), json!(spec.k));
    run.insert("p_hat".into(), json!(spec.p_hat));
    run.insert("pilot_blocks".into(), json!(spec.pilot_blocks));
    run.insert("warmup_blocks".into(), json!(s.warmup_blocks));
    Ok(Table {
        extra_columns: vec!["blocks".into()],
        rows,
        run,
    })
}

fn finite_init(spec: &FiniteChainSpec, init: &str) -> CliResult<Vec<f64>> {
    let n = spec.len();
    match init {
        "uniform" => Ok(vec![1.0 / n as f64; n]),
        "top" => Ok(point_mass(n, n - 1)),
        "bottom" => Ok(point_mass(n, 0)),
        idx => {
            let i: usize = parse_num("init", idx)?;
            if i >= n {
                return config_err(format!("init index {i} out of range 0..{n}"));
            }
            Ok(point_mass(n, i))
        }
    }
}

fn finite_h(spec: &FiniteChainSpec, h: &str) -> CliResult<Vec<f64>> {
    if h == "identity" {
        return Ok(spec.labels().to_vec());
    }
    if let Some(i) = h.strip_prefix("indicator:") {
        let i: usize = parse_num("h", i)?;
        if i >= spec.len() {
            return config_err(format!("indicator index {i} out of range"));
        }
        return Ok(point_mass(spec.len(), i));
    }
    config_err(format!(
        "unknown h {h:?}; expected identity or indicator:<i>"
    ))
}

fn umcmc_table(spec: &FiniteChainSpec, cfg: &RunConfig, p: &Params) -> CliResult<Table> {
    let lag = p.num("lag", 1usize)?;
    let k = p.num("k", 0usize)?;
    let init = finite_init(spec, &p.text("init", "top"))?;
    let hname = p.text("h", "identity");
    let h = finite_h(spec, &hname)?;
    let use_cv = p.num("cv", false)?;
    let pilot = p.num("pilot", 10_000usize)?;
    p.finish()?;
    let mut lc = LagConfig::new(lag, k)?;
    if let Some(c) = cfg.cap {
        lc.cap = c as usize;
    }
    let plan = if use_cv {
        pilot_plan(spec, &init, lag, k, pilot, cfg.seed)?
    } else {
        ControlVariatePlan::zero(k, lag)
    };
    lc.record_through = plan.record_through();
    let rows: crate::Result<Vec<Row>> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|r| {
            let pair = run_lagged_pair(spec, &init, &lc, cfg.seed, r)?;
            let e = h_estimate(&pair, |i| h[i])?;
            let mut extras = vec![e.j as f64, pair.tau as f64];
            if use_cv {
                extras.push(cv_estimate(&pair, |i| h[i], &plan)?);
            }
            Ok(Row {
                replicate: r,
                value: e.value,
                extras,
            })
        })
        .collect();
    let mut cols = vec!["j".to_string(), "tau".to_string()];
    let mut run = BTreeMap::new();
    run.insert("h".into(), json!(hname));
    if use_cv {
        cols.push("cv".into());
        run.insert("eta".into(), json!(plan.eta));
        run.insert("s".into(), json!(plan.s));
    }
    Ok(Table {
        extra_columns: cols,
        rows: rows?,
        run,
    })
}

fn sample_table(cfg: &RunConfig) -> CliResult<Table> {
    let p = Params::new(&cfg.params);
    let model = build_model(cfg.model_name()?, &p)?;
    let sampler = cfg
        .sampler
        .clone()
        .unwrap_or_else(|| default_sampler(&model).to_string());
    let (n, seed) = (cfg.n, cfg.seed);
    let mismatch = || {
        config_err(format!(
            "sampler {sampler:?} does not apply to model {:?}",
            cfg.model_name().unwrap_or("")
        ))
    };
    let mut table = match (&model, sampler.as_str()) {
        (ModelSpec::Ladder(m), "cftp-bruteforce") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_bruteforce(m, z, &s)
            })?))
        }
        (ModelSpec::Walk3(m), "cftp-bruteforce") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_bruteforce(m, z, &s)
            })?))
        }
        (ModelSpec::Ladder(m), "cftp-monotone") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_monotone(m, z, &s)
            })?))
        }
        (ModelSpec::Ising(m), "cftp-monotone") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_monotone(m, z, &s)
            })?))
        }
        (ModelSpec::TruncExp(m, _), "slice" | "cftp-monotone") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_monotone(m, z, &s)
            })?))
        }
        (ModelSpec::Walk3(m), "cftp-bounding") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            Ok(depth_table(cftp_rows(m, n, seed, |z| {
                cftp_bounding(m, z, &s)
            })?))
        }
        (ModelSpec::Mixture(m), "cftp-monotone") => {
            p.finish()?;
            let s = schedule(cfg.cap)?;
            let rows: crate::Result<Vec<Row>> = (0..n as u64)
                .into_par_iter()
                .map(|r| {
                    let (alpha, c) =
                        perfect_alpha_draw(m, &KeyedNoise::new(seed, r, m.noise_shape()), &s)?;
                    Ok(Row {
                        replicate: r,
                        value: alpha,
                        extras: vec![c.draw as f64, c.depth as f64],
                    })
                })
                .collect();
            Ok(Table {
                extra_columns: vec!["l".into(), "depth".into()],
                rows: rows?,
                run: BTreeMap::new(),
            })
        }
        (ModelSpec::Ladder(m), "ro-cftp") => ro_table(m, &extremal_starts(m), cfg, &p),
        (ModelSpec::Walk3(m), "ro-cftp") => ro_table(m, &all_starts(m), cfg, &p),
        (ModelSpec::Mixture(m), "ro-cftp") => ro_table(m, &extremal_starts(m), cfg, &p),
        (ModelSpec::Ising(m), "ro-cftp") => ro_table(m, &extremal_starts(m), cfg, &p),
        (ModelSpec::Ladder(m), "fill") => {
            let t0 = p.num("t0", 8u64)?;
            p.finish()?;
            let rev = reverse_kernel(&m.chain_spec())?;
            let attempts = cfg.cap.unwrap_or(32) as u32;
            let rows: crate::Result<Vec<Row>> = (0..n as u64)
                .into_par_iter()
                .map(|r| {
                    let f = fill_run(m, &rev, t0, seed, r, attempts)?;
                    Ok(Row {
                        replicate: r,
                        value: m.value(&f.draw),
                        extras: vec![f.rejections as f64, f.t as f64],
                    })
                })
                .collect();
            Ok(Table {
                extra_columns: vec!["rejections".into(), "t".into()],
                rows: rows?,
                run: BTreeMap::new(),
            })
        }
        (ModelSpec::Gamma(g), "multigamma") => {
            p.finish()?;
            let cap = cfg.cap.unwrap_or(1 << 20);
            let rows: crate::Result<Vec<Row>> = (0..n as u64)
                .into_par_iter()
                .map(|r| {
                    let d = multigamma_exact_draw(g, seed, r, cap)?;
                    Ok(Row {
                        replicate: r,
                        value: d.value,
                        extras: vec![d.t as f64],
                    })
                })
                .collect();
            let mut run = BTreeMap::new();
            run.insert("rho".into(), json!(g.rho()));
            Ok(Table {
                extra_columns: vec!["t".into()],
                rows: rows?,
                run,
            })
        }
        (ModelSpec::Ladder(m), "umcmc") => umcmc_table(&m.chain_spec(), cfg, &p),
        (ModelSpec::Walk3(m), "umcmc") => umcmc_table(&m.chain_spec(), cfg, &p),
        _ => mismatch(),
    }?;
    table.run.insert("sampler".into(), json!(sampler));
    Ok(table)
}

fn write_out(path: Option<&str>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {p}: {e}")))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn emit_summary(cfg: &RunConfig, summary: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    match cfg.summary_path() {
        Some(p) => std::fs::write(&p, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn emit_table(cfg: &RunConfig, t: Table) -> CliResult<()> {
    write_out(cfg.out.as_deref(), &render_csv(&t))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    emit_summary(cfg, &summarize(&config, &t.run, &t.extra_columns, &t.rows))
}

pub fn cmd_sample(cfg: &RunConfig) -> CliResult<()> {
    let t = sample_table(cfg)?;
    emit_table(cfg, t)
}

pub fn cmd_umcmc(cfg: &RunConfig) -> CliResult<()> {
    if let Some(s) = &cfg.sampler {
        if s != "umcmc" {
            return config_err(format!("umcmc command does not take sampler {s:?}"));
        }
    }
    let mut cfg = cfg.clone();
    cfg.sampler = Some("umcmc".into());
    cmd_sample(&cfg)
}

/// Long-format trace `time,path_id,state[,set_min,set_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<(i64, usize, f64, Option<(f64, f64)>)>,
    pub depth: u64,
    pub coalesced: Option<f64>,
}

pub fn render_trace(t: &Trace) -> String {
    let bounded = t.rows.iter().any(|r| r.3.is_some());
    let mut s = String::from(if bounded {
        "time,path_id,state,set_min,set_max\n"
    } else {
        "time,path_id,state\n"
    });
    for (time, id, x, set) in &t.rows {
        let _ = write!(s, "{time},{id},{}", fmt_float(*x));
        if let Some((lo, hi)) = set {
            let _ = write!(s, ",{},{}", fmt_float(*lo), fmt_float(*hi));
        }
        s.push('\n');
    }
    s
}

fn backward_trace<M, N>(
    model: &M,
    noise: &N,
    starts: &[M::State],
    cert_depth: u64,
) -> CliResult<Trace>
where
    M: Recursion,
    N: NoiseSource + ?Sized,
{
    let paths = backward_paths(model, noise, starts, cert_depth)?;
    let mut rows = Vec::new();
    for (i, row) in paths.iter().enumerate() {
        let time = i as i64 - cert_depth as i64;
        for (id, x) in row.iter().enumerate() {
            rows.push((time, id, model.value(x), None));
        }
    }
    let last = paths.last().expect("at least one row");
    let coalesced = last
        .windows(2)
        .all(|w| w[0] == w[1])
        .then(|| model.value(&last[0]));
    Ok(Trace {
        rows,
        depth: cert_depth,
        coalesced,
    })
}

fn with_bounds<M: BoundingChain>(
    model: &M,
    mut t: Trace,
    sets: &[crate::cftp::BoundingSet<M::State>],
) -> Trace {
    for r in &mut t.rows {
        let set = &sets[(r.0 + t.depth as i64) as usize];
        let vals: Vec<f64> = set.states().iter().map(|x| model.value(x)).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        r.3 = Some((lo, hi));
    }
    t
}

fn parse_script(s: &str) -> CliResult<Vec<bool>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "1" => Ok(true),
            "0" => Ok(false),
            other => config_err(format!("script entries must be 0 or 1, got {other:?}")),
        })
        .collect()
}

fn finite_trace<M>(
    model: &M,
    sampler: &str,
    noise: &dyn NoiseSource,
    s: &BackoffSchedule,
) -> CliResult<Trace>
where
    M: FiniteSpace,
{
    let depth = match sampler {
        "cftp-bruteforce" => cftp_bruteforce(model, noise, s)?.depth,
        other => {
            return config_err(format!(
                "trace does not support sampler {other:?} for this model"
            ))
        }
    };
    backward_trace(model, noise, &model.states(), depth)
}

pub fn build_trace(cfg: &RunConfig) -> CliResult<Trace> {
    let p = Params::new(&cfg.params);
    let model = build_model(cfg.model_name()?, &p)?;
    let sampler = cfg
        .sampler
        .clone()
        .unwrap_or_else(|| default_sampler(&model).to_string());
    let script = p.raw("script").map(parse_script).transpose()?;
    let replicate = p.num("replicate", 0u64)?;
    let s = schedule(cfg.cap)?;
    let keyed = |shape| KeyedNoise::new(cfg.seed, replicate, shape);
    match (&model, sampler.as_str()) {
        (ModelSpec::Ladder(m), _) => {
            p.finish()?;
            let noise: Box<dyn NoiseSource> = match &script {
                Some(bits) => Box::new(ScriptedNoise::past_bits(bits)),
                None => Box::new(keyed(m.noise_shape())),
            };
            if sampler == "cftp-monotone" {
                let c = cftp_monotone(m, noise.as_ref(), &s)?;
                return backward_trace(m, noise.as_ref(), &m.states(), c.depth);
            }
            finite_trace(m, &sampler, noise.as_ref(), &s)
        }
        (ModelSpec::Walk3(m), _) => {
            p.finish()?;
            let noise: Box<dyn NoiseSource> = match &script {
                Some(bits) => Box::new(ScriptedNoise::past_bits(bits)),
                None => Box::new(keyed(m.noise_shape())),
            };
            if sampler == "cftp-bounding" {
                let c = cftp_bounding(m, noise.as_ref(), &s)?;
                let t = backward_trace(m, noise.as_ref(), &m.states(), c.depth)?;
                let sets = bounding_trace(m, noise.as_ref(), c.depth)?;
                return Ok(with_bounds(m, t, &sets));
            }
            finite_trace(m, &sampler, noise.as_ref(), &s)
        }
        (ModelSpec::Normal(m), "common-proposal") => {
            let x0 = p.num("x0", -3.0)?;
            let x1 = p.num("x1", 3.0)?;
            p.finish()?;
            if script.is_some() {
                return config_err("script noise applies to Bernoulli-driven models only");
            }
            let noise = keyed(m.noise_shape());
            let mut cur = vec![x0, x1];
            let mut rows = vec![(0, 0, x0, None), (0, 1, x1, None)];
            for t in 1..=cfg.n as i64 {
                let atom = noise.at(t);
                cur = cur.iter().map(|x| m.mh_step(*x, &atom)).collect();
                rows.extend(cur.iter().enumerate().map(|(i, &x)| (t, i, x, None)));
            }
            let coalesced = (cur[0] == cur[1]).then_some(cur[0]);
            Ok(Trace {
                rows,
                depth: 0,
                coalesced,
            })
        }
        (ModelSpec::TruncExp(m, _), "slice" | "cftp-monotone") => {
            monotone_trace(m, &p, &keyed(m.noise_shape()), &s, &script)
        }
        (ModelSpec::Mixture(m), "cftp-monotone") => {
            monotone_trace(m, &p, &keyed(m.noise_shape()), &s, &script)
        }
        (ModelSpec::Ising(m), "cftp-monotone") => {
            monotone_trace(m, &p, &keyed(m.noise_shape()), &s, &script)
        }
        _ => config_err(format!(
            "trace does not support sampler {sampler:?} for model {:?}",
            cfg.model_name()?
        )),
    }
}

fn monotone_trace<M: Monotone>(
    m: &M,
    p: &Params,
    noise: &KeyedNoise,
    s: &BackoffSchedule,
    script: &Option<Vec<bool>>,
) -> CliResult<Trace> {
    p.finish()?;
    if script.is_some() {
        return config_err("script noise applies to Bernoulli-driven models only");
    }
    let c = cftp_monotone(m, noise, s)?;
    backward_trace(m, noise, &[m.bottom(), m.top()], c.depth)
}

pub fn cmd_trace(cfg: &RunConfig) -> CliResult<()> {
    let t = build_trace(cfg)?;
    write_out(cfg.out.as_deref(), &render_trace(&t))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    emit_summary(
        cfg,
        &json!({ "config": config, "run": { "depth": t.depth, "coalesced_value": t.coalesced, "rows": t.rows.len() } }),
    )
}

/// Goodness of fit of the `value` column against the model's exact law.
pub fn gof_report(cfg: &RunConfig, csv_text: &str) -> CliResult<GofReport> {
    let p = Params::new(&cfg.params);
    let model = build_model(cfg.model_name()?, &p)?;
    p.finish()?;
    let (_, rows) = parse_csv(csv_text)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let finite = |spec: FiniteChainSpec| -> CliResult<GofReport> {
        let pi = exact_stationary(&spec)?.pi;
        Ok(chi_square_gof(&tally(&xs, spec.labels())?, &pi)?)
    };
    match &model {
        ModelSpec::Ladder(m) => finite(m.chain_spec()),
        ModelSpec::Walk3(m) => finite(m.chain_spec()),
        ModelSpec::Ising(m) => {
            if m.side() > MAX_ENUMERATION_SIDE {
                return Err(Error::OracleUnavailable(format!(
                    "no exact Ising law for side {}",
                    m.side()
                ))
                .into());
            }
            let law = IsingEnumeration::new(m.side())?.abs_magnetization_law(m.beta());
            let labels: Vec<f64> = law.iter().map(|l| l.0).collect();
            let probs: Vec<f64> = law.iter().map(|l| l.1).collect();
            Ok(chi_square_gof(&tally(&xs, &labels)?, &probs)?)
        }
        ModelSpec::Mixture(m) => {
            let cdf = m.grid_posterior_cdf(10_000);
            Ok(ks_one_sample(&xs, |x| cdf.eval(x))?)
        }
        ModelSpec::TruncExp(_, c) => Ok(ks_one_sample(&xs, |x| truncated_exponential_cdf(*c, x))?),
        ModelSpec::Normal(_) => {
            use statrs::distribution::{ContinuousCDF, Normal};
            let n = Normal::new(0.0, 1.0).expect("standard normal");
            Ok(ks_one_sample(&xs, |x| n.cdf(x))?)
        }
        ModelSpec::Gamma(_) => Err(Error::OracleUnavailable(
            "no closed-form stationary law for the gamma chain".into(),
        )
        .into()),
    }
}

pub fn cmd_gof(cfg: &RunConfig, input: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(input)
        .or_else(|e| config_err(format!("cannot read {}: {e}", input.display())))?;
    let report = gof_report(cfg, &text)?;
    let out = serde_json::to_string_pretty(&json!({ "config": cfg, "report": report }))
        .expect("report serializes");
    write_out(cfg.out.as_deref(), &(out + "\n"))
}

pub fn oracle_value(cfg: &RunConfig) -> CliResult<Value> {
    let p = Params::new(&cfg.params);
    let model = build_model(cfg.model_name()?, &p)?;
    let finite = |spec: FiniteChainSpec| -> CliResult<Value> {
        let k = p.raw("k").map(|v| parse_num::<usize>("k", v)).transpose()?;
        let init = finite_init(&spec, &p.text("init", "top"))?;
        p.finish()?;
        let o = exact_stationary(&spec)?;
        let mut v =
            json!({ "labels": spec.labels(), "pi": o.pi, "mean": o.expectation(spec.labels()) });
        if let Some(k) = k {
            v["tv_at_k"] = json!({ "k": k, "tv": exact_tv_at(&spec, &init, k)? });
        }
        Ok(v)
    };
    match &model {
        ModelSpec::Ladder(m) => finite(m.chain_spec()),
        ModelSpec::Walk3(m) => finite(m.chain_spec()),
        ModelSpec::Ising(m) => {
            p.finish()?;
            if m.side() > MAX_ENUMERATION_SIDE {
                return Err(Error::OracleUnavailable(format!(
                    "no exact Ising law for side {}",
                    m.side()
                ))
                .into());
            }
            let en = IsingEnumeration::new(m.side())?;
            let b = m.beta();
            Ok(json!({
                "log_z": en.log_z(b),
                "mean_abs_magnetization": en.mean_abs_magnetization(b),
                "abs_magnetization_law": en.abs_magnetization_law(b),
            }))
        }
        ModelSpec::Mixture(m) => {
            let grid = p.num("grid", 10_000usize)?;
            p.finish()?;
            let cdf = m.grid_posterior_cdf(grid);
            let qs: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
            let cdf_at: Vec<f64> = qs.iter().map(|&x| cdf.eval(x)).collect();
            Ok(json!({ "alpha": qs, "posterior_cdf": cdf_at }))
        }
        ModelSpec::TruncExp(_, c) => {
            p.finish()?;
            Ok(json!({ "support": c, "mean": 1.0 - c * (-c).exp() / (1.0 - (-c).exp()) }))
        }
        ModelSpec::Normal(_) => {
            p.finish()?;
            Ok(json!({ "mean": 0.0, "sd": 1.0 }))
        }
        ModelSpec::Gamma(_) => Err(Error::OracleUnavailable(
            "no closed-form stationary law for the gamma chain".into(),
        )
        .into()),
    }
}

pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<()> {
    let v = oracle_value(cfg)?;
    let out = serde_json::to_string_pretty(&json!({ "config": cfg, "oracle": v }))
        .expect("oracle serializes");
    write_out(cfg.out.as_deref(), &(out + "\n"))
}

pub fn moller_table(cfg: &RunConfig) -> CliResult<Table> {
    if let Some(m) = &cfg.model {
        if m != "ising" {
            return config_err(format!("moller runs on the ising model, got {m:?}"));
        }
    }
    let p = Params::new(&cfg.params);
    let side = p.num("side", 4usize)?;
    let beta_true = p.num("beta_true", 0.3)?;
    let scale = p.num("scale", DEFAULT_PROPOSAL_SCALE)?;
    let thin = p.num("thin", 1usize)?;
    let theta0 = p.num("theta0", 0.5)?;
    let chains = p.num("chains", 1u64)?;
    let lo = p.num("lo", 0.0)?;
    let hi = p.num("hi", 1.0)?;
    p.finish()?;
    let mut sampler = IsingPerfectSampler::new(side);
    if cfg.cap.is_some() {
        sampler.schedule = schedule(cfg.cap)?;
    }
    use crate::doubly_intractable::{DoublyIntractableTarget, ExactAuxSampler};
    Ising::new(side, beta_true)?;
    let data = sampler.draw(beta_true, derive_seed(cfg.seed, DATA_TAG))?;
    let target = IsingPosterior::new(side, data, lo, hi)?;
    let walk = ReflectedWalk::new(scale, target.support())?;
    let runs: crate::Result<Vec<_>> = (0..chains)
        .into_par_iter()
        .map(|c| run_moller(&target, &walk, &sampler, theta0, cfg.n, thin, cfg.seed, c))
        .collect();
    let runs = runs?;
    let mut rows = Vec::new();
    for (c, r) in runs.iter().enumerate() {
        for (i, &th) in r.thetas.iter().enumerate() {
            rows.push(Row {
                replicate: c as u64,
                value: th,
                extras: vec![((i + 1) * thin) as f64],
            });
        }
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.acceptance_rate()).collect();
    let mut run = BTreeMap::new();
    run.insert("data_statistic".into(), json!(target.data_statistic()));
    run.insert("acceptance_rates".into(), json!(acc));
    Ok(Table {
        extra_columns: vec!["step".into()],
        rows,
        run,
    })
}

pub fn cmd_moller(cfg: &RunConfig) -> CliResult<()> {
    let t = moller_table(cfg)?;
    let mut cfg = cfg.clone();
    cfg.model.get_or_insert_with(|| "ising".into());
    write_out(cfg.out.as_deref(), &render_csv(&t))?;
    let config = serde_json::to_value(&cfg).expect("config serializes");
    emit_summary(&cfg, &summarize(&config, &t.run, &t.extra_columns, &t.rows))
}

/// Runs one parsed command.
pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(&RunConfig::resolve("sample", a)?),
        Command::Trace(a) => cmd_trace(&RunConfig::resolve("trace", a)?),
        Command::Gof(g) => cmd_gof(&RunConfig::resolve("gof", &g.run)?, &g.input),
        Command::Oracle(a) => cmd_oracle(&RunConfig::resolve("oracle", a)?),
        Command::Umcmc(a) => cmd_umcmc(&RunConfig::resolve("umcmc", a)?),
        Command::Moller(a) => cmd_moller(&RunConfig::resolve("moller", a)?),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are printed to stderr as JSON.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
