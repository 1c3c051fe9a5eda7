//! Command execution. Every CLI command is resolved into a [`Job`], run in
//! memory to a list of `(path, bytes)` outputs plus a [`Manifest`], and only
//! then written to disk. `rerun` drives the same code path from a stored
//! manifest and compares output hashes instead of writing, which is what
//! makes reproducibility checkable.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use factor_core::inference::{
    filter, smooth, summarize, variable_elimination, PosteriorSummary, ProjectionPolicy,
};
use factor_core::models::simulate;
use factor_core::{
    parse_model, Assignment, Factor, FactorError, FactorGraphModel, ParsedModel, Result,
    SampleFactor, Scope, StateSpaceModel,
};
use serde::Serialize;

use crate::emit::{float_cell, read_observations, Format, Table};
use crate::manifest::{
    manifest_path, sha256_hex, FileRef, Manifest, CSV_SCHEMA_VERSION, TOOL_NAME,
};

pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;

/// Resampling threshold used by the sample representations: resample when the
/// effective sample size falls below this fraction of the particle count.
const RESAMPLE_ESS_FRACTION: f64 = 0.5;

/// Posterior representation a run maintains. The representation decides only
/// how the prior factor is constructed and which projection policy keeps the
/// posterior in that family; the inference loop itself is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Rep {
    /// Exact discrete filtering on dense or sparse tables.
    Table,
    /// Exact linear-Gaussian filtering in canonical form.
    Gaussian,
    /// Weighted particles with systematic resampling.
    Sample,
    /// Per-branch moment-matched Gaussians under a discrete index.
    HybridParametric,
    /// Particles over the joint discrete-continuous state.
    HybridSample,
}

impl Rep {
    pub fn tag(self) -> &'static str {
        match self {
            Rep::Table => "table",
            Rep::Gaussian => "gaussian",
            Rep::Sample => "sample",
            Rep::HybridParametric => "hybrid-parametric",
            Rep::HybridSample => "hybrid-sample",
        }
    }

    pub fn from_tag(s: &str) -> Result<Rep> {
        match s {
            "table" => Ok(Rep::Table),
            "gaussian" => Ok(Rep::Gaussian),
            "sample" => Ok(Rep::Sample),
            "hybrid-parametric" => Ok(Rep::HybridParametric),
            "hybrid-sample" => Ok(Rep::HybridSample),
            other => Err(FactorError::ConfigInvalid(format!(
                "unknown representation `{other}` \
                 (expected table, gaussian, sample, hybrid-parametric or hybrid-sample)"
            ))),
        }
    }
}

/// A fully resolved command, ready to execute. Built either from CLI
/// arguments or from a stored manifest.
#[derive(Debug, Clone)]
pub enum Job {
    Query {
        model: PathBuf,
        query: Vec<String>,
        evidence: Vec<String>,
        format: Format,
        out: Option<PathBuf>,
    },
    Filter {
        model: PathBuf,
        data: PathBuf,
        rep: Rep,
        particles: usize,
        seed: u64,
        format: Format,
        out: PathBuf,
        smoothed: bool,
    },
    Simulate {
        model: PathBuf,
        steps: Option<usize>,
        seed: Option<u64>,
        out: PathBuf,
    },
    Compare {
        model: PathBuf,
        data: PathBuf,
        reps: (Rep, Rep),
        particles: usize,
        seed: u64,
        out: PathBuf,
    },
}

/// Everything a job produces, before anything touches the filesystem.
pub struct Produced {
    /// Output files as (absolute path, bytes). Empty for stdout-only queries.
    pub files: Vec<(PathBuf, Vec<u8>)>,
    /// Manifest to write next to the first output; `None` for stdout runs.
    pub manifest: Option<Manifest>,
    /// Bytes to print to stdout instead of writing files.
    pub stdout: Option<Vec<u8>>,
}

pub fn execute(job: &Job) -> Result<Produced> {
    match job {
        Job::Query {
            model,
            query,
            evidence,
            format,
            out,
        } => run_query(model, query, evidence, *format, out.as_deref()),
        Job::Filter {
            model,
            data,
            rep,
            particles,
            seed,
            format,
            out,
            smoothed,
        } => run_filter(model, data, *rep, *particles, *seed, *format, out, *smoothed),
        Job::Simulate {
            model,
            steps,
            seed,
            out,
        } => run_simulate(model, *steps, *seed, out),
        Job::Compare {
            model,
            data,
            reps,
            particles,
            seed,
            out,
        } => run_compare(model, data, *reps, *particles, *seed, out),
    }
}

// ---------------------------------------------------------------------------
// query

fn run_query(
    model_path: &Path,
    query: &[String],
    evidence: &[String],
    format: Format,
    out: Option<&Path>,
) -> Result<Produced> {
    let (parsed, model_ref) = load_model(model_path)?;
    let graph = parsed.as_graph().ok_or_else(|| {
        FactorError::ConfigInvalid("`query` needs a factor-graph model, not a state-space one".into())
    })?;

    let mut qvars = Vec::with_capacity(query.len());
    for name in query {
        let v = graph
            .variable(name)
            .ok_or_else(|| FactorError::MissingVariable(name.clone()))?;
        qvars.push(v.clone());
    }
    let qscope = Scope::new(qvars)?;
    let ev = parse_evidence(graph, evidence)?;

    let posterior = variable_elimination(graph, &qscope, &ev)?;
    let table = query_table(&posterior)?;
    let bytes = table.to_bytes(format);

    match out {
        None => Ok(Produced {
            files: Vec::new(),
            manifest: None,
            stdout: Some(bytes),
        }),
        Some(out) => {
            let out = absolutize(out);
            let outputs = vec![FileRef::new(out.clone(), &bytes)];
            let manifest = Manifest {
                tool: TOOL_NAME.into(),
                version: version(),
                csv_schema: CSV_SCHEMA_VERSION,
                created_unix: now_unix(),
                command: "query".into(),
                model: model_ref,
                data: None,
                rep: None,
                reps: None,
                policy: None,
                seed: None,
                particles: None,
                steps: None,
                format: Some(format.tag().into()),
                query: Some(query.to_vec()),
                evidence: Some(evidence.to_vec()),
                out: out.clone(),
                outputs,
            };
            Ok(Produced {
                files: vec![(out, bytes)],
                manifest: Some(manifest),
                stdout: None,
            })
        }
    }
}

/// Evidence items are `name=value`. Discrete values are category indices or
/// the words true/false; continuous values are numbers.
fn parse_evidence(graph: &FactorGraphModel, items: &[String]) -> Result<Assignment> {
    let mut a = Assignment::new();
    for item in items {
        let (name, raw) = item.split_once('=').ok_or_else(|| {
            FactorError::ConfigInvalid(format!("evidence `{item}` is not of the form name=value"))
        })?;
        let name = name.trim();
        let raw = raw.trim();
        let v = graph
            .variable(name)
            .ok_or_else(|| FactorError::MissingVariable(name.to_string()))?;
        if v.is_discrete() {
            let k = match raw {
                "true" => 1,
                "false" => 0,
                s => s.parse::<usize>().map_err(|_| {
                    FactorError::ConfigInvalid(format!(
                        "evidence value `{s}` for `{name}` is neither an index nor true/false"
                    ))
                })?,
            };
            a = a.with(v.name(), k);
        } else {
            let x: f64 = raw.parse().map_err(|_| {
                FactorError::ConfigInvalid(format!(
                    "evidence value `{raw}` for `{name}` is not a number"
                ))
            })?;
            a = a.with(v.name(), x);
        }
    }
    Ok(a)
}

/// A discrete posterior prints as one row per joint assignment with a final
/// probability column; anything else prints as a one-row moment summary.
fn query_table(posterior: &Factor) -> Result<Table> {
    match posterior {
        Factor::Table(_) | Factor::Sparse(_) => {
            let t = match posterior {
                Factor::Table(t) => t.clone(),
                Factor::Sparse(s) => s.to_dense()?,
                _ => unreachable!(),
            };
            let scope = t.scope().clone();
            let mut header: Vec<String> =
                scope.iter().map(|v| v.name().to_string()).collect();
            header.push("p".into());
            let strides = t.strides().to_vec();
            let cards: Vec<usize> =
                scope.iter().map(|v| v.cardinality().expect("discrete")).collect();
            let mut rows = Vec::with_capacity(t.values().len());
            for (flat, &p) in t.values().iter().enumerate() {
                let mut row: Vec<String> = (0..scope.len())
                    .map(|k| ((flat / strides[k]) % cards[k]).to_string())
                    .collect();
                row.push(float_cell(p));
                rows.push(row);
            }
            Ok(Table { header, rows })
        }
        other => {
            let s = summarize(other)?;
            let mut header = Vec::new();
            let mut row = Vec::new();
            for c in &s.continuous {
                header.push(format!("mean_{}", c.name));
                row.push(float_cell(c.mean));
            }
            for c in &s.continuous {
                header.push(format!("var_{}", c.name));
                row.push(float_cell(c.var));
            }
            for d in &s.discrete {
                for (k, &p) in d.probs.iter().enumerate() {
                    header.push(format!("p_{}{k}", d.name));
                    row.push(float_cell(p));
                }
            }
            Ok(Table {
                header,
                rows: vec![row],
            })
        }
    }
}

// ---------------------------------------------------------------------------
// filter / smooth

fn run_filter(
    model_path: &Path,
    data_path: &Path,
    rep: Rep,
    particles: usize,
    seed: u64,
    format: Format,
    out: &Path,
    smoothed: bool,
) -> Result<Produced> {
    let (parsed, model_ref) = load_model(model_path)?;
    let (data_text, data_ref) = load_data(data_path)?;
    let command = if smoothed { "smooth" } else { "filter" };
    let ssm = parsed.as_state_space().ok_or_else(|| {
        FactorError::ConfigInvalid(format!("`{command}` needs a state-space model"))
    })?;
    let obs = read_observations(&data_text, ssm.obs_scope())?;

    let (model, policy) = realize_rep(ssm, rep, particles, seed)?;
    let table = if smoothed {
        let posts = smooth(&model, &obs)?;
        let summaries = summarize_all(&posts)?;
        rows_from_summaries(&summaries, None, model.state_scope())?
    } else {
        let res = filter(&model, &obs, &policy)?;
        let summaries = summarize_all(&res.posteriors)?;
        rows_from_summaries(&summaries, Some(&res.loglik_increments), model.state_scope())?
    };
    let bytes = table.to_bytes(format);

    let out = absolutize(out);
    let outputs = vec![FileRef::new(out.clone(), &bytes)];
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: version(),
        csv_schema: CSV_SCHEMA_VERSION,
        created_unix: now_unix(),
        command: command.into(),
        model: model_ref,
        data: Some(data_ref),
        rep: Some(rep.tag().into()),
        reps: None,
        policy: Some(policy_tag(&policy)),
        seed: Some(seed),
        particles: Some(particles),
        steps: None,
        format: Some(format.tag().into()),
        query: None,
        evidence: None,
        out: out.clone(),
        outputs,
    };
    Ok(Produced {
        files: vec![(out, bytes)],
        manifest: Some(manifest),
        stdout: None,
    })
}

/// Builds the model variant and projection policy for a representation.
///
/// The returned model differs from the input only in its prior factor; the
/// transition and observation factors, and the whole filtering code path,
/// are identical across representations.
fn realize_rep(
    ssm: &StateSpaceModel,
    rep: Rep,
    particles: usize,
    seed: u64,
) -> Result<(StateSpaceModel, ProjectionPolicy)> {
    let prior = ssm.prior();
    match rep {
        Rep::Table => {
            if !matches!(prior, Factor::Table(_) | Factor::Sparse(_)) {
                return Err(rep_mismatch(rep, prior, "a discrete table"));
            }
            Ok((ssm.clone(), ProjectionPolicy::None))
        }
        Rep::Gaussian => {
            if !matches!(prior, Factor::Canonical(_) | Factor::Moment(_)) {
                return Err(rep_mismatch(rep, prior, "a Gaussian"));
            }
            Ok((ssm.clone(), ProjectionPolicy::None))
        }
        Rep::HybridParametric => {
            if !matches!(
                prior,
                Factor::Conditional(_) | Factor::Mixture(_) | Factor::Truncated(_)
            ) {
                return Err(rep_mismatch(rep, prior, "a hybrid or truncated factor"));
            }
            let projected = ProjectionPolicy::MomentMatch.apply(prior.clone())?;
            let model = ssm.clone().with_prior(projected)?;
            Ok((model, ProjectionPolicy::MomentMatch))
        }
        Rep::Sample | Rep::HybridSample => {
            let p = SampleFactor::sample_from(prior, particles, seed, "prior")?;
            let model = ssm.clone().with_prior(Factor::Sample(p))?;
            Ok((
                model,
                ProjectionPolicy::Resample {
                    ess_fraction: RESAMPLE_ESS_FRACTION,
                },
            ))
        }
    }
}

fn rep_mismatch(rep: Rep, prior: &Factor, wanted: &str) -> FactorError {
    FactorError::ConfigInvalid(format!(
        "--rep {} needs {wanted} prior, this model's prior is {}",
        rep.tag(),
        prior.repr_name()
    ))
}

fn policy_tag(policy: &ProjectionPolicy) -> String {
    match policy {
        ProjectionPolicy::None => "none".into(),
        ProjectionPolicy::MomentMatch => "moment-match".into(),
        ProjectionPolicy::Resample { ess_fraction } => format!("resample-{ess_fraction}"),
    }
}

fn summarize_all(posts: &[Factor]) -> Result<Vec<PosteriorSummary>> {
    posts.iter().map(summarize).collect()
}

/// Per-step rows: `t`, posterior means and variances for each continuous
/// state variable, category probabilities for each discrete one, and the
/// per-step log-likelihood increment when filtering. `t` counts observations
/// from 1.
fn rows_from_summaries(
    summaries: &[PosteriorSummary],
    increments: Option<&[f64]>,
    state: &Scope,
) -> Result<Table> {
    let (disc, cont) = state.split_by_kind();
    let mut header = vec!["t".to_string()];
    for v in cont.iter() {
        header.push(format!("mean_{}", v.name()));
    }
    for v in cont.iter() {
        header.push(format!("var_{}", v.name()));
    }
    for v in disc.iter() {
        for k in 0..v.cardinality().expect("discrete") {
            header.push(format!("p_{}{k}", v.name()));
        }
    }
    if increments.is_some() {
        header.push("loglik_increment".into());
    }

    let mut rows = Vec::with_capacity(summaries.len());
    for (t, s) in summaries.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        for v in cont.iter() {
            row.push(float_cell(lookup_cont(s, v.name(), t)?.mean));
        }
        for v in cont.iter() {
            row.push(float_cell(lookup_cont(s, v.name(), t)?.var));
        }
        for v in disc.iter() {
            let d = s
                .discrete
                .iter()
                .find(|d| d.name == v.name())
                .ok_or_else(|| missing_summary(v.name(), t))?;
            for &p in &d.probs {
                row.push(float_cell(p));
            }
        }
        if let Some(inc) = increments {
            row.push(float_cell(inc[t]));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn lookup_cont<'a>(
    s: &'a PosteriorSummary,
    name: &str,
    t: usize,
) -> Result<&'a factor_core::inference::ContinuousSummary> {
    s.continuous
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| missing_summary(name, t))
}

fn missing_summary(name: &str, t: usize) -> FactorError {
    FactorError::Degenerate(format!("posterior at step {} lacks variable `{name}`", t + 1))
}

// ---------------------------------------------------------------------------
// simulate

fn run_simulate(
    model_path: &Path,
    steps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Produced> {
    let (parsed, model_ref) = load_model(model_path)?;
    let ssm = parsed.as_state_space().ok_or_else(|| {
        FactorError::ConfigInvalid("`simulate` needs a state-space model".into())
    })?;
    let cfg = parsed.quadrant_config();
    let steps = steps
        .or(cfg.as_ref().map(|c| c.horizon))
        .ok_or_else(|| {
            FactorError::ConfigInvalid(
                "this model has no built-in horizon; pass --steps".into(),
            )
        })?;
    let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(DEFAULT_SEED);

    let traj = simulate(ssm, steps, seed)?;
    let (disc, cont) = traj.state_scope.split_by_kind();

    let mut header = vec!["t".to_string()];
    for v in disc.iter().chain(cont.iter()) {
        header.push(format!("{}_true", v.name()));
    }
    for v in traj.obs_scope.iter() {
        header.push(v.name().to_string());
    }

    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut row = vec![(t + 1).to_string()];
        for v in disc.iter().chain(cont.iter()) {
            let i = traj.state_scope.index_of(v.name()).expect("state var");
            let x = traj.states[t][i];
            row.push(if v.is_discrete() {
                (x.round() as i64).to_string()
            } else {
                float_cell(x)
            });
        }
        for (i, v) in traj.obs_scope.iter().enumerate() {
            let x = traj.observations[t][i];
            row.push(if v.is_discrete() {
                (x.round() as i64).to_string()
            } else {
                float_cell(x)
            });
        }
        rows.push(row);
    }
    let bytes = Table { header, rows }.to_bytes(Format::Csv);

    let out = absolutize(out);
    let outputs = vec![FileRef::new(out.clone(), &bytes)];
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: version(),
        csv_schema: CSV_SCHEMA_VERSION,
        created_unix: now_unix(),
        command: "simulate".into(),
        model: model_ref,
        data: None,
        rep: None,
        reps: None,
        policy: None,
        seed: Some(seed),
        particles: None,
        steps: Some(steps),
        format: Some(Format::Csv.tag().into()),
        query: None,
        evidence: None,
        out: out.clone(),
        outputs,
    };
    Ok(Produced {
        files: vec![(out, bytes)],
        manifest: Some(manifest),
        stdout: None,
    })
}

// ---------------------------------------------------------------------------
// compare-reps

#[derive(Serialize)]
struct CompareSummary {
    csv_schema: u32,
    reps: Vec<String>,
    steps: usize,
    /// RMSE between the two runs' posterior means per continuous variable,
    /// and between category probabilities per discrete variable (keyed
    /// `p_<name>`).
    per_variable_rmse: BTreeMap<String, f64>,
    mean_rmse: f64,
    /// Negative total log-likelihood of the data under each run, keyed by
    /// slot-qualified representation (`1-<rep>`, `2-<rep>`).
    nll: BTreeMap<String, f64>,
}

fn run_compare(
    model_path: &Path,
    data_path: &Path,
    reps: (Rep, Rep),
    particles: usize,
    seed: u64,
    out: &Path,
) -> Result<Produced> {
    let (parsed, model_ref) = load_model(model_path)?;
    let (data_text, data_ref) = load_data(data_path)?;
    let ssm = parsed.as_state_space().ok_or_else(|| {
        FactorError::ConfigInvalid("`compare-reps` needs a state-space model".into())
    })?;
    let obs = read_observations(&data_text, ssm.obs_scope())?;
    let out = absolutize(out);

    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (slot, rep) in [(1, reps.0), (2, reps.1)] {
        let (model, policy) = realize_rep(ssm, rep, particles, seed)?;
        let res = filter(&model, &obs, &policy)?;
        let summaries = summarize_all(&res.posteriors)?;
        let table =
            rows_from_summaries(&summaries, Some(&res.loglik_increments), model.state_scope())?;
        let path = suffixed(&out, &format!(".{slot}-{}.csv", rep.tag()));
        files.push((path, table.to_bytes(Format::Csv)));
        runs.push((format!("{slot}-{}", rep.tag()), summaries, res.total_loglik));
    }

    let (per_variable_rmse, mean_rmse) =
        compare_stats(&runs[0].1, &runs[1].1, ssm.state_scope())?;
    let summary = CompareSummary {
        csv_schema: CSV_SCHEMA_VERSION,
        reps: vec![reps.0.tag().into(), reps.1.tag().into()],
        steps: obs.len(),
        per_variable_rmse,
        mean_rmse,
        nll: runs.iter().map(|(k, _, ll)| (k.clone(), -ll)).collect(),
    };
    let mut summary_bytes =
        serde_json::to_string_pretty(&summary).expect("summary serializes").into_bytes();
    summary_bytes.push(b'\n');
    files.push((suffixed(&out, ".summary.json"), summary_bytes));

    let outputs = files
        .iter()
        .map(|(p, b)| FileRef::new(p.clone(), b))
        .collect();
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: version(),
        csv_schema: CSV_SCHEMA_VERSION,
        created_unix: now_unix(),
        command: "compare-reps".into(),
        model: model_ref,
        data: Some(data_ref),
        rep: None,
        reps: Some(vec![reps.0.tag().into(), reps.1.tag().into()]),
        policy: None,
        seed: Some(seed),
        particles: Some(particles),
        steps: None,
        format: None,
        query: None,
        evidence: None,
        out: out.clone(),
        outputs,
    };
    Ok(Produced {
        files,
        manifest: Some(manifest),
        stdout: None,
    })
}

fn compare_stats(
    a: &[PosteriorSummary],
    b: &[PosteriorSummary],
    state: &Scope,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let (disc, cont) = state.split_by_kind();
    let steps = a.len();
    let mut per = BTreeMap::new();
    for v in cont.iter() {
        let mut ss = 0.0;
        for t in 0..steps {
            let d = lookup_cont(&a[t], v.name(), t)?.mean - lookup_cont(&b[t], v.name(), t)?.mean;
            ss += d * d;
        }
        per.insert(v.name().to_string(), (ss / steps as f64).sqrt());
    }
    for v in disc.iter() {
        let card = v.cardinality().expect("discrete");
        let mut ss = 0.0;
        for t in 0..steps {
            for k in 0..card {
                let pa = disc_prob(&a[t], v.name(), k, t)?;
                let pb = disc_prob(&b[t], v.name(), k, t)?;
                ss += (pa - pb) * (pa - pb);
            }
        }
        per.insert(
            format!("p_{}", v.name()),
            (ss / (steps * card) as f64).sqrt(),
        );
    }
    let mean = per.values().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

fn disc_prob(s: &PosteriorSummary, name: &str, k: usize, t: usize) -> Result<f64> {
    let d = s
        .discrete
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| missing_summary(name, t))?;
    d.probs
        .get(k)
        .copied()
        .ok_or_else(|| missing_summary(name, t))
}

// ---------------------------------------------------------------------------
// rerun

/// Outcome of a reproducibility check: one line per output file, and whether
/// every hash matched.
pub struct RerunReport {
    pub lines: Vec<String>,
    pub ok: bool,
}

/// Re-executes the run recorded in a manifest and compares output hashes.
/// Nothing is written; inputs must still hash to their recorded values.
pub fn rerun(manifest_file: &Path) -> Result<RerunReport> {
    let text = fs::read_to_string(manifest_file).map_err(|e| {
        FactorError::ConfigInvalid(format!("reading {}: {e}", manifest_file.display()))
    })?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| {
        FactorError::ConfigInvalid(format!("manifest {}: {e}", manifest_file.display()))
    })?;
    if m.tool != TOOL_NAME {
        return Err(FactorError::ConfigInvalid(format!(
            "manifest was written by `{}`, not `{TOOL_NAME}`",
            m.tool
        )));
    }

    check_input(&m.model, "model")?;
    if let Some(data) = &m.data {
        check_input(data, "data")?;
    }

    let job = job_of_manifest(&m)?;
    let produced = execute(&job)?;

    let mut expected: BTreeMap<&Path, &str> = m
        .outputs
        .iter()
        .map(|f| (f.path.as_path(), f.sha256.as_str()))
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for (path, bytes) in &produced.files {
        let got = sha256_hex(bytes);
        match expected.remove(path.as_path()) {
            Some(want) if want == got => lines.push(format!("{}: ok", path.display())),
            Some(want) => {
                ok = false;
                lines.push(format!(
                    "{}: MISMATCH (recorded {want}, reproduced {got})",
                    path.display()
                ));
            }
            None => {
                ok = false;
                lines.push(format!("{}: not in manifest", path.display()));
            }
        }
    }
    for (path, _) in expected {
        ok = false;
        lines.push(format!("{}: not reproduced", path.display()));
    }
    Ok(RerunReport { lines, ok })
}

fn check_input(f: &FileRef, what: &str) -> Result<()> {
    let bytes = fs::read(&f.path).map_err(|e| {
        FactorError::ConfigInvalid(format!("reading {} {}: {e}", what, f.path.display()))
    })?;
    let got = sha256_hex(&bytes);
    if got != f.sha256 {
        return Err(FactorError::ConfigInvalid(format!(
            "{} file {} changed since the run was recorded",
            what,
            f.path.display()
        )));
    }
    Ok(())
}

fn job_of_manifest(m: &Manifest) -> Result<Job> {
    let need = |field: &str, v: Option<&str>| -> Result<String> {
        v.map(str::to_string).ok_or_else(|| {
            FactorError::ConfigInvalid(format!("manifest lacks the `{field}` field"))
        })
    };
    match m.command.as_str() {
        "query" => Ok(Job::Query {
            model: m.model.path.clone(),
            query: m.query.clone().unwrap_or_default(),
            evidence: m.evidence.clone().unwrap_or_default(),
            format: Format::from_tag(&need("format", m.format.as_deref())?)?,
            out: Some(m.out.clone()),
        }),
        "filter" | "smooth" => Ok(Job::Filter {
            model: m.model.path.clone(),
            data: m
                .data
                .as_ref()
                .map(|f| f.path.clone())
                .ok_or_else(|| {
                    FactorError::ConfigInvalid("manifest lacks the `data` field".into())
                })?,
            rep: Rep::from_tag(&need("rep", m.rep.as_deref())?)?,
            particles: m.particles.unwrap_or(DEFAULT_PARTICLES),
            seed: m.seed.unwrap_or(DEFAULT_SEED),
            format: Format::from_tag(&need("format", m.format.as_deref())?)?,
            out: m.out.clone(),
            smoothed: m.command == "smooth",
        }),
        "simulate" => Ok(Job::Simulate {
            model: m.model.path.clone(),
            steps: m.steps,
            seed: m.seed,
            out: m.out.clone(),
        }),
        "compare-reps" => {
            let reps = m.reps.as_ref().ok_or_else(|| {
                FactorError::ConfigInvalid("manifest lacks the `reps` field".into())
            })?;
            if reps.len() != 2 {
                return Err(FactorError::ConfigInvalid(format!(
                    "manifest `reps` must list exactly two representations, found {}",
                    reps.len()
                )));
            }
            Ok(Job::Compare {
                model: m.model.path.clone(),
                data: m
                    .data
                    .as_ref()
                    .map(|f| f.path.clone())
                    .ok_or_else(|| {
                        FactorError::ConfigInvalid("manifest lacks the `data` field".into())
                    })?,
                reps: (Rep::from_tag(&reps[0])?, Rep::from_tag(&reps[1])?),
                particles: m.particles.unwrap_or(DEFAULT_PARTICLES),
                seed: m.seed.unwrap_or(DEFAULT_SEED),
                out: m.out.clone(),
            })
        }
        other => Err(FactorError::ConfigInvalid(format!(
            "manifest has unknown command `{other}`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn load_model(path: &Path) -> Result<(ParsedModel, FileRef)> {
    let bytes = fs::read(path)
        .map_err(|e| FactorError::ConfigInvalid(format!("reading {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| {
        FactorError::ConfigInvalid(format!("{} is not UTF-8", path.display()))
    })?;
    let parsed = parse_model(&text)?;
    Ok((parsed, FileRef::new(absolutize(path), &bytes)))
}

fn load_data(path: &Path) -> Result<(String, FileRef)> {
    let bytes = fs::read(path)
        .map_err(|e| FactorError::ConfigInvalid(format!("reading {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| {
        FactorError::ConfigInvalid(format!("{} is not UTF-8", path.display()))
    })?;
    Ok((text, FileRef::new(absolutize(path), &bytes)))
}

/// Writes a job's outputs and its manifest sidecar, returning the sidecar
/// path (if any) for reporting.
pub fn write_outputs(produced: &Produced) -> Result<Option<PathBuf>> {
    for (path, bytes) in &produced.files {
        fs::write(path, bytes).map_err(|e| {
            FactorError::ConfigInvalid(format!("writing {}: {e}", path.display()))
        })?;
    }
    match &produced.manifest {
        None => Ok(None),
        Some(m) => {
            let path = manifest_path(&m.out);
            fs::write(&path, m.to_bytes()).map_err(|e| {
                FactorError::ConfigInvalid(format!("writing {}: {e}", path.display()))
            })?;
            Ok(Some(path))
        }
    }
}

fn suffixed(out: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn absolutize(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}
