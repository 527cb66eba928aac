//! Scenario files, experiment pipelines and report writing behind the
//! `regime-clt` command line tool.
//!
//! A scenario names one experiment on one model. Running it writes
//! `report.json`, one or more CSV tables and `manifest.json` into
//! `<out>/<scenario name>/`. Only the manifest carries a timestamp; every
//! other file is a pure function of the scenario and its seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::chain::GAP_FLOOR;
use crate::charfn::{build_step_approximation, exact_epsilon, cf_gap, truncation_radius};
use crate::clt::{self, ConvergenceConfig, Normalizer};
use crate::independence::{rectangle_candidates, rectangle_family, IndependenceLab, Method};
use crate::regime::ModelSpec;
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "REGIME_CLT_OUT";
pub const DEFAULT_OUT_DIR: &str = "regime-clt-out";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("bound violated: {0}")]
    BoundViolated(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid(_) => 1,
            RunError::BoundViolated(_) => 2,
            RunError::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::ConfigInvalid(_) => "config_invalid",
            RunError::BoundViolated(_) => "bound_violated",
            RunError::Internal(_) => "internal",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

impl From<crate::Error> for RunError {
    fn from(e: crate::Error) -> Self {
        RunError::ConfigInvalid(e.to_string())
    }
}

fn internal<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub model: ModelSpec,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Mixing {
        #[serde(default = "default_s_max")]
        s_max: usize,
    },
    Independence {
        tau_grid: Vec<usize>,
        #[serde(default = "default_levels")]
        levels: usize,
        #[serde(default)]
        joint: Option<JointSpec>,
        /// Replaces `2 c alpha^tau` in the conditional-gap check.
        #[serde(default)]
        bound_override: Option<f64>,
    },
    #[serde(rename = "lemma2")]
    CfGap {
        lag_grid: Vec<Vec<usize>>,
        t_grid: Vec<f64>,
        replicates: usize,
        #[serde(default = "default_family_levels")]
        levels: usize,
        eta_grid: Vec<f64>,
    },
    Clt {
        n_grid: Vec<usize>,
        replicates: usize,
        t_grid: Vec<f64>,
        #[serde(default)]
        eta_grid: Vec<f64>,
        #[serde(default)]
        normalizer: Normalizer,
        #[serde(default)]
        max_ks: Option<f64>,
        #[serde(default)]
        remainder: Option<RemainderSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub k: usize,
    pub lag_grid: Vec<Vec<usize>>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub replicates: usize,
    #[serde(default = "default_family_levels")]
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemainderSpec {
    pub alpha_exp: f64,
    pub m: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
}

fn default_s_max() -> usize {
    50
}
fn default_levels() -> usize {
    3
}
fn default_family_levels() -> usize {
    2
}
fn default_method() -> Method {
    Method::Exact
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Mixing { .. } => "mixing",
            Experiment::Independence { .. } => "independence",
            Experiment::CfGap { .. } => "lemma2",
            Experiment::Clt { .. } => "clt",
        }
    }
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            RunError::ConfigInvalid(m) => RunError::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::ConfigInvalid(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return bad(&format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            || self.name.starts_with('.')
        {
            return bad("name must be nonempty and use only [A-Za-z0-9_.-]");
        }
        match &self.experiment {
            Experiment::Mixing { s_max } => {
                if *s_max < 2 {
                    return bad("s_max must be at least 2");
                }
            }
            Experiment::Independence {
                tau_grid,
                levels,
                joint,
                bound_override,
            } => {
                if tau_grid.is_empty() || tau_grid.contains(&0) {
                    return bad("tau_grid must be nonempty with positive entries");
                }
                if *levels == 0 {
                    return bad("levels must be at least 1");
                }
                if bound_override.is_some_and(|b| !(b >= 0.0)) {
                    return bad("bound_override must be nonnegative");
                }
                if let Some(j) = joint {
                    if j.lag_grid.is_empty() || j.lag_grid.iter().any(|l| l.len() + 1 != j.k) {
                        return bad("joint.lag_grid must be nonempty with k - 1 lags per entry");
                    }
                    if j.method == Method::MonteCarlo && j.replicates < 1 {
                        return bad("joint.replicates must be at least 1");
                    }
                }
            }
            Experiment::CfGap {
                lag_grid,
                t_grid,
                replicates,
                eta_grid,
                ..
            } => {
                if lag_grid.is_empty() || lag_grid.iter().any(|l| l.is_empty()) {
                    return bad("lag_grid must be nonempty with at least one lag per entry");
                }
                if t_grid.is_empty() || eta_grid.is_empty() {
                    return bad("t_grid and eta_grid must be nonempty");
                }
                if *replicates < 1 {
                    return bad("replicates must be at least 1");
                }
            }
            Experiment::Clt {
                n_grid,
                replicates,
                t_grid,
                remainder,
                ..
            } => {
                if n_grid.is_empty() || t_grid.is_empty() {
                    return bad("n_grid and t_grid must be nonempty");
                }
                if *replicates < 1 {
                    return bad("replicates must be at least 1");
                }
                if let Some(r) = remainder {
                    if r.n_grid.is_empty() || r.replicates < 1 {
                        return bad("remainder.n_grid must be nonempty and remainder.replicates at least 1");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, overrides: Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(r) = overrides.replicates {
            match &mut self.experiment {
                Experiment::Mixing { .. } => {}
                Experiment::Independence { joint, .. } => {
                    if let Some(j) = joint {
                        j.replicates = r;
                    }
                }
                Experiment::CfGap { replicates, .. } => *replicates = r,
                Experiment::Clt {
                    replicates, remainder, ..
                } => {
                    *replicates = r;
                    if let Some(rem) = remainder {
                        rem.replicates = r;
                    }
                }
            }
        }
    }

    /// SHA-256 of the canonical JSON form of the effective scenario.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("scenario serializes"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Report payload plus the CSV tables of one experiment.
pub struct ExperimentOutput {
    pub checks: Vec<Check>,
    pub result: Value,
    pub tables: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_sha256: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub scenario: String,
    pub experiment: String,
    pub out_dir: PathBuf,
    pub checks: Vec<Check>,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// `Ok` when every check passed, `BoundViolated` otherwise.
    pub fn into_result(self) -> Result<RunOutcome, RunError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(RunError::BoundViolated(format!(
                "{}: failed checks [{}]",
                self.scenario,
                self.failed_checks().join(", ")
            )))
        }
    }
}

/// Output root from the environment, or the built-in default.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(RunError::ConfigInvalid("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(internal)?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the experiment and returns the report contents without touching disk.
pub fn execute(scenario: &Scenario) -> Result<ExperimentOutput, RunError> {
    scenario.validate()?;
    let model = &scenario.model;
    let seed = scenario.seed;
    match &scenario.experiment {
        Experiment::Mixing { s_max } => run_mixing(model, *s_max),
        Experiment::Independence {
            tau_grid,
            levels,
            joint,
            bound_override,
        } => run_independence(model, tau_grid, *levels, joint.as_ref(), *bound_override, seed),
        Experiment::CfGap {
            lag_grid,
            t_grid,
            replicates,
            levels,
            eta_grid,
        } => run_cf_gap(model, lag_grid, t_grid, *replicates, *levels, eta_grid, seed),
        Experiment::Clt {
            n_grid,
            replicates,
            t_grid,
            eta_grid,
            normalizer,
            max_ks,
            remainder,
        } => {
            let config = ConvergenceConfig {
                n_grid: n_grid.clone(),
                replicates: *replicates,
                t_grid: t_grid.clone(),
                eta_grid: eta_grid.clone(),
                normalizer: *normalizer,
            };
            run_clt(model, &config, *max_ks, remainder.as_ref(), seed)
        }
    }
}

/// Runs one scenario and writes its artifacts. Failed checks are reported in
/// the outcome; the caller decides whether they are fatal.
pub fn run_scenario(
    mut scenario: Scenario,
    out_root: &Path,
    overrides: Overrides,
    threads: Option<usize>,
) -> Result<RunOutcome, RunError> {
    scenario.apply(overrides);
    scenario.validate()?;
    let output = with_threads(threads, || execute(&scenario))??;
    let out_dir = out_root.join(&scenario.name);
    fs::create_dir_all(&out_dir).map_err(internal)?;

    let passed = output.checks.iter().all(|c| c.passed);
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.name,
        "experiment": scenario.experiment.kind(),
        "seed": scenario.seed,
        "scenario_sha256": scenario.hash(),
        "passed": passed,
        "checks": output.checks,
        "result": output.result,
    });
    let mut files: Vec<(String, Vec<u8>)> = vec![(
        "report.json".to_string(),
        serde_json::to_vec_pretty(&report).map_err(internal)?,
    )];
    for (name, csv) in output.tables {
        files.push((name, csv.into_bytes()));
    }
    let mut outputs = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        write_atomic(&out_dir.join(name), bytes).map_err(internal)?;
        outputs.push(OutputFile {
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = RunManifest {
        scenario: scenario.name.clone(),
        scenario_sha256: scenario.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: scenario.seed,
        outputs,
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(internal)?;
    write_atomic(&out_dir.join("manifest.json"), &bytes).map_err(internal)?;
    Ok(RunOutcome {
        scenario: scenario.name.clone(),
        experiment: scenario.experiment.kind().to_string(),
        out_dir,
        checks: output.checks,
        manifest,
    })
}

/// Loads, runs and writes one scenario file; failed checks become
/// `BoundViolated`.
pub fn run(path: &Path, out_root: &Path, overrides: Overrides, threads: Option<usize>) -> Result<RunOutcome, RunError> {
    let scenario = Scenario::load(path)?;
    run_scenario(scenario, out_root, overrides, threads)?.into_result()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub file: String,
    pub scenario: Option<String>,
    pub status: String,
    pub exit_code: i32,
    pub checks: Vec<Check>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn passed(&self) -> usize {
        self.rows.iter().filter(|r| r.exit_code == 0).count()
    }

    pub fn failed(&self) -> usize {
        self.rows.len() - self.passed()
    }

    /// Largest exit code over all scenarios, 0 for an empty or clean suite.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().map(|r| r.exit_code).max().unwrap_or(0)
    }

    pub const CSV_HEADER: &'static str = "file,scenario,status,check,passed";

    /// One row per scenario and check; scenarios that did not run get a
    /// single row with an empty check name.
    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let name = r.scenario.as_deref().unwrap_or("");
            if r.checks.is_empty() {
                out.push_str(&format!("{},{name},{},,false\n", r.file, r.status));
            }
            for c in &r.checks {
                out.push_str(&format!("{},{name},{},{},{}\n", r.file, r.status, c.name, c.passed));
            }
        }
        out
    }
}

/// Runs every `*.json` scenario in `suite_dir` (sorted by file name) and
/// writes `summary.json` and `summary.csv` to `out_root`.
pub fn verify_all(suite_dir: &Path, out_root: &Path, threads: Option<usize>) -> Result<Summary, RunError> {
    let entries = fs::read_dir(suite_dir)
        .map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", suite_dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut rows = Vec::with_capacity(files.len());
    for path in files {
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let row = match Scenario::load(&path).and_then(|s| run_scenario(s, out_root, Overrides::default(), threads)) {
            Ok(outcome) => {
                let code = if outcome.passed() { 0 } else { 2 };
                SummaryRow {
                    file,
                    scenario: Some(outcome.scenario.clone()),
                    status: if code == 0 { "pass" } else { "bound_violated" }.to_string(),
                    exit_code: code,
                    checks: outcome.checks,
                    message: None,
                }
            }
            Err(e) => SummaryRow {
                file,
                scenario: None,
                status: e.kind().to_string(),
                exit_code: e.exit_code(),
                checks: Vec::new(),
                message: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let summary = Summary { rows };
    fs::create_dir_all(out_root).map_err(internal)?;
    write_atomic(&out_root.join("summary.csv"), summary.csv().as_bytes()).map_err(internal)?;
    let bytes = serde_json::to_vec_pretty(&summary).map_err(internal)?;
    write_atomic(&out_root.join("summary.json"), &bytes).map_err(internal)?;
    Ok(summary)
}

fn run_mixing(model: &ModelSpec, s_max: usize) -> Result<ExperimentOutput, RunError> {
    let chain = model.chain();
    let ergodicity = chain.is_ergodic();
    let profile = chain.mixing_rate(s_max)?;
    let violations = profile.violations();
    let residual = chain.stationary_distribution()?.residual(chain);
    let mut csv = String::from("s,sup_gap,bound\n");
    for g in &profile.gaps {
        csv.push_str(&format!("{},{},{}\n", g.s, g.sup_gap, profile.bound(g.s)));
    }
    let checks = vec![
        Check::new("ergodic", ergodicity.ergodic, ergodicity.diagnostic.clone()),
        Check::new(
            "stationary_residual",
            residual <= crate::chain::STATIONARITY_TOL,
            format!("residual {residual:e}"),
        ),
        Check::new(
            "geometric_bound",
            violations.is_empty(),
            format!("{} violations at s = {violations:?}", violations.len()),
        ),
    ];
    Ok(ExperimentOutput {
        checks,
        result: json!({ "ergodicity": ergodicity, "profile": profile }),
        tables: vec![("mixing.csv".into(), csv)],
    })
}

fn run_independence(
    model: &ModelSpec,
    tau_grid: &[usize],
    levels: usize,
    joint: Option<&JointSpec>,
    bound_override: Option<f64>,
    seed: u64,
) -> Result<ExperimentOutput, RunError> {
    let lab = IndependenceLab::new(model)?;
    let events = rectangle_candidates(lab.model(), levels)?;
    let mut csv = String::from("tau,event_a,event_b,gap,theoretical_bound,telescoping_bound,checked_bound\n");
    let mut rows = Vec::new();
    let mut bad_taus = Vec::new();
    for &tau in tau_grid {
        let mut worst: Option<(usize, usize, crate::independence::GapReport)> = None;
        for (ia, a) in events.iter().enumerate() {
            for (ib, b) in events.iter().enumerate() {
                let report = match lab.conditional_gap_exact(a, b, tau) {
                    Ok(r) => r,
                    Err(crate::Error::EmptyConditioningEvent) => continue,
                    Err(e) => return Err(e.into()),
                };
                if worst.as_ref().is_none_or(|w| report.gap_estimate > w.2.gap_estimate) {
                    worst = Some((ia, ib, report));
                }
            }
        }
        let (ia, ib, report) = worst.ok_or_else(|| RunError::ConfigInvalid("no event with positive probability".into()))?;
        let checked = bound_override.unwrap_or(report.theoretical_bound);
        if !report.within(checked, 0.0) {
            bad_taus.push(tau);
        }
        csv.push_str(&format!(
            "{tau},{ia},{ib},{},{},{},{checked}\n",
            report.gap_estimate, report.theoretical_bound, report.telescoping_bound
        ));
        rows.push(json!({ "tau": tau, "event_a": ia, "event_b": ib, "checked_bound": checked, "gap": report }));
    }
    let mut checks = vec![Check::new(
        "conditional_bound",
        bad_taus.is_empty(),
        format!("violations at tau = {bad_taus:?}"),
    )];
    let mut tables = vec![("conditional.csv".to_string(), csv)];
    let mut joint_rows = Vec::new();
    if let Some(spec) = joint {
        let family = rectangle_family(lab.model(), spec.k, spec.levels)?;
        let sigmas = if spec.method == Method::Exact { 0.0 } else { 4.0 };
        let mut jcsv = format!(
            "{},epsilon,family_size,worst_index\n",
            crate::independence::GapReport::CSV_HEADER
        );
        let mut telescoping_bad = Vec::new();
        let mut theoretical_bad = Vec::new();
        for (i, lags) in spec.lag_grid.iter().enumerate() {
            let cert = lab.epsilon_certificate(lags, &family, spec.method, spec.replicates, derive_seed(seed, i as u64))?;
            if !cert.worst.within(cert.worst.telescoping_bound, sigmas) {
                telescoping_bad.push(lags.clone());
            }
            if !cert.worst.within(cert.worst.theoretical_bound, sigmas) {
                theoretical_bad.push(lags.clone());
            }
            jcsv.push_str(&format!(
                "{},{},{},{}\n",
                cert.worst.csv_row(),
                cert.epsilon,
                cert.family_size,
                cert.worst_index
            ));
            joint_rows.push(cert);
        }
        checks.push(Check::new(
            "joint_telescoping_bound",
            telescoping_bad.is_empty(),
            format!("violations at lags = {telescoping_bad:?}"),
        ));
        checks.push(Check::new(
            "joint_theoretical_bound",
            theoretical_bad.is_empty(),
            format!("violations at lags = {theoretical_bad:?}"),
        ));
        tables.push(("joint.csv".to_string(), jcsv));
    }
    let profile = lab.profile();
    Ok(ExperimentOutput {
        checks,
        result: json!({
            "alpha": profile.alpha,
            "c": profile.c,
            "events": events,
            "conditional": rows,
            "joint": joint_rows,
        }),
        tables,
    })
}

fn run_cf_gap(
    model: &ModelSpec,
    lag_grid: &[Vec<usize>],
    t_grid: &[f64],
    replicates: usize,
    levels: usize,
    eta_grid: &[f64],
    seed: u64,
) -> Result<ExperimentOutput, RunError> {
    let lab = IndependenceLab::new(model)?;
    let mut csv = String::from("lags,t,gap,std_error,bound,exact_gap\n");
    let mut reports = Vec::new();
    let mut bad = Vec::new();
    for (i, lags) in lag_grid.iter().enumerate() {
        let eps = exact_epsilon(&lab, lags, levels)?;
        let report = cf_gap(&lab, lags, t_grid, replicates, derive_seed(seed, i as u64), eps)?;
        let joined: Vec<String> = lags.iter().map(|l| l.to_string()).collect();
        for r in &report.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                joined.join(";"),
                r.t,
                r.gap,
                r.std_error,
                r.bound,
                r.exact_gap
            ));
        }
        for t in report.violations(4.0) {
            bad.push((lags.clone(), t));
        }
        reports.push(report);
    }
    let second_moment = {
        let stat = lab.model();
        stat.stationary_variance()? + stat.stationary_mean()?.powi(2)
    };
    let mut step_csv = String::from("t,eta,truncation,cells,max_grid_error\n");
    let mut steps = Vec::new();
    let mut step_bad = Vec::new();
    for &t in t_grid {
        for &eta in eta_grid {
            let m = truncation_radius(second_moment, eta);
            let approx = build_step_approximation(t, eta, m)?;
            if approx.max_grid_error > eta {
                step_bad.push((t, eta));
            }
            step_csv.push_str(&format!(
                "{t},{eta},{m},{},{}\n",
                approx.cells(),
                approx.max_grid_error
            ));
            steps.push(json!({
                "t": t, "eta": eta, "truncation": m,
                "cells": approx.cells(), "max_grid_error": approx.max_grid_error,
            }));
        }
    }
    let checks = vec![
        Check::new(
            "cf_gap_bound",
            bad.is_empty(),
            format!("gap > 2 epsilon + 4 se at (lags, t) = {bad:?}"),
        ),
        Check::new(
            "step_approximation",
            step_bad.is_empty(),
            format!("error > eta at (t, eta) = {step_bad:?}"),
        ),
    ];
    Ok(ExperimentOutput {
        checks,
        result: json!({ "reports": reports, "step_approximations": steps }),
        tables: vec![("cf_gap.csv".into(), csv), ("step.csv".into(), step_csv)],
    })
}

fn run_clt(
    model: &ModelSpec,
    config: &ConvergenceConfig,
    max_ks: Option<f64>,
    remainder: Option<&RemainderSpec>,
    seed: u64,
) -> Result<ExperimentOutput, RunError> {
    let report = clt::clt_convergence(model, config, derive_seed(seed, 0))?;
    let ks_up = report.ks_increases(2.0);
    let cf_up = report.cf_increases(2.0);
    let vr = *report.variance_ratio.last().expect("grid is nonempty");
    let vr_se = vr * (2.0 / (config.replicates as f64 - 1.0)).sqrt();
    let mut checks = vec![
        Check::new("ks_monotone", ks_up.is_empty(), format!("increases at n = {ks_up:?}")),
        Check::new("cf_monotone", cf_up.is_empty(), format!("increases at n = {cf_up:?}")),
        Check::new(
            "variance_ratio",
            (vr - 1.0).abs() <= 0.05 + 3.0 * vr_se,
            format!("variance ratio {vr} at the largest n (se {vr_se})"),
        ),
    ];
    if let Some(limit) = max_ks {
        let last = *report.ks_distance.last().expect("grid is nonempty");
        checks.push(Check::new(
            "max_ks",
            last < limit,
            format!("KS {last} at the largest n, limit {limit}"),
        ));
    }
    let mut tables = vec![("convergence.csv".to_string(), report.csv())];
    let mut rem_report = None;
    if let Some(spec) = remainder {
        let rem = clt::remainder_diagnostic(model, &spec.n_grid, spec.alpha_exp, spec.m, spec.replicates, derive_seed(seed, 1))?;
        let breaks = rem.monotonicity_breaks(2.0);
        let over: Vec<usize> = rem
            .rows
            .iter()
            .filter(|r| r.estimate > r.holder_bound + 2.0 * r.std_error + GAP_FLOOR)
            .map(|r| r.n)
            .collect();
        checks.push(Check::new("remainder_decreasing", breaks.is_empty(), format!("increases at n = {breaks:?}")));
        checks.push(Check::new("remainder_holder_bound", over.is_empty(), format!("above bound at n = {over:?}")));
        let mut csv = String::from("n,k,nu,p,estimate,std_error,holder_bound,iid_reference\n");
        for r in &rem.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.n, r.k, r.nu, r.p, r.estimate, r.std_error, r.holder_bound, r.iid_reference
            ));
        }
        tables.push(("remainder.csv".to_string(), csv));
        rem_report = Some(rem);
    }
    Ok(ExperimentOutput {
        checks,
        result: json!({ "convergence": report, "remainder": rem_report }),
        tables,
    })
}
