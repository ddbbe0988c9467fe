//! Configuration-driven experiment runner.
//!
//! Two TOML schemas live here: [`ExperimentConfig`] (Schwarz / single-domain
//! network runs over several seeds, one `[[case]]` per table row) and
//! [`OracleConfig`] (finite-difference rate sweeps, one `[[sweep]]` each).
//! Both are validated in full before any compute starts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Diagnostic;
use crate::net::parameter_count;
use crate::oracle::{asymptotic_ratio, fd_schwarz_run, resolved_ratios, FdGrid, OracleSettings};
use crate::partition::{build_partition, sample_training_sets, SampleCounts};
use crate::problems::PoissonProblem;
use crate::schwarz::{self, IterationRecord, Level, SchwarzConfig, SingleDomainConfig};
use crate::{Error, Result};

const DEFAULT_OVERLAP: f64 = 1.0 / 3.0;

pub const PRESETS: [(&str, &str); 6] = [
    ("table1_smooth1d", include_str!("../presets/table1_smooth1d.toml")),
    ("table2_multiscale1d", include_str!("../presets/table2_multiscale1d.toml")),
    ("table3_smooth2d", include_str!("../presets/table3_smooth2d.toml")),
    ("table4_highcontrast2d", include_str!("../presets/table4_highcontrast2d.toml")),
    ("oracle_smooth1d", include_str!("../presets/oracle_smooth1d.toml")),
    ("oracle_smooth2d", include_str!("../presets/oracle_smooth2d.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Relaxation parameter: a number or `"auto"` (= 1/Nc).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TauSpec {
    #[default]
    Auto,
    Value(f64),
}

impl TauSpec {
    pub fn resolve(self, nc: usize) -> f64 {
        match self {
            TauSpec::Auto => 1.0 / nc as f64,
            TauSpec::Value(t) => t,
        }
    }
}

impl Serialize for TauSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TauSpec::Auto => s.serialize_str("auto"),
            TauSpec::Value(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for TauSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(TauSpec::Value(t)),
            Raw::Int(t) => Ok(TauSpec::Value(t as f64)),
            Raw::Word(w) if w == "auto" => Ok(TauSpec::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "tau must be a number or \"auto\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub id: String,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<PoissonProblem> {
        PoissonProblem::from_id(&self.id, self.amplitude, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// One network on the whole domain.
    Single,
    OneLevel,
    TwoLevel,
}

fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}

fn default_true() -> bool {
    true
}

fn default_lr() -> f64 {
    crate::optimizer::DEFAULT_LEARNING_RATE
}

fn default_one() -> usize {
    1
}

fn is_default_tau(t: &TauSpec) -> bool {
    *t == TauSpec::Auto
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    /// Output subdirectory name.
    pub label: String,
    pub solver: Solver,
    /// Overrides the experiment-level problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    /// Subdomains per axis (1 for the single-domain baseline).
    #[serde(default = "default_one")]
    pub subdomains: usize,
    #[serde(default = "default_overlap")]
    pub overlap_ratio: f64,
    #[serde(default, skip_serializing_if = "is_default_tau")]
    pub tau: TauSpec,
    /// Hidden width of local networks (or of the single network).
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_width: Option<usize>,
    pub interior_points: usize,
    pub boundary_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_interior_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_boundary_points: Option<usize>,
    /// Epochs per local solve, or total epochs for the single network.
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_epochs: Option<usize>,
    #[serde(default)]
    pub max_outer: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Epochs between error evaluations of the single network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Outer iterations at which per-seed errors are also summarised.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub report_at: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub problem: ProblemSpec,
    #[serde(rename = "case")]
    pub cases: Vec<CaseConfig>,
}

impl ExperimentConfig {
    /// Reduced-budget variant: epochs / 5, outer iterations / 2.
    pub fn desk_scale(&mut self) {
        let div = |v: usize, d: usize| (v / d).max(1);
        for c in &mut self.cases {
            c.epochs = div(c.epochs, 5);
            c.coarse_epochs = c.coarse_epochs.map(|e| div(e, 5));
            c.report_every = c.report_every.map(|e| div(e, 5));
            c.max_outer /= 2;
        }
        for r in &mut self.report_at {
            *r /= 2;
        }
    }

    pub fn case_problem<'a>(&'a self, case: &'a CaseConfig) -> &'a ProblemSpec {
        case.problem.as_ref().unwrap_or(&self.problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub label: String,
    pub subdomains: usize,
    pub level: Level,
    #[serde(default, skip_serializing_if = "is_default_tau")]
    pub tau: TauSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_ratio: Option<f64>,
}

fn default_window() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub name: String,
    pub problem: ProblemSpec,
    /// Grid nodes per axis, boundary included.
    pub grid_nodes: usize,
    pub iters: usize,
    #[serde(default = "default_overlap")]
    pub overlap_ratio: f64,
    /// Ratios averaged for the asymptotic estimate.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(rename = "sweep")]
    pub sweeps: Vec<SweepConfig>,
}

/// Where a violation lives, used to find its line in the source.
#[derive(Debug, Clone, Copy)]
enum Loc<'a> {
    Top(&'a str),
    Problem(&'a str),
    Item(usize, &'a str),
    ItemProblem(usize, &'a str),
}

struct Collector<'a> {
    source: &'a str,
    array: &'a str,
    found: Vec<Diagnostic>,
}

impl<'a> Collector<'a> {
    fn push(&mut self, loc: Loc<'_>, message: impl Into<String>) {
        let line = find_line(self.source, self.array, loc);
        self.found.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, loc: Loc<'_>, message: impl FnOnce() -> String) {
        if !ok {
            self.push(loc, message());
        }
    }
}

/// Line of `key = ...` inside the table addressed by `loc`, falling back to
/// the table header.
fn find_line(source: &str, array: &str, loc: Loc<'_>) -> Option<usize> {
    let (want_item, want_sub, key) = match loc {
        Loc::Top(k) => (None, None, k),
        Loc::Problem(k) => (None, Some("problem"), k),
        Loc::Item(i, k) => (Some(i), None, k),
        Loc::ItemProblem(i, k) => (Some(i), Some("problem"), k),
    };
    let item_header = format!("[[{array}]]");
    let item_sub = format!("[{array}.problem]");
    let mut item: Option<usize> = None;
    let mut sub: Option<&str> = None;
    let mut header_line = None;
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let head = line.split('#').next().unwrap_or("").trim();
            if head == item_header {
                item = Some(item.map_or(0, |i| i + 1));
                sub = None;
            } else if head == item_sub {
                sub = Some("problem");
            } else if head == "[problem]" {
                item = None;
                sub = Some("problem");
            } else {
                sub = Some("other");
            }
            if item == want_item && sub == want_sub {
                header_line = Some(n + 1);
            }
            continue;
        }
        if item != want_item || sub != want_sub {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            if k == key {
                return Some(n + 1);
            }
        }
    }
    header_line
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn parse_toml<T: DeserializeOwned>(source: &str, path: &Path) -> Result<T> {
    toml::from_str(source).map_err(|e| Error::Invalid {
        path: path.to_path_buf(),
        diagnostics: vec![Diagnostic {
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        }],
    })
}

fn check_problem(c: &mut Collector<'_>, spec: &ProblemSpec, item: Option<usize>) -> Option<PoissonProblem> {
    let loc = |k| match item {
        Some(i) => Loc::ItemProblem(i, k),
        None => Loc::Problem(k),
    };
    match spec.build() {
        Ok(p) => Some(p),
        Err(e) => {
            let key = match e {
                Error::Config(ref m) if m.contains("eps") => "eps",
                Error::Config(ref m) if m.contains("parameter A") || m.contains("amplitude") => "A",
                _ => "id",
            };
            c.push(loc(key), e.to_string());
            None
        }
    }
}

fn check_label(c: &mut Collector<'_>, label: &str, i: usize, seen: &mut Vec<String>) {
    let ok = !label.is_empty()
        && label
            .chars()
            .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-' || ch == '.')
        && label != "."
        && label != "..";
    c.check(ok, Loc::Item(i, "label"), || {
        format!("label `{label}` must be a non-empty name made of letters, digits, `_`, `-` or `.`")
    });
    c.check(!seen.iter().any(|s| s == label), Loc::Item(i, "label"), || {
        format!("duplicate label `{label}`")
    });
    seen.push(label.to_string());
}

fn check_tau(c: &mut Collector<'_>, tau: TauSpec, nc: usize, i: usize) {
    if let TauSpec::Value(t) = tau {
        let bound = 1.0 / nc as f64;
        c.check(t > 0.0 && t * nc as f64 <= 1.0 + 1e-12, Loc::Item(i, "tau"), || {
            format!("tau = {t} violates the bound 0 < tau <= 1/Nc = {bound} (Nc = {nc})")
        });
    }
}

fn validate_experiment(cfg: &ExperimentConfig, source: &str) -> Vec<Diagnostic> {
    let mut c = Collector {
        source,
        array: "case",
        found: Vec::new(),
    };
    c.check(!cfg.name.is_empty(), Loc::Top("name"), || "name must not be empty".into());
    c.check(!cfg.seeds.is_empty(), Loc::Top("seeds"), || "seeds must list at least one seed".into());
    let mut sorted = cfg.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    c.check(sorted.len() == cfg.seeds.len(), Loc::Top("seeds"), || "seeds must be distinct".into());
    if let Some(r) = cfg.eval_resolution {
        c.check(r >= 2, Loc::Top("eval_resolution"), || "eval_resolution must be at least 2".into());
    }
    c.check(!cfg.cases.is_empty(), Loc::Top("case"), || "at least one [[case]] is required".into());
    let top_problem = check_problem(&mut c, &cfg.problem, None);

    let mut labels = Vec::new();
    for (i, case) in cfg.cases.iter().enumerate() {
        check_label(&mut c, &case.label, i, &mut labels);
        let problem = match &case.problem {
            Some(spec) => check_problem(&mut c, spec, Some(i)),
            None => top_problem,
        };
        let positive = [
            ("width", case.width),
            ("interior_points", case.interior_points),
            ("boundary_points", case.boundary_points),
            ("epochs", case.epochs),
            ("subdomains", case.subdomains),
        ];
        for (key, v) in positive {
            c.check(v > 0, Loc::Item(i, key), || format!("{key} must be positive"));
        }
        c.check(
            case.learning_rate > 0.0 && case.learning_rate.is_finite(),
            Loc::Item(i, "learning_rate"),
            || "learning_rate must be positive".into(),
        );
        c.check(
            case.overlap_ratio > 0.0 && case.overlap_ratio < 1.0,
            Loc::Item(i, "overlap_ratio"),
            || format!("overlap_ratio must lie in (0, 1), got {}", case.overlap_ratio),
        );
        if let Some(p) = problem {
            c.check(p.dim() != 1 || case.boundary_points == 2, Loc::Item(i, "boundary_points"), || {
                "1D subdomain boundaries are the two endpoints; boundary_points must be 2".into()
            });
        }
        match case.solver {
            Solver::Single => {
                c.check(case.subdomains == 1, Loc::Item(i, "subdomains"), || {
                    "the single-domain solver needs subdomains = 1".into()
                });
                if let Some(r) = case.report_every {
                    c.check(r > 0, Loc::Item(i, "report_every"), || "report_every must be positive".into());
                }
            }
            Solver::OneLevel | Solver::TwoLevel => {
                if let (Some(p), true) = (problem, case.subdomains > 0) {
                    if let Ok(part) = build_partition(p.domain, case.subdomains, case.overlap_ratio) {
                        check_tau(&mut c, case.tau, part.nc, i);
                    }
                }
            }
        }
        if case.solver == Solver::TwoLevel {
            for (key, v) in [
                ("coarse_width", case.coarse_width),
                ("coarse_interior_points", case.coarse_interior_points),
                ("coarse_boundary_points", case.coarse_boundary_points),
                ("coarse_epochs", case.coarse_epochs),
            ] {
                c.check(v != Some(0), Loc::Item(i, key), || format!("{key} must be positive"));
            }
            if let (Some(p), Some(b)) = (problem, case.coarse_boundary_points) {
                c.check(p.dim() != 1 || b == 2, Loc::Item(i, "coarse_boundary_points"), || {
                    "1D coarse boundary is the two endpoints; coarse_boundary_points must be 2".into()
                });
            }
        }
    }
    c.found
}

fn validate_oracle(cfg: &OracleConfig, source: &str) -> Vec<Diagnostic> {
    let mut c = Collector {
        source,
        array: "sweep",
        found: Vec::new(),
    };
    c.check(!cfg.name.is_empty(), Loc::Top("name"), || "name must not be empty".into());
    c.check(cfg.grid_nodes >= 3, Loc::Top("grid_nodes"), || "grid_nodes must be at least 3".into());
    c.check(cfg.window > 0, Loc::Top("window"), || "window must be positive".into());
    c.check(!cfg.sweeps.is_empty(), Loc::Top("sweep"), || "at least one [[sweep]] is required".into());
    let problem = check_problem(&mut c, &cfg.problem, None);
    let mut labels = Vec::new();
    for (i, s) in cfg.sweeps.iter().enumerate() {
        check_label(&mut c, &s.label, i, &mut labels);
        c.check(s.subdomains > 0, Loc::Item(i, "subdomains"), || "subdomains must be positive".into());
        c.check(s.coarse_nodes != Some(0), Loc::Item(i, "coarse_nodes"), || {
            "coarse_nodes must be positive".into()
        });
        let ratio = s.overlap_ratio.unwrap_or(cfg.overlap_ratio);
        let loc = if s.overlap_ratio.is_some() {
            Loc::Item(i, "overlap_ratio")
        } else {
            Loc::Top("overlap_ratio")
        };
        c.check(ratio > 0.0 && ratio < 1.0, loc, || {
            format!("overlap_ratio must lie in (0, 1), got {ratio}")
        });
        if let (Some(p), true, true) = (problem, s.subdomains > 0, ratio > 0.0 && ratio < 1.0) {
            if let Ok(part) = build_partition(p.domain, s.subdomains, ratio) {
                check_tau(&mut c, s.tau, part.nc, i);
            }
        }
    }
    c.found
}

/// Reads `path`, or an embedded preset when `path` names one and no such
/// file exists.
pub fn read_source(path: &Path) -> Result<String> {
    if !path.exists() {
        if let Some(s) = path.to_str().and_then(preset) {
            return Ok(s.to_string());
        }
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn finish<T>(value: T, diagnostics: Vec<Diagnostic>, path: &Path) -> Result<T> {
    if diagnostics.is_empty() {
        Ok(value)
    } else {
        Err(Error::Invalid {
            path: path.to_path_buf(),
            diagnostics,
        })
    }
}

pub fn parse_experiment(source: &str, path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = parse_toml(source, path)?;
    let d = validate_experiment(&cfg, source);
    finish(cfg, d, path)
}

pub fn parse_oracle(source: &str, path: &Path) -> Result<OracleConfig> {
    let cfg: OracleConfig = parse_toml(source, path)?;
    let d = validate_oracle(&cfg, source);
    finish(cfg, d, path)
}

/// Either kind of configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyConfig {
    Experiment(ExperimentConfig),
    Oracle(OracleConfig),
}

/// Full schema check of a configuration file (or preset name). Oracle
/// configs are recognised by their `[[sweep]]` tables.
pub fn validate_config(path: &Path) -> Result<AnyConfig> {
    let source = read_source(path)?;
    if source.lines().any(|l| l.trim_start().starts_with("[[sweep]]")) {
        parse_oracle(&source, path).map(AnyConfig::Oracle)
    } else {
        parse_experiment(&source, path).map(AnyConfig::Experiment)
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    parse_experiment(&read_source(path)?, path)
}

pub fn load_oracle(path: &Path) -> Result<OracleConfig> {
    parse_oracle(&read_source(path)?, path)
}

/// Runtime options shared by the runners.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; defaults to the config's `output`, then `results/<name>`.
    pub out: Option<PathBuf>,
    /// Worker threads. `None` runs seeds one after another on the global pool.
    pub jobs: Option<usize>,
    /// Restricts the run to these case / sweep labels when non-empty.
    pub only: Vec<String>,
}

impl RunOptions {
    fn out_dir(&self, configured: &Option<PathBuf>, name: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| configured.clone())
            .unwrap_or_else(|| Path::new("results").join(name))
    }

    fn selected(&self, label: &str) -> bool {
        self.only.is_empty() || self.only.iter().any(|l| l == label)
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::config("--jobs must be at least 1")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Internal(format!("cannot start worker pool: {e}")))?
            .install(f),
    }
}

fn check_only<'a>(only: &[String], labels: impl Iterator<Item = &'a str> + Clone) -> Result<()> {
    for o in only {
        if !labels.clone().any(|l| l == o) {
            return Err(Error::config(format!("no case or sweep labelled `{o}`")));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with columns `iter,rel_l2,mean_local_loss,coarse_loss`.
pub fn decay_csv(history: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Internal(format!("csv encoding failed: {e}"));
    w.write_record(["iter", "rel_l2", "mean_local_loss", "coarse_loss"]).map_err(fail)?;
    for r in history {
        w.write_record([
            r.iter.to_string(),
            r.rel_l2.to_string(),
            opt(r.mean_local_loss),
            opt(r.coarse_loss),
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Internal(format!("csv encoding failed: {e}")))
}

/// Parses a decay CSV back into records.
pub fn read_decay_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| format(e.to_string()))?;
    let header = r.headers().map_err(|e| format(e.to_string()))?;
    if header != vec!["iter", "rel_l2", "mean_local_loss", "coarse_loss"] {
        return Err(format(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| format(format!("bad number `{s}`")))
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format(e.to_string()))?;
        out.push(IterationRecord {
            iter: rec[0].parse().map_err(|_| format(format!("bad iteration `{}`", &rec[0])))?,
            rel_l2: num(&rec[1])?.ok_or_else(|| format("missing rel_l2".into()))?,
            mean_local_loss: num(&rec[2])?,
            coarse_loss: num(&rec[3])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Last recorded iteration (outer iterations, or epochs for `single`).
    pub iter: usize,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: usize,
    pub per_seed: Vec<f64>,
    pub min: f64,
    pub mean: f64,
}

/// Contents of `summary.json` for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub experiment: String,
    pub label: String,
    pub problem: String,
    pub solver: Solver,
    pub subdomains: usize,
    /// Parameters per local (or single) network.
    pub parameters: usize,
    pub tau: Option<f64>,
    pub results: Vec<SeedResult>,
    pub min: f64,
    pub mean: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub config: CaseConfig,
    pub wall_time_s: f64,
}

/// Minimum and mean in seed order.
pub fn min_mean(values: &[f64]) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (min, mean)
}

fn run_seed(
    cfg: &ExperimentConfig,
    case: &CaseConfig,
    problem: &PoissonProblem,
    seed: u64,
) -> Result<(Vec<IterationRecord>, Option<f64>)> {
    let part = build_partition(problem.domain, case.subdomains, case.overlap_ratio)?;
    let two = case.solver == Solver::TwoLevel;
    let counts = SampleCounts {
        interior_per_sub: case.interior_points,
        boundary_per_sub: case.boundary_points,
        coarse_interior: if two {
            case.coarse_interior_points.unwrap_or(case.interior_points)
        } else {
            0
        },
        coarse_boundary: if two {
            case.coarse_boundary_points.unwrap_or(case.boundary_points)
        } else {
            0
        },
    };
    let sets = sample_training_sets(&part, problem, counts, seed)?;
    match case.solver {
        Solver::Single => {
            let sc = SingleDomainConfig {
                width: case.width,
                epochs: case.epochs,
                learning_rate: case.learning_rate,
                report_every: case.report_every.unwrap_or((case.epochs / 100).max(1)),
                eval_resolution: cfg.eval_resolution,
            };
            Ok((schwarz::run_single_domain(problem, &sets, &sc, seed)?.history, None))
        }
        Solver::OneLevel | Solver::TwoLevel => {
            let tau = case.tau.resolve(part.nc);
            let level = if two { Level::Two } else { Level::One };
            let mut sc = SchwarzConfig::new(level, tau, case.width);
            sc.max_outer = case.max_outer;
            sc.epochs_per_solve = case.epochs;
            sc.coarse_epochs = case.coarse_epochs.unwrap_or(case.epochs);
            sc.warm_start = case.warm_start;
            sc.eval_resolution = cfg.eval_resolution;
            sc.learning_rate = case.learning_rate;
            sc.coarse_width = case.coarse_width.unwrap_or(case.width);
            Ok((schwarz::run(problem, &part, &sets, &sc, seed)?.history, Some(tau)))
        }
    }
}

/// Runs every selected case for every seed, writing
/// `<out>/<label>/decay_<seed>.csv` and `<out>/<label>/summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<CaseSummary>> {
    check_only(&opts.only, cfg.cases.iter().map(|c| c.label.as_str()))?;
    let out = opts.out_dir(&cfg.output, &cfg.name);
    let mut summaries = Vec::new();
    for case in cfg.cases.iter().filter(|c| opts.selected(&c.label)) {
        let spec = cfg.case_problem(case);
        let problem = spec.build()?;
        let dir = out.join(&case.label);
        create_dir(&dir)?;
        let start = Instant::now();
        let runs: Vec<(Vec<IterationRecord>, Option<f64>)> = with_jobs(opts.jobs, || {
            let one = |&seed: &u64| -> Result<_> {
                let run = run_seed(cfg, case, &problem, seed)?;
                write_file(&dir.join(format!("decay_{seed}.csv")), &decay_csv(&run.0)?)?;
                Ok(run)
            };
            if opts.jobs.is_some() {
                cfg.seeds.par_iter().map(one).collect()
            } else {
                cfg.seeds.iter().map(one).collect()
            }
        })?;

        let results: Vec<SeedResult> = cfg
            .seeds
            .iter()
            .zip(&runs)
            .map(|(&seed, (h, _))| {
                let last = h.last().expect("history holds the initial row");
                SeedResult {
                    seed,
                    iter: last.iter,
                    rel_l2: last.rel_l2,
                }
            })
            .collect();
        let finals: Vec<f64> = results.iter().map(|r| r.rel_l2).collect();
        let (min, mean) = min_mean(&finals);
        let checkpoints = if case.solver == Solver::Single {
            Vec::new()
        } else {
            cfg.report_at
                .iter()
                .filter_map(|&k| {
                    let per_seed: Option<Vec<f64>> = runs
                        .iter()
                        .map(|(h, _)| h.iter().find(|r| r.iter == k).map(|r| r.rel_l2))
                        .collect();
                    let per_seed = per_seed?;
                    let (min, mean) = min_mean(&per_seed);
                    Some(Checkpoint { iter: k, per_seed, min, mean })
                })
                .collect()
        };
        let dim = problem.dim();
        let summary = CaseSummary {
            experiment: cfg.name.clone(),
            label: case.label.clone(),
            problem: problem.kind.to_string(),
            solver: case.solver,
            subdomains: case.subdomains,
            parameters: parameter_count(dim, case.width),
            tau: runs.first().and_then(|r| r.1),
            results,
            min,
            mean,
            checkpoints,
            config: case.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_vec_pretty(&summary)
            .map_err(|e| Error::Internal(format!("json encoding failed: {e}")))?;
        write_file(&dir.join("summary.json"), &json)?;
        summaries.push(summary);
    }
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub label: String,
    pub subdomains: usize,
    pub level: Level,
    pub tau: f64,
    pub nc: usize,
    pub iters: usize,
    pub initial_energy_error: f64,
    pub final_energy_error: f64,
    /// Largest ratio above rounding level.
    pub max_ratio: Option<f64>,
    pub asymptotic_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub name: String,
    pub problem: String,
    pub grid_nodes: usize,
    pub sweeps: Vec<SweepSummary>,
}

/// CSV with columns `iter,energy_error,ratio`.
pub fn oracle_csv(history: &[crate::oracle::OracleRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Internal(format!("csv encoding failed: {e}"));
    w.write_record(["iter", "energy_error", "ratio"]).map_err(fail)?;
    for r in history {
        w.write_record([r.iter.to_string(), r.energy_error.to_string(), opt(r.ratio)])
            .map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Internal(format!("csv encoding failed: {e}")))
}

/// Runs every selected sweep, writing `<out>/<label>.csv` and
/// `<out>/oracle_summary.json`.
pub fn run_oracle(cfg: &OracleConfig, opts: &RunOptions) -> Result<OracleSummary> {
    check_only(&opts.only, cfg.sweeps.iter().map(|s| s.label.as_str()))?;
    let out = opts.out_dir(&cfg.output, &cfg.name);
    create_dir(&out)?;
    let problem = cfg.problem.build()?;
    let grid = FdGrid::new(problem.domain, cfg.grid_nodes)?;
    let selected: Vec<&SweepConfig> = cfg.sweeps.iter().filter(|s| opts.selected(&s.label)).collect();
    let sweeps = with_jobs(opts.jobs, || {
        selected
            .iter()
            .map(|s| {
                let part = build_partition(problem.domain, s.subdomains, s.overlap_ratio.unwrap_or(cfg.overlap_ratio))?;
                let tau = s.tau.resolve(part.nc);
                let settings = OracleSettings {
                    tau,
                    iters: cfg.iters,
                    level: s.level,
                    coarse_nodes: s.coarse_nodes,
                };
                let run = fd_schwarz_run(&problem, &part, &grid, &settings)?;
                write_file(&out.join(format!("{}.csv", s.label)), &oracle_csv(&run.history)?)?;
                let h = &run.history;
                Ok(SweepSummary {
                    label: s.label.clone(),
                    subdomains: s.subdomains,
                    level: s.level,
                    tau,
                    nc: part.nc,
                    iters: cfg.iters,
                    initial_energy_error: h[0].energy_error,
                    final_energy_error: h[h.len() - 1].energy_error,
                    max_ratio: resolved_ratios(h).into_iter().reduce(f64::max),
                    asymptotic_ratio: asymptotic_ratio(h, cfg.window),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = OracleSummary {
        name: cfg.name.clone(),
        problem: problem.kind.to_string(),
        grid_nodes: cfg.grid_nodes,
        sweeps,
    };
    let json = serde_json::to_vec_pretty(&summary)
        .map_err(|e| Error::Internal(format!("json encoding failed: {e}")))?;
    write_file(&out.join("oracle_summary.json"), &json)?;
    Ok(summary)
}

fn collect_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

/// Aggregates every `summary.json` and `oracle_summary.json` below `dir`
/// into one plain-text table.
pub fn report(dir: &Path) -> Result<String> {
    let mut runs = Vec::new();
    let mut oracles = Vec::new();
    collect_files(dir, "summary.json", &mut runs)?;
    collect_files(dir, "oracle_summary.json", &mut oracles)?;
    if runs.is_empty() && oracles.is_empty() {
        return Err(Error::config(format!("no summaries found under {}", dir.display())));
    }
    let mut text = String::new();
    if !runs.is_empty() {
        text.push_str("experiment | case | solver | N | para | iter | per-seed rel L2 | Min | Mean\n");
        for p in &runs {
            let s: CaseSummary = read_json(p)?;
            let mut rows: Vec<(usize, Vec<f64>, f64, f64)> = s
                .checkpoints
                .iter()
                .map(|c| (c.iter, c.per_seed.clone(), c.min, c.mean))
                .collect();
            let last_iter = s.results.first().map_or(0, |r| r.iter);
            if !rows.iter().any(|r| r.0 == last_iter) {
                rows.push((last_iter, s.results.iter().map(|r| r.rel_l2).collect(), s.min, s.mean));
            }
            for (iter, per_seed, min, mean) in rows {
                let seeds: Vec<String> = per_seed.into_iter().map(sci).collect();
                text.push_str(&format!(
                    "{} | {} | {:?} | {} | {} | {} | {} | {} | {}\n",
                    s.experiment,
                    s.label,
                    s.solver,
                    s.subdomains,
                    s.parameters,
                    iter,
                    seeds.join(" "),
                    sci(min),
                    sci(mean)
                ));
            }
        }
    }
    if !oracles.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str("oracle | sweep | level | N | Nc | tau | final energy error | max ratio | asymptotic ratio\n");
        for p in &oracles {
            let s: OracleSummary = read_json(p)?;
            for w in &s.sweeps {
                let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4}"));
                text.push_str(&format!(
                    "{} | {} | {:?} | {} | {} | {} | {} | {} | {}\n",
                    s.name,
                    w.label,
                    w.level,
                    w.subdomains,
                    w.nc,
                    w.tau,
                    sci(w.final_energy_error),
                    f(w.max_ratio),
                    f(w.asymptotic_ratio)
                ));
            }
        }
    }
    Ok(text)
}
