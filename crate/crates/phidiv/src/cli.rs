//! Command-line interface: CSV ingestion, JSON configuration and
//! machine-readable reports.
//!
//! Exit codes: 0 converged, 1 input error, 2 non-converged solve
//! (boundary / unbounded / iteration limit), 3 provably infeasible
//! constraints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, CqStatus, DiagnosticsReport};
use crate::divergence::{DivergenceFamily, DomainMode};
use crate::measure::{self, Atom, DiscreteSignedMeasure, ProbabilityMeasure};
use crate::oracle::{self, OracleError, OracleOptions};
use crate::problem::{MomentProblem, ProblemError};
use crate::solver::{self, SolveStatus, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser)]
#[command(name = "phidiv", version, about = "phi-divergence projections under moment constraints")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project the reference measure onto the moment-constrained set.
    Project {
        /// CSV with optional `weight` column and one column per constraint.
        data: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
        /// Cross-check with the brute-force primal oracle (small instances).
        #[arg(long)]
        oracle: bool,
    },
    /// Empirical-likelihood weights: modified-KL projection of the
    /// empirical measure onto given moment targets.
    El {
        /// CSV of observations, one numeric column per moment function.
        /// Requires --targets with one target mean per column.
        sample: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Divergence between two measures given as id/weight CSV files.
    Divergence {
        p: PathBuf,
        q: PathBuf,
        #[command(flatten)]
        family: FamilyOpts,
        /// Use the extension that charges mass singular w.r.t. P at the
        /// recession slopes instead of reporting +inf.
        #[arg(long)]
        extended: bool,
    },
    /// Tabulate phi, phi' and phi* on a grid as CSV.
    Conjugate {
        #[command(flatten)]
        family: FamilyOpts,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        t_min: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        t_max: f64,
        #[arg(long, default_value_t = 81)]
        steps: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Existence / uniqueness / constraint-qualification diagnostics.
    Diagnose {
        data: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON run configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Restrict densities to be nonnegative (the default); use
    /// --nonnegative=false for the signed chi-squared projection.
    #[arg(long, action = clap::ArgAction::Set)]
    nonnegative: Option<bool>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Centering targets: raw data columns are shifted to g_i = f_i - m_i.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    targets: Option<Vec<f64>>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct FamilyOpts {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
    nonnegative: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    divergence: Option<DivergenceSpec>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    oracle: Option<bool>,
    seed: Option<u64>,
    targets: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceSpec {
    gamma: f64,
    #[serde(default = "default_true")]
    nonnegative: bool,
}

fn default_true() -> bool {
    true
}

/// Effective run configuration after merging defaults, config file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gamma: f64,
    pub nonnegative: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub oracle: bool,
    pub seed: u64,
    pub targets: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            nonnegative: true,
            tol: 1e-10,
            max_iter: 200,
            oracle: false,
            seed: 0,
            targets: None,
        }
    }
}

#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

fn merge_config(common: &CommonOpts, oracle_flag: bool) -> Result<RunConfig, InputError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| InputError(format!("malformed config {}: {e}", path.display())))?;
        if let Some(d) = file.divergence {
            cfg.gamma = d.gamma;
            cfg.nonnegative = d.nonnegative;
        }
        if let Some(v) = file.tol {
            cfg.tol = v;
        }
        if let Some(v) = file.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = file.oracle {
            cfg.oracle = v;
        }
        if let Some(v) = file.seed {
            cfg.seed = v;
        }
        if file.targets.is_some() {
            cfg.targets = file.targets;
        }
    }
    if let Some(v) = common.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = common.nonnegative {
        cfg.nonnegative = v;
    }
    if let Some(v) = common.tol {
        cfg.tol = v;
    }
    if let Some(v) = common.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if common.targets.is_some() {
        cfg.targets = common.targets.clone();
    }
    cfg.oracle |= oracle_flag;
    if !(cfg.tol > 0.0) {
        return Err(InputError(format!("tol must be > 0, got {}", cfg.tol)));
    }
    if cfg.max_iter == 0 {
        return Err(InputError("max_iter must be >= 1".into()));
    }
    Ok(cfg)
}

fn make_family(cfg: &RunConfig) -> Result<DivergenceFamily, InputError> {
    let mode =
        if cfg.nonnegative { DomainMode::NonnegativeExtension } else { DomainMode::FullLine };
    DivergenceFamily::new(cfg.gamma, mode).map_err(|e| InputError(e.to_string()))
}

/// Parsed CSV table: column names plus row-major numeric values.
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, InputError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| InputError(format!("cannot open {}: {e}", path.display())))?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| InputError(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| InputError(format!("{}: line {}: {e}", path.display(), idx + 2)))?;
        let mut row = Vec::with_capacity(columns.len());
        for (field, name) in record.iter().zip(&columns) {
            let v: f64 = field.parse().map_err(|_| {
                InputError(format!(
                    "{}: line {}, column {name:?}: cannot parse {field:?} as a number",
                    path.display(),
                    idx + 2
                ))
            })?;
            row.push(v);
        }
        if row.len() != columns.len() {
            return Err(InputError(format!(
                "{}: line {}: expected {} fields, got {}",
                path.display(),
                idx + 2,
                columns.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(InputError(format!("{}: no data rows", path.display())));
    }
    Ok(Table { columns, rows })
}

/// Builds (P, G) from a data table: the `weight` column (default uniform)
/// becomes P, every other column a constraint column, centered by the
/// configured targets when present.
fn build_problem_inputs(
    table: &Table,
    targets: &Option<Vec<f64>>,
) -> Result<(ProbabilityMeasure, DMatrix<f64>), InputError> {
    let n = table.rows.len();
    let weight_col = table.columns.iter().position(|c| c == "weight");
    let g_cols: Vec<usize> =
        (0..table.columns.len()).filter(|&c| Some(c) != weight_col).collect();
    let weights: Vec<f64> = match weight_col {
        Some(c) => table.rows.iter().map(|r| r[c]).collect(),
        None => vec![1.0 / n as f64; n],
    };
    let atoms: Vec<Atom> = (0..n).map(|j| Atom::new(j.to_string())).collect();
    let p = ProbabilityMeasure::new_renormalized(atoms, weights)
        .map_err(|e| InputError(format!("invalid weights: {e}")))?;
    if p.len() != n {
        return Err(InputError("zero-weight rows are not supported in problem data".into()));
    }
    if let Some(t) = targets {
        if t.len() != g_cols.len() {
            return Err(InputError(format!(
                "{} centering targets given for {} constraint columns",
                t.len(),
                g_cols.len()
            )));
        }
    }
    let mut g = DMatrix::zeros(n, g_cols.len());
    for (i, &c) in g_cols.iter().enumerate() {
        let m = targets.as_ref().map(|t| t[i]).unwrap_or(0.0);
        for j in 0..n {
            g[(j, i)] = table.rows[j][c] - m;
        }
    }
    Ok((p, g))
}

#[derive(Serialize)]
struct OracleBlock {
    value: f64,
    q: Vec<f64>,
    on_box_boundary: bool,
}

#[derive(Serialize)]
struct Report {
    status: SolveStatus,
    lambda: Vec<f64>,
    dual_value: f64,
    primal_value: Option<f64>,
    gap: Option<f64>,
    q_star: Option<Vec<f64>>,
    diagnostics: DiagnosticsReport,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleBlock>,
    /// Per-observation empirical-likelihood weights, el mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

fn emit(report: &Report, output: &Option<PathBuf>) -> Result<(), InputError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    match output {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| InputError(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve_and_report(
    problem: &MomentProblem,
    cfg: &RunConfig,
    el_mode: bool,
) -> Result<(Report, i32), InputError> {
    let opts = SolverOptions { tol: cfg.tol, max_iter: cfg.max_iter, ..Default::default() };
    let solution = solver::solve_dual(problem, &opts).map_err(|e| InputError(e.to_string()))?;
    let mut diag = diagnostics::existence_report(problem, cfg.seed);

    let mut report = Report {
        status: solution.status,
        lambda: solution.lambda.iter().copied().collect(),
        dual_value: solution.dual_value,
        primal_value: None,
        gap: None,
        q_star: None,
        diagnostics: diag.clone(),
        iterations: solution.iterations,
        oracle: None,
        weights: None,
    };

    if solution.status == SolveStatus::Converged {
        let primal = solver::recover_primal(problem, &solution).map_err(|e| InputError(e.to_string()))?;
        diag.characterization_residual = Some(primal.characterization_residual);
        let sc = diagnostics::support_check(problem, &primal.q_star, &diag.cq);
        diag.full_support = Some(sc.full_support);
        if sc.inconsistency {
            diag.notes.push(
                "inconsistency: the support lemma predicts full support but the recovered \
                 density has zero atoms"
                    .to_string(),
            );
        }
        if el_mode {
            let n = problem.num_atoms() as f64;
            report.weights = Some(primal.q_star.iter().map(|q| q / n).collect());
        }
        report.primal_value = Some(primal.primal_value);
        report.gap = Some(primal.gap);
        report.q_star = Some(primal.q_star);
    }
    report.diagnostics = diag;

    if cfg.oracle && solution.status == SolveStatus::Converged {
        match oracle::oracle_solve(problem, &OracleOptions::default()) {
            Ok(res) => {
                report.oracle =
                    Some(OracleBlock { value: res.value, q: res.q, on_box_boundary: res.on_box_boundary })
            }
            Err(OracleError::TooManyDimensions(d)) => {
                report.diagnostics.notes.push(format!(
                    "oracle skipped: null-space dimension {d} exceeds the desk-scale limit"
                ));
            }
            Err(e) => return Err(InputError(e.to_string())),
        }
    }

    let code = match report.status {
        SolveStatus::Converged => EXIT_OK,
        _ => EXIT_NOT_CONVERGED,
    };
    Ok((report, code))
}

fn cmd_project(data: &Path, common: &CommonOpts, oracle_flag: bool) -> Result<i32, InputError> {
    let cfg = merge_config(common, oracle_flag)?;
    let family = make_family(&cfg)?;
    let table = read_table(data)?;
    let (p, g) = build_problem_inputs(&table, &cfg.targets)?;
    let problem = match build_checked_problem(p, g, family, cfg.seed)? {
        Ok(pr) => pr,
        Err(code) => return Ok(code),
    };
    if diagnostics::cq_check(&problem, cfg.seed).status == CqStatus::FailsProvably {
        eprintln!("infeasible: the affine constraint system has no solution");
        return Ok(EXIT_INFEASIBLE);
    }
    let (report, code) = solve_and_report(&problem, &cfg, false)?;
    emit(&report, &common.output)?;
    Ok(code)
}

/// Rank-deficient constraints fall in two classes: a redundant but
/// consistent system is an input error, an inconsistent one is a provably
/// empty feasible set and maps to the infeasible exit code.
fn build_checked_problem(
    p: ProbabilityMeasure,
    g: DMatrix<f64>,
    family: DivergenceFamily,
    seed: u64,
) -> Result<Result<MomentProblem, i32>, InputError> {
    match MomentProblem::new(p.clone(), g.clone(), family) {
        Ok(pr) => Ok(Ok(pr)),
        Err(ProblemError::RankDeficient { kernel }) => {
            let degenerate = MomentProblem::new_unchecked(p, g, family);
            if diagnostics::cq_check(&degenerate, seed).status == CqStatus::FailsProvably {
                eprintln!("infeasible: the affine constraint system has no solution");
                return Ok(Err(EXIT_INFEASIBLE));
            }
            Err(InputError(format!(
                "constraint columns are linearly dependent on supp P; kernel multiplier {kernel:?}"
            )))
        }
        Err(e) => Err(InputError(e.to_string())),
    }
}

fn cmd_el(sample: &Path, common: &CommonOpts) -> Result<i32, InputError> {
    let mut cfg = merge_config(common, false)?;
    cfg.gamma = 0.0;
    cfg.nonnegative = true;
    let family = DivergenceFamily::kl_m();
    let table = read_table(sample)?;
    if table.columns.iter().any(|c| c == "weight") {
        return Err(InputError("el mode uses uniform empirical weights; drop the weight column".into()));
    }
    let targets = cfg
        .targets
        .clone()
        .ok_or_else(|| InputError("el mode requires --targets, one mean per column".into()))?;
    if targets.len() != table.columns.len() {
        return Err(InputError(format!(
            "{} targets given for {} sample columns",
            targets.len(),
            table.columns.len()
        )));
    }
    let (p, g) = build_problem_inputs(&table, &Some(targets))?;
    let problem = match build_checked_problem(p, g, family, cfg.seed)? {
        Ok(pr) => pr,
        Err(code) => return Ok(code),
    };
    if diagnostics::cq_check(&problem, cfg.seed).status == CqStatus::FailsProvably {
        eprintln!("infeasible: the affine constraint system has no solution");
        return Ok(EXIT_INFEASIBLE);
    }
    let (report, code) = solve_and_report(&problem, &cfg, true)?;
    emit(&report, &common.output)?;
    Ok(code)
}

/// Reads an id/weight CSV into a signed measure: `weight` column
/// mandatory, optional `id` column (defaults to the row index).
fn read_measure(path: &Path) -> Result<DiscreteSignedMeasure, InputError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| InputError(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| InputError(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let id_col = headers.iter().position(|h| h == "id");
    let w_col = headers
        .iter()
        .position(|h| h == "weight")
        .ok_or_else(|| InputError(format!("{}: missing weight column", path.display())))?;
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| InputError(format!("{}: line {}: {e}", path.display(), idx + 2)))?;
        let id = match id_col {
            Some(c) => record.get(c).unwrap_or_default().to_string(),
            None => idx.to_string(),
        };
        let w: f64 = record
            .get(w_col)
            .unwrap_or_default()
            .parse()
            .map_err(|_| InputError(format!("{}: line {}: bad weight", path.display(), idx + 2)))?;
        atoms.push(Atom::new(id));
        weights.push(w);
    }
    DiscreteSignedMeasure::new(atoms, weights).map_err(|e| InputError(e.to_string()))
}

fn cmd_divergence(
    p_path: &Path,
    q_path: &Path,
    fam_opts: &FamilyOpts,
    extended: bool,
) -> Result<i32, InputError> {
    let mode = if fam_opts.nonnegative {
        DomainMode::NonnegativeExtension
    } else {
        DomainMode::FullLine
    };
    let family =
        DivergenceFamily::new(fam_opts.gamma, mode).map_err(|e| InputError(e.to_string()))?;
    let p_raw = read_measure(p_path)?;
    let p = ProbabilityMeasure::new(p_raw.atoms().to_vec(), p_raw.weights().to_vec())
        .map_err(|e| InputError(format!("{}: {e}", p_path.display())))?;
    let q = read_measure(q_path)?;
    let value = if extended {
        measure::divergence_extended(&family, &q, &p)
    } else {
        measure::divergence(&family, &q, &p)
    };
    println!("{value}");
    Ok(EXIT_OK)
}

fn cmd_conjugate(
    fam_opts: &FamilyOpts,
    t_min: f64,
    t_max: f64,
    steps: usize,
    output: &Option<PathBuf>,
) -> Result<i32, InputError> {
    if steps < 2 || !(t_min < t_max) {
        return Err(InputError("need steps >= 2 and t_min < t_max".into()));
    }
    let mode = if fam_opts.nonnegative {
        DomainMode::NonnegativeExtension
    } else {
        DomainMode::FullLine
    };
    let family =
        DivergenceFamily::new(fam_opts.gamma, mode).map_err(|e| InputError(e.to_string()))?;
    let mut out = String::from("t,phi,phi_prime,conj\n");
    for i in 0..steps {
        let t = t_min + (t_max - t_min) * i as f64 / (steps - 1) as f64;
        let phi = family.phi(t);
        let dphi = family.phi_prime(t).map(|v| v.to_string()).unwrap_or_default();
        let conj = family.conj(t);
        out.push_str(&format!("{t},{phi},{dphi},{conj}\n"));
    }
    match output {
        Some(path) => fs::write(path, out)
            .map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))?,
        None => {
            std::io::stdout().write_all(out.as_bytes()).ok();
        }
    }
    Ok(EXIT_OK)
}

fn cmd_diagnose(data: &Path, common: &CommonOpts) -> Result<i32, InputError> {
    let cfg = merge_config(common, false)?;
    let family = make_family(&cfg)?;
    let table = read_table(data)?;
    let (p, g) = build_problem_inputs(&table, &cfg.targets)?;
    let problem = match MomentProblem::new(p, g, family) {
        Err(ProblemError::RankDeficient { kernel }) => {
            return Err(InputError(format!(
                "constraint columns are linearly dependent on supp P; kernel multiplier {kernel:?}"
            )))
        }
        Err(e) => return Err(InputError(e.to_string())),
        Ok(pr) => pr,
    };
    let report = diagnostics::existence_report(&problem, cfg.seed);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &common.output {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(if report.cq.status == CqStatus::FailsProvably { EXIT_INFEASIBLE } else { EXIT_OK })
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Project { data, common, oracle } => cmd_project(data, common, *oracle),
        Command::El { sample, common } => cmd_el(sample, common),
        Command::Divergence { p, q, family, extended } => cmd_divergence(p, q, family, *extended),
        Command::Conjugate { family, t_min, t_max, steps, output } => {
            cmd_conjugate(family, *t_min, *t_max, *steps, output)
        }
        Command::Diagnose { data, common } => cmd_diagnose(data, common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
