//! Solver backends: HiGHS linked in-process, or any executable honouring the
//! file contract
//!
//! ```text
//! <exe> model.mps solution.txt --time-limit <s> --gap <rel> --threads <n> [--option key=value]...
//! ```
//!
//! The solution file holds `=status=`, `=obj=`, `=bound=`, `=gap=` and
//! `=time=` header lines, optional `=progress= <seconds> <primal> <dual> <gap>`
//! samples, then one `name value` line per variable.

use std::collections::HashMap;
use std::ffi::{c_char, c_int, c_void, CString};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use highs_sys::*;
use serde::{Deserialize, Serialize};

use super::{MilpError, MilpModel, Relation, VarKind};

/// Default relative optimality gap (0.01 %).
pub const DEFAULT_GAP: f64 = 1e-4;
/// Integral variables must lie this close to an integer.
pub const INTEGRALITY_TOL: f64 = 1e-4;
/// Environment variable naming an external solver executable.
pub const SOLVER_ENV_VAR: &str = "OMDT_SOLVER";
/// Primal feasibility tolerance passed to HiGHS. Tighter than its default so
/// that occupancy sums are accurate to well below 1e-6.
const FEASIBILITY_TOL: f64 = 1e-9;

const CALLBACK_MIP_IMPROVING_SOLUTION: HighsInt = 4;
const CALLBACK_MIP_LOGGING: HighsInt = 5;
const OPTION_TYPE_BOOL: HighsInt = 0;
const OPTION_TYPE_INT: HighsInt = 1;
const OPTION_TYPE_DOUBLE: HighsInt = 2;
const MATRIX_ROWWISE: HighsInt = 2;
const SENSE_MINIMIZE: HighsInt = 1;
const SENSE_MAXIMIZE: HighsInt = -1;
const VAR_CONTINUOUS: HighsInt = 0;
const VAR_INTEGER: HighsInt = 1;
const SOLUTION_FEASIBLE: HighsInt = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// HiGHS compiled into this library.
    Linked,
    /// An executable implementing the file contract.
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend: Backend,
    pub time_limit: f64,
    pub rel_gap: f64,
    pub threads: usize,
    pub seed: u64,
    /// Solver-specific `key=value` options.
    pub passthrough: Vec<(String, String)>,
    /// Echo the solver log to stderr.
    pub verbose: bool,
    /// Directory for model and solution files of external solves.
    pub work_dir: Option<PathBuf>,
    /// Re-solve the LP with the integral part of the incumbent fixed, so
    /// continuous values come from an exact basic solution.
    pub polish: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Linked,
            time_limit: 600.0,
            rel_gap: DEFAULT_GAP,
            threads: 1,
            seed: 0,
            passthrough: Vec::new(),
            verbose: false,
            work_dir: None,
            polish: true,
        }
    }
}

impl BackendConfig {
    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = seconds;
        self
    }

    /// Uses the executable named by [`SOLVER_ENV_VAR`] when set.
    pub fn from_env(self) -> Self {
        match std::env::var_os(SOLVER_ENV_VAR) {
            Some(path) if !path.is_empty() => Self { backend: Backend::External(path.into()), ..self },
            _ => self,
        }
    }

    pub fn check(&self) -> Result<(), MilpError> {
        if !(self.time_limit > 0.0) {
            return Err(MilpError::Backend(format!("time limit must be positive, got {}", self.time_limit)));
        }
        if !(self.rel_gap >= 0.0) {
            return Err(MilpError::Backend(format!("gap must be non-negative, got {}", self.rel_gap)));
        }
        if self.threads == 0 {
            return Err(MilpError::Backend("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimeLimit => "time-limit",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [SolveStatus::Optimal, SolveStatus::Feasible, SolveStatus::Infeasible, SolveStatus::TimeLimit]
            .into_iter()
            .find(|st| st.as_str() == s)
    }
}

/// Incumbent and bound reported during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressSample {
    pub seconds: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Values aligned with the model's variables, when an incumbent exists.
    pub values: Option<Vec<f64>>,
    pub objective: f64,
    pub best_bound: f64,
    pub rel_gap: f64,
    pub wall_seconds: f64,
    pub progress: Vec<ProgressSample>,
}

impl SolveOutcome {
    pub fn value(&self, model: &MilpModel, name: &str) -> Option<f64> {
        let i = model.variables.iter().position(|v| v.name == name)?;
        self.values.as_ref().map(|v| v[i])
    }
}

/// Solves `model`, optionally starting from a feasible assignment.
pub fn solve(model: &MilpModel, config: &BackendConfig, start: Option<&[f64]>) -> Result<SolveOutcome, MilpError> {
    config.check()?;
    let outcome = match &config.backend {
        Backend::Linked => solve_linked(model, config, start)?,
        Backend::External(exe) => solve_external(model, config, exe)?,
    };
    if outcome.status == SolveStatus::Infeasible {
        return Err(MilpError::Infeasible);
    }
    let mut outcome = outcome;
    if let Some(values) = &outcome.values {
        check_integrality(model, values)?;
        if config.polish && model.variables.iter().any(|v| v.kind != VarKind::Continuous) {
            if let Some((polished, objective)) = polish_solution(model, values, config)? {
                outcome.values = Some(polished);
                outcome.objective = objective;
            }
        }
    }
    Ok(outcome)
}

fn check_integrality(model: &MilpModel, values: &[f64]) -> Result<(), MilpError> {
    if values.len() != model.variables.len() {
        return Err(MilpError::Backend(format!("{} values for {} variables", values.len(), model.variables.len())));
    }
    for (var, &x) in model.variables.iter().zip(values) {
        if var.kind != VarKind::Continuous && (x - x.round()).abs() > INTEGRALITY_TOL {
            return Err(MilpError::NotIntegral { name: var.name.clone(), value: x });
        }
    }
    Ok(())
}

struct Highs(*mut c_void);

impl Drop for Highs {
    fn drop(&mut self) {
        // SAFETY: the pointer came from Highs_create and is destroyed once.
        unsafe { Highs_destroy(self.0) }
    }
}

fn cstr(s: &str) -> Result<CString, MilpError> {
    CString::new(s).map_err(|_| MilpError::Backend(format!("option `{s}` contains a NUL byte")))
}

impl Highs {
    fn set_option(&self, key: &str, value: &str) -> Result<(), MilpError> {
        let k = cstr(key)?;
        let bad = || MilpError::Backend(format!("invalid value `{value}` for HiGHS option `{key}`"));
        let mut kind: HighsInt = -1;
        // SAFETY: valid instance, NUL-terminated strings, live out-pointer.
        let status = unsafe {
            if Highs_getOptionType(self.0, k.as_ptr(), &mut kind) != STATUS_OK {
                return Err(MilpError::Backend(format!("unknown HiGHS option `{key}`")));
            }
            match kind {
                OPTION_TYPE_BOOL => {
                    let v = value.parse::<bool>().map_err(|_| bad())?;
                    Highs_setBoolOptionValue(self.0, k.as_ptr(), v as HighsInt)
                }
                OPTION_TYPE_INT => {
                    let v = value.parse::<HighsInt>().map_err(|_| bad())?;
                    Highs_setIntOptionValue(self.0, k.as_ptr(), v)
                }
                OPTION_TYPE_DOUBLE => {
                    let v = value.parse::<f64>().map_err(|_| bad())?;
                    Highs_setDoubleOptionValue(self.0, k.as_ptr(), v)
                }
                _ => Highs_setStringOptionValue(self.0, k.as_ptr(), cstr(value)?.as_ptr()),
            }
        };
        if status == STATUS_ERROR {
            return Err(bad());
        }
        Ok(())
    }

    fn double_info(&self, key: &str) -> f64 {
        let k = CString::new(key).expect("static key");
        let mut v = f64::NAN;
        // SAFETY: valid instance and out-pointer.
        unsafe { Highs_getDoubleInfoValue(self.0, k.as_ptr(), &mut v) };
        v
    }

    fn int_info(&self, key: &str) -> HighsInt {
        let k = CString::new(key).expect("static key");
        let mut v: HighsInt = -1;
        // SAFETY: valid instance and out-pointer.
        unsafe { Highs_getIntInfoValue(self.0, k.as_ptr(), &mut v) };
        v
    }
}

unsafe extern "C" fn record_progress(
    _kind: c_int,
    _message: *const c_char,
    out: *const HighsCallbackDataOut,
    _input: *mut HighsCallbackDataIn,
    user: *mut c_void,
) {
    if out.is_null() || user.is_null() {
        return;
    }
    // SAFETY: HiGHS passes a valid data block, and `user` is the Vec handed
    // to Highs_setCallback, which outlives the solve.
    let (out, samples) = unsafe { (&*out, &mut *(user as *mut Vec<ProgressSample>)) };
    samples.push(ProgressSample {
        seconds: out.running_time,
        primal: out.mip_primal_bound,
        dual: out.mip_dual_bound,
        gap: out.mip_gap,
    });
}

/// Row-wise constraint matrix in the layout HiGHS expects.
struct Matrix {
    cost: Vec<f64>,
    col_lower: Vec<f64>,
    col_upper: Vec<f64>,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
    a_start: Vec<HighsInt>,
    a_index: Vec<HighsInt>,
    a_value: Vec<f64>,
}

impl Matrix {
    fn new(model: &MilpModel) -> Self {
        let n_row = model.constraints.len();
        let mut m = Matrix {
            cost: model.variables.iter().map(|v| v.objective).collect(),
            col_lower: model.variables.iter().map(|v| v.lower).collect(),
            col_upper: model.variables.iter().map(|v| v.upper).collect(),
            row_lower: Vec::with_capacity(n_row),
            row_upper: Vec::with_capacity(n_row),
            a_start: Vec::with_capacity(n_row + 1),
            a_index: Vec::with_capacity(model.n_nonzeros()),
            a_value: Vec::with_capacity(model.n_nonzeros()),
        };
        for c in &model.constraints {
            let (lo, hi) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, c.rhs),
                Relation::Ge => (c.rhs, f64::INFINITY),
                Relation::Eq => (c.rhs, c.rhs),
            };
            m.row_lower.push(lo);
            m.row_upper.push(hi);
            m.a_start.push(m.a_index.len() as HighsInt);
            for &(v, a) in &c.terms {
                m.a_index.push(v as HighsInt);
                m.a_value.push(a);
            }
        }
        m
    }

    /// Loads the problem; `integrality` of `None` passes it as an LP.
    fn pass(&self, highs: &Highs, maximize: bool, integrality: Option<&[HighsInt]>) -> Result<(), MilpError> {
        let sense = if maximize { SENSE_MAXIMIZE } else { SENSE_MINIMIZE };
        let (n_col, n_row, nnz) = (self.cost.len() as HighsInt, self.row_lower.len() as HighsInt, self.a_index.len() as HighsInt);
        // SAFETY: every array has the length HiGHS expects for the given counts.
        let status = unsafe {
            match integrality {
                Some(kinds) => Highs_passMip(
                    highs.0,
                    n_col,
                    n_row,
                    nnz,
                    MATRIX_ROWWISE,
                    sense,
                    0.0,
                    self.cost.as_ptr(),
                    self.col_lower.as_ptr(),
                    self.col_upper.as_ptr(),
                    self.row_lower.as_ptr(),
                    self.row_upper.as_ptr(),
                    self.a_start.as_ptr(),
                    self.a_index.as_ptr(),
                    self.a_value.as_ptr(),
                    kinds.as_ptr(),
                ),
                None => Highs_passLp(
                    highs.0,
                    n_col,
                    n_row,
                    nnz,
                    MATRIX_ROWWISE,
                    sense,
                    0.0,
                    self.cost.as_ptr(),
                    self.col_lower.as_ptr(),
                    self.col_upper.as_ptr(),
                    self.row_lower.as_ptr(),
                    self.row_upper.as_ptr(),
                    self.a_start.as_ptr(),
                    self.a_index.as_ptr(),
                    self.a_value.as_ptr(),
                ),
            }
        };
        if status == STATUS_ERROR {
            return Err(MilpError::Backend("HiGHS rejected the model".into()));
        }
        Ok(())
    }
}

impl Highs {
    fn new(config: &BackendConfig) -> Result<Self, MilpError> {
        // SAFETY: Highs_create returns an owned instance released by `Highs::drop`.
        let highs = Highs(unsafe { Highs_create() });
        // The MIP logging callback only fires with output enabled, so logging
        // is kept on and routed away from the console unless requested.
        highs.set_option("output_flag", "true")?;
        highs.set_option("log_to_console", if config.verbose { "true" } else { "false" })?;
        highs.set_option("time_limit", &config.time_limit.to_string())?;
        highs.set_option("mip_feasibility_tolerance", &FEASIBILITY_TOL.to_string())?;
        highs.set_option("primal_feasibility_tolerance", &FEASIBILITY_TOL.to_string())?;
        // Transition probabilities far below the default 1e-9 cutoff occur
        // (sysadmin products of small factors); dropping them breaks flow
        // conservation by more than the verification tolerance.
        highs.set_option("small_matrix_value", "1e-12")?;
        highs.set_option("threads", &config.threads.to_string())?;
        highs.set_option("random_seed", &(config.seed % (i32::MAX as u64)).to_string())?;
        Ok(highs)
    }

    fn column_values(&self, n_col: usize, n_row: usize) -> Vec<f64> {
        let mut col_value = vec![0.0; n_col];
        let mut col_dual = vec![0.0; n_col];
        let mut row_value = vec![0.0; n_row];
        let mut row_dual = vec![0.0; n_row];
        // SAFETY: buffers sized to the model.
        unsafe {
            Highs_getSolution(
                self.0,
                col_value.as_mut_ptr(),
                col_dual.as_mut_ptr(),
                row_value.as_mut_ptr(),
                row_dual.as_mut_ptr(),
            )
        };
        col_value
    }
}

/// Solves with the in-process HiGHS library.
pub fn solve_linked(model: &MilpModel, config: &BackendConfig, start: Option<&[f64]>) -> Result<SolveOutcome, MilpError> {
    config.check()?;
    model.check()?;
    let (n_col, n_row) = (model.variables.len(), model.constraints.len());
    if let Some(s) = start {
        if s.len() != n_col {
            return Err(MilpError::Backend(format!("warm start has {} values for {n_col} variables", s.len())));
        }
    }
    let integrality: Vec<HighsInt> =
        model.variables.iter().map(|v| if v.kind == VarKind::Continuous { VAR_CONTINUOUS } else { VAR_INTEGER }).collect();
    let highs = Highs::new(config)?;
    highs.set_option("mip_rel_gap", &config.rel_gap.to_string())?;
    for (k, v) in &config.passthrough {
        highs.set_option(k, v)?;
    }
    Matrix::new(model).pass(&highs, model.maximize, Some(&integrality))?;
    if let Some(s) = start {
        // SAFETY: `s` has one value per column; the other arrays may be null.
        let st = unsafe { Highs_setSolution(highs.0, s.as_ptr(), std::ptr::null(), std::ptr::null(), std::ptr::null()) };
        if st == STATUS_ERROR {
            return Err(MilpError::Backend("HiGHS rejected the warm start".into()));
        }
    }

    let mut progress: Vec<ProgressSample> = Vec::new();
    let clock = Instant::now();
    // SAFETY: `progress` outlives Highs_run and is only touched by the callback
    // while the solver runs on this thread.
    let run_status = unsafe {
        Highs_setCallback(highs.0, Some(record_progress), &mut progress as *mut Vec<ProgressSample> as *mut c_void);
        Highs_startCallback(highs.0, CALLBACK_MIP_IMPROVING_SOLUTION);
        Highs_startCallback(highs.0, CALLBACK_MIP_LOGGING);
        Highs_run(highs.0)
    };
    let wall_seconds = clock.elapsed().as_secs_f64();
    if run_status == STATUS_ERROR {
        return Err(MilpError::Backend("HiGHS run failed".into()));
    }

    // SAFETY: valid instance.
    let model_status = unsafe { Highs_getModelStatus(highs.0) };
    let has_solution = highs.int_info("primal_solution_status") == SOLUTION_FEASIBLE;
    let status = match model_status {
        MODEL_STATUS_OPTIMAL => SolveStatus::Optimal,
        MODEL_STATUS_INFEASIBLE => SolveStatus::Infeasible,
        MODEL_STATUS_REACHED_TIME_LIMIT => SolveStatus::TimeLimit,
        _ if has_solution => SolveStatus::Feasible,
        other => return Err(MilpError::Backend(format!("HiGHS finished with model status {other}"))),
    };
    let values = has_solution.then(|| highs.column_values(n_col, n_row));
    let objective = if has_solution { highs.double_info("objective_function_value") } else { f64::NAN };
    Ok(SolveOutcome {
        status,
        values,
        objective,
        best_bound: highs.double_info("mip_dual_bound"),
        rel_gap: highs.double_info("mip_gap"),
        wall_seconds,
        progress,
    })
}

/// Fixes every integral variable at its rounded value and re-solves the
/// remaining LP with the linked solver. Returns the polished values and
/// objective, or `None` when the LP does not solve to optimality.
pub fn polish_solution(model: &MilpModel, values: &[f64], config: &BackendConfig) -> Result<Option<(Vec<f64>, f64)>, MilpError> {
    check_integrality(model, values)?;
    let mut matrix = Matrix::new(model);
    for (i, var) in model.variables.iter().enumerate() {
        if var.kind != VarKind::Continuous {
            matrix.col_lower[i] = values[i].round();
            matrix.col_upper[i] = values[i].round();
        }
    }
    let highs = Highs::new(config)?;
    highs.set_option("presolve", "off")?;
    highs.set_option("solver", "simplex")?;
    matrix.pass(&highs, model.maximize, None)?;
    // SAFETY: valid instance.
    let ok = unsafe { Highs_run(highs.0) } != STATUS_ERROR && unsafe { Highs_getModelStatus(highs.0) } == MODEL_STATUS_OPTIMAL;
    if !ok {
        return Ok(None);
    }
    let polished = highs.column_values(model.variables.len(), model.constraints.len());
    Ok(Some((polished, highs.double_info("objective_function_value"))))
}

fn solve_external(model: &MilpModel, config: &BackendConfig, exe: &Path) -> Result<SolveOutcome, MilpError> {
    let scratch;
    let dir = match &config.work_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            scratch = tempfile::tempdir()?;
            scratch.path().to_path_buf()
        }
    };
    let mps_path = dir.join("model.mps");
    let sol_path = dir.join("solution.txt");
    super::write_mps(model, &mps_path)?;
    let _ = fs::remove_file(&sol_path);
    let mut cmd = Command::new(exe);
    cmd.arg(&mps_path)
        .arg(&sol_path)
        .args(["--time-limit", &config.time_limit.to_string()])
        .args(["--gap", &config.rel_gap.to_string()])
        .args(["--threads", &config.threads.to_string()]);
    for (k, v) in &config.passthrough {
        cmd.args(["--option", &format!("{k}={v}")]);
    }
    let clock = Instant::now();
    let output = cmd.output().map_err(|e| MilpError::Backend(format!("cannot run {}: {e}", exe.display())))?;
    let wall = clock.elapsed().as_secs_f64();
    if !output.status.success() {
        return Err(MilpError::Backend(format!(
            "{} exited with {}: {}",
            exe.display(),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let mut outcome = read_solution_file(model, &sol_path)?;
    if outcome.wall_seconds.is_nan() {
        outcome.wall_seconds = wall;
    }
    Ok(outcome)
}

/// Writes an outcome in the solution exchange format.
pub fn write_solution_file(model: &MilpModel, outcome: &SolveOutcome, path: impl AsRef<Path>) -> Result<(), MilpError> {
    let mut out = String::new();
    let _ = writeln!(out, "=status= {}", outcome.status.as_str());
    let _ = writeln!(out, "=obj= {}", outcome.objective);
    let _ = writeln!(out, "=bound= {}", outcome.best_bound);
    let _ = writeln!(out, "=gap= {}", outcome.rel_gap);
    let _ = writeln!(out, "=time= {}", outcome.wall_seconds);
    for p in &outcome.progress {
        let _ = writeln!(out, "=progress= {} {} {} {}", p.seconds, p.primal, p.dual, p.gap);
    }
    if let Some(values) = &outcome.values {
        for (var, x) in model.variables.iter().zip(values) {
            let _ = writeln!(out, "{} {x}", var.name);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a solution file, mapping variable names onto `model`.
pub fn read_solution_file(model: &MilpModel, path: impl AsRef<Path>) -> Result<SolveOutcome, MilpError> {
    let text = fs::read_to_string(path)?;
    let index: HashMap<&str, usize> = model.var_index();
    let mut values = vec![f64::NAN; model.variables.len()];
    let mut seen = 0usize;
    let mut status = None;
    let (mut objective, mut bound, mut gap, mut time) = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let mut progress = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| MilpError::SolutionFile { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number `{s}`")));
        match (fields[0], fields.len()) {
            ("=status=", 2) => status = Some(SolveStatus::parse(fields[1]).ok_or_else(|| err(format!("unknown status `{}`", fields[1])))?),
            ("=obj=", 2) => objective = num(fields[1])?,
            ("=bound=", 2) => bound = num(fields[1])?,
            ("=gap=", 2) => gap = num(fields[1])?,
            ("=time=", 2) => time = num(fields[1])?,
            ("=progress=", 5) => progress.push(ProgressSample {
                seconds: num(fields[1])?,
                primal: num(fields[2])?,
                dual: num(fields[3])?,
                gap: num(fields[4])?,
            }),
            (name, 2) if !name.starts_with('=') => {
                let &v = index.get(name).ok_or_else(|| err(format!("unknown variable `{name}`")))?;
                if values[v].is_nan() {
                    seen += 1;
                }
                values[v] = num(fields[1])?;
            }
            _ => return Err(err(format!("unrecognised line `{line}`"))),
        }
    }
    let status = status.ok_or(MilpError::SolutionFile { line: 0, msg: "missing =status= line".into() })?;
    let values = match seen {
        0 => None,
        n if n == values.len() => Some(values),
        _ => {
            let missing = model.variables.iter().zip(&values).find(|(_, x)| x.is_nan()).map(|(v, _)| v.name.clone());
            return Err(MilpError::MissingValue(missing.unwrap_or_default()));
        }
    };
    Ok(SolveOutcome { status, values, objective, best_bound: bound, rel_gap: gap, wall_seconds: time, progress })
}
