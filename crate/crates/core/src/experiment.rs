//! Experiment orchestration behind the `aspsched` binary: dataset
//! generation, per-cell solving, held-out evaluation and report tables.
//!
//! Every file written here is a pure function of the configuration, so
//! reruns are byte-identical. Wall-clock runtimes go to a separate file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, CostParams};
use crate::datagen::{generate, FeatureDataset};
use crate::distributions::Family;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{schedule_ieo, schedule_seo, LrSchedule, Optimizer, PredictedSchedule, TrainConfig};
use crate::rng::derive_seed;
use crate::solvers::{ambiguity_from_scenarios, solve_dro, solve_saa, DroConfig, SaaConfig, ScenarioSet, ScenarioSource};

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const HOLDOUT_FILE: &str = "holdout.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const RUNTIMES_FILE: &str = "runtimes.csv";
pub const SCHEDULE_DIR: &str = "schedules";

/// Reference values quoted for the normal family at `(1, 1)`; reported next
/// to our numbers, never asserted.
pub const REFERENCE_SAA_11: f64 = 13.40;
pub const REFERENCE_DRO_11: f64 = 22.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Saa,
    Dro,
    Seo,
    Ieo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Saa, Method::Dro, Method::Seo, Method::Ieo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Saa => "saa",
            Method::Dro => "dro",
            Method::Seo => "seo",
            Method::Ieo => "ieo",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Method::Seo | Method::Ieo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}' (expected saa, dro, seo or ieo)")))
    }
}

fn default_costs() -> Vec<f64> {
    vec![1.0, 2.0, 5.0]
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_reps() -> usize {
    10
}

fn default_train_reps() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_orders() -> Vec<u32> {
    vec![1, 2]
}

fn default_grid_points() -> usize {
    11
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// The training setup used by the experiments unless overridden.
pub fn default_train_config() -> TrainConfig {
    TrainConfig {
        hidden: 16,
        optimizer: Optimizer::Adam,
        learning_rate: 0.03,
        schedule: LrSchedule::InverseTime { decay: 0.05 },
        epochs: 200,
        batch_size: 32,
        validation_fraction: 0.2,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    /// Jobs per period.
    pub n: usize,
    /// Number of periods.
    #[serde(rename = "T")]
    pub periods: usize,
    /// Base seed; data, resampling and training seeds derive from it.
    pub seed: u64,
    #[serde(default = "default_costs")]
    pub cw_list: Vec<f64>,
    #[serde(default = "default_costs")]
    pub ci_list: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Bootstrap replications for SAA and DRO.
    #[serde(default = "default_reps")]
    pub saa_reps: usize,
    /// Training replications (distinct seeds) for SEO and IEO.
    #[serde(default = "default_train_reps")]
    pub train_reps: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_orders")]
    pub dro_orders: Vec<u32>,
    #[serde(default = "default_grid_points")]
    pub dro_grid_points: usize,
    #[serde(default = "default_train_config")]
    pub train: TrainConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: Family::Normal,
            n: 5,
            periods: 1000,
            seed: 0,
            cw_list: default_costs(),
            ci_list: default_costs(),
            methods: default_methods(),
            saa_reps: default_reps(),
            train_reps: default_train_reps(),
            train_fraction: default_train_fraction(),
            dro_orders: default_orders(),
            dro_grid_points: default_grid_points(),
            train: default_train_config(),
            out: default_out(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.periods == 0 {
            return Err(Error::invalid("T must be positive"));
        }
        if self.cw_list.is_empty() || self.ci_list.is_empty() {
            return Err(Error::invalid("cost grid must be non-empty"));
        }
        for c in self.cw_list.iter().chain(&self.ci_list) {
            if !(c.is_finite() && *c > 0.0) {
                return Err(Error::invalid(format!("cost values must be positive, got {c}")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("method list must be non-empty"));
        }
        if self.saa_reps == 0 || self.train_reps == 0 {
            return Err(Error::invalid("replication counts must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0, 1)"));
        }
        if self.dro_grid_points < 2 || self.dro_orders.is_empty() {
            return Err(Error::invalid("DRO needs at least 2 grid points and one moment order"));
        }
        self.train.validate()
    }

    pub fn cost_grid(&self) -> Vec<CostParams> {
        let mut grid = Vec::new();
        for &cw in &self.cw_list {
            for &ci in &self.ci_list {
                grid.push(CostParams { wait_cost: cw, idle_cost: ci });
            }
        }
        grid
    }

    fn data_seeds(&self) -> (u64, u64) {
        (derive_seed(self.seed, &[1]), derive_seed(self.seed, &[2]))
    }

    fn split_seed(&self) -> u64 {
        derive_seed(self.seed, &[3])
    }
}

/// Maps an error to the CLI's exit status: 2 usage, 3 data, 4 solver.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => 2,
        Error::LengthMismatch { .. } | Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::InfeasibleDistribution(_)
        | Error::NumericalBreakdown(_)
        | Error::NotConverged { .. }
        | Error::TooLarge(_)
        | Error::Unrealizable(_)
        | Error::Diverged { .. } => 4,
    }
}

/// Formats with 6 significant digits, trimming trailing zeros.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = x.abs().log10().floor() as i32;
    let s = if (-5..15).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_sig6(x)).collect::<Vec<_>>().join(";")
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("bad number '{v}': {e}")))).collect()
}

/// Min, lower hinge, median, upper hinge, max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn median_sorted(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

impl FiveNumber {
    /// Tukey's five-number summary; the hinges are medians of the lower and
    /// upper halves, each including the median when the count is odd.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("five-number summary needs finite values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        let half = k.div_ceil(2);
        Ok(FiveNumber {
            min: v[0],
            q1: median_sorted(&v[..half]),
            median: median_sorted(&v),
            q3: median_sorted(&v[k - half..]),
            max: v[k - 1],
        })
    }
}

/// One solved cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: Family,
    pub cw: f64,
    pub ci: f64,
    pub method: Method,
    pub rep: usize,
    /// The method's own objective: SAA value, DRO worst case, or the
    /// training loss of the returned network.
    pub objective: f64,
    /// Mean realised cost on the held-out periods.
    pub evaluated: f64,
    /// Allowances for SAA and DRO; empty for per-period methods.
    pub schedule: Vec<f64>,
}

impl ResultRow {
    fn key(&self) -> (Family, u64, u64, Method, usize) {
        (self.family, self.cw.to_bits(), self.ci.to_bits(), self.method, self.rep)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

const RESULT_HEADER: [&str; 8] = ["family", "cw", "ci", "method", "rep", "objective", "evaluated", "schedule"];

impl ResultTable {
    /// Inserts rows, replacing any with the same key, and keeps the table
    /// sorted by key.
    pub fn merge(&mut self, rows: Vec<ResultRow>) {
        let mut map: BTreeMap<_, ResultRow> = self.rows.drain(..).map(|r| (r.key(), r)).collect();
        for r in rows {
            map.insert(r.key(), r);
        }
        self.rows = map.into_values().collect();
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(RESULT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.family.name().to_string(),
                fmt_sig6(r.cw),
                fmt_sig6(r.ci),
                r.method.name().to_string(),
                r.rep.to_string(),
                fmt_sig6(r.objective),
                fmt_sig6(r.evaluated),
                fmt_list(&r.schedule),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        if rd.headers()?.iter().collect::<Vec<_>>() != RESULT_HEADER {
            return Err(Error::Data(format!("{} is not a results table", path.display())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Data(format!("bad number '{s}': {e}")));
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != RESULT_HEADER.len() {
                return Err(Error::Data("results row has the wrong width".into()));
            }
            rows.push(ResultRow {
                family: rec[0].parse().map_err(|_| Error::Data(format!("unknown family '{}'", &rec[0])))?,
                cw: num(&rec[1])?,
                ci: num(&rec[2])?,
                method: rec[3].parse().map_err(|_| Error::Data(format!("unknown method '{}'", &rec[3])))?,
                rep: rec[4].parse().map_err(|e| Error::Data(format!("bad rep '{}': {e}", &rec[4])))?,
                objective: num(&rec[5])?,
                evaluated: num(&rec[6])?,
                schedule: parse_list(&rec[7])?,
            });
        }
        Ok(ResultTable { rows })
    }

    fn select(&self, family: Family, cw: f64, ci: f64, method: Method) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.family == family && r.cw == cw && r.ci == ci && r.method == method).collect()
    }

    /// Distinct `(family, cw, ci)` groups in key order.
    fn groups(&self) -> Vec<(Family, f64, f64)> {
        let mut out: Vec<(Family, f64, f64)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|&(f, a, b)| f == r.family && a == r.cw && b == r.ci) {
                out.push((r.family, r.cw, r.ci));
            }
        }
        out
    }
}

/// Mean realised cost of `schedules` against `holdout`. A single schedule
/// is applied to every period; otherwise there must be one per period.
pub fn evaluate_schedules(schedules: &[Vec<f64>], holdout: &[Vec<f64>], costs: &CostParams) -> Result<f64> {
    if holdout.is_empty() || schedules.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if schedules.len() != 1 && schedules.len() != holdout.len() {
        return Err(Error::LengthMismatch { expected: holdout.len(), actual: schedules.len() });
    }
    let mut sum = 0.0;
    for (t, p) in holdout.iter().enumerate() {
        let s = if schedules.len() == 1 { &schedules[0] } else { &schedules[t] };
        if s.len() != p.len() {
            return Err(Error::LengthMismatch { expected: p.len(), actual: s.len() });
        }
        sum += total_cost(s, p, costs);
    }
    Ok(sum / holdout.len() as f64)
}

pub fn write_schedules_csv(schedules: &[Vec<f64>], path: &Path) -> Result<()> {
    let n = schedules.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=n).map(|i| format!("s{i}")))?;
    for s in schedules {
        w.write_record(s.iter().map(|&x| fmt_sig6(x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedules_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let row = rec?
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("bad allowance '{v}': {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} holds no schedules", path.display())));
    }
    Ok(out)
}

/// Generates the dataset and writes it with its sidecar. Returns the
/// number of data rows.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<usize> {
    cfg.validate()?;
    let (noise, sample) = cfg.data_seeds();
    let ds = generate(cfg.family, cfg.periods, cfg.n, noise, sample)?;
    std::fs::create_dir_all(&cfg.out)?;
    ds.write(&cfg.out.join(DATASET_FILE))?;
    Ok(ds.records().len())
}

/// One `(method, costs, rep)` unit of work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub costs: CostParams,
    pub rep: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cw={} ci={} rep={}", self.method, self.costs.wait_cost, self.costs.idle_cost, self.rep)
    }
}

/// What a solved cell produces besides its table row.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub row: ResultRow,
    /// Per-period held-out schedules for the feature methods.
    pub period_schedules: Option<PredictedSchedule>,
    pub runtime_ms: f64,
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub outputs: Vec<CellOutput>,
    pub failures: Vec<(Cell, Error)>,
}

/// Solves one scenario-based cell on a bootstrap of the training periods.
/// Returns the objective, the held-out cost and the allowances.
pub fn solve_scenario_cell(cfg: &ExperimentConfig, cell: Cell, train: &ScenarioSet, holdout: &[Vec<f64>]) -> Result<(f64, f64, Vec<f64>)> {
    let resample = train.bootstrap(derive_seed(cfg.seed, &[4, cell.rep as u64]));
    let (objective, schedule) = match cell.method {
        Method::Saa => {
            let r = solve_saa(&resample, &cell.costs, &SaaConfig { exec: Exec::Sequential, ..SaaConfig::default() })?;
            (r.objective, r.schedule.into_inner())
        }
        Method::Dro => {
            let (amb, _, _) = ambiguity_from_scenarios(&resample, &cfg.dro_orders, cfg.dro_grid_points)?;
            let r = solve_dro(&amb, &cell.costs, &DroConfig { exec: Exec::Sequential, ..DroConfig::default() })?;
            (r.worst_case_value, r.schedule.into_inner())
        }
        m => return Err(Error::invalid(format!("{m} is not a scenario method"))),
    };
    let evaluated = evaluate_schedules(std::slice::from_ref(&schedule), holdout, &cell.costs)?;
    Ok((objective, evaluated, schedule))
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell, train: &FeatureDataset, holdout: &FeatureDataset, scenarios: &ScenarioSet) -> Result<CellOutput> {
    let start = Instant::now();
    let actual = holdout.duration_periods();
    let base = ResultRow {
        family: cfg.family,
        cw: cell.costs.wait_cost,
        ci: cell.costs.idle_cost,
        method: cell.method,
        rep: cell.rep,
        objective: 0.0,
        evaluated: 0.0,
        schedule: Vec::new(),
    };
    let (row, period_schedules) = if cell.method.uses_features() {
        let tc = TrainConfig {
            costs: cell.costs,
            seed: derive_seed(cfg.train.seed ^ cfg.seed, &[5, cell.rep as u64]),
            exec: Exec::Sequential,
            ..cfg.train.clone()
        };
        let (pred, outcome) = match cell.method {
            Method::Seo => schedule_seo(train, holdout, &tc)?,
            _ => schedule_ieo(train, holdout, &tc)?,
        };
        let objective = outcome.trace.last().map_or(f64::NAN, |r| r.loss);
        let evaluated = pred.evaluate(&actual, &cell.costs)?;
        (ResultRow { objective, evaluated, ..base }, Some(pred))
    } else {
        let (objective, evaluated, schedule) = solve_scenario_cell(cfg, cell, scenarios, &actual)?;
        (ResultRow { objective, evaluated, schedule, ..base }, None)
    };
    Ok(CellOutput { row, period_schedules, runtime_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Enumerates cells in table order.
pub fn cells(cfg: &ExperimentConfig, methods: &[Method]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in methods {
        let reps = if method.uses_features() { cfg.train_reps } else { cfg.saa_reps };
        for costs in cfg.cost_grid() {
            for rep in 0..reps {
                out.push(Cell { method, costs, rep });
            }
        }
    }
    out
}

/// Splits `ds` by period into training and held-out parts.
pub fn split_dataset(cfg: &ExperimentConfig, ds: &FeatureDataset) -> Result<(FeatureDataset, FeatureDataset)> {
    ds.split(cfg.train_fraction, cfg.split_seed())
}

/// Solves every cell for `methods` on an in-memory dataset. Cells run in
/// parallel under `exec`; the output order is fixed.
pub fn solve_dataset(cfg: &ExperimentConfig, ds: &FeatureDataset, methods: &[Method], exec: Exec) -> Result<SolveOutcome> {
    cfg.validate()?;
    if ds.jobs() != cfg.n {
        return Err(Error::Data(format!("dataset has {} jobs per period, config says {}", ds.jobs(), cfg.n)));
    }
    let (train, holdout) = split_dataset(cfg, ds)?;
    let scenarios = ScenarioSet::new(train.duration_periods(), ScenarioSource::Historical)?;
    let work = cells(cfg, methods);
    let results = exec.map(&work, |&cell| run_cell(cfg, cell, &train, &holdout, &scenarios));
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in work.into_iter().zip(results) {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push((cell, e)),
        }
    }
    Ok(SolveOutcome { outputs, failures })
}

/// Reads the generated dataset, solves the requested methods, merges the
/// rows into the results table and writes the held-out artefacts.
pub fn cmd_solve(cfg: &ExperimentConfig, methods: &[Method], exec: Exec) -> Result<SolveOutcome> {
    let ds = FeatureDataset::read(&cfg.out.join(DATASET_FILE))?;
    let outcome = solve_dataset(cfg, &ds, methods, exec)?;

    let (train, holdout) = split_dataset(cfg, &ds)?;
    train.write(&cfg.out.join(TRAIN_FILE))?;
    holdout.write(&cfg.out.join(HOLDOUT_FILE))?;

    let results_path = cfg.out.join(RESULTS_FILE);
    let mut table = if results_path.exists() { ResultTable::read_csv(&results_path)? } else { ResultTable::default() };
    table.merge(outcome.outputs.iter().map(|o| o.row.clone()).collect());
    table.write_csv(&results_path)?;

    let schedule_dir = cfg.out.join(SCHEDULE_DIR);
    std::fs::create_dir_all(&schedule_dir)?;
    for o in &outcome.outputs {
        let r = &o.row;
        let name = format!("{}_cw{}_ci{}_rep{}.csv", r.method, fmt_sig6(r.cw), fmt_sig6(r.ci), r.rep);
        let rows = match &o.period_schedules {
            Some(p) => p.periods.clone(),
            None => vec![r.schedule.clone()],
        };
        write_schedules_csv(&rows, &schedule_dir.join(name))?;
    }

    let mut w = csv::Writer::from_path(cfg.out.join(RUNTIMES_FILE))?;
    w.write_record(["method", "cw", "ci", "rep", "runtime_ms"])?;
    for o in &outcome.outputs {
        let r = &o.row;
        w.write_record([r.method.name().to_string(), fmt_sig6(r.cw), fmt_sig6(r.ci), r.rep.to_string(), fmt_sig6(o.runtime_ms)])?;
    }
    w.flush()?;
    Ok(outcome)
}

/// Evaluates a schedule file against the held-out periods of a dataset.
pub fn cmd_evaluate(schedule_path: &Path, holdout_path: &Path, costs: &CostParams) -> Result<f64> {
    let schedules = read_schedules_csv(schedule_path)?;
    let holdout = FeatureDataset::read(holdout_path)?;
    evaluate_schedules(&schedules, &holdout.duration_periods(), costs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub family: Family,
    pub cw: f64,
    pub ci: f64,
    pub seo: f64,
    pub ieo: f64,
    /// `1 − ieo/seo`.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub family: Family,
    pub cw: f64,
    pub ci: f64,
    pub method: Method,
    pub reps: usize,
    pub objective: FiveNumber,
    pub evaluated: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllowanceStats {
    pub family: Family,
    pub cw: f64,
    pub ci: f64,
    pub method: Method,
    /// 1-based job index.
    pub job: usize,
    pub stats: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub saa_11: f64,
    pub dro_11: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Median held-out cost of SEO and IEO per cost cell.
    pub feature_matrix: Vec<FeatureComparison>,
    /// Quartiles of SAA and DRO objectives per cost cell.
    pub scenario_stats: Vec<MethodStats>,
    pub allowances: Vec<AllowanceStats>,
    /// Published normal-family values at `(1, 1)`, for orientation only.
    pub reference: Reference,
}

pub fn build_report(table: &ResultTable) -> Result<Report> {
    if table.rows.is_empty() {
        return Err(Error::Data("results table is empty".into()));
    }
    let mut feature_matrix = Vec::new();
    let mut scenario_stats = Vec::new();
    let mut allowances = Vec::new();
    for (family, cw, ci) in table.groups() {
        let seo = table.select(family, cw, ci, Method::Seo);
        let ieo = table.select(family, cw, ci, Method::Ieo);
        if !seo.is_empty() && !ieo.is_empty() {
            let med = |rows: &[&ResultRow]| FiveNumber::of(&rows.iter().map(|r| r.evaluated).collect::<Vec<_>>()).map(|f| f.median);
            let (s, i) = (med(&seo)?, med(&ieo)?);
            feature_matrix.push(FeatureComparison { family, cw, ci, seo: s, ieo: i, improvement: 1.0 - i / s });
        }
        for method in Method::ALL {
            let rows = table.select(family, cw, ci, method);
            if rows.is_empty() {
                continue;
            }
            let objective = FiveNumber::of(&rows.iter().map(|r| r.objective).collect::<Vec<_>>())?;
            let evaluated = FiveNumber::of(&rows.iter().map(|r| r.evaluated).collect::<Vec<_>>())?;
            scenario_stats.push(MethodStats { family, cw, ci, method, reps: rows.len(), objective, evaluated });
            let n = rows[0].schedule.len();
            if n == 0 {
                continue;
            }
            for job in 0..n {
                let column = rows
                    .iter()
                    .map(|r| r.schedule.get(job).copied().ok_or_else(|| Error::Data("ragged schedules in results".into())))
                    .collect::<Result<Vec<f64>>>()?;
                allowances.push(AllowanceStats { family, cw, ci, method, job: job + 1, stats: FiveNumber::of(&column)? });
            }
        }
    }
    Ok(Report {
        feature_matrix,
        scenario_stats,
        allowances,
        reference: Reference { saa_11: REFERENCE_SAA_11, dro_11: REFERENCE_DRO_11 },
    })
}

fn five_fields(f: &FiveNumber) -> [String; 5] {
    [fmt_sig6(f.min), fmt_sig6(f.q1), fmt_sig6(f.median), fmt_sig6(f.q3), fmt_sig6(f.max)]
}

/// Writes `seo_vs_ieo.csv`, `method_stats.csv`, `allowances.csv` and
/// `summary.json` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("seo_vs_ieo.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["family", "cw", "ci", "seo", "ieo", "improvement"])?;
    for r in &report.feature_matrix {
        w.write_record([r.family.name().into(), fmt_sig6(r.cw), fmt_sig6(r.ci), fmt_sig6(r.seo), fmt_sig6(r.ieo), fmt_sig6(r.improvement)])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("method_stats.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["family", "cw", "ci", "method", "reps", "min", "q1", "median", "q3", "max", "evaluated_median"])?;
    for r in &report.scenario_stats {
        let mut rec = vec![r.family.name().to_string(), fmt_sig6(r.cw), fmt_sig6(r.ci), r.method.name().into(), r.reps.to_string()];
        rec.extend(five_fields(&r.objective));
        rec.push(fmt_sig6(r.evaluated.median));
        w.write_record(rec)?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("allowances.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["family", "cw", "ci", "method", "job", "min", "q1", "median", "q3", "max"])?;
    for r in &report.allowances {
        let mut rec = vec![r.family.name().to_string(), fmt_sig6(r.cw), fmt_sig6(r.ci), r.method.name().into(), r.job.to_string()];
        rec.extend(five_fields(&r.stats));
        w.write_record(rec)?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    written.push(path);
    Ok(written)
}

pub fn cmd_report(results_path: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let table = ResultTable::read_csv(results_path)?;
    write_report(&build_report(&table)?, dir)
}
