//! Seeded Monte-Carlo experiments and result persistence.
//!
//! Every trial index maps to one instance seed shared by all detectors and
//! all sweep points of the same dimensions, so detector comparisons are
//! paired and SNR sweeps use common random numbers. Trials may run
//! concurrently; tables are always assembled in trial order.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{zero_forcing, TIE_TOL};
use crate::detector::DetectorRegistry;
use crate::lp::{DUAL_TOL, FEAS_TOL};
use crate::model::{bit_error_rate, generate_instance, substream_seed, GenConfig, RNG_NAME, SNR_CALIBRATION};
use crate::solver::{SolveStatus, SolverOptions};
use crate::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BerSweep,
    RuntimeSweep,
    RatioSweep,
    PhaseGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Complex receive antennas Ñ. Ignored by the phase grid, which derives it from `ratios`.
    pub n_ant: usize,
    /// Complex users K̃, one sweep point each.
    pub k_users: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub detectors: Vec<String>,
    pub solver: SolverOptions,
    /// `None` or 0 uses all cores.
    pub workers: Option<usize>,
    /// N/K values of the phase grid (Ñ = ratio · K̃).
    pub ratios: Vec<usize>,
    /// Average BER over trials whose status is optimal (or heuristic) only.
    pub optimal_only: bool,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::BerSweep,
            n_ant: 18,
            k_users: vec![4],
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            trials: 200,
            seed: 1,
            detectors: vec!["gobmd".into()],
            solver: SolverOptions::default(),
            workers: None,
            ratios: vec![2, 4, 8, 16],
            optimal_only: false,
            out: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, registry: &DetectorRegistry) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::InvalidConfig("detector list is empty".into()));
        }
        for d in &self.detectors {
            registry.get(d)?;
        }
        if self.k_users.is_empty() || self.k_users.contains(&0) {
            return Err(Error::InvalidConfig("k_users must be a non-empty list of positive counts".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snr_db must be a non-empty list of finite values".into()));
        }
        match self.experiment {
            Experiment::PhaseGrid => {
                if self.ratios.is_empty() || self.ratios.contains(&0) {
                    return Err(Error::InvalidConfig("ratios must be a non-empty list of positive values".into()));
                }
            }
            Experiment::RatioSweep => {
                if !self.detectors.iter().any(|d| d == "gobmd") {
                    return Err(Error::InvalidConfig("ratio sweep needs the gobmd detector".into()));
                }
                if self.n_ant == 0 {
                    return Err(Error::InvalidConfig("n_ant must be positive".into()));
                }
            }
            _ => {
                if self.n_ant == 0 {
                    return Err(Error::InvalidConfig("n_ant must be positive".into()));
                }
            }
        }
        self.solver.validate()
    }

    /// Instance seed for a trial; independent of the sweep point.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        substream_seed(self.seed, trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub detector: String,
    pub n_ant: usize,
    pub k_users: usize,
    pub snr_db: f64,
    pub ber: f64,
    pub objective: Option<f64>,
    pub wall_time: f64,
    pub nodes: u64,
    pub cuts: u64,
    pub ratio_s_over_c: f64,
    pub status: SolveStatus,
    /// Detector returned no point; BER taken from zero forcing.
    pub fallback: bool,
    pub oracle_ties: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Null, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter(&self, key: &str, value: &Cell) -> Vec<&[Cell]> {
        let Some(j) = self.column(key) else { return Vec::new() };
        self.rows.iter().filter(|r| &r[j] == value).map(Vec::as_slice).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Copy without the `wall_time*` columns, which are excluded from determinism checks.
    pub fn without_timing(&self) -> ResultTable {
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&j| !self.columns[j].starts_with("wall_time")).collect();
        ResultTable {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows.iter().map(|r| keep.iter().map(|&j| r[j].clone()).collect()).collect(),
        }
    }

    pub fn from_records(records: &[TrialRecord]) -> ResultTable {
        let mut t = ResultTable::new(&[
            "trial", "seed", "detector", "n_ant", "k_users", "snr_db", "ber", "objective", "wall_time", "nodes",
            "cuts", "ratio_s_over_c", "status", "fallback", "oracle_ties",
        ]);
        for r in records {
            t.push(vec![
                r.trial.into(),
                Cell::Text(r.seed.to_string()),
                r.detector.as_str().into(),
                r.n_ant.into(),
                r.k_users.into(),
                r.snr_db.into(),
                r.ber.into(),
                r.objective.into(),
                r.wall_time.into(),
                r.nodes.into(),
                r.cuts.into(),
                r.ratio_s_over_c.into(),
                status_name(r.status).into(),
                Cell::Int(r.fallback as i64),
                r.oracle_ties.into(),
            ]);
        }
        t
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::NodeLimit => "node-limit",
        SolveStatus::TimeLimit => "time-limit",
        SolveStatus::NumericalFailure => "numerical-failure",
        SolveStatus::Heuristic => "heuristic",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub eps_int: f64,
    pub eps_cut: f64,
    pub eps_prune: f64,
    pub lp_feasibility: f64,
    pub lp_dual: f64,
    pub oracle_tie: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub package: String,
    pub version: String,
    pub rng: String,
    pub snr_calibration: String,
    pub tolerances: Tolerances,
}

impl Metadata {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Metadata {
            seed: cfg.seed,
            config: cfg.clone(),
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_NAME.into(),
            snr_calibration: SNR_CALIBRATION.into(),
            tolerances: Tolerances {
                eps_int: cfg.solver.eps_int,
                eps_cut: cfg.solver.eps_cut,
                eps_prune: cfg.solver.eps_prune,
                lp_feasibility: FEAS_TOL,
                lp_dual: DUAL_TOL,
                oracle_tie: TIE_TOL,
            },
        }
    }
}

/// JSON result document: metadata plus the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub metadata: Metadata,
    #[serde(flatten)]
    pub table: ResultTable,
}

impl ResultDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("result document: {e}")))
    }
}

pub fn write_results(table: &ResultTable, meta: &Metadata, path: &Path, format: OutputFormat) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => table.to_csv().into_bytes(),
        OutputFormat::Json => {
            let doc = ResultDocument { metadata: meta.clone(), table: table.clone() };
            let mut s = serde_json::to_string_pretty(&doc).expect("result document serializes");
            s.push('\n');
            s.into_bytes()
        }
    };
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: ResultTable,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    ratio: Option<usize>,
    n_ant: usize,
    k_users: usize,
    snr_db: f64,
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let mut out = Vec::new();
    match cfg.experiment {
        Experiment::PhaseGrid => {
            for &ratio in &cfg.ratios {
                for &k in &cfg.k_users {
                    for &snr in &cfg.snr_db {
                        out.push(Point { ratio: Some(ratio), n_ant: ratio * k, k_users: k, snr_db: snr });
                    }
                }
            }
        }
        _ => {
            for &k in &cfg.k_users {
                for &snr in &cfg.snr_db {
                    out.push(Point { ratio: None, n_ant: cfg.n_ant, k_users: k, snr_db: snr });
                }
            }
        }
    }
    out
}

fn run_point(cfg: &ExperimentConfig, registry: &DetectorRegistry, p: Point) -> Result<Vec<TrialRecord>> {
    let detectors = cfg.detectors.iter().map(|d| registry.get(d)).collect::<Result<Vec<_>>>()?;
    let per_trial = |trial: usize| -> Result<Vec<TrialRecord>> {
        let seed = cfg.trial_seed(trial);
        let inst = generate_instance(&GenConfig { n_antennas: p.n_ant, n_users: p.k_users, snr_db: p.snr_db, seed })?;
        let x_true = inst.x_true.as_ref().expect("generated instances carry x_true");
        let mut recs = Vec::with_capacity(detectors.len());
        for det in &detectors {
            let rep = det.detect(&inst, &cfg.solver)?;
            let (x, fallback) = match &rep.x_star {
                Some(x) => (x.clone(), false),
                None => (zero_forcing(&inst)?, true),
            };
            recs.push(TrialRecord {
                trial,
                seed,
                detector: det.name().to_string(),
                n_ant: p.n_ant,
                k_users: p.k_users,
                snr_db: p.snr_db,
                ber: bit_error_rate(x_true, &x)?,
                objective: rep.objective,
                wall_time: rep.wall_time,
                nodes: rep.nodes_processed,
                cuts: rep.cuts_added,
                ratio_s_over_c: rep.ratio_s_over_c,
                status: rep.status,
                fallback,
                oracle_ties: rep.oracle_ties,
            });
        }
        Ok(recs)
    };
    let per_trial = &per_trial;
    let nested: Vec<Vec<TrialRecord>> = (0..cfg.trials).into_par_iter().map(per_trial).collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn counts_toward_ber(cfg: &ExperimentConfig, r: &TrialRecord) -> bool {
    !cfg.optimal_only || matches!(r.status, SolveStatus::Optimal | SolveStatus::Heuristic)
}

fn summarize(cfg: &ExperimentConfig, pts: &[Point], per_point: &[Vec<TrialRecord>]) -> ResultTable {
    let mut table = match cfg.experiment {
        Experiment::BerSweep => ResultTable::new(&[
            "n_ant", "k_users", "snr_db", "detector", "trials", "mean_ber", "ber_trials", "n_limit", "wall_time_mean",
        ]),
        Experiment::RuntimeSweep => ResultTable::new(&[
            "n_ant", "k_users", "snr_db", "detector", "trials", "wall_time_mean", "wall_time_median", "mean_nodes",
            "n_limit",
        ]),
        Experiment::RatioSweep => ResultTable::new(&[
            "n_ant", "k_users", "snr_db", "detector", "trials", "mean_ratio", "mean_cuts", "n_limit",
        ]),
        Experiment::PhaseGrid => ResultTable::new(&[
            "ratio", "n_ant", "k_users", "snr_db", "detector", "trials", "mean_ber", "ber_trials", "n_limit",
        ]),
    };
    for (p, recs) in pts.iter().zip(per_point) {
        for det in &cfg.detectors {
            let rs: Vec<&TrialRecord> = recs.iter().filter(|r| &r.detector == det).collect();
            let n_limit = rs.iter().filter(|r| r.status.is_limit()).count();
            let ber_set: Vec<f64> = rs.iter().filter(|r| counts_toward_ber(cfg, r)).map(|r| r.ber).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.wall_time).collect();
            let head = vec![p.n_ant.into(), p.k_users.into(), p.snr_db.into(), det.as_str().into(), rs.len().into()];
            let row: Vec<Cell> = match cfg.experiment {
                Experiment::BerSweep => head
                    .into_iter()
                    .chain([mean(ber_set.iter().copied()).into(), ber_set.len().into(), n_limit.into(), mean(times).into()])
                    .collect(),
                Experiment::RuntimeSweep => head
                    .into_iter()
                    .chain([
                        mean(times.iter().copied()).into(),
                        median(&times).into(),
                        mean(rs.iter().map(|r| r.nodes as f64)).into(),
                        n_limit.into(),
                    ])
                    .collect(),
                Experiment::RatioSweep => head
                    .into_iter()
                    .chain([
                        mean(rs.iter().map(|r| r.ratio_s_over_c)).into(),
                        mean(rs.iter().map(|r| r.cuts as f64)).into(),
                        n_limit.into(),
                    ])
                    .collect(),
                Experiment::PhaseGrid => std::iter::once(Cell::from(p.ratio))
                    .chain(head)
                    .chain([mean(ber_set.iter().copied()).into(), ber_set.len().into(), n_limit.into()])
                    .collect(),
            };
            table.push(row);
        }
    }
    table
}

fn run(cfg: &ExperimentConfig, registry: &DetectorRegistry, kind: Experiment) -> Result<ExperimentOutput> {
    if cfg.experiment != kind {
        return Err(Error::InvalidConfig(format!(
            "config describes {:?}, not {:?}",
            cfg.experiment, kind
        )));
    }
    cfg.validate(registry)?;
    let pts = points(cfg);
    let work = || -> Result<Vec<Vec<TrialRecord>>> { pts.iter().map(|&p| run_point(cfg, registry, p)).collect() };
    let per_point = match cfg.workers.filter(|&w| w > 0) {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let summary = summarize(cfg, &pts, &per_point);
    Ok(ExperimentOutput { summary, records: per_point.into_iter().flatten().collect() })
}

/// Mean BER per (K̃, SNR, detector).
pub fn run_ber_sweep(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentOutput> {
    run(cfg, registry, Experiment::BerSweep)
}

/// Mean and median solve time per (K̃, detector).
pub fn run_runtime_sweep(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentOutput> {
    run(cfg, registry, Experiment::RuntimeSweep)
}

/// Mean terminal `|S|/|C|` per K̃.
pub fn run_ratio_sweep(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentOutput> {
    run(cfg, registry, Experiment::RatioSweep)
}

/// Mean BER over the (N/K, SNR) grid.
pub fn run_phase_grid(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentOutput> {
    run(cfg, registry, Experiment::PhaseGrid)
}

pub fn run_experiment(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentOutput> {
    run(cfg, registry, cfg.experiment)
}
