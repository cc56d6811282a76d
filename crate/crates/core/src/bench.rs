//! Strategy comparison under an equal full-scale iteration budget, the
//! reported statistics, and the surrogate data-efficiency sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};
use crate::io::{write_records, write_rows, Provenance};
use crate::ocp::ControlBox;
use crate::optim::StepRule;
use crate::pwr::PwrModel;
use crate::surrogate::{train_with, Checkpoint, PhysicsPrior, Sequence, SurrogateConfig, SurrogateNet};
use crate::warmstart::{
    cold_start, refine_full, sdo_warmstart, shift_init, BcNet, BudgetCalibration, Perturbation, PwrSequenceCost,
    Scenario,
};

/// `(J_cold - J_strat) / J_cold`; `None` when the cold objective is not
/// positive.
pub fn delta_j_rel(j_cold: f64, j_strat: f64) -> Option<f64> {
    if j_cold > 0.0 && j_cold.is_finite() && j_strat.is_finite() {
        Some((j_cold - j_strat) / j_cold)
    } else {
        None
    }
}

/// Mean violation norm and fraction of strictly positive norms.
pub fn violation_stats(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let positive = values.iter().filter(|v| **v > 0.0).count() as f64;
    (mean, positive / n)
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub worst: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            worst: values.iter().copied().fold(f64::INFINITY, f64::min),
            q25: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q75: quantile(values, 0.75)?,
            count: values.len(),
        })
    }
}

/// Average ranks (ties share their mean rank).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Cold,
    Shift,
    Bc,
    Sdo { fraction: f64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Cold => write!(f, "cold"),
            Strategy::Shift => write!(f, "shift"),
            Strategy::Bc => write!(f, "bc"),
            Strategy::Sdo { fraction } => write!(f, "sdo_{}pct", (fraction * 100.0).round()),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = SdoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Strategy::Cold),
            "shift" => Ok(Strategy::Shift),
            "bc" => Ok(Strategy::Bc),
            other => {
                let pct = other
                    .strip_prefix("sdo_")
                    .and_then(|r| r.strip_suffix("pct"))
                    .and_then(|r| r.parse::<f64>().ok());
                match pct {
                    Some(p) if p > 0.0 && p < 100.0 => Ok(Strategy::Sdo { fraction: p / 100.0 }),
                    _ => Err(SdoError::Config(format!(
                        "unknown strategy `{other}` (expected cold, shift, bc or sdo_<percent>pct)"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Full-scale iterations given to every strategy (taken from the run's
    /// optimization budget).
    #[serde(skip)]
    pub iterations: usize,
    #[serde(skip)]
    pub record_at: Vec<usize>,
    pub violation_at: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub nu_surrogate: f64,
    pub full_rule: StepRule,
    pub surrogate_rule: StepRule,
    /// Surrogate iterations per SDO fraction; measured from wall times when absent.
    pub sdo_iterations: Option<BTreeMap<String, usize>>,
    pub calibration_reps: usize,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            record_at: vec![0, 5, 10, 15, 20],
            violation_at: vec![0, 5, 10],
            strategies: vec![
                Strategy::Cold,
                Strategy::Shift,
                Strategy::Bc,
                Strategy::Sdo { fraction: 0.01 },
                Strategy::Sdo { fraction: 0.05 },
            ],
            nu_surrogate: 10.0,
            full_rule: StepRule::default(),
            surrogate_rule: StepRule::default(),
            sdo_iterations: None,
            calibration_reps: 5,
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Some(n) = self.record_at.iter().chain(&self.violation_at).find(|&&n| n > self.iterations) {
            errs.push(format!("recorded iteration {n} exceeds the budget of {}", self.iterations));
        }
        if !self.strategies.contains(&Strategy::Cold) {
            errs.push("the cold strategy is required as the reference".into());
        }
        for s in &self.strategies {
            if let Strategy::Sdo { fraction } = s {
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    errs.push(format!("SDO fraction {fraction} outside (0, 1)"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }
}

/// One scenario × strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: usize,
    pub perturbation: Perturbation,
    pub strategy: String,
    /// Penalized objective at every iteration `0..=iterations`.
    pub j_pen: Vec<f64>,
    pub cost: Vec<f64>,
    pub violation: Vec<f64>,
    pub surrogate_iterations: usize,
    pub simulator_calls: u64,
    pub init_wall_s: f64,
    pub refine_wall_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub scenario: usize,
    pub perturbation: Perturbation,
    pub strategy: String,
    pub n: usize,
    pub j_pen: f64,
    pub j_pen_cold: f64,
    pub delta_j_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: String,
    pub perturbation: Perturbation,
    pub n: usize,
    pub worst: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub strategy: String,
    pub n: usize,
    /// Mean horizon-summed violation, in AO units × 10⁴.
    pub mean_e4: f64,
    pub probability: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub calibration: Option<BudgetCalibration>,
    pub sdo_iterations: BTreeMap<String, usize>,
    pub cells: Vec<CellResult>,
    pub deltas: Vec<DeltaRow>,
    pub aggregates: Vec<AggregateRow>,
    pub violations: Vec<ViolationRow>,
    pub dropped: Vec<String>,
}

impl BenchReport {
    pub fn deltas_for(&self, strategy: &str, perturbation: Option<Perturbation>, n: usize) -> Vec<f64> {
        self.deltas
            .iter()
            .filter(|d| d.strategy == strategy && d.n == n && perturbation.map_or(true, |p| d.perturbation == p))
            .map(|d| d.delta_j_rel)
            .collect()
    }

    pub fn aggregate(&self, strategy: &str, perturbation: Perturbation, n: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.strategy == strategy && a.perturbation == perturbation && a.n == n)
    }

    pub fn violation(&self, strategy: &str, n: usize) -> Option<&ViolationRow> {
        self.violations.iter().find(|v| v.strategy == strategy && v.n == n)
    }

    /// Per-scenario ΔJ rows.
    pub fn write_deltas_csv(&self, path: &Path, prov: Option<&Provenance>) -> Result<()> {
        write_rows(path, &self.deltas, prov)
    }

    /// Table-shaped aggregate: one row per (statistic, strategy), one column
    /// per (n, perturbation).
    pub fn write_aggregate_csv(&self, path: &Path, ns: &[usize], prov: Option<&Provenance>) -> Result<()> {
        let kinds = [Perturbation::LoadChange, Perturbation::CostChange];
        let mut header = vec!["statistic".to_string(), "strategy".to_string()];
        for &n in ns {
            for k in kinds {
                header.push(format!("n{n}_{}", kind_name(k)));
            }
        }
        let mut records = vec![header];
        let mut strategies: Vec<&str> = Vec::new();
        for a in &self.aggregates {
            if !strategies.contains(&a.strategy.as_str()) {
                strategies.push(&a.strategy);
            }
        }
        for (stat, pick) in [
            ("worst", (|a: &AggregateRow| a.worst) as fn(&AggregateRow) -> f64),
            ("q25", |a| a.q25),
            ("median", |a| a.median),
            ("q75", |a| a.q75),
        ] {
            for s in &strategies {
                let mut row = vec![stat.to_string(), s.to_string()];
                for &n in ns {
                    for k in kinds {
                        row.push(self.aggregate(s, k, n).map(|a| format!("{:.6}", pick(a))).unwrap_or_default());
                    }
                }
                records.push(row);
            }
        }
        write_records(path, &records, prov)
    }

    pub fn write_violations_csv(&self, path: &Path, prov: Option<&Provenance>) -> Result<()> {
        write_rows(path, &self.violations, prov)
    }

    /// Wall times and call counts; kept apart from the deterministic outputs.
    pub fn write_timing_csv(&self, path: &Path, prov: Option<&Provenance>) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            scenario: usize,
            strategy: &'a str,
            surrogate_iterations: usize,
            simulator_calls: u64,
            init_wall_s: f64,
            refine_wall_s: f64,
            error: &'a str,
        }
        let rows: Vec<Row> = self
            .cells
            .iter()
            .map(|c| Row {
                scenario: c.scenario,
                strategy: &c.strategy,
                surrogate_iterations: c.surrogate_iterations,
                simulator_calls: c.simulator_calls,
                init_wall_s: c.init_wall_s,
                refine_wall_s: c.refine_wall_s,
                error: c.error.as_deref().unwrap_or(""),
            })
            .collect();
        write_rows(path, &rows, prov)
    }
}

fn kind_name(k: Perturbation) -> &'static str {
    match k {
        Perturbation::LoadChange => "load_change",
        Perturbation::CostChange => "cost_change",
    }
}

/// Artifacts a strategy may need.
#[derive(Clone, Copy, Default)]
pub struct Artifacts<'a> {
    pub surrogate: Option<&'a SurrogateNet>,
    pub bc: Option<&'a BcNet>,
}

/// Initial controls of one strategy (before full-scale refinement).
pub fn warm_start(
    strategy: Strategy,
    scenario: &Scenario,
    bx: ControlBox,
    artifacts: Artifacts<'_>,
    sdo_iters: usize,
    cfg: &BenchConfig,
    n_z: usize,
) -> Result<Vec<f64>> {
    let n = scenario.spec.horizon;
    Ok(match strategy {
        Strategy::Cold => cold_start(n).into_inner(),
        Strategy::Shift => shift_init(&scenario.prev_solution, &bx).into_inner(),
        Strategy::Bc => artifacts
            .bc
            .ok_or_else(|| SdoError::Config("bc strategy requested without a behaviour-cloning net".into()))?
            .predict(scenario)?
            .into_inner(),
        Strategy::Sdo { .. } => {
            let net = artifacts
                .surrogate
                .ok_or_else(|| SdoError::Config("sdo strategy requested without a surrogate".into()))?;
            let context = scenario.context(net.context())?;
            let cost = PwrSequenceCost {
                spec: scenario.spec.clone(),
                n_z,
                nu: cfg.nu_surrogate,
            };
            sdo_warmstart(net, &cost, &context, &scenario.w, bx, sdo_iters, &cfg.surrogate_rule)
                .u
                .into_inner()
        }
    })
}

/// Runs one strategy on one scenario: warm start, then `cfg.iterations`
/// full-scale iterations. Simulator calls are counted on a private counter.
pub fn run_cell(
    model: &PwrModel,
    scenario: &Scenario,
    strategy: Strategy,
    artifacts: Artifacts<'_>,
    sdo_iters: usize,
    cfg: &BenchConfig,
) -> CellResult {
    let model = model.detached();
    let bx = ControlBox::from_params(model.params());
    let mut cell = CellResult {
        scenario: scenario.id,
        perturbation: scenario.perturbation,
        strategy: strategy.to_string(),
        j_pen: Vec::new(),
        cost: Vec::new(),
        violation: Vec::new(),
        surrogate_iterations: if matches!(strategy, Strategy::Sdo { .. }) { sdo_iters } else { 0 },
        simulator_calls: 0,
        init_wall_s: 0.0,
        refine_wall_s: 0.0,
        error: None,
    };
    let t = Instant::now();
    let u0 = match warm_start(strategy, scenario, bx, artifacts, sdo_iters, cfg, model.n_z()) {
        Ok(u) => u,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    cell.init_wall_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    match refine_full(
        &model,
        &u0,
        scenario.x0(),
        &scenario.w,
        &scenario.spec,
        cfg.iterations,
        &cfg.full_rule,
        cfg.threads,
    ) {
        Ok(r) => {
            cell.j_pen = r.trace.rows.iter().map(|r| r.penalized).collect();
            cell.cost = r.trace.rows.iter().map(|r| r.cost).collect();
            cell.violation = r.trace.rows.iter().map(|r| r.violation).collect();
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell.refine_wall_s = t.elapsed().as_secs_f64();
    cell.simulator_calls = model.counter().get();
    cell
}

/// Surrogate iterations per SDO strategy: pinned values from the config, or
/// a wall-time calibration on the first scenario.
pub fn resolve_sdo_iterations(
    model: &PwrModel,
    suite: &[Scenario],
    artifacts: Artifacts<'_>,
    cfg: &BenchConfig,
) -> Result<(BTreeMap<String, usize>, Option<BudgetCalibration>)> {
    let sdo: Vec<Strategy> = cfg.strategies.iter().copied().filter(|s| matches!(s, Strategy::Sdo { .. })).collect();
    let mut out = BTreeMap::new();
    if sdo.is_empty() {
        return Ok((out, None));
    }
    if let Some(pinned) = &cfg.sdo_iterations {
        for s in &sdo {
            let name = s.to_string();
            let it = pinned
                .get(&name)
                .ok_or_else(|| SdoError::Config(format!("sdo_iterations has no entry for `{name}`")))?;
            out.insert(name, *it);
        }
        return Ok((out, None));
    }
    let net = artifacts
        .surrogate
        .ok_or_else(|| SdoError::Config("sdo strategy requested without a surrogate".into()))?;
    let first = suite.first().ok_or_else(|| SdoError::Config("empty scenario suite".into()))?;
    let cal = BudgetCalibration::measure(&model.detached(), net, first, cfg.nu_surrogate, cfg.calibration_reps)?;
    for s in &sdo {
        if let Strategy::Sdo { fraction } = s {
            out.insert(s.to_string(), cal.iterations(*fraction, cfg.iterations));
        }
    }
    log::info!(
        "budget calibration: full iteration {:.3} ms, surrogate iteration {:.3} ms, iterations {:?}",
        cal.full_iter_s * 1e3,
        cal.surrogate_iter_s * 1e3,
        out
    );
    Ok((out, Some(cal)))
}

pub fn run_benchmark(model: &PwrModel, suite: &[Scenario], artifacts: Artifacts<'_>, cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    for s in suite {
        s.validate()?;
    }
    let (sdo_iterations, calibration) = resolve_sdo_iterations(model, suite, artifacts, cfg)?;
    let mut cells = Vec::new();
    for scenario in suite {
        for &strategy in &cfg.strategies {
            let iters = sdo_iterations.get(&strategy.to_string()).copied().unwrap_or(0);
            let cell = run_cell(model, scenario, strategy, artifacts, iters, cfg);
            if let Some(e) = &cell.error {
                log::warn!("scenario {} / {}: {e}", scenario.id, cell.strategy);
            }
            cells.push(cell);
        }
    }
    Ok(assemble_report(cells, cfg, sdo_iterations, calibration))
}

/// Builds ΔJ rows, aggregates and violation statistics from raw cells.
pub fn assemble_report(
    cells: Vec<CellResult>,
    cfg: &BenchConfig,
    sdo_iterations: BTreeMap<String, usize>,
    calibration: Option<BudgetCalibration>,
) -> BenchReport {
    let mut deltas = Vec::new();
    let mut dropped = Vec::new();
    let cold_name = Strategy::Cold.to_string();
    let strategies: Vec<String> = cfg.strategies.iter().map(|s| s.to_string()).collect();
    let ok = |c: &CellResult| c.error.is_none() && c.j_pen.len() > cfg.iterations;
    let mut scenario_ids: Vec<usize> = cells.iter().map(|c| c.scenario).collect();
    scenario_ids.dedup();
    for &sid in &scenario_ids {
        let Some(cold) = cells.iter().find(|c| c.scenario == sid && c.strategy == cold_name && ok(c)) else {
            dropped.push(format!("scenario {sid}: cold reference missing"));
            continue;
        };
        for c in cells.iter().filter(|c| c.scenario == sid && ok(c)) {
            for &n in &cfg.record_at {
                match delta_j_rel(cold.j_pen[n], c.j_pen[n]) {
                    Some(d) => deltas.push(DeltaRow {
                        scenario: sid,
                        perturbation: c.perturbation,
                        strategy: c.strategy.clone(),
                        n,
                        j_pen: c.j_pen[n],
                        j_pen_cold: cold.j_pen[n],
                        delta_j_rel: d,
                    }),
                    None => dropped.push(format!(
                        "scenario {sid}, {} at n={n}: cold objective {} is not positive",
                        c.strategy, cold.j_pen[n]
                    )),
                }
            }
        }
    }
    let mut aggregates = Vec::new();
    for s in &strategies {
        for kind in [Perturbation::LoadChange, Perturbation::CostChange] {
            for &n in &cfg.record_at {
                let v: Vec<f64> = deltas
                    .iter()
                    .filter(|d| &d.strategy == s && d.perturbation == kind && d.n == n)
                    .map(|d| d.delta_j_rel)
                    .collect();
                if let Some(sm) = Summary::of(&v) {
                    aggregates.push(AggregateRow {
                        strategy: s.clone(),
                        perturbation: kind,
                        n,
                        worst: sm.worst,
                        q25: sm.q25,
                        median: sm.median,
                        q75: sm.q75,
                        count: sm.count,
                    });
                }
            }
        }
    }
    let mut violations = Vec::new();
    for s in &strategies {
        for &n in &cfg.violation_at {
            let v: Vec<f64> = cells.iter().filter(|c| &c.strategy == s && ok(c)).map(|c| c.violation[n]).collect();
            let (mean, prob) = violation_stats(&v);
            violations.push(ViolationRow {
                strategy: s.clone(),
                n,
                mean_e4: mean * 1e4,
                probability: prob,
                count: v.len(),
            });
        }
    }
    BenchReport {
        calibration,
        sdo_iterations,
        cells,
        deltas,
        aggregates,
        violations,
        dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    /// Epochs at which the best snapshot so far is benchmarked.
    pub checkpoints: Vec<usize>,
    pub sdo_fraction: f64,
    /// ΔJ is read at this refinement iteration.
    pub n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.1, 0.3, 1.0],
            checkpoints: vec![1, 2, 5, 10, 20, 50, 100, 150],
            sdo_fraction: 0.05,
            n: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub epoch: usize,
    /// Validation rollout MSE of the benchmarked snapshot.
    pub val_mse: f64,
    pub median_delta: f64,
    pub q25_delta: f64,
    pub q75_delta: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sdo_iterations: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn final_row(&self, fraction: f64) -> Option<&SweepRow> {
        self.rows.iter().filter(|r| r.fraction == fraction).last()
    }

    /// Spearman correlation between validation MSE and median ΔJ along the
    /// checkpoints of one fraction.
    pub fn spearman(&self, fraction: f64) -> Option<f64> {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.fraction == fraction).collect();
        let mse: Vec<f64> = rows.iter().map(|r| r.val_mse).collect();
        let dj: Vec<f64> = rows.iter().map(|r| r.median_delta).collect();
        spearman(&mse, &dj)
    }

    pub fn write_csv(&self, path: &Path, prov: Option<&Provenance>) -> Result<()> {
        write_rows(path, &self.rows, prov)
    }
}

/// Trains one surrogate per data fraction (same seed and configuration) and
/// benchmarks the best snapshot at each checkpoint epoch. Only the SDO
/// strategy is refined; the cold reference is computed once.
pub fn data_efficiency_sweep(
    model: &PwrModel,
    data: &[Sequence],
    surrogate: &SurrogateConfig,
    prior: Option<&PhysicsPrior>,
    suite: &[Scenario],
    bench: &BenchConfig,
    sweep: &SweepConfig,
    sdo_iterations: usize,
) -> Result<SweepReport> {
    if sweep.fractions.is_empty() || sweep.checkpoints.is_empty() {
        return Err(SdoError::Config("sweep needs fractions and checkpoints".into()));
    }
    let bench = BenchConfig {
        iterations: sweep.n,
        record_at: vec![sweep.n],
        violation_at: vec![],
        strategies: vec![Strategy::Cold, Strategy::Sdo { fraction: sweep.sdo_fraction }],
        ..bench.clone()
    };
    let cold: Vec<CellResult> = suite
        .iter()
        .map(|s| run_cell(model, s, Strategy::Cold, Artifacts::default(), 0, &bench))
        .collect();
    let last_checkpoint = *sweep.checkpoints.iter().max().expect("non-empty");
    let mut rows = Vec::new();
    for &fraction in &sweep.fractions {
        let take = ((data.len() as f64 * fraction).round() as usize).clamp(2, data.len());
        let subset = &data[..take];
        let cfg = SurrogateConfig {
            max_epochs: surrogate.max_epochs.min(last_checkpoint),
            ..surrogate.clone()
        };
        let mut failure = None;
        let mut last_epoch = 0;
        let mut last_best: Option<(SurrogateNet, f64)> = None;
        let mut evaluate = |net: &SurrogateNet, epoch: usize, val: f64| -> Result<()> {
            let mut cells = cold.clone();
            for s in suite {
                cells.push(run_cell(
                    model,
                    s,
                    Strategy::Sdo { fraction: sweep.sdo_fraction },
                    Artifacts {
                        surrogate: Some(net),
                        bc: None,
                    },
                    sdo_iterations,
                    &bench,
                ));
            }
            let report = assemble_report(cells, &bench, BTreeMap::new(), None);
            let name = Strategy::Sdo { fraction: sweep.sdo_fraction }.to_string();
            let d = report.deltas_for(&name, None, sweep.n);
            let sm = Summary::of(&d).ok_or_else(|| SdoError::Dataset("no ΔJ values at checkpoint".into()))?;
            rows.push(SweepRow {
                fraction,
                epoch,
                val_mse: val,
                median_delta: sm.median,
                q25_delta: sm.q25,
                q75_delta: sm.q75,
                count: sm.count,
            });
            Ok(())
        };
        let result = train_with(subset, &cfg, prior, |cp: Checkpoint<'_>| {
            last_epoch = cp.record.epoch;
            last_best = Some((cp.best.clone(), cp.record.best_val_rollout_mse));
            if sweep.checkpoints.contains(&cp.record.epoch) {
                if let Err(e) = evaluate(cp.best, cp.record.epoch, cp.record.best_val_rollout_mse) {
                    failure = Some(e);
                    return false;
                }
            }
            true
        });
        if let Err(e) = result {
            log::warn!("sweep fraction {fraction}: training failed: {e}");
            continue;
        }
        if let Some(e) = failure {
            log::warn!("sweep fraction {fraction}: evaluation failed: {e}");
            continue;
        }
        // early stopping may end before the last checkpoint: benchmark the final snapshot
        if !sweep.checkpoints.contains(&last_epoch) {
            if let Some((net, val)) = last_best {
                if let Err(e) = evaluate(&net, last_epoch, val) {
                    log::warn!("sweep fraction {fraction}: evaluation failed: {e}");
                }
            }
        }
    }
    Ok(SweepReport { sdo_iterations, rows })
}
