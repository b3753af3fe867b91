//! Analyst loop under a budget controller.
//!
//! Every iteration the analyst asks for all records at a fixed per-query ε.
//! The ledger grants the records that can still afford it, the analyst runs
//! a task on the granted records, and the trace records how many were out
//! of budget. A run stops after the configured number of iterations or
//! right after an iteration in which nothing was granted.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learners::{accuracy, kfold_split, rmse, Matrix};
use crate::ledger::{assign_personalized, BudgetLedger, Capacities, LedgerMode};
use crate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Gold,
    Lr,
    Svr,
    Mlp,
}

impl ScoreSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Gold => "gold",
            ScoreSource::Lr => "lr",
            ScoreSource::Svr => "svr",
            ScoreSource::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    /// One budget shared by the whole dataset.
    Global { capacity: f64 },
    /// Independent uniform capacities in `[lo, hi]`.
    Random { lo: f64, hi: f64, seed: u64 },
    /// Capacities from concern scores through the affine budget map.
    FromScores { source: ScoreSource, b_min: f64, b_max: f64 },
}

pub const DEFAULT_GLOBAL_CAPACITY: f64 = 3.0;
pub const DEFAULT_B_MIN: f64 = 1.0;
pub const DEFAULT_B_MAX: f64 = 5.0;

impl Controller {
    pub fn gold() -> Self {
        Controller::FromScores {
            source: ScoreSource::Gold,
            b_min: DEFAULT_B_MIN,
            b_max: DEFAULT_B_MAX,
        }
    }

    /// Controller for a command-line name, with default parameters.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        let scores = |source| Controller::FromScores {
            source,
            b_min: DEFAULT_B_MIN,
            b_max: DEFAULT_B_MAX,
        };
        Ok(match name {
            "global" => Controller::Global {
                capacity: DEFAULT_GLOBAL_CAPACITY,
            },
            "random" => Controller::Random {
                lo: DEFAULT_B_MIN,
                hi: DEFAULT_B_MAX,
                seed,
            },
            "gold" => scores(ScoreSource::Gold),
            "lr" => scores(ScoreSource::Lr),
            "svr" => scores(ScoreSource::Svr),
            "mlp" => scores(ScoreSource::Mlp),
            other => {
                return Err(invalid(format!(
                    "unknown controller `{other}` (expected global, random, gold, lr, svr or mlp)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::Global { .. } => "global",
            Controller::Random { .. } => "random",
            Controller::FromScores { source, .. } => source.as_str(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Controller::Global { capacity } => capacity >= 0.0 && capacity.is_finite(),
            Controller::Random { lo, hi, .. } => lo >= 0.0 && lo <= hi && hi.is_finite(),
            Controller::FromScores { b_min, b_max, .. } => b_min >= 0.0 && b_min <= b_max && b_max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid controller parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// k-fold linear SVM accuracy on the binary extraversion label.
    Classification,
    /// k-fold ridge RMSE on the gold concern score.
    Regression,
}

impl Task {
    pub fn metric(self) -> &'static str {
        match self {
            Task::Classification => "accuracy",
            Task::Regression => "rmse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps_per_query: f64,
    pub iterations: usize,
    pub task: Task,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            eps_per_query: 0.15,
            iterations: 30,
            task: Task::Classification,
            folds: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_per_query > 0.0 && self.eps_per_query.is_finite()) || self.iterations == 0 || self.folds < 2 {
            return Err(invalid(format!(
                "need eps_per_query > 0, iterations >= 1, folds >= 2 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Records the analyst can query, with everything the controllers and tasks
/// need. Learned scores are attached per source once a model has produced
/// them.
#[derive(Debug, Clone)]
pub struct SimData {
    ids: Vec<String>,
    gold_r: Vec<f64>,
    ext: Vec<bool>,
    gram: DMatrix<f64>,
    scores: BTreeMap<ScoreSource, Vec<f64>>,
}

impl SimData {
    pub fn new(ids: Vec<String>, x: &Matrix, gold_r: Vec<f64>, ext: Vec<bool>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(invalid("simulation needs at least one record"));
        }
        if x.rows() != n || gold_r.len() != n || ext.len() != n {
            return Err(invalid("ids, features, gold scores and labels differ in length"));
        }
        let gram = DMatrix::from_fn(n, n, |i, j| x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum());
        let mut scores = BTreeMap::new();
        scores.insert(ScoreSource::Gold, gold_r.clone());
        Ok(Self {
            ids,
            gold_r,
            ext,
            gram,
            scores,
        })
    }

    pub fn with_scores(mut self, source: ScoreSource, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.ids.len() {
            return Err(invalid(format!(
                "{} scores for {} records",
                scores.len(),
                self.ids.len()
            )));
        }
        self.scores.insert(source, scores);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn gold(&self) -> &[f64] {
        &self.gold_r
    }

    pub fn scores(&self, source: ScoreSource) -> Result<&[f64]> {
        self.scores
            .get(&source)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UntrainedModel(source.as_str().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub iteration: usize,
    pub oobudget_count: usize,
    pub oobudget_ratio: f64,
    pub available: usize,
    pub utility_metric: String,
    pub utility_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub controller: String,
    pub records: usize,
    pub rows: Vec<SimRow>,
}

impl SimTrace {
    pub fn counts(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.oobudget_count).collect()
    }
}

/// A finished run with its ledger and the iteration at which each record
/// was first denied.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace: SimTrace,
    pub ledger: BudgetLedger,
    pub exhausted_at: BTreeMap<String, usize>,
}

fn build_ledger(data: &SimData, controller: &Controller) -> Result<BudgetLedger> {
    controller.validate()?;
    match *controller {
        Controller::Global { capacity } => {
            BudgetLedger::new(LedgerMode::Global, &data.ids, &Capacities::Uniform(capacity))
        }
        Controller::Random { lo, hi, seed } => {
            let mut rng = rng_from_seed(seed);
            let caps = data
                .ids
                .iter()
                .map(|id| (id.clone(), if lo == hi { lo } else { rng.random_range(lo..=hi) }))
                .collect();
            BudgetLedger::new(LedgerMode::PerRecord, &data.ids, &Capacities::PerRecord(caps))
        }
        Controller::FromScores { source, b_min, b_max } => {
            let scores = data.scores(source)?;
            let map: BTreeMap<String, f64> = data
                .ids
                .iter()
                .zip(scores)
                .map(|(id, &r)| (id.clone(), r.clamp(0.0, 1.0)))
                .collect();
            let caps = assign_personalized(&map, b_min, b_max)?;
            BudgetLedger::new(LedgerMode::PerRecord, &data.ids, &Capacities::PerRecord(caps))
        }
    }
}

const RIDGE_LAMBDA: f64 = 0.1;
const SVM_LAMBDA: f64 = 0.01;
const SVM_EPOCHS: usize = 20;

fn sub_gram(gram: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| gram[(rows[i], cols[j])])
}

/// Kernel ridge regression with a linear kernel, centred target.
fn ridge_predict(gram: &DMatrix<f64>, y: &[f64], train: &[usize], test: &[usize]) -> Vec<f64> {
    let mean = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
    let k = sub_gram(gram, train, train) + DMatrix::identity(train.len(), train.len()) * RIDGE_LAMBDA;
    let t = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i] - mean));
    let alpha = k.cholesky().expect("ridge system is positive definite").solve(&t);
    let cross = sub_gram(gram, test, train);
    (cross * alpha).iter().map(|v| v + mean).collect()
}

/// Kernelized Pegasos for a linear SVM with a bias folded into the kernel
/// (`k(a, b) = a·b + 1`). A single-class training fold predicts that class.
fn svm_predict(gram: &DMatrix<f64>, y: &[bool], train: &[usize], test: &[usize], seed: u64) -> Vec<bool> {
    if train.iter().all(|&i| y[i]) || train.iter().all(|&i| !y[i]) {
        return vec![y[train[0]]; test.len()];
    }
    let sign = |i: usize| if y[i] { 1.0 } else { -1.0 };
    let kern = |a: usize, b: usize| gram[(a, b)] + 1.0;
    let mut rng = rng_from_seed(seed);
    let mut alpha = vec![0.0; train.len()];
    let steps = SVM_EPOCHS * train.len();
    for t in 1..=steps {
        let p = rng.random_range(0..train.len());
        let i = train[p];
        let f: f64 = train
            .iter()
            .zip(&alpha)
            .filter(|(_, a)| **a != 0.0)
            .map(|(&j, a)| a * sign(j) * kern(j, i))
            .sum();
        if sign(i) * f / (SVM_LAMBDA * t as f64) < 1.0 {
            alpha[p] += 1.0;
        }
    }
    test.iter()
        .map(|&x| {
            let f: f64 = train.iter().zip(&alpha).map(|(&j, a)| a * sign(j) * kern(j, x)).sum();
            f > 0.0
        })
        .collect()
}

fn utility(data: &SimData, granted: &[usize], cfg: &SimConfig, iteration: usize) -> Result<f64> {
    if granted.len() < cfg.folds {
        return Ok(0.0);
    }
    let seed = cfg.seed.wrapping_add(iteration as u64);
    let folds = kfold_split(granted.len(), cfg.folds, seed)?;
    let mut total = 0.0;
    for (f, fold) in folds.iter().enumerate() {
        let test: Vec<usize> = fold.iter().map(|&p| granted[p]).collect();
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, p)| p.iter().map(|&q| granted[q]))
            .collect();
        total += match cfg.task {
            Task::Regression => {
                let pred = ridge_predict(&data.gram, &data.gold_r, &train, &test);
                let truth: Vec<f64> = test.iter().map(|&i| data.gold_r[i]).collect();
                rmse(&truth, &pred)?
            }
            Task::Classification => {
                let pred = svm_predict(&data.gram, &data.ext, &train, &test, seed);
                let truth: Vec<usize> = test.iter().map(|&i| usize::from(data.ext[i])).collect();
                let pred: Vec<usize> = pred.into_iter().map(usize::from).collect();
                accuracy(&truth, &pred)?
            }
        };
    }
    Ok(total / folds.len() as f64)
}

pub fn run_simulation(data: &SimData, controller: &Controller, cfg: &SimConfig) -> Result<SimTrace> {
    Ok(run_simulation_detailed(data, controller, cfg)?.trace)
}

pub fn run_simulation_detailed(data: &SimData, controller: &Controller, cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let mut ledger = build_ledger(data, controller)?;
    let index: BTreeMap<&str, usize> = data.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let n = data.len();
    let mut rows = Vec::new();
    let mut exhausted_at = BTreeMap::new();

    for iteration in 1..=cfg.iterations {
        let outcome = ledger.charge(&data.ids, cfg.eps_per_query)?;
        for id in &outcome.denied {
            exhausted_at.entry(id.clone()).or_insert(iteration);
        }
        let granted: Vec<usize> = outcome.granted.iter().map(|id| index[id.as_str()]).collect();
        let oob = n - granted.len();
        rows.push(SimRow {
            iteration,
            oobudget_count: oob,
            oobudget_ratio: oob as f64 / n as f64,
            available: granted.len(),
            utility_metric: cfg.task.metric().to_string(),
            utility_value: utility(data, &granted, cfg, iteration)?,
        });
        if granted.is_empty() {
            break;
        }
    }
    Ok(SimRun {
        trace: SimTrace {
            controller: controller.name().to_string(),
            records: n,
            rows,
        },
        ledger,
        exhausted_at,
    })
}

/// Out-of-budget count at a 1-based iteration. A trace that ended early
/// keeps its last count, since a finished run stays exhausted.
fn count_at(trace: &SimTrace, iteration: usize) -> Result<f64> {
    let last = trace
        .rows
        .last()
        .ok_or_else(|| invalid(format!("trace `{}` is empty", trace.controller)))?;
    Ok(trace
        .rows
        .get(iteration - 1)
        .map_or(last.oobudget_count, |r| r.oobudget_count) as f64)
}

/// RMSE between the out-of-budget count sequences over every iteration
/// either trace reached.
pub fn curve_distance(a: &SimTrace, b: &SimTrace) -> Result<f64> {
    let len = a.rows.len().max(b.rows.len());
    curve_distance_window(a, b, 1, len.max(1))
}

/// [`curve_distance`] restricted to iterations `from..=to` (1-based).
pub fn curve_distance_window(a: &SimTrace, b: &SimTrace, from: usize, to: usize) -> Result<f64> {
    if from == 0 || from > to {
        return Err(invalid(format!("bad iteration window {from}..={to}")));
    }
    let mut sum = 0.0;
    for it in from..=to {
        sum += (count_at(a, it)? - count_at(b, it)?).powi(2);
    }
    Ok((sum / (to - from + 1) as f64).sqrt())
}

/// Iterations compared in the distance table.
pub const DISTANCE_WINDOW: (usize, usize) = (23, 30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub controller: Controller,
    pub name: String,
    pub trace: SimTrace,
    pub distance_to_gold: f64,
    pub window_distance_to_gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: SimConfig,
    pub window: (usize, usize),
    pub gold: SimTrace,
    pub controllers: Vec<ControllerReport>,
}

/// Runs every controller on its own ledger and measures each against the
/// gold-score controller.
pub fn compare_controllers(data: &SimData, controllers: &[Controller], cfg: &SimConfig) -> Result<ComparisonReport> {
    let gold = run_simulation(data, &Controller::gold(), cfg)?;
    let (from, to) = DISTANCE_WINDOW;
    let controllers = controllers
        .iter()
        .map(|c| {
            let trace = run_simulation(data, c, cfg)?;
            Ok(ControllerReport {
                controller: *c,
                name: c.name().to_string(),
                distance_to_gold: curve_distance(&trace, &gold)?,
                window_distance_to_gold: curve_distance_window(&trace, &gold, from, to)?,
                trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        config: *cfg,
        window: DISTANCE_WINDOW,
        gold,
        controllers,
    })
}

pub const TRACE_HEADER: [&str; 7] = [
    "controller",
    "iteration",
    "oobudget_count",
    "oobudget_ratio",
    "available",
    "utility_metric",
    "utility_value",
];

pub fn write_traces<'a>(traces: impl IntoIterator<Item = &'a SimTrace>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for t in traces {
        for r in &t.rows {
            w.write_record([
                t.controller.clone(),
                r.iteration.to_string(),
                r.oobudget_count.to_string(),
                r.oobudget_ratio.to_string(),
                r.available.to_string(),
                r.utility_metric.clone(),
                r.utility_value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Out-of-budget counts per controller over the distance window, followed
/// by a `distance` row with each controller's windowed RMSE to gold.
pub fn write_distance_table(report: &ComparisonReport, out: impl Write) -> Result<()> {
    // The reference column already holds the default gold controller.
    let shown: Vec<&ControllerReport> = report
        .controllers
        .iter()
        .filter(|c| c.controller != Controller::gold())
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "gold".to_string()];
    header.extend(shown.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    let (from, to) = report.window;
    for it in from..=to {
        let mut row = vec![it.to_string(), count_at(&report.gold, it)?.to_string()];
        for c in &shown {
            row.push(count_at(&c.trace, it)?.to_string());
        }
        w.write_record(&row)?;
    }
    let mut row = vec!["distance".to_string(), "0".to_string()];
    row.extend(shown.iter().map(|c| format!("{:.3}", c.window_distance_to_gold)));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}
