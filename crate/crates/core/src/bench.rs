//! Evaluation harness: multi-seed one-step error, the α/β sweep, and
//! plan selection with oracle regret.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfr::{fit, mse_loss, original_targets, predict_outcomes, validation_mse, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::model::{Batch, DsivModel, ModelMode, ModelSettings};
use crate::rng::{fnv1a, substream};
use crate::simgen::{
    argmax_first, candidate_bit, generate_decision_dataset, generate_simulation, GenConfig, OracleDecisionSet,
    PanelDataset,
};
use crate::tensor::{no_grad, Tensor};

/// Largest decision window whose `2^tau` plans are enumerated.
pub const MAX_TAU: usize = 20;

/// One-step error in the original outcome scale over every `(unit, position)` cell.
pub fn evaluate_one_step(model: &DsivModel, test: &PanelDataset) -> Result<f64> {
    if model.config.mode != ModelMode::OneStep {
        return Err(Error::Config("one-step evaluation needs a one-step model".into()));
    }
    validation_mse(model, test)
}

/// Predictions and truths for `evaluate_one_step`, flattened unit-major.
pub fn one_step_predictions(model: &DsivModel, test: &PanelDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let units: Vec<usize> = (0..test.n).collect();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for chunk in units.chunks(256) {
        let batch = Batch::one_step(test, chunk, &model.standardizer)?;
        pred.extend(model.predict_original_scale(&batch)?);
        truth.extend(original_targets(model, &batch)?);
    }
    Ok((pred, truth))
}

/// `mse_loss` over the de-normalized predictions, for cross-checking.
pub fn one_step_mse_via_loss(model: &DsivModel, test: &PanelDataset) -> Result<f64> {
    let (p, y) = one_step_predictions(model, test)?;
    let n = p.len();
    Ok(mse_loss(&Tensor::new(p, &[n])?, &Tensor::new(y, &[n])?)?.item())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    /// Test MSE per completed seed, aligned with `seeds`.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); zero for one seed.
    pub std: f64,
    pub fingerprint: String,
    pub complete: bool,
    /// Seeds whose training diverged, with the reason.
    pub failures: Vec<(u64, String)>,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_runs(seeds: Vec<u64>, per_seed: Vec<f64>, fingerprint: String, failures: Vec<(u64, String)>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        EvalReport {
            seeds,
            per_seed,
            mean,
            std,
            fingerprint,
            complete: failures.is_empty(),
            failures,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "MSE = {:.6} ± {:.6} ({} seeds)",
            self.mean,
            self.std,
            self.per_seed.len()
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} {:>14}", "seed", "test_mse");
        for (seed, v) in self.seeds.iter().zip(&self.per_seed) {
            let _ = writeln!(s, "{seed:>8} {v:>14.6}");
        }
        for (seed, why) in &self.failures {
            let _ = writeln!(s, "{seed:>8} {:>14}  {why}", "diverged");
        }
        let _ = writeln!(s, "{}", self.summary());
        s
    }
}

/// Data, architecture and training settings for one one-step run per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub gen: GenConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Experiment {
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("experiment serializes");
        format!("{:016x}", fnv1a(&text))
    }

    /// Copy with every random stream moved to `seed`; the outcome coefficients stay fixed.
    pub fn with_seed(&self, seed: u64) -> Experiment {
        let mut e = self.clone();
        e.gen.seed = seed;
        e.train.seed = seed;
        e
    }
}

#[derive(Debug, Clone)]
pub struct OneStepRun {
    pub model: DsivModel,
    pub report: TrainReport,
    pub test_mse: f64,
}

/// Generate, train and evaluate once; `seed` drives data, initialization and training.
pub fn run_one_step(exp: &Experiment, seed: u64) -> Result<OneStepRun> {
    let e = exp.with_seed(seed);
    let data = generate_simulation(&e.gen)?;
    let config = e.model.for_data(&data.train, ModelMode::OneStep, e.gen.tau);
    let model = DsivModel::init(config, &data.train, seed)?;
    let report = fit(&model, &data.train, &data.val, &e.train)?;
    let test_mse = evaluate_one_step(&model, &data.test)?;
    Ok(OneStepRun {
        model,
        report,
        test_mse,
    })
}

/// Test MSE per seed keyed by `(alpha bits, beta bits, seed)`, so runs can be shared.
pub type RunCache = BTreeMap<(u64, u64, u64), f64>;

fn cached_run(exp: &Experiment, seed: u64, cache: &mut RunCache) -> Result<f64> {
    let key = (exp.train.alpha.to_bits(), exp.train.beta.to_bits(), seed);
    if let Some(v) = cache.get(&key) {
        return Ok(*v);
    }
    let v = run_one_step(exp, seed)?.test_mse;
    cache.insert(key, v);
    Ok(v)
}

pub fn multi_seed(exp: &Experiment, seeds: &[u64]) -> Result<EvalReport> {
    multi_seed_cached(exp, seeds, &mut RunCache::new())
}

/// One run per seed; a diverged seed is recorded and leaves the report incomplete.
pub fn multi_seed_cached(exp: &Experiment, seeds: &[u64], cache: &mut RunCache) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let (mut done, mut values, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in seeds {
        match cached_run(exp, seed, cache) {
            Ok(v) => {
                done.push(seed);
                values.push(v);
            }
            Err(Error::Divergence { iteration, what }) => {
                failures.push((seed, format!("diverged at iteration {iteration}: {what}")));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport::from_runs(done, values, exp.fingerprint(), failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major over `alphas`, then `betas`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, alpha: f64, beta: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.beta == beta)
    }

    /// Cell with the lowest mean; the first one wins ties.
    pub fn argmin(&self) -> &SweepCell {
        self.cells
            .iter()
            .fold(None::<&SweepCell>, |best, c| match best {
                Some(b) if b.report.mean <= c.report.mean => Some(b),
                _ => Some(c),
            })
            .expect("grid is non-empty")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,beta,mean,std,seeds,complete\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{:.10e},{:.10e},{},{}",
                c.alpha,
                c.beta,
                c.report.mean,
                c.report.std,
                c.report.per_seed.len(),
                c.report.complete
            );
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>8}", "α \\ β");
        for b in &self.betas {
            let _ = write!(s, " {b:>10}");
        }
        s.push('\n');
        for a in &self.alphas {
            let _ = write!(s, "{a:>8}");
            for b in &self.betas {
                let m = self.cell(*a, *b).map_or(f64::NAN, |c| c.report.mean);
                let _ = write!(s, " {m:>10.5}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn sweep(alphas: &[f64], betas: &[f64], base: &Experiment, seeds: &[u64]) -> Result<SweepGrid> {
    sweep_cached(alphas, betas, base, seeds, &mut RunCache::new())
}

pub fn sweep_cached(
    alphas: &[f64],
    betas: &[f64],
    base: &Experiment,
    seeds: &[u64],
    cache: &mut RunCache,
) -> Result<SweepGrid> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mut cells = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let mut exp = base.clone();
            exp.train.alpha = alpha;
            exp.train.beta = beta;
            cells.push(SweepCell {
                alpha,
                beta,
                report: multi_seed_cached(&exp, seeds, cache)?,
            });
        }
    }
    Ok(SweepGrid {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub unit: usize,
    /// Index of the chosen plan; bit `tau − 1 − i` is the treatment at window offset `i`.
    pub plan: usize,
    pub predicted: f64,
    /// Predicted terminal outcome of every plan, in plan order.
    pub candidates: Vec<f64>,
}

impl Decision {
    pub fn sequence(&self, tau: usize) -> Vec<u8> {
        (0..tau).map(|i| candidate_bit(self.plan, i, tau) as u8).collect()
    }
}

/// Scores every `2^tau` plan for each unit of `history` (rows before `start`
/// observed) and keeps the highest predicted terminal outcome, ties to the
/// smallest plan index. Representations do not see the window's treatments,
/// so they are computed once per unit.
pub fn decide_sequence(model: &DsivModel, history: &PanelDataset, start: usize, tau: usize) -> Result<Vec<Decision>> {
    if tau > MAX_TAU {
        return Err(Error::Config(format!(
            "tau {tau} exceeds the enumeration limit {MAX_TAU}"
        )));
    }
    if model.config.mode != ModelMode::Decision || model.config.tau != tau {
        return Err(Error::Config(format!(
            "plan selection over {tau} steps needs a decision model with that window, got {:?} with tau {}",
            model.config.mode, model.config.tau
        )));
    }
    let plans = 1usize << tau;
    let units: Vec<usize> = (0..history.n).collect();
    let mut out = Vec::with_capacity(history.n);
    let mut rng = substream(0, "dropout");
    for chunk in units.chunks(256) {
        let batch = Batch::decision(history, chunk, &model.standardizer, start, tau)?;
        let scores: Vec<Vec<f64>> = no_grad(|| -> Result<Vec<Vec<f64>>> {
            let repr = model.represent(&batch, false, &mut rng)?;
            (0..plans)
                .map(|b| {
                    let plan: Vec<f64> = (0..tau).map(|i| candidate_bit(b, i, tau)).collect();
                    let pb = batch.with_plan(&plan)?;
                    let y = predict_outcomes(&model.outcome, &pb.a_next, &repr.c, false, &mut rng)?;
                    let last = batch.at_terminal(&y)?.to_vec();
                    Ok(last.into_iter().map(|v| model.standardizer.y_inverse(v)).collect())
                })
                .collect()
        })?;
        for (i, &unit) in chunk.iter().enumerate() {
            let candidates: Vec<f64> = scores.iter().map(|s| s[i]).collect();
            let (plan, predicted) = argmax_first(&candidates);
            out.push(Decision {
                unit,
                plan,
                predicted,
                candidates,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretStats {
    pub regrets: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl RegretStats {
    pub fn from_regrets(regrets: Vec<f64>) -> Self {
        let (avg, std) = mean_std(&regrets);
        RegretStats {
            min: regrets.iter().cloned().fold(f64::INFINITY, f64::min),
            max: regrets.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            avg,
            std,
            regrets,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "regret avg {:.4} std {:.4} min {:.4} max {:.4} ({} units)",
            self.avg,
            self.std,
            self.min,
            self.max,
            self.regrets.len()
        )
    }
}

/// Oracle value minus the true outcome of each chosen plan (table lookup).
pub fn oracle_regret(chosen: &[usize], oracle: &OracleDecisionSet) -> Result<RegretStats> {
    if chosen.len() != oracle.n() {
        return Err(Error::Contract(format!(
            "{} decisions for {} units",
            chosen.len(),
            oracle.n()
        )));
    }
    let regrets = chosen
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            oracle.outcomes[i]
                .get(b)
                .map(|y| oracle.oracle[i] - y)
                .ok_or_else(|| Error::Contract(format!("plan {b} is not in the table of unit {i}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RegretStats::from_regrets(regrets))
}

/// Exact expected regret of a uniformly random plan, per unit.
pub fn random_policy_regrets(oracle: &OracleDecisionSet) -> Vec<f64> {
    oracle
        .outcomes
        .iter()
        .zip(&oracle.oracle)
        .map(|(row, best)| best - row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

pub fn random_policy_regret(oracle: &OracleDecisionSet) -> f64 {
    let r = random_policy_regrets(oracle);
    r.iter().sum::<f64>() / r.len() as f64
}

/// Per-unit decision table: chosen plan, prediction and, with an oracle, regret.
pub fn decisions_csv(decisions: &[Decision], tau: usize, oracle: Option<&OracleDecisionSet>) -> String {
    let mut s = String::from("unit,plan,sequence,predicted");
    if oracle.is_some() {
        s.push_str(",achieved,oracle,regret");
    }
    s.push('\n');
    for d in decisions {
        let seq: String = d.sequence(tau).iter().map(|b| char::from(b'0' + b)).collect();
        let _ = write!(s, "{},{},{},{:.10e}", d.unit, d.plan, seq, d.predicted);
        if let Some(o) = oracle {
            let achieved = o.outcomes[d.unit][d.plan];
            let _ = write!(
                s,
                ",{:.10e},{:.10e},{:.10e}",
                achieved,
                o.oracle[d.unit],
                o.oracle[d.unit] - achieved
            );
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct DecisionRun {
    pub model: DsivModel,
    pub report: TrainReport,
    pub decisions: Vec<Decision>,
    pub regret: RegretStats,
    pub random_regret: f64,
}

/// Train a terminal-outcome model on the decision generator and score its plans.
pub fn run_decision(exp: &Experiment, seed: u64) -> Result<DecisionRun> {
    let e = exp.with_seed(seed);
    let data = generate_decision_dataset(&e.gen)?;
    let config = e.model.for_data(&data.train, ModelMode::Decision, e.gen.tau);
    let model = DsivModel::init(config, &data.train, seed)?;
    let report = fit(&model, &data.train, &data.val, &e.train)?;
    let decisions = decide_sequence(&model, &data.test.history, data.test.start, data.test.tau)?;
    let chosen: Vec<usize> = decisions.iter().map(|d| d.plan).collect();
    let regret = oracle_regret(&chosen, &data.test)?;
    Ok(DecisionRun {
        model,
        report,
        decisions,
        regret,
        random_regret: random_policy_regret(&data.test),
    })
}
