//! Counterfactual regression under the adversarial moment criterion: the
//! outcome network, the bridge, their losses and the alternating training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::decompose::{lld_total_loss, mi_total_loss};
use crate::error::{Error, Result};
use crate::model::{Batch, DsivModel, Group, ModelMode, OutcomeNet, ReprOutputs};
use crate::nn::{AdamConfig, AdamState, Mlp, NnError};
use crate::rng::{substream, Rng};
use crate::simgen::PanelDataset;
use crate::tensor::{no_grad, Tensor, TensorError};

/// `Ŷ` at every position from per-position inputs `[a_{k+1}, c_k]`, `[n, T]`.
pub fn predict_outcomes(net: &OutcomeNet, a: &Tensor, c: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
    let (sa, sc) = (a.shape(), c.shape());
    if sa.len() != 3 || sc.len() != 3 || sa[..2] != sc[..2] {
        return Err(Error::Config(format!(
            "treatments {sa:?} and confounders {sc:?} are not time-aligned"
        )));
    }
    let h = net
        .encoder
        .forward(&Tensor::concat(&[a.clone(), c.clone()], 2)?, training, rng)?;
    Ok(net.head.forward(&h)?.reshape(&sa[..2])?)
}

/// Mean squared residual over every cell.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if pred.shape() != truth.shape() {
        return Err(Error::Contract(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(pred.sub(truth)?.square().mean_all())
}

/// `M = f([Ā, C̄, Z])`, one weight per `(unit, position)`.
pub fn bridge_weights(f: &Mlp, a_hist: &Tensor, c_rep: &Tensor, z_rep: &Tensor) -> Result<Tensor> {
    let x = Tensor::concat(&[a_hist.clone(), c_rep.clone(), z_rep.clone()], 2)
        .map_err(|e| Error::Config(format!("bridge inputs: {e}")))?;
    let d = x.shape().to_vec();
    if d[2] != f.in_dim() {
        return Err(Error::Config(format!(
            "bridge expects width {}, got {}",
            f.in_dim(),
            d[2]
        )));
    }
    Ok(f.forward(&x)?.reshape(&d[..2])?)
}

/// `(h_view, f_view)`: the moment `mean(M·r)` seen by the outcome network with
/// `M` fixed, and the negated regularized moment `−[mean(M·r) − c·mean(M²)]`
/// seen by the bridge with `r` fixed.
pub fn adversarial_loss(m: &Tensor, residuals: &Tensor, regularizer: f64) -> Result<(Tensor, Tensor)> {
    if m.shape() != residuals.shape() {
        return Err(Error::Contract(format!(
            "weights {:?} vs residuals {:?}",
            m.shape(),
            residuals.shape()
        )));
    }
    if !(regularizer >= 0.0) {
        return Err(Error::Config(format!("regularizer {regularizer} must be non-negative")));
    }
    let h_view = m.detach().mul(residuals)?.mean_all();
    let moment = m.mul(&residuals.detach())?.mean_all();
    let f_view = moment.sub(&m.square().mean_all().scale(regularizer))?.neg();
    Ok((h_view, f_view))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub mse: f64,
    pub mi: f64,
    pub adv: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// `mse + α·mi + β·adv`; a zero weight drops its term from the graph.
pub fn overall_loss(mse: &Tensor, mi: &Tensor, adv: &Tensor, alpha: f64, beta: f64) -> Result<(Tensor, LossBundle)> {
    if !(alpha >= 0.0 && alpha.is_finite() && beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "loss weights must be non-negative, got α={alpha} β={beta}"
        )));
    }
    let mut total = mse.clone();
    if alpha > 0.0 {
        total = total.add(&mi.scale(alpha))?;
    }
    if beta > 0.0 {
        total = total.add(&adv.scale(beta))?;
    }
    let bundle = LossBundle {
        mse: mse.item(),
        mi: mi.item(),
        adv: adv.item(),
        total: total.item(),
        alpha,
        beta,
    };
    Ok((total, bundle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    /// Outer iterations; each one draws a minibatch of units.
    pub iterations: usize,
    /// Inner rounds for the variational heads and for the bridge.
    pub inner_rounds: usize,
    pub batch_size: usize,
    /// Weight `c` of the bridge penalty `c·mean(M²)`.
    pub regularizer: f64,
    pub clip_norm: Option<f64>,
    /// RBF kernel width of the pair weights.
    pub sigma: f64,
    /// Validation cadence in outer iterations; the last iteration is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.1,
            lr: 1e-3,
            iterations: 200,
            inner_rounds: 3,
            batch_size: 256,
            regularizer: 0.25,
            clip_norm: Some(5.0),
            sigma: 1.0,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("alpha and beta must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if !(self.regularizer >= 0.0 && self.regularizer.is_finite()) {
            return bad("regularizer must be non-negative");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mse: f64,
    pub mi: f64,
    pub adv: f64,
    pub total: f64,
    /// Last variational-head loss of the inner rounds.
    pub lld: Option<f64>,
    /// Last bridge objective of the inner rounds.
    pub bridge: Option<f64>,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub records: Vec<IterationRecord>,
    pub best_iteration: Option<usize>,
    pub best_val_mse: Option<f64>,
}

impl TrainReport {
    /// One aligned line per outer iteration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "iter", "mse", "mi", "adv", "lld", "val_mse"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>12} {:>12}",
                r.iteration,
                r.mse,
                r.mi,
                r.adv,
                opt(r.lld),
                opt(r.val_mse)
            );
        }
        if let (Some(i), Some(v)) = (self.best_iteration, self.best_val_mse) {
            let _ = writeln!(s, "best iteration {i}: val_mse {v:.6}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn val_trace(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_mse.map(|v| (r.iteration, v)))
            .collect()
    }
}

/// Optimizer state and random streams for the three alternating phases.
pub struct Trainer<'m> {
    pub model: &'m DsivModel,
    pub config: TrainConfig,
    main: AdamState,
    heads: AdamState,
    bridge: AdamState,
    shuffle: Rng,
    dropout: Rng,
    order: Vec<usize>,
    cursor: usize,
}

/// Non-finite values met while training are reported as divergence at `iteration`.
fn diverged(iteration: usize, e: Error) -> Error {
    let what = match &e {
        Error::Nn(NnError::NonFiniteGradient(name)) => format!("non-finite gradient in {name}"),
        Error::Tensor(t @ TensorError::Domain { .. }) | Error::Nn(NnError::Tensor(t @ TensorError::Domain { .. })) => {
            t.to_string()
        }
        _ => return e,
    };
    Error::Divergence { iteration, what }
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m DsivModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = config.adam();
        Ok(Trainer {
            model,
            main: AdamState::new(adam.clone(), &model.params(Group::Main)),
            heads: AdamState::new(adam.clone(), &model.params(Group::Heads)),
            bridge: AdamState::new(adam, &model.params(Group::Bridge)),
            shuffle: substream(config.seed, "shuffle"),
            dropout: substream(config.seed, "dropout"),
            order: Vec::new(),
            cursor: 0,
            config,
        })
    }

    /// Next minibatch of units, walking a fresh permutation per epoch. Decision
    /// batches give each unit a random window start.
    pub fn next_batch(&mut self, train: &PanelDataset) -> Result<Batch> {
        let size = self.config.batch_size.min(train.n);
        if self.order.len() != train.n || self.cursor + size > train.n {
            self.order = (0..train.n).collect();
            self.order.shuffle(&mut self.shuffle);
            self.cursor = 0;
        }
        let units = &self.order[self.cursor..self.cursor + size];
        self.cursor += size;
        let std = &self.model.standardizer;
        match self.model.config.mode {
            ModelMode::OneStep => Batch::one_step(train, units, std),
            ModelMode::Decision => {
                let tau = self.model.config.tau;
                if train.len <= tau {
                    return Err(Error::Config(format!(
                        "{} rows cannot hold a window of {tau}",
                        train.len
                    )));
                }
                let starts: Vec<usize> = units
                    .iter()
                    .map(|_| self.shuffle.random_range(1..=train.len - tau))
                    .collect();
                Batch::decision_starts(train, units, std, &starts, tau)
            }
        }
    }

    /// Phase 1: one step of `mse + α·mi + β·h_view` on `ψ, φ_Z, φ_C, h`.
    pub fn main_step(&mut self, batch: &Batch, iteration: usize) -> Result<LossBundle> {
        let m = self.model;
        let cfg = &self.config;
        let repr = m.represent(batch, true, &mut self.dropout)?;
        let pred = m.predict(batch, &repr, true, &mut self.dropout)?;
        let mse = mse_loss(&pred, &batch.targets()?)?;
        let mi = if cfg.alpha > 0.0 {
            mi_total_loss(m, batch, &repr, cfg.sigma)?
        } else {
            Tensor::scalar(0.0)
        };
        let adv = if cfg.beta > 0.0 {
            let weights = no_grad(|| m.bridge_weights(batch, &repr.detach()))?;
            adversarial_loss(&weights, &pred.sub(&batch.targets()?)?, cfg.regularizer)?.0
        } else {
            Tensor::scalar(0.0)
        };
        let (total, bundle) = overall_loss(&mse, &mi, &adv, cfg.alpha, cfg.beta)?;
        if !bundle.total.is_finite() {
            return Err(Error::Divergence {
                iteration,
                what: format!("total loss {}", bundle.total),
            });
        }
        total.backward()?;
        self.main
            .step(&m.params(Group::Main))
            .map_err(|e| diverged(iteration, e.into()))?;
        Ok(bundle)
    }

    /// Representations and residuals under the current parameters, outside the graph.
    pub fn frozen_view(&mut self, batch: &Batch) -> Result<(ReprOutputs, Tensor)> {
        let m = self.model;
        no_grad(|| {
            let repr = m.represent(batch, false, &mut self.dropout)?;
            let r = m
                .predict(batch, &repr, false, &mut self.dropout)?
                .sub(&batch.targets()?)?;
            Ok((repr, r))
        })
    }

    /// Phase 2: `R` steps of `L_LLD` on the variational heads.
    pub fn variational_rounds(&mut self, batch: &Batch, repr: &ReprOutputs, iteration: usize) -> Result<Option<f64>> {
        let params = self.model.params(Group::Heads);
        let mut last = None;
        for _ in 0..self.config.inner_rounds {
            let loss = lld_total_loss(self.model, batch, repr)?;
            if !loss.item().is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    what: format!("variational loss {}", loss.item()),
                });
            }
            loss.backward()?;
            self.heads.step(&params).map_err(|e| diverged(iteration, e.into()))?;
            last = Some(loss.item());
        }
        Ok(last)
    }

    /// Phase 3: `R` steps of the bridge objective `f_view`.
    pub fn bridge_rounds(
        &mut self,
        batch: &Batch,
        repr: &ReprOutputs,
        residuals: &Tensor,
        iteration: usize,
    ) -> Result<Option<f64>> {
        let params = self.model.params(Group::Bridge);
        let (a, c, z) = self.model.bridge_inputs(batch, repr)?;
        let mut last = None;
        for _ in 0..self.config.inner_rounds {
            let weights = bridge_weights(&self.model.bridge, &a, &c, &z)?;
            let (_, f_view) = adversarial_loss(&weights, residuals, self.config.regularizer)?;
            if !f_view.item().is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    what: format!("bridge loss {}", f_view.item()),
                });
            }
            f_view.backward()?;
            self.bridge.step(&params).map_err(|e| diverged(iteration, e.into()))?;
            last = Some(f_view.item());
        }
        Ok(last)
    }

    /// One outer iteration: the main step, then the head and bridge rounds when
    /// their loss weight is positive.
    pub fn iteration(&mut self, train: &PanelDataset, iteration: usize) -> Result<IterationRecord> {
        let batch = self.next_batch(train)?;
        let bundle = self.main_step(&batch, iteration)?;
        let (mut lld, mut bridge) = (None, None);
        if self.config.alpha > 0.0 || self.config.beta > 0.0 {
            let (repr, r) = self.frozen_view(&batch)?;
            if self.config.alpha > 0.0 {
                lld = self.variational_rounds(&batch, &repr, iteration)?;
            }
            if self.config.beta > 0.0 {
                bridge = self.bridge_rounds(&batch, &repr, &r, iteration)?;
            }
        }
        Ok(IterationRecord {
            iteration,
            mse: bundle.mse,
            mi: bundle.mi,
            adv: bundle.adv,
            total: bundle.total,
            lld,
            bridge,
            val_mse: None,
        })
    }
}

const EVAL_CHUNK: usize = 256;

/// Mean squared error in the original outcome scale over every supervised
/// cell: all positions in one-step mode, the terminal outcome of the last
/// window in decision mode.
pub fn validation_mse(model: &DsivModel, data: &PanelDataset) -> Result<f64> {
    if data.n == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if data.x_dim != model.config.x_dim || data.a_dim != model.config.a_dim {
        return Err(Error::Config(format!(
            "data has x_dim {} a_dim {}, model expects {} and {}",
            data.x_dim, data.a_dim, model.config.x_dim, model.config.a_dim
        )));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    let units: Vec<usize> = (0..data.n).collect();
    for chunk in units.chunks(EVAL_CHUNK) {
        let batch = eval_batch(model, data, chunk)?;
        let pred = model.predict_original_scale(&batch)?;
        let truth = original_targets(model, &batch)?;
        sum += pred.iter().zip(&truth).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
        count += pred.len();
    }
    Ok(sum / count as f64)
}

pub(crate) fn eval_batch(model: &DsivModel, data: &PanelDataset, units: &[usize]) -> Result<Batch> {
    match model.config.mode {
        ModelMode::OneStep => Batch::one_step(data, units, &model.standardizer),
        ModelMode::Decision => {
            let tau = model.config.tau;
            if data.len <= tau {
                return Err(Error::Config(format!(
                    "{} rows cannot hold a window of {tau}",
                    data.len
                )));
            }
            Batch::decision(data, units, &model.standardizer, data.len - tau, tau)
        }
    }
}

pub(crate) fn original_targets(model: &DsivModel, batch: &Batch) -> Result<Vec<f64>> {
    Ok(batch
        .targets()?
        .to_vec()
        .into_iter()
        .map(|v| model.standardizer.y_inverse(v))
        .collect())
}

/// Alternating training with validation-based selection; the best validated
/// parameters are restored before returning.
pub fn fit(model: &DsivModel, train: &PanelDataset, val: &PanelDataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if val.n == 0 || train.n == 0 {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    for (name, d) in [("train", train), ("val", val)] {
        if d.x_dim != model.config.x_dim || d.a_dim != model.config.a_dim {
            return Err(Error::Config(format!(
                "{name} data has x_dim {} a_dim {}, model expects {} and {}",
                d.x_dim, d.a_dim, model.config.x_dim, model.config.a_dim
            )));
        }
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut report = TrainReport {
        config: config.clone(),
        records: Vec::with_capacity(config.iterations),
        best_iteration: None,
        best_val_mse: None,
    };
    let mut best: Option<Vec<Vec<f64>>> = None;
    for k in 1..=config.iterations {
        let mut rec = trainer.iteration(train, k).map_err(|e| diverged(k, e))?;
        if k % config.eval_every == 0 || k == config.iterations {
            let v = validation_mse(model, val)?;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    iteration: k,
                    what: format!("validation mse {v}"),
                });
            }
            rec.val_mse = Some(v);
            if report.best_val_mse.is_none_or(|b| v < b) {
                report.best_val_mse = Some(v);
                report.best_iteration = Some(k);
                best = Some(model.snapshot());
            }
        }
        report.records.push(rec);
    }
    if let Some(snap) = best {
        model.restore(&snap)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
