//! The full network: history encoder `ψ`, representation maps `φ_Z`, `φ_C`,
//! five variational heads, the outcome transformer `h` and the bridge `f`,
//! plus batch assembly and the checkpoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfr::{bridge_weights, predict_outcomes};
use crate::decompose::{TargetKind, VariationalHead};
use crate::error::{Error, Result};
use crate::nn::{join, EncoderConfig, Linear, Mlp, Module, NamedParams, TransformerEncoder};
use crate::rng::{substream, Rng};
use crate::simgen::{PanelDataset, TreatmentKind};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    /// Predict `Y_{t+1}` at every position.
    OneStep,
    /// Predict the terminal outcome of a `tau`-step treatment block.
    Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub x_dim: usize,
    pub a_dim: usize,
    pub treatment: TreatmentKind,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub outcome_layers: usize,
    pub dropout: f64,
    pub z_dim: usize,
    pub c_dim: usize,
    /// Hidden width of `φ_Z`, `φ_C`, the variational heads and the bridge.
    pub hidden: usize,
    pub mode: ModelMode,
    pub tau: usize,
}

/// Architecture choices independent of the data dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub outcome_layers: usize,
    pub dropout: f64,
    pub z_dim: usize,
    pub c_dim: usize,
    pub hidden: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            model_dim: 32,
            heads: 4,
            ff_dim: 64,
            layers: 2,
            outcome_layers: 2,
            dropout: 0.1,
            z_dim: 8,
            c_dim: 16,
            hidden: 32,
        }
    }
}

impl ModelSettings {
    pub fn config(
        &self,
        x_dim: usize,
        a_dim: usize,
        treatment: TreatmentKind,
        mode: ModelMode,
        tau: usize,
    ) -> ModelConfig {
        ModelConfig {
            x_dim,
            a_dim,
            treatment,
            model_dim: self.model_dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            layers: self.layers,
            outcome_layers: self.outcome_layers,
            dropout: self.dropout,
            z_dim: self.z_dim,
            c_dim: self.c_dim,
            hidden: self.hidden,
            mode,
            tau,
        }
    }

    pub fn for_data(&self, data: &PanelDataset, mode: ModelMode, tau: usize) -> ModelConfig {
        self.config(data.x_dim, data.a_dim, data.treatment, mode, tau)
    }
}

impl ModelConfig {
    /// Default architecture in one-step mode.
    pub fn new(x_dim: usize, a_dim: usize, treatment: TreatmentKind) -> Self {
        ModelSettings::default().config(x_dim, a_dim, treatment, ModelMode::OneStep, 5)
    }

    /// Per-row encoder token: `[x, a·m, y·m, m]` with `m` the observed flag.
    pub fn token_dim(&self) -> usize {
        self.x_dim + self.a_dim + 2
    }

    pub fn bridge_dim(&self) -> usize {
        match self.mode {
            ModelMode::OneStep => self.a_dim + self.c_dim + self.z_dim,
            ModelMode::Decision => self.a_dim + self.c_dim + self.tau * self.z_dim,
        }
    }

    fn encoder(&self, input_dim: usize, layers: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            model_dim: self.model_dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            layers,
            dropout: self.dropout,
            causal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.a_dim == 0 || self.z_dim == 0 || self.c_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("zero-sized model dimension in {self:?}")));
        }
        if self.outcome_layers == 0 {
            return Err(Error::Config("outcome network needs at least one layer".into()));
        }
        if self.mode == ModelMode::Decision && (self.tau == 0 || self.tau > 20) {
            return Err(Error::Config(format!("tau {} outside 1..=20", self.tau)));
        }
        self.encoder(self.token_dim(), self.layers).validate()?;
        Ok(())
    }
}

/// Training-split statistics; covariates and outcomes enter the network standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardizer {
    pub fn identity(x_dim: usize) -> Self {
        Standardizer {
            x_mean: vec![0.0; x_dim],
            x_std: vec![1.0; x_dim],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    /// Mean and population std over every observed row; row 0 of `y` is the
    /// fixed initial value and is skipped.
    pub fn fit(ds: &PanelDataset) -> Self {
        let d = ds.x_dim;
        let rows = (ds.n * ds.len) as f64;
        let mut x_mean = vec![0.0; d];
        for r in ds.x.chunks(d) {
            x_mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / rows);
        }
        let mut x_var = vec![0.0; d];
        for r in ds.x.chunks(d) {
            for i in 0..d {
                x_var[i] += (r[i] - x_mean[i]).powi(2) / rows;
            }
        }
        let ys: Vec<f64> = (0..ds.n)
            .flat_map(|u| (1..ds.len).map(move |t| (u, t)))
            .map(|(u, t)| ds.y_at(u, t))
            .collect();
        let (y_mean, y_std) = if ys.is_empty() {
            (0.0, 1.0)
        } else {
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
            (m, v.sqrt())
        };
        let guard = |s: f64| if s > 1e-12 { s } else { 1.0 };
        Standardizer {
            x_mean,
            x_std: x_var.into_iter().map(|v| guard(v.sqrt())).collect(),
            y_mean,
            y_std: guard(y_std),
        }
    }

    pub fn y_forward(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn y_inverse(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

/// Tensors for one set of units over positions `0..len`; position `k`
/// reads history rows `0..=k` and targets row `k + 1`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub len: usize,
    /// Per unit: rows before this carry treatments and outcomes in the encoder tokens.
    pub starts: Vec<usize>,
    pub mode: ModelMode,
    pub tau: usize,
    /// `[n, len, token_dim]`.
    pub tokens: Tensor,
    /// `[n, len, a_dim]`: treatment of row `k + 1`.
    pub a_next: Tensor,
    /// `[n, len]`: standardized outcome of row `k + 1`.
    pub y_next: Tensor,
    /// `[n, len]`: standardized observed outcome of row `k`.
    pub y_cur: Tensor,
    /// `[n, len, a_dim]`: mean of the observed treatments in rows `0..=k`.
    pub a_mean: Tensor,
    /// Decision mode, `[n, tau, len]`: one-hot rows picking the window positions
    /// `start − 1 + i` of each unit.
    pub window: Option<Tensor>,
}

impl Batch {
    /// One-step batch over all rows of `units`.
    pub fn one_step(ds: &PanelDataset, units: &[usize], std: &Standardizer) -> Result<Batch> {
        Self::build(
            ds,
            units,
            std,
            ds.len - 1,
            &vec![ds.len; units.len()],
            ModelMode::OneStep,
            0,
        )
    }

    /// Decision batch: rows before `start` observed, the block `start..start + tau`
    /// taken from `a` (or the candidate plan), target `Y_{start+tau−1}`.
    pub fn decision(ds: &PanelDataset, units: &[usize], std: &Standardizer, start: usize, tau: usize) -> Result<Batch> {
        Self::decision_starts(ds, units, std, &vec![start; units.len()], tau)
    }

    /// Decision batch with its own window start per unit.
    pub fn decision_starts(
        ds: &PanelDataset,
        units: &[usize],
        std: &Standardizer,
        starts: &[usize],
        tau: usize,
    ) -> Result<Batch> {
        if starts.len() != units.len() {
            return Err(Error::Contract(format!(
                "{} starts for {} units",
                starts.len(),
                units.len()
            )));
        }
        if let Some(&s) = starts.iter().find(|&&s| s == 0 || s + tau > ds.len) {
            return Err(Error::Config(format!(
                "decision window {s}..{} does not fit {} rows",
                s + tau,
                ds.len
            )));
        }
        let len = starts.iter().max().map_or(0, |s| s + tau - 1);
        let mut batch = Self::build(ds, units, std, len, starts, ModelMode::Decision, tau)?;
        let mut sel = vec![0.0; units.len() * tau * len];
        for (u, &s) in starts.iter().enumerate() {
            for i in 0..tau {
                sel[(u * tau + i) * len + s - 1 + i] = 1.0;
            }
        }
        batch.window = Some(Tensor::new(sel, &[units.len(), tau, len])?);
        Ok(batch)
    }

    fn build(
        ds: &PanelDataset,
        units: &[usize],
        std: &Standardizer,
        len: usize,
        starts: &[usize],
        mode: ModelMode,
        tau: usize,
    ) -> Result<Batch> {
        if units.is_empty() || len == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        if std.x_mean.len() != ds.x_dim {
            return Err(Error::Config(format!(
                "standardizer has {} covariates, data has {}",
                std.x_mean.len(),
                ds.x_dim
            )));
        }
        if let Some(&u) = units.iter().find(|&&u| u >= ds.n) {
            return Err(Error::Config(format!("unit {u} out of range for {} units", ds.n)));
        }
        let (n, da, dx) = (units.len(), ds.a_dim, ds.x_dim);
        let td = dx + da + 2;
        let mut tokens = Vec::with_capacity(n * len * td);
        let mut a_next = Vec::with_capacity(n * len * da);
        let mut y_next = Vec::with_capacity(n * len);
        let mut y_cur = Vec::with_capacity(n * len);
        let mut a_mean = Vec::with_capacity(n * len * da);
        for (&u, &observed) in units.iter().zip(starts) {
            let mut a_sum = vec![0.0; da];
            let mut seen = 0usize;
            for k in 0..len {
                let m = if k < observed { 1.0 } else { 0.0 };
                let x = ds.x_at(u, k);
                tokens.extend(x.iter().enumerate().map(|(i, v)| (v - std.x_mean[i]) / std.x_std[i]));
                tokens.extend(ds.a_at(u, k).iter().map(|v| v * m));
                let yk = std.y_forward(ds.y_at(u, k)) * m;
                tokens.push(yk);
                tokens.push(m);
                y_cur.push(yk);
                if m > 0.0 {
                    a_sum.iter_mut().zip(ds.a_at(u, k)).for_each(|(s, v)| *s += v);
                    seen += 1;
                }
                a_mean.extend(a_sum.iter().map(|s| s / seen.max(1) as f64));
                a_next.extend(ds.a_at(u, k + 1));
                y_next.push(std.y_forward(ds.y_at(u, k + 1)));
            }
        }
        Ok(Batch {
            n,
            len,
            starts: starts.to_vec(),
            mode,
            tau,
            tokens: Tensor::new(tokens, &[n, len, td])?,
            a_next: Tensor::new(a_next, &[n, len, da])?,
            y_next: Tensor::new(y_next, &[n, len])?,
            y_cur: Tensor::new(y_cur, &[n, len])?,
            a_mean: Tensor::new(a_mean, &[n, len, da])?,
            window: None,
        })
    }

    /// Copy with the treatment block replaced by `plan` (same plan for every unit).
    pub fn with_plan(&self, plan: &[f64]) -> Result<Batch> {
        if self.mode != ModelMode::Decision || plan.len() != self.tau {
            return Err(Error::Contract(format!("plan of length {} for this batch", plan.len())));
        }
        let da = self.a_next.shape()[2];
        let mut a = self.a_next.to_vec();
        for u in 0..self.n {
            let first = self.starts[u] - 1;
            for (i, &p) in plan.iter().enumerate() {
                let o = (u * self.len + first + i) * da;
                a[o..o + da].iter_mut().for_each(|v| *v = p);
            }
        }
        Ok(Batch {
            a_next: Tensor::new(a, self.a_next.shape())?,
            ..self.clone()
        })
    }

    /// Supervised outcomes: every position, or only the terminal one in decision mode.
    pub fn targets(&self) -> Result<Tensor> {
        match self.mode {
            ModelMode::OneStep => Ok(self.y_next.clone()),
            ModelMode::Decision => self.at_terminal(&self.y_next),
        }
    }

    fn window(&self) -> Result<&Tensor> {
        self.window
            .as_ref()
            .ok_or_else(|| Error::Contract("decision batch without window selector".into()))
    }

    /// Rows of `[n, len, d]` at each unit's window positions: `[n, tau, d]`.
    pub fn at_window(&self, t: &Tensor) -> Result<Tensor> {
        Ok(self.window()?.matmul(t)?)
    }

    /// Value of `[n, len]` (or `[n, len, d]`) at each unit's terminal position:
    /// `[n, 1]` (or `[n, 1, d]`).
    pub fn at_terminal(&self, t: &Tensor) -> Result<Tensor> {
        let last = self.window()?.narrow(1, self.tau - 1, 1)?;
        if t.ndim() == 2 {
            Ok(last
                .matmul(&t.reshape(&[self.n, self.len, 1])?)?
                .reshape(&[self.n, 1])?)
        } else {
            Ok(last.matmul(t)?)
        }
    }
}

/// Representations for every position.
#[derive(Debug, Clone)]
pub struct ReprOutputs {
    /// `[n, len, z_dim]`.
    pub z: Tensor,
    /// `[n, len, c_dim]`.
    pub c: Tensor,
    /// `[n, len, c_dim]`: running mean of `c` over positions `0..=k`.
    pub c_bar: Tensor,
}

impl ReprOutputs {
    pub fn detach(&self) -> ReprOutputs {
        ReprOutputs {
            z: self.z.detach(),
            c: self.c.detach(),
            c_bar: self.c_bar.detach(),
        }
    }
}

/// `ŷ_k = head(h([a_{k+1}, c_k])_k)` with a causal transformer.
#[derive(Debug, Clone)]
pub struct OutcomeNet {
    pub encoder: TransformerEncoder,
    pub head: Linear,
}

impl Module for OutcomeNet {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Heads {
    pub za: VariationalHead,
    pub zy: VariationalHead,
    pub ca: VariationalHead,
    pub cy: VariationalHead,
    pub zc: VariationalHead,
}

impl Module for Heads {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.za.collect_params(&join(prefix, "za"), out);
        self.zy.collect_params(&join(prefix, "zy"), out);
        self.ca.collect_params(&join(prefix, "ca"), out);
        self.cy.collect_params(&join(prefix, "cy"), out);
        self.zc.collect_params(&join(prefix, "zc"), out);
    }
}

#[derive(Debug, Clone)]
pub struct DsivModel {
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub encoder: TransformerEncoder,
    pub phi_z: Mlp,
    pub phi_c: Mlp,
    pub heads: Heads,
    pub outcome: OutcomeNet,
    pub bridge: Mlp,
}

/// Parameter groups updated by the three alternating phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// `ψ`, `φ_Z`, `φ_C`, `h`.
    Main,
    /// The five variational heads.
    Heads,
    /// The bridge `f`.
    Bridge,
}

impl DsivModel {
    pub fn new(config: ModelConfig, standardizer: Standardizer, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if standardizer.x_mean.len() != config.x_dim {
            return Err(Error::Config("standardizer width differs from x_dim".into()));
        }
        let c = &config;
        let a_kind = match c.treatment {
            TreatmentKind::Binary => TargetKind::Bernoulli,
            TreatmentKind::Continuous => TargetKind::Gaussian,
        };
        let encoder = TransformerEncoder::new(rng, c.encoder(c.token_dim(), c.layers))?;
        let phi_z = Mlp::new(rng, &[c.model_dim, c.hidden, c.z_dim])?;
        let phi_c = Mlp::new(rng, &[c.model_dim, c.hidden, c.c_dim])?;
        let heads = Heads {
            za: VariationalHead::new(rng, c.z_dim, c.hidden, c.a_dim, a_kind)?,
            zy: VariationalHead::new(rng, c.z_dim, c.hidden, 1, TargetKind::Gaussian)?,
            ca: VariationalHead::new(rng, c.c_dim, c.hidden, c.a_dim, a_kind)?,
            cy: VariationalHead::new(rng, c.c_dim, c.hidden, 1, TargetKind::Gaussian)?,
            zc: VariationalHead::new(rng, c.c_dim, c.hidden, c.z_dim, TargetKind::Gaussian)?,
        };
        let outcome = OutcomeNet {
            encoder: TransformerEncoder::new(rng, c.encoder(c.a_dim + c.c_dim, c.outcome_layers))?,
            head: Linear::new(rng, c.model_dim, 1)?,
        };
        let bridge = Mlp::new(rng, &[c.bridge_dim(), c.hidden, 1])?;
        Ok(DsivModel {
            config,
            standardizer,
            encoder,
            phi_z,
            phi_c,
            heads,
            outcome,
            bridge,
        })
    }

    /// Fresh model standardized on `train`, initialized from the `init` stream of `seed`.
    pub fn init(config: ModelConfig, train: &PanelDataset, seed: u64) -> Result<Self> {
        Self::new(config, Standardizer::fit(train), &mut substream(seed, "init"))
    }

    pub fn params(&self, group: Group) -> NamedParams {
        let mut out = Vec::new();
        match group {
            Group::Main => {
                self.encoder.collect_params("encoder", &mut out);
                self.phi_z.collect_params("phi_z", &mut out);
                self.phi_c.collect_params("phi_c", &mut out);
                self.outcome.collect_params("outcome", &mut out);
            }
            Group::Heads => self.heads.collect_params("heads", &mut out),
            Group::Bridge => self.bridge.collect_params("bridge", &mut out),
        }
        out
    }

    pub fn all_params(&self) -> NamedParams {
        [Group::Main, Group::Heads, Group::Bridge]
            .into_iter()
            .flat_map(|g| self.params(g))
            .collect()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.all_params().iter().map(|(_, p)| p.to_vec()).collect()
    }

    pub fn restore(&self, snap: &[Vec<f64>]) -> Result<()> {
        let params = self.all_params();
        if params.len() != snap.len() {
            return Err(Error::Contract("snapshot does not match the model".into()));
        }
        for ((_, p), v) in params.iter().zip(snap) {
            p.set_data(v)?;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let td = batch.tokens.shape()[2];
        if td != self.config.token_dim() {
            return Err(Error::Config(format!(
                "batch tokens have width {td}, model expects {}",
                self.config.token_dim()
            )));
        }
        if batch.mode != self.config.mode {
            return Err(Error::Config(format!(
                "{:?} batch for a {:?} model",
                batch.mode, self.config.mode
            )));
        }
        if batch.mode == ModelMode::Decision && (batch.tau != self.config.tau || batch.window.is_none()) {
            return Err(Error::Config(format!(
                "decision batch with tau {} for a model with tau {}",
                batch.tau, self.config.tau
            )));
        }
        Ok(())
    }

    /// One causal encoder pass, then `φ_Z`, `φ_C` at every position.
    pub fn represent(&self, batch: &Batch, training: bool, rng: &mut Rng) -> Result<ReprOutputs> {
        self.check_batch(batch)?;
        let psi = self.encoder.forward(&batch.tokens, training, rng)?;
        let z = self.phi_z.forward(&psi)?;
        let c = self.phi_c.forward(&psi)?;
        let counts: Vec<f64> = (1..=batch.len).map(|k| 1.0 / k as f64).collect();
        let inv = Tensor::new(counts, &[1, batch.len, 1])?;
        let c_bar = c.cumsum(1)?.mul(&inv)?;
        Ok(ReprOutputs { z, c, c_bar })
    }

    /// Standardized outcome predictions: `[n, len]`, or `[n, 1]` in decision mode.
    pub fn predict(&self, batch: &Batch, repr: &ReprOutputs, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let y = predict_outcomes(&self.outcome, &batch.a_next, &repr.c, training, rng)?;
        match batch.mode {
            ModelMode::OneStep => Ok(y),
            ModelMode::Decision => batch.at_terminal(&y),
        }
    }

    /// Bridge inputs `(Ā, C̄, Z)` aligned with [`predict`](Self::predict). In
    /// decision mode `Z` stacks the `tau` window positions into one vector.
    pub fn bridge_inputs(&self, batch: &Batch, repr: &ReprOutputs) -> Result<(Tensor, Tensor, Tensor)> {
        match batch.mode {
            ModelMode::OneStep => Ok((batch.a_mean.clone(), repr.c_bar.clone(), repr.z.clone())),
            ModelMode::Decision => {
                let zw = batch
                    .at_window(&repr.z)?
                    .reshape(&[batch.n, 1, batch.tau * self.config.z_dim])?;
                Ok((batch.at_terminal(&batch.a_mean)?, batch.at_terminal(&repr.c_bar)?, zw))
            }
        }
    }

    /// Bridge weights `M`, one per supervised position.
    pub fn bridge_weights(&self, batch: &Batch, repr: &ReprOutputs) -> Result<Tensor> {
        let (a, c, z) = self.bridge_inputs(batch, repr)?;
        bridge_weights(&self.bridge, &a, &c, &z)
    }

    /// Predictions in the original outcome scale, evaluation mode.
    pub fn predict_original_scale(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut rng = substream(0, "dropout");
        no_grad(|| {
            let repr = self.represent(batch, false, &mut rng)?;
            let y = self.predict(batch, &repr, false, &mut rng)?;
            Ok(y.to_vec().into_iter().map(|v| self.standardizer.y_inverse(v)).collect())
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&Checkpoint::from_model(self)).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        ck.into_model()
    }
}

pub const CHECKPOINT_FORMAT: &str = "dsiv-checkpoint/1";

/// On-disk model: architecture, standardizer and every parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(m: &DsivModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: m.config.clone(),
            standardizer: m.standardizer.clone(),
            params: m
                .all_params()
                .into_iter()
                .map(|(name, p)| ParamRecord {
                    name,
                    shape: p.shape().to_vec(),
                    data: p.to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<DsivModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", self.format)));
        }
        let model = DsivModel::new(self.config, self.standardizer, &mut substream(0, "init"))?;
        let params = model.all_params();
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, architecture has {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, p), rec) in params.iter().zip(&self.params) {
            if *name != rec.name || p.shape() != rec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint parameter `{}` {:?} does not match `{name}` {:?}",
                    rec.name,
                    rec.shape,
                    p.shape()
                )));
            }
            p.set_data(&rec.data)?;
        }
        Ok(model)
    }
}
