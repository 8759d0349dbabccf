//! Synthetic confounded panels.
//!
//! Two generators share one latent process: instruments `Z`, observed
//! confounders `C` and unobserved confounders `U` drift over time, the
//! observed covariates are `X = mix(Z, C)`, and treatments depend on all
//! three. The one-step generator feeds the counterfactual-prediction
//! benchmark; the decision generator adds a five-step treatment memory in
//! the outcome and an exhaustive oracle over candidate treatment plans.

mod io;

pub use io::{load_oracle, load_panel, save_oracle, save_panel, DatasetMeta, SplitMeta};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, unit_stream, Rng};
use crate::tensor::scalar_sigmoid;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column `{column}`: {msg}")]
    Parse { line: usize, column: String, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    AppendixB,
    AppendixC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mixing {
    Concat,
    OrthogonalMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Observational,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Constant added to the treatment logit.
///
/// With the logit taken literally, the `−cos(V²)` terms push it far below
/// zero and the threshold rule almost never treats anyone. `Calibrated`
/// picks the offset that puts the median logit of a calibration rollout at
/// zero; `Fixed(0.0)` keeps the formula as written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyOffset {
    Calibrated,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub kind: GeneratorKind,
    pub z_dim: usize,
    pub c_dim: usize,
    pub u_dim: usize,
    /// Rows per unit, including the initial row with `A_0 = Y_0 = 0`.
    pub horizon: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub coef_seed: u64,
    pub seed: u64,
    pub mixing: Mixing,
    pub test_policy: Policy,
    pub policy_offset: PolicyOffset,
    /// Decision window length (decision generator only).
    pub tau: usize,
    /// Observed history steps before the decision window (decision generator only).
    pub history: usize,
}

impl GenConfig {
    pub fn appendix_b() -> Self {
        GenConfig {
            kind: GeneratorKind::AppendixB,
            z_dim: 3,
            c_dim: 7,
            u_dim: 3,
            horizon: 100,
            n_train: 10_000,
            n_val: 1_000,
            n_test: 1_000,
            coef_seed: 0,
            seed: 0,
            mixing: Mixing::Concat,
            test_policy: Policy::Random,
            policy_offset: PolicyOffset::Calibrated,
            tau: 5,
            history: 25,
        }
    }

    pub fn appendix_c() -> Self {
        GenConfig {
            kind: GeneratorKind::AppendixC,
            z_dim: 3,
            c_dim: 12,
            u_dim: 5,
            horizon: 31,
            n_train: 2_000,
            n_val: 200,
            n_test: 100,
            coef_seed: 0,
            seed: 0,
            mixing: Mixing::Concat,
            test_policy: Policy::Random,
            policy_offset: PolicyOffset::Calibrated,
            tau: 5,
            history: 25,
        }
    }

    pub fn defaults_for(kind: GeneratorKind) -> Self {
        match kind {
            GeneratorKind::AppendixB => Self::appendix_b(),
            GeneratorKind::AppendixC => Self::appendix_c(),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.z_dim + self.c_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.z_dim == 0 || self.c_dim == 0 || self.u_dim == 0 {
            return bad(format!(
                "latent dims must be positive (z={}, c={}, u={})",
                self.z_dim, self.c_dim, self.u_dim
            ));
        }
        if self.horizon < 2 {
            return bad(format!("horizon {} leaves no transition", self.horizon));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("every split needs at least one unit".into());
        }
        if let PolicyOffset::Fixed(v) = self.policy_offset {
            if !v.is_finite() {
                return bad(format!("policy offset {v} is not finite"));
            }
        }
        if self.kind == GeneratorKind::AppendixC {
            if self.tau == 0 || self.tau > 20 {
                return bad(format!("tau {} outside 1..=20", self.tau));
            }
            if self.horizon != self.history + 1 + self.tau {
                return bad(format!(
                    "decision horizon must equal history + 1 + tau = {}, got {}",
                    self.history + 1 + self.tau,
                    self.horizon
                ));
            }
        }
        Ok(())
    }

    /// Row at which the decision window starts.
    pub fn decision_start(&self) -> usize {
        self.history + 1
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::appendix_b()
    }
}

/// Coefficients of one data-generating process, fixed by the coefficient seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Over `V = [Z, C, U]`.
    pub coef_a: Vec<f64>,
    /// Over `V' = [C_t, U_t, U_{t−1}]`.
    pub coef_y: Vec<f64>,
    /// Weights of `A_{t+1−j}`, `j = 0..tau` (decision generator).
    pub coef_seq: Vec<f64>,
    pub policy_offset: f64,
    /// Row-major orthogonal `x_dim × x_dim` matrix for `Mixing::OrthogonalMix`.
    pub mix: Option<Vec<f64>>,
}

impl Coefficients {
    pub fn draw(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.coef_seed, "coefficients");
        let mut uni = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let coef_a = uni(cfg.z_dim + cfg.c_dim + cfg.u_dim);
        let coef_y = uni(cfg.c_dim + 2 * cfg.u_dim);
        let coef_seq = match cfg.kind {
            GeneratorKind::AppendixB => Vec::new(),
            GeneratorKind::AppendixC => uni(cfg.tau),
        };
        let mix = match cfg.mixing {
            Mixing::Concat => None,
            Mixing::OrthogonalMix => Some(random_orthogonal(&mut substream(cfg.coef_seed, "mixing"), cfg.x_dim())),
        };
        let mut coefs = Coefficients {
            coef_a,
            coef_y,
            coef_seq,
            policy_offset: 0.0,
            mix,
        };
        coefs.policy_offset = match cfg.policy_offset {
            PolicyOffset::Fixed(v) => v,
            PolicyOffset::Calibrated => calibrate_offset(cfg, &coefs),
        };
        Ok(coefs)
    }
}

/// Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(rng: &mut Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    rows.concat()
}

const CALIBRATION_UNITS: usize = 256;
const CALIBRATION_ROUNDS: usize = 8;

/// Fixed point of `offset ← −median(raw logits under the policy with offset)`.
fn calibrate_offset(cfg: &GenConfig, coefs: &Coefficients) -> f64 {
    let mut offset = 0.0;
    for _ in 0..CALIBRATION_ROUNDS {
        let trial = Coefficients {
            policy_offset: offset,
            ..coefs.clone()
        };
        let mut logits = Vec::with_capacity(CALIBRATION_UNITS * cfg.horizon);
        for unit in 0..CALIBRATION_UNITS {
            let mut rng = unit_stream(cfg.coef_seed, "calibration", unit as u64);
            let traj = simulate_unit(cfg, &trial, &mut rng, cfg.horizon, Policy::Observational);
            logits.extend(traj.raw_logits);
        }
        logits.sort_by(f64::total_cmp);
        offset = -logits[logits.len() / 2];
    }
    offset
}

/// Latent state at one row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
}

impl LatentState {
    pub fn v(&self) -> Vec<f64> {
        [self.z.as_slice(), &self.c, &self.u].concat()
    }
}

/// The treatment logit as written, before any policy offset:
/// `Σ(coef_a·V − cos V²) − 0.5·A_t + 0.2·Y_t − 0.1·sin t`.
pub fn treatment_logit(v: &[f64], a_prev: f64, y_prev: f64, coef_a: &[f64], t: usize) -> f64 {
    let s: f64 = v.iter().zip(coef_a).map(|(&vi, &ci)| ci * vi - (vi * vi).cos()).sum();
    s - 0.5 * a_prev + 0.2 * y_prev - 0.1 * (t as f64).sin()
}

/// Threshold rule: `A = 1` iff `sigmoid(logit) ≥ 0.5`.
pub fn assign_treatment(logit: f64) -> f64 {
    if scalar_sigmoid(logit) >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// One-step outcome: `coef_y·V' − 0.2·sin A_{t+1} + 0.5·sin(t/5)`.
pub fn outcome_b(v_prime: &[f64], a_next: f64, coef_y: &[f64], t: usize) -> f64 {
    dot(coef_y, v_prime) - 0.2 * a_next.sin() + 0.5 * (t as f64 / 5.0).sin()
}

/// Decision outcome: `0.2·coef_y·V' − 0.5·Σ_j coef_seq_j·A_{t+1−j} + sin t`.
/// `a_recent[j]` holds `A_{t+1−j}` (zero before the first row).
pub fn outcome_c(v_prime: &[f64], a_recent: &[f64], coef_y: &[f64], coef_seq: &[f64], t: usize) -> f64 {
    0.2 * dot(coef_y, v_prime) - 0.5 * dot(coef_seq, a_recent) + (t as f64).sin()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full trajectory of one unit, rows `0..len`.
#[derive(Debug, Clone)]
pub struct UnitTrajectory {
    pub states: Vec<LatentState>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub raw_logits: Vec<f64>,
}

fn fresh_range(kind: GeneratorKind) -> f64 {
    match kind {
        GeneratorKind::AppendixB => 1.0,
        GeneratorKind::AppendixC => 3.0,
    }
}

fn draw_uniform(rng: &mut Rng, n: usize, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..hi)).collect()
}

fn draw_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Latent drift from row `t` to `t + 1`.
pub fn drift(state: &LatentState, t: usize, kind: GeneratorKind, rng: &mut Rng) -> LatentState {
    let hi = fresh_range(kind);
    let st = (t as f64).sin();
    let ct = (t as f64).cos();
    let fz = draw_uniform(rng, state.z.len(), hi);
    let fc = draw_uniform(rng, state.c.len(), hi);
    let fu = draw_normal(rng, state.u.len());
    LatentState {
        z: state
            .z
            .iter()
            .zip(&fz)
            .map(|(z, f)| 0.4 * z + 0.6 * f + 0.3 * st)
            .collect(),
        c: state
            .c
            .iter()
            .zip(&fc)
            .map(|(c, f)| 0.3 * c + 0.7 * f + 0.2 * st)
            .collect(),
        u: fu.iter().map(|f| f - 0.1 * ct).collect(),
    }
}

fn initial_state(cfg: &GenConfig, rng: &mut Rng) -> LatentState {
    let hi = fresh_range(cfg.kind);
    LatentState {
        z: draw_uniform(rng, cfg.z_dim, hi),
        c: draw_uniform(rng, cfg.c_dim, hi),
        u: draw_normal(rng, cfg.u_dim),
    }
}

fn v_prime(cur: &LatentState, prev_u: &[f64]) -> Vec<f64> {
    [cur.c.as_slice(), &cur.u, prev_u].concat()
}

/// Rolls one unit forward for `len` rows. Treatments follow `policy`.
pub fn simulate_unit(
    cfg: &GenConfig,
    coefs: &Coefficients,
    rng: &mut Rng,
    len: usize,
    policy: Policy,
) -> UnitTrajectory {
    simulate_unit_with(cfg, coefs, rng, len, |_, logit, rng| match policy {
        Policy::Observational => assign_treatment(logit),
        Policy::Random => f64::from(rng.random::<f64>() < 0.5),
    })
}

/// Rolls one unit forward with treatments from `choose(t, logit_with_offset, rng)` for row `t + 1`.
pub fn simulate_unit_with(
    cfg: &GenConfig,
    coefs: &Coefficients,
    rng: &mut Rng,
    len: usize,
    mut choose: impl FnMut(usize, f64, &mut Rng) -> f64,
) -> UnitTrajectory {
    let mut states = Vec::with_capacity(len);
    let mut a = vec![0.0; len];
    let mut y = vec![0.0; len];
    let mut raw_logits = Vec::with_capacity(len.saturating_sub(1));
    states.push(initial_state(cfg, rng));
    let mut prev_u = vec![0.0; cfg.u_dim];
    for t in 0..len.saturating_sub(1) {
        let cur = &states[t];
        let raw = treatment_logit(&cur.v(), a[t], y[t], &coefs.coef_a, t);
        raw_logits.push(raw);
        let a_next = choose(t, raw + coefs.policy_offset, rng);
        a[t + 1] = a_next;
        let vp = v_prime(cur, &prev_u);
        y[t + 1] = match cfg.kind {
            GeneratorKind::AppendixB => outcome_b(&vp, a_next, &coefs.coef_y, t),
            GeneratorKind::AppendixC => {
                let recent = recent_treatments(&a, t + 1, coefs.coef_seq.len());
                outcome_c(&vp, &recent, &coefs.coef_y, &coefs.coef_seq, t)
            }
        };
        prev_u = cur.u.clone();
        let next = drift(cur, t, cfg.kind, rng);
        states.push(next);
    }
    UnitTrajectory {
        states,
        a,
        y,
        raw_logits,
    }
}

/// `[A_row, A_{row−1}, …]`, `k` entries, zero before row 0.
fn recent_treatments(a: &[f64], row: usize, k: usize) -> Vec<f64> {
    (0..k).map(|j| if row >= j { a[row - j] } else { 0.0 }).collect()
}

fn covariates(state: &LatentState, mix: Option<&[f64]>) -> Vec<f64> {
    let zc = [state.z.as_slice(), &state.c].concat();
    match mix {
        None => zc,
        Some(m) => {
            let d = zc.len();
            (0..d).map(|i| dot(&m[i * d..(i + 1) * d], &zc)).collect()
        }
    }
}

/// Ground-truth latent blocks, for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub z_dim: usize,
    pub c_dim: usize,
    pub u_dim: usize,
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
}

/// Long-format panel: per unit, rows `0..len` of covariates, treatments and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub n: usize,
    pub len: usize,
    pub x_dim: usize,
    pub a_dim: usize,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub treatment: TreatmentKind,
    pub latent: Option<Latent>,
}

impl PanelDataset {
    pub fn x_at(&self, unit: usize, t: usize) -> &[f64] {
        let o = (unit * self.len + t) * self.x_dim;
        &self.x[o..o + self.x_dim]
    }

    pub fn a_at(&self, unit: usize, t: usize) -> &[f64] {
        let o = (unit * self.len + t) * self.a_dim;
        &self.a[o..o + self.a_dim]
    }

    pub fn y_at(&self, unit: usize, t: usize) -> f64 {
        self.y[unit * self.len + t]
    }

    /// The same panel with the latent block removed.
    pub fn observed(&self) -> PanelDataset {
        PanelDataset {
            latent: None,
            ..self.clone()
        }
    }

    pub fn treatment_rate(&self) -> f64 {
        let mut s = 0.0;
        let mut k = 0usize;
        for u in 0..self.n {
            for t in 1..self.len {
                s += self.a_at(u, t).iter().sum::<f64>();
                k += self.a_dim;
            }
        }
        if k == 0 {
            0.0
        } else {
            s / k as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(DataError::Schema(format!("{name} has {got} values, expected {want}")))
            }
        };
        if self.n == 0 || self.len == 0 || self.x_dim == 0 || self.a_dim == 0 {
            return Err(DataError::Schema("empty panel".into()));
        }
        expect("x", self.x.len(), self.n * self.len * self.x_dim)?;
        expect("a", self.a.len(), self.n * self.len * self.a_dim)?;
        expect("y", self.y.len(), self.n * self.len)?;
        if let Some(l) = &self.latent {
            expect("z", l.z.len(), self.n * self.len * l.z_dim)?;
            expect("c", l.c.len(), self.n * self.len * l.c_dim)?;
            expect("u", l.u.len(), self.n * self.len * l.u_dim)?;
        }
        if [&self.x, &self.a, &self.y]
            .iter()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(DataError::Schema("non-finite value in panel".into()));
        }
        if self.treatment == TreatmentKind::Binary && self.a.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DataError::Schema("binary treatment outside {0, 1}".into()));
        }
        Ok(())
    }

    fn from_trajectories(
        trajs: &[UnitTrajectory],
        len: usize,
        coefs: &Coefficients,
        keep: impl Fn(usize) -> bool,
    ) -> Self {
        let s0 = &trajs[0].states[0];
        let (zd, cd, ud) = (s0.z.len(), s0.c.len(), s0.u.len());
        let x_dim = zd + cd;
        let n = trajs.len();
        let mut ds = PanelDataset {
            n,
            len,
            x_dim,
            a_dim: 1,
            x: Vec::with_capacity(n * len * x_dim),
            a: Vec::with_capacity(n * len),
            y: Vec::with_capacity(n * len),
            treatment: TreatmentKind::Binary,
            latent: Some(Latent {
                z_dim: zd,
                c_dim: cd,
                u_dim: ud,
                z: Vec::with_capacity(n * len * zd),
                c: Vec::with_capacity(n * len * cd),
                u: Vec::with_capacity(n * len * ud),
            }),
        };
        let lat = ds.latent.as_mut().expect("just set");
        for tr in trajs {
            for t in 0..len {
                let st = &tr.states[t];
                ds.x.extend(covariates(st, coefs.mix.as_deref()));
                let seen = keep(t);
                ds.a.push(if seen { tr.a[t] } else { 0.0 });
                ds.y.push(if seen { tr.y[t] } else { 0.0 });
                lat.z.extend(&st.z);
                lat.c.extend(&st.c);
                lat.u.extend(&st.u);
            }
        }
        ds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Units of one split; unit `i` always draws from stream `(seed, split, i)`.
pub fn generate_panel(cfg: &GenConfig, coefs: &Coefficients, split: Split, n: usize, policy: Policy) -> PanelDataset {
    let trajs: Vec<UnitTrajectory> = (0..n)
        .map(|i| {
            let mut rng = unit_stream(cfg.seed, split.label(), i as u64);
            simulate_unit(cfg, coefs, &mut rng, cfg.horizon, policy)
        })
        .collect();
    PanelDataset::from_trajectories(&trajs, cfg.horizon, coefs, |_| true)
}

#[derive(Debug, Clone)]
pub struct SimulationData {
    pub coefficients: Coefficients,
    pub train: PanelDataset,
    pub val: PanelDataset,
    pub test: PanelDataset,
}

/// One-step benchmark: observational train/val, `test_policy` test split.
pub fn generate_simulation(cfg: &GenConfig) -> Result<SimulationData> {
    if cfg.kind != GeneratorKind::AppendixB {
        return Err(DataError::Config(
            "generate_simulation needs the appendix-b generator".into(),
        ));
    }
    let coefficients = Coefficients::draw(cfg)?;
    Ok(SimulationData {
        train: generate_panel(cfg, &coefficients, Split::Train, cfg.n_train, Policy::Observational),
        val: generate_panel(cfg, &coefficients, Split::Val, cfg.n_val, Policy::Observational),
        test: generate_panel(cfg, &coefficients, Split::Test, cfg.n_test, cfg.test_policy),
        coefficients,
    })
}

/// Treatment at offset `i` of the window under candidate plan `b`.
pub fn candidate_bit(b: usize, i: usize, tau: usize) -> f64 {
    ((b >> (tau - 1 - i)) & 1) as f64
}

/// Test units for plan selection: observed history, then every candidate
/// plan's terminal outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDecisionSet {
    pub tau: usize,
    /// First row of the decision window; treatments and outcomes before it are observed.
    pub start: usize,
    /// Rows `0..start + tau`; `a` and `y` are zero from `start` on, `x` is fully observed.
    pub history: PanelDataset,
    /// `outcomes[unit][b]` is the terminal outcome under plan `b`.
    pub outcomes: Vec<Vec<f64>>,
    pub oracle: Vec<f64>,
    pub best: Vec<usize>,
}

impl OracleDecisionSet {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn candidates(&self) -> usize {
        1 << self.tau
    }

    /// Rebuilds `oracle` and `best` from `outcomes` (ties go to the smallest plan index).
    pub fn recompute_oracle(&mut self) {
        self.oracle.clear();
        self.best.clear();
        for row in &self.outcomes {
            let (b, v) = argmax_first(row);
            self.best.push(b);
            self.oracle.push(v);
        }
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DecisionData {
    pub coefficients: Coefficients,
    pub train: PanelDataset,
    pub val: PanelDataset,
    pub test: OracleDecisionSet,
}

/// Decision benchmark: observational train/val over the full horizon and an
/// oracle test set enumerating all `2^tau` plans.
pub fn generate_decision_dataset(cfg: &GenConfig) -> Result<DecisionData> {
    if cfg.kind != GeneratorKind::AppendixC {
        return Err(DataError::Config("decision data needs the appendix-c generator".into()));
    }
    let coefficients = Coefficients::draw(cfg)?;
    let train = generate_panel(cfg, &coefficients, Split::Train, cfg.n_train, Policy::Observational);
    let val = generate_panel(cfg, &coefficients, Split::Val, cfg.n_val, Policy::Observational);
    let test = decision_test_set(cfg, &coefficients);
    Ok(DecisionData {
        coefficients,
        train,
        val,
        test,
    })
}

/// Oracle test units: observed history, then every plan's terminal outcome.
pub fn decision_test_set(cfg: &GenConfig, coefs: &Coefficients) -> OracleDecisionSet {
    let start = cfg.decision_start();
    let tau = cfg.tau;
    let mut trajs = Vec::with_capacity(cfg.n_test);
    let mut outcomes = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_test {
        let mut rng = unit_stream(cfg.seed, Split::Test.label(), i as u64);
        // Latent states never depend on treatments, so one rollout fixes them for every plan.
        let traj = simulate_unit(cfg, coefs, &mut rng, cfg.horizon, Policy::Observational);
        let row: Vec<f64> = (0..1usize << tau)
            .map(|b| {
                let mut a = traj.a.clone();
                for k in 0..tau {
                    a[start + k] = candidate_bit(b, k, tau);
                }
                let t = start + tau - 2;
                let prev_u = &traj.states[t - 1].u;
                let vp = v_prime(&traj.states[t], prev_u);
                let recent = recent_treatments(&a, t + 1, coefs.coef_seq.len());
                outcome_c(&vp, &recent, &coefs.coef_y, &coefs.coef_seq, t)
            })
            .collect();
        outcomes.push(row);
        trajs.push(traj);
    }
    let history = PanelDataset::from_trajectories(&trajs, cfg.horizon, coefs, |t| t < start);
    let mut set = OracleDecisionSet {
        tau,
        start,
        history,
        outcomes,
        oracle: Vec::new(),
        best: Vec::new(),
    };
    set.recompute_oracle();
    set
}
