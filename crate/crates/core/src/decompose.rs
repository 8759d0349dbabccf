//! Instrument/confounder decomposition: variational heads, CLUB estimates,
//! RBF pair weights and the two alternating objectives `L_MI` and `L_LLD`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, DsivModel, ReprOutputs};
use crate::nn::{join, Mlp, Module, NamedParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -8.0;
pub const LOGVAR_MAX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Gaussian,
    Bernoulli,
}

/// `q_θ(target | condition)`: diagonal Gaussian or independent Bernoulli.
#[derive(Debug, Clone)]
pub struct VariationalHead {
    pub kind: TargetKind,
    pub target_dim: usize,
    pub net: Mlp,
}

#[derive(Debug, Clone)]
pub enum HeadOutput {
    Gaussian { mean: Tensor, logvar: Tensor },
    Bernoulli { logits: Tensor },
}

impl VariationalHead {
    pub fn new(rng: &mut Rng, cond_dim: usize, hidden: usize, target_dim: usize, kind: TargetKind) -> Result<Self> {
        let out = match kind {
            TargetKind::Gaussian => 2 * target_dim,
            TargetKind::Bernoulli => target_dim,
        };
        Self::from_net(kind, target_dim, Mlp::new(rng, &[cond_dim, hidden, out])?)
    }

    pub fn from_net(kind: TargetKind, target_dim: usize, net: Mlp) -> Result<Self> {
        let want = match kind {
            TargetKind::Gaussian => 2 * target_dim,
            TargetKind::Bernoulli => target_dim,
        };
        if target_dim == 0 || net.out_dim() != want {
            return Err(Error::Config(format!(
                "{kind:?} head over {target_dim} dims needs {want} outputs, net has {}",
                net.out_dim()
            )));
        }
        Ok(VariationalHead { kind, target_dim, net })
    }

    pub fn cond_dim(&self) -> usize {
        self.net.in_dim()
    }

    /// Distribution parameters; `frozen` cuts the head's own parameters from the graph.
    pub fn output(&self, cond: &Tensor, frozen: bool) -> Result<HeadOutput> {
        if cond.shape().last() != Some(&self.cond_dim()) {
            return Err(Error::Config(format!(
                "head expects condition width {}, got {:?}",
                self.cond_dim(),
                cond.shape()
            )));
        }
        let raw = if frozen {
            self.net.forward_frozen(cond)?
        } else {
            self.net.forward(cond)?
        };
        Ok(match self.kind {
            TargetKind::Gaussian => {
                let ax = raw.ndim() - 1;
                HeadOutput::Gaussian {
                    mean: raw.narrow(ax, 0, self.target_dim)?,
                    logvar: raw
                        .narrow(ax, self.target_dim, self.target_dim)?
                        .clamp(LOGVAR_MIN, LOGVAR_MAX),
                }
            }
            TargetKind::Bernoulli => HeadOutput::Bernoulli { logits: raw },
        })
    }

    fn check_target(&self, cond: &Tensor, target: &Tensor) -> Result<()> {
        let (c, t) = (cond.shape(), target.shape());
        if c.len() != t.len() || c[..c.len() - 1] != t[..t.len() - 1] || t.last() != Some(&self.target_dim) {
            return Err(Error::Config(format!(
                "condition {c:?} and target {t:?} do not pair for a head over {} dims",
                self.target_dim
            )));
        }
        if self.kind == TargetKind::Bernoulli {
            if let Some(v) = target.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
                return Err(Error::Contract(format!("binary head given target {v}")));
            }
        }
        Ok(())
    }
}

impl Module for VariationalHead {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.net.collect_params(&join(prefix, "net"), out);
    }
}

fn loglik_of(out: &HeadOutput, target: &Tensor) -> Result<Tensor> {
    let ax = target.ndim() - 1;
    let dens = match out {
        HeadOutput::Gaussian { mean, logvar } => {
            let sq = target.sub(mean)?.square().mul(&logvar.neg().exp())?;
            sq.add(&logvar.add_scalar((2.0 * PI).ln()))?.scale(-0.5)
        }
        HeadOutput::Bernoulli { logits } => {
            let pos = target.mul(&logits.log_sigmoid())?;
            let neg = target.neg().add_scalar(1.0).mul(&logits.neg().log_sigmoid())?;
            pos.add(&neg)?
        }
    };
    Ok(dens.sum_axis(ax, false)?)
}

/// Per-sample `log q(target | cond)` summed over target dims, head parameters live.
pub fn loglik(head: &VariationalHead, cond: &Tensor, target: &Tensor) -> Result<Tensor> {
    head.check_target(cond, target)?;
    loglik_of(&head.output(cond, false)?, target)
}

/// Row-stochastic RBF weights over sample pairs, treated as constants.
#[derive(Debug, Clone)]
pub struct PairWeights {
    /// `[n, n]`, or `[P, n, n]` for a stack of positions.
    pub w: Tensor,
    pub sigma: f64,
}

/// `w_ij = softmax_j exp(−‖v_i − v_j‖² / 2σ²)` for `v` of shape `[n, d]` or `[P, n, d]`.
pub fn rbf_pair_weights(v: &Tensor, sigma: f64) -> Result<PairWeights> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("kernel width {sigma} must be positive")));
    }
    let s = v.shape();
    let (p, n, d) = match *s {
        [n, d] => (1, n, d),
        [p, n, d] => (p, n, d),
        _ => {
            return Err(Error::Config(format!(
                "pair weights need [n, d] or [P, n, d], got {s:?}"
            )))
        }
    };
    let vd = v.data();
    let mut w = vec![0.0; p * n * n];
    let mut row = vec![0.0; n];
    for b in 0..p {
        let base = &vd[b * n * d..(b + 1) * n * d];
        for i in 0..n {
            let vi = &base[i * d..(i + 1) * d];
            for (j, r) in row.iter_mut().enumerate() {
                let dist: f64 = vi
                    .iter()
                    .zip(&base[j * d..(j + 1) * d])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                *r = (-dist / (2.0 * sigma * sigma)).exp();
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|r| (r - m).exp()).sum();
            let out = &mut w[(b * n + i) * n..(b * n + i + 1) * n];
            out.iter_mut().zip(&row).for_each(|(o, r)| *o = (r - m).exp() / z);
        }
    }
    let dims: Vec<usize> = if s.len() == 2 { vec![n, n] } else { vec![p, n, n] };
    Ok(PairWeights {
        w: Tensor::new(w, &dims)?,
        sigma,
    })
}

/// CLUB estimate per position for `cond [P, n, ·]`, `target [P, n, d]`, with the
/// head frozen. The inner sum over `j` collapses to per-row weighted moments of
/// the targets, so the cost is linear in `n` without weights.
pub fn club_per_position(
    head: &VariationalHead,
    cond: &Tensor,
    target: &Tensor,
    weights: Option<&Tensor>,
) -> Result<Tensor> {
    head.check_target(cond, target)?;
    if target.ndim() != 3 {
        return Err(Error::Config(format!(
            "stacked CLUB expects [P, n, d], got {:?}",
            target.shape()
        )));
    }
    let (p, n) = (target.shape()[0], target.shape()[1]);
    let out = head.output(cond, true)?;
    let diag = loglik_of(&out, target)?;
    // Per row i: S0 = Σ_j w_ij, m_i = Σ_j w_ij y_j / S0, V_i = Σ_j w_ij (y_j − m_i)².
    let (s0, m, var) = match weights {
        None => {
            let m = target.mean_axis(1, true)?;
            let var = target.sub(&m)?.square().sum_axis(1, true)?;
            (n as f64, m, var)
        }
        Some(w) => {
            if w.shape() != [p, n, n] {
                return Err(Error::Contract(format!(
                    "pair weights {:?} do not match {p} positions of {n} samples",
                    w.shape()
                )));
            }
            let m = w.matmul(target)?;
            let var = w.matmul(&target.square())?.sub(&m.square())?;
            (1.0, m, var)
        }
    };
    let cross = match &out {
        HeadOutput::Gaussian { mean, logvar } => {
            let quad = mean.sub(&m)?.square().scale(s0).add(&var)?;
            let t = logvar
                .neg()
                .exp()
                .mul(&quad)?
                .add(&logvar.add_scalar((2.0 * PI).ln()).scale(s0))?;
            t.sum_axis(2, false)?.scale(-0.5)
        }
        HeadOutput::Bernoulli { logits } => {
            let s1 = m.scale(s0);
            let pos = logits.log_sigmoid().mul(&s1)?;
            let neg = logits.neg().log_sigmoid().mul(&s1.neg().add_scalar(s0))?;
            pos.add(&neg)?.sum_axis(2, false)?
        }
    };
    Ok(diag
        .scale(s0)
        .sub(&cross)?
        .sum_axis(1, false)?
        .scale(1.0 / (n * n) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiSign {
    /// Negated CLUB: minimizing it raises the dependence.
    MaximizeMi,
    /// CLUB as-is: minimizing it suppresses the dependence.
    MinimizeMi,
}

fn lift(t: &Tensor) -> Result<Tensor> {
    let mut d = vec![1];
    d.extend_from_slice(t.shape());
    Ok(t.reshape(&d)?)
}

/// `(1/n²) Σ_i Σ_j [log q(t_i | c_i) − log q(t_j | c_i)]` for `[n, ·]` inputs.
pub fn club_loss(head: &VariationalHead, cond: &Tensor, target: &Tensor, sign: MiSign) -> Result<Tensor> {
    let v = club_per_position(head, &lift(cond)?, &lift(target)?, None)?.reshape(&[])?;
    Ok(match sign {
        MiSign::MaximizeMi => v.neg(),
        MiSign::MinimizeMi => v,
    })
}

/// `(1/n²) Σ_i Σ_j w_ij [log q(t_i | c_i) − log q(t_j | c_i)]`, minimized as-is.
pub fn weighted_club_loss(
    head: &VariationalHead,
    cond: &Tensor,
    target: &Tensor,
    weights: &PairWeights,
) -> Result<Tensor> {
    let n = target.shape()[0];
    if weights.w.shape() != [n, n] {
        return Err(Error::Contract(format!(
            "pair weights {:?} for {n} samples",
            weights.w.shape()
        )));
    }
    Ok(club_per_position(head, &lift(cond)?, &lift(target)?, Some(&lift(&weights.w)?))?.reshape(&[])?)
}

/// The five signed CLUB terms, each already averaged over positions.
#[derive(Debug, Clone)]
pub struct MiTerms {
    pub za: Tensor,
    pub zy: Tensor,
    pub ca: Tensor,
    pub cy: Tensor,
    pub zc: Tensor,
}

impl MiTerms {
    pub fn total(&self) -> Result<Tensor> {
        Ok(self.za.add(&self.zy)?.add(&self.ca)?.add(&self.cy)?.add(&self.zc)?)
    }
}

fn positions_first(t: &Tensor) -> Result<Tensor> {
    let t = if t.ndim() == 2 {
        t.reshape(&[t.shape()[0], t.shape()[1], 1])?
    } else {
        t.clone()
    };
    Ok(t.permute(&[1, 0, 2])?)
}

/// Conditioning vectors `[A_{k+1}, Ā_k, C̄_k, Y_k]` for the `Z ⟂ Y` pair weights, `[P, n, ·]`.
pub fn zy_condition(batch: &Batch, repr: &ReprOutputs) -> Result<Tensor> {
    let (n, p) = (batch.n, batch.len);
    let v = Tensor::concat(
        &[
            batch.a_next.clone(),
            batch.a_mean.clone(),
            repr.c_bar.detach(),
            batch.y_cur.reshape(&[n, p, 1])?,
        ],
        2,
    )?;
    Ok(v.permute(&[1, 0, 2])?)
}

/// Signed CLUB terms at every position with heads frozen; gradients reach `ψ`, `φ_Z`, `φ_C`.
pub fn mi_terms(model: &DsivModel, batch: &Batch, repr: &ReprOutputs, sigma: f64) -> Result<MiTerms> {
    if batch.len == 0 {
        return Err(Error::Config("no positions".into()));
    }
    let w = rbf_pair_weights(&zy_condition(batch, repr)?, sigma)?;
    mi_terms_weighted(model, batch, repr, &w)
}

/// [`mi_terms`] with precomputed `[P, n, n]` pair weights.
pub fn mi_terms_weighted(model: &DsivModel, batch: &Batch, repr: &ReprOutputs, w: &PairWeights) -> Result<MiTerms> {
    let h = &model.heads;
    let z = positions_first(&repr.z)?;
    let c = positions_first(&repr.c)?;
    let c_bar = positions_first(&repr.c_bar)?;
    let a = positions_first(&batch.a_next)?;
    let y = positions_first(&batch.y_next)?;
    let mean = |t: Tensor| t.mean_all();
    Ok(MiTerms {
        za: mean(club_per_position(&h.za, &z, &a, None)?).neg(),
        zy: mean(club_per_position(&h.zy, &z, &y, Some(&w.w))?),
        ca: mean(club_per_position(&h.ca, &c, &a, None)?).neg(),
        cy: mean(club_per_position(&h.cy, &c, &y, None)?).neg(),
        zc: mean(club_per_position(&h.zc, &c_bar, &z, None)?),
    })
}

pub fn mi_total_loss(model: &DsivModel, batch: &Batch, repr: &ReprOutputs, sigma: f64) -> Result<Tensor> {
    mi_terms(model, batch, repr, sigma)?.total()
}

/// Five negative mean log-likelihoods, representations detached so only the heads learn.
pub fn lld_terms(model: &DsivModel, batch: &Batch, repr: &ReprOutputs) -> Result<[Tensor; 5]> {
    if batch.len == 0 {
        return Err(Error::Config("no positions".into()));
    }
    let r = repr.detach();
    let y = batch.y_next.reshape(&[batch.n, batch.len, 1])?;
    let h = &model.heads;
    let nll = |head: &VariationalHead, cond: &Tensor, target: &Tensor| -> Result<Tensor> {
        Ok(loglik(head, cond, target)?.mean_all().neg())
    };
    Ok([
        nll(&h.za, &r.z, &batch.a_next)?,
        nll(&h.zy, &r.z, &y)?,
        nll(&h.ca, &r.c, &batch.a_next)?,
        nll(&h.cy, &r.c, &y)?,
        nll(&h.zc, &r.c_bar, &r.z)?,
    ])
}

pub fn lld_total_loss(model: &DsivModel, batch: &Batch, repr: &ReprOutputs) -> Result<Tensor> {
    let [a, b, c, d, e] = lld_terms(model, batch, repr)?;
    Ok(a.add(&b)?.add(&c)?.add(&d)?.add(&e)?)
}

/// One causal encoder pass followed by `φ_Z`, `φ_C` at every position.
pub fn decompose_history(model: &DsivModel, batch: &Batch, training: bool, rng: &mut Rng) -> Result<ReprOutputs> {
    model.represent(batch, training, rng)
}
