//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `DSIV_ACCEPTANCE_ONLY=1,2,7` restricts the run to the listed criteria.
//! The process fails when a contract criterion (1, 2, 3, 7) fails; the
//! statistical reproductions (4, 5, 6) are reported, and also fail the
//! process under `DSIV_ACCEPTANCE_STRICT=1`.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dsiv_core::bench::{
    multi_seed_cached, random_policy_regrets, run_decision, sweep_cached, Experiment, RunCache, MAX_TAU,
};
use dsiv_core::cfr::{adversarial_loss, fit, mse_loss, TrainConfig, Trainer};
use dsiv_core::decompose::{
    club_loss, lld_total_loss, mi_terms_weighted, rbf_pair_weights, zy_condition, MiSign, TargetKind, VariationalHead,
};
use dsiv_core::model::{Batch, DsivModel, Group, ModelMode, ModelSettings};
use dsiv_core::nn::{
    EncoderBlock, EncoderConfig, LayerNorm, Linear, Mlp, Module, MultiHeadAttention, TransformerEncoder,
};
use dsiv_core::rng::{fnv1a, substream, unit_stream, Rng};
use dsiv_core::simgen::{
    drift, generate_decision_dataset, generate_simulation, load_oracle, load_panel, save_oracle, save_panel, GenConfig,
    GeneratorKind, LatentState, PanelDataset,
};
use dsiv_core::tensor::{grad_check, no_grad, Tensor, TensorError};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn tensor_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::Contract(e.to_string())
}

fn rand_tensor(rng: &mut Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    // Magnitudes stay off zero so no check sits on a kink or a vanishing gradient.
    let draw = |rng: &mut Rng| {
        let v: f64 = rng.random_range(0.5..2.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    };
    Tensor::param((0..n).map(|_| draw(rng)).collect(), dims).unwrap()
}

fn const_tensor(rng: &mut Rng, dims: &[usize]) -> Tensor {
    rand_tensor(rng, dims).detach()
}

/// Worst relative error over all named checks, failing on the first miss.
struct GradTally {
    worst: f64,
    count: usize,
    misses: Vec<String>,
}

impl GradTally {
    fn new() -> Self {
        GradTally {
            worst: 0.0,
            count: 0,
            misses: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, params: &[Tensor], build: impl FnMut() -> dsiv_core::tensor::Result<Tensor>) {
        match grad_check(build, params, 1e-5, 1e-4) {
            Ok(r) => {
                self.count += 1;
                self.worst = self.worst.max(r.worst());
                if !r.pass {
                    self.misses.push(format!("{name}: {:.2e}", r.worst()));
                }
            }
            Err(e) => self.misses.push(format!("{name}: {e}")),
        }
    }

    /// Parameters whose exact gradient is zero: compared in absolute terms.
    fn zero(&mut self, name: &str, params: &[Tensor], loss: &Tensor) {
        params.iter().for_each(|p| p.zero_grad());
        if let Err(e) = loss.backward() {
            self.misses.push(format!("{name}: {e}"));
            return;
        }
        let worst = params
            .iter()
            .flat_map(|p| p.grad().unwrap_or_default())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        self.count += 1;
        if worst > 1e-10 {
            self.misses.push(format!("{name}: |grad| {worst:.2e}"));
        }
    }
}

fn split_key_bias(params: Vec<(String, Tensor)>) -> (Vec<Tensor>, Vec<Tensor>) {
    let (kb, rest): (Vec<_>, Vec<_>) = params.into_iter().partition(|(n, _)| n.ends_with("key.bias"));
    (
        kb.into_iter().map(|(_, p)| p).collect(),
        rest.into_iter().map(|(_, p)| p).collect(),
    )
}

fn op_gradients(t: &mut GradTally) {
    let mut rng = substream(1, "acceptance-ops");
    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    let w = const_tensor(&mut rng, &[2, 3, 4]);
    let unary: [(&str, fn(&Tensor) -> Tensor); 10] = [
        ("exp", |x| x.exp()),
        ("sin", |x| x.sin()),
        ("cos", |x| x.cos()),
        ("square", |x| x.square()),
        ("sigmoid", |x| x.sigmoid()),
        ("tanh", |x| x.tanh()),
        ("log_sigmoid", |x| x.log_sigmoid()),
        ("neg_scale_shift", |x| x.neg().scale(1.7).add_scalar(0.3)),
        ("clamp", |x| x.clamp(-5.0, 5.0)),
        ("relu", |x| x.add_scalar(0.0).relu()),
    ];
    for (name, op) in unary {
        t.check(name, std::slice::from_ref(&x), || Ok(op(&x).mul(&w)?.sum_all()));
    }
    let pos = Tensor::param(x.to_vec().iter().map(|v| v.abs() + 0.1).collect(), &[2, 3, 4]).unwrap();
    t.check("log", std::slice::from_ref(&pos), || Ok(pos.log()?.mul(&w)?.sum_all()));

    let y = rand_tensor(&mut rng, &[2, 3, 4]);
    let m = rand_tensor(&mut rng, &[4, 5]);
    let bm = rand_tensor(&mut rng, &[2, 4, 2]);
    let all = [x.clone(), y.clone(), m.clone(), bm.clone()];
    let checks: Vec<(&str, Box<dyn Fn() -> dsiv_core::tensor::Result<Tensor>>)> = vec![
        ("add", Box::new(|| Ok(x.add(&y)?.square().sum_all()))),
        ("sub", Box::new(|| Ok(x.sub(&y)?.sin().sum_all()))),
        ("mul", Box::new(|| Ok(x.mul(&y)?.sum_all()))),
        ("div", Box::new(|| Ok(x.div(&y.square().add_scalar(0.5))?.sum_all()))),
        ("matmul", Box::new(|| Ok(x.matmul(&m)?.square().sum_all()))),
        ("matmul_batched", Box::new(|| Ok(x.matmul(&bm)?.square().sum_all()))),
        ("softmax", Box::new(|| Ok(x.softmax(2)?.mul(&w)?.sum_all()))),
        ("softmax_mid", Box::new(|| Ok(x.softmax(1)?.square().sum_all()))),
        ("sum_axis", Box::new(|| Ok(x.sum_axis(1, false)?.square().sum_all()))),
        ("mean_axis", Box::new(|| Ok(x.mean_axis(2, true)?.sin().sum_all()))),
        ("max_axis", Box::new(|| Ok(x.max_axis(2, false)?.square().sum_all()))),
        ("mean_all", Box::new(|| Ok(x.square().mean_all()))),
        ("cumsum", Box::new(|| Ok(x.cumsum(1)?.square().sum_all()))),
        (
            "concat_narrow",
            Box::new(|| Ok(Tensor::concat(&[x.narrow(2, 1, 2)?, y.square()], 2)?.sin().sum_all())),
        ),
        (
            "permute",
            Box::new(|| Ok(x.permute(&[2, 0, 1])?.mul(&w.permute(&[2, 0, 1])?)?.square().sum_all())),
        ),
        (
            "transpose_reshape",
            Box::new(|| {
                Ok(x.transpose(1, 2)?
                    .reshape(&[8, 3])?
                    .matmul(&m.narrow(1, 0, 3)?.transpose(0, 1)?)?
                    .square()
                    .sum_all())
            }),
        ),
        (
            "layer_norm",
            Box::new(|| Ok(x.normalize_last(1e-5)?.mul(&w)?.sum_all())),
        ),
    ];
    for (name, f) in &checks {
        t.check(name, &all, f);
    }

    let mut r = substream(2, "acceptance-nn");
    let inp = const_tensor(&mut r, &[2, 3, 4]);
    let lin = Linear::new(&mut r, 4, 3).unwrap();
    let (_, p) = split_key_bias(lin.named_params(""));
    t.check("linear", &p, || {
        Ok(lin.forward(&inp).map_err(tensor_err)?.square().sum_all())
    });
    let mlp = Mlp::new(&mut r, &[4, 6, 2]).unwrap();
    let (_, p) = split_key_bias(mlp.named_params(""));
    t.check("mlp", &p, || {
        Ok(mlp.forward(&inp).map_err(tensor_err)?.square().sum_all())
    });
    let ln = LayerNorm::new(4).unwrap();
    ln.named_params("")
        .iter()
        .for_each(|(_, p)| p.update_data(|d| d.iter_mut().for_each(|v| *v += 0.3)));
    let (_, mut p) = split_key_bias(ln.named_params(""));
    let xin = rand_tensor(&mut r, &[2, 3, 4]);
    p.push(xin.clone());
    let readout = const_tensor(&mut r, &[2, 3, 4]);
    t.check("layer_norm_module", &p, || {
        Ok(ln.forward(&xin).map_err(tensor_err)?.mul(&readout)?.sum_all())
    });

    let mha = MultiHeadAttention::new(&mut r, 4, 2).unwrap();
    let (kb, p) = split_key_bias(mha.named_params(""));
    let build = || Ok(mha.forward(&inp, true).map_err(tensor_err)?.mul(&readout)?.sum_all());
    t.check("multi_head_attention", &p, build);
    t.zero("attention key bias", &kb, &build().unwrap());

    let block = EncoderBlock::new(&mut r, 4, 2, 8, 0.0).unwrap();
    let (kb, p) = split_key_bias(block.named_params(""));
    let build = || {
        let mut d = substream(0, "dropout");
        Ok(block
            .forward(&inp, true, false, &mut d)
            .map_err(tensor_err)?
            .mul(&readout)?
            .sum_all())
    };
    t.check("encoder_block", &p, build);
    t.zero("block key bias", &kb, &build().unwrap());

    let enc = TransformerEncoder::new(
        &mut r,
        EncoderConfig {
            input_dim: 4,
            model_dim: 8,
            heads: 2,
            ff_dim: 8,
            layers: 2,
            dropout: 0.0,
            causal: true,
        },
    )
    .unwrap();
    let out_w = const_tensor(&mut r, &[2, 3, 8]);
    let (kb, p) = split_key_bias(enc.named_params(""));
    let build = || {
        let mut d = substream(0, "dropout");
        Ok(enc
            .forward(&inp, false, &mut d)
            .map_err(tensor_err)?
            .mul(&out_w)?
            .sum_all())
    };
    t.check("transformer_encoder", &p, build);
    t.zero("encoder key bias", &kb, &build().unwrap());
}

fn micro_instance() -> (DsivModel, Batch) {
    let gen = GenConfig {
        z_dim: 2,
        c_dim: 3,
        u_dim: 2,
        horizon: 3,
        n_train: 4,
        n_val: 1,
        n_test: 1,
        ..GenConfig::appendix_b()
    };
    let train = generate_simulation(&gen).unwrap().train;
    let settings = ModelSettings {
        model_dim: 8,
        heads: 2,
        ff_dim: 8,
        layers: 1,
        outcome_layers: 1,
        dropout: 0.0,
        z_dim: 3,
        c_dim: 4,
        hidden: 8,
    };
    let model = DsivModel::init(settings.for_data(&train, ModelMode::OneStep, 5), &train, 3).unwrap();
    let batch = Batch::one_step(&train, &[0, 1, 2, 3], &model.standardizer).unwrap();
    (model, batch)
}

fn loss_gradients(t: &mut GradTally) {
    let (model, batch) = micro_instance();
    let targets = batch.targets().unwrap();
    let rep = |m: &DsivModel| {
        let mut d = substream(0, "dropout");
        m.represent(&batch, false, &mut d)
    };
    let pred = |m: &DsivModel, r: &dsiv_core::model::ReprOutputs| {
        let mut d = substream(0, "dropout");
        m.predict(&batch, r, false, &mut d)
    };
    let (main_kb, main) = split_key_bias(model.params(Group::Main));
    let (_, heads) = split_key_bias(model.params(Group::Heads));
    let (_, bridge) = split_key_bias(model.params(Group::Bridge));

    let mse = || {
        let r = rep(&model).map_err(tensor_err)?;
        mse_loss(&pred(&model, &r).map_err(tensor_err)?, &targets).map_err(tensor_err)
    };
    t.check("L_MSE", &main, mse);
    t.zero("L_MSE key bias", &main_kb, &mse().unwrap());

    // The pair weights are constants of the loss, fixed at the current point.
    let r0 = rep(&model).unwrap();
    let w = rbf_pair_weights(&zy_condition(&batch, &r0).unwrap(), 1.0).unwrap();
    let mi = || {
        let r = rep(&model).map_err(tensor_err)?;
        mi_terms_weighted(&model, &batch, &r, &w)
            .and_then(|m| m.total())
            .map_err(tensor_err)
    };
    t.check("L_MI", &main, mi);
    t.zero("L_MI key bias", &main_kb, &mi().unwrap());

    let frozen = r0.detach();
    t.check("L_LLD", &heads, || {
        lld_total_loss(&model, &batch, &frozen).map_err(tensor_err)
    });

    let m0 = no_grad(|| model.bridge_weights(&batch, &frozen)).unwrap();
    let h_view = || {
        let r = rep(&model).map_err(tensor_err)?;
        let res = pred(&model, &r).map_err(tensor_err)?.sub(&targets)?;
        Ok(adversarial_loss(&m0, &res, 0.25).map_err(tensor_err)?.0)
    };
    t.check("adversarial h view", &main, h_view);
    t.zero("adversarial key bias", &main_kb, &h_view().unwrap());

    let res0 = no_grad(|| pred(&model, &frozen)).unwrap().sub(&targets).unwrap();
    t.check("adversarial f view", &bridge, || {
        let m = model.bridge_weights(&batch, &frozen).map_err(tensor_err)?;
        Ok(adversarial_loss(&m, &res0, 0.25).map_err(tensor_err)?.1)
    });

    let total = || {
        let r = rep(&model).map_err(tensor_err)?;
        let p = pred(&model, &r).map_err(tensor_err)?;
        let mse = mse_loss(&p, &targets).map_err(tensor_err)?;
        let mi = mi_terms_weighted(&model, &batch, &r, &w)
            .and_then(|m| m.total())
            .map_err(tensor_err)?;
        let adv = adversarial_loss(&m0, &p.sub(&targets)?, 0.25).map_err(tensor_err)?.0;
        mse.add(&mi.scale(0.1))?.add(&adv.scale(0.1))
    };
    t.check("main-phase objective", &main, total);
}

fn criterion_1() -> Check {
    let mut t = GradTally::new();
    op_gradients(&mut t);
    loss_gradients(&mut t);
    if t.misses.is_empty() {
        Ok(format!(
            "{} gradient checks, worst relative error {:.2e}",
            t.count, t.worst
        ))
    } else {
        Err(t.misses.join("; "))
    }
}

fn blind_head(kind: TargetKind, cond: usize, target: usize, rng: &mut Rng) -> VariationalHead {
    let h = VariationalHead::new(rng, cond, 8, target, kind).unwrap();
    let first = &h.net.layers[0];
    let zero = Tensor::param(
        vec![0.0; first.in_dim() * first.out_dim()],
        &[first.in_dim(), first.out_dim()],
    )
    .unwrap();
    let bias = Tensor::param(
        (0..first.out_dim()).map(|i| 0.2 + 0.05 * i as f64).collect(),
        &[first.out_dim()],
    )
    .unwrap();
    let mut layers = h.net.layers.clone();
    layers[0] = Linear::from_parts(zero, bias).unwrap();
    VariationalHead::from_net(kind, target, Mlp::from_layers(layers).unwrap()).unwrap()
}

fn binary(rng: &mut Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new((0..n).map(|_| f64::from(rng.random_bool(0.5))).collect(), dims).unwrap()
}

fn criterion_2() -> Check {
    let mut rng = substream(7, "acceptance-club");
    let mut single_worst = 0.0f64;
    let mut blind_worst = 0.0f64;
    for _ in 0..20 {
        for kind in [TargetKind::Gaussian, TargetKind::Bernoulli] {
            let head = VariationalHead::new(&mut rng, 3, 8, 2, kind).unwrap();
            let target = |rng: &mut Rng, n| match kind {
                TargetKind::Gaussian => const_tensor(rng, &[n, 2]),
                TargetKind::Bernoulli => binary(rng, &[n, 2]),
            };
            let y1 = target(&mut rng, 1);
            let v = club_loss(&head, &const_tensor(&mut rng, &[1, 3]), &y1, MiSign::MinimizeMi)
                .map_err(|e| e.to_string())?;
            single_worst = single_worst.max(v.item().abs());
            let n = rng.random_range(2..9);
            let blind = blind_head(kind, 3, 2, &mut rng);
            let yn = target(&mut rng, n);
            for sign in [MiSign::MinimizeMi, MiSign::MaximizeMi] {
                let v = club_loss(&blind, &const_tensor(&mut rng, &[n, 3]), &yn, sign).map_err(|e| e.to_string())?;
                blind_worst = blind_worst.max(v.item().abs());
            }
        }
    }
    let mut row_worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..12);
        let sigma = rng.random_range(0.05..5.0);
        let w = rbf_pair_weights(&const_tensor(&mut rng, &[n, 4]).scale(3.0), sigma).map_err(|e| e.to_string())?;
        for row in w.w.to_vec().chunks(n) {
            row_worst = row_worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let ex = rbf_pair_weights(&Tensor::new(vec![0.0, 0.0, 1.0, 1.0], &[2, 2]).unwrap(), 1.0)
        .map_err(|e| e.to_string())?
        .w
        .to_vec();
    let ex_err = (ex[0] - 0.6529).abs().max((ex[1] - 0.3471).abs());
    let detail = format!(
        "n=1 |CLUB| {single_worst:.1e}, blind |CLUB| {blind_worst:.1e}, row-sum error {row_worst:.1e}, worked example [{:.6}, {:.6}]",
        ex[0], ex[1]
    );
    if single_worst == 0.0 && blind_worst <= 1e-8 && row_worst <= 1e-12 && ex_err < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn panel_checksum(ds: &PanelDataset, dir: &Path, name: &str) -> u64 {
    let path = dir.join(name);
    save_panel(ds, &path, true).unwrap();
    fnv1a(&fs::read_to_string(path).unwrap())
}

/// Independent roll-forward of the decision test units: latents from each
/// unit's stream, then the terminal outcome of every plan.
fn brute_force_oracle(cfg: &GenConfig, coef_y: &[f64], coef_seq: &[f64]) -> Vec<Vec<f64>> {
    let (start, tau) = (cfg.history + 1, cfg.tau);
    let last = start + tau - 1;
    (0..cfg.n_test)
        .map(|i| {
            let mut rng = unit_stream(cfg.seed, "test", i as u64);
            let uni = |rng: &mut Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..3.0)).collect() };
            let mut z = uni(&mut rng, cfg.z_dim);
            let mut c = uni(&mut rng, cfg.c_dim);
            let mut u: Vec<f64> = (0..cfg.u_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut hist = vec![(c.clone(), u.clone())];
            for t in 0..last - 1 {
                let (s, co) = ((t as f64).sin(), (t as f64).cos());
                let fz = uni(&mut rng, cfg.z_dim);
                let fc = uni(&mut rng, cfg.c_dim);
                let fu: Vec<f64> = (0..cfg.u_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                z = z.iter().zip(&fz).map(|(a, f)| 0.4 * a + 0.6 * f + 0.3 * s).collect();
                c = c.iter().zip(&fc).map(|(a, f)| 0.3 * a + 0.7 * f + 0.2 * s).collect();
                u = fu.iter().map(|f| f - 0.1 * co).collect();
                hist.push((c.clone(), u.clone()));
            }
            // Y at row `last` reads C, U at row `last − 1` and U at row `last − 2`.
            let (c_t, u_t) = &hist[last - 1];
            let u_prev = &hist[last - 2].1;
            let mut base = 0.0;
            for (k, v) in c_t.iter().chain(u_t).chain(u_prev).enumerate() {
                base += coef_y[k] * v;
            }
            (0..1usize << tau)
                .map(|b| {
                    let mut effect = 0.0;
                    for (j, cs) in coef_seq.iter().enumerate() {
                        // A_{last − j} is offset `tau − 1 − j` of the window.
                        let bit = ((b >> j) & 1) as f64;
                        effect += cs * bit;
                    }
                    0.2 * base - 0.5 * effect + ((last - 1) as f64).sin()
                })
                .collect()
        })
        .collect()
}

fn criterion_3() -> Check {
    let mut notes = Vec::new();
    let mut fails = Vec::new();

    let full = generate_simulation(&GenConfig::appendix_b()).map_err(|e| e.to_string())?;
    let shape = (full.train.x_dim, full.train.len, full.train.n, full.val.n, full.test.n);
    notes.push(format!(
        "defaults d_X = {}, T = {}, n = {}/{}/{}",
        shape.0, shape.1, shape.2, shape.3, shape.4
    ));
    if shape != (10, 100, 10_000, 1_000, 1_000) {
        fails.push("default shapes".to_string());
    }

    let dir = tempfile::tempdir().unwrap();
    let small = GenConfig {
        n_train: 300,
        n_val: 50,
        n_test: 50,
        ..GenConfig::appendix_b()
    };
    let sums = |cfg: &GenConfig, tag: &str| {
        let d = generate_simulation(cfg).unwrap();
        [("train", &d.train), ("val", &d.val), ("test", &d.test)]
            .map(|(n, ds)| panel_checksum(ds, dir.path(), &format!("{tag}-{n}.csv")))
    };
    let (a, b) = (sums(&small, "a"), sums(&small, "b"));
    let other = sums(
        &GenConfig {
            seed: 1,
            ..small.clone()
        },
        "c",
    );
    if a != b || a == other {
        fails.push("seeded regeneration".to_string());
    }

    let mut rng = substream(11, "acceptance-drift");
    let mut drift_err = 0.0f64;
    for kind in [GeneratorKind::AppendixB, GeneratorKind::AppendixC] {
        let hi = if kind == GeneratorKind::AppendixB { 1.0 } else { 3.0 };
        let state = LatentState {
            z: vec![0.7, -0.2],
            c: vec![1.1],
            u: vec![0.4],
        };
        for t in [0usize, 3, 7] {
            let n = 200_000;
            let mut sums = [0.0; 4];
            for _ in 0..n {
                let s = drift(&state, t, kind, &mut rng);
                sums[0] += s.z[0];
                sums[1] += s.z[1];
                sums[2] += s.c[0];
                sums[3] += s.u[0];
            }
            let (st, ct) = ((t as f64).sin(), (t as f64).cos());
            let want = [
                0.4 * 0.7 + 0.6 * hi / 2.0 + 0.3 * st,
                0.4 * -0.2 + 0.6 * hi / 2.0 + 0.3 * st,
                0.3 * 1.1 + 0.7 * hi / 2.0 + 0.2 * st,
                -0.1 * ct,
            ];
            for (s, w) in sums.iter().zip(want) {
                drift_err = drift_err.max((s / n as f64 - w).abs());
            }
        }
    }
    notes.push(format!("drift mean error {drift_err:.4}"));
    if drift_err >= 0.01 {
        fails.push("drift means".to_string());
    }

    let cfg = GenConfig::appendix_c();
    let data = generate_decision_dataset(&cfg).map_err(|e| e.to_string())?;
    let brute = brute_force_oracle(&cfg, &data.coefficients.coef_y, &data.coefficients.coef_seq);
    let exact = data.test.n() == 100 && data.test.outcomes.iter().all(|r| r.len() == 32) && brute == data.test.outcomes;
    let max_diff = brute
        .iter()
        .flatten()
        .zip(data.test.outcomes.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    notes.push(format!(
        "oracle {} units x 32 plans, max |diff| {max_diff:.1e}",
        data.test.n()
    ));
    if !exact {
        fails.push("oracle roll-forward".to_string());
    }

    let detail = notes.join(", ");
    if fails.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} [failed: {}]", fails.join(", ")))
    }
}

fn desk_scale() -> Experiment {
    Experiment {
        gen: GenConfig {
            n_train: 2_000,
            n_val: 500,
            n_test: 500,
            horizon: 20,
            ..GenConfig::appendix_b()
        },
        model: ModelSettings::default(),
        train: TrainConfig::default(),
    }
}

fn with_weights(exp: &Experiment, alpha: f64, beta: f64) -> Experiment {
    let mut e = exp.clone();
    e.train.alpha = alpha;
    e.train.beta = beta;
    e
}

fn criterion_4(cache: &mut RunCache) -> Check {
    let base = desk_scale();
    let seeds = [0, 1, 2];
    let full = multi_seed_cached(&with_weights(&base, 0.1, 0.1), &seeds, cache).map_err(|e| e.to_string())?;
    let ablation = multi_seed_cached(&with_weights(&base, 0.0, 0.0), &seeds, cache).map_err(|e| e.to_string())?;
    if !full.complete || !ablation.complete {
        return Err(format!("diverged runs: {:?} {:?}", full.failures, ablation.failures));
    }
    let wins = full
        .per_seed
        .iter()
        .zip(&ablation.per_seed)
        .filter(|(f, a)| f < a)
        .count();
    let gain = 1.0 - full.mean / ablation.mean;
    let per: Vec<String> = full
        .per_seed
        .iter()
        .zip(&ablation.per_seed)
        .map(|(f, a)| format!("{f:.4}/{a:.4}"))
        .collect();
    let detail = format!(
        "full {:.4} vs ablation {:.4}: gain {:.1}% (need >= 10%), below in {wins} of 3 seeds [{}]",
        full.mean,
        ablation.mean,
        100.0 * gain,
        per.join(" ")
    );
    if gain >= 0.10 && wins >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5(cache: &mut RunCache) -> Check {
    let grid = [0.0, 0.01, 0.1, 1.0];
    let g = sweep_cached(&grid, &grid, &desk_scale(), &[0, 1], cache).map_err(|e| e.to_string())?;
    let best = g.argmin();
    let origin = g.cell(0.0, 0.0).ok_or("no (0, 0) cell")?;
    let incomplete = g.cells.iter().filter(|c| !c.report.complete).count();
    let detail = format!(
        "minimum at alpha = {}, beta = {} ({:.4}); (0, 0) cell {:.4}; {incomplete} incomplete cells",
        best.alpha, best.beta, best.report.mean, origin.report.mean
    );
    if (best.alpha, best.beta) != (0.0, 0.0) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Check {
    let exp = Experiment {
        gen: GenConfig::appendix_c(),
        model: ModelSettings::default(),
        train: TrainConfig::default(),
    };
    let mut below = 0;
    let mut parts = Vec::new();
    let mut contract = true;
    for seed in [0, 1, 2] {
        let run = run_decision(&exp, seed).map_err(|e| e.to_string())?;
        let data = generate_decision_dataset(&exp.with_seed(seed).gen).map_err(|e| e.to_string())?;
        let random: f64 = random_policy_regrets(&data.test).iter().sum::<f64>() / data.test.n() as f64;
        contract &= run.regret.regrets.len() == 100
            && run.regret.regrets.iter().all(|r| *r >= 0.0)
            && run.decisions.iter().all(|d| d.candidates.len() == 32)
            && data.test.outcomes.iter().all(|r| r.len() == 32)
            && random == run.random_regret;
        if run.regret.avg < random {
            below += 1;
        }
        parts.push(format!("seed {seed}: {:.4} vs random {:.4}", run.regret.avg, random));
    }
    let detail = format!(
        "{}; below random in {below} of 3; per-unit contract {}",
        parts.join(", "),
        if contract { "ok" } else { "violated" }
    );
    if below >= 2 && contract && 5 <= MAX_TAU {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dsiv(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dsiv"))
        .args(args)
        .arg("--quiet")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("dsiv {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every file of `a` equals its namesake in `b`; `config.json` is compared
/// with the output directory removed.
fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    for entry in fs::read_dir(a).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let (x, y) = (
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).map_err(|e| e.to_string())?,
        );
        let equal = if name == "config.json" {
            let strip = |v: &[u8]| {
                let mut doc: serde_json::Value = serde_json::from_slice(v).unwrap();
                doc.as_object_mut().unwrap().remove("out");
                doc
            };
            strip(&x) == strip(&y)
        } else {
            x == y
        };
        if !equal {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        n += 1;
    }
    Ok(n)
}

fn cli_reruns(dir: &Path) -> Result<usize, String> {
    let s = |p: &str| dir.join(p).display().to_string();
    let model = r#""model": {"model_dim": 8, "heads": 2, "ff_dim": 16, "layers": 1, "outcome_layers": 1, "z_dim": 3, "c_dim": 4, "hidden": 8}"#;
    let train = r#""train": {"iterations": 3, "batch_size": 16, "eval_every": 1}"#;
    fs::write(
        dir.join("b.json"),
        format!(r#"{{"seed": 4, "gen": {{"n_train": 24, "n_val": 8, "n_test": 8, "horizon": 7}}, {model}, {train}}}"#),
    )
    .unwrap();
    fs::write(
        dir.join("c.json"),
        format!(r#"{{"seed": 4, "gen": {{"kind": "appendix-c", "n_train": 24, "n_val": 8}}, {model}, {train}}}"#),
    )
    .unwrap();
    let mut files = 0;
    for (tag, cfg, tail) in [("b", "b.json", "eval"), ("c", "c.json", "decide")] {
        let run = |r: &str, cfg: &str| -> Result<(), String> {
            dsiv(&["gen", "--config", cfg, "--out", &s(&format!("{tag}{r}-data"))])?;
            let resolved = s(&format!("{tag}{r}-data/config.json"));
            dsiv(&[
                "train",
                "--config",
                &resolved,
                "--data",
                &s(&format!("{tag}{r}-data")),
                "--out",
                &s(&format!("{tag}{r}-run")),
            ])?;
            let resolved = s(&format!("{tag}{r}-run/config.json"));
            dsiv(&[
                tail,
                "--config",
                &resolved,
                "--data",
                &s(&format!("{tag}{r}-data")),
                "--checkpoint",
                &s(&format!("{tag}{r}-run/checkpoint.json")),
                "--out",
                &s(&format!("{tag}{r}-{tail}")),
            ])
        };
        run("1", &s(cfg))?;
        // Second pass starts from the first pass's resolved config.
        run("2", &s(&format!("{tag}1-data/config.json")))?;
        for part in ["data", "run", tail] {
            files += same_dirs(&dir.join(format!("{tag}1-{part}")), &dir.join(format!("{tag}2-{part}")))?;
        }
    }
    dsiv(&["eval", "--config", &s("b1-run/config.json"), "--out", &s("multi1")])?;
    dsiv(&["eval", "--config", &s("b1-run/config.json"), "--out", &s("multi2")])?;
    files += same_dirs(&dir.join("multi1"), &dir.join("multi2"))?;
    Ok(files)
}

fn csv_round_trips(dir: &Path) -> Result<(), String> {
    let b = generate_simulation(&GenConfig {
        n_train: 40,
        n_val: 5,
        n_test: 5,
        horizon: 12,
        ..GenConfig::appendix_b()
    })
    .map_err(|e| e.to_string())?;
    for (i, ds) in [&b.train, &b.test].into_iter().enumerate() {
        let p = dir.join(format!("rt{i}.csv"));
        save_panel(ds, &p, true).map_err(|e| e.to_string())?;
        if &load_panel(&p).map_err(|e| e.to_string())? != ds {
            return Err("panel with latents".into());
        }
        save_panel(ds, &p, false).map_err(|e| e.to_string())?;
        if load_panel(&p).map_err(|e| e.to_string())? != ds.observed() {
            return Err("observed panel".into());
        }
    }
    let c = generate_decision_dataset(&GenConfig {
        n_train: 8,
        n_val: 4,
        ..GenConfig::appendix_c()
    })
    .map_err(|e| e.to_string())?;
    let p = dir.join("oracle.csv");
    save_oracle(&c.test, &p).map_err(|e| e.to_string())?;
    let back = load_oracle(&p, c.test.history.clone(), c.test.tau, c.test.start).map_err(|e| e.to_string())?;
    if back != c.test {
        return Err("oracle table".into());
    }
    Ok(())
}

fn small_model(ds: &PanelDataset, mode: ModelMode, seed: u64) -> DsivModel {
    let settings = ModelSettings {
        model_dim: 8,
        heads: 2,
        ff_dim: 16,
        layers: 1,
        outcome_layers: 1,
        dropout: 0.1,
        z_dim: 3,
        c_dim: 4,
        hidden: 8,
    };
    DsivModel::init(settings.for_data(ds, mode, 2), ds, seed).unwrap()
}

fn small_train() -> TrainConfig {
    TrainConfig {
        iterations: 4,
        batch_size: 8,
        eval_every: 1,
        inner_rounds: 2,
        ..TrainConfig::default()
    }
}

fn latent_guard() -> Result<(), String> {
    let gen = GenConfig {
        n_train: 16,
        n_val: 6,
        n_test: 2,
        horizon: 8,
        ..GenConfig::appendix_b()
    };
    let data = generate_simulation(&gen).map_err(|e| e.to_string())?;
    let run = |train: &PanelDataset, val: &PanelDataset| {
        let model = small_model(train, ModelMode::OneStep, 2);
        let report = fit(&model, train, val, &small_train()).unwrap();
        (model.snapshot(), report)
    };
    let with = run(&data.train, &data.val);
    let without = run(&data.train.observed(), &data.val.observed());
    // Scrambled latents must not move a single bit either.
    let mut scrambled = data.train.clone();
    if let Some(l) = scrambled.latent.as_mut() {
        l.z.iter_mut()
            .chain(l.c.iter_mut())
            .chain(l.u.iter_mut())
            .for_each(|v| *v = -*v * 3.0 + 1.0);
    }
    let noisy = run(&scrambled, &data.val);
    if with != without || with != noisy {
        return Err("latent columns changed training".into());
    }
    Ok(())
}

fn partition_holds() -> Result<usize, String> {
    let mut phases = 0;
    for (kind, mode) in [
        (GeneratorKind::AppendixB, ModelMode::OneStep),
        (GeneratorKind::AppendixC, ModelMode::Decision),
    ] {
        let gen = match kind {
            GeneratorKind::AppendixB => GenConfig {
                n_train: 12,
                n_val: 2,
                n_test: 2,
                horizon: 7,
                ..GenConfig::appendix_b()
            },
            GeneratorKind::AppendixC => GenConfig {
                n_train: 12,
                n_val: 2,
                n_test: 2,
                history: 4,
                tau: 2,
                horizon: 7,
                ..GenConfig::appendix_c()
            },
        };
        let train = match kind {
            GeneratorKind::AppendixB => generate_simulation(&gen).map_err(|e| e.to_string())?.train,
            GeneratorKind::AppendixC => generate_decision_dataset(&gen).map_err(|e| e.to_string())?.train,
        };
        let model = small_model(&train, mode, 5);
        let snap = |m: &DsivModel| {
            [Group::Main, Group::Heads, Group::Bridge]
                .map(|g| m.params(g).iter().map(|(_, p)| p.to_vec()).collect::<Vec<_>>())
        };
        let mut tr = Trainer::new(&model, small_train()).map_err(|e| e.to_string())?;
        for k in 1..=3 {
            let batch = tr.next_batch(&train).map_err(|e| e.to_string())?;
            let s0 = snap(&model);
            tr.main_step(&batch, k).map_err(|e| e.to_string())?;
            let s1 = snap(&model);
            let (repr, r) = tr.frozen_view(&batch).map_err(|e| e.to_string())?;
            if snap(&model) != s1 {
                return Err("frozen view moved parameters".into());
            }
            tr.variational_rounds(&batch, &repr, k).map_err(|e| e.to_string())?;
            let s2 = snap(&model);
            tr.bridge_rounds(&batch, &repr, &r, k).map_err(|e| e.to_string())?;
            let s3 = snap(&model);
            let ok = s1[0] != s0[0]
                && s1[1] == s0[1]
                && s1[2] == s0[2]
                && s2[0] == s1[0]
                && s2[1] != s1[1]
                && s2[2] == s1[2]
                && s3[0] == s2[0]
                && s3[1] == s2[1]
                && s3[2] != s2[2];
            if !ok {
                return Err(format!("{mode:?} iteration {k}: a phase touched a foreign group"));
            }
            phases += 3;
        }
    }
    Ok(phases)
}

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let files = cli_reruns(dir.path())?;
    csv_round_trips(dir.path())?;
    latent_guard()?;
    let phases = partition_holds()?;
    Ok(format!(
        "{files} rerun artifacts bitwise equal, CSV round trips exact, latent guard holds, {phases} phases kept to their groups"
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("DSIV_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("DSIV_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut cache = RunCache::new();
    let criteria: [(usize, &str, bool); 7] = [
        (1, "gradient fidelity", true),
        (2, "CLUB identities", true),
        (3, "generator fidelity", true),
        (4, "deconfounding at desk scale", false),
        (5, "sweep shape", false),
        (6, "decision regret", false),
        (7, "reproducibility and contracts", true),
    ];
    let mut passed = 0;
    let mut ran = 0;
    let mut fatal = false;
    for (k, name, contract) in criteria {
        if !wanted(k) {
            continue;
        }
        let t0 = Instant::now();
        let result = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&mut cache),
            5 => criterion_5(&mut cache),
            6 => criterion_6(),
            _ => criterion_7(),
        };
        let secs = t0.elapsed().as_secs_f64();
        ran += 1;
        match result {
            Ok(d) => {
                passed += 1;
                println!("[PASS] {k} {name}: {d} ({secs:.1} s)");
            }
            Err(d) => {
                fatal |= contract || strict;
                println!("[FAIL] {k} {name}: {d} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {passed} of {ran} criteria passed");
    if fatal {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
