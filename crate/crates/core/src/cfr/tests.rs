use proptest::prelude::*;

use super::*;
use crate::model::{ModelConfig, Standardizer};
use crate::nn::Linear;
use crate::rng::substream;
use crate::simgen::TreatmentKind;
use crate::testutil::{tiny_config, tiny_model, tiny_panel};

fn t(data: &[f64], dims: &[usize]) -> Tensor {
    Tensor::new(data.to_vec(), dims).unwrap()
}

fn quick(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 8,
        eval_every: 1,
        inner_rounds: 2,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn mse_examples() {
    let y = t(&[0.5, -1.0, 2.0, 0.0], &[2, 2]);
    assert_eq!(mse_loss(&y, &y).unwrap().item(), 0.0);
    assert_eq!(mse_loss(&y.add_scalar(1.0), &y).unwrap().item(), 1.0);
    let pred = t(&[1.0, 3.0], &[2, 1]);
    assert_eq!(mse_loss(&pred, &Tensor::zeros(&[2, 1])).unwrap().item(), 5.0);
    assert!(matches!(
        mse_loss(&pred, &Tensor::zeros(&[1, 2])),
        Err(Error::Contract(_))
    ));
}

#[test]
fn adversarial_examples() {
    let m = t(&[1.0, -1.0], &[2, 1]);
    let r = t(&[2.0, 2.0], &[2, 1]);
    let (h, f) = adversarial_loss(&m, &r, 0.25).unwrap();
    assert_eq!(h.item(), 0.0);
    // −[0 − 0.25·1]
    assert_eq!(f.item(), 0.25);

    let (h, f) = adversarial_loss(
        &Tensor::zeros(&[2, 3]),
        &t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]),
        0.25,
    )
    .unwrap();
    assert_eq!((h.item(), f.item()), (0.0, 0.0));

    let m = t(&[0.5, -2.0, 1.0], &[1, 3]);
    let (h, f) = adversarial_loss(&m, &Tensor::zeros(&[1, 3]), 0.4).unwrap();
    assert_eq!(h.item(), 0.0);
    assert!((f.item() - 0.4 * (0.25 + 4.0 + 1.0) / 3.0).abs() < 1e-15);
    assert!(adversarial_loss(&m, &Tensor::zeros(&[3, 1]), 0.4).is_err());
    assert!(adversarial_loss(&m, &Tensor::zeros(&[1, 3]), -1.0).is_err());
}

#[test]
fn adversarial_views_stop_the_right_gradients() {
    let m = Tensor::param(vec![0.3, -0.7], &[1, 2]).unwrap();
    let r = Tensor::param(vec![1.5, 0.5], &[1, 2]).unwrap();
    let (h, f) = adversarial_loss(&m, &r, 0.25).unwrap();
    h.backward().unwrap();
    assert!(m.grad().is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    assert_eq!(r.grad().unwrap(), vec![0.15, -0.35]);
    r.zero_grad();
    f.backward().unwrap();
    assert!(r.grad().is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    assert!(m.grad().is_some());
}

#[test]
fn bridge_optimum_is_half_residual_over_penalty() {
    let c = 0.25;
    let r = t(&[1.2, -0.4, 0.0, 2.5, -3.0, 0.7], &[2, 3]);
    let m = Tensor::param(vec![0.0; 6], &[2, 3]).unwrap();
    for _ in 0..200 {
        let (_, f) = adversarial_loss(&m, &r, c).unwrap();
        f.backward().unwrap();
        let g = m.grad().unwrap();
        // per-element gradient is (2cM − r)/6
        m.update_data(|d| d.iter_mut().zip(&g).for_each(|(x, gi)| *x -= 6.0 * gi));
        m.zero_grad();
    }
    for (mi, ri) in m.to_vec().iter().zip(r.to_vec()) {
        assert!((mi - ri / (2.0 * c)).abs() < 1e-3, "{mi} vs {}", ri / (2.0 * c));
    }
}

#[test]
fn overall_loss_examples() {
    let (mse, mi, adv) = (Tensor::scalar(1.0), Tensor::scalar(0.5), Tensor::scalar(-0.3));
    let (total, b) = overall_loss(&mse, &mi, &adv, 0.0, 0.0).unwrap();
    assert_eq!(total.item(), 1.0);
    assert_eq!(b.total, b.mse);
    let (_, b) = overall_loss(&mse, &mi, &adv, 1.0, 0.0).unwrap();
    assert_eq!(b.total, 1.5);
    assert!(matches!(
        overall_loss(&mse, &mi, &adv, -0.1, 0.0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        overall_loss(&mse, &mi, &adv, 0.1, -1.0),
        Err(Error::Config(_))
    ));
    let d = TrainConfig::default();
    assert_eq!((d.alpha, d.beta), (0.1, 0.1));
}

#[test]
fn predictions_shape_and_causality() {
    let ds = tiny_panel(3, 6, 2);
    let model = tiny_model(&ds, ModelMode::OneStep, 2);
    let mut rng = substream(0, "dropout");
    let one = Batch::one_step(&tiny_panel(1, 2, 2), &[0], &model.standardizer).unwrap();
    let repr = model.represent(&one, false, &mut rng).unwrap();
    assert_eq!(
        predict_outcomes(&model.outcome, &one.a_next, &repr.c, false, &mut rng)
            .unwrap()
            .shape(),
        &[1, 1]
    );

    let batch = Batch::one_step(&ds, &[0, 1, 2], &model.standardizer).unwrap();
    let repr = model.represent(&batch, false, &mut rng).unwrap();
    let base = predict_outcomes(&model.outcome, &batch.a_next, &repr.c, false, &mut rng)
        .unwrap()
        .to_vec();
    let again = predict_outcomes(&model.outcome, &batch.a_next, &repr.c, false, &mut rng)
        .unwrap()
        .to_vec();
    assert_eq!(base, again);
    let p = batch.len;
    let mut a = batch.a_next.to_vec();
    for u in 0..3 {
        a[u * p + p - 1] = 1.0 - a[u * p + p - 1];
    }
    let moved = predict_outcomes(&model.outcome, &t(&a, batch.a_next.shape()), &repr.c, false, &mut rng)
        .unwrap()
        .to_vec();
    for u in 0..3 {
        for k in 0..p - 1 {
            assert!((base[u * p + k] - moved[u * p + k]).abs() < 1e-12);
        }
        assert!((base[u * p + p - 1] - moved[u * p + p - 1]).abs() > 1e-9);
    }
    assert!(predict_outcomes(
        &model.outcome,
        &batch.a_next.narrow(1, 0, 2).unwrap(),
        &repr.c,
        false,
        &mut rng
    )
    .is_err());
}

#[test]
fn bridge_with_zero_output_layer_is_constant() {
    let mut rng = substream(1, "init");
    let f = Mlp::new(&mut rng, &[4, 5, 1]).unwrap();
    let mut layers = f.layers.clone();
    layers[1] = Linear::from_parts(
        Tensor::param(vec![0.0; 5], &[5, 1]).unwrap(),
        Tensor::param(vec![0.7], &[1]).unwrap(),
    )
    .unwrap();
    let f = Mlp::from_layers(layers).unwrap();
    let a = t(&[0.1, 0.9, 0.4, 0.2], &[2, 2, 1]);
    let c = t(&[1.0, -1.0, 0.5, 0.3, -0.2, 0.8, 2.0, 0.0], &[2, 2, 2]);
    let z = t(&[0.3, -0.3, 1.1, 0.0], &[2, 2, 1]);
    assert!(bridge_weights(&f, &a, &c, &z)
        .unwrap()
        .to_vec()
        .iter()
        .all(|v| *v == 0.7));
    assert!(matches!(bridge_weights(&f, &a, &c, &c), Err(Error::Config(_))));
}

#[test]
fn bridge_matches_hand_arithmetic() {
    // f(x) = w2·relu(W1 x + b1) + b2 with inputs [a, c, z] = [1, 2, −1]
    let w1 = Tensor::param(vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0], &[3, 2]).unwrap();
    let b1 = Tensor::param(vec![0.1, -0.2], &[2]).unwrap();
    let w2 = Tensor::param(vec![3.0, -2.0], &[2, 1]).unwrap();
    let b2 = Tensor::param(vec![0.5], &[1]).unwrap();
    let f = Mlp::from_layers(vec![
        Linear::from_parts(w1, b1).unwrap(),
        Linear::from_parts(w2, b2).unwrap(),
    ])
    .unwrap();
    let m = bridge_weights(
        &f,
        &t(&[1.0], &[1, 1, 1]),
        &t(&[2.0], &[1, 1, 1]),
        &t(&[-1.0], &[1, 1, 1]),
    )
    .unwrap();
    let h0 = (1.0 * 1.0 + 2.0 * 0.5 + -0.0 + 0.1f64).max(0.0);
    let h1 = (-1.0 + 2.0 * 2.0 + -1.0 - 0.2f64).max(0.0);
    assert!((m.item() - (3.0 * h0 - 2.0 * h1 + 0.5)).abs() < 1e-14);
}

#[test]
fn bridge_is_unit_equivariant() {
    let ds = tiny_panel(4, 5, 9);
    let model = tiny_model(&ds, ModelMode::OneStep, 9);
    let mut rng = substream(0, "dropout");
    let weights = |units: &[usize]| {
        let b = Batch::one_step(&ds, units, &model.standardizer).unwrap();
        let r = model.represent(&b, false, &mut substream(0, "dropout")).unwrap();
        model.bridge_weights(&b, &r).unwrap().to_vec()
    };
    let _ = &mut rng;
    let (fwd, rev) = (weights(&[0, 1, 2, 3]), weights(&[3, 2, 1, 0]));
    let p = ds.len - 1;
    for u in 0..4 {
        for k in 0..p {
            assert!((fwd[u * p + k] - rev[(3 - u) * p + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_iterations_leave_model_untouched() {
    let ds = tiny_panel(6, 5, 1);
    let model = tiny_model(&ds, ModelMode::OneStep, 1);
    let before = model.snapshot();
    let report = fit(&model, &ds, &ds, &quick(0)).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(report.best_iteration, None);
    assert_eq!(model.snapshot(), before);
}

fn group_snapshot(model: &DsivModel, g: Group) -> Vec<Vec<f64>> {
    model.params(g).iter().map(|(_, p)| p.to_vec()).collect()
}

#[test]
fn phases_touch_only_their_group() {
    let ds = tiny_panel(10, 6, 3);
    let model = tiny_model(&ds, ModelMode::OneStep, 3);
    let mut tr = Trainer::new(&model, quick(1)).unwrap();
    let batch = tr.next_batch(&ds).unwrap();
    let snap = |m: &DsivModel| [Group::Main, Group::Heads, Group::Bridge].map(|g| group_snapshot(m, g));

    let s0 = snap(&model);
    tr.main_step(&batch, 1).unwrap();
    let s1 = snap(&model);
    assert_ne!(s1[0], s0[0]);
    assert_eq!(s1[1], s0[1]);
    assert_eq!(s1[2], s0[2]);

    let (repr, r) = tr.frozen_view(&batch).unwrap();
    assert_eq!(snap(&model), s1);
    tr.variational_rounds(&batch, &repr, 1).unwrap();
    let s2 = snap(&model);
    assert_eq!(s2[0], s1[0]);
    assert_ne!(s2[1], s1[1]);
    assert_eq!(s2[2], s1[2]);

    tr.bridge_rounds(&batch, &repr, &r, 1).unwrap();
    let s3 = snap(&model);
    assert_eq!(s3[0], s2[0]);
    assert_eq!(s3[1], s2[1]);
    assert_ne!(s3[2], s2[2]);
}

#[test]
fn ablation_skips_inner_rounds() {
    let ds = tiny_panel(8, 5, 4);
    let model = tiny_model(&ds, ModelMode::OneStep, 4);
    let (heads, bridge) = (
        group_snapshot(&model, Group::Heads),
        group_snapshot(&model, Group::Bridge),
    );
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..quick(3)
    };
    let report = fit(&model, &ds, &ds, &cfg).unwrap();
    assert!(report
        .records
        .iter()
        .all(|r| r.lld.is_none() && r.bridge.is_none() && r.total == r.mse));
    assert_eq!(group_snapshot(&model, Group::Heads), heads);
    assert_eq!(group_snapshot(&model, Group::Bridge), bridge);
}

#[test]
fn latent_columns_do_not_reach_training() {
    let ds = tiny_panel(12, 6, 5);
    assert!(ds.latent.is_some());
    let run = |d: &PanelDataset| {
        let model = tiny_model(d, ModelMode::OneStep, 5);
        let report = fit(&model, d, d, &quick(4)).unwrap();
        (model.snapshot(), report)
    };
    let (with, r1) = run(&ds);
    let (without, r2) = run(&ds.observed());
    assert_eq!(with, without);
    assert_eq!(r1, r2);
}

#[test]
fn fit_is_reproducible() {
    let ds = tiny_panel(12, 6, 6);
    let run = || {
        let model = tiny_model(&ds, ModelMode::OneStep, 6);
        fit(&model, &ds, &ds, &quick(3)).unwrap();
        model.snapshot()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_outcome_diverges_with_iteration() {
    let mut ds = tiny_panel(6, 5, 7);
    let model = tiny_model(&ds, ModelMode::OneStep, 7);
    ds.y.iter_mut().for_each(|y| *y = f64::NAN);
    match fit(&model, &ds, &ds, &quick(2)) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn empty_validation_is_config_error() {
    let ds = tiny_panel(6, 5, 7);
    let model = tiny_model(&ds, ModelMode::OneStep, 7);
    let empty = PanelDataset {
        n: 0,
        x: vec![],
        a: vec![],
        y: vec![],
        latent: None,
        ..ds.clone()
    };
    assert!(matches!(fit(&model, &ds, &empty, &quick(1)), Err(Error::Config(_))));
}

/// `Y_{t+1} = 0.8·x_t + A_{t+1}` with coin-flip treatments.
fn linear_panel(n: usize, len: usize, seed: u64) -> PanelDataset {
    use rand::Rng as _;
    let mut rng = substream(seed, "data");
    let (mut x, mut a, mut y) = (vec![], vec![], vec![]);
    for _ in 0..n {
        let xs: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let as_: Vec<f64> = (0..len)
            .map(|t| if t > 0 && rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        for k in 0..len {
            x.push(xs[k]);
            a.push(as_[k]);
            y.push(if k == 0 { 0.0 } else { 0.8 * xs[k - 1] + as_[k] });
        }
    }
    PanelDataset {
        n,
        len,
        x_dim: 1,
        a_dim: 1,
        x,
        a,
        y,
        treatment: TreatmentKind::Binary,
        latent: None,
    }
}

#[test]
fn ablation_descends_on_linear_data() {
    let mut wins = 0;
    for seed in 0..3 {
        let train = linear_panel(64, 8, seed);
        let val = linear_panel(32, 8, seed + 100);
        let model = DsivModel::init(tiny_config(&train, ModelMode::OneStep), &train, seed).unwrap();
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            iterations: 10,
            batch_size: 64,
            eval_every: 1,
            lr: 3e-3,
            seed,
            ..TrainConfig::default()
        };
        let trace: Vec<f64> = fit(&model, &train, &val, &cfg)
            .unwrap()
            .val_trace()
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        if trace.windows(2).all(|w| w[1] < w[0]) {
            wins += 1;
        }
    }
    assert!(wins >= 2, "{wins} of 3 seeds descended");
}

#[test]
fn decision_mode_trains_on_terminal_outcome() {
    let ds = tiny_panel(10, 8, 8);
    let model = tiny_model(&ds, ModelMode::Decision, 8);
    let report = fit(&model, &ds, &ds, &quick(3)).unwrap();
    assert_eq!(report.records.len(), 3);
    let batch = eval_batch(&model, &ds, &[0, 1, 2]).unwrap();
    assert_eq!(batch.targets().unwrap().shape(), &[3, 1]);
    assert_eq!(model.predict_original_scale(&batch).unwrap().len(), 3);
}

#[test]
fn validation_mse_of_mean_predictor_is_variance() {
    let ds = tiny_panel(5, 6, 10);
    let model = tiny_model(&ds, ModelMode::OneStep, 10);
    // A zero output head predicts the training mean everywhere.
    let h = &model.outcome.head;
    h.weight.set_data(&vec![0.0; h.weight.numel()]).unwrap();
    h.bias.set_data(&[0.0]).unwrap();
    let ys: Vec<f64> = (0..ds.n)
        .flat_map(|u| (1..ds.len).map(move |k| (u, k)))
        .map(|(u, k)| ds.y_at(u, k))
        .collect();
    let mean = model.standardizer.y_mean;
    let want = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    assert!((validation_mse(&model, &ds).unwrap() - want).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip() {
    let ds = tiny_panel(6, 5, 11);
    let model = tiny_model(&ds, ModelMode::OneStep, 11);
    fit(&model, &ds, &ds, &quick(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = DsivModel::load(&path).unwrap();
    assert_eq!(back.snapshot(), model.snapshot());
    assert_eq!(back.standardizer, model.standardizer);
    assert_eq!(
        validation_mse(&back, &ds).unwrap(),
        validation_mse(&model, &ds).unwrap()
    );

    let mut ck = crate::model::Checkpoint::from_model(&model);
    ck.config.z_dim += 1;
    assert!(matches!(ck.into_model(), Err(Error::Config(_))));
}

#[test]
fn mismatched_data_is_rejected() {
    let ds = tiny_panel(6, 5, 12);
    let cfg = ModelConfig {
        x_dim: ds.x_dim + 1,
        ..tiny_config(&ds, ModelMode::OneStep)
    };
    let model = DsivModel::new(cfg, Standardizer::identity(ds.x_dim + 1), &mut substream(0, "init")).unwrap();
    assert!(matches!(fit(&model, &ds, &ds, &quick(1)), Err(Error::Config(_))));
}

#[test]
fn train_config_rejects_unknown_keys() {
    assert!(serde_json::from_str::<TrainConfig>(r#"{"alpha": 0.1, "gamma": 1}"#).is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"alpha": 0.5}"#).unwrap();
    assert_eq!((c.alpha, c.beta, c.iterations), (0.5, 0.1, 200));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_is_weighted_sum(mse in 0.0f64..10.0, mi in -5.0f64..5.0, adv in -5.0f64..5.0, alpha in 0.0f64..2.0, beta in 0.0f64..2.0) {
        let (_, b) = overall_loss(&Tensor::scalar(mse), &Tensor::scalar(mi), &Tensor::scalar(adv), alpha, beta).unwrap();
        prop_assert!((b.total - (mse + alpha * mi + beta * adv)).abs() < 1e-12);
    }
}

#[test]
fn mixed_window_starts_match_single_start_batches() {
    let ds = tiny_panel(4, 8, 13);
    let model = tiny_model(&ds, ModelMode::Decision, 13);
    let std = &model.standardizer;
    let starts = [1, 4, 6, 2];
    let mixed = Batch::decision_starts(&ds, &[0, 1, 2, 3], std, &starts, 2).unwrap();
    assert_eq!(mixed.len, 7);
    let got = model.predict_original_scale(&mixed).unwrap();
    let targets = mixed.targets().unwrap().to_vec();
    for (u, &s) in starts.iter().enumerate() {
        let single = Batch::decision(&ds, &[u], std, s, 2).unwrap();
        let want = model.predict_original_scale(&single).unwrap()[0];
        assert!((got[u] - want).abs() < 1e-10, "unit {u}: {} vs {want}", got[u]);
        assert_eq!(targets[u], single.targets().unwrap().item());
    }
    assert!(Batch::decision_starts(&ds, &[0], std, &[7], 2).is_err());
}
