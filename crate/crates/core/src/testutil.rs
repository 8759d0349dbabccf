use crate::model::{DsivModel, ModelConfig, ModelMode, Standardizer};
use crate::rng::substream;
use crate::simgen::{generate_panel, Coefficients, GenConfig, PanelDataset, Policy, Split};

pub fn tiny_panel(n: usize, len: usize, seed: u64) -> PanelDataset {
    let cfg = GenConfig {
        horizon: len,
        n_train: n,
        seed,
        ..GenConfig::appendix_b()
    };
    let coefs = Coefficients::draw(&cfg).unwrap();
    generate_panel(&cfg, &coefs, Split::Train, n, Policy::Observational)
}

pub fn tiny_config(ds: &PanelDataset, mode: ModelMode) -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        heads: 2,
        ff_dim: 16,
        layers: 1,
        outcome_layers: 1,
        dropout: 0.0,
        z_dim: 3,
        c_dim: 4,
        hidden: 8,
        mode,
        tau: 2,
        ..ModelConfig::new(ds.x_dim, ds.a_dim, ds.treatment)
    }
}

pub fn tiny_model(ds: &PanelDataset, mode: ModelMode, seed: u64) -> DsivModel {
    DsivModel::new(
        tiny_config(ds, mode),
        Standardizer::fit(ds),
        &mut substream(seed, "init"),
    )
    .unwrap()
}
