//! Browser demo over `dsiv-core`.
//!
//! Each export takes plain numbers and returns a JSON string for the page
//! to draw. The same functions run natively, which is how they are tested.

use dsiv_core::bench::{oracle_regret, random_policy_regrets, RegretStats, MAX_TAU};
use dsiv_core::decompose::rbf_pair_weights;
use dsiv_core::rng::{substream, unit_stream};
use dsiv_core::simgen::{decision_test_set, simulate_unit, Coefficients, GenConfig, Policy, Split};
use dsiv_core::tensor::Tensor;
use rand::Rng as _;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Trajectories {
    pub len: usize,
    pub y: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    /// First hidden confounder coordinate per row.
    pub u: Vec<Vec<f64>>,
    pub treated: f64,
}

/// Observational rollouts of the one-step generator.
pub fn trajectories(seed: u64, units: usize, horizon: usize) -> Result<Trajectories, String> {
    if units == 0 || units > 64 {
        return Err(format!("units must be in 1..=64, got {units}"));
    }
    let cfg = GenConfig {
        seed,
        horizon,
        n_train: units,
        n_val: 1,
        n_test: 1,
        ..GenConfig::appendix_b()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let coefs = Coefficients::draw(&cfg).map_err(|e| e.to_string())?;
    let mut out = Trajectories {
        len: horizon,
        y: Vec::new(),
        a: Vec::new(),
        u: Vec::new(),
        treated: 0.0,
    };
    for i in 0..units {
        let mut rng = unit_stream(seed, Split::Train.label(), i as u64);
        let traj = simulate_unit(&cfg, &coefs, &mut rng, horizon, Policy::Observational);
        out.treated += traj.a[1..].iter().sum::<f64>() / (horizon - 1) as f64;
        out.u.push(traj.states.iter().map(|s| s.u[0]).collect());
        out.y.push(traj.y);
        out.a.push(traj.a);
    }
    out.treated /= units as f64;
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct PairWeightView {
    pub n: usize,
    pub sigma: f64,
    pub points: Vec<[f64; 2]>,
    /// Row-major `n × n`; each row sums to one.
    pub w: Vec<f64>,
}

/// Pair weights for `n` random points in the unit square, sorted by x so
/// neighbours sit next to each other in the matrix.
pub fn pair_weights(seed: u64, n: usize, sigma: f64) -> Result<PairWeightView, String> {
    if n == 0 || n > 200 {
        return Err(format!("n must be in 1..=200, got {n}"));
    }
    let mut rng = substream(seed, "web-points");
    let mut points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    points.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let cond = Tensor::new(flat, &[n, 2]).map_err(|e| e.to_string())?;
    let w = rbf_pair_weights(&cond, sigma).map_err(|e| e.to_string())?;
    Ok(PairWeightView {
        n,
        sigma,
        points,
        w: w.w.to_vec(),
    })
}

#[derive(Debug, Serialize)]
pub struct PolicyRegret {
    pub name: String,
    pub stats: RegretStats,
}

#[derive(Debug, Serialize)]
pub struct RegretView {
    pub tau: usize,
    pub units: usize,
    pub plans: usize,
    pub policies: Vec<PolicyRegret>,
    /// Outcome of every plan for unit 0, with its best plan.
    pub example: Vec<f64>,
    pub example_best: usize,
}

/// Oracle regret of simple treatment policies on the decision test units.
pub fn policy_regrets(seed: u64, tau: usize, units: usize) -> Result<RegretView, String> {
    if tau == 0 || tau > MAX_TAU.min(8) {
        return Err(format!("tau must be in 1..=8, got {tau}"));
    }
    if units == 0 || units > 500 {
        return Err(format!("units must be in 1..=500, got {units}"));
    }
    let mut cfg = GenConfig {
        seed,
        tau,
        n_train: 1,
        n_val: 1,
        n_test: units,
        ..GenConfig::appendix_c()
    };
    cfg.horizon = cfg.history + tau + 1;
    cfg.validate().map_err(|e| e.to_string())?;
    let coefs = Coefficients::draw(&cfg).map_err(|e| e.to_string())?;
    let set = decision_test_set(&cfg, &coefs);
    let plans = set.candidates();
    let fixed = |name: &str, plan: usize| -> Result<PolicyRegret, String> {
        Ok(PolicyRegret {
            name: name.to_string(),
            stats: oracle_regret(&vec![plan; units], &set).map_err(|e| e.to_string())?,
        })
    };
    // The single plan with the best mean outcome, picked with hindsight.
    let hindsight = (0..plans)
        .max_by(|&a, &b| {
            let mean = |p: usize| set.outcomes.iter().map(|r| r[p]).sum::<f64>();
            mean(a).total_cmp(&mean(b)).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let policies = vec![
        PolicyRegret {
            name: "uniform random".into(),
            stats: RegretStats::from_regrets(random_policy_regrets(&set)),
        },
        fixed("never treat", 0)?,
        fixed("always treat", plans - 1)?,
        fixed("best fixed plan", hindsight)?,
        PolicyRegret {
            name: "oracle".into(),
            stats: oracle_regret(&set.best, &set).map_err(|e| e.to_string())?,
        },
    ];
    Ok(RegretView {
        tau,
        units,
        plans,
        policies,
        example: set.outcomes[0].clone(),
        example_best: set.best[0],
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate(seed: u32, units: u32, horizon: u32) -> Result<String, JsError> {
    to_js(trajectories(seed.into(), units as usize, horizon as usize))
}

#[wasm_bindgen]
pub fn weights(seed: u32, n: u32, sigma: f64) -> Result<String, JsError> {
    to_js(pair_weights(seed.into(), n as usize, sigma))
}

#[wasm_bindgen]
pub fn regret(seed: u32, tau: u32, units: u32) -> Result<String, JsError> {
    to_js(policy_regrets(seed.into(), tau as usize, units as usize))
}
