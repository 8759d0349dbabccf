use std::fs;
use std::path::{Path, PathBuf};

use dsiv_core::bench::{
    decide_sequence, decisions_csv, evaluate_one_step, multi_seed, oracle_regret, random_policy_regret, sweep,
    EvalReport, RegretStats,
};
use dsiv_core::cfr::fit;
use dsiv_core::model::{DsivModel, ModelMode};
use dsiv_core::simgen::{
    generate_decision_dataset, generate_simulation, load_oracle, load_panel, save_oracle, save_panel, DatasetMeta,
    GeneratorKind, PanelDataset, SplitMeta,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Verbosity};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const META: &str = "meta.json";
pub const CONFIG: &str = "config.json";
pub const CHECKPOINT: &str = "checkpoint.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn say(cfg: &RunConfig, level: Verbosity, line: impl AsRef<str>) {
    if cfg.says(level) {
        println!("{}", line.as_ref());
    }
}

/// Creates the output directory and records the resolved config in it.
fn open_out(cfg: &RunConfig) -> Result<PathBuf> {
    create_dir(&cfg.out)?;
    write(&cfg.out.join(CONFIG), &cfg.to_json())?;
    Ok(cfg.out.clone())
}

fn need<'a>(flag: &str, value: Option<&'a Path>) -> Result<&'a Path> {
    value.ok_or_else(|| CliError::config(format!("this command needs --{flag}")))
}

fn split_line(name: &str, ds: &PanelDataset) -> String {
    format!(
        "{name:<6} n = {:>6}  T = {:>4}  d_X = {:>3}  d_A = {}  treated = {:.3}",
        ds.n,
        ds.len,
        ds.x_dim,
        ds.a_dim,
        ds.treatment_rate()
    )
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gen;
    match g.kind {
        GeneratorKind::AppendixB => {
            let data = generate_simulation(g)?;
            let out = open_out(cfg)?;
            let splits = [("train", &data.train), ("val", &data.val), ("test", &data.test)];
            let mut metas = Vec::new();
            for (name, ds) in splits {
                let file = format!("{name}.csv");
                save_panel(ds, &out.join(&file), true)?;
                metas.push(SplitMeta::describe(name, &file, ds));
                say(cfg, Verbosity::Normal, split_line(name, ds));
            }
            let meta = DatasetMeta {
                generator: g.clone(),
                coefficients: data.coefficients,
                x_dim: data.train.x_dim,
                a_dim: data.train.a_dim,
                treatment: data.train.treatment,
                splits: metas,
                decision_start: None,
                tau: None,
            };
            meta.save(&out.join(META))?;
        }
        GeneratorKind::AppendixC => {
            let data = generate_decision_dataset(g)?;
            let out = open_out(cfg)?;
            let splits = [("train", &data.train), ("val", &data.val), ("test", &data.test.history)];
            let mut metas = Vec::new();
            for (name, ds) in splits {
                let file = format!("{name}.csv");
                save_panel(ds, &out.join(&file), true)?;
                metas.push(SplitMeta::describe(name, &file, ds));
                say(cfg, Verbosity::Normal, split_line(name, ds));
            }
            save_oracle(&data.test, &out.join("oracle.csv"))?;
            say(
                cfg,
                Verbosity::Normal,
                format!(
                    "oracle {} units x {} plans, window rows {}..{}",
                    data.test.n(),
                    data.test.candidates(),
                    data.test.start,
                    data.test.start + data.test.tau
                ),
            );
            let meta = DatasetMeta {
                generator: g.clone(),
                coefficients: data.coefficients,
                x_dim: data.train.x_dim,
                a_dim: data.train.a_dim,
                treatment: data.train.treatment,
                splits: metas,
                decision_start: Some(data.test.start),
                tau: Some(data.test.tau),
            };
            meta.save(&out.join(META))?;
        }
    }
    Ok(())
}

/// Generated data directory: metadata plus the panels it lists.
struct DataDir {
    dir: PathBuf,
    meta: DatasetMeta,
}

impl DataDir {
    fn open(dir: &Path) -> Result<DataDir> {
        let meta = DatasetMeta::load(&dir.join(META))?;
        Ok(DataDir {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    fn mode(&self) -> ModelMode {
        match self.meta.generator.kind {
            GeneratorKind::AppendixB => ModelMode::OneStep,
            GeneratorKind::AppendixC => ModelMode::Decision,
        }
    }

    fn panel(&self, split: &str) -> Result<PanelDataset> {
        let file = self
            .meta
            .splits
            .iter()
            .find(|s| s.name == split)
            .map(|s| s.file.clone())
            .ok_or_else(|| CliError::data(format!("metadata lists no `{split}` split")))?;
        let ds = load_panel(&self.dir.join(file))?;
        if (ds.x_dim, ds.a_dim, ds.treatment) != (self.meta.x_dim, self.meta.a_dim, self.meta.treatment) {
            return Err(CliError::data(format!(
                "`{split}` has d_X = {}, d_A = {}, metadata says d_X = {}, d_A = {}",
                ds.x_dim, ds.a_dim, self.meta.x_dim, self.meta.a_dim
            )));
        }
        Ok(ds)
    }

    fn window(&self) -> Result<(usize, usize)> {
        match (self.meta.decision_start, self.meta.tau) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(CliError::data(
                "metadata has no decision window; generate with appendix-c",
            )),
        }
    }
}

pub fn train(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let dd = DataDir::open(need("data", data)?)?;
    let train = dd.panel("train")?;
    let val = dd.panel("val")?;
    let mode = dd.mode();
    let tau = dd.meta.tau.unwrap_or(cfg.gen.tau);
    let model = DsivModel::init(cfg.model.for_data(&train, mode, tau), &train, cfg.seed)?;
    let report = fit(&model, &train, &val, &cfg.train)?;
    let out = open_out(cfg)?;
    model.save(&out.join(CHECKPOINT))?;
    write(&out.join("train_report.json"), &(report.to_json() + "\n"))?;
    write(&out.join("train_report.txt"), &report.to_text())?;
    say(cfg, Verbosity::Verbose, report.to_text().trim_end());
    match (report.best_iteration, report.best_val_mse) {
        (Some(k), Some(v)) => say(
            cfg,
            Verbosity::Normal,
            format!("best validation MSE {v:.6} at iteration {k}"),
        ),
        _ => say(
            cfg,
            Verbosity::Normal,
            "no iterations run; checkpoint holds the initialization",
        ),
    }
    Ok(())
}

/// Loads a checkpoint and checks that its architecture matches the model section.
fn load_model(cfg: &RunConfig, path: &Path) -> Result<DsivModel> {
    let model = DsivModel::load(path)?;
    let c = &model.config;
    let want = cfg.model.config(c.x_dim, c.a_dim, c.treatment, c.mode, c.tau);
    if &want != c {
        return Err(CliError::config(format!(
            "{} was trained with a different architecture than the model section describes",
            path.display()
        )));
    }
    Ok(model)
}

fn emit_eval(cfg: &RunConfig, report: &EvalReport) -> Result<()> {
    let out = open_out(cfg)?;
    write(&out.join("eval.json"), &json(report))?;
    write(&out.join("eval.txt"), &report.to_text())?;
    say(cfg, Verbosity::Verbose, report.to_text().trim_end());
    say(cfg, Verbosity::Quiet, report.summary());
    if report.complete {
        Ok(())
    } else {
        Err(CliError {
            code: crate::error::EXIT_DIVERGENCE,
            msg: format!(
                "{} of {} seeds diverged",
                report.failures.len(),
                report.seeds.len() + report.failures.len()
            ),
        })
    }
}

pub fn eval(cfg: &RunConfig, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let report = match checkpoint {
        Some(path) => {
            let model = load_model(cfg, path)?;
            let dd = DataDir::open(need("data", data)?)?;
            let test = dd.panel("test")?;
            let mse = evaluate_one_step(&model, &test)?;
            EvalReport::from_runs(vec![cfg.seed], vec![mse], cfg.experiment().fingerprint(), vec![])
        }
        None => multi_seed(&cfg.experiment(), &cfg.eval.seeds)?,
    };
    emit_eval(cfg, &report)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let grid = sweep(&cfg.eval.alphas, &cfg.eval.betas, &cfg.experiment(), &cfg.eval.seeds)?;
    let out = open_out(cfg)?;
    grid.save_csv(&out.join("sweep.csv"))?;
    write(&out.join("sweep.json"), &json(&grid))?;
    write(&out.join("sweep.txt"), &grid.to_text())?;
    say(cfg, Verbosity::Normal, grid.to_text().trim_end());
    let best = grid.argmin();
    say(
        cfg,
        Verbosity::Quiet,
        format!(
            "best cell alpha = {} beta = {}: {}",
            best.alpha,
            best.beta,
            best.report.summary()
        ),
    );
    Ok(())
}

/// Regret of the chosen plans next to the uniform-random baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub stats: RegretStats,
    pub random_policy: f64,
}

pub fn decide(cfg: &RunConfig, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let model = load_model(cfg, need("checkpoint", checkpoint)?)?;
    let dd = DataDir::open(need("data", data)?)?;
    let (start, tau) = dd.window()?;
    let history = dd.panel("test")?;
    let oracle_path = dd.dir.join("oracle.csv");
    let oracle = if oracle_path.exists() {
        Some(load_oracle(&oracle_path, history.clone(), tau, start)?)
    } else {
        None
    };
    let decisions = decide_sequence(&model, &history, start, tau)?;
    let out = open_out(cfg)?;
    write(
        &out.join("decisions.csv"),
        &decisions_csv(&decisions, tau, oracle.as_ref()),
    )?;
    say(
        cfg,
        Verbosity::Normal,
        format!("{} decisions over {} candidate plans", decisions.len(), 1usize << tau),
    );
    if let Some(o) = &oracle {
        let chosen: Vec<usize> = decisions.iter().map(|d| d.plan).collect();
        let report = RegretReport {
            stats: oracle_regret(&chosen, o)?,
            random_policy: random_policy_regret(o),
        };
        write(&out.join("regret.json"), &json(&report))?;
        say(cfg, Verbosity::Quiet, report.stats.summary());
        say(
            cfg,
            Verbosity::Normal,
            format!("random policy regret avg {:.4}", report.random_policy),
        );
    }
    Ok(())
}
