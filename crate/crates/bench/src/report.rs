//! Aggregates and on-disk artifacts of a benchmark run.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Method, ScenarioConfig};
use crate::error::{BenchError, Result};
use crate::simulate::{mean_costs, mse_statistics, simulate_paths, BenchmarkDataset, StepStatus};

/// Tolerance of the constraint audit on reported estimates.
pub const CONSTRAINT_AUDIT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub out: Option<PathBuf>,
    pub dump_trajectories: bool,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ScenarioConfig) -> ScenarioConfig {
        if let Some(p) = self.paths {
            cfg.paths = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.horizon {
            cfg.horizon = n;
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.dump_trajectories |= self.dump_trajectories;
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    /// Mean of e_t over all t.
    pub mean_mse: f64,
    pub final_mse: f64,
    pub max_mse: f64,
    pub mean_cost: f64,
    pub failed_paths: usize,
    pub fallback_steps: usize,
    pub non_optimal_steps: usize,
    /// Optimal estimates audited against the constraint set.
    pub audited_estimates: usize,
    pub constraint_violations: usize,
    pub max_constraint_violation: f64,
}

/// CMHE against CFIE on the same paths.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    /// max over paths and t of |‖x̂^{cm}_t‖ − ‖x̂^{cf}_t‖|
    pub max_abs_norm_diff: f64,
    /// max over paths and t of |cost^{cm}_t − cost^{cf}_t|
    pub max_abs_cost_diff: f64,
    pub max_norm_cfie: f64,
    pub max_cost_cfie: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_digest: String,
    pub version: String,
    pub paths: usize,
    pub steps: usize,
    pub horizon: usize,
    pub obs_index: usize,
    pub prior_mismatch: bool,
    pub methods: BTreeMap<Method, MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmhe_vs_cfie: Option<Comparison>,
}

fn method_summary(ds: &BenchmarkDataset, method: Method) -> Result<MethodSummary> {
    let stats = mse_statistics(ds, method)?;
    let finite: Vec<f64> = stats.iter().map(|p| p.mse).filter(|v| v.is_finite()).collect();
    let costs = mean_costs(ds, method)?;
    let finite_costs: Vec<f64> = costs.iter().copied().filter(|v| v.is_finite()).collect();
    let mut s = MethodSummary {
        mean_mse: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
        final_mse: stats.last().map_or(f64::NAN, |p| p.mse),
        max_mse: finite.iter().copied().fold(f64::NAN, f64::max),
        mean_cost: finite_costs.iter().sum::<f64>() / finite_costs.len().max(1) as f64,
        failed_paths: 0,
        fallback_steps: 0,
        non_optimal_steps: 0,
        audited_estimates: 0,
        constraint_violations: 0,
        max_constraint_violation: f64::NEG_INFINITY,
    };
    let audit = matches!(method, Method::Cmhe | Method::Cfie | Method::Memhe);
    for p in &ds.paths {
        let trace = &p.traces[&method];
        s.failed_paths += trace.failure.is_some() as usize;
        for (x, status) in trace.estimates.iter().zip(&trace.statuses) {
            match status {
                StepStatus::Optimal => {}
                StepStatus::Fallback => {
                    s.fallback_steps += 1;
                    s.non_optimal_steps += 1;
                }
                _ => s.non_optimal_steps += 1,
            }
            if let (true, StepStatus::Optimal, Some(set)) = (audit, status, &ds.constraint) {
                let v = set.max_violation(x)?;
                s.audited_estimates += 1;
                s.max_constraint_violation = s.max_constraint_violation.max(v);
                s.constraint_violations += (v > CONSTRAINT_AUDIT_TOL) as usize;
            }
        }
    }
    Ok(s)
}

fn comparison(ds: &BenchmarkDataset) -> Option<Comparison> {
    if !(ds.methods().contains(&Method::Cmhe) && ds.methods().contains(&Method::Cfie)) {
        return None;
    }
    let mut c = Comparison {
        max_abs_norm_diff: 0.0,
        max_abs_cost_diff: 0.0,
        max_norm_cfie: 0.0,
        max_cost_cfie: 0.0,
    };
    for p in &ds.paths {
        let (cm, cf) = (&p.traces[&Method::Cmhe], &p.traces[&Method::Cfie]);
        for (a, b) in cm.estimates.iter().zip(&cf.estimates) {
            c.max_abs_norm_diff = c.max_abs_norm_diff.max((a.norm() - b.norm()).abs());
            c.max_norm_cfie = c.max_norm_cfie.max(b.norm());
        }
        for (a, b) in cm.costs.iter().zip(&cf.costs) {
            c.max_abs_cost_diff = c.max_abs_cost_diff.max((a - b).abs());
            c.max_cost_cfie = c.max_cost_cfie.max(*b);
        }
    }
    Some(c)
}

pub fn summarize(ds: &BenchmarkDataset, obs_index: usize, prior_mismatch: bool) -> Result<Summary> {
    let methods = ds
        .methods()
        .iter()
        .map(|&m| Ok((m, method_summary(ds, m)?)))
        .collect::<Result<_>>()?;
    Ok(Summary {
        config: ds.config.clone(),
        seed: ds.config.seed,
        config_hash: ds.config_hash.clone(),
        dataset_digest: ds.digest(),
        version: ds.version.to_string(),
        paths: ds.config.paths,
        steps: ds.config.steps,
        horizon: ds.config.horizon,
        obs_index,
        prior_mismatch,
        methods,
        cmhe_vs_cfie: comparison(ds),
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| BenchError::io(path, e))
}

pub fn write_mse_csv(ds: &BenchmarkDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend(ds.methods().iter().map(|m| format!("e_{m}")));
    w.write_record(&header)?;
    let cols = ds
        .methods()
        .iter()
        .map(|&m| mse_statistics(ds, m))
        .collect::<Result<Vec<_>>>()?;
    for t in 0..=ds.config.steps {
        let mut row = vec![t.to_string()];
        row.extend(cols.iter().map(|c| c[t].mse.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

/// Mean cost per t. Columns are `cost_<method>`, except MEMHE whose
/// least-squares objective is written as `objective_memhe`.
pub fn write_costs_csv(ds: &BenchmarkDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend(ds.methods().iter().map(|&m| match m {
        Method::Memhe => "objective_memhe".to_string(),
        m => format!("cost_{m}"),
    }));
    w.write_record(&header)?;
    let cols = ds
        .methods()
        .iter()
        .map(|&m| mean_costs(ds, m))
        .collect::<Result<Vec<_>>>()?;
    for t in 0..=ds.config.steps {
        let mut row = vec![t.to_string()];
        row.extend(cols.iter().map(|c| c[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

/// One row per (path, t): true state, measurement and every estimate.
/// Missing estimates (after a failure) are left empty.
pub fn write_trajectories_csv(ds: &BenchmarkDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let Some(first) = ds.paths.first() else {
        return Ok(());
    };
    let d = first.states[0].len();
    let q = first.measurements[0].len();
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend((0..q).map(|i| format!("y_{i}")));
    for m in ds.methods() {
        header.extend((0..d).map(|i| format!("{m}_{i}")));
        header.push(format!("{m}_status"));
    }
    w.write_record(&header)?;
    for p in &ds.paths {
        for t in 0..p.states.len() {
            let mut row = vec![p.index.to_string(), t.to_string()];
            row.extend(p.states[t].iter().map(|v| v.to_string()));
            row.extend(p.measurements[t].iter().map(|v| v.to_string()));
            for m in ds.methods() {
                let trace = &p.traces[m];
                match trace.estimates.get(t) {
                    Some(x) => {
                        row.extend(x.iter().map(|v| v.to_string()));
                        row.push(trace.statuses[t].as_str().to_string());
                    }
                    None => {
                        row.extend(std::iter::repeat_n(String::new(), d));
                        row.push("failed".to_string());
                    }
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

#[derive(Debug)]
pub struct BenchOutputs {
    pub dataset: BenchmarkDataset,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

/// Simulate a scenario and write its artifacts to `config.output_dir`.
pub fn run_scenario(config: ScenarioConfig) -> Result<BenchOutputs> {
    let scenario = config.resolve()?;
    let dataset = simulate_paths(&scenario)?;
    let summary = summarize(&dataset, scenario.obs_index, scenario.prior_mismatch)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;

    let mut files = vec![dir.join("mse.csv"), dir.join("costs.csv"), dir.join("summary.json")];
    write_mse_csv(&dataset, &files[0])?;
    write_costs_csv(&dataset, &files[1])?;
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&files[2], json + "\n").map_err(|e| BenchError::io(&files[2], e))?;
    if config.dump_trajectories {
        let p = dir.join("trajectories.csv");
        write_trajectories_csv(&dataset, &p)?;
        files.push(p);
    }
    Ok(BenchOutputs {
        dataset,
        summary,
        files,
    })
}

pub fn run_benchmark(config_path: impl AsRef<Path>, overrides: &Overrides) -> Result<BenchOutputs> {
    let cfg = overrides.apply(ScenarioConfig::load(config_path)?);
    run_scenario(cfg)
}
