//! Seeded Monte-Carlo simulation of a scenario with every selected
//! estimator fed the same measurements.

use std::collections::BTreeMap;

use dualmhe::estimators::{fie_fast_path, Estimator, EstimatorMode};
use dualmhe::memhe::Memhe;
use dualmhe::model::PolyhedralSet;
use dualmhe::qp::QpStatus;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{InitialDistribution, Method, Scenario, ScenarioConfig};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// Constrained problem failed; the projected unconstrained estimate was
    /// used instead.
    Fallback,
}

impl StepStatus {
    fn from_qp(status: QpStatus, fallback: bool) -> Self {
        match (status, fallback) {
            (_, true) => StepStatus::Fallback,
            (QpStatus::Optimal, _) => StepStatus::Optimal,
            (QpStatus::Infeasible, _) => StepStatus::Infeasible,
            (QpStatus::MaxIterations, _) => StepStatus::MaxIterations,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Infeasible => "infeasible",
            StepStatus::MaxIterations => "max_iterations",
            StepStatus::Fallback => "fallback",
        }
    }
}

/// One estimator's output along one path. Shorter than the path if the
/// estimator failed part way.
#[derive(Debug, Clone, Default)]
pub struct MethodTrace {
    pub estimates: Vec<DVector<f64>>,
    /// Error-covariance trace for the dual estimators and the KF; the
    /// least-squares objective for MEMHE.
    pub costs: Vec<f64>,
    pub statuses: Vec<StepStatus>,
    pub active_counts: Vec<usize>,
    pub failure: Option<String>,
}

impl MethodTrace {
    fn push(&mut self, x: DVector<f64>, cost: f64, status: StepStatus, active: usize) {
        self.estimates.push(x);
        self.costs.push(cost);
        self.statuses.push(status);
        self.active_counts.push(active);
    }
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    pub index: usize,
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub traces: BTreeMap<Method, MethodTrace>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkDataset {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub version: &'static str,
    pub constraint: Option<PolyhedralSet>,
    pub paths: Vec<PathRecord>,
}

impl BenchmarkDataset {
    pub fn methods(&self) -> &[Method] {
        &self.config.methods
    }

    /// Hex SHA-256 over every number and status in the dataset.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        for p in &self.paths {
            put(p.index as f64);
            p.states.iter().chain(&p.measurements).flatten().for_each(|&v| put(v));
            for trace in p.traces.values() {
                trace.estimates.iter().flatten().for_each(|&v| put(v));
                trace.costs.iter().for_each(|&v| put(v));
                trace.statuses.iter().for_each(|s| put(*s as u8 as f64));
                trace.active_counts.iter().for_each(|&c| put(c as f64));
                put(trace.failure.is_some() as u8 as f64);
            }
        }
        hex::encode(h.finalize())
    }
}

/// `L` with `L Lᵀ = cov`: Cholesky when possible, otherwise the symmetric
/// eigenvalue square root (clipping tiny negative eigenvalues).
pub fn covariance_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let eig = SymmetricEigen::new(dualmhe::linalg::symmetrize(cov));
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Generator for path `index`: stream `index` of the master seed, so a path
/// does not depend on which thread runs it.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Sampler {
    initial: InitialDistribution,
    initial_sqrt: Option<DMatrix<f64>>,
    process_sqrt: DMatrix<f64>,
    measurement_sqrt: DMatrix<f64>,
}

impl Sampler {
    fn new(s: &Scenario) -> Self {
        let initial_sqrt = match &s.initial {
            InitialDistribution::Gaussian { cov, .. } => Some(covariance_sqrt(cov)),
            InitialDistribution::Uniform { .. } => None,
        };
        Sampler {
            initial: s.initial.clone(),
            initial_sqrt,
            process_sqrt: covariance_sqrt(&s.process_cov),
            measurement_sqrt: covariance_sqrt(&s.measurement_cov),
        }
    }

    fn initial(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match (&self.initial, &self.initial_sqrt) {
            (InitialDistribution::Gaussian { mean, .. }, Some(l)) => mean + l * normal_vector(rng, mean.len()),
            (InitialDistribution::Uniform { lower, upper }, _) => DVector::from_fn(lower.len(), |i, _| {
                lower[i] + (upper[i] - lower[i]) * rng.random::<f64>()
            }),
            _ => unreachable!("gaussian sampler always has a square root"),
        }
    }
}

/// Simulate `x_{t+1} = A x_t + w_t`, `y_t = C x_t + v_t` for t = 0..=T.
fn simulate_path(s: &Scenario, sampler: &Sampler, index: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = path_rng(s.config.seed, index);
    let (d, q) = (s.model.state_dim(), s.model.meas_dim());
    let mut x = sampler.initial(&mut rng);
    let mut states = Vec::with_capacity(s.config.steps + 1);
    let mut ys = Vec::with_capacity(s.config.steps + 1);
    for _ in 0..=s.config.steps {
        let v = &sampler.measurement_sqrt * normal_vector(&mut rng, q);
        let w = &sampler.process_sqrt * normal_vector(&mut rng, d);
        ys.push(&s.model.C * &x + v);
        let next = &s.model.A * &x + w;
        states.push(std::mem::replace(&mut x, next));
    }
    (states, ys)
}

fn run_method(s: &Scenario, method: Method, ys: &[DVector<f64>]) -> MethodTrace {
    let mut trace = MethodTrace::default();
    let result: dualmhe::Result<()> = (|| {
        match method {
            Method::Kf => {
                for r in fie_fast_path(&s.model, ys)? {
                    trace.push(r.x_hat, r.cost_trace, StepStatus::Optimal, 0);
                }
            }
            Method::Mhe | Method::Cmhe | Method::Cfie => {
                let (mode, constraint) = match method {
                    Method::Mhe => (EstimatorMode::Mhe, None),
                    Method::Cmhe => (EstimatorMode::Cmhe, s.constraint.clone()),
                    _ => (EstimatorMode::Cfie, s.constraint.clone()),
                };
                let mut est = Estimator::new(mode, s.model.clone(), constraint, s.config.horizon, &s.tol)?;
                for y in ys {
                    let r = est.step(y)?;
                    trace.push(
                        r.x_hat,
                        r.cost_trace,
                        StepStatus::from_qp(r.status, r.fallback),
                        r.active_rows.len(),
                    );
                }
            }
            Method::Memhe => {
                let mut est = Memhe::new(s.model.clone(), s.constraint.clone(), s.config.horizon, &s.tol)?;
                for y in ys {
                    let r = est.step(y)?;
                    trace.push(
                        r.x_hat,
                        r.objective,
                        StepStatus::from_qp(r.status, r.fallback),
                        r.active_rows.len(),
                    );
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        trace.failure = Some(format!("t = {}: {e}", trace.estimates.len()));
    }
    trace
}

/// Worker count from `BENCH_THREADS`, or rayon's default when unset.
pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var("BENCH_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(BenchError::Config(format!(
                "BENCH_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

pub fn simulate_paths(scenario: &Scenario) -> Result<BenchmarkDataset> {
    let sampler = Sampler::new(scenario);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let paths = pool.install(|| {
        (0..scenario.config.paths)
            .into_par_iter()
            .map(|i| {
                let (states, measurements) = simulate_path(scenario, &sampler, i);
                let traces = scenario
                    .config
                    .methods
                    .iter()
                    .map(|&m| (m, run_method(scenario, m, &measurements)))
                    .collect();
                PathRecord {
                    index: i,
                    states,
                    measurements,
                    traces,
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(BenchmarkDataset {
        config: scenario.config.clone(),
        config_hash: scenario.config.hash(),
        version: env!("CARGO_PKG_VERSION"),
        constraint: scenario.constraint.clone(),
        paths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsePoint {
    pub t: usize,
    pub mse: f64,
    /// Standard error of the mean of the squared errors.
    pub std_error: f64,
    /// Paths contributing at this t.
    pub count: usize,
}

fn trace_of(path: &PathRecord, method: Method) -> Result<&MethodTrace> {
    path.traces
        .get(&method)
        .ok_or_else(|| BenchError::UnknownEstimator(method.name().to_string()))
}

/// Per-t sample mean and standard error of `‖x_t − x̂_t‖²`, summed in path
/// order.
pub fn mse_statistics(dataset: &BenchmarkDataset, method: Method) -> Result<Vec<MsePoint>> {
    if !dataset.methods().contains(&method) {
        return Err(BenchError::UnknownEstimator(method.name().to_string()));
    }
    let steps = dataset.config.steps + 1;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut sq = Vec::with_capacity(dataset.paths.len());
        for p in &dataset.paths {
            if let Some(x_hat) = trace_of(p, method)?.estimates.get(t) {
                sq.push((&p.states[t] - x_hat).norm_squared());
            }
        }
        let n = sq.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            sq.iter().sum::<f64>() / n as f64
        };
        let std_error = if n < 2 {
            f64::NAN
        } else {
            let var = sq.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        out.push(MsePoint {
            t,
            mse: mean,
            std_error,
            count: n,
        });
    }
    Ok(out)
}

/// `e_t = (1/N_s) Σ_i ‖x_t^i − x̂_t^i‖²`.
pub fn empirical_mse(dataset: &BenchmarkDataset, method: Method) -> Result<Vec<(usize, f64)>> {
    Ok(mse_statistics(dataset, method)?
        .into_iter()
        .map(|p| (p.t, p.mse))
        .collect())
}

/// Mean per-t cost over the paths that reached t.
pub fn mean_costs(dataset: &BenchmarkDataset, method: Method) -> Result<Vec<f64>> {
    let steps = dataset.config.steps + 1;
    let mut sums = vec![0.0; steps];
    let mut counts = vec![0usize; steps];
    for p in &dataset.paths {
        for (t, c) in trace_of(p, method)?.costs.iter().enumerate() {
            sums[t] += c;
            counts[t] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect())
}
