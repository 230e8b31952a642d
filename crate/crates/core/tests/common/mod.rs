#![allow(dead_code)]

use dualmhe::model::{batch_reactor, validate_model, PolyhedralSet, ToleranceConfig, ValidatedModel};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn reactor() -> (ValidatedModel, PolyhedralSet) {
    let (m, x) = batch_reactor();
    (validate_model(m, &ToleranceConfig::default()).unwrap(), x)
}

pub fn gaussian(rng: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().expect("covariance is PD").l();
    let e = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + l * e
}

/// States x_0..x_{steps−1} and measurements of a noisy run.
pub fn simulate(model: &ValidatedModel, steps: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, &model.prior_mean, &model.prior_cov);
    let zero_d = DVector::zeros(model.state_dim());
    let zero_q = DVector::zeros(model.meas_dim());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..steps {
        ys.push(&model.C * &x + gaussian(&mut rng, &zero_q, &model.R));
        xs.push(x.clone());
        x = &model.A * &x + gaussian(&mut rng, &zero_d, &model.Q);
    }
    (xs, ys)
}

/// Noiseless measurements `C A^t x0`.
pub fn nominal(model: &ValidatedModel, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
    let mut x = x0.clone();
    (0..steps)
        .map(|_| {
            let y = &model.C * &x;
            x = &model.A * &x;
            y
        })
        .collect()
}
