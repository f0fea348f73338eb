//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use moew::driver::ExperimentConfig;
use moew::nn::{self, Batch, ModelParams, OutputLoss};

/// Largest relative gap between backpropagated and central-difference gradients.
pub fn worst_gradient_error(
    params: &ModelParams,
    features: &[f64],
    dim: usize,
    weights: &[f64],
    loss: &dyn OutputLoss,
    step: f64,
) -> f64 {
    let rows: Vec<usize> = (0..weights.len()).collect();
    let batch = Batch {
        features,
        dim,
        rows: &rows,
        weights,
    };
    let (_, grad) = nn::loss_and_grad_with(params, batch, loss).unwrap();
    let analytic: Vec<f64> = grad.values().copied().collect();
    let value_at = |p: &ModelParams| nn::loss_and_grad_with(p, batch, loss).unwrap().0;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.values_mut().nth(i).unwrap() += step;
        *minus.values_mut().nth(i).unwrap() -= step;
        let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * step);
        let scale = a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

/// A toy experiment small enough to run in well under a second.
pub fn tiny_toy_config(repeats: usize, jobs: usize) -> ExperimentConfig {
    let text = format!(
        r#"
        version = 1
        seed = 5
        repeats = {repeats}
        jobs = {jobs}
        [data.toy]
        n_train = 200
        n_val = 120
        n_test = 120
        [metric]
        name = "precision_at_recall"
        target_recall = 0.9
        [model]
        hidden = [4]
        [model.train]
        steps = 80
        batch_size = 50
        [embedding]
        kind = "autoencoder"
        hidden = [4]
        dim = 2
        [embedding.train]
        steps = 60
        batch_size = 50
        [search]
        batches = 3
        batch_size = 4
        acquisition_samples = 300
        noise_seeds = 3
        [[baselines]]
        weighting = {{ kind = "toy_density_ratio" }}
        budget = 3
        [[baselines]]
        weighting = {{ kind = "random" }}
        budget = 3
        "#
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}
