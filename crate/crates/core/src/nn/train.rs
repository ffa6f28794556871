use serde::{Deserialize, Serialize};

use super::{DenoiserNet, GradTape};
use crate::cloud::PointCloud;
use crate::error::{check_dim, Error, Result};
use crate::optim::{Adam, AdamParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Mean of `log σ` for the training noise distribution.
    #[serde(default = "default_p_mean")]
    pub p_mean: f64,
    /// Std of `log σ`.
    #[serde(default = "default_p_std")]
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Cosine decay of the learning rate to zero over `steps`.
    #[serde(default = "default_true")]
    pub cosine_decay: bool,
    pub seed: u64,
}

fn default_p_mean() -> f64 {
    -1.2
}
fn default_p_std() -> f64 {
    1.2
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            steps: 4000,
            lr: 2e-3,
            p_mean: default_p_mean(),
            p_std: default_p_std(),
            sigma_min: 0.01,
            sigma_max: 10.0,
            cosine_decay: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
}

/// Minimizes the preconditioned denoising loss
/// `E ‖F(c_in x, c_noise) - (x0 - c_skip x)/c_out‖²`, which equals the
/// EDM-weighted `λ(σ) ‖d(x, σ) - x0‖²`, with Adam.
pub fn train(net: &mut DenoiserNet, dataset: &PointCloud, cfg: &TrainConfig) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    check_dim(net.config().dim, dataset.dim())?;
    if !(cfg.lr > 0.0) || cfg.batch == 0 {
        return Err(Error::Config("lr and batch must be positive".into()));
    }
    if !(cfg.sigma_min > 0.0 && cfg.sigma_min < cfg.sigma_max) {
        return Err(Error::Config("need 0 < sigma_min < sigma_max".into()));
    }
    let dim = dataset.dim();
    let n = dataset.len();
    let b = cfg.batch;
    let mut r = rng::seeded(cfg.seed);
    let mut opt = Adam::new(AdamParams::with_lr(cfg.lr), net.num_params());
    let mut history = Vec::with_capacity(cfg.steps);
    let mut x0 = vec![0.0; b * dim];
    let mut xs = vec![0.0; b * dim];
    let mut sigmas = vec![0.0; b];
    let mut grad = vec![0.0; net.num_params()];

    for step in 0..cfg.steps {
        for k in 0..b {
            let i = rand::Rng::random_range(&mut r, 0..n);
            x0[k * dim..(k + 1) * dim].copy_from_slice(dataset.row(i));
            let s = (cfg.p_mean + cfg.p_std * rng::normal(&mut r)).exp();
            sigmas[k] = s.clamp(cfg.sigma_min, cfg.sigma_max);
        }
        for k in 0..b {
            for j in 0..dim {
                xs[k * dim + j] = x0[k * dim + j] + sigmas[k] * rng::normal(&mut r);
            }
        }
        let (tape, raw) = GradTape::forward(net, &xs, &sigmas);
        let mut loss = 0.0;
        let mut g_raw = vec![0.0; b * dim];
        let scale = 1.0 / (b * dim) as f64;
        for k in 0..b {
            let p = tape.preconditioning()[k];
            for j in 0..dim {
                let idx = k * dim + j;
                let target = (x0[idx] - p.c_skip * xs[idx]) / p.c_out;
                let r = raw[idx] - target;
                loss += r * r * scale;
                g_raw[idx] = 2.0 * r * scale;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        history.push(loss);
        grad.fill(0.0);
        tape.backward_raw(net, &g_raw, Some(&mut grad));
        let lr = if cfg.cosine_decay {
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos())
        } else {
            cfg.lr
        };
        opt.step(net.params_mut(), &grad, lr);
    }
    Ok(TrainReport { loss_history: history })
}


#[cfg(test)]
mod gaussian_oracle {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::nn::NetConfig;

    #[test]
    fn learns_closed_form_gaussian_denoiser() {
        let mut r = rng::seeded(17);
        let data = PointCloud::new(1, rng::normal_vec(&mut r, 20_000)).unwrap();
        let mut net = DenoiserNet::new(NetConfig::new(1, vec![32, 32]), &mut r).unwrap();
        let cfg = TrainConfig {
            steps: 3000,
            batch: 256,
            lr: 3e-3,
            p_mean: -0.5,
            p_std: 1.2,
            ..Default::default()
        };
        train(&mut net, &data, &cfg).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=30 {
            let x = -3.0 + 0.2 * i as f64;
            for j in 0..=29 {
                let s = 0.1 + 0.1 * j as f64;
                let d = net.denoise(&[x], s).unwrap()[0];
                worst = worst.max((d - x / (1.0 + s * s)).abs());
            }
        }
        assert!(worst < 0.05, "max error {worst}");
    }
}
