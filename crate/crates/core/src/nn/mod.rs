//! Fully-connected denoiser with EDM preconditioning.
//!
//! `d(x, σ) = c_skip(σ)·x + c_out(σ)·F(c_in(σ)·x, emb(c_noise(σ)))`, where
//! `F` is an MLP and `emb` is a fixed Fourier embedding of `log σ / 4`.
//! Gradients with respect to inputs and parameters come from
//! [`tape::GradTape`], a per-call record of layer activations.

mod checkpoint;
mod linalg;
pub mod tape;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng;

pub use tape::GradTape;
pub use train::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Data dimension `D`.
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of Fourier features of the noise level (even).
    pub embed_features: usize,
    pub sigma_data: f64,
}

impl NetConfig {
    pub fn new(dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            dim,
            hidden,
            activation: Activation::Silu,
            embed_features: 16,
            sigma_data: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.embed_features % 2 != 0 {
            return Err(Error::Config("embed_features must be even".into()));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::Config("sigma_data must be positive".into()));
        }
        Ok(())
    }

    /// `[input, hidden..., output]` widths of `F`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dim + self.embed_features];
        dims.extend(&self.hidden);
        dims.push(self.dim);
        dims
    }
}

/// EDM scalings at noise level σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn at(sigma: f64, sigma_data: f64) -> Self {
        let s2 = sigma * sigma;
        let d2 = sigma_data * sigma_data;
        let norm = (s2 + d2).sqrt();
        Self {
            c_skip: d2 / (s2 + d2),
            c_out: sigma * sigma_data / norm,
            c_in: 1.0 / norm,
            c_noise: sigma.ln() / 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    config: NetConfig,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl DenoiserNet {
    /// He-style initialization scaled for the activation; the output layer
    /// starts small so the initial denoiser is close to `c_skip·x`.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let n_layers = net.layers.len();
        for (li, l) in net.layers.clone().into_iter().enumerate() {
            let scale = if li + 1 == n_layers {
                0.1 / (l.input as f64).sqrt()
            } else {
                (2.0 / l.input as f64).sqrt()
            };
            for w in &mut net.params[l.w_off..l.w_off + l.input * l.output] {
                *w = scale * rng::normal(rng);
            }
        }
        Ok(net)
    }

    /// All parameters zero, so `F ≡ 0` and `d(x, σ) = c_skip(σ)·x`.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        let mut layers = Vec::new();
        let mut off = 0;
        for w in dims.windows(2) {
            let (input, output) = (w[0], w[1]);
            layers.push(LayerShape {
                input,
                output,
                w_off: off,
                b_off: off + input * output,
            });
            off += input * output + output;
        }
        Ok(Self {
            config,
            layers,
            params: vec![0.0; off],
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        check_finite(&params, "parameters")?;
        net.params = params;
        Ok(net)
    }

    /// Zero the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let l = *self.layers.last().unwrap();
        self.params[l.w_off..l.b_off + l.output].fill(0.0);
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn preconditioning(&self, sigma: f64) -> Preconditioning {
        Preconditioning::at(sigma, self.config.sigma_data)
    }

    pub(crate) fn embed(&self, c_noise: f64, out: &mut [f64]) {
        let half = self.config.embed_features / 2;
        for k in 0..half {
            // frequencies from π/4 up to 2^(half-3)·π
            let freq = std::f64::consts::PI * 2f64.powi(k as i32 - 2);
            out[k] = (freq * c_noise).cos();
            out[half + k] = (freq * c_noise).sin();
        }
    }

    fn check_input(&self, x: &[f64], sigma: f64) -> Result<()> {
        check_dim(self.config.dim, x.len())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Input(format!("invalid noise level {sigma}")));
        }
        Ok(())
    }

    /// Denoise a batch of rows sharing the noise level `sigma`.
    pub fn denoise_batch(&self, xs: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let d = self.config.dim;
        if xs.len() % d != 0 {
            return Err(Error::Dimension {
                expected: d,
                got: xs.len() % d,
            });
        }
        if sigma == 0.0 {
            return Ok(xs.to_vec());
        }
        let b = xs.len() / d;
        let sigmas = vec![sigma; b];
        let (tape, _) = GradTape::forward(self, xs, &sigmas);
        Ok(tape.denoised(xs))
    }
}

impl Denoiser for DenoiserNet {
    fn dim(&self) -> usize {
        self.config.dim
    }

    /// At σ = 0 the preconditioned form reduces to the identity, which is
    /// returned directly.
    fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_input(x, sigma)?;
        self.denoise_batch(x, sigma)
    }

    fn denoise_pullback(
        &self,
        x: &[f64],
        sigma: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x, sigma)?;
        if sigma == 0.0 {
            let g = upstream(x)?;
            check_dim(self.config.dim, g.len())?;
            return Ok((x.to_vec(), g));
        }
        let (tape, _) = GradTape::forward(self, x, &[sigma]);
        let d = tape.denoised(x);
        let g = upstream(&d)?;
        check_dim(self.config.dim, g.len())?;
        check_finite(&g, "upstream")?;
        let gx = tape.backward_denoised(self, &g, None);
        Ok((d, gx))
    }

    fn denoise_cloud(&self, cloud: &crate::PointCloud, sigma: f64) -> Result<crate::PointCloud> {
        check_dim(self.config.dim, cloud.dim())?;
        let mut out = Vec::with_capacity(cloud.as_slice().len());
        for chunk in cloud.as_slice().chunks(256 * cloud.dim()) {
            out.extend(self.denoise_batch(chunk, sigma)?);
        }
        crate::PointCloud::new(cloud.dim(), out)
    }
}
