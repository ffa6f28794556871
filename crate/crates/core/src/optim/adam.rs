use serde::{Deserialize, Serialize};

use super::{inf_norm, Minimum, Objective};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam state for a parameter vector of fixed length.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: AdamParams, n: usize) -> Self {
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        let AdamParams { beta1, beta2, eps, .. } = self.params;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Runs `max_iters` Adam steps, keeping the best iterate.
pub fn adam_minimize<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    params: AdamParams,
    max_iters: usize,
    tol: f64,
) -> Result<Minimum> {
    let mut x = x0.to_vec();
    let mut opt = Adam::new(params, x.len());
    let (mut f, mut g) = obj.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::Projection {
            iters: 0,
            last_finite: x0.to_vec(),
        });
    }
    let mut best = (x.clone(), f);
    let mut evals = 1;
    let mut converged = inf_norm(&g) < tol;
    let mut iters = 0;
    while iters < max_iters && !converged {
        opt.step(&mut x, &g, params.lr);
        iters += 1;
        let (fn_, gn) = obj.eval(&x)?;
        evals += 1;
        if !fn_.is_finite() || gn.iter().any(|v| !v.is_finite()) {
            return Err(Error::Projection {
                iters,
                last_finite: best.0,
            });
        }
        let decrease = f - fn_;
        f = fn_;
        g = gn;
        if f < best.1 {
            best = (x.clone(), f);
        }
        converged = inf_norm(&g) < tol || (decrease >= 0.0 && decrease < tol && iters > 1);
    }
    Ok(Minimum {
        x: best.0,
        f: best.1,
        iters,
        evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok(((x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 4.0 * (x[1] + 1.0)]))
        };
        let m = adam_minimize(&mut obj, &[0.0, 0.0], AdamParams::with_lr(0.1), 2000, 1e-10).unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-4 && (m.x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 0.5 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((-x[0], vec![-1.0]))
            }
        };
        let err = adam_minimize(&mut obj, &[0.0], AdamParams::with_lr(0.3), 50, 0.0).unwrap_err();
        match err {
            Error::Projection { last_finite, .. } => assert!(last_finite[0] <= 0.5),
            e => panic!("unexpected {e}"),
        }
    }
}
