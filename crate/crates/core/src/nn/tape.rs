use super::linalg::{acc_gt_h, matmul, matmul_wt};
use super::{DenoiserNet, Preconditioning};

/// Activations recorded by one forward pass over a batch.
///
/// Holds enough to run vector-Jacobian products with respect to both the
/// inputs and the parameters. A tape is tied to the net that produced it and
/// must not outlive a parameter update.
#[derive(Debug, Clone)]
pub struct GradTape {
    batch: usize,
    dim: usize,
    pre: Vec<Preconditioning>,
    /// Input of every layer, `batch × layer.input`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers, `batch × layer.output`.
    pre_act: Vec<Vec<f64>>,
    /// Raw network output `F`, `batch × dim`.
    raw: Vec<f64>,
}

impl GradTape {
    /// Runs `F` on `xs` (row-major `batch × dim`) with one σ per row.
    /// Returns the tape and the raw output `F`.
    pub fn forward(net: &DenoiserNet, xs: &[f64], sigmas: &[f64]) -> (Self, Vec<f64>) {
        let cfg = net.config();
        let dim = cfg.dim;
        let batch = sigmas.len();
        debug_assert_eq!(xs.len(), batch * dim);
        let in0 = dim + cfg.embed_features;
        let pre: Vec<Preconditioning> = sigmas.iter().map(|&s| net.preconditioning(s)).collect();

        let mut h = vec![0.0; batch * in0];
        for (b, row) in h.chunks_exact_mut(in0).enumerate() {
            let p = pre[b];
            for (dst, &x) in row[..dim].iter_mut().zip(&xs[b * dim..(b + 1) * dim]) {
                *dst = p.c_in * x;
            }
            net.embed(p.c_noise, &mut row[dim..]);
        }

        let layers = net.layers();
        let params = net.params();
        let act = cfg.activation;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre_act = Vec::with_capacity(layers.len() - 1);
        for (li, l) in layers.iter().enumerate() {
            let w = &params[l.w_off..l.w_off + l.input * l.output];
            let bias = &params[l.b_off..l.b_off + l.output];
            let mut z = vec![0.0; batch * l.output];
            matmul_wt(&h, w, batch, l.input, l.output, &mut z);
            for row in z.chunks_exact_mut(l.output) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
            inputs.push(std::mem::take(&mut h));
            if li + 1 < layers.len() {
                h = z.iter().map(|&v| act.apply(v)).collect();
                pre_act.push(z);
            } else {
                h = z;
            }
        }
        let raw = h;
        (
            Self {
                batch,
                dim,
                pre,
                inputs,
                pre_act,
                raw: raw.clone(),
            },
            raw,
        )
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn raw_output(&self) -> &[f64] {
        &self.raw
    }

    pub fn preconditioning(&self) -> &[Preconditioning] {
        &self.pre
    }

    /// `c_skip·x + c_out·F` for the recorded batch.
    pub fn denoised(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.dim];
        for b in 0..self.batch {
            let p = self.pre[b];
            let r = b * self.dim..(b + 1) * self.dim;
            for ((o, &x), &f) in out[r.clone()].iter_mut().zip(&xs[r.clone()]).zip(&self.raw[r]) {
                *o = p.c_skip * x + p.c_out * f;
            }
        }
        out
    }

    /// Pulls back a cotangent on the raw output `F` to the first-layer input.
    /// When `param_grad` is given, parameter gradients are accumulated into it.
    pub fn backward_raw(&self, net: &DenoiserNet, g_raw: &[f64], mut param_grad: Option<&mut [f64]>) -> Vec<f64> {
        debug_assert_eq!(g_raw.len(), self.batch * self.dim);
        let layers = net.layers();
        let params = net.params();
        let act = net.config().activation;
        let batch = self.batch;
        let mut g = g_raw.to_vec();
        for li in (0..layers.len()).rev() {
            let l = layers[li];
            if li + 1 < layers.len() {
                for (gv, &z) in g.iter_mut().zip(&self.pre_act[li]) {
                    *gv *= act.derivative(z);
                }
            }
            if let Some(pg) = param_grad.as_deref_mut() {
                acc_gt_h(&g, &self.inputs[li], batch, l.output, l.input, &mut pg[l.w_off..l.b_off]);
                let gb = &mut pg[l.b_off..l.b_off + l.output];
                for row in g.chunks_exact(l.output) {
                    for (a, v) in gb.iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            let w = &params[l.w_off..l.b_off];
            let mut prev = vec![0.0; batch * l.input];
            matmul(&g, w, batch, l.output, l.input, &mut prev);
            g = prev;
        }
        g
    }

    /// Pulls back a cotangent on the denoised output to the data input `x`.
    pub fn backward_denoised(&self, net: &DenoiserNet, g_out: &[f64], param_grad: Option<&mut [f64]>) -> Vec<f64> {
        let dim = self.dim;
        let in0 = dim + net.config().embed_features;
        let mut g_raw = g_out.to_vec();
        for (b, row) in g_raw.chunks_exact_mut(dim).enumerate() {
            let c = self.pre[b].c_out;
            row.iter_mut().for_each(|v| *v *= c);
        }
        let g_in = self.backward_raw(net, &g_raw, param_grad);
        let mut gx = vec![0.0; self.batch * dim];
        for b in 0..self.batch {
            let p = self.pre[b];
            for i in 0..dim {
                gx[b * dim + i] = p.c_skip * g_out[b * dim + i] + p.c_in * g_in[b * in0 + i];
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::nn::{Activation, NetConfig};
    use crate::rng;

    fn small_net(seed: u64, act: Activation) -> DenoiserNet {
        let mut cfg = NetConfig::new(3, vec![7, 5]);
        cfg.activation = act;
        cfg.sigma_data = 0.8;
        let mut r = rng::seeded(seed);
        let mut net = DenoiserNet::new(cfg, &mut r).unwrap();
        // push the output layer to O(1) so every path contributes
        for v in net.params_mut() {
            *v += 0.3 * rng::normal(&mut r);
        }
        net
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    // Central differences of u·d(x) with respect to x and θ.
    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for case in 0..20u64 {
            let act = if case % 2 == 0 { Activation::Silu } else { Activation::Tanh };
            let net = small_net(case, act);
            let mut r = rng::seeded(100 + case);
            let x = rng::normal_vec(&mut r, 3);
            let u = rng::normal_vec(&mut r, 3);
            let sigma = (rng::normal(&mut r)).exp();
            let f = |n: &DenoiserNet, x: &[f64]| -> f64 {
                n.denoise(x, sigma).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
            };

            let (tape, _) = GradTape::forward(&net, &x, &[sigma]);
            let mut pg = vec![0.0; net.num_params()];
            let gx = tape.backward_denoised(&net, &u, Some(&mut pg));

            for i in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
                assert!(rel_err(gx[i], fd) < 1e-4, "case {case} x[{i}]: {} vs {fd}", gx[i]);
            }
            for p in (0..net.num_params()).step_by(3) {
                let mut np = net.clone();
                np.params_mut()[p] += h;
                let fp = f(&np, &x);
                np.params_mut()[p] -= 2.0 * h;
                let fm = f(&np, &x);
                let fd = (fp - fm) / (2.0 * h);
                assert!(rel_err(pg[p], fd) < 1e-4 || (pg[p] - fd).abs() < 1e-9, "case {case} θ[{p}]: {} vs {fd}", pg[p]);
            }
        }
    }

    #[test]
    fn batched_forward_matches_rows() {
        let net = small_net(7, Activation::Silu);
        let xs = [0.1, -0.2, 0.3, 1.0, 2.0, -1.0];
        let (tape, _) = GradTape::forward(&net, &xs, &[0.5, 2.0]);
        let batch = tape.denoised(&xs);
        let a = net.denoise(&xs[..3], 0.5).unwrap();
        let b = net.denoise(&xs[3..], 2.0).unwrap();
        for (u, v) in batch.iter().zip(a.iter().chain(&b)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
