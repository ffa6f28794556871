//! Kuramoto–Sivashinsky `u_t = -u_xx - u_xxxx - u u_x` on a periodic domain.
//!
//! Derivatives are spectral (FFT, no de-aliasing). Time stepping is implicit
//! Euler (BDF1); each step solves
//! `u + dt (∂xx + ∂xxxx) u + dt u u_x = u_prev`
//! with a chord-Newton iteration whose Jacobian keeps only the linear part,
//! which is diagonal in Fourier space.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsParams {
    pub grid: usize,
    pub length: f64,
    pub dt: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for KsParams {
    fn default() -> Self {
        Self {
            grid: 128,
            length: 64.0,
            dt: 0.1,
            steps: 512,
            newton_tol: 1e-9,
            newton_max_iter: 50,
        }
    }
}

impl KsParams {
    fn validate(&self) -> Result<()> {
        if self.grid < 4 || self.grid % 2 != 0 {
            return Err(Error::Config("KS grid must be even and at least 4".into()));
        }
        if !(self.length > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("KS length and dt must be positive".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::Config("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.grid as f64
    }
}

/// Time-major field: `rows` time levels of `cols` grid values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub dt: f64,
    pub dx: f64,
    /// Largest accepted Newton residual over all steps (0 for derived fields).
    #[serde(default)]
    pub max_residual: f64,
}

impl Trajectory {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end > self.rows {
            return Err(Error::Range {
                index: end,
                max: self.rows,
            });
        }
        Ok(Trajectory {
            values: self.values[start * self.cols..end * self.cols].to_vec(),
            rows: end - start,
            ..self.clone()
        })
    }
}

pub struct KsSolver {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers in FFT order.
    q: Vec<f64>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl KsSolver {
    pub fn new(grid: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid);
        let inverse = planner.plan_fft_inverse(grid);
        let q = (0..grid)
            .map(|k| {
                let k = if k <= grid / 2 { k as f64 } else { k as f64 - grid as f64 };
                2.0 * PI * k / length
            })
            .collect();
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n: grid,
            forward,
            inverse,
            q,
            buf: vec![Complex::default(); grid],
            scratch: vec![Complex::default(); scratch_len],
        }
    }

    fn to_spectral(&mut self, u: &[f64]) {
        for (b, v) in self.buf.iter_mut().zip(u) {
            *b = Complex::new(*v, 0.0);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    fn to_physical(&mut self, out: &mut [f64]) {
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }

    /// `∂ₓ^order u`. The Nyquist mode is dropped for odd orders.
    pub fn derivative(&mut self, u: &[f64], order: u32) -> Vec<f64> {
        self.to_spectral(u);
        let nyq = self.n / 2;
        for (k, b) in self.buf.iter_mut().enumerate() {
            if order % 2 == 1 && k == nyq {
                *b = Complex::default();
                continue;
            }
            *b *= Complex::new(0.0, self.q[k]).powu(order);
        }
        let mut out = vec![0.0; self.n];
        self.to_physical(&mut out);
        out
    }

    /// Residual `u + dt L u + dt u u_x - prev` with `L = ∂xx + ∂xxxx`.
    fn residual(&mut self, u: &[f64], prev: &[f64], dt: f64, out: &mut [f64]) {
        self.to_spectral(u);
        let spec = self.buf.clone();
        let nyq = self.n / 2;
        for (k, b) in self.buf.iter_mut().enumerate() {
            *b = if k == nyq { Complex::default() } else { *b * Complex::new(0.0, self.q[k]) };
        }
        let mut ux = vec![0.0; self.n];
        self.to_physical(&mut ux);
        for (k, b) in self.buf.iter_mut().enumerate() {
            let q2 = self.q[k] * self.q[k];
            *b = spec[k] * (q2 * q2 - q2);
        }
        let mut lu = vec![0.0; self.n];
        self.to_physical(&mut lu);
        for i in 0..self.n {
            out[i] = u[i] + dt * lu[i] + dt * u[i] * ux[i] - prev[i];
        }
    }

    /// Solves `(I + dt L) δ = r` in place.
    fn solve_linear(&mut self, r: &mut [f64], dt: f64) {
        self.to_spectral(r);
        for (k, b) in self.buf.iter_mut().enumerate() {
            let q2 = self.q[k] * self.q[k];
            *b /= 1.0 + dt * (q2 * q2 - q2);
        }
        self.to_physical(r);
    }

    /// One implicit step from `prev`; returns the new state and its residual.
    pub fn step(&mut self, prev: &[f64], params: &KsParams, step: usize) -> Result<(Vec<f64>, f64)> {
        let dt = params.dt;
        let mut u = prev.to_vec();
        let mut r = vec![0.0; self.n];
        for _ in 0..params.newton_max_iter {
            self.residual(&u, prev, dt, &mut r);
            let res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !res.is_finite() {
                return Err(Error::BlowUp { step });
            }
            if res < params.newton_tol {
                return Ok((u, res));
            }
            self.solve_linear(&mut r, dt);
            for (ui, di) in u.iter_mut().zip(&r) {
                *ui -= di;
            }
        }
        self.residual(&u, prev, dt, &mut r);
        let res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !res.is_finite() {
            return Err(Error::BlowUp { step });
        }
        if res < params.newton_tol {
            return Ok((u, res));
        }
        Err(Error::NewtonDiverged { step, residual: res })
    }
}

/// Spectral derivative of a periodic sample on `[0, length)`.
pub fn spectral_derivative(u: &[f64], length: f64, order: u32) -> Vec<f64> {
    KsSolver::new(u.len(), length).derivative(u, order)
}

pub fn ks_solve(u0: &[f64], params: &KsParams) -> Result<Trajectory> {
    params.validate()?;
    if u0.len() != params.grid {
        return Err(Error::Dimension {
            expected: params.grid,
            got: u0.len(),
        });
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { step: 0 });
    }
    let mut solver = KsSolver::new(params.grid, params.length);
    let mut values = Vec::with_capacity((params.steps + 1) * params.grid);
    values.extend_from_slice(u0);
    let mut u = u0.to_vec();
    let mut max_residual = 0.0f64;
    for step in 0..params.steps {
        let (next, res) = solver.step(&u, params, step)?;
        max_residual = max_residual.max(res);
        values.extend_from_slice(&next);
        u = next;
    }
    Ok(Trajectory {
        values,
        rows: params.steps + 1,
        cols: params.grid,
        dt: params.dt,
        dx: params.dx(),
        max_residual,
    })
}

/// Sum of ten cosines with amplitudes `U(0, 1)`, integer wavenumbers drawn
/// uniformly from `1..=5` and phases `U(0, 2π)`.
pub fn ks_initial_condition<R: Rng + ?Sized>(params: &KsParams, rng: &mut R) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> = (0..10)
        .map(|_| {
            let a: f64 = rng.random();
            let w = rng.random_range(1..=5) as f64;
            let phi = rng.random_range(0.0..2.0 * PI);
            (a, w, phi)
        })
        .collect();
    let dx = params.dx();
    (0..params.grid)
        .map(|j| {
            let x = j as f64 * dx;
            modes.iter().map(|(a, w, phi)| a * (2.0 * PI * w * x / params.length + phi).cos()).sum()
        })
        .collect()
}

/// Block area-average of a `rows × cols` field down to `out_rows × out_cols`.
pub fn block_average(values: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Result<Vec<f64>> {
    if values.len() != rows * cols {
        return Err(Error::Dimension {
            expected: rows * cols,
            got: values.len(),
        });
    }
    if out_rows == 0 || out_cols == 0 || rows % out_rows != 0 || cols % out_cols != 0 {
        return Err(Error::Config(format!(
            "cannot block-average {rows}x{cols} to {out_rows}x{out_cols}"
        )));
    }
    let (br, bc) = (rows / out_rows, cols / out_cols);
    let norm = 1.0 / (br * bc) as f64;
    let mut out = vec![0.0; out_rows * out_cols];
    for i in 0..rows {
        for j in 0..cols {
            out[(i / br) * out_cols + j / bc] += values[i * cols + j] * norm;
        }
    }
    Ok(out)
}

/// Standardized coarse trajectories and the scalar statistics used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsDataset {
    pub trajectories: Vec<Trajectory>,
    pub mean: f64,
    pub std: f64,
    pub params: KsParams,
}

impl KsDataset {
    /// One flattened trajectory per row.
    pub fn to_cloud(&self) -> Result<PointCloud> {
        let dim = self.trajectories.first().map(|t| t.values.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * self.trajectories.len());
        for t in &self.trajectories {
            data.extend_from_slice(&t.values);
        }
        PointCloud::new(dim, data)
    }
}

/// Solves `count` random initial conditions, keeps rows `subset.0..subset.1`,
/// block-averages to `out_res` and standardizes with the dataset-wide mean
/// and std.
pub fn prepare_ks_dataset<R: Rng + ?Sized>(
    count: usize,
    params: &KsParams,
    subset: (usize, usize),
    out_res: (usize, usize),
    rng: &mut R,
) -> Result<KsDataset> {
    if count == 0 {
        return Err(Error::Input("dataset needs at least one trajectory".into()));
    }
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let u0 = ks_initial_condition(params, rng);
        let full = ks_solve(&u0, params)?;
        let part = full.slice_rows(subset.0, subset.1)?;
        let values = block_average(&part.values, part.rows, part.cols, out_res.0, out_res.1)?;
        trajectories.push(Trajectory {
            values,
            rows: out_res.0,
            cols: out_res.1,
            dt: part.dt * (part.rows / out_res.0) as f64,
            dx: part.dx * (part.cols / out_res.1) as f64,
            max_residual: full.max_residual,
        });
    }
    let n = (count * out_res.0 * out_res.1) as f64;
    let mean = trajectories.iter().flat_map(|t| &t.values).sum::<f64>() / n;
    let var = trajectories.iter().flat_map(|t| &t.values).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for t in &mut trajectories {
        t.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    Ok(KsDataset {
        trajectories,
        mean,
        std,
        params: params.clone(),
    })
}

/// Expands each flattened `rows × cols` field in `cloud` by every cyclic
/// shift along the space axis and the reflection `u(x) → -u(-x)`, both exact
/// symmetries of the equation on a periodic domain.
pub fn augment_ks(cloud: &PointCloud, rows: usize, cols: usize) -> Result<PointCloud> {
    if cloud.dim() != rows * cols {
        return Err(Error::Dimension {
            expected: rows * cols,
            got: cloud.dim(),
        });
    }
    let mut out = Vec::with_capacity(cloud.as_slice().len() * cols * 2);
    for field in cloud.rows() {
        for shift in 0..cols {
            for reflect in [false, true] {
                for i in 0..rows {
                    let row = &field[i * cols..(i + 1) * cols];
                    out.extend((0..cols).map(|j| {
                        let src = (j + shift) % cols;
                        if reflect {
                            -row[(cols - src) % cols]
                        } else {
                            row[src]
                        }
                    }));
                }
            }
        }
    }
    PointCloud::new(rows * cols, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_is_a_fixed_point() {
        let p = KsParams {
            steps: 20,
            ..Default::default()
        };
        let t = ks_solve(&vec![0.0; p.grid], &p).unwrap();
        assert!(t.values.iter().all(|v| *v == 0.0));
        assert_eq!(t.rows, 21);
    }

    #[test]
    fn spectral_derivative_is_exact_on_modes() {
        for k in [1usize, 3, 7, 20] {
            let n = 128;
            let q = 2.0 * PI * k as f64 / 64.0;
            let x: Vec<f64> = (0..n).map(|j| j as f64 * 64.0 / n as f64).collect();
            let u: Vec<f64> = x.iter().map(|x| (q * x).cos()).collect();
            let du = spectral_derivative(&u, 64.0, 1);
            let err = x.iter().zip(&du).map(|(x, d)| (d + q * (q * x).sin()).abs()).fold(0.0, f64::max);
            assert!(err / q < 1e-12, "k={k} rel err {}", err / q);
        }
    }

    #[test]
    fn linear_growth_rate_matches_dispersion() {
        let p = KsParams {
            steps: 50,
            ..Default::default()
        };
        let k = 5.0;
        let q = 2.0 * PI * k / p.length;
        let x: Vec<f64> = (0..p.grid).map(|j| j as f64 * p.dx()).collect();
        let u0: Vec<f64> = x.iter().map(|x| 1e-4 * (q * x).cos()).collect();
        let t = ks_solve(&u0, &p).unwrap();
        // least-squares slope of the log mode amplitude over t in [0, 5]
        let pts: Vec<(f64, f64)> = (0..t.rows)
            .map(|i| {
                let amp = 2.0 / p.grid as f64 * t.row(i).iter().zip(&x).map(|(u, x)| u * (q * x).cos()).sum::<f64>();
                (i as f64 * p.dt, amp.ln())
            })
            .collect();
        let n = pts.len() as f64;
        let (mt, ml) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum::<f64>()
            / pts.iter().map(|(t, _)| (t - mt).powi(2)).sum::<f64>();
        let rate = q * q - q.powi(4);
        assert!((slope - rate).abs() / rate < 0.05, "slope {slope} vs {rate}");
    }

    #[test]
    fn accepted_steps_meet_newton_tolerance() {
        let p = KsParams {
            steps: 100,
            ..Default::default()
        };
        let u0 = ks_initial_condition(&p, &mut rng::seeded(0));
        let t = ks_solve(&u0, &p).unwrap();
        assert!(t.max_residual < p.newton_tol);
        assert_eq!(t.row(0), &u0[..]);
        assert!(t.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn newton_cap_and_blow_up_are_reported() {
        let p = KsParams {
            steps: 5,
            newton_max_iter: 1,
            ..Default::default()
        };
        let u0 = ks_initial_condition(&p, &mut rng::seeded(1));
        assert!(matches!(ks_solve(&u0, &p), Err(Error::NewtonDiverged { step: 0, .. })));
        let huge: Vec<f64> = (0..KsParams::default().grid).map(|j| 1e200 * (j as f64 * 0.3).cos()).collect();
        assert!(matches!(ks_solve(&huge, &KsParams::default()), Err(Error::BlowUp { step: 0 })));
    }

    #[test]
    fn initial_condition_properties() {
        let p = KsParams::default();
        let a = ks_initial_condition(&p, &mut rng::seeded(2));
        let b = ks_initial_condition(&p, &mut rng::seeded(2));
        assert_eq!(a, b);
        for seed in 0..20 {
            let mut r = rng::seeded(100 + seed);
            let u = ks_initial_condition(&p, &mut r);
            assert!(u.iter().all(|v| v.abs() <= 10.0));
            // energy outside wavenumbers 1..=5 vanishes
            let mut planner = FftPlanner::new();
            let fft = planner.plan_fft_forward(p.grid);
            let mut buf: Vec<Complex<f64>> = u.iter().map(|v| Complex::new(*v, 0.0)).collect();
            fft.process(&mut buf);
            let energy = |k: usize| buf[k].norm_sqr();
            let total: f64 = (0..p.grid).map(energy).sum();
            let inside: f64 = (1..=5).chain(p.grid - 5..p.grid).map(energy).sum();
            assert!((total - inside) / total < 1e-20, "leak {}", (total - inside) / total);
        }
    }

    #[test]
    fn block_average_properties() {
        let mut r = rng::seeded(3);
        let v = rng::normal_vec(&mut r, 8 * 12);
        assert_eq!(block_average(&v, 8, 12, 8, 12).unwrap(), v);
        let c = vec![2.5; 8 * 12];
        assert!(block_average(&c, 8, 12, 2, 3).unwrap().iter().all(|x| (x - 2.5).abs() < 1e-15));
        let d = block_average(&v, 8, 12, 4, 3).unwrap();
        let ms = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
        assert!(ms(&d) <= ms(&v));
        assert!(block_average(&v, 8, 12, 3, 3).is_err());
    }

    #[test]
    fn dataset_is_standardized_and_reproducible() {
        let p = KsParams {
            steps: 64,
            ..Default::default()
        };
        let a = prepare_ks_dataset(3, &p, (32, 64), (8, 16), &mut rng::seeded(4)).unwrap();
        let b = prepare_ks_dataset(3, &p, (32, 64), (8, 16), &mut rng::seeded(4)).unwrap();
        assert_eq!(a, b);
        let all: Vec<f64> = a.trajectories.iter().flat_map(|t| t.values.clone()).collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        assert_eq!(a.to_cloud().unwrap().dim(), 128);
    }

    #[test]
    fn augmentation_applies_symmetries() {
        let field = PointCloud::new(4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let aug = augment_ks(&field, 1, 4).unwrap();
        assert_eq!(aug.len(), 8);
        assert_eq!(aug.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(aug.row(1), &[-1.0, -4.0, -3.0, -2.0]);
        assert_eq!(aug.row(2), &[2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn reflection_maps_solutions_to_solutions() {
        let p = KsParams {
            steps: 30,
            ..Default::default()
        };
        let u0 = ks_initial_condition(&p, &mut rng::seeded(5));
        let n = p.grid;
        let mirror = |u: &[f64]| (0..n).map(|j| -u[(n - j) % n]).collect::<Vec<_>>();
        let a = ks_solve(&u0, &p).unwrap();
        let b = ks_solve(&mirror(&u0), &p).unwrap();
        let last = mirror(a.row(p.steps));
        let err = last.iter().zip(b.row(p.steps)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
    }
}
