//! Debiased entropic optimal transport between uniform point clouds.
//!
//! `OT_ε(A, B)` is the value of the entropic dual `⟨a, f⟩ + ⟨b, g⟩` at the
//! Sinkhorn fixed point, with squared-Euclidean cost. The divergence
//! `S(A, B) = OT_ε(A, B) - ½ OT_ε(A, A) - ½ OT_ε(B, B)` removes the entropic
//! bias so that `S(A, A) = 0`.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Entropic regularization; `None` uses `eps_scale · median pairwise
    /// squared distance` of the pooled clouds.
    pub eps: Option<f64>,
    #[serde(default = "default_eps_scale")]
    pub eps_scale: f64,
    pub max_iters: usize,
    /// Tolerance on the L1 marginal violation.
    pub tol: f64,
}

fn default_eps_scale() -> f64 {
    0.05
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            eps: None,
            eps_scale: default_eps_scale(),
            max_iters: 10_000,
            tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub value: f64,
    pub eps: f64,
    pub converged: bool,
    pub iters: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median squared distance over all pairs of the first `cap` points of the
/// pooled clouds.
pub fn median_sq_distance(a: &PointCloud, b: &PointCloud, cap: usize) -> f64 {
    let pts: Vec<&[f64]> = a.rows().take(cap).chain(b.rows().take(cap)).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in 0..i {
            d.push(sq_dist(pts[i], pts[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    let m = b.len();
    let mut c = vec![0.0; a.len() * m];
    for (i, ra) in a.rows().enumerate() {
        for (j, rb) in b.rows().enumerate() {
            c[i * m + j] = sq_dist(ra, rb);
        }
    }
    c
}

fn transpose(c: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut ct = vec![0.0; c.len()];
    for i in 0..n {
        for j in 0..m {
            ct[j * n + i] = c[i * m + j];
        }
    }
    ct
}

/// Soft c-transform: `out_i = -ε log Σ_j w_j exp((g_j - C_ij) / ε)` with
/// uniform weights `w = 1/m`.
fn c_transform(cost: &[f64], g: &[f64], eps: f64, out: &mut [f64]) {
    let m = g.len();
    let log_w = -(m as f64).ln();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &cost[i * m..(i + 1) * m];
        *o = -eps * log_sum_exp(row.iter().zip(g).map(|(c, gj)| (gj - c) / eps + log_w));
    }
}

/// Geometric ε ladder from the cost diameter down to the target.
fn eps_ladder(cost: &[f64], eps: f64) -> Vec<f64> {
    let diam = cost.iter().copied().fold(0.0, f64::max);
    let mut ladder = Vec::new();
    let mut e = diam.max(eps);
    while e > eps {
        ladder.push(e);
        e *= 0.5;
    }
    ladder.push(eps);
    ladder
}

/// Log-domain Sinkhorn between uniform measures on `a` and `b`.
///
/// The regularization is annealed from the cost diameter down to `eps`, one
/// sweep per level, before iterating at `eps` until the L1 violation of the
/// column marginal drops below `tol`.
pub fn entropic_ot(a: &PointCloud, b: &PointCloud, eps: f64, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    check_inputs(a, b, eps)?;
    let (n, m) = (a.len(), b.len());
    let c = cost_matrix(a, b);
    let ct = transpose(&c, n, m);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut g_new = vec![0.0; m];
    for &e in &eps_ladder(&c, eps) {
        c_transform(&c, &g, e, &mut f);
        c_transform(&ct, &f, e, &mut g);
    }
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        c_transform(&c, &g, eps, &mut f);
        c_transform(&ct, &f, eps, &mut g_new);
        // column mass of the plan before the g update is b_j exp((g_j - g'_j)/ε)
        let violation: f64 =
            g.iter().zip(&g_new).map(|(old, new)| (1.0 - ((old - new) / eps).exp()).abs()).sum::<f64>() / m as f64;
        std::mem::swap(&mut g, &mut g_new);
        if violation < tol {
            converged = true;
            break;
        }
    }
    let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    Ok(SinkhornResult {
        value,
        eps,
        converged,
        iters,
    })
}

/// `OT_ε(A, A)` with the symmetric averaged update `f ← ½(f + T(f))`, which
/// avoids the oscillation of alternating updates on self-transport.
pub fn entropic_ot_self(a: &PointCloud, eps: f64, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    check_inputs(a, a, eps)?;
    let n = a.len();
    let c = cost_matrix(a, a);
    let mut f = vec![0.0; n];
    let mut t = vec![0.0; n];
    for &e in &eps_ladder(&c, eps) {
        c_transform(&c, &f, e, &mut t);
        f.iter_mut().zip(&t).for_each(|(fi, ti)| *fi = 0.5 * (*fi + ti));
    }
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        c_transform(&c, &f, eps, &mut t);
        let violation: f64 =
            f.iter().zip(&t).map(|(old, new)| (1.0 - ((old - new) / eps).exp()).abs()).sum::<f64>() / n as f64;
        f.iter_mut().zip(&t).for_each(|(fi, ti)| *fi = 0.5 * (*fi + ti));
        if violation < tol {
            converged = true;
            break;
        }
    }
    // fixed point satisfies f = T(f), so the dual value is 2⟨a, f⟩
    c_transform(&c, &f, eps, &mut t);
    let value = 2.0 * t.iter().sum::<f64>() / n as f64;
    Ok(SinkhornResult {
        value,
        eps,
        converged,
        iters,
    })
}

fn check_inputs(a: &PointCloud, b: &PointCloud, eps: f64) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("empty point cloud".into()));
    }
    check_dim(a.dim(), b.dim())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Input(format!("regularization must be positive, got {eps}")));
    }
    Ok(())
}

/// Debiased Sinkhorn divergence; `converged` is false if any of the three
/// transport problems hit the iteration cap.
pub fn sinkhorn_divergence(a: &PointCloud, b: &PointCloud, params: &SinkhornParams) -> Result<SinkhornResult> {
    let eps = match params.eps {
        Some(e) => e,
        None => params.eps_scale * median_sq_distance(a, b, 512),
    };
    if !(eps > 0.0) {
        // every pooled pair coincides, so A = B
        return Ok(SinkhornResult {
            value: 0.0,
            eps,
            converged: true,
            iters: 0,
        });
    }
    let ab = entropic_ot(a, b, eps, params.max_iters, params.tol)?;
    let aa = entropic_ot_self(a, eps, params.max_iters, params.tol)?;
    let bb = if a == b { aa } else { entropic_ot_self(b, eps, params.max_iters, params.tol)? };
    Ok(SinkhornResult {
        value: (ab.value - 0.5 * aa.value - 0.5 * bb.value).max(0.0),
        eps,
        converged: ab.converged && aa.converged && bb.converged,
        iters: ab.iters.max(aa.iters).max(bb.iters),
    })
}
