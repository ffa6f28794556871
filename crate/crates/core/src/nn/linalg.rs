//! Dense kernels on row-major slices.

/// `c = a · wᵀ` with `a: m × k`, `w: n × k`, `c: m × n`.
pub(crate) fn matmul_wt(a: &[f64], w: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 1 {
        for (ci, wr) in c.iter_mut().zip(w.chunks_exact(k)) {
            *ci = dot(a, wr);
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            w.as_ptr(), 1, k as isize,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = g · w` with `g: m × n`, `w: n × k`, `c: m × k`.
pub(crate) fn matmul(g: &[f64], w: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(c.len(), m * k);
    if m == 1 {
        c.fill(0.0);
        for (&gi, wr) in g.iter().zip(w.chunks_exact(k)) {
            if gi != 0.0 {
                axpy(gi, wr, c);
            }
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            g.as_ptr(), n as isize, 1,
            w.as_ptr(), k as isize, 1,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
}

/// `acc += gᵀ · h` with `g: m × n`, `h: m × k`, `acc: n × k`.
pub(crate) fn acc_gt_h(g: &[f64], h: &[f64], m: usize, n: usize, k: usize, acc: &mut [f64]) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(h.len(), m * k);
    debug_assert_eq!(acc.len(), n * k);
    if m == 1 {
        for (&gi, row) in g.iter().zip(acc.chunks_exact_mut(k)) {
            axpy(gi, h, row);
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            n, m, k, 1.0,
            g.as_ptr(), 1, n as isize,
            h.as_ptr(), k as isize, 1,
            1.0,
            acc.as_mut_ptr(), k as isize, 1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut s = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut t = (s[0] + s[1]) + (s[2] + s[3]);
    for (x, y) in ra.iter().zip(rb) {
        t += x * y;
    }
    t
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_wt(a: &[f64], w: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * w[j * k + p]).sum();
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_loops() {
        let (k, n) = (5, 3);
        for m in [1, 4] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let w: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut c = vec![0.0; m * n];
            matmul_wt(&a, &w, m, k, n, &mut c);
            let r = naive_wt(&a, &w, m, k, n);
            assert!(c.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-12));

            // g · w where w is n × k
            let g: Vec<f64> = (0..m * n).map(|i| i as f64 - 1.5).collect();
            let mut gw = vec![0.0; m * k];
            matmul(&g, &w, m, n, k, &mut gw);
            for i in 0..m {
                for p in 0..k {
                    let e: f64 = (0..n).map(|j| g[i * n + j] * w[j * k + p]).sum();
                    assert!((gw[i * k + p] - e).abs() < 1e-12);
                }
            }

            let mut acc = vec![1.0; n * k];
            acc_gt_h(&g, &a, m, n, k, &mut acc);
            for j in 0..n {
                for p in 0..k {
                    let e: f64 = 1.0 + (0..m).map(|i| g[i * n + j] * a[i * k + p]).sum::<f64>();
                    assert!((acc[j * k + p] - e).abs() < 1e-12);
                }
            }
        }
    }
}
