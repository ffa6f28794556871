//! Nonnegative constraint functions `c(x) ≥ 0` with analytic gradients.
//!
//! The feasible set is `{x : c(x) = 0}`. Random-feature GRF constraints
//! are used for the two-dimensional studies and observation constraints
//! `Σ (A(x)_i - y_i)²` for trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng;

pub trait Constraint: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_grad(x)?.0)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_grad(x)?.1)
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    check_dim(dim, x.len())?;
    check_finite(x, "x")
}

/// Hyperparameters of the random-feature approximation to an RBF Gaussian
/// random field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfHyper {
    pub dim: usize,
    pub num_features: usize,
    pub lengthscale: f64,
    pub kernel_variance: f64,
    pub bias_std: f64,
}

impl Default for GrfHyper {
    fn default() -> Self {
        Self {
            dim: 2,
            num_features: 64,
            lengthscale: 0.25,
            kernel_variance: 1.0,
            bias_std: 0.05,
        }
    }
}

/// `c(x) = 1 - exp(-f(x)²)` with
/// `f(x) = √(2σ_f²/M) Σ_m a_m cos(ω_mᵀx + φ_m) + β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfConstraint {
    pub dim: usize,
    /// `M × dim`, row-major.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub lengthscale: f64,
    pub kernel_variance: f64,
}

impl GrfConstraint {
    pub fn sample<R: Rng + ?Sized>(hyper: &GrfHyper, rng: &mut R) -> Result<Self> {
        if hyper.dim == 0
            || hyper.num_features == 0
            || !(hyper.lengthscale > 0.0)
            || !(hyper.kernel_variance > 0.0)
            || !(hyper.bias_std >= 0.0)
        {
            return Err(Error::Config(format!("invalid GRF hyperparameters {hyper:?}")));
        }
        let m = hyper.num_features;
        let frequencies = (0..m * hyper.dim)
            .map(|_| rng::normal(rng) / hyper.lengthscale)
            .collect();
        let phases = (0..m)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let coefficients = rng::normal_vec(rng, m);
        let bias = if hyper.bias_std == 0.0 {
            0.0
        } else {
            rng::normal(rng) * hyper.bias_std * hyper.kernel_variance.sqrt()
        };
        Ok(Self {
            dim: hyper.dim,
            frequencies,
            phases,
            coefficients,
            bias,
            lengthscale: hyper.lengthscale,
            kernel_variance: hyper.kernel_variance,
        })
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    fn amplitude(&self) -> f64 {
        (2.0 * self.kernel_variance / self.num_features() as f64).sqrt()
    }

    /// Underlying field value `f(x)`.
    pub fn field(&self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        Ok(self.field_grad(x, false).0)
    }

    fn field_grad(&self, x: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
        let amp = self.amplitude();
        let mut f = 0.0;
        let mut g = vec![0.0; if with_grad { self.dim } else { 0 }];
        for (m, w) in self.frequencies.chunks_exact(self.dim).enumerate() {
            let arg = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phases[m];
            let a = self.coefficients[m];
            f += a * arg.cos();
            if with_grad {
                let s = -a * arg.sin();
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += s * wi;
                }
            }
        }
        g.iter_mut().for_each(|v| *v *= amp);
        (amp * f + self.bias, g)
    }

    /// Half-width of `{|f| ≤ t}` equivalent to `c ≤ eps`.
    pub fn field_threshold(eps: f64) -> f64 {
        (-(1.0 - eps).ln()).sqrt()
    }
}

impl Constraint for GrfConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        let f = self.field_grad(x, false).0;
        Ok(-(-f * f).exp_m1())
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim, x)?;
        let (f, mut g) = self.field_grad(x, true);
        let e = (-f * f).exp();
        let scale = 2.0 * f * e;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok((-(-f * f).exp_m1(), g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationMap {
    Identity,
    Sine,
}

impl ObservationMap {
    fn apply(self, v: f64) -> (f64, f64) {
        match self {
            ObservationMap::Identity => (v, 1.0),
            ObservationMap::Sine => (v.sin(), v.cos()),
        }
    }
}

/// `c(x) = Σ_i (A(x_{k_i}) - y_i)²` over the observed coordinates `k_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationConstraint {
    pub dim: usize,
    pub map: ObservationMap,
    pub indices: Vec<usize>,
    pub target: Vec<f64>,
}

impl ObservationConstraint {
    pub fn new(dim: usize, map: ObservationMap, indices: Vec<usize>, target: Vec<f64>) -> Result<Self> {
        if indices.len() != target.len() {
            return Err(Error::Dimension {
                expected: indices.len(),
                got: target.len(),
            });
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::Range { index: i, max: dim - 1 });
        }
        check_finite(&target, "target")?;
        Ok(Self {
            dim,
            map,
            indices,
            target,
        })
    }

    /// Observe whole rows of a time-major `rows × cols` field; targets are
    /// `A(truth)` on those rows.
    pub fn rows_of(truth: &[f64], cols: usize, rows: &[usize], map: ObservationMap) -> Result<Self> {
        let n_rows = truth.len() / cols;
        let mut indices = Vec::new();
        for &r in rows {
            if r >= n_rows {
                return Err(Error::Range { index: r, max: n_rows - 1 });
            }
            indices.extend(r * cols..(r + 1) * cols);
        }
        let target = indices.iter().map(|&i| map.apply(truth[i]).0).collect();
        Self::new(truth.len(), map, indices, target)
    }
}

impl Constraint for ObservationConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        Ok(self
            .indices
            .iter()
            .zip(&self.target)
            .map(|(&i, y)| (self.map.apply(x[i]).0 - y).powi(2))
            .sum())
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim, x)?;
        let mut g = vec![0.0; self.dim];
        let mut c = 0.0;
        for (&i, y) in self.indices.iter().zip(&self.target) {
            let (a, da) = self.map.apply(x[i]);
            let r = a - y;
            c += r * r;
            g[i] += 2.0 * r * da;
        }
        Ok((c, g))
    }
}

/// `c(x) = (aᵀx - b)²`; feasible set is a hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Constraint for LinearConstraint {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.a.len(), x)?;
        let r = self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b;
        Ok((r * r, self.a.iter().map(|a| 2.0 * r * a).collect()))
    }
}

/// `c(x) = ‖x - center‖²`; feasible set is a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConstraint {
    pub center: Vec<f64>,
}

impl Constraint for PointConstraint {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.center.len(), x)?;
        let r: Vec<f64> = x.iter().zip(&self.center).map(|(x, a)| x - a).collect();
        let c = r.iter().map(|v| v * v).sum();
        Ok((c, r.into_iter().map(|v| 2.0 * v).collect()))
    }
}

/// `c ≡ 0`: everything is feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoConstraint {
    pub dim: usize,
}

impl Constraint for NoConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim, x)?;
        Ok((0.0, vec![0.0; self.dim]))
    }
}

/// Serializable union of the constraint kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnyConstraint {
    Grf(GrfConstraint),
    Observation(ObservationConstraint),
    Linear(LinearConstraint),
    Point(PointConstraint),
    None(NoConstraint),
}

impl AnyConstraint {
    fn inner(&self) -> &dyn Constraint {
        match self {
            AnyConstraint::Grf(c) => c,
            AnyConstraint::Observation(c) => c,
            AnyConstraint::Linear(c) => c,
            AnyConstraint::Point(c) => c,
            AnyConstraint::None(c) => c,
        }
    }
}

impl Constraint for AnyConstraint {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.inner().eval(x)
    }
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().grad(x)
    }
    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.inner().eval_grad(x)
    }
}

impl<T: Constraint + ?Sized> Constraint for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> Result<f64> {
        (**self).eval(x)
    }
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).grad(x)
    }
    fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).eval_grad(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_check<C: Constraint>(c: &C, x: &[f64], tol: f64) {
        let h = 1e-6;
        let g = c.grad(x).unwrap();
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[i] += h;
            xm[i] -= h;
            let fd = (c.eval(&xp).unwrap() - c.eval(&xm).unwrap()) / (2.0 * h);
            let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            assert!(err < tol, "coord {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn grf_frequency_scale() {
        let mut r = rng::seeded(0);
        let hyper = GrfHyper::default();
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..10_000 {
            let c = GrfConstraint::sample(&hyper, &mut r).unwrap();
            for w in &c.frequencies {
                s += w;
                s2 += w * w;
                n += 1.0;
            }
        }
        let std = (s2 / n - (s / n).powi(2)).sqrt();
        assert!((std - 4.0).abs() < 0.4, "std {std}");
    }

    #[test]
    fn grf_zero_bias_and_determinism() {
        let hyper = GrfHyper {
            bias_std: 0.0,
            ..Default::default()
        };
        let c = GrfConstraint::sample(&hyper, &mut rng::seeded(4)).unwrap();
        assert_eq!(c.bias, 0.0);

        let a = GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(11)).unwrap();
        let b = GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(11)).unwrap();
        let mut r = rng::seeded(12);
        for _ in 0..100 {
            let x = rng::normal_vec(&mut r, 2);
            assert_eq!(a.eval(&x).unwrap().to_bits(), b.eval(&x).unwrap().to_bits());
        }
        assert!(GrfConstraint::sample(&GrfHyper { lengthscale: 0.0, ..Default::default() }, &mut r).is_err());
    }

    #[test]
    fn grf_closed_form_values() {
        let mut c = GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(1)).unwrap();
        c.coefficients.fill(0.0);
        c.bias = 0.0;
        assert_eq!(c.eval(&[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(c.grad(&[0.3, -1.0]).unwrap(), vec![0.0, 0.0]);
        c.bias = 1.0;
        assert!((c.eval(&[5.0, 2.0]).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((1.0 - (-1.0f64).exp() - 0.6321).abs() < 1e-4);
    }

    #[test]
    fn grf_gradient_vanishes_on_zero_set() {
        let c = GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(2)).unwrap();
        // bisect along a line to find a root of f
        let p = |t: f64| [t, 0.1];
        let f = |t: f64| c.field(&p(t)).unwrap();
        let mut lo = -2.0;
        while f(lo) * f(lo + 0.01) > 0.0 {
            lo += 0.01;
            assert!(lo < 2.0, "no sign change on the segment");
        }
        let mut hi = lo + 0.01;
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if c.field(&p(mid)).unwrap() * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g = c.grad(&p(lo)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn observation_constraints() {
        let truth = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let c = ObservationConstraint::rows_of(&truth, 3, &[0], ObservationMap::Sine).unwrap();
        assert_eq!(c.eval(&truth).unwrap(), 0.0);
        assert_eq!(c.grad(&truth).unwrap(), vec![0.0; 6]);
        let mut x = truth;
        x[4] = 9.0;
        assert_eq!(c.eval(&x).unwrap(), 0.0);
        x[1] = 0.0;
        assert!((c.eval(&x).unwrap() - 0.2f64.sin().powi(2)).abs() < 1e-15);
        assert!(ObservationConstraint::rows_of(&truth, 3, &[2], ObservationMap::Identity).is_err());
        fd_check(&c, &[0.3, -0.2, 1.0, 0.0, 0.0, 2.0], 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(21);
        for k in 0..50 {
            let x = rng::normal_vec(&mut r, 2);
            let grf = GrfConstraint::sample(&GrfHyper::default(), &mut r).unwrap();
            fd_check(&grf, &x, 1e-6);
            if k % 10 == 0 {
                let lin = LinearConstraint { a: vec![1.0, -2.0], b: 0.3 };
                fd_check(&lin, &x, 1e-6);
                let pt = PointConstraint { center: vec![0.5, 0.5] };
                fd_check(&pt, &x, 1e-6);
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let c = AnyConstraint::Grf(GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(3)).unwrap());
        let s = serde_json::to_string(&c).unwrap();
        let back: AnyConstraint = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }

    proptest! {
        #[test]
        fn grf_range_and_threshold(seed in 0u64..200, x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, eps in 1e-6f64..0.5) {
            let c = GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(seed)).unwrap();
            let v = c.eval(&[x0, x1]).unwrap();
            prop_assert!((0.0..1.0).contains(&v));
            let f = c.field(&[x0, x1]).unwrap();
            let thr = GrfConstraint::field_threshold(eps);
            // skip the measure-zero boundary where rounding decides
            if (f.abs() - thr).abs() > 1e-9 {
                prop_assert_eq!(v <= eps, f.abs() <= thr);
            }
        }
    }
}
