//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The line search brackets a step satisfying the strong Wolfe conditions and
//! then zooms with safeguarded cubic interpolation (Nocedal & Wright,
//! algorithms 3.5/3.6). Non-finite trial values are treated as a failed
//! sufficient-decrease test so the bracket shrinks away from them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{dot, inf_norm, Minimum, Objective};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsParams {
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_max_ls")]
    pub max_line_search: usize,
}

fn default_memory() -> usize {
    10
}
fn default_c1() -> f64 {
    1e-4
}
fn default_c2() -> f64 {
    0.9
}
fn default_max_ls() -> usize {
    25
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: default_memory(),
            c1: default_c1(),
            c2: default_c2(),
            max_line_search: default_max_ls(),
        }
    }
}

fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    if !(f1.is_finite() && f2.is_finite() && g1.is_finite() && g2.is_finite()) {
        return 0.5 * (lo + hi);
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

struct Trial {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

struct LineSearch<'a, O: Objective + ?Sized> {
    obj: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    evals: usize,
}

impl<O: Objective + ?Sized> LineSearch<'_, O> {
    fn eval(&mut self, t: f64) -> Result<Trial> {
        let xt: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + t * d).collect();
        let (mut f, g) = self.obj.eval(&xt)?;
        self.evals += 1;
        let mut gtd = dot(&g, self.d);
        if !f.is_finite() || !gtd.is_finite() {
            f = f64::INFINITY;
            gtd = f64::NAN;
        }
        Ok(Trial { t, f, g, gtd })
    }

    /// Returns the accepted trial (possibly the start point if nothing improved).
    fn strong_wolfe(&mut self, t0: f64, f0: f64, g0: &[f64], gtd0: f64, p: &LbfgsParams, tol_change: f64) -> Result<Trial> {
        let d_norm = inf_norm(self.d);
        let start = Trial {
            t: 0.0,
            f: f0,
            g: g0.to_vec(),
            gtd: gtd0,
        };
        let mut new = self.eval(t0)?;
        let mut prev = Trial {
            t: 0.0,
            f: f0,
            g: g0.to_vec(),
            gtd: gtd0,
        };
        let mut ls_iter = 0;
        let mut done = false;
        let mut bracket: Vec<Trial>;
        loop {
            if new.f > f0 + p.c1 * new.t * gtd0 || (ls_iter > 1 && new.f >= prev.f) {
                bracket = vec![prev, new];
                break;
            }
            if new.gtd.abs() <= -p.c2 * gtd0 {
                bracket = vec![new];
                done = true;
                break;
            }
            if new.gtd >= 0.0 {
                bracket = vec![prev, new];
                break;
            }
            if ls_iter >= p.max_line_search {
                bracket = vec![start, new];
                break;
            }
            let min_step = new.t + 0.01 * (new.t - prev.t);
            let max_step = new.t * 10.0;
            let t = cubic_interpolate(prev.t, prev.f, prev.gtd, new.t, new.f, new.gtd, Some((min_step, max_step)));
            prev = new;
            new = self.eval(t)?;
            ls_iter += 1;
        }
        if bracket.len() == 1 {
            return Ok(bracket.pop().unwrap());
        }

        let mut insuf_progress = false;
        let (mut lo, mut hi) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
        while !done && ls_iter < p.max_line_search {
            let (b0, b1) = (bracket[0].t, bracket[1].t);
            if (b1 - b0).abs() * d_norm < tol_change {
                break;
            }
            let mut t = cubic_interpolate(b0, bracket[0].f, bracket[0].gtd, b1, bracket[1].f, bracket[1].gtd, None);
            let (bmin, bmax) = (b0.min(b1), b0.max(b1));
            let eps = 0.1 * (bmax - bmin);
            if (bmax - t).min(t - bmin) < eps {
                if insuf_progress || t >= bmax || t <= bmin {
                    t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                    insuf_progress = false;
                } else {
                    insuf_progress = true;
                }
            } else {
                insuf_progress = false;
            }
            let trial = self.eval(t)?;
            ls_iter += 1;
            if trial.f > f0 + p.c1 * trial.t * gtd0 || trial.f >= bracket[lo].f {
                bracket[hi] = trial;
                (lo, hi) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
            } else {
                if trial.gtd.abs() <= -p.c2 * gtd0 {
                    done = true;
                } else if trial.gtd * (bracket[hi].t - bracket[lo].t) >= 0.0 {
                    let low = Trial {
                        t: bracket[lo].t,
                        f: bracket[lo].f,
                        g: bracket[lo].g.clone(),
                        gtd: bracket[lo].gtd,
                    };
                    bracket[hi] = low;
                }
                bracket[lo] = trial;
            }
        }
        Ok(bracket.swap_remove(lo))
    }
}

/// Minimizes `obj` from `x0` for at most `max_iters` quasi-Newton iterations.
///
/// Stops early when the gradient ∞-norm or the objective decrease falls
/// below `tol`. The best iterate is returned. A non-finite objective at the
/// start point is an error.
pub fn lbfgs_minimize<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    params: &LbfgsParams,
    max_iters: usize,
    tol: f64,
) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.eval(&x)?;
    let mut evals = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Projection {
            iters: 0,
            last_finite: x0.to_vec(),
        });
    }
    let mut best_x = x.clone();
    let mut best_f = f;
    if inf_norm(&g) <= tol {
        return Ok(Minimum {
            x,
            f,
            iters: 0,
            evals,
            converged: true,
        });
    }

    let tol_change = 1e-14;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut g_prev = g.clone();
    let mut t = 0.0;
    let mut h_diag = 1.0;
    let mut converged = false;
    let mut iters = 0;

    while iters < max_iters {
        iters += 1;
        if iters > 1 {
            let y: Vec<f64> = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
            let s: Vec<f64> = d.iter().map(|v| v * t).collect();
            let ys = dot(&y, &s);
            if ys > 1e-10 {
                if history.len() == params.memory {
                    history.pop_front();
                }
                h_diag = ys / dot(&y, &y);
                history.push_back((s, y, 1.0 / ys));
            }
            // two-loop recursion
            let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut alphas = vec![0.0; history.len()];
            for (i, (s, y, rho)) in history.iter().enumerate().rev() {
                let a = rho * dot(s, &q);
                alphas[i] = a;
                q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            }
            q.iter_mut().for_each(|v| *v *= h_diag);
            for (i, (s, y, rho)) in history.iter().enumerate() {
                let b = rho * dot(y, &q);
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alphas[i] - b) * si);
            }
            d = q;
        }
        g_prev.copy_from_slice(&g);
        let f_prev = f;

        let t0 = if iters == 1 {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let mut gtd = dot(&g, &d);
        if gtd > -tol_change {
            // not a descent direction; restart from steepest descent
            history.clear();
            d = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &d);
            if gtd > -tol_change {
                converged = true;
                break;
            }
        }

        let mut ls = LineSearch {
            obj: &mut *obj,
            x: &x,
            d: &d,
            evals: 0,
        };
        let trial = ls.strong_wolfe(t0, f, &g, gtd, params, tol_change)?;
        evals += ls.evals;
        if !trial.f.is_finite() || trial.t == 0.0 {
            if !trial.f.is_finite() {
                return Err(Error::Projection {
                    iters,
                    last_finite: best_x,
                });
            }
            // line search made no progress
            break;
        }
        t = trial.t;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += t * di;
        }
        f = trial.f;
        g = trial.g;
        debug_assert_eq!(g.len(), n);
        if f < best_f {
            best_f = f;
            best_x.copy_from_slice(&x);
        }
        if inf_norm(&g) <= tol || (f_prev - f).abs() < tol {
            converged = true;
            break;
        }
        if inf_norm(&d) * t.abs() <= tol_change {
            break;
        }
    }
    Ok(Minimum {
        x: best_x,
        f: best_f,
        iters,
        evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let mut obj = rosenbrock;
        let m = lbfgs_minimize(&mut obj, &[-1.2, 1.0], &LbfgsParams::default(), 200, 1e-10).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn quadratic_converges_quickly() {
        let a = [3.0, -2.0, 0.5];
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x - a).collect();
            Ok((dot(&r, &r), r.iter().map(|v| 2.0 * v).collect()))
        };
        let m = lbfgs_minimize(&mut obj, &[0.0; 3], &LbfgsParams::default(), 8, 1e-12).unwrap();
        assert!(m.f < 1e-16, "{:?}", m);
        assert!(m.converged);
    }

    #[test]
    fn best_objective_never_above_start() {
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok(((x[0] * 3.0).sin() + 0.1 * x[0] * x[0], vec![3.0 * (x[0] * 3.0).cos() + 0.2 * x[0]])) };
        for s in [-3.0, -1.0, 0.2, 2.5] {
            let f0 = obj(&[s]).unwrap().0;
            let m = lbfgs_minimize(&mut obj, &[s], &LbfgsParams::default(), 8, 0.0).unwrap();
            assert!(m.f <= f0);
        }
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: undefined for x <= 0
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] <= 0.0 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]))
            }
        };
        let m = lbfgs_minimize(&mut obj, &[0.1], &LbfgsParams::default(), 50, 1e-10).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m);
    }
}
