//! Ensemble verification scores.
//!
//! Inputs are `K` cases, each an ensemble of `M` members over a field of `F`
//! grid points (`F = H·W`, or the length of a 1-D field), and one truth per
//! case. Skill and spread are root-mean-square quantities per grid point;
//! CRPS uses the per-grid-point mean absolute difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScores {
    /// RMSE of the ensemble mean.
    pub skill: f64,
    /// Root mean ensemble variance (unbiased, `1/(M-1)`).
    pub spread: f64,
    /// `√((M+1)/M) · spread / skill`; `None` when skill is zero.
    pub ratio: Option<f64>,
    pub crps: f64,
    /// Mean RMSE of individual members.
    pub rmse: f64,
    pub ensemble_size: usize,
    pub case_count: usize,
    pub field_size: usize,
}

/// `ensembles` is `K × M × F` and `truths` is `K × F`, both row-major.
pub fn ensemble_scores(ensembles: &[f64], truths: &[f64], cases: usize, members: usize) -> Result<EnsembleScores> {
    if cases == 0 || members == 0 {
        return Err(Error::Input("need at least one case and one member".into()));
    }
    if members < 2 {
        return Err(Error::MetricUndefined("spread and CRPS need at least two members".into()));
    }
    if truths.len() % cases != 0 {
        return Err(Error::Input("truth length is not a multiple of the case count".into()));
    }
    let f = truths.len() / cases;
    if ensembles.len() != cases * members * f {
        return Err(Error::Dimension {
            expected: cases * members * f,
            got: ensembles.len(),
        });
    }
    let (k_, m_, f_) = (cases as f64, members as f64, f as f64);
    let mut skill_sq = 0.0;
    let mut spread_sq = 0.0;
    let mut mse = 0.0;
    let mut crps = 0.0;
    let mut mean = vec![0.0; f];
    for k in 0..cases {
        let truth = &truths[k * f..(k + 1) * f];
        let ens = &ensembles[k * members * f..(k + 1) * members * f];
        mean.fill(0.0);
        for member in ens.chunks_exact(f) {
            for (a, v) in mean.iter_mut().zip(member) {
                *a += v / m_;
            }
        }
        for (t, mu) in truth.iter().zip(&mean) {
            skill_sq += (t - mu).powi(2);
        }
        let mut abs_err = 0.0;
        for member in ens.chunks_exact(f) {
            for ((v, mu), t) in member.iter().zip(&mean).zip(truth) {
                spread_sq += (v - mu).powi(2) / (m_ - 1.0);
                mse += (v - t).powi(2);
                abs_err += (v - t).abs();
            }
        }
        let mut pair = 0.0;
        for i in 0..members {
            let mi = &ens[i * f..(i + 1) * f];
            for j in (i + 1)..members {
                let mj = &ens[j * f..(j + 1) * f];
                pair += mi.iter().zip(mj).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
        // the double sum over ordered pairs counts each unordered pair twice
        crps += (abs_err / m_ - 2.0 * pair / (2.0 * m_ * (m_ - 1.0))) / f_;
    }
    let skill = (skill_sq / (k_ * f_)).sqrt();
    let spread = (spread_sq / (k_ * f_)).sqrt();
    let ratio = (skill > 0.0).then(|| ((m_ + 1.0) / m_).sqrt() * spread / skill);
    Ok(EnsembleScores {
        skill,
        spread,
        ratio,
        crps: crps / k_,
        rmse: (mse / (k_ * m_ * f_)).sqrt(),
        ensemble_size: members,
        case_count: cases,
        field_size: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    // Literal transcription of the definitions with explicit H × W loops.
    fn brute(ens: &[f64], truth: &[f64], k: usize, m: usize, h: usize, w: usize) -> (f64, f64, f64) {
        let at = |kk: usize, mm: usize, i: usize, j: usize| ens[((kk * m + mm) * h + i) * w + j];
        let tr = |kk: usize, i: usize, j: usize| truth[(kk * h + i) * w + j];
        let mf = m as f64;
        let mut skill = 0.0;
        let mut spread = 0.0;
        for kk in 0..k {
            for i in 0..h {
                for j in 0..w {
                    let mean: f64 = (0..m).map(|mm| at(kk, mm, i, j)).sum::<f64>() / mf;
                    skill += (tr(kk, i, j) - mean).powi(2);
                    spread += (0..m).map(|mm| (at(kk, mm, i, j) - mean).powi(2)).sum::<f64>() / (mf - 1.0);
                }
            }
        }
        let n = (k * h * w) as f64;
        let mut crps = 0.0;
        for kk in 0..k {
            let l1 = |a: &dyn Fn(usize, usize) -> f64, b: &dyn Fn(usize, usize) -> f64| {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        s += (a(i, j) - b(i, j)).abs();
                    }
                }
                s / (h * w) as f64
            };
            let mut first = 0.0;
            for mm in 0..m {
                first += l1(&|i, j| at(kk, mm, i, j), &|i, j| tr(kk, i, j));
            }
            let mut second = 0.0;
            for mm in 0..m {
                for nn in 0..m {
                    second += l1(&|i, j| at(kk, mm, i, j), &|i, j| at(kk, nn, i, j));
                }
            }
            crps += first / mf - second / (2.0 * mf * (mf - 1.0));
        }
        ((skill / n).sqrt(), (spread / n).sqrt(), crps / k as f64)
    }

    #[test]
    fn matches_brute_force_on_random_tensors() {
        let mut r = rng::seeded(0);
        for k in 1..=4 {
            for m in 2..=4 {
                for (h, w) in [(1, 1), (2, 3), (4, 4)] {
                    let ens = rng::normal_vec(&mut r, k * m * h * w);
                    let truth = rng::normal_vec(&mut r, k * h * w);
                    let s = ensemble_scores(&ens, &truth, k, m).unwrap();
                    let (sk, sp, cr) = brute(&ens, &truth, k, m, h, w);
                    assert!((s.skill - sk).abs() < 1e-12);
                    assert!((s.spread - sp).abs() < 1e-12);
                    assert!((s.crps - cr).abs() < 1e-12);
                    let ratio = ((m as f64 + 1.0) / m as f64).sqrt() * sp / sk;
                    assert!((s.ratio.unwrap() - ratio).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perfect_ensemble() {
        let s = ensemble_scores(&[1.0, 2.0, 1.0, 2.0], &[1.0, 2.0], 1, 2).unwrap();
        assert_eq!((s.skill, s.spread, s.crps), (0.0, 0.0, 0.0));
        assert_eq!(s.ratio, None);
    }

    #[test]
    fn hand_evaluated_cases() {
        let s = ensemble_scores(&[0.0, 2.0], &[1.0], 1, 2).unwrap();
        assert_eq!(s.skill, 0.0);
        assert!((s.spread - 2f64.sqrt()).abs() < 1e-15);
        assert!(s.crps.abs() < 1e-15);

        let s = ensemble_scores(&[0.0, 0.0], &[1.0], 1, 2).unwrap();
        assert_eq!((s.skill, s.spread, s.crps), (1.0, 0.0, 1.0));
    }

    #[test]
    fn single_member_is_undefined() {
        assert!(matches!(ensemble_scores(&[0.0], &[1.0], 1, 1), Err(Error::MetricUndefined(_))));
    }
}
