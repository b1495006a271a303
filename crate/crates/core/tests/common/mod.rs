//! Independent reference implementations for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Population moments by plain two-pass summation.
pub struct Moments {
    pub mean_p: f64,
    pub mean_g: f64,
    pub var_p: f64,
    pub var_g: f64,
    pub cov: f64,
}

pub fn moments(p: &[f64], g: &[f64]) -> Moments {
    let n = p.len() as f64;
    let mean_p = p.iter().sum::<f64>() / n;
    let mean_g = g.iter().sum::<f64>() / n;
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    let mut cov = 0.0;
    for i in 0..p.len() {
        let (dp, dg) = (p[i] - mean_p, g[i] - mean_g);
        var_p += dp * dp;
        var_g += dg * dg;
        cov += dp * dg;
    }
    Moments {
        mean_p,
        mean_g,
        var_p: var_p / n,
        var_g: var_g / n,
        cov: cov / n,
    }
}

pub fn ccc_oracle(p: &[f64], g: &[f64]) -> f64 {
    let m = moments(p, g);
    2.0 * m.cov / (m.var_p + m.var_g + (m.mean_p - m.mean_g).powi(2))
}

pub fn pearson_oracle(p: &[f64], g: &[f64]) -> f64 {
    let m = moments(p, g);
    m.cov / (m.var_p.sqrt() * m.var_g.sqrt())
}

pub fn mae_oracle(p: &[f64], g: &[f64]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

/// Centred median with windows shrinking symmetrically at the edges, by sorting.
pub fn median_oracle(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let h = window / 2;
    (0..n)
        .map(|i| {
            let hw = h.min(i).min(n - 1 - i);
            let mut w = x[i - hw..=i + hw].to_vec();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        })
        .collect()
}

/// Columns shifted to zero mean and scaled to unit population variance;
/// constant columns are only shifted.
pub fn standardize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut out = x.to_vec();
    for k in 0..d {
        let mean = x.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in out.iter_mut() {
            r[k] = (r[k] - mean) / sd;
        }
    }
    out
}

pub fn dual_objective(k: &[Vec<f64>], theta: &[f64], y: &[f64], eps: f64) -> f64 {
    let n = theta.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += theta[i] * k[i][j] * theta[j];
        }
    }
    let lin: f64 = (0..n).map(|i| y[i] * theta[i] - eps * theta[i].abs()).sum();
    lin - 0.5 * quad
}

/// Exact maximiser of the epsilon-SVR dual by enumerating every pattern of
/// coefficient states (zero, +C, -C, free positive, free negative) and
/// solving the equality-constrained stationarity system on the free set.
/// Returns the best feasible coefficients and their objective.
pub fn qp_oracle(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let patterns = 5usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..patterns {
        let mut r = code;
        for s in state.iter_mut() {
            *s = (r % 5) as u8;
            r /= 5;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] >= 3).collect();
        let mut theta = vec![0.0; n];
        for i in 0..n {
            theta[i] = match state[i] {
                1 => c,
                2 => -c,
                _ => 0.0,
            };
        }
        let bound_sum: f64 = theta.iter().sum();
        if free.is_empty() {
            if bound_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            for (p, &i) in free.iter().enumerate() {
                for (q, &j) in free.iter().enumerate() {
                    a[(p, q)] = k[i][j];
                }
                a[(p, m)] = 1.0;
                a[(m, p)] = 1.0;
                let sign = if state[i] == 3 { 1.0 } else { -1.0 };
                let fixed: f64 = (0..n).map(|j| k[i][j] * theta[j]).sum();
                rhs[p] = y[i] - eps * sign - fixed;
            }
            rhs[m] = -bound_sum;
            let Some(sol) = a.lu().solve(&rhs) else {
                continue;
            };
            let mut ok = true;
            for (p, &i) in free.iter().enumerate() {
                let v = sol[p];
                let signed = if state[i] == 3 { v } else { -v };
                if !(-1e-12..=c + 1e-12).contains(&signed) || !v.is_finite() {
                    ok = false;
                    break;
                }
                theta[i] = v;
            }
            if !ok || theta.iter().sum::<f64>().abs() > 1e-9 {
                continue;
            }
        }
        let obj = dual_objective(k, &theta, y, eps);
        if best.as_ref().is_none_or(|b| obj > b.1) {
            best = Some((theta, obj));
        }
    }
    best.expect("theta = 0 is always feasible")
}

/// Smooth random trace in (-1, 1): a few slow sinusoids through tanh.
pub fn smooth_trace(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.002..0.02),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    (0..n)
        .map(|t| {
            let s: f64 = comps
                .iter()
                .map(|&(f, ph, a)| a * (std::f64::consts::TAU * f * t as f64 + ph).sin())
                .sum();
            (0.8 * s).tanh()
        })
        .collect()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
