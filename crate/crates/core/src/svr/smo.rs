//! SMO solver for the epsilon-SVR dual.
//!
//! Variables `t < n` are `alpha_t` (sign `+1`), variables `t >= n` are
//! `alpha*_{t-n}` (sign `-1`). The solver minimises
//!
//! ```text
//! f(beta) = 1/2 beta' Q beta + p' beta,   Q_ts = s_t s_s K(x_t, x_s)
//! p_t = eps - y_t (t < n),   p_t = eps + y_{t-n} (t >= n)
//! s.t. sum_t s_t beta_t = 0,  0 <= beta_t <= C
//! ```
//!
//! Working pairs are the maximal KKT violator `i` and the partner `j` giving
//! the largest decrease of `f` for that `i`.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::kernel::Kernel;
use super::standardize::standardize_fit;
use super::{SvrHyperParams, SvrModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoOptions {
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget in sweeps; one sweep is `2n` pair updates.
    pub max_passes: usize,
    /// Kernel row cache budget in MiB.
    pub cache_mb: usize,
    /// Record the dual objective after every pair update.
    pub record_objective: bool,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tol: 1e-3,
            max_passes: 10_000,
            cache_mb: 256,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxPasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub termination: Termination,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub violation: f64,
    /// Dual objective `-1/2 a'Ka - eps*sum|a| + y'a` of the returned coefficients.
    pub dual_objective: f64,
    /// Dual objective after each pair update, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl TrainingInfo {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Kernel rows over the `n` base points, computed on demand.
struct KernelRows<'a> {
    x: &'a Matrix,
    kernel: Kernel,
    rows: HashMap<usize, (Rc<Vec<f64>>, u64)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Matrix, kernel: Kernel, cache_mb: usize) -> Self {
        let n = x.rows().max(1);
        let capacity = ((cache_mb.max(1) << 20) / (n * 8)).max(2);
        KernelRows {
            x,
            kernel,
            rows: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    fn diag(&self, i: usize) -> f64 {
        let r = self.x.row(i);
        self.kernel.eval(r, r)
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        self.clock += 1;
        let clock = self.clock;
        if let Some((row, stamp)) = self.rows.get_mut(&i) {
            *stamp = clock;
            return Rc::clone(row);
        }
        if self.rows.len() >= self.capacity {
            // evict least recently used
            let oldest = self
                .rows
                .iter()
                .min_by_key(|(_, (_, s))| *s)
                .map(|(&k, _)| k)
                .unwrap();
            self.rows.remove(&oldest);
        }
        let xi = self.x.row(i);
        let row: Vec<f64> = self.x.iter_rows().map(|xj| self.kernel.eval(xi, xj)).collect();
        let row = Rc::new(row);
        self.rows.insert(i, (Rc::clone(&row), clock));
        row
    }
}

struct Solver<'a> {
    n: usize,
    c: f64,
    beta: Vec<f64>,
    grad: Vec<f64>,
    p: Vec<f64>,
    qd: Vec<f64>,
    kernel: KernelRows<'a>,
}

impl Solver<'_> {
    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    fn base(&self, t: usize) -> usize {
        if t < self.n {
            t
        } else {
            t - self.n
        }
    }

    #[inline]
    fn at_upper(&self, t: usize) -> bool {
        self.beta[t] >= self.c
    }

    #[inline]
    fn at_lower(&self, t: usize) -> bool {
        self.beta[t] <= 0.0
    }

    /// `Q_t,s` for all `s`, from the cached kernel row of `t`'s base point.
    fn q_row(&mut self, t: usize) -> Vec<f64> {
        let st = self.sign(t);
        let k = self.kernel.row(self.base(t));
        let n = self.n;
        let mut q = Vec::with_capacity(2 * n);
        q.extend(k.iter().map(|&v| st * v));
        q.extend(k.iter().map(|&v| -st * v));
        q
    }

    /// Returns the working pair, or `None` with the current violation when optimal.
    fn select(&mut self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let l = 2 * self.n;
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let v = if t < self.n {
                (!self.at_upper(t)).then(|| -self.grad[t])
            } else {
                (!self.at_lower(t)).then(|| self.grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            return (None, 0.0);
        };
        let si = self.sign(i);
        let ki = self.kernel.row(self.base(i));
        let qdi = self.qd[i];

        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..l {
            let st = self.sign(t);
            // Q_it = s_i s_t K
            let q_it = si * st * ki[self.base(t)];
            if st > 0.0 {
                if !self.at_lower(t) {
                    let grad_diff = gmax + self.grad[t];
                    gmax2 = gmax2.max(self.grad[t]);
                    if grad_diff > 0.0 {
                        let mut quad = qdi + self.qd[t] - 2.0 * si * q_it;
                        if quad <= 0.0 {
                            quad = TAU;
                        }
                        let obj = -(grad_diff * grad_diff) / quad;
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            } else if !self.at_upper(t) {
                let grad_diff = gmax - self.grad[t];
                gmax2 = gmax2.max(-self.grad[t]);
                if grad_diff > 0.0 {
                    let mut quad = qdi + self.qd[t] + 2.0 * si * q_it;
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let violation = gmax + gmax2;
        if violation < tol {
            return (None, violation.max(0.0));
        }
        match j_sel {
            Some(j) => (Some((i, j)), violation),
            None => (None, violation.max(0.0)),
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let qi = self.q_row(i);
        let qj = self.q_row(j);
        let (old_i, old_j) = (self.beta[i], self.beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.sign(i) != self.sign(j) {
            let mut quad = self.qd[i] + self.qd[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = self.qd[i] + self.qd[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.beta[i] = ai;
        self.beta[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for (t, g) in self.grad.iter_mut().enumerate() {
            *g += qi[t] * di + qj[t] * dj;
        }
    }

    /// `-f(beta)`, the dual objective in maximisation form.
    fn objective(&self) -> f64 {
        -0.5 * self
            .beta
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(b, (g, p))| b * (g + p))
            .sum::<f64>()
    }

    /// Bias from free variables, or the midpoint of the feasible interval.
    fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut n_free = 0usize;
        let mut sum_free = 0.0;
        for t in 0..2 * self.n {
            let st = self.sign(t);
            let yg = st * self.grad[t];
            if self.at_upper(t) {
                if st < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if st > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }
}

/// Dual objective `-1/2 a'Ka - eps*sum|a_i| + y'a` for combined coefficients.
pub(crate) fn dual_objective(k: &[Vec<f64>], coefs: &[f64], y: &[f64], epsilon: f64) -> f64 {
    let mut quad = 0.0;
    for (i, ki) in k.iter().enumerate() {
        for (j, kij) in ki.iter().enumerate() {
            quad += coefs[i] * coefs[j] * kij;
        }
    }
    let lin: f64 = coefs
        .iter()
        .zip(y)
        .map(|(a, yi)| yi * a - epsilon * a.abs())
        .sum();
    -0.5 * quad + lin
}

/// Trains an epsilon-SVR on standardized copies of `x`.
///
/// Exhausting `max_passes` is not an error: the model is returned with
/// [`Termination::MaxPasses`] recorded in its training info.
pub fn train_svr(
    x: &Matrix,
    y: &[f64],
    hyper: &SvrHyperParams,
    opts: &SmoOptions,
) -> Result<SvrModel> {
    hyper.validate()?;
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: y.len(),
        });
    }
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training rows, got {}",
            x.rows()
        )));
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", opts.tol)));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training targets"));
    }

    let standardizer = standardize_fit(x)?;
    let z = standardizer.transform(x)?;
    let n = z.rows();
    let eps = hyper.epsilon;
    let mut p = Vec::with_capacity(2 * n);
    p.extend(y.iter().map(|&yi| eps - yi));
    p.extend(y.iter().map(|&yi| eps + yi));

    let kernel = KernelRows::new(&z, hyper.kernel, opts.cache_mb);
    let qd: Vec<f64> = (0..2 * n).map(|t| kernel.diag(t % n)).collect();
    let mut solver = Solver {
        n,
        c: hyper.c,
        beta: vec![0.0; 2 * n],
        grad: p.clone(),
        p,
        qd,
        kernel,
    };

    let max_iter = opts.max_passes.saturating_mul(2 * n).max(1);
    let mut iterations = 0usize;
    let mut trace = Vec::new();
    let (termination, violation) = loop {
        let (pair, violation) = solver.select(opts.tol);
        let Some((i, j)) = pair else {
            break (Termination::Converged, violation);
        };
        if iterations >= max_iter {
            break (Termination::MaxPasses, violation);
        }
        solver.update(i, j);
        iterations += 1;
        if opts.record_objective {
            trace.push(solver.objective());
        }
    };
    if termination == Termination::MaxPasses {
        log::warn!(
            "SMO stopped after {iterations} iterations with violation {violation:.3e}"
        );
    }

    let bias = solver.bias();
    let mut sv_idx = Vec::new();
    let mut coefs = Vec::new();
    for i in 0..n {
        let a = solver.beta[i] - solver.beta[i + n];
        if a != 0.0 {
            sv_idx.push(i);
            coefs.push(a);
        }
    }
    let support_vectors = z.select_rows(&sv_idx);

    // objective of the stored coefficients, over support vectors only
    let k: Vec<Vec<f64>> = support_vectors
        .iter_rows()
        .map(|a| {
            support_vectors
                .iter_rows()
                .map(|b| hyper.kernel.eval(a, b))
                .collect()
        })
        .collect();
    let y_sv: Vec<f64> = sv_idx.iter().map(|&i| y[i]).collect();
    let dual = dual_objective(&k, &coefs, &y_sv, eps);

    Ok(SvrModel {
        support_vectors,
        dual_coefs: coefs,
        bias,
        hyper: *hyper,
        standardizer,
        info: TrainingInfo {
            termination,
            iterations,
            violation,
            dual_objective: dual,
            objective_trace: trace,
        },
    })
}
