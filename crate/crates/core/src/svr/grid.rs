use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::Kernel;
use super::smo::{train_svr, SmoOptions};
use super::{SvrHyperParams, SvrModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;

/// Hyperparameter grid. Cells are enumerated kernel-major, then `C`, then `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    pub epsilon_values: Vec<f64>,
    pub kernels: Vec<Kernel>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c_values: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            epsilon_values: vec![1e-4, 1e-3, 1e-2, 1e-1],
            kernels: vec![Kernel::Linear],
        }
    }
}

impl GridSpec {
    pub fn single(hyper: SvrHyperParams) -> Self {
        GridSpec {
            c_values: vec![hyper.c],
            epsilon_values: vec![hyper.epsilon],
            kernels: vec![hyper.kernel],
        }
    }

    pub fn cells(&self) -> Result<Vec<SvrHyperParams>> {
        if self.c_values.is_empty() || self.epsilon_values.is_empty() || self.kernels.is_empty() {
            return Err(Error::InvalidArgument("grid has an empty axis".into()));
        }
        let mut cells = Vec::new();
        for &kernel in &self.kernels {
            for &c in &self.c_values {
                for &epsilon in &self.epsilon_values {
                    cells.push(SvrHyperParams::new(c, epsilon, kernel)?);
                }
            }
        }
        Ok(cells)
    }
}

/// Dev-set criterion used to rank grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Ccc,
    Pearson,
    Mae,
}

impl Objective {
    pub fn score(self, pred: &[f64], gold: &[f64]) -> Result<f64> {
        match self {
            Objective::Ccc => Ok(metrics::ccc(pred, gold)?.ccc),
            Objective::Pearson => metrics::pearson(pred, gold),
            Objective::Mae => metrics::mae(pred, gold),
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Mae => a < b,
            _ => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hyper: SvrHyperParams,
    pub score: Option<f64>,
    pub error: Option<String>,
    pub converged: bool,
    pub n_support: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: SvrHyperParams,
    pub best_index: usize,
    pub best_model: SvrModel,
    /// One entry per cell, in enumeration order.
    pub table: Vec<GridCell>,
}

/// Seeded subset of at most `max_rows` rows, kept in original order.
pub fn subsample_rows(x: &Matrix, y: &[f64], max_rows: usize, seed: u64) -> (Matrix, Vec<f64>) {
    if x.rows() <= max_rows {
        return (x.clone(), y.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, x.rows(), max_rows).into_vec();
    idx.sort_unstable();
    let ys = idx.iter().map(|&i| y[i]).collect();
    (x.select_rows(&idx), ys)
}

/// Trains one model per cell on `train` and ranks cells by `objective` on `dev`.
///
/// Cells run on the current rayon pool. Ties go to the smaller `C`, then the
/// smaller `epsilon`, then the earlier cell, so the result does not depend on
/// scheduling. A cell that fails records its error and the search continues.
pub fn grid_search(
    grid: &GridSpec,
    train: (&Matrix, &[f64]),
    dev: (&Matrix, &[f64]),
    objective: Objective,
    opts: &SmoOptions,
) -> Result<GridResult> {
    let cells = grid.cells()?;
    let (xt, yt) = train;
    let (xd, yd) = dev;

    let outcomes: Vec<(GridCell, Option<SvrModel>)> = cells
        .par_iter()
        .map(|hyper| {
            let run = train_svr(xt, yt, hyper, opts)
                .and_then(|m| m.predict(xd).map(|p| (m, p)))
                .and_then(|(m, p)| objective.score(&p, yd).map(|s| (m, s)));
            match run {
                Ok((m, s)) => (
                    GridCell {
                        hyper: *hyper,
                        score: Some(s),
                        error: None,
                        converged: m.info.converged(),
                        n_support: m.n_support(),
                    },
                    Some(m),
                ),
                Err(e) => (
                    GridCell {
                        hyper: *hyper,
                        score: None,
                        error: Some(e.to_string()),
                        converged: false,
                        n_support: 0,
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (cell, _)) in outcomes.iter().enumerate() {
        let Some(s) = cell.score else { continue };
        let replace = match best {
            None => true,
            Some(b) => {
                let bc = &outcomes[b].0;
                let bs = bc.score.unwrap();
                objective.better(s, bs)
                    || (s == bs
                        && (cell.hyper.c, cell.hyper.epsilon) < (bc.hyper.c, bc.hyper.epsilon))
            }
        };
        if replace {
            best = Some(i);
        }
    }
    let Some(best_index) = best else {
        let first = outcomes
            .iter()
            .find_map(|(c, _)| c.error.clone())
            .unwrap_or_default();
        return Err(Error::InvalidArgument(format!(
            "every grid cell failed (first error: {first})"
        )));
    };
    let mut table = Vec::with_capacity(outcomes.len());
    let mut best_model = None;
    for (i, (cell, model)) in outcomes.into_iter().enumerate() {
        if i == best_index {
            best_model = model;
        }
        table.push(cell);
    }
    Ok(GridResult {
        best: table[best_index].hyper,
        best_index,
        best_model: best_model.expect("best cell has a model"),
        table,
    })
}
