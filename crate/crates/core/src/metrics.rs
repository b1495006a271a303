//! Agreement metrics between a prediction and a gold-standard trace.
//!
//! All second moments are population moments (divide by `n`). Sums are
//! accumulated with Neumaier compensation so the reported values stay
//! within a few ulps of an exact evaluation at `n ~ 1e5`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<CompensatedSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Population variance about the sample mean.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter()
        .map(|&x| (x - m) * (x - m))
        .collect::<CompensatedSum>()
        .value()
        / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

fn check_pair(pred: &[f64], gold: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} values, got {}",
            pred.len()
        )));
    }
    if pred.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prediction"));
    }
    if gold.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gold standard"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_pair(pred, gold, 1)?;
    let s: CompensatedSum = pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).collect();
    Ok(s.value() / pred.len() as f64)
}

/// Mean, variance and covariance of a pair, with a degenerate-variance flag.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_pred: f64,
    mean_gold: f64,
    var_pred: f64,
    var_gold: f64,
    cov: f64,
}

impl Moments {
    fn of(pred: &[f64], gold: &[f64]) -> Self {
        let n = pred.len() as f64;
        let mean_pred = mean(pred);
        let mean_gold = mean(gold);
        let mut vp = CompensatedSum::default();
        let mut vg = CompensatedSum::default();
        let mut cv = CompensatedSum::default();
        for (&p, &g) in pred.iter().zip(gold) {
            let dp = p - mean_pred;
            let dg = g - mean_gold;
            vp.add(dp * dp);
            vg.add(dg * dg);
            cv.add(dp * dg);
        }
        Moments {
            mean_pred,
            mean_gold,
            var_pred: vp.value() / n,
            var_gold: vg.value() / n,
            cov: cv.value() / n,
        }
    }
}

// A variance is treated as zero when it is below rounding noise for the
// sequence's magnitude.
fn is_zero_variance(var: f64, mean: f64) -> bool {
    let scale = 1.0 + mean.abs();
    var <= (1e-14 * scale) * (1e-14 * scale)
}

/// Pearson correlation with population moments. Zero-variance inputs give `0`.
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_pair(pred, gold, 2)?;
    let m = Moments::of(pred, gold);
    if is_zero_variance(m.var_pred, m.mean_pred) || is_zero_variance(m.var_gold, m.mean_gold) {
        return Ok(0.0);
    }
    Ok(clamp_unit(m.cov / (m.var_pred.sqrt() * m.var_gold.sqrt())))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Full evaluation of a prediction against its gold standard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ccc: f64,
    pub mae: f64,
    pub pearson: f64,
    pub mean_pred: f64,
    pub mean_gold: f64,
    pub var_pred: f64,
    pub var_gold: f64,
    pub n: usize,
    /// Set when either variance is zero and the degenerate conventions applied.
    pub degenerate: bool,
}

/// Concordance correlation coefficient, with MAE and the moments it is built from.
///
/// Degenerate conventions: both sequences constant and equal gives `ccc = 1`,
/// any other zero-variance case gives `ccc = 0`.
pub fn ccc(pred: &[f64], gold: &[f64]) -> Result<EvaluationReport> {
    check_pair(pred, gold, 2)?;
    let m = Moments::of(pred, gold);
    let mae = mae(pred, gold)?;
    let zero_p = is_zero_variance(m.var_pred, m.mean_pred);
    let zero_g = is_zero_variance(m.var_gold, m.mean_gold);
    let (pearson, ccc, degenerate) = if zero_p || zero_g {
        let equal = zero_p && zero_g && pred.iter().zip(gold).all(|(p, g)| p == g);
        (0.0, if equal { 1.0 } else { 0.0 }, true)
    } else {
        let (sp, sg) = (m.var_pred.sqrt(), m.var_gold.sqrt());
        let rho = clamp_unit(m.cov / (sp * sg));
        let dm = m.mean_pred - m.mean_gold;
        let ccc = 2.0 * rho * sp * sg / (m.var_pred + m.var_gold + dm * dm);
        (rho, ccc, false)
    };
    Ok(EvaluationReport {
        ccc,
        mae,
        pearson,
        mean_pred: m.mean_pred,
        mean_gold: m.mean_gold,
        var_pred: m.var_pred,
        var_gold: m.var_gold,
        n: pred.len(),
        degenerate,
    })
}

impl EvaluationReport {
    pub const KEYS: [&'static str; 8] = [
        "ccc",
        "mae",
        "pearson",
        "mean_pred",
        "mean_gold",
        "var_pred",
        "var_gold",
        "n",
    ];

    /// Flat `key=value` pairs in the fixed key order, full precision.
    pub fn records(&self) -> Vec<(&'static str, String)> {
        vec![
            ("ccc", fmt_f64(self.ccc)),
            ("mae", fmt_f64(self.mae)),
            ("pearson", fmt_f64(self.pearson)),
            ("mean_pred", fmt_f64(self.mean_pred)),
            ("mean_gold", fmt_f64(self.mean_gold)),
            ("var_pred", fmt_f64(self.var_pred)),
            ("var_gold", fmt_f64(self.var_gold)),
            ("n", self.n.to_string()),
        ]
    }

    /// Inverse of [`EvaluationReport::records`]. Missing keys are an error; the
    /// degenerate flag is recomputed from the stored variances.
    pub fn from_records<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut vals: [Option<&str>; 8] = [None; 8];
        for (k, v) in pairs {
            if let Some(i) = Self::KEYS.iter().position(|key| *key == k) {
                vals[i] = Some(v);
            }
        }
        let get = |i: usize| -> Result<&str> {
            vals[i].ok_or_else(|| Error::InvalidArgument(format!("missing key {}", Self::KEYS[i])))
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?.parse::<f64>().map_err(|e| {
                Error::InvalidArgument(format!("bad value for {}: {e}", Self::KEYS[i]))
            })
        };
        let n = get(7)?
            .parse::<usize>()
            .map_err(|e| Error::InvalidArgument(format!("bad value for n: {e}")))?;
        let var_pred = num(5)?;
        let var_gold = num(6)?;
        let mean_pred = num(3)?;
        let mean_gold = num(4)?;
        Ok(EvaluationReport {
            ccc: num(0)?,
            mae: num(1)?,
            pearson: num(2)?,
            mean_pred,
            mean_gold,
            var_pred,
            var_gold,
            n,
            degenerate: is_zero_variance(var_pred, mean_pred)
                || is_zero_variance(var_gold, mean_gold),
        })
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.records().into_iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Scores predictions over concatenated per-subject sequences.
///
/// `include`, when set, restricts scoring to the marked frames. With
/// `per_subject_average` the score is the mean of per-segment CCCs instead of
/// the CCC of the concatenation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluator {
    pub segments: Vec<usize>,
    pub include: Option<Vec<bool>>,
    pub per_subject_average: bool,
}

impl Evaluator {
    pub fn global() -> Self {
        Evaluator::default()
    }

    fn select<'a>(&self, xs: &'a [f64], range: std::ops::Range<usize>) -> Vec<f64> {
        match &self.include {
            None => xs[range].to_vec(),
            Some(inc) => range.filter(|&i| inc[i]).map(|i| xs[i]).collect(),
        }
    }

    fn check(&self, pred: &[f64], gold: &[f64]) -> Result<()> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: gold.len(),
            });
        }
        if let Some(inc) = &self.include {
            if inc.len() != pred.len() {
                return Err(Error::LengthMismatch {
                    left: inc.len(),
                    right: pred.len(),
                });
            }
        }
        if !self.segments.is_empty() {
            let total: usize = self.segments.iter().sum();
            if total != pred.len() {
                return Err(Error::LengthMismatch {
                    left: total,
                    right: pred.len(),
                });
            }
        }
        Ok(())
    }

    /// Report over all included frames of the concatenation.
    pub fn report(&self, pred: &[f64], gold: &[f64]) -> Result<EvaluationReport> {
        self.check(pred, gold)?;
        let p = self.select(pred, 0..pred.len());
        let g = self.select(gold, 0..gold.len());
        ccc(&p, &g)
    }

    /// CCC used for model and chain selection.
    pub fn score(&self, pred: &[f64], gold: &[f64]) -> Result<f64> {
        if !self.per_subject_average || self.segments.len() <= 1 {
            return Ok(self.report(pred, gold)?.ccc);
        }
        self.check(pred, gold)?;
        let mut start = 0;
        let mut acc = 0.0;
        for &len in &self.segments {
            let p = self.select(pred, start..start + len);
            let g = self.select(gold, start..start + len);
            acc += ccc(&p, &g)?.ccc;
            start += len;
        }
        Ok(acc / self.segments.len() as f64)
    }
}

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
