//! Prediction enhancement chain: median smoothing, rescaling by a
//! train-fitted factor, and mean centering, plus a dev-set tuner over the
//! chain's on/off toggles and modes.
//!
//! The scale factor and all means are fitted on raw training predictions and
//! the training gold standard only; development gold is used solely to score
//! candidate chains.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, Evaluator};

pub const MIN_WINDOW_S: f64 = 0.4;
pub const MAX_WINDOW_S: f64 = 8.0;

/// Median windows searched by default, in seconds.
pub const DEFAULT_WINDOWS_S: [f64; 7] = [0.4, 0.8, 1.6, 2.0, 2.8, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `std(gold_train) / std(pred_train)`.
    #[default]
    StdRatio,
    /// `mean(gold_train) / mean(pred_train)`.
    MeanRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// `y' = y - mean(gold_train)`.
    Literal,
    /// `y' = y + (mean(gold_train) - mean(pred_train))`.
    #[default]
    BiasCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Median,
    Scale,
    Center,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Median => "median",
            Step::Scale => "scale",
            Step::Center => "center",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessParams {
    pub median_window_s: Option<f64>,
    pub beta: Option<f64>,
    pub gold_mean_train: Option<f64>,
    /// Mean of the training predictions as seen by the centering step.
    pub pred_mean_train: Option<f64>,
    pub beta_mode: BetaMode,
    pub center_mode: CenterMode,
    /// Enabled steps in application order.
    pub step_order: Vec<Step>,
}

impl Default for PostProcessParams {
    fn default() -> Self {
        PostProcessParams::identity()
    }
}

impl PostProcessParams {
    /// The empty chain.
    pub fn identity() -> Self {
        PostProcessParams {
            median_window_s: None,
            beta: None,
            gold_mean_train: None,
            pred_mean_train: None,
            beta_mode: BetaMode::default(),
            center_mode: CenterMode::default(),
            step_order: Vec::new(),
        }
    }

    pub fn enabled_steps(&self) -> usize {
        self.step_order.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.step_order.iter().enumerate() {
            if self.step_order[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("step {s} listed twice")));
            }
            match s {
                Step::Median => {
                    let w = self.median_window_s.ok_or_else(|| {
                        Error::InvalidArgument("median step without a window".into())
                    })?;
                    check_window(w, false)?;
                }
                Step::Scale => match self.beta {
                    Some(b) if b.is_finite() && b > 0.0 => {}
                    _ => return Err(Error::InvalidArgument("scale step needs beta > 0".into())),
                },
                Step::Center => {
                    if self.gold_mean_train.is_none()
                        || (self.center_mode == CenterMode::BiasCorrection
                            && self.pred_mean_train.is_none())
                    {
                        return Err(Error::InvalidArgument(
                            "center step needs fitted means".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_window(window_s: f64, allow_override: bool) -> Result<()> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(Error::InvalidArgument(format!("bad median window {window_s}")));
    }
    if !allow_override && !(MIN_WINDOW_S..=MAX_WINDOW_S).contains(&window_s) {
        return Err(Error::InvalidArgument(format!(
            "median window {window_s}s outside [{MIN_WINDOW_S}, {MAX_WINDOW_S}]"
        )));
    }
    Ok(())
}

/// Window length in frames: `round(window_s / frame_period_s)`, bumped to the next odd count.
pub fn window_frames(window_s: f64, frame_period_s: f64) -> usize {
    let w = (window_s / frame_period_s).round().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Sliding median over an odd window of `window` frames.
///
/// Near the ends the window shrinks symmetrically so that it stays centred
/// and odd: frame `i` uses half-width `min(h, i, n-1-i)`. The first and last
/// frames therefore pass through unchanged.
pub fn median_filter_frames(pred: &[f64], window: usize) -> Result<Vec<f64>> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("median filter of an empty sequence".into()));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("median window must be odd, got {window}")));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("median filter input"));
    }
    let n = pred.len();
    let h = window / 2;
    let mut out = Vec::with_capacity(n);
    // sorted contents of pred[lo..=hi]
    let mut sorted: Vec<f64> = Vec::with_capacity(window);
    let (mut lo, mut hi) = (0usize, 0usize);
    sorted.push(pred[0]);
    for i in 0..n {
        let hw = h.min(i).min(n - 1 - i);
        let (nlo, nhi) = (i - hw, i + hw);
        while hi < nhi {
            hi += 1;
            let v = pred[hi];
            let pos = sorted.partition_point(|&x| x < v);
            sorted.insert(pos, v);
        }
        while lo < nlo {
            let v = pred[lo];
            let pos = sorted.partition_point(|&x| x < v);
            sorted.remove(pos);
            lo += 1;
        }
        out.push(sorted[sorted.len() / 2]);
    }
    Ok(out)
}

/// Median filter with the window given in seconds. Windows outside
/// `[0.4, 8.0]` s are rejected unless `allow_override` is set.
pub fn median_filter(
    pred: &[f64],
    window_s: f64,
    frame_period_s: f64,
    allow_override: bool,
) -> Result<Vec<f64>> {
    check_window(window_s, allow_override)?;
    if !(frame_period_s.is_finite() && frame_period_s > 0.0) {
        return Err(Error::InvalidArgument(format!("bad frame period {frame_period_s}")));
    }
    median_filter_frames(pred, window_frames(window_s, frame_period_s))
}

/// Applies the median filter independently within each segment.
pub fn median_filter_segments(
    pred: &[f64],
    segments: &[usize],
    window: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pred.len());
    let mut start = 0;
    for &len in segments_or_whole(segments, pred.len())?.iter() {
        out.extend(median_filter_frames(&pred[start..start + len], window)?);
        start += len;
    }
    Ok(out)
}

fn segments_or_whole(segments: &[usize], total: usize) -> Result<Vec<usize>> {
    if segments.is_empty() {
        return Ok(vec![total]);
    }
    let s: usize = segments.iter().sum();
    if s != total {
        return Err(Error::LengthMismatch { left: s, right: total });
    }
    Ok(segments.to_vec())
}

pub fn fit_beta(gold_train: &[f64], pred_train: &[f64], mode: BetaMode) -> Result<f64> {
    if gold_train.len() != pred_train.len() {
        return Err(Error::LengthMismatch {
            left: gold_train.len(),
            right: pred_train.len(),
        });
    }
    if gold_train.len() < 2 {
        return Err(Error::InvalidArgument("fit_beta needs at least 2 values".into()));
    }
    let (num, den) = match mode {
        BetaMode::StdRatio => (metrics::std_dev(gold_train), metrics::std_dev(pred_train)),
        BetaMode::MeanRatio => (metrics::mean(gold_train), metrics::mean(pred_train)),
    };
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegeneratePredictions("zero denominator in scale factor"));
    }
    let beta = num / den;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::DegeneratePredictions("scale factor is not positive"));
    }
    Ok(beta)
}

pub fn apply_scaling(pred: &[f64], beta: f64) -> Vec<f64> {
    pred.iter().map(|&p| beta * p).collect()
}

pub fn apply_centering(pred: &[f64], gold_mean: f64, mode: CenterMode, pred_mean: f64) -> Vec<f64> {
    match mode {
        CenterMode::Literal => pred.iter().map(|&p| p - gold_mean).collect(),
        CenterMode::BiasCorrection => {
            let shift = gold_mean - pred_mean;
            pred.iter().map(|&p| p + shift).collect()
        }
    }
}

/// Output after each applied step, plus the final sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStages {
    pub after: Vec<(Step, Vec<f64>)>,
    pub output: Vec<f64>,
}

impl ChainStages {
    /// Output after `step`, or after the last earlier step if `step` was skipped.
    pub fn stage(&self, step: Step, raw: &[f64]) -> Vec<f64> {
        let order = [Step::Median, Step::Scale, Step::Center];
        let rank = |s: Step| order.iter().position(|&o| o == s).unwrap();
        let mut cur = raw.to_vec();
        for (s, v) in &self.after {
            if rank(*s) <= rank(step) {
                cur = v.clone();
            }
        }
        cur
    }
}

/// Runs the configured steps in `params.step_order` over `pred`; the median
/// step respects `segments` (empty means one segment).
pub fn apply_chain(
    params: &PostProcessParams,
    pred: &[f64],
    segments: &[usize],
    frame_period_s: f64,
) -> Result<ChainStages> {
    params.validate()?;
    let mut cur = pred.to_vec();
    let mut after = Vec::new();
    for &step in &params.step_order {
        cur = match step {
            Step::Median => {
                let w = window_frames(params.median_window_s.unwrap(), frame_period_s);
                median_filter_segments(&cur, segments, w)?
            }
            Step::Scale => apply_scaling(&cur, params.beta.unwrap()),
            Step::Center => apply_centering(
                &cur,
                params.gold_mean_train.unwrap(),
                params.center_mode,
                params.pred_mean_train.unwrap_or(0.0),
            ),
        };
        after.push((step, cur.clone()));
    }
    Ok(ChainStages { after, output: cur })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub windows_s: Vec<f64>,
    pub beta_modes: Vec<BetaMode>,
    pub center_modes: Vec<CenterMode>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            windows_s: DEFAULT_WINDOWS_S.to_vec(),
            beta_modes: vec![BetaMode::StdRatio, BetaMode::MeanRatio],
            center_modes: vec![CenterMode::BiasCorrection],
        }
    }
}

impl SearchSpace {
    /// `(windows + 1) x 2 x 2 x |beta_modes| x |center_modes|`.
    pub fn cardinality(&self) -> usize {
        (self.windows_s.len() + 1) * 4 * self.beta_modes.len() * self.center_modes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCandidate {
    pub median_window_s: Option<f64>,
    pub scale: bool,
    pub center: bool,
    pub beta_mode: BetaMode,
    pub center_mode: CenterMode,
    pub dev_ccc: Option<f64>,
    pub error: Option<String>,
}

impl ChainCandidate {
    fn enabled(&self) -> usize {
        self.median_window_s.is_some() as usize + self.scale as usize + self.center as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub params: PostProcessParams,
    pub best_index: usize,
    pub table: Vec<ChainCandidate>,
}

/// Aligned inputs for [`tune_chain`].
#[derive(Debug, Clone, Copy)]
pub struct ChainData<'a> {
    pub raw_dev_pred: &'a [f64],
    pub gold_dev: &'a [f64],
    /// Per-subject lengths of the dev sequences; empty means one segment.
    pub dev_segments: &'a [usize],
    pub raw_train_pred: &'a [f64],
    pub gold_train: &'a [f64],
    pub frame_period_s: f64,
}

/// Statistics of the training predictions that parametrise the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub gold_mean: f64,
    pub pred_mean: f64,
    pub beta_std_ratio: Option<f64>,
    pub beta_mean_ratio: Option<f64>,
}

impl TrainStats {
    pub fn fit(gold_train: &[f64], raw_train_pred: &[f64]) -> Result<Self> {
        if gold_train.len() != raw_train_pred.len() {
            return Err(Error::LengthMismatch {
                left: gold_train.len(),
                right: raw_train_pred.len(),
            });
        }
        if gold_train.is_empty() {
            return Err(Error::InvalidArgument("empty training predictions".into()));
        }
        Ok(TrainStats {
            gold_mean: metrics::mean(gold_train),
            pred_mean: metrics::mean(raw_train_pred),
            beta_std_ratio: fit_beta(gold_train, raw_train_pred, BetaMode::StdRatio).ok(),
            beta_mean_ratio: fit_beta(gold_train, raw_train_pred, BetaMode::MeanRatio).ok(),
        })
    }

    pub fn beta(&self, mode: BetaMode) -> Option<f64> {
        match mode {
            BetaMode::StdRatio => self.beta_std_ratio,
            BetaMode::MeanRatio => self.beta_mean_ratio,
        }
    }

    /// Chain parameters for one combination of toggles.
    pub fn params(
        &self,
        median_window_s: Option<f64>,
        scale: bool,
        center: bool,
        beta_mode: BetaMode,
        center_mode: CenterMode,
    ) -> Result<PostProcessParams> {
        let beta = if scale {
            Some(self.beta(beta_mode).ok_or(Error::DegeneratePredictions(
                "scale factor undefined on training predictions",
            ))?)
        } else {
            None
        };
        let mut step_order = Vec::new();
        if median_window_s.is_some() {
            step_order.push(Step::Median);
        }
        if scale {
            step_order.push(Step::Scale);
        }
        if center {
            step_order.push(Step::Center);
        }
        Ok(PostProcessParams {
            median_window_s,
            beta,
            gold_mean_train: center.then_some(self.gold_mean),
            // the scaling step is linear, so the mean it hands to centering is known
            pred_mean_train: center.then(|| self.pred_mean * beta.unwrap_or(1.0)),
            beta_mode,
            center_mode,
            step_order,
        })
    }
}

/// Searches the chain configurations and returns the one with the best dev
/// CCC. Ties go to fewer enabled steps, then the smaller window, then the
/// earlier table row.
pub fn tune_chain(
    data: ChainData<'_>,
    space: &SearchSpace,
    evaluator: &Evaluator,
) -> Result<TuneResult> {
    if data.raw_dev_pred.len() != data.gold_dev.len() {
        return Err(Error::LengthMismatch {
            left: data.raw_dev_pred.len(),
            right: data.gold_dev.len(),
        });
    }
    if space.beta_modes.is_empty() || space.center_modes.is_empty() {
        return Err(Error::InvalidArgument("empty post-processing mode list".into()));
    }
    for &w in &space.windows_s {
        check_window(w, false)?;
    }
    let stats = TrainStats::fit(data.gold_train, data.raw_train_pred)?;

    let mut windows: Vec<Option<f64>> = vec![None];
    windows.extend(space.windows_s.iter().map(|&w| Some(w)));

    let filtered: Vec<Result<Vec<f64>>> = windows
        .par_iter()
        .map(|w| match w {
            None => Ok(data.raw_dev_pred.to_vec()),
            Some(w) => median_filter_segments(
                data.raw_dev_pred,
                data.dev_segments,
                window_frames(*w, data.frame_period_s),
            ),
        })
        .collect();

    let mut combos = Vec::with_capacity(space.cardinality());
    for (wi, &w) in windows.iter().enumerate() {
        for scale in [false, true] {
            for center in [false, true] {
                for &bm in &space.beta_modes {
                    for &cm in &space.center_modes {
                        combos.push((wi, w, scale, center, bm, cm));
                    }
                }
            }
        }
    }

    let table: Vec<ChainCandidate> = combos
        .par_iter()
        .map(|&(wi, w, scale, center, bm, cm)| {
            let run = || -> Result<f64> {
                let smoothed = filtered[wi].as_ref().map_err(clone_err)?;
                let params = stats.params(w, scale, center, bm, cm)?;
                let mut cur = smoothed.clone();
                if let Some(b) = params.beta {
                    cur = apply_scaling(&cur, b);
                }
                if let Some(g) = params.gold_mean_train {
                    cur = apply_centering(&cur, g, cm, params.pred_mean_train.unwrap());
                }
                evaluator.score(&cur, data.gold_dev)
            };
            let (dev_ccc, error) = match run() {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ChainCandidate {
                median_window_s: w,
                scale,
                center,
                beta_mode: bm,
                center_mode: cm,
                dev_ccc,
                error,
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, c) in table.iter().enumerate() {
        let Some(s) = c.dev_ccc else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bc = &table[b];
                let bs = bc.dev_ccc.unwrap();
                s > bs
                    || (s == bs
                        && (c.enabled(), c.median_window_s.unwrap_or(0.0))
                            < (bc.enabled(), bc.median_window_s.unwrap_or(0.0)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best_index = best.ok_or_else(|| {
        Error::InvalidArgument("no post-processing configuration could be scored".into())
    })?;
    let b = &table[best_index];
    let params = stats.params(b.median_window_s, b.scale, b.center, b.beta_mode, b.center_mode)?;
    Ok(TuneResult {
        params,
        best_index,
        table,
    })
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_frames_forced_odd() {
        assert_eq!(window_frames(0.4, 0.04), 11);
        assert_eq!(window_frames(2.8, 0.04), 71);
        assert_eq!(window_frames(8.0, 0.04), 201);
        assert_eq!(window_frames(0.12, 0.04), 3);
    }

    #[test]
    fn median_constant_and_impulse() {
        assert_eq!(median_filter_frames(&[0.3; 9], 5).unwrap(), vec![0.3; 9]);
        assert_eq!(
            median_filter_frames(&[0.0, 0.0, 10.0, 0.0, 0.0], 3).unwrap(),
            vec![0.0; 5]
        );
    }

    #[test]
    fn median_window_bounds() {
        let x = [0.1, 0.2, 0.3];
        assert!(median_filter(&x, 0.12, 0.04, false).is_err());
        assert!(median_filter(&x, 9.0, 0.04, false).is_err());
        assert_eq!(median_filter(&x, 0.12, 0.04, true).unwrap(), x.to_vec());
        assert!(median_filter(&[], 0.4, 0.04, false).is_err());
        assert!(median_filter_frames(&x, 4).is_err());
    }

    #[test]
    fn median_monotone_fixed_point() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(median_filter_frames(&x, 3).unwrap(), x);
    }

    #[test]
    fn beta_modes() {
        let g = [0.2, -0.4, 0.6, -0.4];
        assert_eq!(fit_beta(&g, &g, BetaMode::StdRatio).unwrap(), 1.0);
        let half: Vec<f64> = g.iter().map(|x| 0.5 * x).collect();
        assert!((fit_beta(&g, &half, BetaMode::StdRatio).unwrap() - 2.0).abs() < 1e-15);
        let gm = [0.1, 0.3];
        let pm = [0.05, 0.15];
        assert!((fit_beta(&gm, &pm, BetaMode::MeanRatio).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            fit_beta(&g, &[0.1; 4], BetaMode::StdRatio),
            Err(Error::DegeneratePredictions(_))
        ));
    }

    #[test]
    fn scaling_and_centering() {
        assert_eq!(apply_scaling(&[0.1, -0.2], 2.0), vec![0.2, -0.4]);
        assert_eq!(apply_scaling(&[0.1, -0.2], 1.0), vec![0.1, -0.2]);
        assert_eq!(apply_centering(&[0.3], 0.3, CenterMode::Literal, 0.0), vec![0.0]);
        let p = [0.1, 0.5, -0.3];
        assert_eq!(apply_centering(&p, 0.2, CenterMode::BiasCorrection, 0.2), p.to_vec());
        let m = metrics::mean(&p);
        let c = apply_centering(&p, 0.7, CenterMode::BiasCorrection, m);
        assert!((metrics::mean(&c) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn params_validate_and_serde() {
        let mut p = PostProcessParams {
            median_window_s: Some(1.6),
            beta: Some(1.5),
            gold_mean_train: Some(0.1),
            pred_mean_train: Some(0.05),
            beta_mode: BetaMode::StdRatio,
            center_mode: CenterMode::BiasCorrection,
            step_order: vec![Step::Center, Step::Median, Step::Scale],
        };
        p.validate().unwrap();
        let text = toml::to_string(&p).unwrap();
        let back: PostProcessParams = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        p.median_window_s = Some(0.1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn chain_order_matters() {
        let x = [0.1, 0.9, 0.2, 0.4, 0.3];
        let mut p = PostProcessParams {
            median_window_s: None,
            beta: Some(2.0),
            gold_mean_train: Some(0.5),
            pred_mean_train: None,
            beta_mode: BetaMode::StdRatio,
            center_mode: CenterMode::Literal,
            step_order: vec![Step::Scale, Step::Center],
        };
        let a = apply_chain(&p, &x, &[], 0.04).unwrap().output;
        p.step_order = vec![Step::Center, Step::Scale];
        let b = apply_chain(&p, &x, &[], 0.04).unwrap().output;
        assert_ne!(a, b);
    }

    #[test]
    fn search_cardinality() {
        assert_eq!(SearchSpace::default().cardinality(), 8 * 2 * 2 * 2);
    }
}
