use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result, StageExt};
use crate::fusion::{early_fuse, late_fuse, FusionScheme};
use crate::ingest::{generate_synthetic, load_dataset, load_manifest};
use crate::matrix::Matrix;
use crate::metrics::{EvaluationReport, Evaluator};
use crate::postprocess::{apply_chain, tune_chain, ChainData, PostProcessParams, Step, TrainStats};
use crate::svr::{grid_search, subsample_rows, GridCell, SvrHyperParams, SvrModel};
use crate::timeseries::{impute_predictions, shift_gold, AffectDimension, DatasetSplit, FeatureStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Median,
    Scale,
    Center,
    Final,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Raw, Stage::Median, Stage::Scale, Stage::Center, Stage::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Median => "median",
            Stage::Scale => "scale",
            Stage::Center => "center",
            Stage::Final => "final",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one SVR branch (a modality, or an early-fused stream).
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSummary {
    pub name: String,
    pub best: SvrHyperParams,
    pub n_support: usize,
    pub converged: bool,
    pub iterations: usize,
    pub n_train_rows: usize,
    pub grid: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub dimension: AffectDimension,
    pub scheme: FusionScheme,
    pub modalities: Vec<String>,
    pub delay_frames: usize,
    pub exclude_invalid: bool,
    pub per_subject_average: bool,
    pub n_dev_frames: usize,
    pub branches: Vec<BranchSummary>,
    /// Raw dev evaluation of each modality's own SVR.
    pub unimodal: Vec<(String, EvaluationReport)>,
    pub train_stats: TrainStats,
    pub postprocess: PostProcessParams,
    pub chain_rows: usize,
    pub chain_best_index: usize,
    /// Dev evaluation after each stage, in [`Stage::ALL`] order.
    pub stages: Vec<(Stage, EvaluationReport)>,
    /// Selection score of the final predictions (equals the final CCC unless
    /// per-subject averaging is on).
    pub final_score: f64,
    /// Wall-clock seconds per pipeline phase.
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn stage(&self, stage: Stage) -> &EvaluationReport {
        &self.stages.iter().find(|(s, _)| *s == stage).unwrap().1
    }

    pub fn final_ccc(&self) -> f64 {
        self.stage(Stage::Final).ccc
    }

    pub fn unimodal_ccc(&self, modality: &str) -> Option<f64> {
        self.unimodal
            .iter()
            .find(|(m, _)| m == modality)
            .map(|(_, r)| r.ccc)
    }
}

/// Per-frame dev sequences behind every reported number.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameArchive {
    /// `(subject_id, frames)` in concatenation order.
    pub subjects: Vec<(String, usize)>,
    /// Frames that enter the scores.
    pub included: Vec<bool>,
    pub gold: Vec<f64>,
    pub stages: Vec<(Stage, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub archive: FrameArchive,
    pub models: Vec<(String, SvrModel)>,
}

/// A subject after delay compensation: gold shifted, streams truncated to match.
struct AlignedSubject {
    id: String,
    gold: Vec<f64>,
    streams: BTreeMap<String, FeatureStream>,
}

fn align(
    split: &[crate::timeseries::SubjectRecord],
    dimension: AffectDimension,
    modalities: &[String],
    delay: usize,
) -> Result<Vec<AlignedSubject>> {
    split
        .iter()
        .map(|rec| {
            let gold = shift_gold(rec.gold(dimension)?, delay)?;
            let len = gold.len();
            let mut streams = BTreeMap::new();
            for m in modalities {
                let s = rec.stream(m)?;
                if s.len() < len + delay {
                    return Err(Error::LengthMismatch {
                        left: s.len(),
                        right: len + delay,
                    });
                }
                streams.insert(m.clone(), s.truncated(len));
            }
            Ok(AlignedSubject {
                id: rec.subject_id.clone(),
                gold: gold.values,
                streams,
            })
        })
        .collect()
}

fn branch_streams(subjects: &[AlignedSubject], modalities: &[String]) -> Result<Vec<FeatureStream>> {
    subjects
        .iter()
        .map(|s| {
            let parts: Vec<&FeatureStream> = modalities.iter().map(|m| &s.streams[m]).collect();
            if parts.len() == 1 {
                Ok(parts[0].clone())
            } else {
                early_fuse(&parts)
            }
        })
        .collect()
}

/// Valid rows of every stream and their targets, concatenated.
fn masked_rows(streams: &[FeatureStream], gold: &[&[f64]]) -> Result<(Matrix, Vec<f64>)> {
    let dim = streams.first().map_or(0, |s| s.dim());
    let mut x = Matrix::with_cols(dim);
    let mut y = Vec::new();
    for (s, g) in streams.iter().zip(gold) {
        let idx = s.mask.valid_indices();
        x.vstack(&s.frames.select_rows(&idx))?;
        y.extend(idx.iter().map(|&i| g[i]));
    }
    if y.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok((x, y))
}

/// Full-length predictions: valid frames predicted, the rest held.
fn predict_streams(model: &SvrModel, streams: &[FeatureStream], fill_start: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for s in streams {
        let pred = model.predict(&s.valid_rows())?;
        out.extend(impute_predictions(&pred, &s.mask, fill_start)?);
    }
    Ok(out)
}

struct BranchResult {
    summary: BranchSummary,
    model: SvrModel,
    train_pred: Vec<f64>,
    dev_pred: Vec<f64>,
}

fn train_branch(
    config: &ExperimentConfig,
    name: String,
    train: &[FeatureStream],
    dev: &[FeatureStream],
    train_gold: &[&[f64]],
    dev_gold: &[&[f64]],
) -> Result<BranchResult> {
    let (xt, yt) = masked_rows(train, train_gold)?;
    let (xt, yt) = match config.svr.max_train_rows {
        Some(cap) => subsample_rows(&xt, &yt, cap, config.seed),
        None => (xt, yt),
    };
    let (xd, yd) = masked_rows(dev, dev_gold)?;
    let opts = config.svr.smo_options();
    let grid = grid_search(&config.grid, (&xt, &yt), (&xd, &yd), config.svr.objective, &opts)?;
    let model = grid.best_model;
    if config.svr.fail_on_nonconvergence && !model.info.converged() {
        return Err(Error::NotConverged {
            passes: config.svr.max_passes,
            violation: model.info.violation,
        });
    }
    let fill = config.evaluation.fill_start;
    let train_pred = predict_streams(&model, train, fill)?;
    let dev_pred = predict_streams(&model, dev, fill)?;
    Ok(BranchResult {
        summary: BranchSummary {
            name,
            best: grid.best,
            n_support: model.n_support(),
            converged: model.info.converged(),
            iterations: model.info.iterations,
            n_train_rows: yt.len(),
            grid: grid.table,
        },
        model,
        train_pred,
        dev_pred,
    })
}

/// Loads the configured dataset (only the configured modalities and dimension).
pub fn load_data(config: &ExperimentConfig) -> Result<DatasetSplit> {
    if let Some(spec) = &config.data.synth {
        return generate_synthetic(spec);
    }
    let path = config
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no data source".into()))?;
    let manifest = load_manifest(path)?;
    load_dataset(&manifest, Some(&config.fusion.modalities), Some(config.dimension))
}

/// Runs the configured experiment on a freshly loaded dataset.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let t0 = Instant::now();
    let data = load_data(config).stage("load")?;
    let load_s = t0.elapsed().as_secs_f64();
    let mut out = run_on_dataset(config, &data)?;
    out.report.timings.insert(0, ("load".into(), load_s));
    Ok(out)
}

/// Single-modality run; the config must name exactly one modality.
pub fn run_unimodal(config: &ExperimentConfig) -> Result<RunOutcome> {
    if config.fusion.scheme != FusionScheme::None || config.fusion.modalities.len() != 1 {
        return Err(Error::Config(
            "unimodal run needs scheme = \"none\" and exactly one modality".into(),
        ));
    }
    run_experiment(config)
}

/// Early or late fusion run over two or more modalities.
pub fn run_fusion(config: &ExperimentConfig) -> Result<RunOutcome> {
    if config.fusion.scheme == FusionScheme::None || config.fusion.modalities.len() < 2 {
        return Err(Error::Config(
            "fusion run needs an early or late scheme and at least two modalities".into(),
        ));
    }
    run_experiment(config)
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the pipeline on an already loaded dataset.
pub fn run_on_dataset(config: &ExperimentConfig, data: &DatasetSplit) -> Result<RunOutcome> {
    config.validate()?;
    with_pool(config.jobs, || run_inner(config, data))?
}

struct Prepared {
    train: Vec<AlignedSubject>,
    dev: Vec<AlignedSubject>,
    frame_period_s: f64,
}

fn prepare(config: &ExperimentConfig, data: &DatasetSplit) -> Result<Prepared> {
    let modalities = &config.fusion.modalities;
    let delay = config.delay_frames();
    let train = align(&data.train, config.dimension, modalities, delay).stage("delay compensation")?;
    let dev = align(&data.dev, config.dimension, modalities, delay).stage("delay compensation")?;
    let frame_period_s = train
        .first()
        .and_then(|s| s.streams.values().next())
        .map(|s| s.frame_period_s)
        .ok_or_else(|| Error::Config("no training subjects".into()))?;
    Ok(Prepared {
        train,
        dev,
        frame_period_s,
    })
}

/// One branch per modality, plus the fused stream for early fusion.
fn train_branches(config: &ExperimentConfig, prep: &Prepared) -> Result<Vec<BranchResult>> {
    let modalities = &config.fusion.modalities;
    let mut sets: Vec<(String, Vec<String>)> =
        modalities.iter().map(|m| (m.clone(), vec![m.clone()])).collect();
    if config.fusion.scheme == FusionScheme::Early {
        sets.push((modalities.join("+"), modalities.clone()));
    }
    let train_gold: Vec<&[f64]> = prep.train.iter().map(|s| s.gold.as_slice()).collect();
    let dev_gold: Vec<&[f64]> = prep.dev.iter().map(|s| s.gold.as_slice()).collect();
    sets.iter()
        .map(|(name, mods)| {
            let tr = branch_streams(&prep.train, mods)?;
            let dv = branch_streams(&prep.dev, mods)?;
            train_branch(config, name.clone(), &tr, &dv, &train_gold, &dev_gold).stage("svr training")
        })
        .collect()
}

/// Grid search only: the hyperparameter tables of every branch.
pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<BranchSummary>> {
    config.validate()?;
    let data = load_data(config).stage("load")?;
    with_pool(config.jobs, || {
        let prep = prepare(config, &data)?;
        Ok(train_branches(config, &prep)?
            .into_iter()
            .map(|b| b.summary)
            .collect())
    })?
}

fn run_inner(config: &ExperimentConfig, data: &DatasetSplit) -> Result<RunOutcome> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let modalities = &config.fusion.modalities;
    let delay = config.delay_frames();
    let prep = prepare(config, data)?;
    let (train, dev, period) = (&prep.train, &prep.dev, prep.frame_period_s);
    let gold_train_all: Vec<f64> = train.iter().flat_map(|s| s.gold.iter().copied()).collect();
    let gold_dev_all: Vec<f64> = dev.iter().flat_map(|s| s.gold.iter().copied()).collect();
    let segments: Vec<usize> = dev.iter().map(|s| s.gold.len()).collect();
    lap("align", &mut timings);

    let branches = train_branches(config, &prep)?;
    lap("train", &mut timings);

    // scored frames: valid in every configured modality
    let fused_dev_mask: Vec<bool> = dev
        .iter()
        .flat_map(|s| {
            let n = s.gold.len();
            (0..n).map(move |t| modalities.iter().all(|m| s.streams[m].mask.valid[t]))
        })
        .collect();
    let evaluator = Evaluator {
        segments: segments.clone(),
        include: config.evaluation.exclude_invalid.then(|| fused_dev_mask.clone()),
        per_subject_average: config.evaluation.per_subject_average,
    };

    let unimodal = branches[..modalities.len()]
        .iter()
        .map(|b| Ok((b.summary.name.clone(), evaluator.report(&b.dev_pred, &gold_dev_all)?)))
        .collect::<Result<Vec<_>>>()
        .stage("evaluation")?;

    let (raw_train, raw_dev) = match config.fusion.scheme {
        FusionScheme::None | FusionScheme::Early => {
            let b = branches.last().unwrap();
            (b.train_pred.clone(), b.dev_pred.clone())
        }
        FusionScheme::Late => {
            let w = config.fusion.late_weights.as_deref();
            let tr: Vec<&[f64]> = branches.iter().map(|b| b.train_pred.as_slice()).collect();
            let dv: Vec<&[f64]> = branches.iter().map(|b| b.dev_pred.as_slice()).collect();
            (
                late_fuse(&tr, w).stage("late fusion")?,
                late_fuse(&dv, w).stage("late fusion")?,
            )
        }
    };

    let chain_data = ChainData {
        raw_dev_pred: &raw_dev,
        gold_dev: &gold_dev_all,
        dev_segments: &segments,
        raw_train_pred: &raw_train,
        gold_train: &gold_train_all,
        frame_period_s: period,
    };
    let train_stats = TrainStats::fit(&gold_train_all, &raw_train).stage("post-processing")?;
    let tuned = tune_chain(chain_data, &config.postprocess, &evaluator).stage("post-processing")?;
    let chain = apply_chain(&tuned.params, &raw_dev, &segments, period).stage("post-processing")?;
    lap("postprocess", &mut timings);

    let mut stage_preds = vec![(Stage::Raw, raw_dev.clone())];
    stage_preds.push((Stage::Median, chain.stage(Step::Median, &raw_dev)));
    stage_preds.push((Stage::Scale, chain.stage(Step::Scale, &raw_dev)));
    stage_preds.push((Stage::Center, chain.stage(Step::Center, &raw_dev)));
    stage_preds.push((Stage::Final, chain.output.clone()));
    let stages = stage_preds
        .iter()
        .map(|(s, p)| Ok((*s, evaluator.report(p, &gold_dev_all)?)))
        .collect::<Result<Vec<_>>>()
        .stage("evaluation")?;
    let final_score = evaluator.score(&chain.output, &gold_dev_all).stage("evaluation")?;
    lap("evaluate", &mut timings);

    let report = RunReport {
        name: config.name.clone(),
        config_hash: config.hash(),
        dimension: config.dimension,
        scheme: config.fusion.scheme,
        modalities: modalities.clone(),
        delay_frames: delay,
        exclude_invalid: config.evaluation.exclude_invalid,
        per_subject_average: config.evaluation.per_subject_average,
        n_dev_frames: gold_dev_all.len(),
        branches: branches.iter().map(|b| b.summary.clone()).collect(),
        unimodal,
        train_stats,
        postprocess: tuned.params,
        chain_rows: tuned.table.len(),
        chain_best_index: tuned.best_index,
        stages,
        final_score,
        timings,
    };
    let archive = FrameArchive {
        subjects: dev.iter().map(|s| (s.id.clone(), s.gold.len())).collect(),
        included: evaluator
            .include
            .clone()
            .unwrap_or_else(|| vec![true; gold_dev_all.len()]),
        gold: gold_dev_all,
        stages: stage_preds,
    };
    let models = branches
        .into_iter()
        .map(|b| (b.summary.name, b.model))
        .collect();
    Ok(RunOutcome {
        report,
        archive,
        models,
    })
}
