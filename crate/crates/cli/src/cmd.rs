use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use avfuse_core::experiment::{
    audit_files, emit_report, format_table, parse_records, run_experiment, run_grid,
    ExperimentConfig, RunOutcome, TableRow,
};
use avfuse_core::fusion::early_fuse;
use avfuse_core::ingest::{
    generate_synthetic, load_dataset, load_features, load_manifest, load_predictions, write_dataset,
    write_values, SynthSpec,
};
use avfuse_core::metrics::{fmt_f64, Evaluator};
use avfuse_core::postprocess::{
    apply_chain, tune_chain, ChainData, PostProcessParams, SearchSpace,
};
use avfuse_core::svr::{read_model, train_svr, write_model, Kernel, SmoOptions, SvrHyperParams};
use avfuse_core::timeseries::{apply_mask_for_training, impute_predictions, shift_gold, FeatureStream};
use avfuse_core::{ccc, Error, Matrix, Result};

use crate::{
    Command, EvalArgs, ExperimentArgs, GridArgs, PostprocessArgs, PredictArgs, ReportArgs,
    SynthArgs, TrainArgs, OUTPUT_ROOT_ENV,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.train_subjects {
        spec.n_subjects_train = n;
    }
    if let Some(n) = a.dev_subjects {
        spec.n_subjects_dev = n;
    }
    if let Some(n) = a.frames {
        spec.frames_per_subject = n;
    }
    if let Some(l) = a.lag {
        spec.annotation_lag_frames = l;
    }
    let data = generate_synthetic(&spec)?;
    let manifest = write_dataset(&data, &a.out)?;
    let spec_path = a.out.join("synth.toml");
    let text = toml::to_string(&spec).expect("spec serializes");
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    println!("{}", manifest.display());
    Ok(())
}

fn fuse(parts: Vec<FeatureStream>) -> Result<FeatureStream> {
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().unwrap());
    }
    early_fuse(&parts.iter().collect::<Vec<_>>())
}

fn train(a: TrainArgs) -> Result<()> {
    let kernel: Kernel = a.kernel.parse()?;
    let hyper = SvrHyperParams::new(a.c, a.epsilon, kernel)?;
    let manifest = load_manifest(&a.manifest)?;
    let data = load_dataset(&manifest, Some(&a.modalities), Some(a.dimension))?;
    let delay = a.delay.unwrap_or(match a.dimension {
        avfuse_core::AffectDimension::Arousal => 70,
        avfuse_core::AffectDimension::Valence => 50,
    });
    let mut x: Option<Matrix> = None;
    let mut y = Vec::new();
    for rec in &data.train {
        let gold = shift_gold(rec.gold(a.dimension)?, delay)?;
        let parts = a
            .modalities
            .iter()
            .map(|m| Ok(rec.stream(m)?.truncated(gold.len())))
            .collect::<Result<Vec<_>>>()?;
        let stream = fuse(parts)?;
        let (xs, ys) = apply_mask_for_training(&stream, &gold)?;
        match &mut x {
            Some(m) => m.vstack(&xs)?,
            None => x = Some(xs),
        }
        y.extend(ys);
    }
    let x = x.ok_or(Error::EmptyTrainingSet)?;
    let opts = SmoOptions {
        tol: a.tol,
        ..SmoOptions::default()
    };
    let model = train_svr(&x, &y, &hyper, &opts)?;
    write_model(&model, &a.out)?;
    println!(
        "trained {} rows={} dim={} n_support={} termination={:?} iterations={}",
        hyper,
        y.len(),
        model.dim(),
        model.n_support(),
        model.info.termination,
        model.info.iterations
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let parts = a
        .features
        .iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
            load_features(p, name, a.frame_period)
        })
        .collect::<Result<Vec<_>>>()?;
    let stream = fuse(parts)?;
    let pred = model.predict(&stream.valid_rows())?;
    let full = impute_predictions(&pred, &stream.mask, a.fill_start)?;
    write_values(&a.out, &full)?;
    println!("wrote {} frames to {}", full.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = load_predictions(&a.pred)?;
    let gold = load_predictions(&a.gold)?;
    let rep = ccc(&pred, &gold)?;
    if a.records {
        println!("{rep}");
    } else {
        println!(
            "ccc={:.6} mae={:.6} pearson={:.6} n={}",
            rep.ccc, rep.mae, rep.pearson, rep.n
        );
    }
    Ok(())
}

fn load_config(path: &Path, jobs: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid(a: GridArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.jobs)?;
    for b in run_grid(&cfg)? {
        println!("branch {}", b.name);
        println!("  kernel        C             epsilon       score      converged  n_support");
        for cell in &b.grid {
            let score = match (cell.score, &cell.error) {
                (Some(s), _) => format!("{s:.6}"),
                (None, Some(e)) => format!("error: {e}"),
                (None, None) => "-".into(),
            };
            let mark = if cell.hyper == b.best { "*" } else { " " };
            println!(
                "{mark} {:<12}  {:<12}  {:<12}  {:<9}  {:<9}  {}",
                cell.hyper.kernel.to_string(),
                fmt_f64(cell.hyper.c),
                fmt_f64(cell.hyper.epsilon),
                score,
                cell.converged,
                cell.n_support
            );
        }
    }
    Ok(())
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    let dev_pred = load_predictions(&a.dev_pred)?;
    let dev_gold = load_predictions(&a.dev_gold)?;
    let segments = if a.segments.is_empty() {
        vec![dev_pred.len()]
    } else {
        a.segments.clone()
    };
    if segments.iter().sum::<usize>() != dev_pred.len() {
        return Err(Error::InvalidArgument(format!(
            "segments sum to {} but predictions have {} frames",
            segments.iter().sum::<usize>(),
            dev_pred.len()
        )));
    }
    let params: PostProcessParams = match &a.params {
        Some(p) => read_toml(p)?,
        None => {
            let (Some(tp), Some(tg)) = (&a.train_pred, &a.train_gold) else {
                return Err(Error::InvalidArgument(
                    "tuning needs --train-pred and --train-gold (or pass --params)".into(),
                ));
            };
            let train_pred = load_predictions(tp)?;
            let train_gold = load_predictions(tg)?;
            let evaluator = Evaluator {
                segments: segments.clone(),
                ..Evaluator::global()
            };
            let data = ChainData {
                raw_dev_pred: &dev_pred,
                gold_dev: &dev_gold,
                dev_segments: &segments,
                raw_train_pred: &train_pred,
                gold_train: &train_gold,
                frame_period_s: a.frame_period,
            };
            let tuned = tune_chain(data, &SearchSpace::default(), &evaluator)?;
            println!("searched {} configurations (dev-tuned)", tuned.table.len());
            tuned.params
        }
    };
    let out = apply_chain(&params, &dev_pred, &segments, a.frame_period)?;
    write_values(&a.out, &out.output)?;
    let before = ccc(&dev_pred, &dev_gold)?.ccc;
    let after = ccc(&out.output, &dev_gold)?.ccc;
    println!("raw_ccc={before:.6} final_ccc={after:.6}");
    let text = toml::to_string(&params).expect("params serialize");
    match &a.params_out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn output_dir(cli_out: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = cli_out {
        return o.clone();
    }
    if !cfg.output_dir.as_os_str().is_empty() {
        return cfg.output_dir.clone();
    }
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut groups: BTreeMap<PathBuf, Vec<RunOutcome>> = BTreeMap::new();
    for path in &a.configs {
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(j) = a.jobs {
            cfg.jobs = j;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
            if let Some(spec) = &mut cfg.data.synth {
                spec.seed = s;
            }
        }
        if let Some(d) = a.dimension {
            cfg.dimension = d;
        }
        if let Some(s) = &a.scheme {
            cfg.fusion.scheme = s.parse()?;
        }
        cfg.validate()?;
        let dir = output_dir(&a.out, &cfg);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let echo = dir.join(format!("config-{}.toml", cfg.hash()));
        fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;

        log::info!("running {} ({})", cfg.name, path.display());
        let out = run_experiment(&cfg)?;
        let r = &out.report;
        println!(
            "{} dimension={} scheme={} raw_ccc={:.6} final_ccc={:.6} hash={}",
            r.name,
            r.dimension,
            r.scheme,
            r.stage(avfuse_core::experiment::Stage::Raw).ccc,
            r.final_ccc(),
            r.config_hash
        );
        groups.entry(dir).or_default().push(out);
    }
    for (dir, runs) in &groups {
        let refs: Vec<&RunOutcome> = runs.iter().collect();
        let files = emit_report(&refs, dir)?;
        print!("{}", fs::read_to_string(&files.table).map_err(|e| Error::io(&files.table, e))?);
        println!("report written to {}", dir.display());
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.records {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = parse_records(&text)?;
        rows.push(TableRow::from_records(&records)?);
        if a.audit {
            let worst = audit_files(path, 1e-9)?;
            eprintln!("audit ok: {} (max |dCCC| = {worst:e})", path.display());
        }
    }
    print!("{}", format_table(&rows));
    Ok(())
}
