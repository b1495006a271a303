//! Report files: a human-readable table, flat machine records and a per-frame
//! archive of the dev predictions behind every reported number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::runner::{FrameArchive, RunOutcome, RunReport, Stage};
use crate::error::{Error, Result};
use crate::fusion::FusionScheme;
use crate::metrics::{fmt_f64, EvaluationReport, Evaluator};
use crate::postprocess::{PostProcessParams, Step};
use crate::timeseries::AffectDimension;

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), fmt_f64)
}

/// `video-fc50` splits into modality `video` and feature set `fc50`.
fn split_modality(name: &str) -> (&str, &str) {
    name.split_once('-').unwrap_or((name, "-"))
}

impl RunReport {
    /// Flat `(key, value)` records; floats at full precision.
    pub fn records(&self, frames_file: Option<&str>) -> Vec<(String, String)> {
        let mut r: Vec<(String, String)> = Vec::new();
        let mut put = |k: String, v: String| r.push((k, v));
        put("name".into(), self.name.clone());
        put("config_hash".into(), self.config_hash.clone());
        put("dimension".into(), self.dimension.to_string());
        put("scheme".into(), self.scheme.to_string());
        put("modalities".into(), self.modalities.join(","));
        put("delay_frames".into(), self.delay_frames.to_string());
        put("dev_tuned".into(), "true".into());
        put("eval.exclude_invalid".into(), self.exclude_invalid.to_string());
        put("eval.per_subject_average".into(), self.per_subject_average.to_string());
        put("eval.n_dev_frames".into(), self.n_dev_frames.to_string());
        put("eval.final_score".into(), fmt_f64(self.final_score));
        for b in &self.branches {
            let p = format!("branch.{}", b.name);
            put(format!("{p}.kernel"), b.best.kernel.to_string());
            put(format!("{p}.c"), fmt_f64(b.best.c));
            put(format!("{p}.epsilon"), fmt_f64(b.best.epsilon));
            put(format!("{p}.n_support"), b.n_support.to_string());
            put(format!("{p}.converged"), b.converged.to_string());
            put(format!("{p}.iterations"), b.iterations.to_string());
            put(format!("{p}.n_train_rows"), b.n_train_rows.to_string());
            put(format!("{p}.grid_cells"), b.grid.len().to_string());
        }
        for (m, rep) in &self.unimodal {
            for (k, v) in rep.records() {
                put(format!("unimodal.{m}.{k}"), v);
            }
        }
        let t = &self.train_stats;
        put("train.gold_mean".into(), fmt_f64(t.gold_mean));
        put("train.pred_mean".into(), fmt_f64(t.pred_mean));
        put("train.beta_std_ratio".into(), opt(t.beta_std_ratio));
        put("train.beta_mean_ratio".into(), opt(t.beta_mean_ratio));
        let p = &self.postprocess;
        put("post.median_window_s".into(), opt(p.median_window_s));
        put("post.beta".into(), opt(p.beta));
        put("post.gold_mean_train".into(), opt(p.gold_mean_train));
        put("post.pred_mean_train".into(), opt(p.pred_mean_train));
        put("post.beta_mode".into(), enum_str(&p.beta_mode));
        put("post.center_mode".into(), enum_str(&p.center_mode));
        put(
            "post.step_order".into(),
            p.step_order.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        put("post.chain_rows".into(), self.chain_rows.to_string());
        put("post.chain_best_index".into(), self.chain_best_index.to_string());
        for (s, rep) in &self.stages {
            for (k, v) in rep.records() {
                put(format!("stage.{s}.{k}"), v);
            }
        }
        if let Some(f) = frames_file {
            put("frames_file".into(), f.to_string());
        }
        for (k, v) in &self.timings {
            put(format!("time.{k}"), fmt_f64(*v));
        }
        r
    }

    pub fn table_row(&self) -> TableRow {
        TableRow::new(&self.modalities, self.scheme, self.dimension, self.final_ccc())
    }
}

/// One line of the human-readable table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub modality: String,
    pub feature: String,
    pub fusion: String,
    pub dimension: String,
    pub ccc: f64,
}

impl TableRow {
    fn new(modalities: &[String], scheme: FusionScheme, dimension: AffectDimension, ccc: f64) -> Self {
        let parts: Vec<(&str, &str)> = modalities.iter().map(|m| split_modality(m)).collect();
        TableRow {
            modality: parts.iter().map(|p| p.0).collect::<Vec<_>>().join("+"),
            feature: parts.iter().map(|p| p.1).collect::<Vec<_>>().join("+"),
            fusion: match scheme {
                FusionScheme::None => "-".to_string(),
                s => s.to_string(),
            },
            dimension: dimension.to_string(),
            ccc,
        }
    }

    /// Row for a run stored as machine records.
    pub fn from_records(records: &[(String, String)]) -> Result<Self> {
        let modalities: Vec<String> = lookup(records, "modalities")?
            .split(',')
            .map(str::to_string)
            .collect();
        let scheme: FusionScheme = lookup(records, "scheme")?.parse()?;
        let dimension: AffectDimension = lookup(records, "dimension")?.parse()?;
        let ccc = lookup(records, "stage.final.ccc")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad value for stage.final.ccc".into()))?;
        Ok(TableRow::new(&modalities, scheme, dimension, ccc))
    }
}

fn enum_str<T: serde::Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => unreachable!("unit enum serializes to a string"),
    }
}

fn parse_enum<T: DeserializeOwned>(key: &str, s: &str) -> Result<T> {
    toml::Value::String(s.to_string())
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {s:?}")))
}

/// Human-readable table, one row per run, CCC at 6 decimals.
pub fn format_table(rows: &[TableRow]) -> String {
    let header = ["Modality", "Feature", "Fusion", "Dimension", "CCC"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.modality.clone(),
                r.feature.clone(),
                r.fusion.clone(),
                r.dimension.clone(),
                format!("{:.6}", r.ccc),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}

pub fn format_records(records: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in records {
        writeln!(out, "{k}={v}").unwrap();
    }
    out
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_records(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::InvalidArgument(format!("record line {}: missing '='", i + 1)))
        })
        .collect()
}

fn lookup<'a>(records: &'a [(String, String)], key: &str) -> Result<&'a str> {
    records
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::InvalidArgument(format!("missing record {key}")))
}

fn parse_opt(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {v:?}")))
}

/// Rebuilds the chosen post-processing parameters from machine records.
pub fn postprocess_from_records(records: &[(String, String)]) -> Result<PostProcessParams> {
    let f = |k: &str| -> Result<Option<f64>> { parse_opt(k, lookup(records, k)?) };
    let order = lookup(records, "post.step_order")?;
    let step_order = if order.is_empty() {
        Vec::new()
    } else {
        order
            .split(',')
            .map(|s| parse_enum::<Step>("post.step_order", s))
            .collect::<Result<_>>()?
    };
    let params = PostProcessParams {
        median_window_s: f("post.median_window_s")?,
        beta: f("post.beta")?,
        gold_mean_train: f("post.gold_mean_train")?,
        pred_mean_train: f("post.pred_mean_train")?,
        beta_mode: parse_enum("post.beta_mode", lookup(records, "post.beta_mode")?)?,
        center_mode: parse_enum("post.center_mode", lookup(records, "post.center_mode")?)?,
        step_order,
    };
    params.validate()?;
    Ok(params)
}

/// Per-stage evaluation reports stored in the records.
pub fn stage_reports_from_records(records: &[(String, String)]) -> Result<Vec<(Stage, EvaluationReport)>> {
    Stage::ALL
        .iter()
        .map(|&s| {
            let prefix = format!("stage.{s}.");
            let pairs = records
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k, v.as_str())));
            Ok((s, EvaluationReport::from_records(pairs)?))
        })
        .collect()
}

/// Columns of the frames CSV after `subject,frame,included,gold`.
const FRAME_STAGES: [Stage; 5] = Stage::ALL;

pub fn format_frames(archive: &FrameArchive) -> String {
    let mut out = String::from("subject,frame,included,gold");
    for s in FRAME_STAGES {
        write!(out, ",{s}").unwrap();
    }
    out.push('\n');
    let mut t = 0;
    for (subject, n) in &archive.subjects {
        for f in 0..*n {
            write!(
                out,
                "{subject},{f},{},{}",
                u8::from(archive.included[t]),
                fmt_f64(archive.gold[t])
            )
            .unwrap();
            for (_, v) in &archive.stages {
                write!(out, ",{}", fmt_f64(v[t])).unwrap();
            }
            out.push('\n');
            t += 1;
        }
    }
    out
}

pub fn parse_frames(text: &str) -> Result<FrameArchive> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let expected = format_frames(&FrameArchive {
        subjects: vec![],
        included: vec![],
        gold: vec![],
        stages: vec![],
    });
    if header != expected.trim_end() {
        return Err(Error::InvalidArgument(format!("unexpected frames header {header:?}")));
    }
    let mut archive = FrameArchive {
        subjects: Vec::new(),
        included: Vec::new(),
        gold: Vec::new(),
        stages: FRAME_STAGES.iter().map(|&s| (s, Vec::new())).collect(),
    };
    for (i, line) in lines.enumerate() {
        let bad = || Error::InvalidArgument(format!("frames line {}: malformed row", i + 2));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 + FRAME_STAGES.len() {
            return Err(bad());
        }
        match archive.subjects.last_mut() {
            Some((s, n)) if s == cells[0] => *n += 1,
            _ => archive.subjects.push((cells[0].to_string(), 1)),
        }
        archive.included.push(match cells[2] {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        });
        archive.gold.push(cells[3].parse().map_err(|_| bad())?);
        for (k, (_, v)) in archive.stages.iter_mut().enumerate() {
            v.push(cells[4 + k].parse().map_err(|_| bad())?);
        }
    }
    Ok(archive)
}

/// Recomputes every stage report from archived frames and compares with the
/// recorded values. Returns the largest absolute CCC difference.
pub fn audit(records: &[(String, String)], archive: &FrameArchive, tol: f64) -> Result<f64> {
    let per_subject = lookup(records, "eval.per_subject_average")? == "true";
    let evaluator = Evaluator {
        segments: archive.subjects.iter().map(|(_, n)| *n).collect(),
        include: Some(archive.included.clone()),
        per_subject_average: per_subject,
    };
    let mut worst = 0.0f64;
    for (stage, stored) in stage_reports_from_records(records)? {
        let pred = &archive
            .stages
            .iter()
            .find(|(s, _)| *s == stage)
            .ok_or_else(|| Error::InvalidArgument(format!("archive lacks stage {stage}")))?
            .1;
        let fresh = evaluator.report(pred, &archive.gold)?;
        let diff = (fresh.ccc - stored.ccc).abs();
        worst = worst.max(diff);
        if diff > tol || fresh.n != stored.n {
            return Err(Error::InvalidArgument(format!(
                "stage {stage}: recorded ccc {} but archive gives {}",
                stored.ccc, fresh.ccc
            )));
        }
    }
    Ok(worst)
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub table: PathBuf,
    pub records: Vec<PathBuf>,
    pub frames: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
}

/// Writes the table for all runs plus, per run, its records, frames CSV and
/// trained models. File names carry the config hash.
pub fn emit_report(runs: &[&RunOutcome], out_dir: &Path) -> Result<EmittedFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |p: PathBuf, text: &str| -> Result<PathBuf> {
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let mut emitted = EmittedFiles {
        table: PathBuf::new(),
        records: Vec::new(),
        frames: Vec::new(),
        models: Vec::new(),
    };
    for run in runs {
        let hash = &run.report.config_hash;
        let frames_name = format!("frames-{hash}.csv");
        emitted
            .frames
            .push(write(out_dir.join(&frames_name), &format_frames(&run.archive))?);
        let records = run.report.records(Some(&frames_name));
        emitted.records.push(write(
            out_dir.join(format!("report-{hash}.records")),
            &format_records(&records),
        )?);
        for (branch, model) in &run.models {
            let p = out_dir.join(format!("model-{hash}-{branch}.svr"));
            model.save(&p)?;
            emitted.models.push(p);
        }
    }
    let rows: Vec<TableRow> = runs.iter().map(|r| r.report.table_row()).collect();
    let table_name = match runs {
        [one] => format!("table-{}.txt", one.report.config_hash),
        _ => "table.txt".to_string(),
    };
    emitted.table = write(out_dir.join(table_name), &format_table(&rows))?;
    Ok(emitted)
}

/// Loads a records file and the frames CSV it names (relative to the records
/// file), then audits every stage CCC.
pub fn audit_files(records_path: &Path, tol: f64) -> Result<f64> {
    let text = fs::read_to_string(records_path).map_err(|e| Error::io(records_path, e))?;
    let records = parse_records(&text)?;
    let frames = lookup(&records, "frames_file")?;
    let frames_path = records_path.parent().unwrap_or(Path::new(".")).join(frames);
    let frames_text = fs::read_to_string(&frames_path).map_err(|e| Error::io(&frames_path, e))?;
    audit(&records, &parse_frames(&frames_text)?, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_parse_back() {
        let recs = vec![("a".to_string(), "1".to_string()), ("b.c".into(), "x=y".into())];
        assert_eq!(parse_records(&format_records(&recs)).unwrap(), recs);
        assert!(parse_records("novalue\n").is_err());
    }

    #[test]
    fn modality_split() {
        assert_eq!(split_modality("video-fc50"), ("video", "fc50"));
        assert_eq!(split_modality("audio"), ("audio", "-"));
    }

    #[test]
    fn enum_strings() {
        use crate::postprocess::{BetaMode, CenterMode};
        assert_eq!(enum_str(&BetaMode::MeanRatio), "mean_ratio");
        assert_eq!(parse_enum::<CenterMode>("k", "literal").unwrap(), CenterMode::Literal);
        assert!(parse_enum::<CenterMode>("k", "nope").is_err());
    }
}
