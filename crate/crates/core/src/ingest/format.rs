//! Delimited text formats for feature streams and annotation traces.
//!
//! Feature file:
//!
//! ```text
//! frame,valid,f0,f1,...,f{dim-1}
//! 0,1,0.25,-1.5,...
//! 1,0,0,0,...
//! ```
//!
//! Annotation file:
//!
//! ```text
//! frame,value
//! 0,0.125
//! ```
//!
//! ASCII, comma separated, LF line endings, `.` decimal separator. Frame
//! numbers must count up from 0. Numbers are written in the shortest
//! decimal form that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::fmt_f64;
use crate::timeseries::{AffectDimension, AffectTrace, FeatureStream, FrameMask};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("non-numeric cell {cell:?}")))
}

fn check_frame(path: &Path, line: usize, cell: &str, expected: usize) -> Result<()> {
    match cell.trim().parse::<usize>() {
        Ok(f) if f == expected => Ok(()),
        Ok(f) => Err(Error::parse(
            path,
            line,
            format!("frame {f} out of sequence (expected {expected})"),
        )),
        Err(_) => Err(Error::parse(path, line, format!("bad frame number {cell:?}"))),
    }
}

/// Lines of a delimited file with their 1-based numbers. Only LF ends a
/// line, so a stray `\r` surfaces as an error.
fn lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let reader = open(path)?;
    Ok(reader.split(b'\n').enumerate().map(move |(i, l)| {
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.last() == Some(&b'\r') {
            return Err(Error::parse(path, i + 1, "CRLF line ending"));
        }
        if !l.is_ascii() {
            return Err(Error::parse(path, i + 1, "non-ASCII content"));
        }
        // ASCII checked above
        Ok((i + 1, String::from_utf8(l).unwrap()))
    }))
}

pub fn load_features(
    path: &Path,
    modality: &str,
    frame_period_s: f64,
) -> Result<FeatureStream> {
    let mut it = lines(path)?;
    let (_, header) = it
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "frame" || cols[1] != "valid" {
        return Err(Error::parse(path, 1, "header must be frame,valid,f0,..."));
    }
    let dim = cols.len() - 2;
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(Error::parse(path, 1, format!("expected column f{k}, found {c:?}")));
        }
    }
    let mut frames = Matrix::with_cols(dim);
    let mut valid = Vec::new();
    let mut row = vec![0.0; dim];
    for item in it {
        let (line, text) = item?;
        let cells: Vec<&str> = text.split(',').collect();
        if cells.len() != dim + 2 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} cells, found {}", dim + 2, cells.len()),
            ));
        }
        check_frame(path, line, cells[0], valid.len())?;
        let v = match cells[1].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(path, line, format!("valid must be 0 or 1, got {other:?}"))),
        };
        for (k, cell) in cells[2..].iter().enumerate() {
            row[k] = parse_f64(path, line, cell)?;
            if v && !row[k].is_finite() {
                return Err(Error::parse(path, line, "non-finite feature on a valid frame"));
            }
        }
        frames.push_row(&row)?;
        valid.push(v);
    }
    FeatureStream::new(modality, frames, FrameMask { valid }, frame_period_s)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_features(path: &Path, stream: &FeatureStream) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = || -> std::io::Result<()> {
        write!(w, "frame,valid")?;
        for k in 0..stream.dim() {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for (t, row) in stream.frames.iter_rows().enumerate() {
            write!(w, "{t},{}", if stream.mask.valid[t] { 1 } else { 0 })?;
            for &v in row {
                write!(w, ",{}", fmt_f64(v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    out().map_err(|e| Error::io(path, e))
}

fn load_values(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut it = lines(path)?;
    let (_, header) = it
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    if header != "frame,value" {
        return Err(Error::parse(path, 1, "header must be frame,value"));
    }
    let mut out = Vec::new();
    for item in it {
        let (line, text) = item?;
        let cells: Vec<&str> = text.split(',').collect();
        if cells.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 cells, found {}", cells.len())));
        }
        check_frame(path, line, cells[0], out.len())?;
        let v = parse_f64(path, line, cells[1])?;
        if !v.is_finite() {
            return Err(Error::parse(path, line, "non-finite value"));
        }
        out.push((line, v));
    }
    Ok(out)
}

/// Gold-standard trace; every value must lie in `[-1, 1]`.
pub fn load_annotations(
    path: &Path,
    dimension: AffectDimension,
    frame_period_s: f64,
    subject_id: &str,
) -> Result<AffectTrace> {
    let rows = load_values(path)?;
    if let Some((frame, (line, v))) = rows
        .iter()
        .enumerate()
        .find(|(_, (_, v))| !(-1.0..=1.0).contains(v))
    {
        return Err(Error::parse(
            path,
            *line,
            format!("value {v} at frame {frame} outside [-1, 1]"),
        ));
    }
    AffectTrace::gold(
        dimension,
        frame_period_s,
        rows.into_iter().map(|(_, v)| v).collect(),
        subject_id,
    )
}

/// Prediction sequence in the annotation format, without the range check.
pub fn load_predictions(path: &Path) -> Result<Vec<f64>> {
    Ok(load_values(path)?.into_iter().map(|(_, v)| v).collect())
}

pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = || -> std::io::Result<()> {
        writeln!(w, "frame,value")?;
        for (t, &v) in values.iter().enumerate() {
            writeln!(w, "{t},{}", fmt_f64(v))?;
        }
        w.flush()
    };
    out().map_err(|e| Error::io(path, e))
}

pub fn write_annotations(path: &Path, trace: &AffectTrace) -> Result<()> {
    write_values(path, &trace.values)
}
