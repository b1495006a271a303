//! Text serialization of [`SvrModel`].
//!
//! ```text
//! avfuse-svr-model 1
//! kernel linear            | kernel rbf <gamma>
//! c <C>
//! epsilon <eps>
//! bias <b>
//! dim <d>
//! mean <m_0> ... <m_{d-1}>
//! std <s_0> ... <s_{d-1}>
//! termination converged|max_passes
//! iterations <k>
//! violation <v>
//! dual_objective <D>
//! n_support <m>
//! sv <coef> <z_0> ... <z_{d-1}>     (m lines)
//! end
//! ```
//!
//! Floats are written in the shortest form that parses back to the same bits.

use std::fs;
use std::path::Path;

use super::kernel::Kernel;
use super::smo::{Termination, TrainingInfo};
use super::standardize::Standardizer;
use super::{SvrHyperParams, SvrModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::fmt_f64;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "avfuse-svr-model";

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

impl SvrModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{MAGIC} {MODEL_FORMAT_VERSION}\n"));
        match self.hyper.kernel {
            Kernel::Linear => s.push_str("kernel linear\n"),
            Kernel::Rbf { gamma } => s.push_str(&format!("kernel rbf {}\n", fmt_f64(gamma))),
        }
        s.push_str(&format!("c {}\n", fmt_f64(self.hyper.c)));
        s.push_str(&format!("epsilon {}\n", fmt_f64(self.hyper.epsilon)));
        s.push_str(&format!("bias {}\n", fmt_f64(self.bias)));
        s.push_str(&format!("dim {}\n", self.dim()));
        s.push_str(&format!("mean {}\n", join(&self.standardizer.mean)));
        s.push_str(&format!("std {}\n", join(&self.standardizer.std)));
        let term = match self.info.termination {
            Termination::Converged => "converged",
            Termination::MaxPasses => "max_passes",
        };
        s.push_str(&format!("termination {term}\n"));
        s.push_str(&format!("iterations {}\n", self.info.iterations));
        s.push_str(&format!("violation {}\n", fmt_f64(self.info.violation)));
        s.push_str(&format!("dual_objective {}\n", fmt_f64(self.info.dual_objective)));
        s.push_str(&format!("n_support {}\n", self.n_support()));
        for (row, &coef) in self.support_vectors.iter_rows().zip(&self.dual_coefs) {
            if row.is_empty() {
                s.push_str(&format!("sv {}\n", fmt_f64(coef)));
            } else {
                s.push_str(&format!("sv {} {}\n", fmt_f64(coef), join(row)));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str, source: &Path) -> Result<SvrModel> {
        Reader {
            lines: text.lines().enumerate(),
            source,
        }
        .model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SvrModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SvrModel::from_text(&text, path)
    }
}

pub fn write_model(model: &SvrModel, path: &Path) -> Result<()> {
    model.save(path)
}

pub fn read_model(path: &Path) -> Result<SvrModel> {
    SvrModel::load(path)
}

struct Reader<'a, I> {
    lines: I,
    source: &'a Path,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.source, line, msg)
    }

    /// Next line split as `(line_no, key, rest)`.
    fn next(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let Some((i, line)) = self.lines.next() else {
            return Err(self.err(0, format!("unexpected end of file, expected {key:?}")));
        };
        let mut parts = line.split(' ');
        let k = parts.next().unwrap_or("");
        if k != key {
            return Err(self.err(i + 1, format!("expected {key:?}, found {k:?}")));
        }
        Ok((i + 1, parts.filter(|p| !p.is_empty()).collect()))
    }

    fn float(&self, line: usize, s: &str) -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| self.err(line, format!("not a number: {s:?}")))
    }

    fn scalar(&mut self, key: &str) -> Result<f64> {
        let (line, parts) = self.next(key)?;
        match parts.as_slice() {
            [v] => self.float(line, v),
            _ => Err(self.err(line, format!("{key} takes one value"))),
        }
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (line, parts) = self.next(key)?;
        match parts.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| self.err(line, format!("not a count: {v:?}"))),
            _ => Err(self.err(line, format!("{key} takes one value"))),
        }
    }

    fn vector(&mut self, key: &str, dim: usize) -> Result<Vec<f64>> {
        let (line, parts) = self.next(key)?;
        if parts.len() != dim {
            return Err(self.err(line, format!("{key}: expected {dim} values, got {}", parts.len())));
        }
        parts.iter().map(|p| self.float(line, p)).collect()
    }

    fn model(mut self) -> Result<SvrModel> {
        let (line, parts) = self.next(MAGIC)?;
        match parts.as_slice() {
            [v] if v.parse::<u32>().ok() == Some(MODEL_FORMAT_VERSION) => {}
            _ => return Err(self.err(line, "unsupported model format version")),
        }
        let (line, parts) = self.next("kernel")?;
        let kernel = match parts.as_slice() {
            ["linear"] => Kernel::Linear,
            ["rbf", g] => Kernel::Rbf {
                gamma: self.float(line, g)?,
            },
            _ => return Err(self.err(line, "bad kernel line")),
        };
        let c = self.scalar("c")?;
        let epsilon = self.scalar("epsilon")?;
        let hyper = SvrHyperParams::new(c, epsilon, kernel)?;
        let bias = self.scalar("bias")?;
        let dim = self.count("dim")?;
        let mean = self.vector("mean", dim)?;
        let std = self.vector("std", dim)?;
        let (line, parts) = self.next("termination")?;
        let termination = match parts.as_slice() {
            ["converged"] => Termination::Converged,
            ["max_passes"] => Termination::MaxPasses,
            _ => return Err(self.err(line, "bad termination")),
        };
        let iterations = self.count("iterations")?;
        let violation = self.scalar("violation")?;
        let dual_objective = self.scalar("dual_objective")?;
        let n_support = self.count("n_support")?;
        let mut coefs = Vec::with_capacity(n_support);
        let mut svs = Matrix::with_cols(dim);
        for _ in 0..n_support {
            let (line, parts) = self.next("sv")?;
            if parts.len() != dim + 1 {
                return Err(self.err(
                    line,
                    format!("sv: expected {} values, got {}", dim + 1, parts.len()),
                ));
            }
            let vals = parts
                .iter()
                .map(|p| self.float(line, p))
                .collect::<Result<Vec<f64>>>()?;
            coefs.push(vals[0]);
            svs.push_row(&vals[1..])?;
        }
        self.next("end")?;
        Ok(SvrModel {
            support_vectors: svs,
            dual_coefs: coefs,
            bias,
            hyper,
            standardizer: Standardizer { mean, std },
            info: TrainingInfo {
                termination,
                iterations,
                violation,
                dual_objective,
                objective_trace: Vec::new(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svr::{train_svr, SmoOptions};

    #[test]
    fn text_round_trip_is_exact() {
        let x = Matrix::from_rows(&[[0.1, 1.0], [0.7, -2.0], [0.3, 0.5], [1.9, 0.25]]).unwrap();
        let y = [0.1, -0.3, 0.05, 0.4];
        let h = SvrHyperParams::new(3.0, 0.01, Kernel::Rbf { gamma: 0.3 }).unwrap();
        let m = train_svr(&x, &y, &h, &SmoOptions::default()).unwrap();
        let text = m.to_text();
        let back = SvrModel::from_text(&text, Path::new("m.txt")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "avfuse-svr-model 1\nkernel linear\nc abc\n";
        match SvrModel::from_text(text, Path::new("m.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SvrModel::from_text("avfuse-svr-model 9\n", Path::new("m")).is_err());
    }
}
