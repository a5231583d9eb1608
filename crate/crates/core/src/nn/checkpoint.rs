//! Plain-text parameter checkpoints.
//!
//! ```text
//! EFONTL-CKPT-1
//! meta <key> <value>                  zero or more, value runs to end of line
//! tensor <name> <ndim> <d0> .. <dn-1>
//! <row>                               prod(d0..dn-2) lines of dn-1 values each
//! ...
//! end
//! ```
//!
//! Values are written in shortest round-trip decimal form, so a
//! load followed by a save reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &str = "EFONTL-CKPT-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Tensors whose names start with `prefix.`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(&p).map(|rest| Tensor {
                    name: rest.to_string(),
                    shape: t.shape.clone(),
                    values: t.values.clone(),
                })
            })
            .collect()
    }

    pub fn push_group(&mut self, prefix: &str, tensors: Vec<Tensor>) {
        self.tensors.extend(tensors.into_iter().map(|mut t| {
            t.name = format!("{prefix}.{}", t.name);
            t
        }));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for t in &self.tensors {
            let _ = write!(s, "tensor {} {}", t.name, t.shape.len());
            for d in &t.shape {
                let _ = write!(s, " {d}");
            }
            s.push('\n');
            let width = t.shape.last().copied().unwrap_or(1).max(1);
            for row in t.values.chunks(width) {
                let mut first = true;
                for v in row {
                    if !first {
                        s.push(' ');
                    }
                    first = false;
                    let _ = write!(s, "{v:?}");
                }
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(MAGIC) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported header {other:?}, expected {MAGIC}"
                )))
            }
            None => return Err(Error::Checkpoint("empty checkpoint".into())),
        }
        let mut ckpt = Checkpoint::default();
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint("missing end marker".into()))?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("tensor without a name".into()))?
                    .to_string();
                let dims: Vec<usize> = parts
                    .map(|p| p.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Checkpoint(format!("bad shape for {name}: {e}")))?;
                let (&ndim, shape) = dims
                    .split_first()
                    .ok_or_else(|| Error::Checkpoint(format!("missing rank for {name}")))?;
                if shape.len() != ndim {
                    return Err(Error::Checkpoint(format!(
                        "{name}: rank {ndim} but {} dims",
                        shape.len()
                    )));
                }
                let total: usize = shape.iter().product();
                let width = shape.last().copied().unwrap_or(1).max(1);
                let n_lines = if total == 0 { 0 } else { total / width };
                let mut values = Vec::with_capacity(total);
                for _ in 0..n_lines {
                    let row = lines
                        .next()
                        .ok_or_else(|| Error::Checkpoint(format!("{name}: truncated data")))?;
                    for tok in row.split_whitespace() {
                        values.push(tok.parse::<f64>().map_err(|e| {
                            Error::Checkpoint(format!("{name}: bad value {tok:?}: {e}"))
                        })?);
                    }
                }
                if values.len() != total {
                    return Err(Error::Checkpoint(format!(
                        "{name}: expected {total} values, found {}",
                        values.len()
                    )));
                }
                ckpt.tensors.push(Tensor {
                    name,
                    shape: shape.to_vec(),
                    values,
                });
            } else {
                return Err(Error::Checkpoint(format!("unexpected line {line:?}")));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
