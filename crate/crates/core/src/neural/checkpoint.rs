//! Plain-text checkpoints: a magic line, `meta` lines, then one header line
//! and one value line per tensor. See `docs/checkpoint.md`.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{ParamStore, Tensor};

const MAGIC: &str = "lmp-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamStore, meta: Vec<(String, String)>) -> Self {
        let tensors = params
            .iter()
            .map(|(name, t)| {
                let copy = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid");
                (name.to_string(), copy)
            })
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "tensor {name} {}", dims.join(" "))?;
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, CheckpointError> {
        let mut lines = r.lines().enumerate();
        let fmt = |line: usize, message: String| CheckpointError::Format {
            line: line + 1,
            message,
        };
        let first = lines.next().map(|(_, l)| l).transpose()?;
        if first.as_deref() != Some(MAGIC) {
            return Err(fmt(0, format!("expected `{MAGIC}`")));
        }
        let mut out = Checkpoint::default();
        while let Some((no, line)) = lines.next() {
            let line = line?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                None => continue,
                Some("meta") => {
                    let key = parts
                        .next()
                        .ok_or_else(|| fmt(no, "meta without key".into()))?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    out.meta.push((key.to_string(), value));
                }
                Some("tensor") => {
                    let name = parts
                        .next()
                        .ok_or_else(|| fmt(no, "tensor without name".into()))?
                        .to_string();
                    let shape = parts
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| fmt(no, format!("bad extent: {e}")))?;
                    let (vno, vals) = lines
                        .next()
                        .ok_or_else(|| fmt(no + 1, format!("missing values for {name}")))?;
                    let data = vals?
                        .split_whitespace()
                        .map(str::parse::<f64>)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| fmt(vno, format!("bad value: {e}")))?;
                    let t =
                        Tensor::new(shape, data).map_err(|e| fmt(vno, format!("{name}: {e}")))?;
                    out.tensors.push((name, t));
                }
                Some(other) => return Err(fmt(no, format!("unexpected record `{other}`"))),
            }
        }
        Ok(out)
    }
}
