use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::network::RegressorModel;
use super::network::RegressorSpec;
use super::train::EpochStats;
use crate::error::{Error, Result};

const MAGIC: &str = "COLDSTART-REGRESSOR";
const VERSION: u32 = 1;

impl RegressorModel {
    /// Text header of `key=value` lines, a blank line, then every stored scalar as
    /// little-endian f32: per layer weight (column-major) and bias, then per batch-norm
    /// layer scale, shift, running mean and running variance.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        writeln!(w, "spec={}", to_json(&self.spec))?;
        writeln!(w, "channel_spec_version={}", self.channel_spec_version)?;
        writeln!(w, "seed={}", self.seed)?;
        writeln!(w, "epochs={}", self.epochs)?;
        writeln!(w, "trained={}", self.trained)?;
        writeln!(w, "metrics={}", to_json(&self.metrics))?;
        writeln!(w, "params={}", self.spec.parameter_count())?;
        writeln!(w)?;
        for v in self.stored_values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        read_line(&mut r, &mut line)?;
        let mut head = line.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(Error::BadMagic {
                what: "regressor",
                expected: MAGIC,
            });
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("regressor header lacks a version".into()))?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                what: "regressor",
                found: version,
            });
        }
        let mut spec: Option<RegressorSpec> = None;
        let mut channel_spec_version = None;
        let mut seed = 0;
        let mut epochs = 0;
        let mut trained = false;
        let mut metrics = Vec::new();
        let mut params = None;
        let mut n = 1;
        loop {
            n += 1;
            read_line(&mut r, &mut line)?;
            if line.is_empty() {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("regressor header", n, "expected key=value"))?;
            let bad = |e: &dyn std::fmt::Display| Error::parse("regressor header", n, e.to_string());
            match key {
                "spec" => spec = Some(serde_json::from_str(value).map_err(|e| bad(&e))?),
                "channel_spec_version" => {
                    channel_spec_version = Some(value.parse::<u32>().map_err(|e| bad(&e))?)
                }
                "seed" => seed = value.parse().map_err(|e| bad(&e))?,
                "epochs" => epochs = value.parse().map_err(|e| bad(&e))?,
                "trained" => trained = value.parse().map_err(|e| bad(&e))?,
                "metrics" => metrics = serde_json::from_str(value).map_err(|e| bad(&e))?,
                "params" => params = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                other => log::warn!("ignoring unknown regressor header key {other:?}"),
            }
        }
        let spec = spec.ok_or_else(|| Error::Format("regressor header lacks spec".into()))?;
        let mut model = RegressorModel::init(spec, seed)?;
        let expected = model.spec.parameter_count();
        if params != Some(expected) {
            return Err(Error::Format(format!(
                "regressor declares {params:?} parameters, architecture has {expected}"
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
        if bytes.len() < expected * 4 {
            return Err(Error::Truncated { what: "regressor" });
        }
        if bytes.len() > expected * 4 {
            return Err(Error::Format("trailing bytes after regressor parameters".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite regressor parameter".into()));
        }
        model.set_stored_values(&values);
        model.channel_spec_version = channel_spec_version
            .ok_or_else(|| Error::Format("regressor header lacks channel_spec_version".into()))?;
        model.epochs = epochs;
        model.trained = trained;
        model.metrics = metrics;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }

    fn stored_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.parameter_count());
        for d in &self.layers {
            out.extend(d.weight.iter());
            out.extend(d.bias.iter());
        }
        for bn in self.norms.iter().flatten() {
            out.extend(bn.gamma.iter());
            out.extend(bn.beta.iter());
            out.extend(bn.running_mean.iter());
            out.extend(bn.running_var.iter());
        }
        out
    }

    fn set_stored_values(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |xs: &mut dyn Iterator<Item = &mut f64>| {
            for x in xs {
                *x = it.next().expect("value count checked by caller");
            }
        };
        for d in &mut self.layers {
            fill(&mut d.weight.iter_mut());
            fill(&mut d.bias.iter_mut());
        }
        for bn in self.norms.iter_mut().flatten() {
            fill(&mut bn.gamma.iter_mut());
            fill(&mut bn.beta.iter_mut());
            fill(&mut bn.running_mean.iter_mut());
            fill(&mut bn.running_var.iter_mut());
        }
    }
}

fn read_line<R: BufRead>(r: &mut R, line: &mut String) -> Result<()> {
    line.clear();
    let n = r.read_line(line).map_err(|e| Error::Format(e.to_string()))?;
    if n == 0 {
        return Err(Error::Truncated { what: "regressor" });
    }
    let trimmed = line.trim_end_matches(['\n', '\r']).len();
    line.truncate(trimmed);
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// `epoch,train_mse,val_mse` rows; the last column is empty without a validation set.
pub fn write_loss_csv<W: Write>(history: &[EpochStats], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse")?;
    for h in history {
        match h.val_mse {
            Some(v) => writeln!(w, "{},{},{}", h.epoch, h.train_mse, v)?,
            None => writeln!(w, "{},{},", h.epoch, h.train_mse)?,
        }
    }
    Ok(())
}
