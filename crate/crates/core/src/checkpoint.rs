//! Checkpoint files: a text manifest followed by raw little-endian `f32`
//! arrays in the order the manifest lists them.
//!
//! ```text
//! NEURODENOISE-CKPT v1
//! config_hash <sha256 hex>
//! tensor fullband.layer0.w_in 256x64
//! ...
//! end
//! <binary data>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &str = "NEURODENOISE-CKPT v1";

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let mut header = format!("{MAGIC}\nconfig_hash {}\n", model.config.architecture_hash());
    for (name, shape) in model.tensor_shapes() {
        header.push_str(&format!("tensor {name} {}\n", shape_text(&shape)));
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes())?;
    let mut bytes = Vec::with_capacity(model.num_params() * 4);
    model.visit_params(&mut |_, v| {
        for x in v {
            bytes.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    });
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

/// Reads a checkpoint for `config`. The stored hash and tensor list must match
/// the architecture `config` describes.
pub fn read_checkpoint(config: &ModelConfig, r: impl Read) -> Result<Model> {
    let mut model = Model::new(config.clone(), 0)?;
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let next_line = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::Checkpoint("unexpected end of header".into()));
        }
        Ok(())
    };

    next_line(&mut r, &mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic line {:?}", line.trim_end())));
    }
    next_line(&mut r, &mut line)?;
    let hash = line
        .trim_end()
        .strip_prefix("config_hash ")
        .ok_or_else(|| Error::Checkpoint("missing config_hash line".into()))?
        .to_string();
    let expected = config.architecture_hash();
    if hash != expected {
        return Err(Error::CheckpointMismatch(format!("checkpoint hash {hash}, config hash {expected}")));
    }

    let mut declared = Vec::new();
    loop {
        next_line(&mut r, &mut line)?;
        let l = line.trim_end();
        if l == "end" {
            break;
        }
        let mut parts = l.split(' ');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("tensor"), Some(name), Some(shape), None) => declared.push((name.to_string(), shape.to_string())),
            _ => return Err(Error::Checkpoint(format!("bad header line {l:?}"))),
        }
    }
    let expected: Vec<(String, String)> =
        model.tensor_shapes().into_iter().map(|(n, s)| (n, shape_text(&s))).collect();
    if declared != expected {
        let first = declared
            .iter()
            .zip(&expected)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {} vs {} {}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("{} tensors vs {}", declared.len(), expected.len()));
        return Err(Error::CheckpointMismatch(format!("tensor list differs: {first}")));
    }

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != model.num_params() * 4 {
        return Err(Error::Checkpoint(format!("expected {} data bytes, found {}", model.num_params() * 4, data.len())));
    }
    let mut off = 0;
    model.visit_params_mut(&mut |_, v| {
        for x in v.iter_mut() {
            *x = f32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as f64;
            off += 4;
        }
    });
    model.validate()?;
    Ok(model)
}

pub fn load(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(config, std::fs::File::open(path)?)
}
