//! Checkpoint files: a text manifest followed by raw little-endian `f32`
//! arrays in manifest order.
//!
//! ```text
//! pointcount-checkpoint 1
//! image 11 24
//! activation relu
//! phases gesture_pre,recitation_pre
//! block conv.weight 7x9 0
//! ...
//! data
//! <bytes>
//! ```
//!
//! Block offsets count bytes from the first byte after the `data` line.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::net::{Activation, Block, NetShape, NetworkParams};
use crate::training::{Model, Phase};

const MAGIC: &str = "pointcount-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

/// Serializes a model. Values are stored as `f32`.
pub fn encode(model: &Model) -> Vec<u8> {
    let shape = model.params.shape();
    let phases: Vec<&str> = model.phases.iter().map(|p| p.name()).collect();
    let mut header = format!(
        "{MAGIC}\nimage {} {}\nactivation {}\nphases {}\n",
        shape.image_height,
        shape.image_width,
        shape.visual_activation,
        if phases.is_empty() { "-".to_string() } else { phases.join(",") }
    );
    let mut offset = 0usize;
    for b in Block::ALL {
        let (rows, cols) = shape.block_shape(b);
        header.push_str(&format!("block {} {rows}x{cols} {offset}\n", b.name()));
        offset += rows * cols * 4;
    }
    header.push_str("data\n");
    let mut out = header.into_bytes();
    out.reserve(offset);
    for b in Block::ALL {
        for &v in model.params.block(b) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| bad("manifest is not terminated by a `data` line"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("manifest is not UTF-8"))?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line);
    }
    let data = &bytes[pos..];
    let mut it = lines.into_iter();
    if it.next() != Some(MAGIC) {
        return Err(bad("missing header line"));
    }
    let mut field = |key: &str| -> Result<Vec<&str>, CheckpointError> {
        let line = it.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(format!("expected `{key}`, found `{line}`")));
        }
        Ok(parts.collect())
    };
    let image = field("image")?;
    let dims: Vec<usize> = image
        .iter()
        .map(|v| v.parse().map_err(|_| bad(format!("bad image size `{v}`"))))
        .collect::<Result<_, _>>()?;
    if dims.len() != 2 {
        return Err(bad("image line needs height and width"));
    }
    let activation: Activation = field("activation")?
        .first()
        .ok_or_else(|| bad("missing activation"))?
        .parse()
        .map_err(bad)?;
    let shape = NetShape::for_image(dims[0], dims[1]).with_visual_activation(activation);
    shape.validate().map_err(|e| bad(e.to_string()))?;
    let phase_list = field("phases")?;
    let phases = match phase_list.as_slice() {
        ["-"] => Vec::new(),
        [list] => list
            .split(',')
            .map(|p| p.parse::<Phase>().map_err(bad))
            .collect::<Result<_, _>>()?,
        _ => return Err(bad("bad phases line")),
    };

    let mut blocks: [Vec<f64>; 10] = Default::default();
    let mut expected_offset = 0usize;
    for b in Block::ALL {
        let parts = field("block")?;
        let [name, dims, offset] = parts.as_slice() else {
            return Err(bad("block line needs name, shape and offset"));
        };
        if Block::from_name(name) != Some(b) {
            return Err(bad(format!("expected block {}, found {name}", b.name())));
        }
        let (rows, cols) = shape.block_shape(b);
        if *dims != format!("{rows}x{cols}") {
            return Err(bad(format!("{name}: shape {dims} does not match {rows}x{cols}")));
        }
        let offset: usize = offset.parse().map_err(|_| bad(format!("{name}: bad offset")))?;
        if offset != expected_offset {
            return Err(bad(format!("{name}: offset {offset}, expected {expected_offset}")));
        }
        let len = rows * cols * 4;
        let raw = data
            .get(offset..offset + len)
            .ok_or_else(|| bad(format!("{name}: data truncated")))?;
        blocks[b as usize] = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        expected_offset += len;
    }
    if it.next().is_some() {
        return Err(bad("unexpected manifest lines"));
    }
    if data.len() != expected_offset {
        return Err(bad(format!(
            "{} data bytes, manifest describes {expected_offset}",
            data.len()
        )));
    }
    let params = NetworkParams::from_blocks(shape, blocks).map_err(|e| bad(e.to_string()))?;
    Ok(Model { params, phases })
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
