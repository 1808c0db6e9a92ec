//! Binary checkpoint container.
//!
//! Layout: the magic `FLOWOOD\0`, a little-endian `u32` version, a `u32`
//! header length, a JSON header, a `u64` parameter count, then every
//! parameter as little-endian `f64` in canonical order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowError, FlowModel};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FLOWOOD\0";

#[derive(Serialize, Deserialize)]
struct Header {
    config: FlowConfig,
    seed: u64,
    actnorm_initialized: bool,
}

fn io_err(e: std::io::Error) -> FlowError {
    FlowError::Checkpoint(e.to_string())
}

pub fn write_checkpoint(model: &FlowModel, mut w: impl Write) -> Result<(), FlowError> {
    let header = serde_json::to_vec(&Header {
        config: model.cfg.clone(),
        seed: model.seed,
        actnorm_initialized: model.actnorm_initialized,
    })
    .map_err(|e| FlowError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    w.write_all(&(model.num_params() as u64).to_le_bytes()).map_err(io_err)?;
    let mut buf = Vec::with_capacity(8 * model.num_params());
    for t in model.params() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], FlowError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<FlowModel, FlowError> {
    if &read_array::<8>(&mut r)? != MAGIC {
        return Err(FlowError::Checkpoint("not a flow checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(FlowError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&header).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
    let mut model = FlowModel::new(header.config, header.seed)?;
    model.actnorm_initialized = header.actnorm_initialized;
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    if count != model.num_params() {
        return Err(FlowError::Checkpoint(format!(
            "header geometry needs {} parameters, file has {count}",
            model.num_params()
        )));
    }
    let mut raw = vec![0u8; 8 * count];
    r.read_exact(&mut raw).map_err(io_err)?;
    let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("count checked");
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<(), FlowError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf).map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel, FlowError> {
    let bytes = std::fs::read(path).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(bytes.as_slice())
}
