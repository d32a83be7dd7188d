//! Checkpoint files: `RGCK`, a u32 format version, the 32-byte model
//! configuration digest, then named tensor records until end of file. Each
//! record is a u16 little-endian name length, the UTF-8 name and one RGT1
//! tensor.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rgnet_tensor::io::{read_any_tensor, write_tensor};
use rgnet_tensor::{Scalar, Tensor};

use crate::config::ModelConfig;
use crate::error::{io_err, Error, Result};
use crate::optim::AdamState;
use crate::train::TrainState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_record<T: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<T>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| ck_err(format!("record name too long: {name}")))?;
    let io = |e| ck_err(format!("write failed: {e}"));
    w.write_all(&len.to_le_bytes()).map_err(io)?;
    w.write_all(name.as_bytes()).map_err(io)?;
    write_tensor(w, t)?;
    Ok(())
}

/// Step, epoch and the seed split into exact 32-bit halves.
fn meta_tensor(state_step: u64, epoch: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(
        vec![4],
        vec![
            state_step as f64,
            epoch as f64,
            (seed & 0xffff_ffff) as f64,
            (seed >> 32) as f64,
        ],
    )
    .expect("four values")
}

pub fn write_checkpoint<T: Scalar, W: Write>(state: &TrainState<T>, w: &mut W) -> Result<()> {
    let io = |e| ck_err(format!("write failed: {e}"));
    w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&state.model.config().digest_bytes()).map_err(io)?;
    let store = state.model.store();
    for (name, value) in store.names().iter().zip(store.values()) {
        write_record(w, &format!("param/{name}"), value)?;
    }
    for (name, stats) in store.bn_names().iter().zip(store.bn_stats()) {
        write_record(w, &format!("buffer/{name}.mean"), &stats.mean)?;
        write_record(w, &format!("buffer/{name}.var"), &stats.var)?;
    }
    for (i, name) in store.names().iter().enumerate() {
        write_record(w, &format!("adam_m/{name}"), &state.adam.m[i])?;
        write_record(w, &format!("adam_v/{name}"), &state.adam.v[i])?;
    }
    write_record(w, "state/meta", &meta_tensor(state.adam.step, state.epoch, state.seed))?;
    Ok(())
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("rgck.tmp");
    let mut buf = Vec::new();
    write_checkpoint(state, &mut buf)?;
    std::fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Header digest and every record of a checkpoint stream.
pub fn read_records<R: Read>(r: &mut R) -> Result<([u8; 32], Vec<(String, rgnet_tensor::io::AnyTensor)>)> {
    let mut head = [0u8; 40];
    r.read_exact(&mut head).map_err(|_| ck_err("truncated header"))?;
    if head[..4] != CHECKPOINT_MAGIC {
        return Err(ck_err("bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ck_err(format!("unsupported format version {version}")));
    }
    let digest: [u8; 32] = head[8..40].try_into().expect("32 bytes");
    let mut records = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(ck_err(format!("read failed: {e}"))),
        }
        r.read_exact(&mut len[1..]).map_err(|_| ck_err("truncated record"))?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|_| ck_err("truncated record name"))?;
        let name = String::from_utf8(name).map_err(|_| ck_err("record name is not UTF-8"))?;
        let tensor = read_any_tensor(r).map_err(|e| ck_err(format!("record {name}: {e}")))?;
        records.push((name, tensor));
    }
    Ok((digest, records))
}

/// Restores a training state. The checkpoint must have been written for a
/// model built from `cfg` (checked by digest); stored values are converted to
/// the requested precision.
pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R, cfg: &ModelConfig) -> Result<TrainState<T>> {
    let (digest, records) = read_records(r)?;
    if digest != cfg.digest_bytes() {
        return Err(ck_err(format!(
            "configuration digest mismatch: checkpoint {}, config {}",
            hex::encode(digest),
            cfg.digest()
        )));
    }
    let mut by_name: HashMap<String, Tensor<T>> = HashMap::with_capacity(records.len());
    for (name, t) in records {
        if by_name.insert(name.clone(), t.into_typed()).is_some() {
            return Err(ck_err(format!("duplicate record {name}")));
        }
    }
    let mut state = TrainState::<T>::new(cfg, 0)?;
    let mut take = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
        let t = by_name.remove(&name).ok_or_else(|| ck_err(format!("missing record {name}")))?;
        if t.shape() != shape {
            return Err(ck_err(format!("record {name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    };
    let names = state.model.store().names().to_vec();
    let bn_names = state.model.store().bn_names().to_vec();
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    {
        let store = state.model.store_mut();
        for (i, name) in names.iter().enumerate() {
            let shape = store.values()[i].shape().to_vec();
            store.values_mut()[i] = take(format!("param/{name}"), &shape)?;
            m.push(take(format!("adam_m/{name}"), &shape)?);
            v.push(take(format!("adam_v/{name}"), &shape)?);
        }
        for (i, name) in bn_names.iter().enumerate() {
            let shape = store.bn_stats()[i].mean.shape().to_vec();
            let stats = &mut store.bn_stats_mut()[i];
            stats.mean = take(format!("buffer/{name}.mean"), &shape)?;
            stats.var = take(format!("buffer/{name}.var"), &shape)?;
        }
    }
    let meta: Vec<f64> = take("state/meta".into(), &[4])?.to_f64_vec();
    if let Some(extra) = by_name.keys().next() {
        return Err(ck_err(format!("unexpected record {extra}")));
    }
    state.adam = AdamState {
        m,
        v,
        step: meta[0] as u64,
    };
    state.epoch = meta[1] as usize;
    state.seed = (meta[2] as u64) | ((meta[3] as u64) << 32);
    Ok(state)
}

pub fn load_checkpoint<T: Scalar>(path: &Path, cfg: &ModelConfig) -> Result<TrainState<T>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    read_checkpoint(&mut bytes.as_slice(), cfg)
}
