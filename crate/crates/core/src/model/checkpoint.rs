//! Checkpoint file: versioned header, config block, raw little-endian
//! parameter tensors with named sections. Round-trips are bit-exact.

use super::params::ModelParams;
use super::{ModelConfig, ModelError, Scalar};
use std::path::Path;

const MAGIC: &[u8; 8] = b"UTCKPT01";

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE_TAG);
    let cfg_json = serde_json::to_vec(cfg).expect("config serializes");
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for dim in &shape {
            out.extend_from_slice(&(*dim as u32).to_le_bytes());
        }
        for &v in tensor.as_slice() {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelConfig, ModelParams<T>), ModelError> {
    let data = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |msg: &str| ModelError::BadCheckpoint(msg.to_string());
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        let end = *pos + n;
        let slice = data.get(*pos..end).ok_or_else(|| bad("truncated file"))?;
        *pos = end;
        Ok(slice)
    };
    let take_u32 = |pos: &mut usize| -> Result<usize, ModelError> {
        let end = *pos + 4;
        let slice = data.get(*pos..end).ok_or_else(|| bad("truncated file"))?;
        *pos = end;
        Ok(u32::from_le_bytes(slice.try_into().unwrap()) as usize)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let dtype = take(&mut pos, 1)?[0];
    if dtype != T::DTYPE_TAG {
        return Err(bad(&format!(
            "dtype tag {dtype} does not match requested width {}",
            T::BYTES * 8
        )));
    }
    let cfg_len = take_u32(&mut pos)?;
    let cfg: ModelConfig = serde_json::from_slice(take(&mut pos, cfg_len)?)
        .map_err(|e| bad(&format!("bad config block: {e}")))?;
    cfg.validate()?;

    let mut params = ModelParams::<T>::zeros(&cfg);
    let n_sections = take_u32(&mut pos)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape()))
        .collect();
    if n_sections != expected.len() {
        return Err(bad(&format!(
            "{} sections, config implies {}",
            n_sections,
            expected.len()
        )));
    }
    {
        let mut slices = params.slices_mut();
        for (i, (want_name, want_shape)) in expected.iter().enumerate() {
            let name_len = take_u32(&mut pos)?;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| bad("section name is not utf-8"))?;
            if name != want_name {
                return Err(bad(&format!("section {name:?}, expected {want_name:?}")));
            }
            let ndim = take_u32(&mut pos)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(take_u32(&mut pos)?);
            }
            if &shape != want_shape {
                return Err(bad(&format!(
                    "section {name:?} has shape {shape:?}, expected {want_shape:?}"
                )));
            }
            let count: usize = shape.iter().product();
            let bytes = take(&mut pos, count * T::BYTES)?;
            for (j, chunk) in bytes.chunks_exact(T::BYTES).enumerate() {
                slices[i][j] = T::read_le(chunk);
            }
        }
    }
    if pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((cfg, params))
}
