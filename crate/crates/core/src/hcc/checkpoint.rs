//! Binary checkpoint: magic `HCCM`, u32 version, config block, shape table,
//! then every weight as a little-endian f64.
//!
//! Config block: u32 length + `key = value` text, then the five normalizer
//! fields as f64. Shape table: u32 count, then per tensor u32 name length,
//! name, u32 rows, u32 cols. Weights: u64 count, then values.

use std::path::Path;

use crate::corpus::write_file;
use crate::error::{Error, Result};
use crate::kv::KvMap;

use super::config::HccConfig;
use super::params::{tensor, HccParameters, TensorShape};
use super::train::{HccModel, Normalizer};

pub const MAGIC: &[u8; 4] = b"HCCM";
pub const VERSION: u32 = 1;

pub fn encode(model: &HccModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = model.config.to_kv();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let n = &model.normalizer;
    for v in [
        n.input_scale,
        n.uncertainty_mean,
        n.uncertainty_std,
        n.progress_mean,
        n.progress_std,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let shapes = model.params.shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (name, s) in tensor::NAMES.iter().zip(shapes) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(s.rows as u32).to_le_bytes());
        out.extend_from_slice(&(s.cols as u32).to_le_bytes());
    }
    let values = model.params.as_slice();
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<HccModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an HCC checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let config = HccConfig::from_kv(&KvMap::parse(text)?)?;
    config.validate()?;
    let normalizer = Normalizer {
        input_scale: r.f64()?,
        uncertainty_mean: r.f64()?,
        uncertainty_std: r.f64()?,
        progress_mean: r.f64()?,
        progress_std: r.f64()?,
    };

    let count = r.u32()? as usize;
    if count != tensor::COUNT {
        return Err(Error::Checkpoint(format!(
            "shape table lists {count} tensors, expected {}",
            tensor::COUNT
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for expected in tensor::NAMES {
        let n = r.u32()? as usize;
        let name = r.take(n)?;
        if name != expected.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "shape table entry {} where {expected} was expected",
                String::from_utf8_lossy(name)
            )));
        }
        shapes.push(TensorShape {
            rows: r.u32()? as usize,
            cols: r.u32()? as usize,
        });
    }
    let total = r.u64()? as usize;
    let implied: usize = shapes.iter().map(TensorShape::len).sum();
    if total != implied {
        return Err(Error::Checkpoint(format!(
            "shape table implies {implied} weights, header says {total}"
        )));
    }
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        values.push(r.f64()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after weights",
            bytes.len() - r.pos
        )));
    }
    let params = HccParameters::from_parts(&config, shapes, values)?;
    Ok(HccModel {
        config,
        normalizer,
        params,
    })
}

pub fn save_checkpoint(model: &HccModel, path: &Path) -> Result<()> {
    write_file(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<HccModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcc::params::init_params;

    fn model() -> HccModel {
        let config = HccConfig {
            input_dim: 5,
            encoder_dim: 6,
            latent_dim: 3,
            context_dim: 4,
            ..HccConfig::default()
        };
        HccModel {
            params: init_params(&config, 11).unwrap(),
            config,
            normalizer: Normalizer {
                input_scale: 0.1234,
                uncertainty_mean: 1.0 / 3.0,
                uncertainty_std: 2.5,
                progress_mean: -0.75,
                progress_std: 1e-3,
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode(&model());
        for cut in [2, 7, 30, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("unexpected end of checkpoint"), "{err}");
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = encode(&model());
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported checkpoint version 99"), "{err}");
        let mut bad = encode(&model());
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn inconsistent_shape_table_rejected() {
        let m = model();
        let mut bytes = encode(&m);
        // first shape entry: after magic, version, config text, normalizer, count
        let text_len = m.config.to_kv().len();
        let first = 4 + 4 + 4 + text_len + 5 * 8 + 4;
        let rows_at = first + 4 + tensor::NAMES[0].len();
        bytes[rows_at..rows_at + 4].copy_from_slice(&13u32.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
