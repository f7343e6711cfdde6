//! Binary checkpoint container.
//!
//! Layout, little-endian: `"CSEP"`, `u32` version, `u32` length plus UTF-8
//! `key=value` lines, `u32` tensor count, then per tensor a `u16`-prefixed
//! name, `u8` rank, `u32` dims and `f32` payload. A CRC32 of every
//! preceding byte closes the file.

use std::fs;
use std::path::Path;

use super::config::SeparatorConfig;
use super::separator::Separator;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CSEP";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SeparatorConfig,
    /// Non-model `key=value` entries, in file order.
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut text = self.config.to_kv();
        for (k, v) in &self.meta {
            if SeparatorConfig::is_model_key(k) || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("unusable meta key {k:?}")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(text.len()).map_err(|_| Error::invalid("config too long"))?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let n = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("rank too large"))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::invalid("dimension too large"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Corrupt(format!("file is only {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        if bytes.len() < 12 {
            return Err(Error::Corrupt("truncated checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
        let mut model_lines = String::new();
        let mut meta = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line without '=': {line:?}")))?;
            if SeparatorConfig::is_model_key(k.trim()) {
                model_lines.push_str(line);
                model_lines.push('\n');
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }
        let config = SeparatorConfig::from_kv(&model_lines)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Corrupt(format!("tensor {name} too large")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { config, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Splits off tensors whose names start with `prefix`, stripping it.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let (hit, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tensors)
            .into_iter()
            .partition(|(n, _)| n.starts_with(prefix));
        self.tensors = keep;
        hit.into_iter()
            .map(|(n, t)| (n[prefix.len()..].to_string(), t))
            .collect()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

impl<T: Scalar> Separator<T> {
    /// Checkpoint holding this model's parameters and config.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config().clone(),
            meta: Vec::new(),
            tensors: self.params().iter().map(|(n, t)| (n.to_string(), t.cast())).collect(),
        }
    }

    /// Rebuilds a model from a checkpoint; all tensors must be model parameters.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let named = ck.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
        Self::from_named(ck.config.clone(), named)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Separator<f32> {
        let cfg = SeparatorConfig {
            kernel_size: 16,
            stride: 8,
            feature_size: 8,
            mask_feature_size: 8,
            conv_layers: 1,
            num_heads: 2,
            transformer_depth: 1,
            ..SeparatorConfig::default()
        };
        Separator::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn save_load_is_bit_exact() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = Separator::<f32>::load(&p).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn meta_and_extra_tensors_round_trip() {
        let mut ck = small().to_checkpoint();
        ck.meta.push(("train.step".into(), "17".into()));
        ck.tensors.push(("optim.m.x".into(), Tensor::scalar(1.5)));
        let mut back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_value("train.step"), Some("17"));
        let extra = back.take_prefixed("optim.");
        assert_eq!(extra[0].0, "m.x");
        assert!(Separator::<f32>::from_checkpoint(&back).is_ok());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut b = small().to_checkpoint().to_bytes().unwrap();
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Format(_))));
        let mut v = small().to_checkpoint().to_bytes().unwrap();
        v[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_bit_flips_are_corruption() {
        let b = small().to_checkpoint().to_bytes().unwrap();
        for cut in [5, 12, b.len() / 2, b.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&b[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = b.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Corrupt(_))));
    }
}
