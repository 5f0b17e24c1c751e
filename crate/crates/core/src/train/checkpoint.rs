//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic "DSSMCKPT" | u32 version
//! u64 len, config text (UTF-8)
//! u64 epoch
//! [u8; 32] rng seed | u64 stream | u128 word position
//! f64 lr, beta1, beta2, eps | u64 adam step
//! u32 tensor count, then per tensor: u32 name len, name, u32 rank, u64 dims
//! f64 parameter payloads in table order
//! f64 first moments, then f64 second moments, same order
//! ```

use std::collections::HashSet;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::{Adam, AdamConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"DSSMCKPT";
pub const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form echo of the configuration that produced the weights.
    pub config_text: String,
    pub epoch: u64,
    pub rng: RngState,
    pub params: ParamStore,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config_text: impl Into<String>) -> Self {
        Self {
            config_text: config_text.into(),
            epoch: state.epoch as u64,
            rng: RngState::capture(&state.rng),
            params: state.params.clone(),
            adam: state.adam.clone(),
        }
    }

    pub fn into_state(self) -> TrainState {
        TrainState {
            params: self.params,
            adam: self.adam,
            rng: self.rng.restore(),
            epoch: self.epoch as usize,
        }
    }

    /// Checks names and shapes against a freshly initialized `expected` store.
    pub fn check_compatible(&self, expected: &ParamStore) -> Result<()> {
        for p in self.params.iter() {
            let Some(e) = expected.get(&p.name) else {
                return Err(Error::UnknownTensor(p.name.clone()));
            };
            if e.shape != p.shape {
                return Err(Error::TensorShape {
                    name: p.name.clone(),
                    expected: e.shape.clone(),
                    found: p.shape.clone(),
                });
            }
        }
        if let Some(e) = expected.iter().find(|e| self.params.get(&e.name).is_none()) {
            return Err(Error::MissingTensor(e.name.clone()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 24 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let c = self.adam.config;
        for v in [c.lr, c.beta1, c.beta2, c.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let payloads = self
            .params
            .iter()
            .map(|p| &p.value)
            .chain(&self.adam.m)
            .chain(&self.adam.v);
        for values in payloads {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let text_len = r.len_u64()?;
        let config_text = String::from_utf8(r.take(text_len)?.to_vec())
            .map_err(|_| Error::CorruptHeader("config text is not UTF-8".into()))?;
        let epoch = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let t = r.u64()?;

        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for i in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CorruptHeader(format!("name of tensor {i} is not UTF-8")))?;
            if !seen.insert(name.clone()) {
                return Err(Error::CorruptHeader(format!("tensor `{name}` appears twice")));
            }
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(Error::CorruptHeader(format!("tensor `{name}` claims rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.len_u64()?);
            }
            table.push((name, shape));
        }

        let sizes: Vec<usize> = table
            .iter()
            .map(|(name, shape)| {
                shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| Error::CorruptHeader(format!("tensor `{name}` is too large")))
            })
            .collect::<Result<_>>()?;
        let mut params = ParamStore::new();
        for ((name, shape), &n) in table.iter().zip(&sizes) {
            params
                .insert(name.clone(), shape, r.f64s(n)?)
                .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        }
        let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptHeader(format!(
                "{} trailing bytes after the payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config_text,
            epoch,
            rng: RngState { seed, stream, word_pos },
            params,
            adam: Adam { config, t, m, v },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                needed: n,
                offset: self.pos,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::CorruptHeader(format!("length {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptHeader(format!("payload of {n} values is too large")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ck.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
