//! Checkpoint files.
//!
//! Layout (little endian): magic `MGVCCKPT`, version `u32`, configuration
//! text (`u32` length + UTF-8 `key = value` lines), `min_db` `f64`, `ref_db`
//! `f64`, step `u64`, RNG seed (32 bytes) + stream `u64` + word position
//! `u128`, network count `u32`, then per network: name, Adam step `u64`,
//! array count `u32` and named arrays (name length `u32`, name, rank `u32`,
//! dims `u32`s, `f32` data). Adam moments are stored as arrays named
//! `adam.m/<param>` and `adam.v/<param>`. A SHA-256 of everything before it
//! closes the file.

use std::collections::HashMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::{RunConfig, TrainState};
use crate::dsp::NormalizationStats;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGVCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const KIND: &str = "checkpoint";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("size fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn array(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.bytes(name.as_bytes());
        self.u32(shape.len());
        for &d in shape {
            self.u32(d);
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn network(&mut self, name: &str, store: &ParamStore<f32>, adam: &Adam<f32>) {
        self.bytes(name.as_bytes());
        self.0.extend_from_slice(&adam.step.to_le_bytes());
        let trainable = store.entries().iter().filter(|e| e.trainable()).count();
        self.u32(store.entries().len() + 2 * trainable);
        for e in store.entries() {
            self.array(&e.name, &e.shape, &e.value);
        }
        for (i, e) in store.entries().iter().enumerate() {
            if e.trainable() {
                self.array(&format!("adam.m/{}", e.name), &e.shape, &adam.first[i]);
                self.array(&format!("adam.v/{}", e.name), &e.shape, &adam.second[i]);
            }
        }
    }
}

/// Serialize a training state.
pub fn write_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.bytes(state.config.to_text().as_bytes());
    w.0.extend_from_slice(&state.stats.min_db.to_le_bytes());
    w.0.extend_from_slice(&state.stats.ref_db.to_le_bytes());
    w.0.extend_from_slice(&state.step.to_le_bytes());
    w.0.extend_from_slice(&state.rng.get_seed());
    w.0.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.u32(3);
    w.network("generator", &state.g.store, &state.adam_g);
    w.network("discriminator", &state.d.store, &state.adam_d);
    w.network("siamese", &state.s.store, &state.adam_s);
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::format(KIND, "truncated file"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(KIND, "name is not UTF-8"))
    }

    fn named_array(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name = self.string()?;
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(len.checked_mul(4).ok_or_else(|| Error::format(KIND, "array too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok((name, shape, data))
    }

    fn network(&mut self, expected: &str, store: &mut ParamStore<f32>, adam: &mut Adam<f32>) -> Result<()> {
        let name = self.string()?;
        if name != expected {
            return Err(Error::format(KIND, format!("expected network {expected}, found {name}")));
        }
        adam.step = self.u64()?;
        let count = self.u32()?;
        let mut arrays = HashMap::with_capacity(count);
        for _ in 0..count {
            let (n, shape, data) = self.named_array()?;
            if arrays.insert(n.clone(), (shape, data)).is_some() {
                return Err(Error::format(KIND, format!("{expected}: duplicate array {n}")));
            }
        }
        let mut take = |key: String, shape: &[usize]| -> Result<Vec<f32>> {
            let (s, data) = arrays
                .remove(&key)
                .ok_or_else(|| Error::format(KIND, format!("{expected}: missing array {key}")))?;
            if s != shape {
                return Err(Error::format(
                    KIND,
                    format!("{expected}: array {key} has shape {s:?}, model expects {shape:?}"),
                ));
            }
            Ok(data)
        };
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            e.value = take(e.name.clone(), &e.shape)?;
            if e.trainable() {
                adam.first[i] = take(format!("adam.m/{}", e.name), &e.shape)?;
                adam.second[i] = take(format!("adam.v/{}", e.name), &e.shape)?;
            }
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::format(KIND, format!("{expected}: unexpected array {extra}")));
        }
        Ok(())
    }
}

/// Parse and verify a serialized training state.
pub fn read_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader(bytes);
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::format(KIND, "truncated file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::DigestMismatch);
    }
    let mut r = Reader(&body[CHECKPOINT_MAGIC.len() + 4..]);
    let text = r.string()?;
    let config = RunConfig::from_text(&text)?;
    let stats = NormalizationStats::new(r.f64()?, r.f64()?)?;
    let step = r.u64()?;
    let mut rng = ChaCha8Rng::from_seed(r.array()?);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(u128::from_le_bytes(r.array()?));

    let mut state = TrainState::new(config, stats)?;
    state.step = step;
    state.rng = rng;
    if r.u32()? != 3 {
        return Err(Error::format(KIND, "expected three networks"));
    }
    r.network("generator", &mut state.g.store, &mut state.adam_g)?;
    r.network("discriminator", &mut state.d.store, &mut state.adam_d)?;
    r.network("siamese", &mut state.s.store, &mut state.adam_s)?;
    if !r.0.is_empty() {
        return Err(Error::format(KIND, "trailing bytes before digest"));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    Ok(state)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
