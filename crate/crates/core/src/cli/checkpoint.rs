//! Snapshot checkpoints and resume state.
//!
//! A checkpoint holds f32 parameters; everything in memory is f64, so a
//! save/load cycle is exact only for parameters already rounded through f32,
//! which is how training captures snapshots. The resume file keeps the
//! optimizer moments in f64 so a resumed run continues bit for bit.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::{Model, ModelConfig};
use crate::layers::ParamStore;
use crate::tensor::RNG_ALGORITHM;
use crate::training::{AdamW, ResumeState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DYTTPCKP";
pub const RESUME_MAGIC: &[u8; 8] = b"DYTTPRES";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file: expected magic {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    BadVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was written for a different model config (digest {found}, active config {expected})")]
    DigestMismatch { expected: String, found: String },
    #[error("checkpoint was written with rng {found:?}, this build uses {expected:?}")]
    RngMismatch { expected: String, found: String },
    #[error("checkpoint parameters do not match the model: {0}")]
    Layout(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Hex sha256 of the config's JSON form.
pub fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("model config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_digest: String,
    pub rng: String,
    pub cycle_index: usize,
    pub params: ParamStore,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn header(&mut self, magic: &[u8; 8], digest: &str, cycle: usize) {
        self.0.extend_from_slice(magic);
        self.u32(CHECKPOINT_VERSION as usize);
        self.str(digest);
        self.str(RNG_ALGORITHM);
        self.u32(cycle);
    }
    fn params(&mut self, params: &ParamStore, wide: bool) {
        self.u32(params.len());
        for p in params.iter() {
            self.str(&p.name);
            self.u32(p.shape.len());
            for &d in &p.shape {
                self.u32(d);
            }
            for &v in p.data.iter() {
                if wide {
                    self.f64(v);
                } else {
                    self.0.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(format!(
                "needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("string is not UTF-8".into()))
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<(String, String, usize)> {
        let head = &self.buf[..magic.len().min(self.buf.len())];
        if !magic.starts_with(head) {
            return Err(CheckpointError::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(head).into(),
            });
        }
        let found = self.take(magic.len())?;
        if found != magic {
            return Err(CheckpointError::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: String::from_utf8_lossy(found).into(),
            });
        }
        let version = self.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let digest = self.str()?;
        let rng = self.str()?;
        let cycle = self.u32()?;
        Ok((digest, rng, cycle))
    }
    /// Values in the order of `template`, which fixes names and shapes.
    fn params(&mut self, template: &ParamStore, wide: bool) -> Result<ParamStore> {
        let count = self.u32()?;
        if count != template.len() {
            return Err(CheckpointError::Layout(format!(
                "{count} parameter tensors stored, model has {}",
                template.len()
            )));
        }
        let mut out = template.clone();
        for (i, p) in template.iter().enumerate() {
            let name = self.str()?;
            let rank = self.u32()?;
            let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            if name != p.name || shape != p.shape {
                return Err(CheckpointError::Layout(format!(
                    "entry {i} is {name} {shape:?}, model expects {} {:?}",
                    p.name, p.shape
                )));
            }
            let n = p.data.len();
            let width = if wide { 8 } else { 4 };
            let bytes = self.take(n * width)?;
            let data: Vec<f64> = if wide {
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            } else {
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            };
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Format(format!("{name} holds a non-finite value")));
            }
            out.set(crate::layers::ParamId(i), data);
        }
        Ok(out)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn check_header(digest: String, rng: String, cfg: &ModelConfig) -> Result<String> {
    let expected = config_digest(cfg);
    if digest != expected {
        return Err(CheckpointError::DigestMismatch { expected, found: digest });
    }
    if rng != RNG_ALGORITHM {
        return Err(CheckpointError::RngMismatch {
            expected: RNG_ALGORITHM.into(),
            found: rng,
        });
    }
    Ok(digest)
}

fn template(cfg: &ModelConfig) -> Result<ParamStore> {
    Model::new(cfg.clone(), 0)
        .map(|m| m.params)
        .map_err(|e| CheckpointError::Format(format!("active model config is invalid: {e}")))
}

pub fn encode_checkpoint(cfg: &ModelConfig, cycle_index: usize, params: &ParamStore) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.header(CHECKPOINT_MAGIC, &config_digest(cfg), cycle_index);
    w.params(params, false);
    w.0
}

/// Parse a checkpoint and validate it against `cfg`.
pub fn decode_checkpoint(buf: &[u8], cfg: &ModelConfig) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let (digest, rng, cycle_index) = r.header(CHECKPOINT_MAGIC)?;
    let digest = check_header(digest, rng, cfg)?;
    let params = r.params(&template(cfg)?, false)?;
    r.finish()?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        config_digest: digest,
        rng: RNG_ALGORITHM.into(),
        cycle_index,
        params,
    })
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, cycle_index: usize, params: &ParamStore) -> Result<()> {
    write(path, &encode_checkpoint(cfg, cycle_index, params))
}

pub fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?, cfg)
}

pub fn encode_resume(cfg: &ModelConfig, state: &ResumeState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.header(RESUME_MAGIC, &config_digest(cfg), state.next_cycle);
    w.params(&state.params, true);
    let opt = &state.optimizer;
    for v in [opt.beta1, opt.beta2, opt.eps, opt.weight_decay] {
        w.f64(v);
    }
    w.u64(opt.step);
    for moments in [&opt.first_moment, &opt.second_moment] {
        for m in moments {
            m.iter().for_each(|&v| w.f64(v));
        }
    }
    w.0
}

pub fn decode_resume(buf: &[u8], cfg: &ModelConfig) -> Result<ResumeState> {
    let mut r = Reader { buf, pos: 0 };
    let (digest, rng, next_cycle) = r.header(RESUME_MAGIC)?;
    check_header(digest, rng, cfg)?;
    let params = r.params(&template(cfg)?, true)?;
    let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let step = r.u64()?;
    let mut moments = || -> Result<Vec<Vec<f64>>> { params.iter().map(|p| (0..p.data.len()).map(|_| r.f64()).collect()).collect() };
    let first_moment = moments()?;
    let second_moment = moments()?;
    r.finish()?;
    Ok(ResumeState {
        next_cycle,
        params,
        optimizer: AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step,
            first_moment,
            second_moment,
        },
    })
}

pub fn save_resume(path: &Path, cfg: &ModelConfig, state: &ResumeState) -> Result<()> {
    write(path, &encode_resume(cfg, state))
}

pub fn load_resume(path: &Path, cfg: &ModelConfig) -> Result<ResumeState> {
    decode_resume(&read(path)?, cfg)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}
