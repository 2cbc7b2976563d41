//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SCNV" | u32 version
//! u64 len | config text (UTF-8)
//! u64 len | variant tag
//! u64 count | count x (u64 len | word)            vocabulary in id order
//! u64 count | count x (u64 epoch | f64 loss | f64 dev accuracy)
//! u64 count | count x tensor
//! tensor = u64 len | name | u32 rank | rank x u64 dim | prod(dims) x f64
//! ```
//!
//! Nothing may follow the last tensor.

use std::path::Path;

use thiserror::Error;

use crate::corpus::{clean_and_tokenize, encode_and_pad, Vocabulary};
use crate::embed::{EmbeddingChannel, Variant};
use crate::eval;
use crate::net::{ModelParams, NetError};
use crate::optim::{EpochRecord, History, TrainConfig};

pub const MAGIC: &[u8; 4] = b"SCNV";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("trailing bytes after checkpoint")]
    TrailingBytes,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CheckpointError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::BadMagic => 1,
            CheckpointError::UnsupportedVersion(_) => 2,
            CheckpointError::Truncated => 3,
            CheckpointError::TrailingBytes => 4,
            CheckpointError::Malformed(_) => 5,
            CheckpointError::Io(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// A trained model together with what is needed to use it on raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub history: History,
}

impl Classifier {
    /// Tokenizes and pads `text`, then classifies it. Unknown words read as
    /// padding.
    pub fn predict_text(&self, text: &str) -> eval::Result<(usize, Vec<f64>)> {
        let ids = encode_and_pad(&clean_and_tokenize(text), &self.vocab, self.params.max_width());
        eval::predict(&self.params, &ids)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        put_str(&mut out, self.config.variant.as_str());
        put_u64(&mut out, self.vocab.len() as u64);
        for w in self.vocab.words() {
            put_str(&mut out, w);
        }
        put_u64(&mut out, self.history.epochs.len() as u64);
        for r in &self.history.epochs {
            put_u64(&mut out, r.epoch as u64);
            out.extend_from_slice(&r.train_loss.to_le_bytes());
            out.extend_from_slice(&r.dev_accuracy.to_le_bytes());
        }
        let tensors = self.params.tensors();
        put_u64(&mut out, tensors.len() as u64);
        for (name, dims, values) in tensors {
            put_str(&mut out, &name);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                put_u64(&mut out, d as u64);
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config_text = r.string()?;
        let config = TrainConfig::parse(&config_text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let tag = r.string()?;
        let variant: Variant = tag.parse().map_err(CheckpointError::Malformed)?;
        if variant != config.variant {
            return Err(CheckpointError::Malformed(format!("variant tag {tag} disagrees with config")));
        }
        let vocab_len = r.count(8)?;
        let words = (0..vocab_len).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_id_order(words).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let epochs = r.count(24)?;
        let history = History {
            epochs: (0..epochs)
                .map(|_| {
                    Ok(EpochRecord { epoch: r.u64()? as usize, train_loss: r.f64()?, dev_accuracy: r.f64()? })
                })
                .collect::<Result<_>>()?,
        };

        let n_tensors = r.count(13)?;
        let mut stored = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
            if len.saturating_mul(8) > bytes.len() - r.pos {
                return Err(CheckpointError::Truncated);
            }
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            stored.push((name, dims, values));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes);
        }
        let num_classes = match stored.last() {
            Some((name, dims, _)) if name == "output.bias" && dims.len() == 1 => dims[0],
            _ => return Err(CheckpointError::Malformed("last tensor must be output.bias".into())),
        };
        let mut params = skeleton(&config, &vocab, num_classes)?;
        let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
        if stored.len() != expected.len() {
            return Err(CheckpointError::Malformed(format!("{} tensors, expected {}", stored.len(), expected.len())));
        }
        for ((exp_name, exp_dims), ((name, dims, values), (_, slot))) in
            expected.iter().zip(stored.iter().zip(params.tensors_mut()))
        {
            if name != exp_name || dims != exp_dims {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name} {dims:?}, expected {exp_name} {exp_dims:?}"
                )));
            }
            slot.copy_from_slice(values);
        }
        if params.channels.iter().any(|c| c.row(0).iter().any(|&x| x != 0.0)) {
            return Err(CheckpointError::Malformed("nonzero pad row".into()));
        }
        Ok(Classifier { config, vocab, params, history })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Zero-valued parameters with the shapes `config` and `vocab` imply.
fn skeleton(config: &TrainConfig, vocab: &Vocabulary, num_classes: usize) -> Result<ModelParams> {
    let trainable: &[bool] = match config.variant {
        Variant::Rand | Variant::NonStatic => &[true],
        Variant::Static => &[false],
        Variant::Multichannel => &[false, true],
    };
    let channels = trainable
        .iter()
        .map(|&t| EmbeddingChannel::zeros(vocab.len(), config.dim, t))
        .collect();
    let mut arch = config.architecture(num_classes);
    arch.init_range = 0.0;
    ModelParams::init(channels, &arch, 0).map_err(|e: NetError| CheckpointError::Malformed(e.to_string()))
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count of items each at least `min_size` bytes long; counts the
    /// remaining bytes cannot hold mean truncation.
    fn count(&mut self, min_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(min_size as u64) > remaining {
            return Err(CheckpointError::Truncated);
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.count(1)?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}
