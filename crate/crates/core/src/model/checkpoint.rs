//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "NMTCKPT\0"
//! version      u32
//! config       u32 length + UTF-8 "key=value\n" lines (includes regime)
//! vocab hash   u32 length + ASCII hex
//! params       u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u32 rank, rank × u64 extents
//!                extents-product × f64
//! trailer      4 bytes  "END\0"
//! ```

use std::fmt;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;
use std::str::FromStr;

use super::{ModelConfig, Seq2Seq};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NMTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END\0";

/// Training regime that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Freshly initialized, never trained.
    Init,
    /// Cross-entropy with teacher forcing.
    Ce,
    /// Scheduled sampling.
    Ss,
    /// Self-critical policy gradient.
    Rl,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Init => "init",
            Regime::Ce => "ce",
            Regime::Ss => "ss",
            Regime::Rl => "rl",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "init" => Ok(Regime::Init),
            "ce" => Ok(Regime::Ce),
            "ss" => Ok(Regime::Ss),
            "rl" => Ok(Regime::Rl),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

/// A model plus the metadata needed to use it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Seq2Seq<S>,
    pub regime: Regime,
    pub vocab_hash: String,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(model: Seq2Seq<S>, regime: Regime, vocab_hash: impl Into<String>) -> Self {
        Self {
            model,
            regime,
            vocab_hash: vocab_hash.into(),
        }
    }
}

fn config_text(c: &ModelConfig, regime: Regime) -> String {
    format!(
        "vocab_size={}\nembed_dim={}\nhidden_dim={}\nencoder_layers={}\nattention_dim={}\n\
         image_feature_dim={}\ndropout_rate={:?}\nseed={}\nmax_src_len={}\nmax_tgt_len={}\nregime={}\n",
        c.vocab_size,
        c.embed_dim,
        c.hidden_dim,
        c.encoder_layers,
        c.attention_dim,
        c.image_feature_dim,
        c.dropout_rate,
        c.seed,
        c.max_src_len,
        c.max_tgt_len,
        regime
    )
}

fn parse_config(text: &str) -> Result<(ModelConfig, Regime)> {
    let mut c = ModelConfig::new(0);
    let mut regime = None;
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        let uint = || {
            v.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad value for {k}: {v:?}")))
        };
        match k {
            "vocab_size" => c.vocab_size = uint()?,
            "embed_dim" => c.embed_dim = uint()?,
            "hidden_dim" => c.hidden_dim = uint()?,
            "encoder_layers" => c.encoder_layers = uint()?,
            "attention_dim" => c.attention_dim = uint()?,
            "image_feature_dim" => c.image_feature_dim = uint()?,
            "max_src_len" => c.max_src_len = uint()?,
            "max_tgt_len" => c.max_tgt_len = uint()?,
            "dropout_rate" => {
                c.dropout_rate = v
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad dropout_rate {v:?}")))?
            }
            "seed" => {
                c.seed = v
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad seed {v:?}")))?
            }
            "regime" => regime = Some(v.parse()?),
            other => return Err(Error::Checkpoint(format!("unknown config key {other:?}"))),
        }
        seen += 1;
    }
    let regime = regime.ok_or_else(|| Error::Checkpoint("config block lacks regime".into()))?;
    if seen != 11 {
        return Err(Error::Checkpoint(format!(
            "config block has {seen} keys, expected 11"
        )));
    }
    Ok((c, regime))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes to bytes. Values are widened to `f64` on disk.
pub fn encode_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>) -> Vec<u8> {
    let params = ckpt.model.params();
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &config_text(ckpt.model.config(), ckpt.regime));
    put_str(&mut out, &ckpt.vocab_hash);
    put_u32(&mut out, params.len() as u32);
    for (_, name, t) in params.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    out.extend_from_slice(TRAILER);
    out
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let mut buf = vec![0u8; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.0.get_ref().len() - self.0.position() as usize
    }
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    let mut r = Reader(Cursor::new(bytes));
    if &r.bytes::<8>("magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let (config, regime) = parse_config(&r.string("config block")?)?;
    let vocab_hash = r.string("vocab hash")?;
    let count = r.u32("parameter count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string("parameter name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has rank {rank}"
            )));
        }
        let shape = (0..rank)
            .map(|_| r.u64("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()));
        let Some(n) = n else {
            return Err(Error::Checkpoint(format!(
                "truncated data for parameter {name}"
            )));
        };
        let data = (0..n)
            .map(|_| r.u64("value").map(|b| S::of(f64::from_bits(b))))
            .collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        if params.id_of(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.add(name, tensor);
    }
    if &r.bytes::<4>("trailer")? != TRAILER {
        return Err(Error::Checkpoint("missing end marker".into()));
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    let model = Seq2Seq::from_params(config, params)?;
    Ok(Checkpoint {
        model,
        regime,
        vocab_hash,
    })
}

pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.as_ref().display())),
        other => other,
    })
}
