//! Versioned model checkpoints: header, network config, step counter, RNG
//! state, then every named tensor in the FTNS1 format.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::config::NetworkConfig;
use crate::model::network::{build_network, Model};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "OFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("truncated while reading {0}")]
    Truncated(String),
    #[error("format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing")]
    MissingTensor(String),
    #[error("malformed {0}")]
    Malformed(String),
}

fn ck(e: CheckpointError) -> Error {
    Error::Checkpoint(e)
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let cfg = model.config.to_text();
    let seed: String = model.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let tensors = model.params.tensors();
    // writes into a Vec cannot fail
    let _ = write!(
        out,
        "{CHECKPOINT_MAGIC}\nversion {CHECKPOINT_VERSION}\nstep {}\nrng {seed} {} {}\nconfig {}\n{cfg}tensors {}\n",
        model.step,
        model.rng.get_stream(),
        model.rng.get_word_pos(),
        cfg.len(),
        tensors.len()
    );
    for (name, _, t) in tensors {
        let _ = writeln!(out, "tensor {name}");
        let _ = t.write_to(&mut out);
    }
    out
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn line(r: &mut impl BufRead, what: &str) -> Result<String> {
    let mut s = String::new();
    match r.read_line(&mut s) {
        Ok(0) => Err(ck(CheckpointError::Truncated(what.into()))),
        Ok(_) if !s.ends_with('\n') => Err(ck(CheckpointError::Truncated(what.into()))),
        Ok(_) => Ok(s.trim_end_matches('\n').to_string()),
        Err(_) => Err(ck(CheckpointError::Malformed(what.into()))),
    }
}

fn field<'a>(l: &'a str, key: &str) -> Result<&'a str> {
    l.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| ck(CheckpointError::Malformed(format!("{key} line"))))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| ck(CheckpointError::Malformed(what.into())))
}

/// Parses a checkpoint. With `expected` set, tensors are checked against a
/// network of that configuration instead of the one stored in the file.
pub fn from_bytes(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<Model> {
    let mut r = Cursor::new(bytes);
    let magic = line(&mut r, "magic").map_err(|_| ck(CheckpointError::BadMagic))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ck(CheckpointError::BadMagic));
    }
    let version: u32 = num(field(&line(&mut r, "version")?, "version")?, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ck(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        }));
    }
    let step: u64 = num(field(&line(&mut r, "step")?, "step")?, "step")?;
    let rng_line = line(&mut r, "rng")?;
    let parts: Vec<&str> = field(&rng_line, "rng")?.split(' ').collect();
    let [seed_hex, stream, word_pos] = parts[..] else {
        return Err(ck(CheckpointError::Malformed("rng line".into())));
    };
    if seed_hex.len() != 64 {
        return Err(ck(CheckpointError::Malformed("rng seed".into())));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| ck(CheckpointError::Malformed("rng seed".into())))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(num(stream, "rng stream")?);
    rng.set_word_pos(num(word_pos, "rng position")?);

    let cfg_len: usize = num(field(&line(&mut r, "config")?, "config")?, "config length")?;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes).map_err(|_| ck(CheckpointError::Truncated("config".into())))?;
    let stored = NetworkConfig::from_text(
        std::str::from_utf8(&cfg_bytes).map_err(|_| ck(CheckpointError::Malformed("config text".into())))?,
    )?;
    let config = expected.cloned().unwrap_or(stored);
    let mut model = build_network(&config, 0)?;
    model.step = step;
    model.rng = rng;

    let count: usize = num(field(&line(&mut r, "tensors")?, "tensors")?, "tensor count")?;
    let mut slots = model.params.tensors_mut();
    let mut filled = vec![false; slots.len()];
    for _ in 0..count {
        let l = line(&mut r, "tensor name")?;
        let name = field(&l, "tensor")?.to_string();
        let t = Tensor::read_from(&mut r).map_err(|e| match e {
            Error::TensorFile(m) if m.contains("truncated") => ck(CheckpointError::Truncated(format!("tensor {name}"))),
            other => other,
        })?;
        let k = slots
            .iter()
            .position(|(n, _, _)| *n == name)
            .ok_or_else(|| ck(CheckpointError::Malformed(format!("unexpected tensor {name}"))))?;
        if slots[k].2.shape() != t.shape() {
            return Err(ck(CheckpointError::ShapeMismatch {
                name,
                expected: slots[k].2.shape().to_vec(),
                found: t.shape().to_vec(),
            }));
        }
        *slots[k].2 = t;
        filled[k] = true;
    }
    if let Some(k) = filled.iter().position(|f| !f) {
        return Err(ck(CheckpointError::MissingTensor(slots[k].0.clone())));
    }
    drop(slots);
    model.params.validate()?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, None)
}

/// Loads into a network built from `expected`, failing on the first tensor
/// whose stored shape disagrees.
pub fn load_checkpoint_as(path: &Path, expected: &NetworkConfig) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, Some(expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::model::config::BlockSpec;

    fn small() -> Model {
        let mut c = NetworkConfig::toy();
        c.input_size = 8;
        c.blocks = vec![BlockSpec::new(2, 16, 1, 2)];
        c.hidden_size = 4;
        c.bridge_dim = 4;
        let mut m = build_network(&c, 3).unwrap();
        m.step = 41;
        let _: u64 = m.rng.gen();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let back = from_bytes(&to_bytes(&m), None).unwrap();
        assert_eq!(back, m);
        let mut a = m.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = small();
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }

    #[test]
    fn bad_magic() {
        let err = from_bytes(b"PK\x03\x04 zip file", None).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncation_detected_everywhere() {
        let bytes = to_bytes(&small());
        for cut in [10, 30, 80, bytes.len() / 2, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut], None).unwrap_err();
            assert!(
                matches!(err, Error::Checkpoint(CheckpointError::Truncated(_))),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn version_mismatch() {
        let mut b2 = to_bytes(&small());
        let at = b2.windows(9).position(|w| w == b"version 1").unwrap();
        b2[at + 8] = b'9';
        let err = from_bytes(&b2, None).unwrap_err();
        assert!(matches!(
            err,
            Error::Checkpoint(CheckpointError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn wrong_profile_names_first_tensor() {
        let bytes = to_bytes(&small());
        let err = from_bytes(&bytes, Some(&NetworkConfig::toy())).unwrap_err();
        match err {
            Error::Checkpoint(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "blocks.0.expand.weight"),
            other => panic!("{other}"),
        }
    }
}
