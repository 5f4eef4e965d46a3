//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "HRLL"                     4 bytes magic
//! version                    u32 (PARAMETER_FORMAT_VERSION)
//! kind                       u8  (0 params, 1 dqn, 2 ppo, 3 rules, 4 random)
//! section count              u32
//!   name length              u16
//!   name                     UTF-8
//!   layer count              u32
//!   layer sizes              u32 x layer count
//!   activation               u8  (0 relu, 1 tanh)
//!   parameter count          u64
//!   parameters               f64 x parameter count, canonical order
//! counter count              u32
//!   name length              u16
//!   name                     UTF-8
//!   value                    u64
//! crc32                      u32 over every preceding byte
//! ```
//!
//! Magic and version are checked before the checksum so a file from another
//! format version is reported as such; anything shorter than the declared
//! content fails the checksum.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{Activation, NetworkSpec, ParameterSet, PARAMETER_FORMAT_VERSION};

pub const MAGIC: &[u8; 4] = b"HRLL";
const HEADER_LEN: usize = 4 + 4;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint has no section `{0}`")]
    MissingSection(String),
    #[error("checkpoint has no counter `{0}`")]
    MissingCounter(String),
    #[error("checkpoint holds a {found} agent, expected {expected}")]
    KindMismatch {
        expected: CheckpointKind,
        found: CheckpointKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Params,
    Dqn,
    Ppo,
    Rules,
    Random,
}

impl CheckpointKind {
    pub fn code(self) -> u8 {
        match self {
            CheckpointKind::Params => 0,
            CheckpointKind::Dqn => 1,
            CheckpointKind::Ppo => 2,
            CheckpointKind::Rules => 3,
            CheckpointKind::Random => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => CheckpointKind::Params,
            1 => CheckpointKind::Dqn,
            2 => CheckpointKind::Ppo,
            3 => CheckpointKind::Rules,
            4 => CheckpointKind::Random,
            _ => return None,
        })
    }
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CheckpointKind::Params => "params",
            CheckpointKind::Dqn => "dqn",
            CheckpointKind::Ppo => "ppo",
            CheckpointKind::Rules => "rules",
            CheckpointKind::Random => "random",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub name: String,
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub sections: Vec<NetworkSection>,
    pub counters: Vec<(String, u64)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind) -> Self {
        Self {
            kind,
            sections: Vec::new(),
            counters: Vec::new(),
        }
    }

    pub fn push_section(&mut self, name: &str, spec: &NetworkSpec, values: &[f64]) {
        self.sections.push(NetworkSection {
            name: name.to_owned(),
            spec: spec.clone(),
            params: ParameterSet::from_values(values.to_vec()),
        });
    }

    pub fn push_counter(&mut self, name: &str, value: u64) {
        self.counters.push((name.to_owned(), value));
    }

    pub fn section(&self, name: &str) -> Result<&NetworkSection, CheckpointError> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CheckpointError::MissingSection(name.to_owned()))
    }

    pub fn counter(&self, name: &str) -> Result<u64, CheckpointError> {
        self.counters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| CheckpointError::MissingCounter(name.to_owned()))
    }

    pub fn expect_kind(&self, expected: CheckpointKind) -> Result<(), CheckpointError> {
        if self.kind != expected {
            return Err(CheckpointError::KindMismatch {
                expected,
                found: self.kind,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&PARAMETER_FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for section in &self.sections {
            put_name(&mut out, &section.name);
            out.extend_from_slice(&(section.spec.layer_sizes.len() as u32).to_le_bytes());
            for &n in &section.spec.layer_sizes {
                out.extend_from_slice(&(n as u32).to_le_bytes());
            }
            out.push(section.spec.activation.code());
            out.extend_from_slice(&(section.params.len() as u64).to_le_bytes());
            for v in &section.params.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (name, value) in &self.counters {
            put_name(&mut out, name);
            out.extend_from_slice(&value.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != PARAMETER_FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: PARAMETER_FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut r = Reader {
            buf: body,
            pos: HEADER_LEN,
        };
        let kind_code = r.u8()?;
        let kind = CheckpointKind::from_code(kind_code)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown agent kind {kind_code}")))?;
        let n_sections = r.u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections.min(64));
        for _ in 0..n_sections {
            let name = r.name()?;
            let n_layers = r.u32()? as usize;
            if n_layers > 1024 {
                return Err(CheckpointError::Malformed(format!(
                    "section `{name}` declares {n_layers} layers"
                )));
            }
            let mut layer_sizes = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                layer_sizes.push(r.u32()? as usize);
            }
            let act_code = r.u8()?;
            let activation = Activation::from_code(act_code).ok_or_else(|| {
                CheckpointError::Malformed(format!("unknown activation code {act_code}"))
            })?;
            let spec = NetworkSpec::new(layer_sizes, activation)
                .map_err(|e| CheckpointError::Malformed(format!("section `{name}`: {e}")))?;
            let count = r.u64()? as usize;
            if count != spec.parameter_count() {
                return Err(CheckpointError::Malformed(format!(
                    "section `{name}` has {count} parameters, spec implies {}",
                    spec.parameter_count()
                )));
            }
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(r.f64()?);
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Malformed(format!(
                    "section `{name}` contains non-finite parameters"
                )));
            }
            sections.push(NetworkSection {
                name,
                spec,
                params: ParameterSet {
                    version,
                    values,
                },
            });
        }
        let n_counters = r.u32()? as usize;
        let mut counters = Vec::with_capacity(n_counters.min(64));
        for _ in 0..n_counters {
            let name = r.name()?;
            counters.push((name, r.u64()?));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            kind,
            sections,
            counters,
        })
    }

    /// Write via a temporary sibling file and rename, so readers never see a
    /// partially written checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    let bytes = name.as_bytes();
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String, CheckpointError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Malformed("section name is not UTF-8".into()))
    }
}

/// Save a single network under the section name `params`.
pub fn save_params(spec: &NetworkSpec, params: &ParameterSet, path: &Path) -> Result<(), CheckpointError> {
    let mut ck = Checkpoint::new(CheckpointKind::Params);
    ck.push_section("params", spec, &params.values);
    ck.save(path)
}

pub fn load_params(path: &Path) -> Result<(NetworkSpec, ParameterSet), CheckpointError> {
    let ck = Checkpoint::load(path)?;
    let section = ck.section("params")?;
    Ok((section.spec.clone(), section.params.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use proptest::prelude::*;

    fn sample() -> (NetworkSpec, ParameterSet) {
        let spec = NetworkSpec::mlp(25, &[16, 8], 5, Activation::Relu).unwrap();
        let params = init(&spec, 42).unwrap();
        (spec, params)
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hrll");
        let (spec, params) = sample();
        save_params(&spec, &params, &path).unwrap();
        let (spec2, params2) = load_params(&path).unwrap();
        assert_eq!(spec, spec2);
        assert!(params.bitwise_eq(&params2));
        assert_eq!(&fs::read(&path).unwrap()[..4], b"HRLL");
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let (spec, params) = sample();
        let mut ck = Checkpoint::new(CheckpointKind::Params);
        ck.push_section("params", &spec, &params.values);
        let bytes = ck.to_bytes();
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::Checksum { .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..6]),
            Err(CheckpointError::Truncated)
        ));
    }

    #[test]
    fn foreign_version_rejected() {
        let (spec, params) = sample();
        let mut ck = Checkpoint::new(CheckpointKind::Params);
        ck.push_section("params", &spec, &params.values);
        let mut bytes = ck.to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn bit_flip_fails_checksum() {
        let (spec, params) = sample();
        let mut ck = Checkpoint::new(CheckpointKind::Params);
        ck.push_section("params", &spec, &params.values);
        let mut bytes = ck.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Checksum { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn counters_and_kind() {
        let (spec, params) = sample();
        let mut ck = Checkpoint::new(CheckpointKind::Dqn);
        ck.push_section("q", &spec, &params.values);
        ck.push_section("q_target", &spec, &params.values);
        ck.push_counter("env_steps", 12345);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.counter("env_steps").unwrap(), 12345);
        assert!(back.counter("nope").is_err());
        assert!(back.expect_kind(CheckpointKind::Ppo).is_err());
        assert!(matches!(back.section("x"), Err(CheckpointError::MissingSection(_))));
    }

    #[test]
    fn layout_is_documented_byte_for_byte() {
        let spec = NetworkSpec::new(vec![1, 1], Activation::Tanh).unwrap();
        let mut ck = Checkpoint::new(CheckpointKind::Params);
        ck.push_section("p", &spec, &[2.0, -1.0]);
        let b = ck.to_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"HRLL");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(0);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'p');
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.push(1);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&2.0f64.to_le_bytes());
        expect.extend_from_slice(&(-1.0f64).to_le_bytes());
        expect.extend_from_slice(&0u32.to_le_bytes());
        let crc = crc32fast::hash(&expect);
        expect.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(b, expect);
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 9)) {
            let spec = NetworkSpec::new(vec![2, 3], Activation::Relu).unwrap();
            let mut ck = Checkpoint::new(CheckpointKind::Params);
            ck.push_section("params", &spec, &values);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            let got = &back.section("params").unwrap().params.values;
            prop_assert!(got.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
