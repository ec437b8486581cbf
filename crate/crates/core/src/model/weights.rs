//! Binary weight files.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic        4 bytes   "RCSW"
//! version      u32       1
//! mode         u8        0 = train, 1 = deployed
//! entry_count  u32
//! manifest     entry_count × { name_len u16, name (UTF-8), rank u8, dims u32 × rank }
//! data         for each entry in manifest order: prod(dims) × f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::graph::{build_skeleton, Model};
use crate::reparam::{Mode, Reparameterize};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"RCSW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Parsed header of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHeader {
    pub version: u32,
    pub mode: Mode,
    pub manifest: Vec<ManifestEntry>,
}

pub fn encode_weights(m: &Model) -> Vec<u8> {
    let params = m.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.push(match m.mode() {
        Mode::Train => 0,
        Mode::Deployed => 1,
    });
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, dims, _) in &params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, _, data) in &params {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, only {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode_header(reader: &mut Reader<'_>) -> Result<WeightHeader> {
    let magic: [u8; 4] = reader.take(4, "magic")?.try_into().unwrap();
    if magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = reader.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: WEIGHTS_VERSION,
        });
    }
    let mode = match reader.u8("mode flag")? {
        0 => Mode::Train,
        1 => Mode::Deployed,
        other => {
            return Err(Error::ManifestMismatch {
                node: "<header>".into(),
                detail: format!("unknown mode flag {other}"),
            })
        }
    };
    let count = reader.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = reader.u16("name length")? as usize;
        let name = String::from_utf8(reader.take(len, "entry name")?.to_vec()).map_err(|_| Error::ManifestMismatch {
            node: format!("<entry {i}>"),
            detail: "name is not valid UTF-8".into(),
        })?;
        let rank = reader.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| reader.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        manifest.push(ManifestEntry { name, dims });
    }
    Ok(WeightHeader {
        version,
        mode,
        manifest,
    })
}

pub fn read_header(bytes: &[u8]) -> Result<WeightHeader> {
    decode_header(&mut Reader { bytes, pos: 0 })
}

/// Rebuilds a model for `cfg` from encoded weights. The stored manifest
/// must match the model structure entry for entry.
pub fn decode_weights(cfg: &ModelConfig, bytes: &[u8]) -> Result<Model> {
    let mut reader = Reader { bytes, pos: 0 };
    let header = decode_header(&mut reader)?;
    let mut model = build_skeleton(cfg, 0)?;
    if header.mode == Mode::Deployed {
        model = model.to_deployed()?;
    }
    let expected: Vec<ManifestEntry> = model
        .named_params()
        .into_iter()
        .map(|(name, dims, _)| ManifestEntry { name, dims })
        .collect();
    for (i, exp) in expected.iter().enumerate() {
        let Some(got) = header.manifest.get(i) else {
            return Err(Error::ManifestMismatch {
                node: exp.name.clone(),
                detail: "entry missing from file".into(),
            });
        };
        if got.name != exp.name {
            return Err(Error::ManifestMismatch {
                node: got.name.clone(),
                detail: format!("expected entry `{}` at position {i}", exp.name),
            });
        }
        if got.dims != exp.dims {
            return Err(Error::ManifestMismatch {
                node: got.name.clone(),
                detail: format!("shape {:?} does not match model shape {:?}", got.dims, exp.dims),
            });
        }
    }
    if let Some(extra) = header.manifest.get(expected.len()) {
        return Err(Error::ManifestMismatch {
            node: extra.name.clone(),
            detail: "unexpected extra entry".into(),
        });
    }

    let mut payload = Vec::with_capacity(expected.len());
    for entry in &header.manifest {
        let raw = reader.take(4 * entry.numel(), &format!("data of `{}`", entry.name))?;
        payload.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect::<Vec<f32>>(),
        );
    }
    if reader.pos != bytes.len() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - reader.pos
        )));
    }
    let mut next = payload.into_iter();
    model.visit_params_mut(&mut |_, _, dst| {
        dst.copy_from_slice(&next.next().expect("manifest checked"));
    });
    Ok(model)
}

pub fn save_weights(m: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(m))?;
    Ok(())
}

pub fn load_weights(cfg: &ModelConfig, path: &Path) -> Result<Model> {
    decode_weights(cfg, &fs::read(path)?)
}
