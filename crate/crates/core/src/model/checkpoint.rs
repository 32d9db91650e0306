//! Checkpoint serialization.
//!
//! Layout, all multi-byte integers little-endian:
//!   magic "CDNZ" | version u32 | representation u8 |
//!   config length u32 | config JSON |
//!   array count u32 | per array:
//!     name length u32 | name bytes | rank u32 | dims u64... |
//!     row-major f64 data |
//!   CRC-32 u32 over everything preceding it.

use super::{ModelConfig, ModelError, Parameters, Representation};

const MAGIC: &[u8; 4] = b"CDNZ";
const VERSION: u32 = 1;

/// A loaded checkpoint: trained parameters plus the config and token
/// representation they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub representation: Representation,
    pub params: Parameters,
}

pub fn save_checkpoint(
    params: &Parameters,
    config: &ModelConfig,
    representation: Representation,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match representation {
        Representation::Messages => 0,
        Representation::Pianoroll => 1,
    });
    let config_json = serde_json::to_vec(config).expect("config serializes");
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);

    let arrays = params.arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, dims, data) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::CorruptCheckpoint("truncated".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        let s = self.take(8)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    if bytes.len() < 4 + 4 + 4 {
        return Err(ModelError::CorruptCheckpoint("too short".to_string()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(ModelError::CorruptCheckpoint("checksum mismatch".to_string()));
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(ModelError::CorruptCheckpoint("bad magic".to_string()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ModelError::VersionMismatch(version));
    }
    let representation = match cur.take(1)?[0] {
        0 => Representation::Messages,
        1 => Representation::Pianoroll,
        b => {
            return Err(ModelError::CorruptCheckpoint(format!(
                "unknown representation tag {b}"
            )))
        }
    };
    let config_len = cur.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| ModelError::CorruptCheckpoint(format!("config: {e}")))?;

    let mut params = Parameters::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .arrays()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let count = cur.u32()? as usize;
    if count != expected.len() {
        return Err(ModelError::CorruptCheckpoint(format!(
            "expected {} arrays, found {count}",
            expected.len()
        )));
    }
    let mut slices = params.arrays_mut();
    for (idx, (exp_name, exp_dims)) in expected.iter().enumerate() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ModelError::CorruptCheckpoint("non-UTF-8 array name".to_string()))?;
        if name != exp_name {
            return Err(ModelError::CorruptCheckpoint(format!(
                "array {idx}: expected {exp_name:?}, found {name:?}"
            )));
        }
        let rank = cur.u32()? as usize;
        if rank != exp_dims.len() {
            return Err(ModelError::CorruptCheckpoint(format!(
                "{name}: rank {rank} != {}",
                exp_dims.len()
            )));
        }
        let mut len = 1usize;
        for exp_d in exp_dims {
            let d = cur.u64()? as usize;
            if d != *exp_d {
                return Err(ModelError::CorruptCheckpoint(format!(
                    "{name}: dim {d} != {exp_d}"
                )));
            }
            len *= d;
        }
        let raw = cur.take(len * 8)?;
        for (v, chunk) in slices[idx].iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != body.len() {
        return Err(ModelError::CorruptCheckpoint("trailing bytes".to_string()));
    }
    drop(slices);
    Ok(Checkpoint {
        config,
        representation,
        params,
    })
}
