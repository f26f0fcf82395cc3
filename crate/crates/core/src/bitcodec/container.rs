//! `.rbb` container: a fixed little-endian header followed by the hyper and
//! latent payloads.
//!
//! ```text
//! offset size field
//!      0    4 magic "RB01"
//!      4    1 model kind
//!      5    1 quality index
//!      6    2 K (latent channels)
//!      8    4 H (image height)
//!     12    4 W (image width)
//!     16    4 hyper payload length
//!     20    . hyper payload, then latent payload to end of file
//! ```
//!
//! Rate accounting (bpp) counts the whole file, header included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RB01";
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rbn,
    Unified,
    CompTeacher,
    Cascaded,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Rbn => 0,
            ModelKind::Unified => 1,
            ModelKind::CompTeacher => 2,
            ModelKind::Cascaded => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => ModelKind::Rbn,
            1 => ModelKind::Unified,
            2 => ModelKind::CompTeacher,
            3 => ModelKind::Cascaded,
            other => return Err(Error::Format(format!("unknown model kind {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub model_kind: ModelKind,
    pub quality: u8,
    pub k: u16,
    pub height: u32,
    pub width: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub hyper: Vec<u8>,
    pub latent: Vec<u8>,
}

impl Bitstream {
    pub fn serialize(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.hyper.len() + self.latent.len());
        out.extend_from_slice(MAGIC);
        out.push(h.model_kind.code());
        out.push(h.quality);
        out.extend_from_slice(&h.k.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&(self.hyper.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.hyper);
        out.extend_from_slice(&self.latent);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
                return Err(Error::Decode { offset: bytes.len(), reason: "truncated header".into() });
            }
            return Err(Error::Format("missing RB01 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Decode { offset: bytes.len(), reason: "truncated header".into() });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Header {
            model_kind: ModelKind::from_code(bytes[4])?,
            quality: bytes[5],
            k: u16::from_le_bytes([bytes[6], bytes[7]]),
            height: u32_at(8),
            width: u32_at(12),
        };
        let hyper_len = u32_at(16) as usize;
        let hyper_end = HEADER_LEN.checked_add(hyper_len).filter(|&e| e <= bytes.len()).ok_or(Error::Decode {
            offset: bytes.len(),
            reason: format!("hyper payload of {hyper_len} bytes is truncated"),
        })?;
        Ok(Bitstream { header, hyper: bytes[HEADER_LEN..hyper_end].to_vec(), latent: bytes[hyper_end..].to_vec() })
    }

    /// Size of the serialized file in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.hyper.len() + self.latent.len()
    }
}
