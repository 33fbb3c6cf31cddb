//! Transport envelopes and their bit-exact wire frame.
//!
//! ```text
//! +---------+---------+------+-----------+---------+---------+
//! | len u32 | version | kind | signature |   mac   | payload |
//! |   BE    |  0x01   |  u8  |  32 bytes | 32 bytes|   ...   |
//! +---------+---------+------+-----------+---------+---------+
//! ```
//!
//! `len` counts the bytes that follow it. The MAC is HMAC-SHA256 over
//! `version || kind || signature || payload` under the instance key.

use std::io::{self, Read};

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

use crate::error::{FrameError, TransportError};

pub const WIRE_VERSION: u8 = 0x01;
/// version + kind + signature + mac
pub const HEADER_LEN: usize = 1 + 1 + 32 + 32;
pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvelopeKind {
    Demand,
    Result,
    Control,
}

impl EnvelopeKind {
    pub fn tag(self) -> u8 {
        match self {
            EnvelopeKind::Demand => 0x01,
            EnvelopeKind::Result => 0x02,
            EnvelopeKind::Control => 0x03,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, FrameError> {
        match tag {
            0x01 => Ok(EnvelopeKind::Demand),
            0x02 => Ok(EnvelopeKind::Result),
            0x03 => Ok(EnvelopeKind::Control),
            other => Err(FrameError::BadKind(other)),
        }
    }
}

/// Pre-shared symmetric key of one runtime instance.
#[derive(Clone, PartialEq, Eq)]
pub struct MacKey(Vec<u8>);

impl MacKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// Derives a 32-byte key from a shared secret string.
    pub fn from_secret(secret: &str) -> Self {
        Self(Sha256::digest(secret.as_bytes()).to_vec())
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length")
    }
}

impl std::fmt::Debug for MacKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MacKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportEnvelope {
    pub version: u8,
    pub kind: EnvelopeKind,
    pub signature: [u8; 32],
    pub mac: [u8; 32],
    pub payload: Vec<u8>,
}

fn mac_input(mac: &mut HmacSha256, version: u8, kind: EnvelopeKind, sig: &[u8; 32], payload: &[u8]) {
    mac.update(&[version, kind.tag()]);
    mac.update(sig);
    mac.update(payload);
}

impl TransportEnvelope {
    /// Builds an envelope and computes its MAC.
    pub fn seal(kind: EnvelopeKind, signature: [u8; 32], payload: Vec<u8>, key: &MacKey) -> Self {
        let mut m = key.mac();
        mac_input(&mut m, WIRE_VERSION, kind, &signature, &payload);
        Self {
            version: WIRE_VERSION,
            kind,
            signature,
            mac: m.finalize().into_bytes().into(),
            payload,
        }
    }

    /// Constant-time MAC check.
    pub fn verify(&self, key: &MacKey) -> bool {
        let mut m = key.mac();
        mac_input(&mut m, self.version, self.kind, &self.signature, &self.payload);
        m.verify_slice(&self.mac).is_ok()
    }

    pub fn frame_len(&self) -> usize {
        4 + HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frame_len());
        out.extend_from_slice(&((HEADER_LEN + self.payload.len()) as u32).to_be_bytes());
        out.push(self.version);
        out.push(self.kind.tag());
        out.extend_from_slice(&self.signature);
        out.extend_from_slice(&self.mac);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one complete frame (including its length prefix).
    pub fn decode(frame: &[u8], max_payload: usize) -> Result<Self, FrameError> {
        if frame.len() < 4 {
            return Err(FrameError::Truncated);
        }
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        if len < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        if len - HEADER_LEN > max_payload {
            return Err(FrameError::TooLarge {
                size: len - HEADER_LEN,
                max: max_payload,
            });
        }
        let body = &frame[4..];
        if body.len() < len {
            return Err(FrameError::Truncated);
        }
        if body.len() > len {
            return Err(FrameError::Trailing(body.len() - len));
        }
        Self::decode_body(body)
    }

    fn decode_body(body: &[u8]) -> Result<Self, FrameError> {
        let version = body[0];
        if version != WIRE_VERSION {
            return Err(FrameError::BadVersion(version));
        }
        let kind = EnvelopeKind::from_tag(body[1])?;
        Ok(Self {
            version,
            kind,
            signature: body[2..34].try_into().unwrap(),
            mac: body[34..66].try_into().unwrap(),
            payload: body[66..].to_vec(),
        })
    }

    /// Reads exactly one frame from a stream.
    pub fn read_from<R: Read>(reader: &mut R, max_payload: usize) -> Result<Self, TransportError> {
        let mut len_buf = [0u8; 4];
        reader.read_exact(&mut len_buf).map_err(io_err)?;
        let len = u32::from_be_bytes(len_buf) as usize;
        if len < HEADER_LEN {
            return Err(FrameError::Truncated.into());
        }
        if len - HEADER_LEN > max_payload {
            return Err(FrameError::TooLarge {
                size: len - HEADER_LEN,
                max: max_payload,
            }
            .into());
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).map_err(io_err)?;
        Ok(Self::decode_body(&body)?)
    }
}

fn io_err(e: io::Error) -> TransportError {
    TransportError::Io(e.to_string())
}
