//! Wire frames:
//!
//! ```text
//! "PQC3" | u32 version | u8 type | u64 payload length | payload | u32 CRC32
//! ```
//!
//! All integers are little-endian and the checksum covers the payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"PQC3";
pub const PROTOCOL_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 8;
/// Environment variable overriding [`DEFAULT_MAX_PAYLOAD`].
pub const MAX_PAYLOAD_ENV: &str = "PQLLAMA_MAX_PAYLOAD";
pub const DEFAULT_MAX_PAYLOAD: u64 = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    EvalKey = 1,
    Plan = 2,
    CiphertextBatch = 3,
    Result = 4,
    Error = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::EvalKey,
            2 => Self::Plan,
            3 => Self::CiphertextBatch,
            4 => Self::Result,
            5 => Self::Error,
            _ => return Err(Error::Protocol(format!("unknown message type {v}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

/// Largest accepted payload, from the environment or the default.
pub fn max_payload() -> u64 {
    std::env::var(MAX_PAYLOAD_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_MAX_PAYLOAD)
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::new(MsgType::Error, message.into().into_bytes())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 4);
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&crc32fast::hash(&self.payload).to_le_bytes());
        out
    }

    /// Decode exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let frame = Self::read_from(&mut cursor, u64::MAX)?;
        if !cursor.is_empty() {
            return Err(Error::Protocol(format!("{} trailing bytes after frame", cursor.len())));
        }
        Ok(frame)
    }

    /// Read one frame from a stream, refusing payloads above `max`.
    pub fn read_from(r: &mut impl Read, max: u64) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        read_exact(r, &mut header)?;
        if &header[..4] != FRAME_MAGIC {
            return Err(Error::Protocol("bad frame magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!("protocol version {version}, expected {PROTOCOL_VERSION}")));
        }
        let msg_type = MsgType::from_u8(header[8])?;
        let len = u64::from_le_bytes(header[9..17].try_into().unwrap());
        if len > max {
            return Err(Error::Protocol(format!("payload of {len} bytes exceeds the limit of {max}")));
        }
        let mut payload = Vec::new();
        r.take(len).read_to_end(&mut payload)?;
        if payload.len() as u64 != len {
            return Err(Error::Protocol("truncated payload".into()));
        }
        let mut crc = [0u8; 4];
        read_exact(r, &mut crc)?;
        if u32::from_le_bytes(crc) != crc32fast::hash(&payload) {
            return Err(Error::Protocol("payload checksum mismatch".into()));
        }
        Ok(Self { msg_type, payload })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// The message of an error frame.
    pub fn error_message(&self) -> Option<String> {
        (self.msg_type == MsgType::Error).then(|| String::from_utf8_lossy(&self.payload).into_owned())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Protocol("truncated frame".into()),
        _ => Error::Io(e),
    })
}
