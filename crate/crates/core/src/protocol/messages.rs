//! Payloads of ciphertext batches and results.
//!
//! ```text
//! batch:  u32 layer | u32 position | u32 count | ciphertexts...
//! result: u8 kind (0 ack, 1 step) | u32 layer | u32 position | u64 pbs
//!         | f64 wall seconds | u64 cached ciphertexts | u32 count
//!         | ciphertexts...
//! ```
//!
//! A batch at position 0 starts a new sequence for its layer.

use pqllama_fhe::serialize::Reader;
use pqllama_fhe::{CryptoParams, LweCiphertext};

use super::frame::{Frame, MsgType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CiphertextBatch {
    pub layer: u32,
    pub position: u32,
    pub ciphertexts: Vec<LweCiphertext>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub layer: u32,
    pub position: u32,
    pub pbs: u64,
    pub wall_s: f64,
    /// Ciphertexts the server holds in this session's key/value cache.
    pub cached: u64,
    pub ciphertexts: Vec<LweCiphertext>,
}

fn expect(frame: &Frame, t: MsgType) -> Result<()> {
    if let Some(m) = frame.error_message() {
        return Err(Error::Protocol(format!("peer reported: {m}")));
    }
    if frame.msg_type != t {
        return Err(Error::Protocol(format!("expected {t:?}, got {:?}", frame.msg_type)));
    }
    Ok(())
}

fn read_cts(r: &mut Reader<'_>, params: &CryptoParams, key_id: u64) -> Result<Vec<LweCiphertext>> {
    let n = r.u32()? as usize;
    if n > r.remaining() / LweCiphertext::encoded_len(params.lwe_dim) {
        return Err(Error::Protocol("ciphertext count exceeds payload".into()));
    }
    let cts = (0..n).map(|_| LweCiphertext::read_from(r, params, key_id)).collect::<pqllama_fhe::Result<_>>()?;
    r.finish()?;
    Ok(cts)
}

fn put_cts(out: &mut Vec<u8>, cts: &[LweCiphertext]) {
    out.extend_from_slice(&(cts.len() as u32).to_le_bytes());
    for c in cts {
        c.write_to(out);
    }
}

impl CiphertextBatch {
    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::new();
        p.extend_from_slice(&self.layer.to_le_bytes());
        p.extend_from_slice(&self.position.to_le_bytes());
        put_cts(&mut p, &self.ciphertexts);
        Frame::new(MsgType::CiphertextBatch, p)
    }

    pub fn from_frame(frame: &Frame, params: &CryptoParams, key_id: u64) -> Result<Self> {
        expect(frame, MsgType::CiphertextBatch)?;
        let mut r = Reader::new(&frame.payload);
        let layer = r.u32()?;
        let position = r.u32()?;
        Ok(Self { layer, position, ciphertexts: read_cts(&mut r, params, key_id)? })
    }
}

/// Acknowledgement of an installed key or plan.
pub fn ack() -> Frame {
    Frame::new(MsgType::Result, vec![0])
}

pub fn expect_ack(frame: &Frame) -> Result<()> {
    expect(frame, MsgType::Result)?;
    if frame.payload != [0] {
        return Err(Error::Protocol("expected an acknowledgement".into()));
    }
    Ok(())
}

impl StepResult {
    pub fn to_frame(&self) -> Frame {
        let mut p = vec![1u8];
        p.extend_from_slice(&self.layer.to_le_bytes());
        p.extend_from_slice(&self.position.to_le_bytes());
        p.extend_from_slice(&self.pbs.to_le_bytes());
        p.extend_from_slice(&self.wall_s.to_le_bytes());
        p.extend_from_slice(&self.cached.to_le_bytes());
        put_cts(&mut p, &self.ciphertexts);
        Frame::new(MsgType::Result, p)
    }

    pub fn from_frame(frame: &Frame, params: &CryptoParams, key_id: u64) -> Result<Self> {
        expect(frame, MsgType::Result)?;
        let mut r = Reader::new(&frame.payload);
        if r.u8()? != 1 {
            return Err(Error::Protocol("expected a step result".into()));
        }
        let layer = r.u32()?;
        let position = r.u32()?;
        let pbs = r.u64()?;
        let wall_s = r.f64()?;
        let cached = r.u64()?;
        Ok(Self { layer, position, pbs, wall_s, cached, ciphertexts: read_cts(&mut r, params, key_id)? })
    }
}
