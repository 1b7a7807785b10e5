//! Wire codec for channel frames.
//!
//! Layout (little-endian): 4-byte magic `KGD1`, 1-byte message type, 8-byte
//! step index, 2-byte payload dimension, then `dim` IEEE-754 doubles.
//! Total length is `15 + 8 * dim` bytes and round-trips bit-exactly.

use std::io::{Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"KGD1";
pub const HEADER_LEN: usize = 15;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("truncated frame: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("payload too long for the wire format: {0} > 65535")]
    PayloadTooLong(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Message types carried on the lockstep wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Y = 0x01,
    U = 0x02,
    Ren = 0x03,
    R0p = 0x04,
    Beta = 0x05,
    Gamma = 0x06,
    V = 0x07,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Result<Self, CodecError> {
        Ok(match b {
            0x01 => MsgType::Y,
            0x02 => MsgType::U,
            0x03 => MsgType::Ren,
            0x04 => MsgType::R0p,
            0x05 => MsgType::Beta,
            0x06 => MsgType::Gamma,
            0x07 => MsgType::V,
            other => return Err(CodecError::UnknownMsgType(other)),
        })
    }
}

/// One lockstep frame: a typed vector sample at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub msg_type: MsgType,
    pub k: u64,
    pub payload: Vec<f64>,
}

impl ChannelFrame {
    pub fn new(msg_type: MsgType, k: u64, payload: Vec<f64>) -> Self {
        Self {
            msg_type,
            k,
            payload,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if self.payload.len() > u16::MAX as usize {
            return Err(CodecError::PayloadTooLong(self.payload.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated {
                needed: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[0..4]);
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let msg_type = MsgType::from_byte(bytes[4])?;
        let k = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let dim = u16::from_le_bytes(bytes[13..15].try_into().unwrap()) as usize;
        let needed = HEADER_LEN + 8 * dim;
        if bytes.len() != needed {
            return Err(CodecError::Truncated {
                needed,
                got: bytes.len(),
            });
        }
        let mut payload = Vec::with_capacity(dim);
        for i in 0..dim {
            let off = HEADER_LEN + 8 * i;
            payload.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        Ok(Self {
            msg_type,
            k,
            payload,
        })
    }
}

/// Writes one frame to a byte stream.
pub fn write_frame(w: &mut impl Write, frame: &ChannelFrame) -> Result<(), CodecError> {
    let bytes = frame.encode()?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads one frame from a byte stream; `Ok(None)` on a clean EOF at a frame
/// boundary (the shutdown signal of the lockstep protocol).
pub fn read_frame(r: &mut impl Read) -> Result<Option<ChannelFrame>, CodecError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0usize;
    while filled < HEADER_LEN {
        let n = r.read(&mut header[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(CodecError::Truncated {
                needed: HEADER_LEN,
                got: filled,
            });
        }
        filled += n;
    }
    let dim = u16::from_le_bytes(header[13..15].try_into().unwrap()) as usize;
    let mut rest = vec![0u8; 8 * dim];
    r.read_exact(&mut rest)?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + rest.len());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&rest);
    Ok(Some(ChannelFrame::decode(&bytes)?))
}
