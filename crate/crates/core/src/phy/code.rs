use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel code applied to each semantic's bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelCode {
    #[default]
    Identity,
    /// Systematic Hamming(7,4): `d1 d2 d3 d4 p1 p2 p3`.
    Hamming74,
}

impl ChannelCode {
    /// Information bits per coded bit.
    pub fn rate(&self) -> f64 {
        match self {
            ChannelCode::Identity => 1.0,
            ChannelCode::Hamming74 => 4.0 / 7.0,
        }
    }

    /// Coded length for `n` information bits, padding included.
    pub fn coded_len(&self, n: usize) -> usize {
        match self {
            ChannelCode::Identity => n,
            ChannelCode::Hamming74 => n.div_ceil(4) * 7,
        }
    }

    /// Zero bits appended before encoding.
    pub fn padding(&self, n: usize) -> usize {
        match self {
            ChannelCode::Identity => 0,
            ChannelCode::Hamming74 => n.div_ceil(4) * 4 - n,
        }
    }
}

fn hamming_parity(d: [u8; 4]) -> [u8; 3] {
    [d[0] ^ d[1] ^ d[3], d[0] ^ d[2] ^ d[3], d[1] ^ d[2] ^ d[3]]
}

/// Syndrome (s1 s2 s3 as bits 2..0) to the codeword position in error.
fn syndrome_position(s: u8) -> Option<usize> {
    // Column of the parity-check matrix for each codeword position.
    const COLUMNS: [u8; 7] = [0b110, 0b101, 0b011, 0b111, 0b100, 0b010, 0b001];
    COLUMNS.iter().position(|&c| c == s)
}

pub fn channel_encode(bits: &[u8], code: ChannelCode) -> Vec<u8> {
    match code {
        ChannelCode::Identity => bits.to_vec(),
        ChannelCode::Hamming74 => {
            let mut out = Vec::with_capacity(code.coded_len(bits.len()));
            for chunk in bits.chunks(4) {
                let mut d = [0u8; 4];
                for (slot, &b) in d.iter_mut().zip(chunk) {
                    *slot = b & 1;
                }
                out.extend_from_slice(&d);
                out.extend_from_slice(&hamming_parity(d));
            }
            out
        }
    }
}

/// Decode and strip padding, returning `orig_len` information bits.
pub fn channel_decode(bits: &[u8], code: ChannelCode, orig_len: usize) -> Result<Vec<u8>> {
    let expected = code.coded_len(orig_len);
    if bits.len() != expected {
        if code == ChannelCode::Hamming74 && bits.len() % 7 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "Hamming(7,4) input length {} is not a multiple of 7",
                bits.len()
            )));
        }
        if code == ChannelCode::Identity && bits.len() >= orig_len {
            return Ok(bits[..orig_len].to_vec());
        }
        return Err(Error::LengthMismatch {
            expected,
            actual: bits.len(),
        });
    }
    match code {
        ChannelCode::Identity => Ok(bits.to_vec()),
        ChannelCode::Hamming74 => {
            let mut out = Vec::with_capacity(orig_len + 3);
            for block in bits.chunks_exact(7) {
                let mut w = [0u8; 7];
                for (slot, &b) in w.iter_mut().zip(block) {
                    *slot = b & 1;
                }
                let p = hamming_parity([w[0], w[1], w[2], w[3]]);
                let s = ((p[0] ^ w[4]) << 2) | ((p[1] ^ w[5]) << 1) | (p[2] ^ w[6]);
                if let Some(pos) = syndrome_position(s) {
                    w[pos] ^= 1;
                }
                out.extend_from_slice(&w[..4]);
            }
            out.truncate(orig_len);
            Ok(out)
        }
    }
}
