//! Non-subtractive dithered uniform scalar quantization.
//!
//! A `b`-bit quantizer over the dynamic range `[-gamma, gamma]` has
//! `M = 2^b` cells of width `step = 2 gamma / M` and reconstructs to the cell
//! midpoints. Inputs outside the range saturate to the outermost level.
//! The dithered path adds a uniform sample from `[-step/2, step/2]` before
//! quantizing and never subtracts it at the receiver.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{rng, Error, Result};

/// Largest supported bit width. Indices are carried in a `u64`.
pub const MAX_BITS: u32 = 63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    gamma: f64,
    bits: u32,
}

impl QuantizerSpec {
    pub fn new(gamma: f64, bits: u32) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidQuantizer(format!(
                "dynamic range must be positive and finite, got {gamma}"
            )));
        }
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::InvalidQuantizer(format!(
                "bit width must be in 1..={MAX_BITS}, got {bits}"
            )));
        }
        Ok(Self { gamma, bits })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of reconstruction levels, `2^bits`.
    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    /// Cell width `2 gamma / 2^bits`.
    pub fn step(&self) -> f64 {
        2.0 * self.gamma / self.levels() as f64
    }

    /// Reconstruction level for cell `index`, `-gamma + step (index + 0.5)`.
    pub fn level(&self, index: u64) -> Result<f64> {
        if index >= self.levels() {
            return Err(Error::IndexOutOfRange {
                index,
                bits: self.bits,
            });
        }
        Ok(-self.gamma + self.step() * (index as f64 + 0.5))
    }

    /// Cell index of `y`.
    ///
    /// Cells are closed on both ends, so a boundary belongs to two cells; it
    /// resolves to the lower one. `+gamma` lands in the top cell and anything
    /// beyond the range saturates to the outermost cell.
    pub fn index_of(&self, y: f64) -> Result<u64> {
        if !y.is_finite() {
            return Err(Error::NonFinite(y));
        }
        let top = self.levels() - 1;
        if y > self.gamma {
            return Ok(top);
        }
        if y < -self.gamma {
            return Ok(0);
        }
        let upper = ((y + self.gamma) / self.step()).ceil();
        if upper <= 1.0 {
            return Ok(0);
        }
        Ok(((upper - 1.0) as u64).min(top))
    }
}

/// Plain (undithered) uniform quantizer `q(y)`.
pub fn uniform_quantize(y: f64, spec: &QuantizerSpec) -> Result<f64> {
    let index = spec.index_of(y)?;
    spec.level(index)
}

/// A source of dither samples.
pub trait Dither {
    /// Draw one sample from `[-step/2, step/2]` for `spec`.
    fn draw(&mut self, spec: &QuantizerSpec) -> f64;
}

/// Seeded i.i.d. uniform dither.
///
/// Each draw consumes one uniform variate and scales it by the current
/// quantizer's step, so the sample stream is determined by the seed alone.
#[derive(Debug, Clone)]
pub struct DitherSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl DitherSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: rng::rng_from(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Dither for DitherSource {
    fn draw(&mut self, spec: &QuantizerSpec) -> f64 {
        let u: f64 = self.rng.random();
        (u - 0.5) * spec.step()
    }
}

/// Dither that always returns the same offset. Used to pin the dither in tests.
#[derive(Debug, Clone, Copy)]
pub struct FixedDither(pub f64);

impl Dither for FixedDither {
    fn draw(&mut self, _spec: &QuantizerSpec) -> f64 {
        self.0
    }
}

/// Quantized sample: cell index and its reconstruction level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub index: u64,
    pub value: f64,
}

/// Quantize `y + z` for a fresh dither draw `z`. The dither is not removed.
pub fn dithered_quantize<D: Dither + ?Sized>(
    y: f64,
    spec: &QuantizerSpec,
    dither: &mut D,
) -> Result<Quantized> {
    if !y.is_finite() {
        return Err(Error::NonFinite(y));
    }
    let z = dither.draw(spec);
    let index = spec.index_of(y + z)?;
    Ok(Quantized {
        index,
        value: spec.level(index)?,
    })
}

/// Big-endian fixed-width binary of `index`, exactly `spec.bits()` long.
pub fn encode_bits(index: u64, spec: &QuantizerSpec) -> Result<Vec<u8>> {
    if index >= spec.levels() {
        return Err(Error::IndexOutOfRange {
            index,
            bits: spec.bits(),
        });
    }
    Ok((0..spec.bits())
        .rev()
        .map(|k| ((index >> k) & 1) as u8)
        .collect())
}

/// Inverse of [`encode_bits`].
pub fn decode_index(bits: &[u8], spec: &QuantizerSpec) -> Result<u64> {
    if bits.len() != spec.bits() as usize {
        return Err(Error::LengthMismatch {
            expected: spec.bits() as usize,
            actual: bits.len(),
        });
    }
    Ok(bits
        .iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b & 1)))
}

/// Reconstruction level for a received index bitstring.
pub fn dequantize(bits: &[u8], spec: &QuantizerSpec) -> Result<f64> {
    spec.level(decode_index(bits, spec)?)
}
