//! Square 64QAM with per-axis Gray mapping.
//!
//! The first three bits of a group select the in-phase level, the last three
//! the quadrature level. Per axis, the 3-bit label `g` maps to amplitude
//! `7 - 2 * gray_to_binary(g)`, so `000 -> +7`, `001 -> +5`, `011 -> +3`,
//! `010 -> +1`, `110 -> -1`, `111 -> -3`, `101 -> -5`, `100 -> -7`.
//! Points are scaled by `1/sqrt(42)` for unit average energy.

use num_complex::Complex64;

use crate::{Error, Result};

pub const BITS_PER_SYMBOL: usize = 6;

fn scale() -> f64 {
    1.0 / 42f64.sqrt()
}

fn gray_to_binary(g: u8) -> u8 {
    g ^ (g >> 1) ^ (g >> 2)
}

fn axis_amplitude(label: u8) -> f64 {
    7.0 - 2.0 * f64::from(gray_to_binary(label & 0b111))
}

fn label(bits: &[u8]) -> u8 {
    bits.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1))
}

/// Constellation point for a 6-bit label (I label in the high three bits).
pub fn qam64_point(symbol_label: u8) -> Complex64 {
    Complex64::new(
        axis_amplitude(symbol_label >> 3),
        axis_amplitude(symbol_label & 0b111),
    ) * scale()
}

/// Map bits to symbols. Callers pad to a multiple of six; a short tail is
/// zero-filled here.
pub fn qam64_modulate(bits: &[u8]) -> Vec<Complex64> {
    bits.chunks(BITS_PER_SYMBOL)
        .map(|chunk| {
            let mut group = [0u8; BITS_PER_SYMBOL];
            group[..chunk.len()].copy_from_slice(chunk);
            qam64_point(label(&group))
        })
        .collect()
}

/// Nearest level per axis; exact ties go to the smaller 3-bit label.
fn detect_axis(x: f64) -> u8 {
    let mut best = 0u8;
    let mut best_d = f64::INFINITY;
    for g in 0..8u8 {
        let d = (x - axis_amplitude(g) * scale()).abs();
        if d < best_d {
            best = g;
            best_d = d;
        }
    }
    best
}

/// Hard-decision demapping. Because the constellation is a product of two
/// 8-PAM axes, per-axis nearest level is the nearest constellation point.
pub fn qam64_demodulate(symbols: &[Complex64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(symbols.len() * BITS_PER_SYMBOL);
    for s in symbols {
        if !s.re.is_finite() {
            return Err(Error::NonFinite(s.re));
        }
        if !s.im.is_finite() {
            return Err(Error::NonFinite(s.im));
        }
        let i = detect_axis(s.re);
        let q = detect_axis(s.im);
        for k in (0..3).rev() {
            out.push((i >> k) & 1);
        }
        for k in (0..3).rev() {
            out.push((q >> k) & 1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_of(label: u8) -> Vec<u8> {
        (0..6).rev().map(|k| (label >> k) & 1).collect()
    }

    #[test]
    fn corner_for_all_zero_bits() {
        let s = qam64_modulate(&[0; 6]);
        assert_eq!(s.len(), 1);
        let expected = Complex64::new(7.0, 7.0) / 42f64.sqrt();
        assert!((s[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn unit_average_energy() {
        let e: f64 = (0..64u8).map(|l| qam64_point(l).norm_sqr()).sum::<f64>() / 64.0;
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let mut by_amp: Vec<(f64, u8)> = (0..8u8).map(|g| (axis_amplitude(g), g)).collect();
        by_amp.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in by_amp.windows(2) {
            assert_eq!((w[0].1 ^ w[1].1).count_ones(), 1);
            assert_eq!(w[1].0 - w[0].0, 2.0);
        }
    }

    #[test]
    fn noiseless_round_trip_all_points() {
        for l in 0..64u8 {
            let bits = bits_of(l);
            let sym = qam64_modulate(&bits);
            assert_eq!(qam64_demodulate(&sym).unwrap(), bits);
        }
    }

    #[test]
    fn small_perturbations_do_not_change_decisions() {
        let half_dmin = 1.0 / 42f64.sqrt();
        for l in 0..64u8 {
            let bits = bits_of(l);
            let p = qam64_point(l);
            for k in 0..16 {
                let angle = k as f64 * std::f64::consts::PI / 8.0;
                let offset = Complex64::from_polar(0.999 * half_dmin, angle);
                assert_eq!(qam64_demodulate(&[p + offset]).unwrap(), bits);
            }
        }
    }

    #[test]
    fn origin_breaks_ties_to_smaller_label() {
        // 010 (+1) and 110 (-1) are equidistant from 0.
        let bits = qam64_demodulate(&[Complex64::new(0.0, 0.0)]).unwrap();
        assert_eq!(bits, vec![0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn non_finite_symbols_are_rejected() {
        assert!(qam64_demodulate(&[Complex64::new(f64::NAN, 0.0)]).is_err());
    }
}
