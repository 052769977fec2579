use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Orthonormal DFT pair of a fixed size: both directions scale by `1/sqrt(n)`.
#[derive(Clone)]
pub struct Dft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft").field("n", &self.n).finish()
    }
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|x| *x *= s);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|x| *x *= s);
    }
}

/// OFDM symbol layout: subcarrier count, cyclic prefix, pilot placement.
#[derive(Debug, Clone)]
pub struct OfdmConfig {
    n_sub: usize,
    cp_len: usize,
    pilot_value: Complex64,
    pilot_positions: Vec<usize>,
    data_positions: Vec<usize>,
    dft: Dft,
}

impl OfdmConfig {
    /// `n_pilot` pilots at `floor(k * n_sub / n_pilot)`, unit pilot symbol.
    pub fn new(n_sub: usize, n_pilot: usize, cp_len: usize) -> Result<Self> {
        if n_pilot > n_sub {
            return Err(Error::Config(format!(
                "{n_pilot} pilots do not fit in {n_sub} subcarriers"
            )));
        }
        let positions = (0..n_pilot).map(|k| k * n_sub / n_pilot.max(1)).collect();
        Self::with_pilots(n_sub, cp_len, positions, Complex64::new(1.0, 0.0))
    }

    pub fn with_pilots(
        n_sub: usize,
        cp_len: usize,
        mut pilot_positions: Vec<usize>,
        pilot_value: Complex64,
    ) -> Result<Self> {
        if n_sub == 0 {
            return Err(Error::Config("OFDM needs at least one subcarrier".into()));
        }
        if cp_len >= n_sub {
            return Err(Error::Config(format!(
                "cyclic prefix {cp_len} must be shorter than the symbol ({n_sub})"
            )));
        }
        pilot_positions.sort_unstable();
        pilot_positions.dedup();
        if pilot_positions.iter().any(|&p| p >= n_sub) {
            return Err(Error::Config("pilot position outside the grid".into()));
        }
        let data_positions = (0..n_sub)
            .filter(|k| pilot_positions.binary_search(k).is_err())
            .collect();
        Ok(Self {
            n_sub,
            cp_len,
            pilot_value,
            pilot_positions,
            data_positions,
            dft: Dft::new(n_sub),
        })
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn n_data(&self) -> usize {
        self.data_positions.len()
    }

    pub fn n_pilot(&self) -> usize {
        self.pilot_positions.len()
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn pilot_value(&self) -> Complex64 {
        self.pilot_value
    }

    pub fn pilot_positions(&self) -> &[usize] {
        &self.pilot_positions
    }

    pub fn data_positions(&self) -> &[usize] {
        &self.data_positions
    }

    /// Samples per OFDM symbol including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_sub + self.cp_len
    }

    pub fn dft(&self) -> &Dft {
        &self.dft
    }
}

impl Default for OfdmConfig {
    /// 272 subcarriers, 16 pilots every 17th bin, 72-sample prefix.
    fn default() -> Self {
        Self::new(272, 16, 72).expect("default OFDM layout is valid")
    }
}

/// Received subcarrier values split into data and pilot bins.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmObservation {
    pub data: Vec<Complex64>,
    pub pilots: Vec<Complex64>,
}

/// Build one OFDM symbol: pilots and data onto the grid, inverse DFT,
/// cyclic prefix in front.
pub fn ofdm_modulate(grid: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if grid.len() != cfg.n_data() {
        return Err(Error::LengthMismatch {
            expected: cfg.n_data(),
            actual: grid.len(),
        });
    }
    let mut bins = vec![Complex64::new(0.0, 0.0); cfg.n_sub];
    for &p in &cfg.pilot_positions {
        bins[p] = cfg.pilot_value;
    }
    for (&k, &s) in cfg.data_positions.iter().zip(grid) {
        bins[k] = s;
    }
    cfg.dft.inverse(&mut bins);
    let mut out = Vec::with_capacity(cfg.symbol_len());
    out.extend_from_slice(&bins[cfg.n_sub - cfg.cp_len..]);
    out.extend_from_slice(&bins);
    Ok(out)
}

/// Drop the prefix, forward DFT, split pilot and data bins.
pub fn ofdm_demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<OfdmObservation> {
    if samples.len() != cfg.symbol_len() {
        return Err(Error::LengthMismatch {
            expected: cfg.symbol_len(),
            actual: samples.len(),
        });
    }
    let mut bins = samples[cfg.cp_len..].to_vec();
    cfg.dft.forward(&mut bins);
    Ok(OfdmObservation {
        data: cfg.data_positions.iter().map(|&k| bins[k]).collect(),
        pilots: cfg.pilot_positions.iter().map(|&k| bins[k]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grid(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn default_layout() {
        let cfg = OfdmConfig::default();
        assert_eq!(cfg.n_sub(), 272);
        assert_eq!(cfg.n_pilot(), 16);
        assert_eq!(cfg.n_data(), 256);
        assert_eq!(cfg.cp_len(), 72);
        let expected: Vec<usize> = (0..16).map(|k| 17 * k).collect();
        assert_eq!(cfg.pilot_positions(), &expected[..]);
    }

    #[test]
    fn zero_grid_zero_signal() {
        let cfg = OfdmConfig::with_pilots(64, 16, vec![], Complex64::new(1.0, 0.0)).unwrap();
        let tx = ofdm_modulate(&vec![Complex64::new(0.0, 0.0); 64], &cfg).unwrap();
        assert_eq!(tx.len(), 80);
        assert!(tx.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn single_tone_is_constant() {
        let cfg = OfdmConfig::with_pilots(272, 72, vec![], Complex64::new(1.0, 0.0)).unwrap();
        let mut grid = vec![Complex64::new(0.0, 0.0); 272];
        grid[0] = Complex64::new(1.0, 0.0);
        let tx = ofdm_modulate(&grid, &cfg).unwrap();
        let expected = 1.0 / 272f64.sqrt();
        for x in &tx[72..] {
            assert!((x - Complex64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn prefix_copies_tail() {
        let cfg = OfdmConfig::default();
        let tx = ofdm_modulate(&random_grid(256, 5), &cfg).unwrap();
        assert_eq!(&tx[..72], &tx[272..]);
    }

    #[test]
    fn wrong_lengths_are_errors() {
        let cfg = OfdmConfig::default();
        assert!(ofdm_modulate(&random_grid(255, 1), &cfg).is_err());
        assert!(ofdm_demodulate(&random_grid(343, 1), &cfg).is_err());
        assert!(OfdmConfig::new(64, 4, 64).is_err());
    }

    proptest! {
        #[test]
        fn loopback_and_energy(seed in any::<u64>()) {
            let cfg = OfdmConfig::default();
            let grid = random_grid(cfg.n_data(), seed);
            let tx = ofdm_modulate(&grid, &cfg).unwrap();
            let obs = ofdm_demodulate(&tx, &cfg).unwrap();
            for (a, b) in grid.iter().zip(&obs.data) {
                prop_assert!((a - b).norm() < 1e-9);
            }
            for p in &obs.pilots {
                prop_assert!((p - cfg.pilot_value()).norm() < 1e-9);
            }
            let grid_energy: f64 = grid.iter().map(|x| x.norm_sqr()).sum::<f64>() + cfg.n_pilot() as f64;
            let time_energy: f64 = tx[cfg.cp_len()..].iter().map(|x| x.norm_sqr()).sum();
            prop_assert!((grid_energy - time_energy).abs() < 1e-9);
        }
    }
}
