use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::OfdmConfig;
use crate::{rng::rng_from, Error, Result};

/// SUI-5 tap delays in samples.
pub const SUI5_DELAYS: [usize; 3] = [0, 4, 10];
/// SUI-5 relative tap powers in dB.
pub const SUI5_POWERS_DB: [f64; 3] = [0.0, -5.0, -10.0];

/// Largest delay used by the path-count sweep.
const MULTIPATH_MAX_DELAY: usize = 10;
/// Power step between successive taps of the path-count profile, dB.
const MULTIPATH_DECAY_DB: f64 = -5.0;

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Expected tap powers (linear, summing to one) at integer sample delays.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    pub delays: Vec<usize>,
    pub powers: Vec<f64>,
}

impl PowerDelayProfile {
    pub fn from_db(delays: &[usize], powers_db: &[f64]) -> Self {
        let linear: Vec<f64> = powers_db.iter().map(|&p| db_to_linear(p)).collect();
        let total: f64 = linear.iter().sum();
        Self {
            delays: delays.to_vec(),
            powers: linear.iter().map(|p| p / total).collect(),
        }
    }

    pub fn flat() -> Self {
        Self {
            delays: vec![0],
            powers: vec![1.0],
        }
    }

    pub fn max_delay(&self) -> usize {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// Frequency correlation `E[H_a conj(H_b)]` for bin offset `a - b` on an
    /// `n_sub`-point grid.
    pub fn correlation(&self, offset: isize, n_sub: usize) -> Complex64 {
        self.delays
            .iter()
            .zip(&self.powers)
            .map(|(&d, &p)| {
                Complex64::from_polar(p, -2.0 * PI * offset as f64 * d as f64 / n_sub as f64)
            })
            .sum()
    }
}

/// One draw of a sparse tap-delay channel and its response on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub tap_delays: Vec<usize>,
    pub tap_gains: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    /// Statistics the realization was drawn from.
    pub profile: PowerDelayProfile,
}

impl ChannelRealization {
    pub fn new(
        tap_delays: Vec<usize>,
        tap_gains: Vec<Complex64>,
        n_sub: usize,
        profile: PowerDelayProfile,
    ) -> Self {
        let freq_response = (0..n_sub)
            .map(|k| {
                tap_delays
                    .iter()
                    .zip(&tap_gains)
                    .map(|(&d, &g)| {
                        g * Complex64::from_polar(1.0, -2.0 * PI * (k * d) as f64 / n_sub as f64)
                    })
                    .sum()
            })
            .collect();
        Self {
            tap_delays,
            tap_gains,
            freq_response,
            profile,
        }
    }

    /// Single unit tap at delay zero.
    pub fn identity(n_sub: usize) -> Self {
        Self::new(vec![0], vec![Complex64::new(1.0, 0.0)], n_sub, PowerDelayProfile::flat())
    }

    pub fn max_delay(&self) -> usize {
        self.tap_delays.iter().copied().max().unwrap_or(0)
    }

    pub fn total_power(&self) -> f64 {
        self.tap_gains.iter().map(|g| g.norm_sqr()).sum()
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn check_prefix(max_delay: usize, cfg: &OfdmConfig) -> Result<()> {
    if max_delay >= cfg.cp_len() {
        return Err(Error::Config(format!(
            "channel delay spread {max_delay} is not covered by the {}-sample prefix",
            cfg.cp_len()
        )));
    }
    Ok(())
}

/// SUI-5: Rayleigh taps at {0, 4, 10} samples with {0, -5, -10} dB powers,
/// scaled so the expected total power is one.
pub fn make_sui5(seed: u64, cfg: &OfdmConfig) -> Result<ChannelRealization> {
    let profile = PowerDelayProfile::from_db(&SUI5_DELAYS, &SUI5_POWERS_DB);
    check_prefix(profile.max_delay(), cfg)?;
    let mut rng = rng_from(seed);
    let gains = profile
        .powers
        .iter()
        .map(|&p| complex_gaussian(&mut rng, p))
        .collect();
    Ok(ChannelRealization::new(
        profile.delays.clone(),
        gains,
        cfg.n_sub(),
        profile,
    ))
}

/// Delays `round(k * 10 / (n - 1))` for the path-count sweep.
fn multipath_delays(n_paths: usize) -> Vec<usize> {
    if n_paths == 1 {
        return vec![0];
    }
    (0..n_paths)
        .map(|k| (k as f64 * MULTIPATH_MAX_DELAY as f64 / (n_paths - 1) as f64).round() as usize)
        .collect()
}

/// `n_paths` Rayleigh taps evenly spread over delays `[0, 10]`, each 5 dB
/// below the previous one. The draw is rescaled to unit total power, so the
/// sweep varies frequency selectivity without changing the received power.
pub fn make_multipath(n_paths: usize, seed: u64, cfg: &OfdmConfig) -> Result<ChannelRealization> {
    if n_paths == 0 || n_paths > MULTIPATH_MAX_DELAY + 1 {
        return Err(Error::Config(format!(
            "path count must be in 1..={}, got {n_paths}",
            MULTIPATH_MAX_DELAY + 1
        )));
    }
    let delays = multipath_delays(n_paths);
    let powers_db: Vec<f64> = (0..n_paths)
        .map(|k| MULTIPATH_DECAY_DB * k as f64)
        .collect();
    let profile = PowerDelayProfile::from_db(&delays, &powers_db);
    check_prefix(profile.max_delay(), cfg)?;
    let mut rng = rng_from(seed);
    let mut gains: Vec<Complex64> = profile
        .powers
        .iter()
        .map(|&p| complex_gaussian(&mut rng, p))
        .collect();
    let total: f64 = gains.iter().map(|g| g.norm_sqr()).sum();
    if total > 0.0 {
        let s = total.sqrt().recip();
        gains.iter_mut().for_each(|g| *g *= s);
    }
    Ok(ChannelRealization::new(delays, gains, cfg.n_sub(), profile))
}

/// Reference power against which the SNR is set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SignalPower {
    /// Mean power of the samples actually transmitted.
    #[default]
    Measured,
    /// A fixed per-sample power, e.g. the power of the loaded OFDM symbol.
    Nominal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
    pub reference: SignalPower,
}

impl NoiseConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self {
            snr_db,
            seed,
            reference: SignalPower::Measured,
        }
    }

    pub fn noiseless() -> Self {
        Self::new(f64::INFINITY, 0)
    }

    pub fn with_reference(mut self, reference: SignalPower) -> Self {
        self.reference = reference;
        self
    }
}

/// Complex noise variance giving `snr_db` against `signal_power`.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    signal_power / db_to_linear(snr_db)
}

/// Convolve with the tap-delay line (tail truncated) and add complex AWGN.
pub fn apply_channel(
    samples: &[Complex64],
    ch: &ChannelRealization,
    noise: &NoiseConfig,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); samples.len()];
    for (&d, &g) in ch.tap_delays.iter().zip(&ch.tap_gains) {
        for (y, &x) in out[d.min(samples.len())..].iter_mut().zip(samples) {
            *y += g * x;
        }
    }
    let power = match noise.reference {
        SignalPower::Measured if !samples.is_empty() => {
            samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / samples.len() as f64
        }
        SignalPower::Measured => 0.0,
        SignalPower::Nominal(p) => p,
    };
    let variance = noise_variance(power, noise.snr_db);
    if variance > 0.0 {
        let mut rng = rng_from(noise.seed);
        for y in out.iter_mut() {
            *y += complex_gaussian(&mut rng, variance);
        }
    }
    out
}

/// Binary symmetric channel.
pub fn bsc(bits: &[u8], p: f64, seed: u64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let mut rng = rng_from(seed);
    Ok(bits
        .iter()
        .map(|&b| if rng.random::<f64>() < p { b ^ 1 } else { b })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_single_tap_response() {
        let ch = ChannelRealization::new(
            vec![0, 4, 10],
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            272,
            PowerDelayProfile::flat(),
        );
        assert!(ch
            .freq_response
            .iter()
            .all(|h| (h - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn sui5_is_seeded() {
        let cfg = OfdmConfig::default();
        assert_eq!(make_sui5(9, &cfg).unwrap(), make_sui5(9, &cfg).unwrap());
        assert_ne!(make_sui5(9, &cfg).unwrap(), make_sui5(10, &cfg).unwrap());
        assert_eq!(make_sui5(9, &cfg).unwrap().tap_delays, vec![0, 4, 10]);
    }

    #[test]
    fn sui5_tap_powers_match_profile() {
        let cfg = OfdmConfig::default();
        let n = 10_000;
        let mut acc = [0.0; 3];
        for seed in 0..n {
            let ch = make_sui5(seed, &cfg).unwrap();
            for (a, g) in acc.iter_mut().zip(&ch.tap_gains) {
                *a += g.norm_sqr();
            }
        }
        let norm: f64 = SUI5_POWERS_DB.iter().map(|&p| db_to_linear(p)).sum();
        let expected_sum = acc.iter().sum::<f64>() / n as f64;
        assert!((expected_sum - 1.0).abs() < 0.03, "{expected_sum}");
        for (a, &db) in acc.iter().zip(&SUI5_POWERS_DB) {
            let measured_db = 10.0 * (a / n as f64 * norm).log10();
            assert!((measured_db - db).abs() < 0.2, "{measured_db} vs {db}");
        }
    }

    #[test]
    fn multipath_layout() {
        let cfg = OfdmConfig::default();
        let one = make_multipath(1, 3, &cfg).unwrap();
        assert_eq!(one.tap_delays, vec![0]);
        assert!(one.freq_response.iter().all(|h| (h.norm() - 1.0).abs() < 1e-12));
        assert_eq!(make_multipath(3, 3, &cfg).unwrap().tap_delays, vec![0, 5, 10]);
        assert_eq!(
            make_multipath(5, 3, &cfg).unwrap().tap_delays,
            vec![0, 3, 5, 8, 10]
        );
        assert!(make_multipath(0, 3, &cfg).is_err());
        assert!(make_multipath(12, 3, &cfg).is_err());
        let short = OfdmConfig::new(272, 16, 8).unwrap();
        assert!(make_multipath(3, 3, &short).is_err());
    }

    #[test]
    fn multipath_power_is_unit() {
        let cfg = OfdmConfig::default();
        let n = 10_000;
        let mean = (0..n)
            .map(|s| make_multipath(4, s, &cfg).unwrap().total_power())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn identity_noiseless_is_passthrough() {
        let x: Vec<Complex64> = (0..50).map(|k| Complex64::new(k as f64, -(k as f64))).collect();
        let y = apply_channel(&x, &ChannelRealization::identity(272), &NoiseConfig::noiseless());
        assert_eq!(x, y);
    }

    #[test]
    fn two_tap_impulse_response() {
        let ch = ChannelRealization::new(
            vec![0, 4],
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)],
            272,
            PowerDelayProfile::flat(),
        );
        let mut x = vec![Complex64::new(0.0, 0.0); 12];
        x[0] = Complex64::new(1.0, 0.0);
        let y = apply_channel(&x, &ch, &NoiseConfig::noiseless());
        for (k, v) in y.iter().enumerate() {
            let expected = match k {
                0 => 1.0,
                4 => 0.5,
                _ => 0.0,
            };
            assert_eq!(*v, Complex64::new(expected, 0.0));
        }
    }

    #[test]
    fn empirical_snr() {
        let mut rng = rng_from(1);
        let x: Vec<Complex64> = (0..100_000)
            .map(|_| complex_gaussian(&mut rng, 2.0))
            .collect();
        let y = apply_channel(&x, &ChannelRealization::identity(272), &NoiseConfig::new(10.0, 4));
        let ps: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let pn: f64 = x.iter().zip(&y).map(|(a, b)| (b - a).norm_sqr()).sum();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 10.0).abs() < 0.2, "{snr}");
    }

    #[test]
    fn nominal_reference_sets_variance() {
        let x = vec![Complex64::new(0.0, 0.0); 50_000];
        let noise = NoiseConfig::new(0.0, 2).with_reference(SignalPower::Nominal(0.5));
        let y = apply_channel(&x, &ChannelRealization::identity(8), &noise);
        let pn = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        assert!((pn - 0.5).abs() < 0.02);
    }

    #[test]
    fn bsc_cases() {
        let bits: Vec<u8> = (0..100).map(|k| (k % 2) as u8).collect();
        assert_eq!(bsc(&bits, 0.0, 1).unwrap(), bits);
        let flipped: Vec<u8> = bits.iter().map(|b| b ^ 1).collect();
        assert_eq!(bsc(&bits, 1.0, 1).unwrap(), flipped);
        assert!(bsc(&bits, 1.5, 1).is_err());
        assert!(bsc(&bits, -0.1, 1).is_err());
    }

    #[test]
    fn bsc_flip_rate() {
        let bits = vec![0u8; 1_000_000];
        let out = bsc(&bits, 0.1, 77).unwrap();
        let rate = out.iter().map(|&b| b as f64).sum::<f64>() / bits.len() as f64;
        assert!((rate - 0.1).abs() < 0.001, "{rate}");
    }
}
