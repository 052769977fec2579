use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{OfdmConfig, PowerDelayProfile};
use crate::{Error, Result};

/// `|h|` below which [`equalize`] refuses to divide.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;
/// Magnitude floor used by [`equalize_regularized`].
pub const EQUALIZER_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelEstimator {
    /// Least squares at pilots, linear interpolation in between and linear
    /// extrapolation past the outermost pilots.
    LsInterp,
    /// Linear MMSE smoothing of the pilot LS estimates using the frequency
    /// correlation of a known power-delay profile.
    Mmse {
        profile: PowerDelayProfile,
        noise_var: f64,
    },
}

fn least_squares(pilot_obs: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if pilot_obs.len() != cfg.n_pilot() {
        return Err(Error::LengthMismatch {
            expected: cfg.n_pilot(),
            actual: pilot_obs.len(),
        });
    }
    if cfg.n_pilot() == 0 {
        return Err(Error::Config("channel estimation needs pilots".into()));
    }
    let pv = cfg.pilot_value();
    if pv.norm() == 0.0 {
        return Err(Error::Config("pilot symbol is zero".into()));
    }
    Ok(pilot_obs.iter().map(|y| y / pv).collect())
}

fn interpolate(positions: &[usize], values: &[Complex64], n_sub: usize) -> Vec<Complex64> {
    if values.len() == 1 {
        return vec![values[0]; n_sub];
    }
    let line = |i: usize, k: usize| {
        let (x0, x1) = (positions[i] as f64, positions[i + 1] as f64);
        let t = (k as f64 - x0) / (x1 - x0);
        values[i] + (values[i + 1] - values[i]) * t
    };
    let last = positions.len() - 2;
    let mut seg = 0;
    (0..n_sub)
        .map(|k| {
            while seg < last && k > positions[seg + 1] {
                seg += 1;
            }
            line(seg, k)
        })
        .collect()
}

/// Precomputed MMSE interpolation matrix for one layout, profile and
/// noise level.
#[derive(Debug, Clone)]
pub struct MmseFilter {
    n_pilot: usize,
    /// Row-major `n_sub x n_pilot`.
    weights: Vec<Complex64>,
}

impl MmseFilter {
    pub fn new(cfg: &OfdmConfig, profile: &PowerDelayProfile, noise_var: f64) -> Result<Self> {
        let pilots = cfg.pilot_positions();
        let np = pilots.len();
        if np == 0 {
            return Err(Error::Config("channel estimation needs pilots".into()));
        }
        let pv = cfg.pilot_value().norm_sqr();
        if pv == 0.0 {
            return Err(Error::Config("pilot symbol is zero".into()));
        }
        let n = cfg.n_sub();
        let reg = noise_var.max(0.0) / pv;
        let rpp = DMatrix::from_fn(np, np, |a, b| {
            let r = profile.correlation(pilots[a] as isize - pilots[b] as isize, n);
            if a == b {
                r + Complex64::new(reg + 1e-12, 0.0)
            } else {
                r
            }
        });
        let rhp = DMatrix::from_fn(n, np, |k, b| {
            profile.correlation(k as isize - pilots[b] as isize, n)
        });
        // W = R_hp (R_pp + reg I)^-1, solved as (R_pp + reg I)^T W^T = R_hp^T.
        let lu = rpp.transpose().lu();
        let wt = lu
            .solve(&rhp.transpose())
            .ok_or_else(|| Error::Config("pilot correlation matrix is singular".into()))?;
        let mut weights = Vec::with_capacity(n * np);
        for k in 0..n {
            for b in 0..np {
                weights.push(wt[(b, k)]);
            }
        }
        Ok(Self {
            n_pilot: np,
            weights,
        })
    }

    /// Estimate from least-squares pilot values.
    pub fn apply(&self, ls: &[Complex64]) -> Vec<Complex64> {
        self.weights
            .chunks_exact(self.n_pilot)
            .map(|row| row.iter().zip(ls).map(|(w, h)| w * h).sum())
            .collect()
    }
}

/// Noise-independent part of the MMSE filter for one layout and profile.
///
/// With `R_pp = U diag(lambda) U^H`, the filter at noise level `r` is
/// `R_hp U diag(1 / (lambda + r)) U^H`, so only the diagonal depends on
/// the noise.
#[derive(Debug, Clone)]
pub struct MmsePrior {
    n_pilot: usize,
    pilot_power: f64,
    /// `U^H`, row-major `n_pilot x n_pilot`.
    basis: Vec<Complex64>,
    eigenvalues: Vec<f64>,
    /// `R_hp U`, row-major `n_sub x n_pilot`.
    projection: Vec<Complex64>,
}

impl MmsePrior {
    pub fn new(cfg: &OfdmConfig, profile: &PowerDelayProfile) -> Result<Self> {
        let pilots = cfg.pilot_positions();
        let np = pilots.len();
        if np == 0 {
            return Err(Error::Config("channel estimation needs pilots".into()));
        }
        let pilot_power = cfg.pilot_value().norm_sqr();
        if pilot_power == 0.0 {
            return Err(Error::Config("pilot symbol is zero".into()));
        }
        let n = cfg.n_sub();
        let rpp = DMatrix::from_fn(np, np, |a, b| {
            profile.correlation(pilots[a] as isize - pilots[b] as isize, n)
        });
        let rhp = DMatrix::from_fn(n, np, |k, b| {
            profile.correlation(k as isize - pilots[b] as isize, n)
        });
        let eig = rpp.symmetric_eigen();
        let u = eig.eigenvectors;
        let g = rhp * &u;
        let uh = u.adjoint();
        Ok(Self {
            n_pilot: np,
            pilot_power,
            basis: (0..np).flat_map(|r| (0..np).map(move |c| (r, c))).map(|(r, c)| uh[(r, c)]).collect(),
            eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
            projection: (0..n).flat_map(|r| (0..np).map(move |c| (r, c))).map(|(r, c)| g[(r, c)]).collect(),
        })
    }

    /// MMSE estimate from least-squares pilot values at complex noise
    /// variance `noise_var`.
    pub fn apply(&self, ls: &[Complex64], noise_var: f64) -> Vec<Complex64> {
        let reg = noise_var.max(0.0) / self.pilot_power + 1e-12;
        let z: Vec<Complex64> = self
            .basis
            .chunks_exact(self.n_pilot)
            .zip(&self.eigenvalues)
            .map(|(row, &l)| row.iter().zip(ls).map(|(u, h)| u * h).sum::<Complex64>() / (l + reg))
            .collect();
        self.projection
            .chunks_exact(self.n_pilot)
            .map(|row| row.iter().zip(&z).map(|(g, v)| g * v).sum())
            .collect()
    }
}

/// Channel estimate over all `n_sub` bins from one symbol's pilot observations.
pub fn estimate_channel(
    pilot_obs: &[Complex64],
    cfg: &OfdmConfig,
    method: &ChannelEstimator,
) -> Result<Vec<Complex64>> {
    let ls = least_squares(pilot_obs, cfg)?;
    match method {
        ChannelEstimator::LsInterp => Ok(interpolate(cfg.pilot_positions(), &ls, cfg.n_sub())),
        ChannelEstimator::Mmse { profile, noise_var } => {
            Ok(MmseFilter::new(cfg, profile, *noise_var)?.apply(&ls))
        }
    }
}

/// One-tap zero-forcing equalizer.
pub fn equalize(data_obs: &[Complex64], h: &[Complex64]) -> Result<Vec<Complex64>> {
    if data_obs.len() != h.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            actual: data_obs.len(),
        });
    }
    data_obs
        .iter()
        .zip(h)
        .enumerate()
        .map(|(index, (y, hk))| {
            let magnitude = hk.norm();
            if magnitude < SINGULAR_THRESHOLD {
                Err(Error::SingularSubchannel { index, magnitude })
            } else {
                Ok(y / hk)
            }
        })
        .collect()
}

/// Zero-forcing with `|h|` clamped from below at [`EQUALIZER_FLOOR`].
pub fn equalize_regularized(data_obs: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    data_obs
        .iter()
        .zip(h)
        .map(|(y, hk)| {
            let magnitude = hk.norm();
            if magnitude >= EQUALIZER_FLOOR {
                y / hk
            } else if magnitude == 0.0 {
                y / EQUALIZER_FLOOR
            } else {
                y / (hk * (EQUALIZER_FLOOR / magnitude))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{
        apply_channel, make_sui5, ofdm_demodulate, ofdm_modulate, ChannelRealization,
        NoiseConfig, SUI5_DELAYS, SUI5_POWERS_DB,
    };

    fn pilot_obs(ch: &ChannelRealization, cfg: &OfdmConfig) -> Vec<Complex64> {
        cfg.pilot_positions()
            .iter()
            .map(|&p| ch.freq_response[p] * cfg.pilot_value())
            .collect()
    }

    fn sui5_profile() -> PowerDelayProfile {
        PowerDelayProfile::from_db(&SUI5_DELAYS, &SUI5_POWERS_DB)
    }

    #[test]
    fn flat_channel_is_exact_for_both_methods() {
        let cfg = OfdmConfig::default();
        let obs = vec![Complex64::new(1.0, 0.0); 16];
        let ls = estimate_channel(&obs, &cfg, &ChannelEstimator::LsInterp).unwrap();
        assert!(ls.iter().all(|h| *h == Complex64::new(1.0, 0.0)));
        let mmse = estimate_channel(
            &obs,
            &cfg,
            &ChannelEstimator::Mmse {
                profile: PowerDelayProfile::flat(),
                noise_var: 0.0,
            },
        )
        .unwrap();
        assert!(mmse.iter().all(|h| (h - Complex64::new(1.0, 0.0)).norm() < 1e-9));
    }

    #[test]
    fn ls_matches_truth_at_pilots() {
        let cfg = OfdmConfig::default();
        let ch = make_sui5(4, &cfg).unwrap();
        let est = estimate_channel(&pilot_obs(&ch, &cfg), &cfg, &ChannelEstimator::LsInterp).unwrap();
        for &p in cfg.pilot_positions() {
            assert!((est[p] - ch.freq_response[p]).norm() < 1e-9);
        }
    }

    #[test]
    fn interpolation_is_linear_between_and_beyond_pilots() {
        let positions = [2usize, 6];
        let values = [Complex64::new(1.0, 0.0), Complex64::new(3.0, 2.0)];
        let out = interpolate(&positions, &values, 10);
        for (k, v) in out.iter().enumerate() {
            let t = (k as f64 - 2.0) / 4.0;
            let expected = values[0] + (values[1] - values[0]) * t;
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn prior_matches_direct_filter() {
        let cfg = OfdmConfig::default();
        let prior = MmsePrior::new(&cfg, &sui5_profile()).unwrap();
        let ch = make_sui5(3, &cfg).unwrap();
        let ls: Vec<Complex64> = pilot_obs(&ch, &cfg)
            .iter()
            .enumerate()
            .map(|(i, y)| y + Complex64::new(0.01 * i as f64, -0.02))
            .collect();
        for noise_var in [1e-3, 0.1, 2.0] {
            let direct = MmseFilter::new(&cfg, &sui5_profile(), noise_var).unwrap().apply(&ls);
            let fast = prior.apply(&ls, noise_var);
            for (a, b) in direct.iter().zip(&fast) {
                assert!((a - b).norm() < 1e-7, "{noise_var}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mmse_beats_ls_on_sui5() {
        let cfg = OfdmConfig::default();
        let noise_var = 0.1;
        let filter = MmseFilter::new(&cfg, &sui5_profile(), noise_var).unwrap();
        let grid = vec![Complex64::new(0.0, 0.0); cfg.n_data()];
        let tx = ofdm_modulate(&grid, &cfg).unwrap();
        let (mut e_ls, mut e_mmse) = (0.0, 0.0);
        for seed in 0..100 {
            let ch = make_sui5(seed, &cfg).unwrap();
            let noise = NoiseConfig::new(10.0, seed + 1000)
                .with_reference(crate::phy::SignalPower::Nominal(1.0));
            let rx = apply_channel(&tx, &ch, &noise);
            let obs = ofdm_demodulate(&rx, &cfg).unwrap();
            let ls = estimate_channel(&obs.pilots, &cfg, &ChannelEstimator::LsInterp).unwrap();
            let ls_raw: Vec<Complex64> = obs.pilots.iter().map(|y| y / cfg.pilot_value()).collect();
            let mm = filter.apply(&ls_raw);
            for k in 0..cfg.n_sub() {
                e_ls += (ls[k] - ch.freq_response[k]).norm_sqr();
                e_mmse += (mm[k] - ch.freq_response[k]).norm_sqr();
            }
        }
        assert!(e_mmse < e_ls, "mmse {e_mmse} ls {e_ls}");
    }

    #[test]
    fn equalize_cases() {
        let h = vec![Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5)];
        let s = vec![Complex64::new(1.0, 1.0), Complex64::new(-0.5, 0.25)];
        let y: Vec<Complex64> = h.iter().zip(&s).map(|(a, b)| a * b).collect();
        let out = equalize(&y, &h).unwrap();
        for (a, b) in out.iter().zip(&s) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(
            equalize(&[Complex64::new(2.0, 0.0)], &[Complex64::new(2.0, 0.0)]).unwrap(),
            vec![Complex64::new(1.0, 0.0)]
        );
        assert!(matches!(
            equalize(&[Complex64::new(1.0, 0.0)], &[Complex64::new(1e-13, 0.0)]),
            Err(Error::SingularSubchannel { index: 0, .. })
        ));
        let r = equalize_regularized(&[Complex64::new(1.0, 0.0)], &[Complex64::new(0.0, 0.0)]);
        assert!(r[0].re.is_finite());
    }

    #[test]
    fn estimation_rejects_bad_inputs() {
        let cfg = OfdmConfig::default();
        assert!(estimate_channel(&[Complex64::new(1.0, 0.0); 3], &cfg, &ChannelEstimator::LsInterp).is_err());
        let zero_pilot =
            OfdmConfig::with_pilots(272, 72, vec![0, 17], Complex64::new(0.0, 0.0)).unwrap();
        assert!(estimate_channel(&[Complex64::new(1.0, 0.0); 2], &zero_pilot, &ChannelEstimator::LsInterp).is_err());
    }
}
