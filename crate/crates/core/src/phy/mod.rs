//! Digital physical layer.
//!
//! Bits go through a channel code and Gray-mapped 64QAM onto OFDM
//! subcarriers with a cyclic prefix and evenly spaced pilots. The channel is
//! a sparse tap-delay line with AWGN; the receiver estimates the channel from
//! pilots and equalizes per subcarrier. A binary symmetric channel is
//! provided for bit-level experiments.

mod channel;
mod code;
mod estimate;
mod ofdm;
mod qam;

pub use channel::{
    apply_channel, bsc, make_multipath, make_sui5, noise_variance, ChannelRealization,
    NoiseConfig, PowerDelayProfile, SignalPower, SUI5_DELAYS, SUI5_POWERS_DB,
};
pub use code::{channel_decode, channel_encode, ChannelCode};
pub use estimate::{
    equalize, equalize_regularized, estimate_channel, ChannelEstimator, MmseFilter, MmsePrior,
    EQUALIZER_FLOOR, SINGULAR_THRESHOLD,
};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, Dft, OfdmConfig, OfdmObservation};
pub use qam::{qam64_demodulate, qam64_modulate, qam64_point, BITS_PER_SYMBOL};

pub use num_complex::Complex64;
