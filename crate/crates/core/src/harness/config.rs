//! Experiment configuration, read from TOML.
//!
//! Every key is optional; missing keys take the desk-profile defaults.
//!
//! ```toml
//! seed = 7
//! budget = 192
//! allocators = ["eam", "rbam", "ram"]
//! trials = 200
//!
//! [channel]
//! model = "sui5"      # sui5 | multipath | bsc | ideal
//! snr_db = 10.0
//!
//! [sweep]
//! axis = "snr_db"     # snr_db | n_paths | n_pilots | budget | bsc_p
//! values = [-4.0, 0.0, 4.0, 8.0, 12.0]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dppo::DppoHyper;
use crate::phy::{ChannelCode, OfdmConfig};
use crate::semcodec::{BlobSpec, CodecShape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocator {
    Dppo,
    DppoSimplified,
    Eam,
    Rbam,
    Ram,
    AnalogBaseline,
}

impl Allocator {
    pub const ALL: [Allocator; 6] = [
        Allocator::Dppo,
        Allocator::DppoSimplified,
        Allocator::Eam,
        Allocator::Rbam,
        Allocator::Ram,
        Allocator::AnalogBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Allocator::Dppo => "dppo",
            Allocator::DppoSimplified => "dppo_simplified",
            Allocator::Eam => "eam",
            Allocator::Rbam => "rbam",
            Allocator::Ram => "ram",
            Allocator::AnalogBaseline => "analog_baseline",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, Allocator::Dppo | Allocator::DppoSimplified)
    }
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Allocator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Allocator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown allocator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Sui5,
    Multipath,
    Bsc,
    Ideal,
}

impl ChannelModel {
    /// Whether the model carries a waveform through OFDM.
    pub fn is_waveform(self) -> bool {
        matches!(self, ChannelModel::Sui5 | ChannelModel::Multipath)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    /// Taps of the `multipath` model.
    pub n_paths: usize,
    /// Crossover probability of the `bsc` model.
    pub p: f64,
    /// Mean symbol energy per occupied subcarrier over noise per subcarrier.
    pub snr_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            model: ChannelModel::Sui5,
            n_paths: 5,
            p: 0.03,
            snr_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    /// True channel response.
    Perfect,
    LsInterp,
    Mmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmSettings {
    pub n_sub: usize,
    pub n_pilot: usize,
    pub cp_len: usize,
    pub estimator: Estimation,
}

impl Default for OfdmSettings {
    fn default() -> Self {
        Self {
            n_sub: 272,
            n_pilot: 16,
            cp_len: 72,
            estimator: Estimation::Mmse,
        }
    }
}

impl OfdmSettings {
    pub fn layout(&self) -> Result<OfdmConfig> {
        OfdmConfig::new(self.n_sub, self.n_pilot, self.cp_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeConfig {
    pub variant: ChannelCode,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            variant: ChannelCode::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub c: usize,
    pub w: usize,
    pub h: usize,
    pub d: usize,
    pub n_classes: usize,
    pub hidden: usize,
    pub dataset_size: usize,
    pub train_size: usize,
    pub noise_std: f64,
    pub mean_radius: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training inputs averaged for task relevance.
    pub str_samples: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            c: 64,
            w: 2,
            h: 2,
            d: 32,
            n_classes: 10,
            hidden: 32,
            dataset_size: 2000,
            train_size: 1600,
            noise_std: 1.0,
            mean_radius: 4.0,
            epochs: 200,
            lr: 0.5,
            seed: 1,
            str_samples: 400,
        }
    }
}

impl CodecConfig {
    pub fn shape(&self) -> CodecShape {
        CodecShape {
            c: self.c,
            w: self.w,
            h: self.h,
            d: self.d,
            n_classes: self.n_classes,
            hidden: self.hidden,
        }
    }

    pub fn blobs(&self) -> BlobSpec {
        BlobSpec {
            noise_std: self.noise_std,
            mean_radius: self.mean_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    NPaths,
    NPilots,
    Budget,
    BscP,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::NPaths => "n_paths",
            SweepAxis::NPilots => "n_pilots",
            SweepAxis::Budget => "budget",
            SweepAxis::BscP => "bsc_p",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::SnrDb,
            SweepAxis::NPaths,
            SweepAxis::NPilots,
            SweepAxis::Budget,
            SweepAxis::BscP,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::SnrDb,
            values: vec![-4.0, 0.0, 4.0, 8.0, 12.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for episode randomness.
    pub seed: u64,
    /// Total quantization bits per input.
    pub budget: u32,
    /// Quantizer dynamic range.
    pub gamma: f64,
    /// Allocator used by single-allocator commands.
    pub allocator: Allocator,
    /// Allocators run by sweeps and comparisons.
    pub allocators: Vec<Allocator>,
    pub trials: usize,
    pub output: PathBuf,
    pub knowledge_base: PathBuf,
    pub codec: CodecConfig,
    pub ofdm: OfdmSettings,
    pub channel: ChannelConfig,
    pub code: CodeConfig,
    pub dppo: DppoHyper,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: 192,
            gamma: 1.0,
            allocator: Allocator::Dppo,
            allocators: vec![
                Allocator::Dppo,
                Allocator::DppoSimplified,
                Allocator::Eam,
                Allocator::Rbam,
                Allocator::Ram,
                Allocator::AnalogBaseline,
            ],
            trials: 200,
            output: PathBuf::from("out"),
            knowledge_base: PathBuf::from("knowledge_base.slnk"),
            codec: CodecConfig::default(),
            ofdm: OfdmSettings::default(),
            channel: ChannelConfig::default(),
            code: CodeConfig::default(),
            dppo: DppoHyper::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::default(),
            Profile::Full => {
                let mut cfg = Self::default();
                cfg.codec.c = 512;
                cfg.codec.str_samples = 200;
                cfg.budget = 1300;
                cfg.trials = 50;
                cfg.sweep = SweepConfig {
                    axis: SweepAxis::Budget,
                    values: vec![800.0, 900.0, 1000.0, 1100.0, 1200.0, 1300.0],
                };
                cfg
            }
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys in `text` override the matching keys of `base`, tables merged
    /// recursively.
    pub fn overlay_toml_str(base: &Self, text: &str) -> Result<Self> {
        fn merge(into: &mut toml::Table, from: toml::Table) {
            for (k, v) in from {
                match (into.get_mut(&k), v) {
                    (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
                    (_, v) => {
                        into.insert(k, v);
                    }
                }
            }
        }
        let over: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut table: toml::Table = base
            .to_toml_string()
            .parse()
            .expect("serialized configuration parses");
        merge(&mut table, over);
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(&Self::default(), path)
    }

    /// Reads `path` on top of `base`.
    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::overlay_toml_str(base, &text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.codec;
        if c.c == 0 || c.w == 0 || c.h == 0 || c.d == 0 || c.n_classes < 2 || c.hidden == 0 {
            return Err(Error::Config("codec dimensions must be positive".into()));
        }
        if (self.budget as usize) < c.c {
            return Err(Error::Config(format!(
                "budget {} is below one bit for each of {} semantics",
                self.budget, c.c
            )));
        }
        if c.dataset_size < c.n_classes || c.train_size == 0 || c.train_size >= c.dataset_size {
            return Err(Error::Config(
                "dataset needs at least one sample per class and a nonempty test split".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        self.ofdm.layout().map_err(|e| Error::Config(e.to_string()))?;
        if self.ofdm.n_pilot == 0 && self.ofdm.estimator != Estimation::Perfect {
            return Err(Error::Config("pilot-based estimation needs pilots".into()));
        }
        let ch = self.channel;
        if ch.model == ChannelModel::Multipath && !(1..=11).contains(&ch.n_paths) {
            return Err(Error::Config(format!("n_paths {} outside 1..=11", ch.n_paths)));
        }
        if !(0.0..=1.0).contains(&ch.p) {
            return Err(Error::Config(format!("crossover probability {} outside [0, 1]", ch.p)));
        }
        if ch.snr_db.is_nan() || ch.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid SNR {}", ch.snr_db)));
        }
        self.dppo.validate()?;
        Ok(())
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::Config(format!("{} needs whole numbers, got {v}", axis.name())));
            }
            Ok(v as usize)
        };
        match axis {
            SweepAxis::SnrDb => cfg.channel.snr_db = value,
            SweepAxis::NPaths => {
                cfg.channel.model = ChannelModel::Multipath;
                cfg.channel.n_paths = count(value)?;
            }
            SweepAxis::NPilots => cfg.ofdm.n_pilot = count(value)?,
            SweepAxis::Budget => cfg.budget = count(value)? as u32,
            SweepAxis::BscP => {
                cfg.channel.model = ChannelModel::Bsc;
                cfg.channel.p = value;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::profile(Profile::Full).validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml() {
        let cfg = ExperimentConfig::from_toml_str(
            "budget = 128\nallocators = [\"eam\", \"ram\"]\n[channel]\nmodel = \"multipath\"\nn_paths = 3\n[codec]\nc = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.budget, 128);
        assert_eq!(cfg.allocators, vec![Allocator::Eam, Allocator::Ram]);
        assert_eq!(cfg.channel.model, ChannelModel::Multipath);
        assert_eq!(cfg.codec.c, 16);
        assert_eq!(cfg.codec.w, 2);
    }

    #[test]
    fn overlay_keeps_base_values() {
        let base = ExperimentConfig::profile(Profile::Full);
        let cfg = ExperimentConfig::overlay_toml_str(&base, "trials = 7\n[codec]\nd = 16\n").unwrap();
        assert_eq!((cfg.trials, cfg.codec.d, cfg.codec.c), (7, 16, 512));
        assert_eq!(cfg.sweep, base.sweep);
        assert!(ExperimentConfig::overlay_toml_str(&base, "[codec]\nbogus = 1").unwrap_err().is_config());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "budget = 10",
            "bogus = 1",
            "[channel]\nmodel = \"multipath\"\nn_paths = 12",
            "[channel]\np = 1.5",
            "allocators = [\"nope\"]",
            "[ofdm]\ncp_len = 300",
        ] {
            let err = ExperimentConfig::from_toml_str(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn axis_overrides() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.with_axis(SweepAxis::NPilots, 8.0).unwrap().ofdm.n_pilot, 8);
        let bsc = cfg.with_axis(SweepAxis::BscP, 0.05).unwrap();
        assert_eq!((bsc.channel.model, bsc.channel.p), (ChannelModel::Bsc, 0.05));
        assert!(cfg.with_axis(SweepAxis::Budget, 12.5).is_err());
        assert!(cfg.with_axis(SweepAxis::Budget, 10.0).is_err());
        assert_eq!("ram".parse::<Allocator>().unwrap(), Allocator::Ram);
        assert_eq!("bsc_p".parse::<SweepAxis>().unwrap(), SweepAxis::BscP);
    }
}
