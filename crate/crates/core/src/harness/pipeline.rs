//! End-to-end episodes.

use crate::alloc::{
    allocate_bits_eam, allocate_bits_ram, allocate_bits_rbam, allocate_subcarriers_framed,
    weighted_distortion, BitAllocation, SubcarrierAssignment,
};
use crate::dppo::{self, Episode, Outcome, PolicyParams};
use crate::importance::{self, offline_str, ImportanceWeights};
use crate::phy::{
    apply_channel, bsc, channel_decode, channel_encode, estimate_channel, equalize_regularized,
    make_multipath, make_sui5, noise_variance, ofdm_demodulate, ofdm_modulate, qam64_demodulate,
    qam64_modulate, ChannelEstimator, ChannelRealization, Complex64, MmsePrior, NoiseConfig,
    OfdmConfig, SignalPower,
};
use crate::quant::{dequantize, dithered_quantize, encode_bits, DitherSource, QuantizerSpec};
use crate::rng::{derive, stage};
use crate::semcodec::{
    encode, evaluate, generate_dataset_with, task_forward, train_codec, CodecParams, FeatureMaps,
    SyntheticDataset,
};
use crate::{Error, Result};

use super::config::{Allocator, ChannelModel, Estimation, ExperimentConfig};
use super::kb::KnowledgeBase;

/// Per-episode seeds, one per source of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub sample: u64,
    pub channel: u64,
    pub noise: u64,
    pub dither: u64,
    pub ram: u64,
}

impl EpisodeSeeds {
    /// Seeds for the episode at `path` under `master`; each stage is hashed
    /// separately, so the choice of allocator never shifts them.
    pub fn derive(master: u64, path: &[u64]) -> Self {
        let at = |s: u64| {
            let mut p = path.to_vec();
            p.push(s);
            derive(master, &p)
        };
        Self {
            sample: at(stage::SAMPLE),
            channel: at(stage::CHANNEL),
            noise: at(stage::NOISE),
            dither: at(stage::DITHER),
            ram: at(stage::RAM),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub allocator: Allocator,
    pub weighted_distortion: f64,
    pub top1_correct: bool,
    /// Negative cross-entropy of the true label.
    pub task_perf: f64,
    /// `L0 + task_perf - beta * distortion`.
    pub reward: f64,
    pub bits_used: u64,
    pub bits: Vec<u32>,
    /// Quantizer output bits, `W * H * sum(b)`.
    pub payload_bits: usize,
    /// Bits after the channel code, including code padding.
    pub coded_bits: usize,
    /// 64QAM symbols sent, including modulation padding.
    pub channel_symbols: usize,
    /// Mean squared channel-estimation error over all transmitted OFDM symbols.
    pub chest_mse: Option<f64>,
    pub seeds: EpisodeSeeds,
}

/// Everything about an episode that does not depend on the bit allocation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub a: FeatureMaps,
    pub label: usize,
    pub weights: ImportanceWeights,
    pub channel: Option<ChannelRealization>,
    pub assignment: SubcarrierAssignment,
    prior: Option<MmsePrior>,
}

/// Recovered features and transmission accounting.
#[derive(Debug, Clone)]
pub struct Received {
    pub features: FeatureMaps,
    pub payload_bits: usize,
    pub coded_bits: usize,
    pub channel_symbols: usize,
    pub chest_mse: Option<f64>,
}

/// Symbols carried on one data subcarrier of one frame, one per OFDM symbol.
struct Lane {
    frame: usize,
    subcarrier: usize,
    symbols: Vec<Complex64>,
}

/// Codec training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

/// Deterministic dataset for a configuration.
pub fn dataset(cfg: &ExperimentConfig) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let c = &cfg.codec;
    let ds = generate_dataset_with(
        c.dataset_size,
        c.d,
        c.n_classes,
        c.blobs(),
        derive(c.seed, &[stage::DATASET]),
    )?;
    Ok(ds.split(c.train_size))
}

/// Trains the codec and computes its task relevance.
pub fn train_knowledge_base(cfg: &ExperimentConfig) -> Result<(KnowledgeBase, CodecReport)> {
    cfg.validate()?;
    let (train, test) = dataset(cfg)?;
    let (codec, log) = train_codec(&train, cfg.codec.shape(), cfg.codec.epochs, cfg.codec.lr, cfg.codec.seed)
        .map_err(|e| e.at_stage("codec training"))?;
    let n = cfg.codec.str_samples.clamp(1, train.len());
    let g = offline_str(&codec, &train.inputs[..n])?;
    let report = CodecReport {
        train_accuracy: codec.train_accuracy.unwrap_or(f64::NAN),
        test_accuracy: evaluate(&codec, &test)?,
        final_loss: log.losses.last().copied().unwrap_or(f64::NAN),
    };
    let mut kb = KnowledgeBase::new(codec);
    kb.str_weights = Some(g);
    Ok((kb, report))
}

/// A configuration bound to its trained artifacts.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub ofdm: OfdmConfig,
    pub codec: CodecParams,
    pub str_weights: Vec<f64>,
    pub policy: Option<PolicyParams>,
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, kb: KnowledgeBase) -> Result<Self> {
        cfg.validate()?;
        if kb.codec.shape != cfg.codec.shape() {
            return Err(Error::Config(format!(
                "knowledge base codec {:?} does not match configured {:?}",
                kb.codec.shape,
                cfg.codec.shape()
            )));
        }
        let (train, test) = dataset(&cfg)?;
        let str_weights = match kb.str_weights {
            Some(g) => g,
            None => {
                let n = cfg.codec.str_samples.clamp(1, train.len());
                offline_str(&kb.codec, &train.inputs[..n])?
            }
        };
        Ok(Self {
            ofdm: cfg.ofdm.layout()?,
            cfg,
            codec: kb.codec,
            str_weights,
            policy: kb.policy,
            train,
            test,
        })
    }

    /// Same artifacts under a modified configuration.
    pub fn reconfigure(&self, cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.codec != self.cfg.codec {
            return Err(Error::Config("reconfiguration cannot change the codec".into()));
        }
        Ok(Self {
            ofdm: cfg.ofdm.layout()?,
            cfg,
            ..self.clone()
        })
    }

    pub fn knowledge_base(&self) -> KnowledgeBase {
        KnowledgeBase {
            codec: self.codec.clone(),
            str_weights: Some(self.str_weights.clone()),
            policy: self.policy.clone(),
        }
    }

    fn pick<'a>(ds: &'a SyntheticDataset, seed: u64) -> (&'a [f64], usize) {
        let i = (seed % ds.len() as u64) as usize;
        (&ds.inputs[i], ds.labels[i])
    }

    pub fn test_sample(&self, seeds: &EpisodeSeeds) -> (&[f64], usize) {
        Self::pick(&self.test, seeds.sample)
    }

    pub fn train_sample(&self, seeds: &EpisodeSeeds) -> (&[f64], usize) {
        Self::pick(&self.train, seeds.sample)
    }

    /// Encodes the input, scores importance, draws the channel and matches
    /// semantics to subcarriers.
    pub fn prepare(&self, x: &[f64], label: usize, simplified: bool, seeds: &EpisodeSeeds) -> Result<Prepared> {
        let a = encode(x, &self.codec).map_err(|e| e.at_stage("encode"))?;
        let weights = if simplified {
            importance::str_only(&self.str_weights)
        } else {
            importance::evaluate(&a, &self.str_weights)
        }
        .map_err(|e| e.at_stage("importance"))?;
        let channel = match self.cfg.channel.model {
            ChannelModel::Sui5 => Some(make_sui5(seeds.channel, &self.ofdm)),
            ChannelModel::Multipath => Some(make_multipath(self.cfg.channel.n_paths, seeds.channel, &self.ofdm)),
            ChannelModel::Bsc | ChannelModel::Ideal => None,
        }
        .transpose()
        .map_err(|e| e.at_stage("channel"))?;
        let gains: Vec<f64> = match &channel {
            Some(ch) => self
                .ofdm
                .data_positions()
                .iter()
                .map(|&k| ch.freq_response[k].norm())
                .collect(),
            None => vec![1.0; self.ofdm.n_data()],
        };
        let assignment =
            allocate_subcarriers_framed(&weights.omega, &gains).map_err(|e| e.at_stage("subcarrier matching"))?;
        let prior = match (&channel, self.cfg.ofdm.estimator) {
            (Some(ch), Estimation::Mmse) => {
                Some(MmsePrior::new(&self.ofdm, &ch.profile).map_err(|e| e.at_stage("estimation"))?)
            }
            _ => None,
        };
        Ok(Prepared {
            a,
            label,
            weights,
            channel,
            assignment,
            prior,
        })
    }

    /// Bit allocation for a prepared episode.
    pub fn allocate(&self, prep: &Prepared, allocator: Allocator, seeds: &EpisodeSeeds) -> Result<BitAllocation> {
        let budget = self.cfg.budget;
        let omega = &prep.weights.omega;
        match allocator {
            Allocator::Eam => allocate_bits_eam(budget, omega),
            Allocator::Rbam => allocate_bits_rbam(omega, budget),
            Allocator::Ram => allocate_bits_ram(budget, omega.len(), seeds.ram),
            Allocator::Dppo | Allocator::DppoSimplified => {
                let policy = self
                    .policy
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{allocator} needs a trained policy")))?;
                dppo::infer_allocation(policy, &prep.a, omega, budget)
            }
            Allocator::AnalogBaseline => Err(Error::Config("the analog baseline allocates no bits".into())),
        }
        .map_err(|e| e.at_stage("bit allocation"))
    }

    fn estimate(
        &self,
        channel: &ChannelRealization,
        prior: Option<&MmsePrior>,
        noise_var: f64,
        pilots: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        match (self.cfg.ofdm.estimator, prior) {
            (Estimation::Perfect, _) => Ok(channel.freq_response.clone()),
            (Estimation::Mmse, Some(p)) => {
                let pv = self.ofdm.pilot_value();
                Ok(p.apply(&pilots.iter().map(|y| y / pv).collect::<Vec<_>>(), noise_var))
            }
            _ => estimate_channel(pilots, &self.ofdm, &ChannelEstimator::LsInterp),
        }
    }

    /// Sends the lanes through OFDM, the channel and the equalizer. Returns
    /// the equalized symbols per lane and the channel-estimation MSE.
    fn ofdm_transfer(
        &self,
        channel: &ChannelRealization,
        prior: Option<&MmsePrior>,
        noise: NoiseConfig,
        lanes: &[Lane],
    ) -> Result<(Vec<Vec<Complex64>>, f64)> {
        let n_frames = lanes.iter().map(|l| l.frame + 1).max().unwrap_or(0);
        let mut schedule = Vec::new();
        let mut stream = Vec::new();
        for f in 0..n_frames {
            let len = lanes
                .iter()
                .filter(|l| l.frame == f)
                .map(|l| l.symbols.len())
                .max()
                .unwrap_or(0);
            for t in 0..len {
                let mut grid = vec![Complex64::new(0.0, 0.0); self.ofdm.n_data()];
                for l in lanes.iter().filter(|l| l.frame == f) {
                    if let Some(&s) = l.symbols.get(t) {
                        grid[l.subcarrier] = s;
                    }
                }
                stream.extend(ofdm_modulate(&grid, &self.ofdm)?);
                schedule.push((f, t));
            }
        }
        let power = stream.iter().map(|x| x.norm_sqr()).sum::<f64>() / stream.len().max(1) as f64;
        let noise = noise.with_reference(SignalPower::Nominal(power));
        let noise_var = noise_variance(power, noise.snr_db);
        let rx = apply_channel(&stream, channel, &noise);
        let mut out: Vec<Vec<Complex64>> = lanes.iter().map(|l| Vec::with_capacity(l.symbols.len())).collect();
        let mut mse = 0.0;
        let len = self.ofdm.symbol_len();
        for (s, &(f, t)) in schedule.iter().enumerate() {
            let obs = ofdm_demodulate(&rx[s * len..(s + 1) * len], &self.ofdm)?;
            let h = self.estimate(channel, prior, noise_var, &obs.pilots)?;
            mse += h
                .iter()
                .zip(&channel.freq_response)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / h.len() as f64;
            let h_data: Vec<Complex64> = self.ofdm.data_positions().iter().map(|&k| h[k]).collect();
            let eq = equalize_regularized(&obs.data, &h_data);
            for (l, o) in lanes.iter().zip(out.iter_mut()) {
                if l.frame == f && t < l.symbols.len() {
                    o.push(eq[l.subcarrier]);
                }
            }
        }
        Ok((out, mse / schedule.len().max(1) as f64))
    }

    /// AWGN referenced to the measured power of the transmitted stream.
    fn noise(&self, seeds: &EpisodeSeeds) -> NoiseConfig {
        NoiseConfig::new(self.cfg.channel.snr_db, seeds.noise)
    }

    /// Quantize, code, modulate, transmit and recover the features under
    /// allocation `b`.
    pub fn transmit(&self, prep: &Prepared, b: &[u32], seeds: &EpisodeSeeds) -> Result<Received> {
        let a = &prep.a;
        if b.len() != a.count() {
            return Err(Error::LengthMismatch {
                expected: a.count(),
                actual: b.len(),
            });
        }
        let code = self.cfg.code.variant;
        let specs = b
            .iter()
            .map(|&bits| QuantizerSpec::new(self.cfg.gamma, bits))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_stage("quantize"))?;
        let mut payload = Vec::with_capacity(a.count());
        for (i, spec) in specs.iter().enumerate() {
            let mut dither = DitherSource::new(derive(seeds.dither, &[i as u64]));
            let mut bits = Vec::with_capacity(a.map_len() * spec.bits() as usize);
            for &y in a.map(i) {
                let q = dithered_quantize(y, spec, &mut dither).map_err(|e| e.at_stage("quantize"))?;
                bits.extend(encode_bits(q.index, spec)?);
            }
            payload.push(bits);
        }
        let coded: Vec<Vec<u8>> = payload.iter().map(|p| channel_encode(p, code)).collect();
        let payload_bits = payload.iter().map(Vec::len).sum();
        let coded_bits = coded.iter().map(Vec::len).sum();
        let (received, channel_symbols, chest_mse) = match self.cfg.channel.model {
            ChannelModel::Ideal => (coded.clone(), 0, None),
            ChannelModel::Bsc => {
                let rx = coded
                    .iter()
                    .enumerate()
                    .map(|(i, c)| bsc(c, self.cfg.channel.p, derive(seeds.noise, &[stage::BSC, i as u64])))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.at_stage("channel"))?;
                (rx, 0, None)
            }
            ChannelModel::Sui5 | ChannelModel::Multipath => {
                let channel = prep.channel.as_ref().expect("waveform channel drawn in prepare");
                let lanes: Vec<Lane> = coded
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Lane {
                        frame: prep.assignment.frame[i],
                        subcarrier: prep.assignment.rho[i],
                        symbols: qam64_modulate(c),
                    })
                    .collect();
                let n_symbols = lanes.iter().map(|l| l.symbols.len()).sum();
                let (rx, mse) = self
                    .ofdm_transfer(channel, prep.prior.as_ref(), self.noise(seeds), &lanes)
                    .map_err(|e| e.at_stage("ofdm"))?;
                let bits = rx
                    .iter()
                    .zip(&coded)
                    .map(|(symbols, c)| {
                        let mut bits = qam64_demodulate(symbols)?;
                        bits.truncate(c.len());
                        Ok(bits)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.at_stage("demodulate"))?;
                (bits, n_symbols, Some(mse))
            }
        };
        let mut values = Vec::with_capacity(a.values().len());
        for ((rx, p), spec) in received.iter().zip(&payload).zip(&specs) {
            let bits = channel_decode(rx, code, p.len()).map_err(|e| e.at_stage("decode"))?;
            for chunk in bits.chunks_exact(spec.bits() as usize) {
                values.push(dequantize(chunk, spec).map_err(|e| e.at_stage("dequantize"))?);
            }
        }
        Ok(Received {
            features: FeatureMaps::new(a.count(), a.width(), a.height(), values)?,
            payload_bits,
            coded_bits,
            channel_symbols,
            chest_mse,
        })
    }

    /// Features sent as analog I/Q pairs on data subcarriers in ascending
    /// order, scaled to unit mean symbol energy.
    pub fn transmit_analog(&self, prep: &Prepared, seeds: &EpisodeSeeds) -> Result<Received> {
        let a = &prep.a;
        let values = a.values();
        let symbols: Vec<Complex64> = values
            .chunks(2)
            .map(|p| Complex64::new(p[0], p.get(1).copied().unwrap_or(0.0)))
            .collect();
        let energy = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / symbols.len() as f64;
        let scale = if energy > 0.0 { energy.sqrt() } else { 1.0 };
        let n_data = self.ofdm.n_data();
        let mut lanes: Vec<Lane> = (0..n_data.min(symbols.len()))
            .map(|k| Lane {
                frame: 0,
                subcarrier: k,
                symbols: Vec::new(),
            })
            .collect();
        for (j, s) in symbols.iter().enumerate() {
            lanes[j % n_data].symbols.push(s / scale);
        }
        let (channel, noise) = match self.cfg.channel.model {
            ChannelModel::Sui5 | ChannelModel::Multipath => (
                prep.channel.clone().expect("waveform channel drawn in prepare"),
                self.noise(seeds),
            ),
            ChannelModel::Ideal => (ChannelRealization::identity(self.ofdm.n_sub()), NoiseConfig::noiseless()),
            ChannelModel::Bsc => {
                return Err(Error::Config("the analog baseline needs a waveform channel".into()))
            }
        };
        let (rx, mse) = self
            .ofdm_transfer(&channel, prep.prior.as_ref(), noise, &lanes)
            .map_err(|e| e.at_stage("ofdm"))?;
        let mut recovered = vec![Complex64::new(0.0, 0.0); symbols.len()];
        for (k, lane) in rx.iter().enumerate() {
            for (t, s) in lane.iter().enumerate() {
                recovered[t * n_data + k] = s * scale;
            }
        }
        let flat: Vec<f64> = recovered
            .iter()
            .flat_map(|s| [s.re, s.im])
            .take(values.len())
            .collect();
        Ok(Received {
            features: FeatureMaps::new(a.count(), a.width(), a.height(), flat)?,
            payload_bits: 0,
            coded_bits: 0,
            channel_symbols: symbols.len(),
            chest_mse: prep.channel.as_ref().map(|_| mse),
        })
    }

    /// Task performance and distortion of received features.
    pub fn score(&self, prep: &Prepared, features: &FeatureMaps) -> Result<(Outcome, bool)> {
        let out = task_forward(features, &self.codec).map_err(|e| e.at_stage("task"))?;
        let distortion = weighted_distortion(&prep.a, features, &prep.weights.omega)?;
        Ok((
            Outcome {
                task_perf: -out.cross_entropy(prep.label),
                distortion,
            },
            out.label == prep.label,
        ))
    }

    fn finish(&self, allocator: Allocator, prep: &Prepared, rx: Received, bits: Vec<u32>, seeds: EpisodeSeeds) -> Result<EpisodeResult> {
        let (outcome, correct) = self.score(prep, &rx.features)?;
        let h = &self.cfg.dppo;
        Ok(EpisodeResult {
            allocator,
            weighted_distortion: outcome.distortion,
            top1_correct: correct,
            task_perf: outcome.task_perf,
            reward: h.l0 + outcome.task_perf - h.beta * outcome.distortion,
            bits_used: bits.iter().map(|&x| u64::from(x)).sum(),
            bits,
            payload_bits: rx.payload_bits,
            coded_bits: rx.coded_bits,
            channel_symbols: rx.channel_symbols,
            chest_mse: rx.chest_mse,
            seeds,
        })
    }

    /// One episode on input `x` with label `label`.
    pub fn run_episode_on(&self, x: &[f64], label: usize, allocator: Allocator, seeds: EpisodeSeeds) -> Result<EpisodeResult> {
        let prep = self.prepare(x, label, allocator == Allocator::DppoSimplified, &seeds)?;
        if allocator == Allocator::AnalogBaseline {
            let rx = self.transmit_analog(&prep, &seeds)?;
            return self.finish(allocator, &prep, rx, Vec::new(), seeds);
        }
        let b = self.allocate(&prep, allocator, &seeds)?;
        let rx = self.transmit(&prep, &b.b, &seeds)?;
        self.finish(allocator, &prep, rx, b.b, seeds)
    }

    /// One episode on the test sample selected by `seeds`.
    pub fn run_episode(&self, allocator: Allocator, seeds: EpisodeSeeds) -> Result<EpisodeResult> {
        let (x, label) = self.test_sample(&seeds);
        self.run_episode_on(x, label, allocator, seeds)
    }

    /// Analog baseline episode on the test sample selected by `seeds`.
    pub fn run_analog_baseline(&self, seeds: EpisodeSeeds) -> Result<EpisodeResult> {
        self.run_episode(Allocator::AnalogBaseline, seeds)
    }

    /// Episode with fixed randomness for policy training and evaluation.
    pub fn episode(&self, x: &[f64], label: usize, seeds: EpisodeSeeds) -> Result<LinkEpisode<'_>> {
        Ok(LinkEpisode {
            exp: self,
            prep: self.prepare(x, label, false, &seeds)?,
            seeds,
        })
    }

    /// Training episode `(iteration, index)` for policy seed `seed`.
    pub fn training_episode(&self, seed: u64, iteration: usize, index: usize) -> Result<LinkEpisode<'_>> {
        let seeds = EpisodeSeeds::derive(seed, &[stage::POLICY, iteration as u64, index as u64]);
        let (x, label) = self.train_sample(&seeds);
        self.episode(x, label, seeds)
    }
}

/// An [`Episode`] backed by the full link.
pub struct LinkEpisode<'a> {
    exp: &'a Experiment,
    pub prep: Prepared,
    pub seeds: EpisodeSeeds,
}

impl Episode for LinkEpisode<'_> {
    fn features(&self) -> &FeatureMaps {
        &self.prep.a
    }

    fn omega(&self) -> &[f64] {
        &self.prep.weights.omega
    }

    fn budget(&self) -> u32 {
        self.exp.cfg.budget
    }

    fn outcome(&self, b: &[u32]) -> Result<Outcome> {
        let rx = self.exp.transmit(&self.prep, b, &self.seeds)?;
        Ok(self.exp.score(&self.prep, &rx.features)?.0)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::harness::experiments::selftest_config;
    use crate::phy::{ChannelCode, BITS_PER_SYMBOL};

    fn base() -> &'static Experiment {
        static EXP: OnceLock<Experiment> = OnceLock::new();
        EXP.get_or_init(|| {
            let cfg = selftest_config(5);
            let (kb, _) = train_knowledge_base(&cfg).unwrap();
            Experiment::new(cfg, kb).unwrap()
        })
    }

    fn with(f: impl FnOnce(&mut ExperimentConfig)) -> Experiment {
        let mut cfg = base().cfg.clone();
        f(&mut cfg);
        base().reconfigure(cfg).unwrap()
    }

    fn seeds(t: u64) -> EpisodeSeeds {
        EpisodeSeeds::derive(11, &[t])
    }

    #[test]
    fn seeds_are_distinct_per_stage_and_path() {
        let s = seeds(0);
        let all = [s.sample, s.channel, s.noise, s.dither, s.ram];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_ne!(seeds(0), seeds(1));
        assert_eq!(seeds(3), seeds(3));
    }

    #[test]
    fn fine_quantization_on_ideal_channel_keeps_predictions() {
        let exp = with(|c| c.channel.model = ChannelModel::Ideal);
        let b = vec![12; exp.cfg.codec.c];
        let mut agree = 0;
        for (i, x) in exp.test.inputs.iter().enumerate() {
            let s = seeds(i as u64);
            let prep = exp.prepare(x, exp.test.labels[i], false, &s).unwrap();
            let clean = task_forward(&prep.a, &exp.codec).unwrap().label;
            let rx = exp.transmit(&prep, &b, &s).unwrap();
            agree += usize::from(task_forward(&rx.features, &exp.codec).unwrap().label == clean);
        }
        assert!(agree as f64 >= 0.99 * exp.test.len() as f64, "{agree}/{}", exp.test.len());
    }

    #[test]
    fn ideal_channel_distortion_within_quantizer_bound() {
        let exp = with(|c| c.channel.model = ChannelModel::Ideal);
        let wh = (exp.cfg.codec.w * exp.cfg.codec.h) as f64;
        for t in 0..20 {
            let s = seeds(t);
            let (x, y) = exp.test_sample(&s);
            let prep = exp.prepare(x, y, false, &s).unwrap();
            let b = exp.allocate(&prep, Allocator::Ram, &s).unwrap();
            let rx = exp.transmit(&prep, &b.b, &s).unwrap();
            let (outcome, _) = exp.score(&prep, &rx.features).unwrap();
            let bound: f64 = b
                .b
                .iter()
                .zip(&prep.weights.omega)
                .map(|(&bits, w)| {
                    let step = QuantizerSpec::new(exp.cfg.gamma, bits).unwrap().step();
                    w * wh * step * step
                })
                .sum();
            assert!(outcome.distortion <= bound + 1e-12, "{} > {bound}", outcome.distortion);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let exp = base();
        for a in [Allocator::Eam, Allocator::Ram, Allocator::Rbam, Allocator::AnalogBaseline] {
            assert_eq!(exp.run_episode(a, seeds(4)).unwrap(), exp.run_episode(a, seeds(4)).unwrap());
        }
    }

    #[test]
    fn bit_accounting_reconciles() {
        for code in [ChannelCode::Identity, ChannelCode::Hamming74] {
            let exp = with(|c| c.code.variant = code);
            let wh = exp.cfg.codec.w * exp.cfg.codec.h;
            for a in [Allocator::Eam, Allocator::Rbam, Allocator::Ram] {
                let r = exp.run_episode(a, seeds(2)).unwrap();
                assert_eq!(r.bits_used, u64::from(exp.cfg.budget));
                assert_eq!(r.payload_bits, wh * exp.cfg.budget as usize);
                let coded: usize = r.bits.iter().map(|&b| code.coded_len(wh * b as usize)).sum();
                assert_eq!(r.coded_bits, coded);
                let symbols: usize = r
                    .bits
                    .iter()
                    .map(|&b| code.coded_len(wh * b as usize).div_ceil(BITS_PER_SYMBOL))
                    .sum();
                assert_eq!(r.channel_symbols, symbols);
                assert!(r.chest_mse.is_some());
            }
        }
    }

    #[test]
    fn analog_on_ideal_channel_is_lossless() {
        let exp = with(|c| c.channel.model = ChannelModel::Ideal);
        let r = exp.run_analog_baseline(seeds(1)).unwrap();
        assert!(r.weighted_distortion < 1e-20, "{}", r.weighted_distortion);
        assert!(r.bits.is_empty() && r.payload_bits == 0);
    }

    #[test]
    fn clean_bsc_matches_ideal() {
        let ideal = with(|c| c.channel.model = ChannelModel::Ideal);
        let clean = with(|c| {
            c.channel.model = ChannelModel::Bsc;
            c.channel.p = 0.0;
        });
        for t in 0..5 {
            let a = ideal.run_episode(Allocator::Eam, seeds(t)).unwrap();
            let b = clean.run_episode(Allocator::Eam, seeds(t)).unwrap();
            assert_eq!(a.weighted_distortion, b.weighted_distortion);
        }
    }

    #[test]
    fn high_snr_waveform_approaches_ideal() {
        let ideal = with(|c| c.channel.model = ChannelModel::Ideal);
        let wave = with(|c| c.channel.snr_db = 45.0);
        for t in 0..5 {
            let a = ideal.run_episode(Allocator::Eam, seeds(t)).unwrap();
            let b = wave.run_episode(Allocator::Eam, seeds(t)).unwrap();
            assert_eq!(a.weighted_distortion, b.weighted_distortion, "trial {t}");
            assert!(b.chest_mse.unwrap() < 1e-3);
        }
    }

    #[test]
    fn perfect_estimation_has_no_estimation_error() {
        let exp = with(|c| c.ofdm.estimator = Estimation::Perfect);
        let r = exp.run_episode(Allocator::Eam, seeds(0)).unwrap();
        assert!(r.chest_mse.unwrap() < 1e-24);
    }

    #[test]
    fn allocators_see_the_same_episode() {
        let exp = base();
        let s = seeds(9);
        let (x, y) = exp.test_sample(&s);
        let p1 = exp.prepare(x, y, false, &s).unwrap();
        let p2 = exp.prepare(x, y, false, &s).unwrap();
        assert_eq!(p1.assignment, p2.assignment);
        assert_eq!(p1.channel.unwrap().tap_gains, p2.channel.unwrap().tap_gains);
    }

    #[test]
    fn configuration_errors() {
        let exp = base();
        assert!(exp.run_episode(Allocator::Dppo, seeds(0)).unwrap_err().is_config());
        let bsc = with(|c| c.channel.model = ChannelModel::Bsc);
        assert!(bsc.run_analog_baseline(seeds(0)).unwrap_err().is_config());
        let prep = exp.prepare(&exp.test.inputs[0], 0, false, &seeds(0)).unwrap();
        assert!(exp.transmit(&prep, &[1, 2], &seeds(0)).is_err());
    }

    #[test]
    fn simplified_importance_is_input_independent() {
        let exp = base();
        let s = seeds(0);
        let p1 = exp.prepare(&exp.test.inputs[0], 0, true, &s).unwrap();
        let p2 = exp.prepare(&exp.test.inputs[1], 0, true, &s).unwrap();
        assert_eq!(p1.weights.omega, p2.weights.omega);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut cfg = base().cfg.clone();
        cfg.codec.c = 4;
        assert!(Experiment::new(cfg, base().knowledge_base()).unwrap_err().is_config());
    }
}
