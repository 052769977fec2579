//! Sweeps, paired comparisons, importance export, policy training and the
//! self-test.

use std::ops::Range;

use rayon::prelude::*;

use crate::dppo::{self, PolicyParams, TrainingCurve};
use crate::rng::{derive, stage};
use crate::{Error, Result};

use super::config::{Allocator, ChannelModel, CodecConfig, ExperimentConfig, SweepAxis, SweepConfig};
use super::pipeline::{train_knowledge_base, EpisodeResult, EpisodeSeeds, Experiment};

/// Path component separating comparison episodes from sweep episodes.
const COMPARE: u64 = 0x636f_6d70;
const EXPORT: u64 = 0x6578_706f;

pub const SWEEP_HEADER: [&str; 10] = [
    "axis",
    "value",
    "allocator",
    "trials",
    "distortion_mean",
    "distortion_std",
    "accuracy_mean",
    "accuracy_std",
    "reward_mean",
    "chest_mse_mean",
];

/// Sample mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standard error of the mean.
pub fn std_error(values: &[f64]) -> f64 {
    mean_std(values).1 / (values.len() as f64).sqrt()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

fn to_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Aggregate of one allocator's episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub allocator: Allocator,
    pub trials: usize,
    pub distortion_mean: f64,
    pub distortion_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub reward_mean: f64,
    pub chest_mse_mean: f64,
}

impl Summary {
    pub fn of(allocator: Allocator, episodes: &[EpisodeResult]) -> Self {
        let d: Vec<f64> = episodes.iter().map(|e| e.weighted_distortion).collect();
        let acc: Vec<f64> = episodes.iter().map(|e| f64::from(u8::from(e.top1_correct))).collect();
        let r: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        let mse: Vec<f64> = episodes.iter().filter_map(|e| e.chest_mse).collect();
        let (distortion_mean, distortion_std) = mean_std(&d);
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        Self {
            allocator,
            trials: episodes.len(),
            distortion_mean,
            distortion_std,
            accuracy_mean,
            accuracy_std,
            reward_mean: mean_std(&r).0,
            chest_mse_mean: mean_std(&mse).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: Summary,
    pub episodes: Vec<EpisodeResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        to_csv(
            &SWEEP_HEADER,
            self.points.iter().map(|p| {
                let s = &p.summary;
                vec![
                    self.axis.name().to_string(),
                    format!("{}", p.value),
                    s.allocator.name().to_string(),
                    s.trials.to_string(),
                    fmt(s.distortion_mean),
                    fmt(s.distortion_std),
                    fmt(s.accuracy_mean),
                    fmt(s.accuracy_std),
                    fmt(s.reward_mean),
                    fmt(s.chest_mse_mean),
                ]
            }),
        )
    }

    pub fn point(&self, value: f64, allocator: Allocator) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.value == value && p.summary.allocator == allocator)
    }
}

fn check_allocators(exp: &Experiment, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.allocators.is_empty() {
        return Err(Error::Config("no allocators configured".into()));
    }
    for &a in &cfg.allocators {
        if a.needs_policy() && exp.policy.is_none() {
            return Err(Error::Config(format!("{a} needs a trained policy in the knowledge base")));
        }
        if a == Allocator::AnalogBaseline && cfg.channel.model == ChannelModel::Bsc {
            return Err(Error::Config("the analog baseline needs a waveform channel".into()));
        }
    }
    Ok(())
}

/// Runs `trials` paired episodes per allocator. Episodes run in parallel;
/// results are returned in trial order.
pub fn run_paired(exp: &Experiment, path: &[u64]) -> Result<Vec<Vec<EpisodeResult>>> {
    check_allocators(exp, &exp.cfg)?;
    exp.cfg
        .allocators
        .iter()
        .map(|&allocator| {
            (0..exp.cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut p = path.to_vec();
                    p.push(t as u64);
                    exp.run_episode(allocator, EpisodeSeeds::derive(exp.cfg.seed, &p))
                })
                .collect()
        })
        .collect()
}

/// One row per (axis value, allocator).
pub fn run_sweep(exp: &Experiment) -> Result<SweepTable> {
    let sweep = &exp.cfg.sweep;
    if sweep.values.is_empty() {
        return Err(Error::Config("sweep has no values".into()));
    }
    let variants = sweep
        .values
        .iter()
        .map(|&v| {
            let e = exp.reconfigure(exp.cfg.with_axis(sweep.axis, v)?)?;
            check_allocators(&e, &e.cfg)?;
            Ok((v, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (value, e) in &variants {
        let runs = run_paired(e, &[value.to_bits()])?;
        for (&allocator, episodes) in e.cfg.allocators.iter().zip(runs) {
            points.push(SweepPoint {
                value: *value,
                summary: Summary::of(allocator, &episodes),
                episodes,
            });
        }
    }
    Ok(SweepTable {
        axis: sweep.axis,
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub summaries: Vec<Summary>,
    pub episodes: Vec<Vec<EpisodeResult>>,
    /// `win_rate[i][j]`: share of paired episodes where allocator `i` has
    /// lower distortion than `j`, ties counted half.
    pub win_rate: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn summary_csv(&self) -> String {
        to_csv(
            &[
                "allocator",
                "episodes",
                "distortion_mean",
                "distortion_std",
                "distortion_se",
                "accuracy_mean",
                "reward_mean",
            ],
            self.summaries.iter().zip(&self.episodes).map(|(s, eps)| {
                let d: Vec<f64> = eps.iter().map(|e| e.weighted_distortion).collect();
                vec![
                    s.allocator.name().to_string(),
                    s.trials.to_string(),
                    fmt(s.distortion_mean),
                    fmt(s.distortion_std),
                    fmt(std_error(&d)),
                    fmt(s.accuracy_mean),
                    fmt(s.reward_mean),
                ]
            }),
        )
    }

    pub fn win_rate_csv(&self) -> String {
        let mut header = vec!["allocator"];
        header.extend(self.summaries.iter().map(|s| s.allocator.name()));
        to_csv(
            &header,
            self.summaries.iter().zip(&self.win_rate).map(|(s, row)| {
                let mut r = vec![s.allocator.name().to_string()];
                r.extend(row.iter().map(|&v| fmt(v)));
                r
            }),
        )
    }

    pub fn summary(&self, allocator: Allocator) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.allocator == allocator)
    }

    pub fn distortions(&self, allocator: Allocator) -> Option<Vec<f64>> {
        let i = self.summaries.iter().position(|s| s.allocator == allocator)?;
        Some(self.episodes[i].iter().map(|e| e.weighted_distortion).collect())
    }
}

/// Paired comparison: every allocator sees the same samples, channels,
/// noise and dither.
pub fn compare_allocators(exp: &Experiment) -> Result<Comparison> {
    let episodes = run_paired(exp, &[COMPARE])?;
    let summaries = exp
        .cfg
        .allocators
        .iter()
        .zip(&episodes)
        .map(|(&a, e)| Summary::of(a, e))
        .collect();
    let win_rate = episodes
        .iter()
        .map(|ei| {
            episodes
                .iter()
                .map(|ej| {
                    ei.iter()
                        .zip(ej)
                        .map(|(a, b)| match a.weighted_distortion.total_cmp(&b.weighted_distortion) {
                            std::cmp::Ordering::Less => 1.0,
                            std::cmp::Ordering::Equal => 0.5,
                            std::cmp::Ordering::Greater => 0.0,
                        })
                        .sum::<f64>()
                        / ei.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(Comparison {
        summaries,
        episodes,
        win_rate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub semantic: usize,
    pub g: f64,
    pub v: f64,
    pub omega: f64,
    pub bits: u32,
}

pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    to_csv(
        &["semantic", "g", "v", "omega", "bits"],
        rows.iter().map(|r| {
            vec![
                r.semantic.to_string(),
                format!("{:.12}", r.g),
                format!("{:.12}", r.v),
                format!("{:.12}", r.omega),
                r.bits.to_string(),
            ]
        }),
    )
}

/// Importance and the configured allocator's bits for test sample `index`.
pub fn export_importance_map(exp: &Experiment, index: usize) -> Result<Vec<ImportanceRow>> {
    let allocator = exp.cfg.allocator;
    if allocator == Allocator::AnalogBaseline {
        return Err(Error::Config("the analog baseline allocates no bits".into()));
    }
    let i = index % exp.test.len();
    let seeds = EpisodeSeeds::derive(exp.cfg.seed, &[EXPORT, i as u64]);
    let prep = exp.prepare(
        &exp.test.inputs[i],
        exp.test.labels[i],
        allocator == Allocator::DppoSimplified,
        &seeds,
    )?;
    let b = exp.allocate(&prep, allocator, &seeds)?;
    let w = &prep.weights;
    Ok((0..w.len())
        .map(|k| ImportanceRow {
            semantic: k,
            g: w.g[k],
            v: w.v[k],
            omega: w.omega[k],
            bits: b.b[k],
        })
        .collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Trains a policy with the configured hyperparameters on training inputs.
pub fn train_policy(exp: &Experiment) -> Result<(PolicyParams, TrainingCurve)> {
    let hyper = exp.cfg.dppo;
    let max_bits = hyper.max_bits_for(exp.cfg.budget, exp.cfg.codec.c);
    let initial = PolicyParams::new(max_bits, hyper.hidden, derive(hyper.seed, &[stage::POLICY]));
    dppo::train(initial, &hyper, |it, k| exp.training_episode(hyper.seed, it, k))
}

/// Mean per-step reward of a baseline allocator over the training episodes
/// of `iterations`, walked through the same decision process as the policy.
pub fn baseline_training_reward(exp: &Experiment, allocator: Allocator, iterations: Range<usize>) -> Result<f64> {
    let hyper = exp.cfg.dppo;
    let rewards = iterations
        .flat_map(|it| (0..hyper.episodes_per_iteration).map(move |k| (it, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(it, k)| {
            let ep = exp.training_episode(hyper.seed, it, k)?;
            let b = exp.allocate(&ep.prep, allocator, &ep.seeds)?;
            dppo::allocation_reward(&b, &ep, &hyper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&rewards).0)
}

/// Small configuration exercising every stage in seconds.
pub fn selftest_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        budget: 24,
        trials: 16,
        allocators: Allocator::ALL.to_vec(),
        codec: CodecConfig {
            c: 8,
            d: 12,
            n_classes: 4,
            hidden: 16,
            dataset_size: 400,
            train_size: 300,
            epochs: 100,
            str_samples: 100,
            ..CodecConfig::default()
        },
        sweep: SweepConfig {
            axis: SweepAxis::SnrDb,
            values: vec![0.0, 10.0, 20.0],
        },
        ..ExperimentConfig::default()
    };
    cfg.dppo.seed = seed;
    cfg.dppo.iterations = 4;
    cfg.dppo.episodes_per_iteration = 2;
    cfg.dppo.epochs = 2;
    cfg.dppo.hidden = 16;
    cfg
}

/// Trains a tiny codec and policy, runs a short sweep with every allocator
/// and checks the accounting invariants. Returns the sweep CSV.
pub fn selftest(seed: u64) -> Result<String> {
    let cfg = selftest_config(seed);
    let (kb, _) = train_knowledge_base(&cfg)?;
    let mut exp = Experiment::new(cfg, kb)?;
    let (policy, _) = train_policy(&exp)?;
    exp.policy = Some(policy);
    let table = run_sweep(&exp)?;
    let wh = exp.cfg.codec.w * exp.cfg.codec.h;
    for p in &table.points {
        for e in &p.episodes {
            if e.bits_used > u64::from(exp.cfg.budget) {
                return Err(Error::Infeasible(format!("{} used {} bits", e.allocator, e.bits_used)));
            }
            if e.allocator != Allocator::AnalogBaseline {
                let payload = wh * e.bits_used as usize;
                let code = exp.cfg.code.variant;
                let coded: usize = e.bits.iter().map(|&b| code.coded_len(wh * b as usize)).sum();
                let symbols: usize = e
                    .bits
                    .iter()
                    .map(|&b| code.coded_len(wh * b as usize).div_ceil(crate::phy::BITS_PER_SYMBOL))
                    .sum();
                if e.payload_bits != payload || e.coded_bits != coded || e.channel_symbols != symbols {
                    return Err(Error::Infeasible(format!(
                        "{}: bit accounting {}/{}/{} against {payload}/{coded}/{symbols}",
                        e.allocator, e.payload_bits, e.coded_bits, e.channel_symbols
                    )));
                }
            }
        }
    }
    let importance = export_importance_map(&exp, 0)?;
    let total: f64 = importance.iter().map(|r| r.omega).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("importance sums to {total}")));
    }
    Ok(table.to_csv())
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;

    fn trained() -> &'static Experiment {
        static EXP: OnceLock<Experiment> = OnceLock::new();
        EXP.get_or_init(|| {
            let mut cfg = selftest_config(3);
            cfg.trials = 4;
            let (kb, _) = train_knowledge_base(&cfg).unwrap();
            let mut exp = Experiment::new(cfg, kb).unwrap();
            exp.policy = Some(train_policy(&exp).unwrap().0);
            exp
        })
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
        assert!((std_error(&[1.0, 3.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]);
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn sweep_has_one_row_per_value_and_allocator() {
        let exp = trained();
        let table = run_sweep(exp).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER.join(","));
        assert_eq!(lines.len(), 1 + exp.cfg.sweep.values.len() * exp.cfg.allocators.len());
        assert_eq!(csv, run_sweep(exp).unwrap().to_csv());
    }

    #[test]
    fn sweep_rejects_invalid_values_before_running() {
        let exp = trained();
        let mut cfg = exp.cfg.clone();
        cfg.sweep = SweepConfig {
            axis: SweepAxis::NPaths,
            values: vec![1.0, 12.0],
        };
        assert!(run_sweep(&exp.reconfigure(cfg).unwrap()).unwrap_err().is_config());
    }

    #[test]
    fn comparison_is_paired_and_complete() {
        let exp = trained();
        let cmp = compare_allocators(exp).unwrap();
        let n = exp.cfg.allocators.len();
        assert_eq!(cmp.summary_csv().lines().count(), 1 + n);
        assert_eq!(cmp.win_rate_csv().lines().count(), 1 + n);
        let first = &cmp.episodes[0];
        for eps in &cmp.episodes {
            for (a, b) in eps.iter().zip(first) {
                assert_eq!(a.seeds, b.seeds);
            }
        }
    }

    #[test]
    fn configuration_errors() {
        let exp = trained();
        let mut no_policy = exp.clone();
        no_policy.policy = None;
        assert!(compare_allocators(&no_policy).unwrap_err().is_config());
        let mut cfg = exp.cfg.clone();
        cfg.channel.model = ChannelModel::Bsc;
        assert!(compare_allocators(&exp.reconfigure(cfg.clone()).unwrap()).unwrap_err().is_config());
        cfg.allocators.clear();
        assert!(compare_allocators(&exp.reconfigure(cfg).unwrap()).unwrap_err().is_config());
    }

    #[test]
    fn importance_export_sums_to_one() {
        let exp = trained();
        let rows = export_importance_map(exp, 2).unwrap();
        assert_eq!(rows.len(), exp.cfg.codec.c);
        assert!((rows.iter().map(|r| r.omega).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(rows.iter().map(|r| u64::from(r.bits)).sum::<u64>() <= u64::from(exp.cfg.budget));
        assert_eq!(importance_csv(&rows).lines().count(), 1 + rows.len());
    }

    #[test]
    fn selftest_is_deterministic() {
        assert_eq!(selftest(4).unwrap(), selftest(4).unwrap());
    }
}
