//! Subcarrier matching, bit allocators and the allocation objective.

use rand::seq::index;

use crate::rng::rng_from;
use crate::semcodec::FeatureMaps;
use crate::{Error, Result};

/// Indices sorted by value, largest first; equal values keep index order.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Placement of each semantic on a data subcarrier of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierAssignment {
    /// Data-subcarrier index (position in the gain vector) per semantic.
    pub rho: Vec<usize>,
    /// Frame per semantic.
    pub frame: Vec<usize>,
}

impl SubcarrierAssignment {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        self.frame.iter().max().map_or(0, |f| f + 1)
    }

    /// Semantics of frame `f`, in semantic order.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.frame[i] == f).collect()
    }

    /// Checks that no subcarrier is used twice within a frame.
    pub fn validate(&self, n_subcarriers: usize) -> Result<()> {
        if self.rho.len() != self.frame.len() {
            return Err(Error::LengthMismatch {
                expected: self.rho.len(),
                actual: self.frame.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (&k, &f) in self.rho.iter().zip(&self.frame) {
            if k >= n_subcarriers || !seen.insert((f, k)) {
                return Err(Error::Infeasible(format!(
                    "subcarrier {k} reused or out of range in frame {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Pairs semantics and subcarriers rank to rank: the most important semantic
/// gets the strongest subcarrier.
pub fn allocate_subcarriers(omega: &[f64], gains: &[f64]) -> Result<SubcarrierAssignment> {
    if omega.len() > gains.len() {
        return Err(Error::Infeasible(format!(
            "{} semantics for {} subcarriers",
            omega.len(),
            gains.len()
        )));
    }
    let mut rho = vec![0; omega.len()];
    for (&sem, &sc) in rank_descending(omega).iter().zip(&rank_descending(gains)) {
        rho[sem] = sc;
    }
    Ok(SubcarrierAssignment {
        rho,
        frame: vec![0; omega.len()],
    })
}

/// Splits semantics into frames of at most `gains.len()` by importance rank,
/// then matches each frame against the same gains.
pub fn allocate_subcarriers_framed(omega: &[f64], gains: &[f64]) -> Result<SubcarrierAssignment> {
    if gains.is_empty() {
        return Err(Error::Empty("subcarrier gains"));
    }
    let order = rank_descending(gains);
    let mut rho = vec![0; omega.len()];
    let mut frame = vec![0; omega.len()];
    for (f, chunk) in rank_descending(omega).chunks(gains.len()).enumerate() {
        for (&sem, &sc) in chunk.iter().zip(&order) {
            rho[sem] = sc;
            frame[sem] = f;
        }
    }
    Ok(SubcarrierAssignment { rho, frame })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAllocation {
    pub b: Vec<u32>,
    pub budget: u32,
}

impl BitAllocation {
    pub fn new(b: Vec<u32>, budget: u32) -> Result<Self> {
        let alloc = Self { b, budget };
        alloc.validate()?;
        Ok(alloc)
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.b.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.b.iter().position(|&x| x == 0) {
            return Err(Error::Infeasible(format!("semantic {i} has no bits")));
        }
        if self.total() > u64::from(self.budget) {
            return Err(Error::Infeasible(format!(
                "{} bits allocated over a budget of {}",
                self.total(),
                self.budget
            )));
        }
        Ok(())
    }
}

fn check_budget(budget: u32, count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::Empty("semantics"));
    }
    if (budget as usize) < count {
        return Err(Error::InsufficientBudget {
            budget: budget as usize,
            count,
        });
    }
    Ok(())
}

/// Even split; the remainder goes one bit each to the most important semantics.
pub fn allocate_bits_eam(budget: u32, omega: &[f64]) -> Result<BitAllocation> {
    let c = omega.len();
    check_budget(budget, c)?;
    let base = budget / c as u32;
    let mut b = vec![base; c];
    for &i in rank_descending(omega).iter().take(budget as usize % c) {
        b[i] += 1;
    }
    BitAllocation::new(b, budget)
}

/// Proportional split with a floor of one bit, rounded by largest remainder.
pub fn allocate_bits_rbam(omega: &[f64], budget: u32) -> Result<BitAllocation> {
    let c = omega.len();
    check_budget(budget, c)?;
    let total: f64 = omega.iter().sum();
    let shares: Vec<f64> = if total > 0.0 && total.is_finite() {
        omega.iter().map(|w| f64::from(budget) * w / total).collect()
    } else {
        vec![f64::from(budget) / c as f64; c]
    };
    let mut b: Vec<u32> = shares.iter().map(|s| (s.floor() as u32).max(1)).collect();
    let mut used: u64 = b.iter().map(|&x| u64::from(x)).sum();
    // The one-bit floor can overshoot; take bits back from the most over-served.
    while used > u64::from(budget) {
        let i = (0..c)
            .filter(|&i| b[i] > 1)
            .max_by(|&x, &y| {
                (f64::from(b[x]) - shares[x])
                    .total_cmp(&(f64::from(b[y]) - shares[y]))
                    .then(y.cmp(&x))
            })
            .expect("budget covers one bit per semantic");
        b[i] -= 1;
        used -= 1;
    }
    while used < u64::from(budget) {
        let i = (0..c)
            .max_by(|&x, &y| {
                (shares[x] - f64::from(b[x]))
                    .total_cmp(&(shares[y] - f64::from(b[y])))
                    .then(y.cmp(&x))
            })
            .expect("nonempty");
        b[i] += 1;
        used += 1;
    }
    BitAllocation::new(b, budget)
}

/// Uniformly random composition of the budget into `count` positive parts.
pub fn allocate_bits_ram(budget: u32, count: usize, seed: u64) -> Result<BitAllocation> {
    check_budget(budget, count)?;
    let mut rng = rng_from(seed);
    let mut cuts: Vec<u32> = index::sample(&mut rng, budget as usize - 1, count - 1)
        .into_iter()
        .map(|k| k as u32 + 1)
        .collect();
    cuts.sort_unstable();
    let mut b = Vec::with_capacity(count);
    let mut prev = 0;
    for cut in cuts.into_iter().chain(std::iter::once(budget)) {
        b.push(cut - prev);
        prev = cut;
    }
    BitAllocation::new(b, budget)
}

/// `sum_i omega_i * ||a_i - a'_i||^2`.
pub fn weighted_distortion(a: &FeatureMaps, received: &FeatureMaps, omega: &[f64]) -> Result<f64> {
    if !a.same_shape(received) {
        return Err(Error::ShapeMismatch(
            "transmitted and received feature maps differ in shape".into(),
        ));
    }
    if omega.len() != a.count() {
        return Err(Error::LengthMismatch {
            expected: a.count(),
            actual: omega.len(),
        });
    }
    Ok(omega
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w * a
                .map(i)
                .iter()
                .zip(received.map(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum())
}

/// Task performance minus weighted distortion.
pub fn objective(task_perf: f64, distortion: f64, beta: f64) -> f64 {
    task_perf - beta * distortion
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n, k - 1) {
            for x in 0..n {
                if !p.contains(&x) {
                    let mut q = p.clone();
                    q.push(x);
                    out.push(q);
                }
            }
        }
        out
    }

    fn score(omega: &[f64], gains: &[f64], rho: &[usize]) -> f64 {
        omega.iter().zip(rho).map(|(w, &k)| w * gains[k]).sum()
    }

    #[test]
    fn matching_example() {
        let omega = [3.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0];
        let gains = [0.5, 2.0, 1.0];
        let a = allocate_subcarriers(&omega, &gains).unwrap();
        assert_eq!(a.rho, vec![1, 0, 2]);
        let best = permutations(3, 3)
            .iter()
            .map(|p| score(&omega, &gains, p))
            .fold(f64::MIN, f64::max);
        assert_eq!(score(&omega, &gains, &a.rho), best);
    }

    #[test]
    fn matching_tie_rules() {
        let a = allocate_subcarriers(&[0.25; 4], &[1.0, 3.0, 3.0, 2.0, 0.5]).unwrap();
        assert_eq!(a.rho, vec![1, 2, 3, 0]);
        assert!(allocate_subcarriers(&[0.5; 3], &[1.0; 2]).is_err());
    }

    #[test]
    fn matching_is_optimal() {
        let mut rng = rng_from(17);
        for _ in 0..100 {
            let c = rng.random_range(2..=7);
            let n = rng.random_range(c..=9);
            let omega: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
            let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let a = allocate_subcarriers(&omega, &gains).unwrap();
            a.validate(n).unwrap();
            let best = permutations(n, c)
                .iter()
                .map(|p| score(&omega, &gains, p))
                .fold(f64::MIN, f64::max);
            assert!((score(&omega, &gains, &a.rho) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn framed_matching() {
        let omega = [0.1, 0.4, 0.2, 0.3];
        let a = allocate_subcarriers_framed(&omega, &[1.0, 2.0]).unwrap();
        assert_eq!(a.frame, vec![1, 0, 1, 0]);
        assert_eq!(a.rho, vec![0, 1, 1, 0]);
        assert_eq!(a.n_frames(), 2);
        a.validate(2).unwrap();
    }

    #[test]
    fn eam_cases() {
        assert_eq!(allocate_bits_eam(8, &[0.25; 4]).unwrap().b, vec![2, 2, 2, 2]);
        assert_eq!(
            allocate_bits_eam(9, &[0.2, 0.1, 0.5, 0.2]).unwrap().b,
            vec![2, 2, 3, 2]
        );
        assert_eq!(allocate_bits_eam(4, &[0.25; 4]).unwrap().b, vec![1; 4]);
        assert!(allocate_bits_eam(3, &[0.25; 4]).is_err());
    }

    #[test]
    fn rbam_cases() {
        assert_eq!(allocate_bits_rbam(&[0.2; 5], 10).unwrap().b, vec![2; 5]);
        assert_eq!(allocate_bits_rbam(&[0.5, 0.3, 0.2], 10).unwrap().b, vec![5, 3, 2]);
        assert_eq!(allocate_bits_rbam(&[0.9, 0.05, 0.05], 6).unwrap().b, vec![4, 1, 1]);
        assert!(allocate_bits_rbam(&[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn ram_cases() {
        assert_eq!(allocate_bits_ram(5, 5, 3).unwrap().b, vec![1; 5]);
        assert!(allocate_bits_ram(4, 5, 3).is_err());
        let n = 10_000;
        let mean = (0..n)
            .map(|s| f64::from(allocate_bits_ram(20, 5, s).unwrap().b[0]))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 4.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn ram_is_uniform_over_compositions() {
        // 6 into 3 positive parts has C(5,2) = 10 compositions.
        let mut counts = std::collections::HashMap::new();
        let n = 20_000;
        for s in 0..n {
            *counts.entry(allocate_bits_ram(6, 3, s).unwrap().b).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        for &k in counts.values() {
            assert!((k as f64 - 2000.0).abs() < 200.0, "{k}");
        }
    }

    #[test]
    fn distortion_cases() {
        let a = FeatureMaps::new(2, 1, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(weighted_distortion(&a, &a, &[0.5, 0.5]).unwrap(), 0.0);
        let one = FeatureMaps::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let off = FeatureMaps::new(1, 1, 2, vec![0.0, 0.5]).unwrap();
        assert_eq!(weighted_distortion(&one, &off, &[1.0]).unwrap(), 0.25);
        let wrong = FeatureMaps::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(weighted_distortion(&one, &wrong, &[1.0]).is_err());
    }

    #[test]
    fn distortion_matches_double_loop() {
        let mut rng = rng_from(4);
        let (c, m) = (4, 6);
        let x: Vec<f64> = (0..c * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..c * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut expect = 0.0;
        for i in 0..c {
            for j in 0..m {
                expect += w[i] * (x[i * m + j] - y[i * m + j]).powi(2);
            }
        }
        let a = FeatureMaps::new(c, 2, 3, x).unwrap();
        let b = FeatureMaps::new(c, 2, 3, y).unwrap();
        assert!((weighted_distortion(&a, &b, &w).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn objective_cases() {
        assert_eq!(objective(1.0, 0.0, 0.5), 1.0);
        assert_eq!(objective(0.0, 2.0, 0.5), -1.0);
    }

    proptest! {
        #[test]
        fn allocators_are_feasible(raw in prop::collection::vec(0.0f64..1.0, 1..40), extra in 0u32..200, seed in any::<u64>()) {
            let c = raw.len() as u32;
            let budget = c + extra;
            for alloc in [
                allocate_bits_eam(budget, &raw).unwrap(),
                allocate_bits_rbam(&raw, budget).unwrap(),
                allocate_bits_ram(budget, raw.len(), seed).unwrap(),
            ] {
                prop_assert!(alloc.b.iter().all(|&x| x >= 1));
                prop_assert_eq!(alloc.total(), u64::from(budget));
            }
        }

        #[test]
        fn rbam_is_monotone(raw in prop::collection::vec(0.0f64..1.0, 2..30), extra in 0u32..200) {
            let budget = raw.len() as u32 + extra;
            let b = allocate_bits_rbam(&raw, budget).unwrap().b;
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] > raw[j] {
                        prop_assert!(b[i] >= b[j], "{:?} {:?}", raw, b);
                    }
                }
            }
        }
    }
}
