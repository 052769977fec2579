//! Semantic importance.
//!
//! Task relevance `g` pools the logit gradients over the map and class
//! dimensions; inter-feature relevance `v` is the mean absolute cosine
//! similarity of a map to every other map; the importance is their product,
//! normalized to a probability vector.

use crate::semcodec::{encode, grad_logits_wrt_features, CodecParams, FeatureMaps};
use crate::{Error, Result};

/// Gradient of every logit with respect to every feature entry, laid out as
/// `[class][map][entry]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradients {
    pub n_classes: usize,
    pub c: usize,
    pub map_len: usize,
    pub values: Vec<f64>,
}

impl FeatureGradients {
    pub fn new(n_classes: usize, c: usize, map_len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_classes * c * map_len {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient values for {n_classes}x{c}x{map_len}",
                values.len()
            )));
        }
        Ok(Self {
            n_classes,
            c,
            map_len,
            values,
        })
    }

    /// Gradients of the codec's logits at `a`.
    pub fn of(a: &FeatureMaps, params: &CodecParams) -> Result<Self> {
        Self::new(
            params.shape.n_classes,
            a.count(),
            a.map_len(),
            grad_logits_wrt_features(a, params)?,
        )
    }

    fn pooled(&self, classes: impl Iterator<Item = usize> + Clone, count: usize) -> Vec<f64> {
        let scale = 1.0 / (self.map_len * count) as f64;
        (0..self.c)
            .map(|k| {
                classes
                    .clone()
                    .map(|n| {
                        let start = (n * self.c + k) * self.map_len;
                        self.values[start..start + self.map_len].iter().sum::<f64>()
                    })
                    .sum::<f64>()
                    * scale
            })
            .collect()
    }

    /// Signed pooled gradient per map, averaged over every class.
    pub fn pooled_signed(&self) -> Vec<f64> {
        self.pooled(0..self.n_classes, self.n_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    /// Normalized `g * v`.
    pub omega: Vec<f64>,
}

impl ImportanceWeights {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Uniform weights over `c` semantics.
    pub fn uniform(c: usize) -> Self {
        Self {
            g: vec![1.0; c],
            v: vec![1.0; c],
            omega: vec![1.0 / c as f64; c],
        }
    }
}

/// `g_k = |mean over classes and map entries of d logit / d A^k|`.
pub fn str_weights(grads: &FeatureGradients) -> Vec<f64> {
    grads.pooled_signed().into_iter().map(f64::abs).collect()
}

/// Task relevance from a single class's logit only.
pub fn str_weights_for_class(grads: &FeatureGradients, class: usize) -> Result<Vec<f64>> {
    if class >= grads.n_classes {
        return Err(Error::Config(format!(
            "class {class} out of range for {} classes",
            grads.n_classes
        )));
    }
    Ok(grads
        .pooled(std::iter::once(class), 1)
        .into_iter()
        .map(f64::abs)
        .collect())
}

/// Task relevance for a trained codec, computed once over a set of inputs:
/// the signed pooled gradients are averaged across inputs before the
/// magnitude is taken.
pub fn offline_str(params: &CodecParams, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::Empty("inputs for task relevance"));
    }
    let mut acc = vec![0.0; params.shape.c];
    for x in inputs {
        let a = encode(x, params)?;
        for (s, p) in acc.iter_mut().zip(FeatureGradients::of(&a, params)?.pooled_signed()) {
            *s += p;
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s / inputs.len() as f64).abs())
        .collect())
}

/// Cosine similarity of two flattened maps; zero when either has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `v_k = mean_{j != k} |sim(A^k, A^j)|`.
pub fn isr_weights(a: &FeatureMaps) -> Result<Vec<f64>> {
    let c = a.count();
    if c < 2 {
        return Err(Error::Config(format!(
            "inter-feature relevance needs at least two maps, got {c}"
        )));
    }
    let mut sim = vec![0.0; c * c];
    for k in 0..c {
        for j in k + 1..c {
            let s = cosine_similarity(a.map(k), a.map(j))?.abs();
            sim[k * c + j] = s;
            sim[j * c + k] = s;
        }
    }
    Ok(sim
        .chunks_exact(c)
        .map(|row| row.iter().sum::<f64>() / (c - 1) as f64)
        .collect())
}

/// `omega = g * v / sum(g * v)`, uniform when every product is zero.
pub fn combine(g: &[f64], v: &[f64]) -> Result<ImportanceWeights> {
    if g.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: g.len(),
            actual: v.len(),
        });
    }
    if g.is_empty() {
        return Err(Error::Empty("importance weights"));
    }
    let raw: Vec<f64> = g.iter().zip(v).map(|(a, b)| a * b).collect();
    let total: f64 = raw.iter().sum();
    let omega = if total > 0.0 && total.is_finite() {
        raw.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / g.len() as f64; g.len()]
    };
    Ok(ImportanceWeights {
        g: g.to_vec(),
        v: v.to_vec(),
        omega,
    })
}

/// Importance using task relevance only (`v = 1`).
pub fn str_only(g: &[f64]) -> Result<ImportanceWeights> {
    combine(g, &vec![1.0; g.len()])
}

/// Full per-input importance from stored task relevance `g`.
pub fn evaluate(a: &FeatureMaps, g: &[f64]) -> Result<ImportanceWeights> {
    if g.len() != a.count() {
        return Err(Error::LengthMismatch {
            expected: a.count(),
            actual: g.len(),
        });
    }
    combine(g, &isr_weights(a)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grads(n: usize, c: usize, m: usize, seed: u64) -> FeatureGradients {
        let mut rng = rng_from(seed);
        let values = (0..n * c * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureGradients::new(n, c, m, values).unwrap()
    }

    #[test]
    fn constant_gradient() {
        let g = FeatureGradients::new(2, 3, 4, vec![-0.7; 24]).unwrap();
        assert!(str_weights(&g).iter().all(|&x| (x - 0.7).abs() < 1e-15));
        let z = FeatureGradients::new(2, 3, 4, vec![0.0; 24]).unwrap();
        assert!(str_weights(&z).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn str_matches_triple_loop() {
        // N=2, C=3, W=2, H=2
        let grads = random_grads(2, 3, 4, 5);
        let g = str_weights(&grads);
        for k in 0..3 {
            let mut s = 0.0;
            for n in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        s += grads.values[n * 12 + k * 4 + i * 2 + j];
                    }
                }
            }
            assert!((g[k] - (s / 8.0).abs()).abs() < 1e-15);
        }
        let per_class = str_weights_for_class(&grads, 1).unwrap();
        for k in 0..3 {
            let s: f64 = grads.values[12 + k * 4..12 + k * 4 + 4].iter().sum();
            assert!((per_class[k] - (s / 4.0).abs()).abs() < 1e-15);
        }
        assert!(str_weights_for_class(&grads, 2).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[0.3, -0.2], &[0.3, -0.2]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - 0.70711).abs() < 1e-5);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn isr_cases() {
        let same = FeatureMaps::new(3, 1, 2, vec![0.5, 0.2, 0.5, 0.2, 0.5, 0.2]).unwrap();
        assert!(isr_weights(&same).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let ortho = FeatureMaps::new(3, 1, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert!(isr_weights(&ortho).unwrap().iter().all(|&v| v == 0.0));
        let single = FeatureMaps::new(1, 1, 2, vec![0.1, 0.2]).unwrap();
        assert!(isr_weights(&single).is_err());
    }

    #[test]
    fn isr_matches_brute_force() {
        let mut rng = rng_from(9);
        let values: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = FeatureMaps::new(3, 2, 2, values.clone()).unwrap();
        let v = isr_weights(&a).unwrap();
        for k in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                if j == k {
                    continue;
                }
                let (x, y) = (&values[k * 4..k * 4 + 4], &values[j * 4..j * 4 + 4]);
                let dot: f64 = (0..4).map(|i| x[i] * y[i]).sum();
                let nx: f64 = (0..4).map(|i| x[i] * x[i]).sum::<f64>().sqrt();
                let ny: f64 = (0..4).map(|i| y[i] * y[i]).sum::<f64>().sqrt();
                acc += (dot / (nx * ny)).abs();
            }
            assert!((v[k] - acc / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn combine_cases() {
        let u = combine(&[1.0; 4], &[1.0; 4]).unwrap();
        assert!(u.omega.iter().all(|&w| w == 0.25));
        let one = combine(&[0.0, 3.0, 0.0], &[1.0, 2.0, 5.0]).unwrap();
        assert_eq!(one.omega, vec![0.0, 1.0, 0.0]);
        let w = combine(&[1.0, 2.0], &[3.0, 1.0]).unwrap();
        assert!((w.omega[0] - 0.6).abs() < 1e-15 && (w.omega[1] - 0.4).abs() < 1e-15);
        let z = combine(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.omega, vec![0.5, 0.5]);
        assert!(combine(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn omega_is_a_probability_vector(g in prop::collection::vec(0.0f64..5.0, 2..40), seed in any::<u64>()) {
            let mut rng = rng_from(seed);
            let v: Vec<f64> = g.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let w = combine(&g, &v).unwrap();
            prop_assert!(w.omega.iter().all(|&x| x >= 0.0));
            prop_assert!((w.omega.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn isr_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = rng_from(seed);
            let values: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = FeatureMaps::new(5, 2, 2, values.clone()).unwrap();
            let mut scaled = values.clone();
            for x in &mut scaled[8..12] {
                *x *= scale;
            }
            let b = FeatureMaps::new(5, 2, 2, scaled).unwrap();
            for (x, y) in isr_weights(&a).unwrap().iter().zip(isr_weights(&b).unwrap()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn gradient_scaling_keeps_ranking(seed in any::<u64>(), scale in 0.1f64..10.0) {
            let grads = random_grads(3, 6, 4, seed);
            let scaled = FeatureGradients::new(3, 6, 4, grads.values.iter().map(|x| x * scale).collect()).unwrap();
            let v = vec![0.3, 0.9, 0.5, 0.7, 0.2, 0.4];
            let order = |w: &ImportanceWeights| {
                let mut idx: Vec<usize> = (0..6).collect();
                idx.sort_by(|&a, &b| w.omega[b].partial_cmp(&w.omega[a]).unwrap().then(a.cmp(&b)));
                idx
            };
            let g1 = str_weights(&grads);
            let g2 = str_weights(&scaled);
            for (a, b) in g1.iter().zip(&g2) {
                prop_assert!((a * scale - b).abs() < 1e-12);
            }
            let w1 = combine(&g1, &v).unwrap();
            let w2 = combine(&g2, &v).unwrap();
            for (a, b) in w1.omega.iter().zip(&w2.omega) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(order(&w1), order(&w2));
        }
    }
}
