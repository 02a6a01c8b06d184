//! Closed-form mixtures of unit-covariance Gaussians and the circular toy datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `p(x) = Σ πₖ N(x | μₖ, I)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixtureDensity {
    dim: usize,
    /// Flat `[K, D]` centers.
    centers: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl MixtureDensity {
    /// Weights are normalized to sum to one; they must be non-negative with a
    /// positive total.
    pub fn new(centers: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        if centers.is_empty() || centers.len() != weights.len() {
            return Err(Error::invalid(format!(
                "need one weight per center (got {} centers, {} weights)",
                centers.len(),
                weights.len()
            )));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::invalid("centers must share a non-zero dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("mixture weights sum to zero"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(MixtureDensity {
            dim,
            centers: centers.concat(),
            weights,
            log_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ πₖ μₖ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (k, w) in self.weights.iter().enumerate() {
            for (mj, cj) in m.iter_mut().zip(self.center(k)) {
                *mj += w * cj;
            }
        }
        m
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "log_density",
                left: vec![self.dim],
                right: vec![x.len()],
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("density query point {x:?}")));
        }
        Ok(())
    }

    /// Per-component log terms `log πₖ + log N(x | μₖ, I)` and their maximum.
    fn component_logs(&self, x: &[f64], out: &mut Vec<f64>) -> f64 {
        let norm = -0.5 * self.dim as f64 * (2.0 * PI).ln();
        out.clear();
        let mut max = f64::NEG_INFINITY;
        for (k, lw) in self.log_weights.iter().enumerate() {
            let d2: f64 = x.iter().zip(self.center(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            let l = lw + norm - 0.5 * d2;
            max = max.max(l);
            out.push(l);
        }
        max
    }

    /// `log p(x)` by log-sum-exp with max subtraction.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let mut logs = Vec::with_capacity(self.n_components());
        let max = self.component_logs(x, &mut logs);
        let s: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        Ok(max + s.ln())
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// `∇ log p(x) = Σ rₖ(x)(μₖ − x)` with responsibilities `rₖ`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_density_and_score(x)?.1)
    }

    pub fn log_density_and_score(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let mut logs = Vec::with_capacity(self.n_components());
        let max = self.component_logs(x, &mut logs);
        let mut total = 0.0;
        let mut acc = vec![0.0; self.dim];
        for (k, l) in logs.iter().enumerate() {
            let r = (l - max).exp();
            total += r;
            for ((a, c), xi) in acc.iter_mut().zip(self.center(k)).zip(x) {
                *a += r * (c - xi);
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        Ok((max + total.ln(), acc))
    }

    /// Highest density value, found by mean-shift ascent started from every
    /// center (each fixed point of the iteration is a mode).
    pub fn peak_density(&self) -> f64 {
        let mut best = 0.0f64;
        let mut logs = Vec::with_capacity(self.n_components());
        for k in 0..self.n_components() {
            let mut x = self.center(k).to_vec();
            for _ in 0..100 {
                let max = self.component_logs(&x, &mut logs);
                let mut total = 0.0;
                let mut next = vec![0.0; self.dim];
                for (c, l) in logs.iter().enumerate() {
                    let r = (l - max).exp();
                    total += r;
                    for (nj, cj) in next.iter_mut().zip(self.center(c)) {
                        *nj += r * cj;
                    }
                }
                next.iter_mut().for_each(|v| *v /= total);
                let moved: f64 = next.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                x = next;
                if moved < 1e-24 {
                    break;
                }
            }
            let max = self.component_logs(&x, &mut logs);
            let p = (max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()).exp();
            best = best.max(p);
        }
        best
    }

    /// `n` draws: a component by weight, then a unit-Gaussian offset.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::invalid(format!("mixture weights: {e}")))?;
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let k = pick.sample(&mut rng);
            for &c in self.center(k) {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + z);
            }
        }
        Tensor::matrix(n, self.dim, data)
    }
}

/// Angles `θₖ = kπ/K`, `k = 0..K`, of the half-open semicircle layout.
pub fn arc_angles(components: usize) -> Vec<f64> {
    (0..components)
        .map(|k| k as f64 * PI / components as f64)
        .collect()
}

/// Angle of the line that bisects the arc layout. Reflection across it maps
/// center `k` onto center `K − 1 − k`.
pub fn arc_bisector(components: usize) -> f64 {
    (components as f64 - 1.0) * PI / (2.0 * components as f64)
}

/// Bell-shaped weight profile over the arc: `πₖ ∝ exp(−uₖ²/2s²)` with `uₖ` the
/// angular offset of center `k` from the arc bisector. The width `s` gives a
/// max/min weight ratio of 6 across a full half circle.
pub fn wcg_weights(components: usize) -> Result<Vec<f64>> {
    if components == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    let k_total = components as f64;
    let s = (PI / 2.0) / (2.0 * 6.0f64.ln()).sqrt();
    let raw: Vec<f64> = (0..components)
        .map(|k| {
            // Integer offset keeps the profile exactly mirror-symmetric.
            let off = 2 * k as i64 - (components as i64 - 1);
            let u = off as f64 * PI / (2.0 * k_total);
            (-u * u / (2.0 * s * s)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum DatasetVariant {
    /// Equal weights on the arc.
    Ucg,
    /// Bell-shaped weights peaking at the middle of the arc.
    Wcg,
    Custom {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetSpec {
    pub variant: DatasetVariant,
    pub components: usize,
    pub radius: f64,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            variant: DatasetVariant::Ucg,
            components: 200,
            radius: 8.0,
            seed: 0,
            n_samples: 2000,
        }
    }
}

impl DatasetSpec {
    pub fn ucg(seed: u64) -> Self {
        DatasetSpec {
            seed,
            ..Self::default()
        }
    }

    pub fn wcg(seed: u64) -> Self {
        DatasetSpec {
            variant: DatasetVariant::Wcg,
            seed,
            ..Self::default()
        }
    }

    pub fn density(&self) -> Result<MixtureDensity> {
        let arc = || -> Result<Vec<Vec<f64>>> {
            if self.components == 0 {
                return Err(Error::invalid("component count must be at least 1"));
            }
            if !(self.radius > 0.0) {
                return Err(Error::invalid("radius must be positive"));
            }
            Ok(arc_angles(self.components)
                .into_iter()
                .map(|t| vec![self.radius * t.cos(), self.radius * t.sin()])
                .collect())
        };
        match &self.variant {
            DatasetVariant::Ucg => {
                let w = vec![1.0 / self.components as f64; self.components];
                MixtureDensity::new(&arc()?, &w)
            }
            DatasetVariant::Wcg => MixtureDensity::new(&arc()?, &wcg_weights(self.components)?),
            DatasetVariant::Custom { centers, weights } => MixtureDensity::new(centers, weights),
        }
    }

    pub fn sample(&self) -> Result<Tensor> {
        self.density()?.sample(self.n_samples, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> MixtureDensity {
        MixtureDensity::new(&[vec![0.0, 0.0]], &[1.0]).unwrap()
    }

    #[test]
    fn standard_normal_at_mean() {
        let lp = standard().log_density(&[0.0, 0.0]).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn standard_normal_score() {
        let s = standard().score(&[1.5, -0.25]).unwrap();
        assert!((s[0] + 1.5).abs() < 1e-14 && (s[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn far_points_stay_finite() {
        let d = DatasetSpec::ucg(0).density().unwrap();
        for x in [[50.0, 50.0], [-50.0, -50.0], [0.0, -50.0]] {
            let lp = d.log_density(&x).unwrap();
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn rejects_non_finite_queries() {
        assert!(standard().log_density(&[f64::NAN, 0.0]).is_err());
        assert!(standard().score(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn wcg_profile_shape() {
        let w = wcg_weights(200).unwrap();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for k in 0..200 {
            assert_eq!(w[k], w[199 - k]);
        }
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(w[100], max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max / min - 6.0).abs() < 0.3, "ratio {}", max / min);
    }

    #[test]
    fn sampling_is_seeded() {
        let d = DatasetSpec::ucg(0).density().unwrap();
        assert_eq!(d.sample(10, 7).unwrap(), d.sample(10, 7).unwrap());
        assert_ne!(d.sample(10, 7).unwrap(), d.sample(10, 8).unwrap());
        assert!(d.sample(0, 7).is_err());
    }
}
