//! Riemannian metric fields: EBM-derived, density oracles, LAND and RBF, with
//! the affine calibration that maps them onto a common scale.
//!
//! Every field is built from a raw function `h(x)` (scalar, or one entry per
//! coordinate for LAND) and constants `α`, `β`:
//!
//! * direct form: `λ(x) = α·h(x) + β`
//! * inverse form: `λ(x) = (α·h(x) + β)⁻¹`
//!
//! The affine value is floored before use: at [`CLAMP_EPS`] by default, and
//! for calibrated fields at the calibration target on the side where the
//! affine map can overshoot into non-positive values (`g_min` for direct
//! fields, `1/g_max` for inverse ones). Each floor hit increments a counter
//! that evaluation reports surface.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::MixtureDensity;
use crate::error::{Error, Result};
use crate::nets::EnergyModel;
use crate::tensor::Tensor;

/// Default floor applied to the affine value `α·h + β`.
pub const CLAMP_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MetricForm {
    Direct,
    Inverse,
}

/// Kernel-weighted local per-coordinate variance of a reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct LandModel {
    pub points: Tensor,
    pub sigma: f64,
}

impl LandModel {
    pub fn new(points: Tensor, sigma: f64) -> Result<Self> {
        if points.shape().len() != 2 || points.rows() == 0 {
            return Err(Error::invalid("LAND needs a non-empty [n, D] reference set"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("LAND bandwidth must be positive"));
        }
        Ok(LandModel { points, sigma })
    }

    /// `hⱼ(x) = Σᵢ (xᵢⱼ − xⱼ)² exp(−‖x − xᵢ‖²/2σ²)`.
    pub fn h(&self, x: &[f64]) -> Vec<f64> {
        self.h_and_jac(x, false).0
    }

    /// `h` and, if asked, its `D × D` Jacobian `∂hⱼ/∂xₖ` (row-major).
    fn h_and_jac(&self, x: &[f64], with_jac: bool) -> (Vec<f64>, Vec<f64>) {
        let d = x.len();
        let inv2s2 = 1.0 / (2.0 * self.sigma * self.sigma);
        let inv_s2 = 2.0 * inv2s2;
        let mut h = vec![0.0; d];
        let mut jac = vec![0.0; if with_jac { d * d } else { 0 }];
        let mut diff = vec![0.0; d];
        for i in 0..self.points.rows() {
            let p = self.points.row(i);
            let mut d2 = 0.0;
            for k in 0..d {
                diff[k] = p[k] - x[k];
                d2 += diff[k] * diff[k];
            }
            let w = (-d2 * inv2s2).exp();
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                let sq = diff[j] * diff[j] * w;
                h[j] += sq;
                if with_jac {
                    let row = &mut jac[j * d..(j + 1) * d];
                    for k in 0..d {
                        row[k] += sq * diff[k] * inv_s2;
                    }
                    row[j] -= 2.0 * diff[j] * w;
                }
            }
        }
        (h, jac)
    }
}

/// Weighted sum of Gaussian bumps at K-means centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfModel {
    pub centroids: Tensor,
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
    pub kappa: f64,
}

impl RbfModel {
    /// `h(x) = Σₖ wₖ exp(−½ λₖ ‖x − cₖ‖²)`.
    pub fn h(&self, x: &[f64]) -> f64 {
        self.h_and_grad(x, None)
    }

    fn h_and_grad(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut h = 0.0;
        for k in 0..self.centroids.rows() {
            let c = self.centroids.row(k);
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            let term = self.weights[k] * (-0.5 * self.bandwidths[k] * d2).exp();
            h += term;
            if let Some(g) = grad.as_deref_mut() {
                for ((gj, xj), cj) in g.iter_mut().zip(x).zip(c) {
                    *gj -= term * self.bandwidths[k] * (xj - cj);
                }
            }
        }
        h
    }

    /// Design matrix `A[i, k] = exp(−½ λₖ ‖xᵢ − cₖ‖²)`.
    fn design(&self, data: &Tensor) -> DMatrix<f64> {
        let k = self.centroids.rows();
        DMatrix::from_fn(data.rows(), k, |i, j| {
            let d2: f64 = data
                .row(i)
                .iter()
                .zip(self.centroids.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-0.5 * self.bandwidths[j] * d2).exp()
        })
    }
}

/// Lloyd's algorithm with k-means++ seeding. Returns `[k, D]` centroids and
/// the final assignment of every point.
pub fn kmeans(data: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, d) = (data.rows(), data.cols());
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "K-means needs 1 ≤ K ≤ N (K = {k}, N = {n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqdist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    centroids.extend_from_slice(data.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| sqdist(data.row(i), &centroids[..d])).collect();
    for c in 1..k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(&mut rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.random_range(0..n),
        };
        centroids.extend_from_slice(data.row(next));
        let new_c = &centroids[c * d..(c + 1) * d];
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sqdist(data.row(i), new_c));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let x = data.row(i);
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let dd = sqdist(x, &centroids[c * d..(c + 1) * d]);
                if dd < best.0 {
                    best = (dd, c);
                }
            }
            if *a != best.1 {
                *a = best.1;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            let dst = &mut centroids[c * d..(c + 1) * d];
            if counts[c] == 0 {
                dst.copy_from_slice(data.row(rng.random_range(0..n)));
                changed = true;
            } else {
                for (o, s) in dst.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *o = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok((Tensor::matrix(k, d, centroids)?, assign))
}

/// Bandwidths `λₖ = ½ (κ/(2K) Σⱼ ‖cⱼ − cₖ‖)⁻²` from centroid inter-distances.
pub fn rbf_bandwidths(centroids: &Tensor, kappa: f64) -> Result<Vec<f64>> {
    let k = centroids.rows();
    (0..k)
        .map(|a| {
            let total: f64 = (0..k)
                .map(|b| {
                    centroids
                        .row(a)
                        .iter()
                        .zip(centroids.row(b))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            let scale = kappa / (2.0 * k as f64) * total;
            if !(scale > 0.0) {
                return Err(Error::invalid(
                    "RBF bandwidth undefined: all centroids coincide (need K ≥ 2 distinct centroids)",
                ));
            }
            Ok(0.5 / (scale * scale))
        })
        .collect()
}

/// K-means centroids, inter-distance bandwidths, then weights minimising
/// `Σᵢ (1 − h(xᵢ))²` (with a tiny ridge for conditioning).
pub fn fit_rbf(data: &Tensor, k: usize, kappa: f64, seed: u64) -> Result<RbfModel> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("RBF kappa must be positive"));
    }
    let (centroids, _) = kmeans(data, k, seed, 100)?;
    let bandwidths = if k == 1 {
        vec![1.0]
    } else {
        rbf_bandwidths(&centroids, kappa)?
    };
    let mut model = RbfModel {
        centroids,
        bandwidths,
        weights: vec![0.0; k],
        kappa,
    };
    let a = model.design(data);
    let ata = a.transpose() * &a;
    let rhs = a.transpose() * DVector::from_element(data.rows(), 1.0);
    let mut ridge = 1e-10 * ata.trace().max(1e-300) / k as f64;
    for _ in 0..20 {
        let reg = &ata + DMatrix::identity(k, k) * ridge;
        if let Some(ch) = reg.cholesky() {
            model.weights = ch.solve(&rhs).iter().copied().collect();
            return Ok(model);
        }
        ridge *= 10.0;
    }
    Err(Error::non_finite("RBF weight system is not positive definite"))
}

/// The scalar or diagonal field a metric is built on.
#[derive(Clone, Debug, PartialEq)]
pub enum RawField {
    /// `h = E_θ(x)`, direct form.
    Energy(EnergyModel),
    /// `h = exp(−E_θ(x))`, inverse form.
    EnergyExp(EnergyModel),
    /// `h = −log p(x)`, direct form.
    NegLogDensity(MixtureDensity),
    /// `h = p(x)`, inverse form.
    Density(MixtureDensity),
    /// Diagonal LAND field, inverse form.
    Land(LandModel),
    /// RBF density surrogate, inverse form.
    Rbf(RbfModel),
    /// `h ≡ c`, direct form; with `α = 1, β = 0` this is `c·I`.
    Constant { value: f64, dim: usize },
}

impl RawField {
    pub fn form(&self) -> MetricForm {
        match self {
            RawField::Energy(_) | RawField::NegLogDensity(_) | RawField::Constant { .. } => {
                MetricForm::Direct
            }
            _ => MetricForm::Inverse,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RawField::Energy(m) | RawField::EnergyExp(m) => m.dim(),
            RawField::NegLogDensity(d) | RawField::Density(d) => d.dim(),
            RawField::Land(l) => l.points.cols(),
            RawField::Rbf(r) => r.centroids.cols(),
            RawField::Constant { dim, .. } => *dim,
        }
    }

    /// Number of metric entries per point: `D` for LAND, 1 otherwise.
    pub fn width(&self) -> usize {
        match self {
            RawField::Land(l) => l.points.cols(),
            _ => 1,
        }
    }

    /// `h` for a `[n, D]` batch, shaped `[n, width]`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.eval_impl(x, false)?.0)
    }

    /// `h` and its flat `n × width × D` Jacobian.
    pub fn eval_with_grad(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.eval_impl(x, true)
    }

    fn eval_impl(&self, x: &Tensor, with_grad: bool) -> Result<(Tensor, Vec<f64>)> {
        let d = self.dim();
        if x.shape().len() != 2 || x.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "metric_eval",
                left: vec![0, d],
                right: x.shape().to_vec(),
            });
        }
        let n = x.rows();
        let w = self.width();
        let mut h = Vec::with_capacity(n * w);
        let mut jac = if with_grad { Vec::with_capacity(n * w * d) } else { Vec::new() };
        match self {
            RawField::Energy(m) | RawField::EnergyExp(m) => {
                let exp_form = matches!(self, RawField::EnergyExp(_));
                if with_grad {
                    let (e, g) = m.energy_and_grad(x)?;
                    for i in 0..n {
                        let (hv, s) = if exp_form { ((-e[i]).exp(), -(-e[i]).exp()) } else { (e[i], 1.0) };
                        h.push(hv);
                        jac.extend(g.row(i).iter().map(|gi| s * gi));
                    }
                } else {
                    let e = m.energy(x)?;
                    h.extend(e.into_iter().map(|v| if exp_form { (-v).exp() } else { v }));
                }
            }
            RawField::NegLogDensity(dens) | RawField::Density(dens) => {
                let as_density = matches!(self, RawField::Density(_));
                for i in 0..n {
                    let (lp, score) = dens.log_density_and_score(x.row(i))?;
                    if as_density {
                        let p = lp.exp();
                        h.push(p);
                        if with_grad {
                            jac.extend(score.iter().map(|s| p * s));
                        }
                    } else {
                        h.push(-lp);
                        if with_grad {
                            jac.extend(score.iter().map(|s| -s));
                        }
                    }
                }
            }
            RawField::Land(l) => {
                for i in 0..n {
                    let (hv, jv) = l.h_and_jac(x.row(i), with_grad);
                    h.extend(hv);
                    jac.extend(jv);
                }
            }
            RawField::Rbf(r) => {
                let mut g = vec![0.0; d];
                for i in 0..n {
                    g.fill(0.0);
                    h.push(r.h_and_grad(x.row(i), if with_grad { Some(&mut g) } else { None }));
                    if with_grad {
                        jac.extend_from_slice(&g);
                    }
                }
            }
            RawField::Constant { value, .. } => {
                h.resize(n, *value);
                if with_grad {
                    jac.resize(n * d, 0.0);
                }
            }
        }
        Ok((Tensor::matrix(n, w, h)?, jac))
    }

    /// Mean of `h` over every point and every entry of `x`.
    pub fn mean_h(&self, x: &Tensor) -> Result<f64> {
        let h = self.eval(x)?;
        Ok(h.data().iter().sum::<f64>() / h.len() as f64)
    }
}

/// On-manifold points (pair endpoints) and off-manifold points (pair
/// midpoints) with the target metric magnitudes on each.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSets {
    pub on_manifold: Tensor,
    pub off_manifold: Tensor,
    pub g_min: f64,
    pub g_max: f64,
}

impl CalibrationSets {
    /// Draws `n_pairs` index pairs uniformly from `data`; both endpoints go
    /// on-manifold and the straight-line midpoint goes off-manifold.
    pub fn from_pairs(data: &Tensor, n_pairs: usize, seed: u64, g_min: f64, g_max: f64) -> Result<Self> {
        if n_pairs == 0 || data.rows() == 0 {
            return Err(Error::invalid("calibration needs at least one pair of data points"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = data.cols();
        let mut on = Vec::with_capacity(2 * n_pairs * d);
        let mut off = Vec::with_capacity(n_pairs * d);
        for _ in 0..n_pairs {
            let a = data.row(rng.random_range(0..data.rows()));
            let b = data.row(rng.random_range(0..data.rows()));
            on.extend_from_slice(a);
            on.extend_from_slice(b);
            off.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
        }
        Self::new(
            Tensor::matrix(2 * n_pairs, d, on)?,
            Tensor::matrix(n_pairs, d, off)?,
            g_min,
            g_max,
        )
    }

    pub fn new(on_manifold: Tensor, off_manifold: Tensor, g_min: f64, g_max: f64) -> Result<Self> {
        if on_manifold.rows() == 0 || off_manifold.rows() == 0 {
            return Err(Error::invalid("calibration sets must be non-empty"));
        }
        if !(g_min > 0.0 && g_max > 0.0) {
            return Err(Error::invalid("calibration targets must be positive"));
        }
        Ok(CalibrationSets {
            on_manifold,
            off_manifold,
            g_min,
            g_max,
        })
    }

    /// The values the affine part `α·h + β` must average to on and off the
    /// manifold: `(g_min, g_max)` for direct fields, reciprocals for inverse ones.
    pub fn affine_targets(&self, form: MetricForm) -> (f64, f64) {
        match form {
            MetricForm::Direct => (self.g_min, self.g_max),
            MetricForm::Inverse => (1.0 / self.g_min, 1.0 / self.g_max),
        }
    }

    /// Floor for the affine value of a field calibrated on these sets.
    pub fn affine_floor(&self, form: MetricForm) -> f64 {
        match form {
            MetricForm::Direct => self.g_min,
            MetricForm::Inverse => 1.0 / self.g_max,
        }
    }
}

/// Solves for `(α, β)` so that the mean of `α·h + β` hits the form's targets
/// on both calibration sets.
pub fn calibrate(raw: &RawField, sets: &CalibrationSets) -> Result<(f64, f64)> {
    let on = raw.mean_h(&sets.on_manifold)?;
    let off = raw.mean_h(&sets.off_manifold)?;
    calibrate_means(on, off, raw.form(), sets)
}

/// [`calibrate`] from precomputed means.
pub fn calibrate_means(mean_on: f64, mean_off: f64, form: MetricForm, sets: &CalibrationSets) -> Result<(f64, f64)> {
    let gap = mean_off - mean_on;
    let scale = mean_on.abs().max(mean_off.abs());
    if !gap.is_finite() || gap.abs() <= 1e-12 * scale || gap == 0.0 {
        return Err(Error::DegenerateCalibration {
            mean_on_manifold: mean_on,
            mean_off_manifold: mean_off,
        });
    }
    let (t_on, t_off) = sets.affine_targets(form);
    let alpha = (t_off - t_on) / gap;
    let beta = t_on - alpha * mean_on;
    Ok((alpha, beta))
}

/// A metric `G(x)` ready for geodesic computation.
#[derive(Debug)]
pub struct MetricField {
    pub name: String,
    pub raw: RawField,
    pub alpha: f64,
    pub beta: f64,
    /// Lower bound applied to `α·h + β`; defaults to [`CLAMP_EPS`].
    pub floor: f64,
    clamps: AtomicUsize,
}

impl Clone for MetricField {
    fn clone(&self) -> Self {
        MetricField {
            name: self.name.clone(),
            raw: self.raw.clone(),
            alpha: self.alpha,
            beta: self.beta,
            floor: self.floor,
            clamps: AtomicUsize::new(self.clamp_count()),
        }
    }
}

impl MetricField {
    pub fn new(name: impl Into<String>, raw: RawField, alpha: f64, beta: f64) -> Self {
        MetricField {
            name: name.into(),
            raw,
            alpha,
            beta,
            floor: CLAMP_EPS,
            clamps: AtomicUsize::new(0),
        }
    }

    /// `α = 1, β = 0`: the raw field itself (or its reciprocal).
    pub fn uncalibrated(name: impl Into<String>, raw: RawField) -> Self {
        Self::new(name, raw, 1.0, 0.0)
    }

    pub fn calibrated(name: impl Into<String>, raw: RawField, sets: &CalibrationSets) -> Result<Self> {
        let (alpha, beta) = calibrate(&raw, sets)?;
        let floor = sets.affine_floor(raw.form());
        Ok(Self::new(name, raw, alpha, beta).with_floor(floor))
    }

    /// Euclidean metric `G = I`.
    pub fn euclidean(dim: usize) -> Self {
        Self::uncalibrated("euclidean", RawField::Constant { value: 1.0, dim })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn form(&self) -> MetricForm {
        self.raw.form()
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn is_diagonal(&self) -> bool {
        self.width() > 1
    }

    /// Same field multiplied by `c > 0` everywhere.
    pub fn scaled(&self, c: f64) -> Self {
        let (a, b, f) = match self.form() {
            MetricForm::Direct => (self.alpha * c, self.beta * c, self.floor * c),
            MetricForm::Inverse => (self.alpha / c, self.beta / c, self.floor / c),
        };
        Self::new(format!("{}*{c}", self.name), self.raw.clone(), a, b).with_floor(f)
    }

    pub fn clamp_count(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_clamp_count(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }

    /// Mean of the unfloored affine value `α·h + β` over `x`.
    pub fn affine_mean(&self, x: &Tensor) -> Result<f64> {
        Ok(self.alpha * self.raw.mean_h(x)? + self.beta)
    }

    /// Metric entries for a batch, `[n, width]`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.raw.eval(x)?;
        let mut clamped = 0;
        let out = h
            .data()
            .iter()
            .map(|&hv| {
                let (lam, _, c) = self.apply(hv);
                clamped += c as usize;
                lam
            })
            .collect();
        self.clamps.fetch_add(clamped, Ordering::Relaxed);
        Tensor::matrix(x.rows(), self.width(), out)
    }

    /// Metric entries at one point.
    pub fn eval_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(&Tensor::matrix(1, x.len(), x.to_vec())?)?.into_data())
    }

    /// Metric entries and their flat `n × width × D` Jacobian.
    pub fn eval_with_grad(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (h, mut jac) = self.raw.eval_with_grad(x)?;
        let d = self.dim();
        let mut clamped = 0;
        let mut out = Vec::with_capacity(h.len());
        for (e, &hv) in h.data().iter().enumerate() {
            let (lam, dlam_dh, c) = self.apply(hv);
            clamped += c as usize;
            out.push(lam);
            jac[e * d..(e + 1) * d].iter_mut().for_each(|g| *g *= dlam_dh);
        }
        self.clamps.fetch_add(clamped, Ordering::Relaxed);
        if out.iter().any(|v| !v.is_finite()) || jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("metric {} evaluation", self.name)));
        }
        Ok((Tensor::matrix(x.rows(), self.width(), out)?, jac))
    }

    /// `(λ, dλ/dh, clamped)` for one raw value.
    fn apply(&self, h: f64) -> (f64, f64, bool) {
        let a = self.alpha * h + self.beta;
        let clamped = !(a >= self.floor);
        let a_eff = if clamped { self.floor } else { a };
        let da = if clamped { 0.0 } else { self.alpha };
        match self.form() {
            MetricForm::Direct => (a_eff, da, clamped),
            MetricForm::Inverse => (1.0 / a_eff, -da / (a_eff * a_eff), clamped),
        }
    }
}

/// `(G_E, G_1/p)` oracle pair built on the exact density and calibrated on `sets`.
pub fn oracle_metrics(density: &MixtureDensity, sets: &CalibrationSets) -> Result<(MetricField, MetricField)> {
    let log_form = MetricField::calibrated("G_E_M", RawField::NegLogDensity(density.clone()), sets)?;
    let inv_form = MetricField::calibrated("G_1/p_M", RawField::Density(density.clone()), sets)?;
    Ok((log_form, inv_form))
}
