//! Discrete geodesics: path representation, the kinetic-energy objective and
//! three solvers that minimise it.
//!
//! * [`train_interpolant`]: one network `φ` amortised over endpoint pairs,
//!   paths `x_t = (1−t)x₀ + t·x₁ + 2t(1−t)φ(x₀, x₁, t)`.
//! * [`optimize_waypoints`]: per-pair descent on the interior points.
//! * [`shoot_geodesic`]: RK4 integration of the geodesic ODE of the conformal
//!   metric `p(x)⁻¹·I`, with Newton iterations on the initial velocity.
//!
//! All three minimise `E = ½ Σₜ ẋₜᵀ G(xₜ) ẋₜ Δt` with forward differences
//! `ẋₜ = (xₜ₊₁ − xₜ)/Δt` over `t = 0..T−2`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::density::MixtureDensity;
use crate::error::{Error, Result};
use crate::metric::MetricField;
use crate::nets::{InterpolantNet, Parameterized};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// Uniform grid `t_k = k/(T−1)`, `k = 0..T`, with exact endpoints 0 and 1.
pub fn time_grid(t_count: usize) -> Result<Vec<f64>> {
    if t_count < 2 {
        return Err(Error::invalid("a path needs at least two time steps"));
    }
    let last = (t_count - 1) as f64;
    Ok((0..t_count).map(|k| k as f64 / last).collect())
}

/// A `[T, D]` polyline sampled on the uniform time grid over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPath {
    points: Tensor,
}

impl GeodesicPath {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.shape().len() != 2 || points.rows() < 2 {
            return Err(Error::invalid(format!(
                "a path must be [T ≥ 2, D], got {:?}",
                points.shape()
            )));
        }
        Ok(GeodesicPath { points })
    }

    pub fn straight(x0: &[f64], x1: &[f64], t_count: usize) -> Result<Self> {
        let phi = Tensor::zeros(&[t_count, x0.len()]);
        assemble_path(x0, x1, &phi)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }

    /// Number of grid points `T`.
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    pub fn point(&self, t: usize) -> &[f64] {
        self.points.row(t)
    }

    pub fn start(&self) -> &[f64] {
        self.point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    /// Forward-difference velocities, `[T−1, D]`.
    pub fn velocities(&self) -> Tensor {
        let (t, d) = (self.len(), self.dim());
        let inv_dt = (t - 1) as f64;
        let mut v = Vec::with_capacity((t - 1) * d);
        for k in 0..t - 1 {
            let (a, b) = (self.point(k), self.point(k + 1));
            v.extend(a.iter().zip(b).map(|(x, y)| (y - x) * inv_dt));
        }
        Tensor::matrix(t - 1, d, v).expect("shape")
    }

    /// Euclidean step lengths `‖xₜ₊₁ − xₜ‖`.
    pub fn step_sizes(&self) -> Vec<f64> {
        (0..self.len() - 1)
            .map(|k| {
                self.point(k)
                    .iter()
                    .zip(self.point(k + 1))
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    pub fn euclidean_length(&self) -> f64 {
        self.step_sizes().iter().sum()
    }

    /// Riemannian speeds `‖ẋₜ‖_{G(xₜ)}` for `t = 0..T−2`.
    pub fn speeds(&self, metric: &MetricField) -> Result<Vec<f64>> {
        let lam = self.left_metric(metric)?;
        let v = self.velocities();
        let w = metric.width();
        Ok((0..v.rows())
            .map(|k| {
                let l = lam.row(k);
                v.row(k)
                    .iter()
                    .enumerate()
                    .map(|(j, vj)| l[if w == 1 { 0 } else { j }] * vj * vj)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Discrete `½ Σ ẋᵀ G ẋ Δt`.
    pub fn kinetic_energy(&self, metric: &MetricField) -> Result<f64> {
        let dt = self.dt();
        Ok(0.5 * dt * self.speeds(metric)?.iter().map(|s| s * s).sum::<f64>())
    }

    /// Discrete `Σ ‖ẋ‖_G Δt`.
    pub fn riemannian_length(&self, metric: &MetricField) -> Result<f64> {
        Ok(self.dt() * self.speeds(metric)?.iter().sum::<f64>())
    }

    /// The same polyline resampled so every segment has equal Riemannian
    /// length, measured as in [`speeds`](Self::speeds). One pass only
    /// approximately equalises the speeds, since the metric moves with the
    /// points.
    pub fn reparametrized(&self, metric: &MetricField) -> Result<Self> {
        let (t, d) = (self.len(), self.dim());
        let speeds = self.speeds(metric)?;
        let mut cum = Vec::with_capacity(t);
        cum.push(0.0);
        for s in &speeds {
            cum.push(cum[cum.len() - 1] + s);
        }
        let total = cum[t - 1];
        if !(total > 0.0) {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(t * d);
        out.extend_from_slice(self.start());
        let mut seg = 0;
        for k in 1..t - 1 {
            let target = total * k as f64 / (t - 1) as f64;
            while seg < t - 2 && cum[seg + 1] < target {
                seg += 1;
            }
            let u = if speeds[seg] > 0.0 {
                ((target - cum[seg]) / speeds[seg]).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (a, b) = (self.point(seg), self.point(seg + 1));
            out.extend(a.iter().zip(b).map(|(p, q)| p + u * (q - p)));
        }
        out.extend_from_slice(self.end());
        GeodesicPath::new(Tensor::matrix(t, d, out)?)
    }

    /// Same points traversed from `x₁` to `x₀`.
    pub fn reversed(&self) -> Self {
        let idx: Vec<usize> = (0..self.len()).rev().collect();
        GeodesicPath {
            points: self.points.select_rows(&idx),
        }
    }

    /// Metric at the left end of every segment, `[T−1, width]`.
    fn left_metric(&self, metric: &MetricField) -> Result<Tensor> {
        check_dim(metric, self.dim())?;
        let idx: Vec<usize> = (0..self.len() - 1).collect();
        metric.eval(&self.points.select_rows(&idx))
    }
}

fn check_dim(metric: &MetricField, d: usize) -> Result<()> {
    if metric.dim() != d {
        return Err(Error::ShapeMismatch {
            op: "kinetic_energy",
            left: vec![metric.dim()],
            right: vec![d],
        });
    }
    Ok(())
}

/// `x_t = (1−t)x₀ + t·x₁ + 2t(1−t)φ_t` on the uniform grid of `phi`'s rows.
/// The endpoints are reproduced exactly whatever `φ` holds.
pub fn assemble_path(x0: &[f64], x1: &[f64], phi: &Tensor) -> Result<GeodesicPath> {
    let d = x0.len();
    if x1.len() != d || phi.shape().len() != 2 || phi.cols() != d {
        return Err(Error::ShapeMismatch {
            op: "assemble_path",
            left: vec![d],
            right: phi.shape().to_vec(),
        });
    }
    if !phi.all_finite() {
        return Err(Error::non_finite("interpolant correction φ"));
    }
    let ts = time_grid(phi.rows())?;
    let mut pts = Vec::with_capacity(ts.len() * d);
    for (k, &t) in ts.iter().enumerate() {
        let bump = 2.0 * t * (1.0 - t);
        for j in 0..d {
            pts.push((1.0 - t) * x0[j] + t * x1[j] + bump * phi.row(k)[j]);
        }
    }
    GeodesicPath::new(Tensor::matrix(ts.len(), d, pts)?)
}

/// Kinetic energy of one path (plain value).
pub fn kinetic_energy(path: &GeodesicPath, metric: &MetricField) -> Result<f64> {
    path.kinetic_energy(metric)
}

/// Summed kinetic energy of `n_paths` paths stacked pair-major in `points`
/// (`[n_paths·T, D]`, row `b·T + k`). Differentiable in `points`.
pub fn kinetic_energy_tape<'t>(
    points: Var<'t>,
    n_paths: usize,
    t_count: usize,
    metric: &MetricField,
) -> Result<Var<'t>> {
    let shape = points.shape();
    if shape.len() != 2 || shape[0] != n_paths * t_count || t_count < 2 {
        return Err(Error::ShapeMismatch {
            op: "kinetic_energy",
            left: vec![n_paths * t_count, metric.dim()],
            right: shape,
        });
    }
    check_dim(metric, shape[1])?;
    let mut cur = Vec::with_capacity(n_paths * (t_count - 1));
    for b in 0..n_paths {
        cur.extend((0..t_count - 1).map(|k| b * t_count + k));
    }
    let next: Vec<usize> = cur.iter().map(|i| i + 1).collect();
    let dt = 1.0 / (t_count - 1) as f64;
    let left = points.gather_rows(&cur)?;
    let vel = points.gather_rows(&next)?.sub(left)?.scale(1.0 / dt);
    let lam = left.map_rows(metric.width(), |x| metric.eval_with_grad(x))?;
    let m = cur.len();
    let weighted = if metric.width() == 1 {
        lam.reshape(&[m])?.mul(vel.sqnorm_rows())?
    } else {
        lam.mul(vel.square())?
    };
    Ok(weighted.sum().scale(0.5 * dt))
}

/// Kinetic energy, its gradient with respect to every path point, and the
/// left-point metric `[T−1, width]`.
fn energy_grad_metric(points: &Tensor, metric: &MetricField) -> Result<(f64, Tensor, Tensor)> {
    let (t, d) = (points.rows(), points.cols());
    check_dim(metric, d)?;
    let w = metric.width();
    let inv_dt = (t - 1) as f64;
    let idx: Vec<usize> = (0..t - 1).collect();
    let (lam, jac) = metric.eval_with_grad(&points.select_rows(&idx))?;
    let mut e = 0.0;
    let mut g = vec![0.0; t * d];
    for k in 0..t - 1 {
        let (a, b) = (points.row(k), points.row(k + 1));
        let l = lam.row(k);
        for j in 0..d {
            let dj = b[j] - a[j];
            let lj = l[if w == 1 { 0 } else { j }];
            e += 0.5 * lj * dj * dj * inv_dt;
            g[k * d + j] -= lj * dj * inv_dt;
            g[(k + 1) * d + j] += lj * dj * inv_dt;
        }
        // ∂λ/∂xₖ contributions.
        for o in 0..w {
            let coef = if w == 1 {
                0.5 * inv_dt * (0..d).map(|j| (b[j] - a[j]) * (b[j] - a[j])).sum::<f64>()
            } else {
                0.5 * inv_dt * (b[o] - a[o]) * (b[o] - a[o])
            };
            let jr = &jac[(k * w + o) * d..(k * w + o + 1) * d];
            for j in 0..d {
                g[k * d + j] += coef * jr[j];
            }
        }
    }
    Ok((e, Tensor::matrix(t, d, g)?, lam))
}

/// Kinetic energy and its gradient with respect to every path point.
pub fn kinetic_energy_and_grad(points: &Tensor, metric: &MetricField) -> Result<(f64, Tensor)> {
    let (e, g, _) = energy_grad_metric(points, metric)?;
    Ok((e, g))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WaypointConfig {
    pub t_steps: usize,
    pub max_iters: usize,
    /// Stop once the relative energy decrease stays below this for a few iterations.
    pub rel_tol: f64,
    /// Rounds of constant-speed resampling followed by another descent.
    pub reparam_cycles: usize,
}

impl Default for WaypointConfig {
    fn default() -> Self {
        WaypointConfig {
            t_steps: 100,
            max_iters: 2000,
            rel_tol: 1e-9,
            reparam_cycles: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WaypointOutcome {
    pub path: GeodesicPath,
    pub energy: f64,
    pub initial_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the descent hit a non-finite value and returned the best iterate.
    pub warning: Option<String>,
}

/// Solves `A p = r` for a symmetric positive tridiagonal `A` given by its
/// diagonal and off-diagonal (Thomas algorithm).
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let c = scratch;
    let mut denom = diag[0];
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / denom;
        }
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Descends the kinetic energy over the interior points of a path that
/// starts as the straight line from `x0` to `x1`. Endpoints stay fixed.
///
/// Each step is preconditioned by the energy's Hessian with the metric frozen
/// (a metric-weighted path Laplacian, tridiagonal per coordinate) and accepted
/// by Armijo backtracking, so the energy never increases.
pub fn optimize_waypoints(x0: &[f64], x1: &[f64], metric: &MetricField, cfg: &WaypointConfig) -> Result<WaypointOutcome> {
    let init = GeodesicPath::straight(x0, x1, cfg.t_steps)?;
    optimize_waypoints_from(init, metric, cfg)
}

const RESAMPLE_PASSES: usize = 5;

/// [`optimize_waypoints`] from an arbitrary initial path.
///
/// Descent alone can stall with points pinned where the metric has a kink
/// (a calibration floor), leaving uneven speeds. After each descent the path
/// is resampled to constant speed and descended again, for as long as the
/// resampled path has lower energy.
pub fn optimize_waypoints_from(init: GeodesicPath, metric: &MetricField, cfg: &WaypointConfig) -> Result<WaypointOutcome> {
    let mut out = descend(init, metric, cfg)?;
    for _ in 0..cfg.reparam_cycles {
        let mut even = out.path.reparametrized(metric)?;
        for _ in 1..RESAMPLE_PASSES {
            even = even.reparametrized(metric)?;
        }
        let e = even.kinetic_energy(metric)?;
        if !(e < out.energy) {
            break;
        }
        let next = descend(even, metric, cfg)?;
        out = WaypointOutcome {
            initial_energy: out.initial_energy,
            iterations: out.iterations + next.iterations,
            warning: next.warning.or(out.warning),
            ..next
        };
    }
    Ok(out)
}

fn descend(init: GeodesicPath, metric: &MetricField, cfg: &WaypointConfig) -> Result<WaypointOutcome> {
    let (t, d) = (init.len(), init.dim());
    let w = metric.width();
    let inv_dt = (t - 1) as f64;
    let mut x = init.into_points();
    let (mut e, mut g, mut lam) = energy_grad_metric(&x, metric)?;
    let initial_energy = e;
    let mut iterations = 0;
    let mut converged = t <= 2;
    let mut warning = None;
    let mut quiet = 0;
    let n = t.saturating_sub(2);
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut dir = vec![0.0; n * d];
    let mut rhs = vec![0.0; n];
    let mut scratch = Vec::new();

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        for j in 0..d {
            let col = if w == 1 { 0 } else { j };
            for i in 0..n {
                // Interior node i + 1 touches segments i and i + 1.
                diag[i] = (lam.row(i)[col] + lam.row(i + 1)[col]) * inv_dt;
                if i + 1 < n {
                    off[i] = -lam.row(i + 1)[col] * inv_dt;
                }
                rhs[i] = g.row(i + 1)[j];
            }
            solve_tridiagonal(&diag, &off, &mut rhs, &mut scratch);
            for i in 0..n {
                dir[i * d + j] = rhs[i];
            }
        }
        let slope: f64 = (0..n)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| g.row(i + 1)[j] * dir[i * d + j])
            .sum();
        if !(slope > 0.0) || slope <= 1e-300 {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = x.clone();
            for i in 0..n {
                for j in 0..d {
                    trial.row_mut(i + 1)[j] -= step * dir[i * d + j];
                }
            }
            match energy_grad_metric(&trial, metric) {
                Ok((et, gt, lt)) if et.is_finite() && et <= e - 1e-4 * step * slope => {
                    accepted = Some((trial, et, gt, lt));
                    break;
                }
                Ok(_) => {}
                Err(Error::NonFinite { context }) => warning = Some(context),
                Err(other) => return Err(other),
            }
            step *= 0.5;
        }
        let Some((xn, en, gn, ln)) = accepted else {
            // No decrease along a descent direction: stationary to working precision.
            converged = true;
            break;
        };
        let rel = (e - en) / e.abs().max(1e-300);
        x = xn;
        e = en;
        g = gn;
        lam = ln;
        quiet = if rel < cfg.rel_tol { quiet + 1 } else { 0 };
        if quiet >= 3 {
            converged = true;
        }
    }
    Ok(WaypointOutcome {
        path: GeodesicPath::new(x)?,
        energy: e,
        initial_energy,
        iterations,
        converged,
        warning,
    })
}

/// Endpoint pairs for interpolant training.
#[derive(Clone, Debug)]
pub enum EndpointSampler {
    /// Both endpoints drawn independently and uniformly from the pool rows.
    Pool(Tensor),
    /// Batches drawn uniformly from a fixed list of pairs.
    Pairs { x0: Tensor, x1: Tensor },
}

impl EndpointSampler {
    fn dim(&self) -> usize {
        match self {
            EndpointSampler::Pool(p) => p.cols(),
            EndpointSampler::Pairs { x0, .. } => x0.cols(),
        }
    }

    fn draw(&self, b: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        match self {
            EndpointSampler::Pool(p) => {
                if p.rows() == 0 {
                    return Err(Error::invalid("endpoint pool is empty"));
                }
                let i: Vec<usize> = (0..b).map(|_| rng.random_range(0..p.rows())).collect();
                let j: Vec<usize> = (0..b).map(|_| rng.random_range(0..p.rows())).collect();
                Ok((p.select_rows(&i), p.select_rows(&j)))
            }
            EndpointSampler::Pairs { x0, x1 } => {
                if x0.rows() == 0 || x0.shape() != x1.shape() {
                    return Err(Error::invalid("endpoint pair lists must be non-empty and equal in shape"));
                }
                let i: Vec<usize> = (0..b).map(|_| rng.random_range(0..x0.rows())).collect();
                Ok((x0.select_rows(&i), x1.select_rows(&i)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct InterpolantTrainConfig {
    pub t_steps: usize,
    pub batch_pairs: usize,
    pub adam: AdamConfig,
    pub steps: usize,
    pub seed: u64,
}

impl Default for InterpolantTrainConfig {
    fn default() -> Self {
        InterpolantTrainConfig {
            t_steps: 100,
            batch_pairs: 32,
            adam: AdamConfig::default(),
            steps: 10_000,
            seed: 0,
        }
    }
}

/// Trains `net` to minimise the mean kinetic energy of its paths over random
/// endpoint batches. Returns the trained network and the per-step mean energy.
pub fn train_interpolant(
    mut net: InterpolantNet,
    sampler: &EndpointSampler,
    metric: &MetricField,
    cfg: &InterpolantTrainConfig,
) -> Result<(InterpolantNet, Vec<f64>)> {
    let d = net.dim();
    if sampler.dim() != d || metric.dim() != d {
        return Err(Error::ShapeMismatch {
            op: "train_interpolant",
            left: vec![d],
            right: vec![sampler.dim(), metric.dim()],
        });
    }
    if cfg.batch_pairs == 0 {
        return Err(Error::invalid("interpolant.batch_pairs must be at least 1"));
    }
    let ts = time_grid(cfg.t_steps)?;
    let (b, t) = (cfg.batch_pairs, cfg.t_steps);
    let mut coeff = Vec::with_capacity(b * t * d);
    for _ in 0..b {
        for &tk in &ts {
            coeff.extend(core::iter::repeat_n(2.0 * tk * (1.0 - tk), d));
        }
    }
    let coeff = Tensor::matrix(b * t, d, coeff)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam)?;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut tape = Tape::new();

    for step in 0..cfg.steps {
        let (x0, x1) = sampler.draw(b, &mut rng)?;
        let inputs = net.inputs(&x0, &x1, &ts)?;
        let mut base = Vec::with_capacity(b * t * d);
        for i in 0..b {
            for &tk in &ts {
                base.extend(x0.row(i).iter().zip(x1.row(i)).map(|(a, c)| (1.0 - tk) * a + tk * c));
            }
        }
        let base = Tensor::matrix(b * t, d, base)?;

        tape.clear();
        let grads: Vec<Tensor>;
        {
            let params = net.bind(&tape, true);
            let phi = net.forward_tape(&params, tape.constant(inputs))?;
            let pts = tape.constant(base).add(phi.mul(tape.constant(coeff.clone()))?)?;
            let loss = kinetic_energy_tape(pts, b, t, metric)?.scale(1.0 / b as f64);
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::non_finite(format!(
                    "interpolant loss at step {step} under metric {}",
                    metric.name
                )));
            }
            log.push(value);
            let g = tape.backward(loss)?;
            grads = params
                .iter()
                .map(|p| g.get(*p).cloned().expect("trainable parameter has a gradient"))
                .collect();
        }
        opt.step(net.params_mut(), &grads)?;
    }
    Ok((net, log))
}

/// Paths produced by `net` for each row pair of `x0`, `x1`.
pub fn interpolant_paths(net: &InterpolantNet, x0: &Tensor, x1: &Tensor, t_count: usize) -> Result<Vec<GeodesicPath>> {
    let ts = time_grid(t_count)?;
    let inputs = net.inputs(x0, x1, &ts)?;
    let phi = net.phi_rows(&inputs);
    (0..x0.rows())
        .map(|i| {
            let rows: Vec<usize> = (i * t_count..(i + 1) * t_count).collect();
            assemble_path(x0.row(i), x1.row(i), &phi.select_rows(&rows))
        })
        .collect()
}

/// Acceleration of a geodesic of the conformal metric `p(x)⁻¹·I`:
/// `ẍ = ⟨s, v⟩ v − ½ ‖v‖² s` with `s = ∇ log p(x)`.
pub fn geodesic_ode_rhs(velocity: &[f64], score: &[f64]) -> Vec<f64> {
    let sv: f64 = score.iter().zip(velocity).map(|(a, b)| a * b).sum();
    let vv: f64 = velocity.iter().map(|v| v * v).sum();
    velocity
        .iter()
        .zip(score)
        .map(|(v, s)| sv * v - 0.5 * vv * s)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ShootingConfig {
    pub t_steps: usize,
    /// RK4 sub-steps per output grid interval.
    pub substeps: usize,
    pub restarts: usize,
    pub newton_iters: usize,
    /// Required endpoint miss `‖γ(1) − x₁‖`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            t_steps: 100,
            substeps: 8,
            restarts: 20,
            newton_iters: 40,
            tol: 1e-3,
            seed: 0,
        }
    }
}

/// Integrates the conformal geodesic ODE from `(x0, v0)` over `t ∈ [0, 1]`,
/// recording the `T` grid points.
fn integrate(x0: &[f64], v0: &[f64], score: &dyn Fn(&[f64]) -> Result<Vec<f64>>, t_count: usize, substeps: usize) -> Result<Vec<f64>> {
    let d = x0.len();
    let n = (t_count - 1) * substeps;
    let h = 1.0 / n as f64;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut out = Vec::with_capacity(t_count * d);
    out.extend_from_slice(&x);
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    for i in 0..n {
        let a1 = geodesic_ode_rhs(&v, &score(&x)?);
        let (x2, v2) = (axpy(&x, 0.5 * h, &v), axpy(&v, 0.5 * h, &a1));
        let a2 = geodesic_ode_rhs(&v2, &score(&x2)?);
        let (x3, v3) = (axpy(&x, 0.5 * h, &v2), axpy(&v, 0.5 * h, &a2));
        let a3 = geodesic_ode_rhs(&v3, &score(&x3)?);
        let (x4, v4) = (axpy(&x, h, &v3), axpy(&v, h, &a3));
        let a4 = geodesic_ode_rhs(&v4, &score(&x4)?);
        for j in 0..d {
            x[j] += h / 6.0 * (v[j] + 2.0 * v2[j] + 2.0 * v3[j] + v4[j]);
            v[j] += h / 6.0 * (a1[j] + 2.0 * a2[j] + 2.0 * a3[j] + a4[j]);
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::non_finite("geodesic ODE state"));
        }
        if (i + 1) % substeps == 0 {
            out.extend_from_slice(&x);
        }
    }
    Ok(out)
}

/// Shoots from `x0` with Newton iterations (finite-difference Jacobian) on the
/// initial velocity until `γ(1)` lands within `cfg.tol` of `x1`. Restarts
/// perturb the straight-line velocity; among converged shots the one with the
/// lowest kinetic energy under `p⁻¹·I` wins. The returned path ends exactly
/// at `x1`.
pub fn shoot_geodesic(x0: &[f64], x1: &[f64], density: &MixtureDensity, cfg: &ShootingConfig) -> Result<GeodesicPath> {
    let score = |x: &[f64]| density.score(x);
    let metric_energy = |pts: &[f64]| -> Result<f64> {
        let d = x0.len();
        let t = pts.len() / d;
        let inv_dt = (t - 1) as f64;
        let mut e = 0.0;
        for k in 0..t - 1 {
            let a = &pts[k * d..(k + 1) * d];
            let b = &pts[(k + 1) * d..(k + 2) * d];
            let dd: f64 = a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum();
            e += 0.5 * dd * inv_dt / density.density(a)?;
        }
        Ok(e)
    };
    shoot_with(x0, x1, &score, &metric_energy, cfg)
}

/// Shooting against an arbitrary score field; `energy` ranks converged shots.
pub fn shoot_with(
    x0: &[f64],
    x1: &[f64],
    score: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    energy: &dyn Fn(&[f64]) -> Result<f64>,
    cfg: &ShootingConfig,
) -> Result<GeodesicPath> {
    let d = x0.len();
    if x1.len() != d || d == 0 {
        return Err(Error::invalid("shooting endpoints must share a non-zero dimension"));
    }
    if cfg.t_steps < 2 || cfg.substeps == 0 || cfg.restarts == 0 {
        return Err(Error::invalid("shooting needs t_steps ≥ 2 and positive substeps and restarts"));
    }
    let t = cfg.t_steps;
    let chord: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    let chord_len = chord.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let miss_of = |pts: &[f64]| -> Vec<f64> { pts[(t - 1) * d..].iter().zip(x1).map(|(a, b)| a - b).collect() };
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_miss = f64::INFINITY;
    for r in 0..cfg.restarts {
        let mut v0 = chord.clone();
        if r > 0 {
            let spread = 0.5 * chord_len.max(1e-3) * r as f64 / cfg.restarts as f64;
            for c in v0.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += spread * z;
            }
        }
        let Ok(mut pts) = integrate(x0, &v0, score, t, cfg.substeps) else {
            continue;
        };
        let mut miss = miss_of(&pts);
        for _ in 0..cfg.newton_iters {
            let m = norm(&miss);
            if m <= 1e-11 * (1.0 + chord_len) {
                break;
            }
            let mut jac = DMatrix::zeros(d, d);
            let mut ok = true;
            for k in 0..d {
                let h = 1e-6 * (1.0 + v0[k].abs());
                let (mut vp, mut vm) = (v0.clone(), v0.clone());
                vp[k] += h;
                vm[k] -= h;
                match (integrate(x0, &vp, score, t, cfg.substeps), integrate(x0, &vm, score, t, cfg.substeps)) {
                    (Ok(pp), Ok(pm)) => {
                        let (fp, fm) = (miss_of(&pp), miss_of(&pm));
                        for i in 0..d {
                            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
                        }
                    }
                    _ => ok = false,
                }
            }
            if !ok {
                break;
            }
            let Some(delta) = jac.lu().solve(&DVector::from_column_slice(&miss)) else {
                break;
            };
            // Damped Newton: halve until the miss shrinks.
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = v0.iter().zip(delta.iter()).map(|(v, dv)| v - step * dv).collect();
                if let Ok(p) = integrate(x0, &trial, score, t, cfg.substeps) {
                    let mt = miss_of(&p);
                    if norm(&mt) < m {
                        v0 = trial;
                        pts = p;
                        miss = mt;
                        improved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let m = norm(&miss);
        best_miss = best_miss.min(m);
        if m <= cfg.tol {
            let last = pts.len() - d;
            pts[last..].copy_from_slice(x1);
            let e = energy(&pts)?;
            if best.as_ref().is_none_or(|(be, _)| e < *be) {
                best = Some((e, pts));
            }
        }
    }
    match best {
        Some((_, pts)) => GeodesicPath::new(Tensor::matrix(t, d, pts)?),
        None => Err(Error::ShootingFailed {
            restarts: cfg.restarts,
            best_miss,
        }),
    }
}
