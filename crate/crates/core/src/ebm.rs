//! Contrastive-divergence training of [`EnergyModel`] with Langevin negatives
//! and a persistent replay buffer.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{EnergyModel, Parameterized};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// Batched energy and input gradient, the only thing Langevin needs.
pub trait EnergyFn {
    fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

impl EnergyFn for EnergyModel {
    fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        EnergyModel::energy_and_grad(self, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    pub noise: f64,
    /// Chance that a chain starts from the replay buffer instead of a fresh uniform draw.
    pub buffer_prob: f64,
    /// Per-chain cap on the norm of the drift `step_size·∇E`; `None` disables clipping.
    pub max_drift: Option<f64>,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            steps: 100,
            step_size: 1.0,
            noise: 1e-2,
            buffer_prob: 0.95,
            max_drift: Some(0.1),
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("langevin.steps must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("langevin.step_size must be positive"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("langevin.noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.buffer_prob) {
            return Err(Error::invalid("langevin.buffer_prob must lie in [0, 1]"));
        }
        if matches!(self.max_drift, Some(m) if !(m > 0.0)) {
            return Err(Error::invalid("langevin.max_drift must be positive"));
        }
        Ok(())
    }
}

/// Runs `cfg.steps` updates `x ← x − α∇E(x) + ω`, `ω ~ N(0, σ²I)`, on every
/// row of `init`. The result is a plain tensor with no gradient history.
pub fn langevin_sample(
    model: &impl EnergyFn,
    init: &Tensor,
    cfg: &LangevinConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut x = init.clone();
    let (n, d) = (x.rows(), x.cols());
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(format!("{e}")))?;
    for step in 0..cfg.steps {
        let (e, g) = model.energy_and_grad(&x)?;
        for i in 0..n {
            let gi = g.row(i);
            if !e[i].is_finite() || gi.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!(
                    "Langevin step {step}: energy {} at point {:?}",
                    e[i],
                    x.row(i)
                )));
            }
            let mut scale = cfg.step_size;
            if let Some(cap) = cfg.max_drift {
                let norm = gi.iter().map(|v| v * v).sum::<f64>().sqrt() * cfg.step_size;
                if norm > cap {
                    scale *= cap / norm;
                }
            }
            let xi = x.row_mut(i);
            for j in 0..d {
                xi[j] -= scale * gi[j];
                if cfg.noise > 0.0 {
                    xi[j] += noise.sample(rng);
                }
            }
        }
    }
    Ok(x)
}

/// Bounded ring of past negative samples; the oldest entries are overwritten
/// once full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    dim: usize,
    capacity: usize,
    data: Vec<f64>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("replay buffer needs positive capacity and dimension"));
        }
        Ok(ReplayBuffer {
            dim,
            capacity,
            data: Vec::new(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, points: &Tensor) {
        for i in 0..points.rows() {
            let row = points.row(i);
            if self.len() < self.capacity {
                self.data.extend_from_slice(row);
            } else {
                self.data[self.head * self.dim..(self.head + 1) * self.dim].copy_from_slice(row);
                self.head = (self.head + 1) % self.capacity;
            }
        }
    }

    /// One uniformly chosen stored point.
    pub fn draw(&self, rng: &mut impl Rng) -> Option<&[f64]> {
        if self.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.len());
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }
}

/// Scalar parts of a contrastive-divergence loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CdLoss<'t> {
    pub total: Var<'t>,
    pub cd: f64,
    pub reg: f64,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

/// `mean E(x⁺) − mean E(x⁻) + reg_weight·(mean E(x⁺)² + mean E(x⁻)²)`.
///
/// `energy` maps a `[n, D]` batch to `[n]` energies on the tape. Negatives must
/// not carry gradient history.
pub fn cd_loss<'t, F>(energy: F, x_pos: Var<'t>, x_neg: Var<'t>, reg_weight: f64) -> Result<CdLoss<'t>>
where
    F: Fn(Var<'t>) -> Result<Var<'t>>,
{
    if x_neg.requires_grad() {
        return Err(Error::NotDetached {
            what: "negative samples",
        });
    }
    let e_pos = energy(x_pos)?;
    let e_neg = energy(x_neg)?;
    let m_pos = e_pos.mean();
    let m_neg = e_neg.mean();
    let cd = m_pos.sub(m_neg)?;
    let reg = e_pos.square().mean().add(e_neg.square().mean())?;
    let total = cd.add(reg.scale(reg_weight))?;
    Ok(CdLoss {
        total,
        cd: cd.item(),
        reg: reg.item() * reg_weight,
        mean_pos: m_pos.item(),
        mean_neg: m_neg.item(),
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EbmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub reg_weight: f64,
    pub buffer_capacity: usize,
    /// Fractional growth of the data bounding box used for fresh chain starts.
    pub box_inflation: f64,
    /// Training aborts once mean |E| over a batch exceeds this.
    pub divergence_bound: f64,
    pub seed: u64,
}

impl Default for EbmTrainConfig {
    fn default() -> Self {
        EbmTrainConfig {
            steps: 20_000,
            batch_size: 128,
            adam: AdamConfig::default(),
            reg_weight: 1.0,
            buffer_capacity: 10_000,
            box_inflation: 0.2,
            divergence_bound: 1e4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EbmLogRow {
    pub step: usize,
    pub cd_loss: f64,
    pub reg_loss: f64,
    pub mean_e_pos: f64,
    pub mean_e_neg: f64,
}

/// Axis-aligned box `[lo, hi]` per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn of(points: &Tensor) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::invalid("bounding box of an empty point set"));
        }
        let d = points.cols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..points.rows() {
            for (j, &v) in points.row(i).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(BoundingBox { lo, hi })
    }

    /// Grows every side by `frac` of its width, split evenly between both ends.
    pub fn inflate(&self, frac: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let pad = 0.5 * frac * (h - l);
                (l - pad, h + pad)
            })
            .unzip();
        BoundingBox { lo, hi }
    }

    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        for (&l, &h) in self.lo.iter().zip(&self.hi) {
            out.push(if h > l { rng.random_range(l..h) } else { l });
        }
    }
}

/// Trains a fresh model seeded from `cfg.seed`.
pub fn train_ebm(
    data: &Tensor,
    cfg: &EbmTrainConfig,
    langevin: &LangevinConfig,
) -> Result<(EnergyModel, Vec<EbmLogRow>)> {
    let model = EnergyModel::new(data.cols(), cfg.seed);
    train_ebm_from(model, data, cfg, langevin)
}

/// Continues training `model`. With `cfg.steps == 0` the model is returned untouched.
pub fn train_ebm_from(
    mut model: EnergyModel,
    data: &Tensor,
    cfg: &EbmTrainConfig,
    langevin: &LangevinConfig,
) -> Result<(EnergyModel, Vec<EbmLogRow>)> {
    if data.shape().len() != 2 || data.rows() == 0 {
        return Err(Error::invalid("EBM training data must be a non-empty [n, D] batch"));
    }
    if data.cols() != model.dim() {
        return Err(Error::ShapeMismatch {
            op: "train_ebm",
            left: vec![0, model.dim()],
            right: data.shape().to_vec(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("ebm.batch_size must be at least 1"));
    }
    langevin.validate()?;
    let mut opt = Adam::new(cfg.adam)?;
    let mut buffer = ReplayBuffer::new(data.cols(), cfg.buffer_capacity.max(1))?;
    let fresh_box = BoundingBox::of(data)?.inflate(cfg.box_inflation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    let (b, d) = (cfg.batch_size, data.cols());
    let mut tape = Tape::new();

    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.rows())).collect();
        let x_pos = data.select_rows(&idx);

        let mut init = Vec::with_capacity(b * d);
        for _ in 0..b {
            let from_buffer = rng.random::<f64>() < langevin.buffer_prob;
            match buffer.draw(&mut rng).filter(|_| from_buffer) {
                Some(p) => init.extend_from_slice(p),
                None => fresh_box.sample_into(&mut rng, &mut init),
            }
        }
        let init = Tensor::matrix(b, d, init)?;
        let x_neg = langevin_sample(&model, &init, langevin, &mut rng)?;

        tape.clear();
        let grads: Vec<Tensor>;
        let row;
        {
            let params = model.bind(&tape, true);
            let xp = tape.constant(x_pos);
            let xn = tape.constant(x_neg.clone());
            let loss = cd_loss(|x| model.forward_tape(&params, x), xp, xn, cfg.reg_weight)?;
            row = EbmLogRow {
                step,
                cd_loss: loss.cd,
                reg_loss: loss.reg,
                mean_e_pos: loss.mean_pos,
                mean_e_neg: loss.mean_neg,
            };
            let mean_abs = 0.5 * (row.mean_e_pos.abs() + row.mean_e_neg.abs());
            if !loss.total.item().is_finite() || mean_abs > cfg.divergence_bound {
                return Err(Error::Divergence {
                    step,
                    mean_abs_energy: mean_abs,
                    last_good: Box::new(model),
                });
            }
            let g = tape.backward(loss.total)?;
            grads = params
                .iter()
                .map(|p| g.get(*p).cloned().expect("trainable parameter has a gradient"))
                .collect();
        }
        opt.step(model.params_mut(), &grads)?;
        buffer.push(&x_neg);
        log.push(row);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat;
    impl EnergyFn for Flat {
        fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
            Ok((vec![0.0; x.rows()], Tensor::zeros(x.shape())))
        }
    }

    #[test]
    fn flat_energy_without_noise_is_a_no_op() {
        let init = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let cfg = LangevinConfig {
            noise: 0.0,
            steps: 10,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(langevin_sample(&Flat, &init, &cfg, &mut rng).unwrap(), init);
    }

    #[test]
    fn langevin_is_seeded() {
        let m = EnergyModel::new(2, 1);
        let init = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let cfg = LangevinConfig {
            steps: 20,
            ..Default::default()
        };
        let run = |s| langevin_sample(&m, &init, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        let mut buf = ReplayBuffer::new(1, 3).unwrap();
        let mut last = 0;
        for i in 0..5 {
            buf.push(&Tensor::matrix(1, 1, vec![i as f64]).unwrap());
            assert!(buf.len() >= last && buf.len() <= 3);
            last = buf.len();
        }
        let mut seen: Vec<f64> = buf.data.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn cd_loss_rejects_attached_negatives() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        let err = cd_loss(|v| v.sqnorm_rows().reshape(&[2]), x, x, 1.0).unwrap_err();
        assert!(matches!(err, Error::NotDetached { .. }));
    }

    #[test]
    fn zero_steps_returns_the_initial_model() {
        let data = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let cfg = EbmTrainConfig {
            steps: 0,
            seed: 5,
            ..Default::default()
        };
        let (m, log) = train_ebm(&data, &cfg, &LangevinConfig::default()).unwrap();
        assert_eq!(m, EnergyModel::new(2, 5));
        assert!(log.is_empty());
    }

    #[test]
    fn divergence_returns_the_last_good_model() {
        let data = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let cfg = EbmTrainConfig {
            steps: 5,
            batch_size: 4,
            divergence_bound: 1e-12,
            seed: 2,
            ..Default::default()
        };
        let lcfg = LangevinConfig {
            steps: 2,
            ..Default::default()
        };
        match train_ebm(&data, &cfg, &lcfg) {
            Err(Error::Divergence { step, last_good, .. }) => {
                assert_eq!(step, 0);
                assert_eq!(*last_good, EnergyModel::new(2, 2));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
