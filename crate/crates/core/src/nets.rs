//! The energy MLP with a quadratic output head and the geodesic interpolant MLP.
//!
//! Both networks have two evaluation paths: a recorded path on a [`Tape`]
//! (used for parameter gradients) and a plain batched path that also returns
//! input gradients (used by Langevin sampling and by metric fields). Tests pin
//! the two paths to each other and to finite differences.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;

use crate::autodiff::{sigmoid, silu, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_bt_into, matmul_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

/// Affine layer `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Fan-in scaled uniform init, `U(-1/√in, 1/√in)` for weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Linear {
            weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("shape"),
            bias: Tensor::vector(draw(fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward_into(&self, x: &[f64], n: usize, out: &mut [f64]) {
        let (k, m) = (self.fan_in(), self.fan_out());
        matmul_into(x, self.weight.data(), n, k, m, out);
        let b = self.bias.data();
        for row in out.chunks_mut(m) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
    }

    fn forward_tape<'t>(&self, w: Var<'t>, b: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let _ = self;
        x.matmul(w)?.add(b)
    }
}

/// Feed-forward stack; `acts[i]` follows `layers[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub acts: Vec<Activation>,
}

/// Per-layer inputs and pre-activations kept for the manual backward pass.
struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").fan_out()
    }

    fn forward_cached(&self, x: &[f64], n: usize) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let mut z = vec![0.0; n * layer.fan_out()];
            layer.forward_into(&h, n, &mut z);
            let out = match act {
                Activation::Silu => z.iter().map(|&v| silu(v)).collect(),
                Activation::Identity => z.clone(),
            };
            cache.inputs.push(core::mem::replace(&mut h, out));
            cache.pre.push(z);
        }
        (h, cache)
    }

    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let mut z = vec![0.0; n * layer.fan_out()];
            layer.forward_into(&h, n, &mut z);
            if *act == Activation::Silu {
                z.iter_mut().for_each(|v| *v = silu(*v));
            }
            h = z;
        }
        h
    }

    /// Pulls `grad_out` (`[n, out]`) back to the input (`[n, in]`).
    fn backward_input(&self, cache: &MlpCache, grad_out: Vec<f64>, n: usize) -> Vec<f64> {
        let mut g = grad_out;
        for (l, (layer, act)) in self.layers.iter().zip(&self.acts).enumerate().rev() {
            if *act == Activation::Silu {
                for (gi, &z) in g.iter_mut().zip(&cache.pre[l]) {
                    let s = sigmoid(z);
                    *gi *= s * (1.0 + z * (1.0 - s));
                }
            }
            let (k, m) = (layer.fan_in(), layer.fan_out());
            let mut gin = vec![0.0; n * k];
            matmul_bt_into(&g, layer.weight.data(), n, k, m, &mut gin);
            g = gin;
        }
        let _ = &cache.inputs;
        g
    }

    fn forward_tape<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, (layer, act)) in self.layers.iter().zip(&self.acts).enumerate() {
            h = layer.forward_tape(params[2 * i], params[2 * i + 1], h)?;
            if *act == Activation::Silu {
                h = h.silu();
            }
        }
        Ok(h)
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
    }
}

/// Common parameter plumbing for the two networks.
pub trait Parameterized {
    /// Architecture string stored in checkpoints; two models with equal
    /// descriptors have identical parameter names and shapes.
    fn descriptor(&self) -> String;
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records every parameter on `tape` in `named_params` order.
    fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Overwrites parameters from `(name, tensor)` pairs; every name must be
    /// present with the expected shape.
    fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if arrays.len() != expected.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                arrays.len()
            )));
        }
        let mut ordered = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let found = arrays
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("missing parameter array {name}")))?;
            if found.1.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "load_named",
                    left: shape.clone(),
                    right: found.1.shape().to_vec(),
                });
            }
            ordered.push(found.1.clone());
        }
        for (dst, src) in self.params_mut().into_iter().zip(ordered) {
            *dst = src;
        }
        Ok(())
    }
}

/// Energy network: SiLU trunk followed by three linear heads combined as
/// `f1(z)·f2(z) + f3(z²)`, where `z` is the trunk output and `z²` its
/// elementwise square.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub trunk: Mlp,
    pub heads: [Linear; 3],
}

pub const ENERGY_WIDTH: usize = 32;
/// Hidden SiLU blocks after the input layer.
pub const ENERGY_HIDDEN_BLOCKS: usize = 4;

impl EnergyModel {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ENERGY_WIDTH;
        let mut layers = vec![Linear::init(dim, w, &mut rng)];
        let mut acts = vec![Activation::Silu];
        for _ in 0..ENERGY_HIDDEN_BLOCKS {
            layers.push(Linear::init(w, w, &mut rng));
            acts.push(Activation::Silu);
        }
        layers.push(Linear::init(w, w, &mut rng));
        acts.push(Activation::Identity);
        let heads = [
            Linear::init(w, 1, &mut rng),
            Linear::init(w, 1, &mut rng),
            Linear::init(w, 1, &mut rng),
        ];
        EnergyModel {
            trunk: Mlp { layers, acts },
            heads,
        }
    }

    /// Same architecture with every parameter zero.
    pub fn zeroed(dim: usize) -> Self {
        let mut m = Self::new(dim, 0);
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.trunk.in_dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "energy_forward",
                left: vec![0, self.dim()],
                right: x.shape().to_vec(),
            });
        }
        Ok(x.rows())
    }

    fn heads_forward(&self, z: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w = self.trunk.out_dim();
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        let mut f3 = vec![0.0; n];
        let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
        self.heads[0].forward_into(z, n, &mut f1);
        self.heads[1].forward_into(z, n, &mut f2);
        self.heads[2].forward_into(&z2, n, &mut f3);
        debug_assert_eq!(z.len(), n * w);
        (f1, f2, f3)
    }

    /// Energies of a `[n, D]` batch.
    pub fn energy(&self, x: &Tensor) -> Result<Vec<f64>> {
        let n = self.check_input(x)?;
        let z = self.trunk.forward(x.data(), n);
        let (f1, f2, f3) = self.heads_forward(&z, n);
        Ok((0..n).map(|i| f1[i] * f2[i] + f3[i]).collect())
    }

    /// Energies and `∇ₓE` (`[n, D]`) of a batch.
    pub fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let n = self.check_input(x)?;
        let (z, cache) = self.trunk.forward_cached(x.data(), n);
        let (f1, f2, f3) = self.heads_forward(&z, n);
        let w = self.trunk.out_dim();
        let (w1, w2, w3) = (
            self.heads[0].weight.data(),
            self.heads[1].weight.data(),
            self.heads[2].weight.data(),
        );
        let mut gz = vec![0.0; n * w];
        for i in 0..n {
            let zr = &z[i * w..(i + 1) * w];
            let gr = &mut gz[i * w..(i + 1) * w];
            for j in 0..w {
                gr[j] = f2[i] * w1[j] + f1[i] * w2[j] + 2.0 * zr[j] * w3[j];
            }
        }
        let gx = self.trunk.backward_input(&cache, gz, n);
        let e = (0..n).map(|i| f1[i] * f2[i] + f3[i]).collect();
        Ok((e, Tensor::matrix(n, self.dim(), gx)?))
    }

    /// Recorded forward pass: `params` from [`Parameterized::bind`], `x` is `[n, D]`.
    /// Returns `[n]` energies.
    pub fn forward_tape<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "energy_forward",
                left: vec![0, self.dim()],
                right: xs,
            });
        }
        let nt = 2 * self.trunk.layers.len();
        let z = self.trunk.forward_tape(&params[..nt], x)?;
        let h = &params[nt..];
        let f1 = self.heads[0].forward_tape(h[0], h[1], z)?;
        let f2 = self.heads[1].forward_tape(h[2], h[3], z)?;
        let f3 = self.heads[2].forward_tape(h[4], h[5], z.square())?;
        let e = f1.mul(f2)?.add(f3)?;
        e.reshape(&[xs[0]])
    }
}

impl Parameterized for EnergyModel {
    fn descriptor(&self) -> String {
        format!(
            "energy-mlp:dim={}:width={}:hidden={}:head=quadratic",
            self.dim(),
            self.trunk.out_dim(),
            self.trunk.layers.len() - 2
        )
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.trunk.named("trunk", &mut out);
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head.f{}.weight", i + 1), &h.weight));
            out.push((format!("head.f{}.bias", i + 1), &h.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.trunk.tensors_mut(&mut out);
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }
}

pub const INTERPOLANT_WIDTHS: [usize; 4] = [32, 64, 64, 32];

/// Correction network `φ(x₀, x₁, t)` for interpolated paths. Input is the
/// concatenation `[x₀, x₁, t]` of width `2D + 1`, output width `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolantNet {
    pub mlp: Mlp,
}

impl InterpolantNet {
    /// Hidden layers use fan-in uniform init; the output layer starts at zero so
    /// the initial paths are straight lines.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut acts = Vec::new();
        let mut prev = 2 * dim + 1;
        for &w in &INTERPOLANT_WIDTHS {
            layers.push(Linear::init(prev, w, &mut rng));
            acts.push(Activation::Silu);
            prev = w;
        }
        layers.push(Linear::zeros(prev, dim));
        acts.push(Activation::Identity);
        InterpolantNet {
            mlp: Mlp { layers, acts },
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Network inputs for every (pair, time) combination, pair-major:
    /// row `b·T + k` holds `[x0_b, x1_b, t_k]`.
    pub fn inputs(&self, x0: &Tensor, x1: &Tensor, ts: &[f64]) -> Result<Tensor> {
        let d = self.dim();
        if x0.shape() != x1.shape() || x0.shape().len() != 2 || x0.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "interpolant_forward",
                left: x0.shape().to_vec(),
                right: x1.shape().to_vec(),
            });
        }
        if ts.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("time grid must lie in [0, 1]"));
        }
        let b = x0.rows();
        let w = 2 * d + 1;
        let mut data = Vec::with_capacity(b * ts.len() * w);
        for i in 0..b {
            for &t in ts {
                data.extend_from_slice(x0.row(i));
                data.extend_from_slice(x1.row(i));
                data.push(t);
            }
        }
        Tensor::matrix(b * ts.len(), w, data)
    }

    /// `φ` on a prepared input batch (see [`InterpolantNet::inputs`]); `[n, D]`.
    pub fn phi_rows(&self, inputs: &Tensor) -> Tensor {
        let n = inputs.rows();
        let out = self.mlp.forward(inputs.data(), n);
        Tensor::matrix(n, self.dim(), out).expect("shape")
    }

    /// `φ(x₀, x₁, t)` for a batch of pairs over a time grid, shaped `[T, B, D]`.
    pub fn forward(&self, x0: &Tensor, x1: &Tensor, ts: &[f64]) -> Result<Tensor> {
        let inputs = self.inputs(x0, x1, ts)?;
        let rows = self.phi_rows(&inputs);
        let (b, t, d) = (x0.rows(), ts.len(), self.dim());
        let mut out = vec![0.0; t * b * d];
        for i in 0..b {
            for k in 0..t {
                let src = rows.row(i * t + k);
                out[(k * b + i) * d..(k * b + i + 1) * d].copy_from_slice(src);
            }
        }
        Tensor::new(vec![t, b, d], out)
    }

    pub fn forward_tape<'t>(&self, params: &[Var<'t>], inputs: Var<'t>) -> Result<Var<'t>> {
        self.mlp.forward_tape(params, inputs)
    }
}

impl Parameterized for InterpolantNet {
    fn descriptor(&self) -> String {
        let widths: Vec<String> = self.mlp.layers[..self.mlp.layers.len() - 1]
            .iter()
            .map(|l| l.fan_out().to_string())
            .collect();
        format!("interpolant-mlp:dim={}:widths={}", self.dim(), widths.join("-"))
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.mlp.named("mlp", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.mlp.tensors_mut(&mut out);
        out
    }
}

/// Parses a descriptor produced by either network and builds a zero-filled
/// model of that architecture.
pub fn model_from_descriptor(desc: &str) -> Result<AnyModel> {
    let dim = desc
        .split(':')
        .find_map(|f| f.strip_prefix("dim="))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::invalid(format!("unrecognized architecture descriptor {desc:?}")))?;
    if desc.starts_with("energy-mlp:") {
        let m = EnergyModel::zeroed(dim);
        if m.descriptor() != desc {
            return Err(Error::invalid(format!("unsupported energy architecture {desc:?}")));
        }
        Ok(AnyModel::Energy(m))
    } else if desc.starts_with("interpolant-mlp:") {
        let mut m = InterpolantNet::new(dim, 0);
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        if m.descriptor() != desc {
            return Err(Error::invalid(format!(
                "unsupported interpolant architecture {desc:?}"
            )));
        }
        Ok(AnyModel::Interpolant(m))
    } else {
        Err(Error::invalid(format!("unrecognized architecture descriptor {desc:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Energy(EnergyModel),
    Interpolant(InterpolantNet),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_heads_give_zero_energy() {
        let mut m = EnergyModel::new(2, 3);
        for h in &mut m.heads {
            h.weight.data_mut().fill(0.0);
            h.bias.data_mut().fill(0.0);
        }
        let e = m.energy(&batch(&[[1.0, 2.0], [-5.0, 0.3], [100.0, -40.0]])).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_equals_stacked_rows() {
        let m = EnergyModel::new(2, 11);
        let x = batch(&[[0.3, -1.2], [4.0, 2.5]]);
        let both = m.energy(&x).unwrap();
        for i in 0..2 {
            let one = m.energy(&x.select_rows(&[i])).unwrap();
            assert_eq!(one[0], both[i]);
        }
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let m = EnergyModel::new(2, 5);
        let x = batch(&[[0.3, -1.2], [4.0, 2.5], [-7.0, 1.0]]);
        let plain = m.energy(&x).unwrap();
        let tape = Tape::new();
        let p = m.bind(&tape, false);
        let xv = tape.param(x.clone());
        let e = m.forward_tape(&p, xv).unwrap();
        for (a, b) in e.value().data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = tape.backward(e.sum()).unwrap();
        let (_, gx) = m.energy_and_grad(&x).unwrap();
        for (a, b) in g.get(xv).unwrap().data().iter().zip(gx.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let m = EnergyModel::new(2, 8);
        let x = batch(&[[1.5, -0.5]]);
        let (_, g) = m.energy_and_grad(&x).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            let fd = (m.energy(&xp).unwrap()[0] - m.energy(&xm).unwrap()[0]) / (2.0 * h);
            let rel = (fd - g.data()[j]).abs() / g.data()[j].abs().max(1e-8);
            assert!(rel < 1e-6, "rel {rel}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = EnergyModel::new(2, 1);
        assert!(m.energy(&Tensor::zeros(&[4, 3])).is_err());
        let net = InterpolantNet::new(2, 1);
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(net.forward(&a, &b, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fresh_interpolant_outputs_zero() {
        let net = InterpolantNet::new(2, 9);
        let x0 = batch(&[[1.0, 2.0], [3.0, -1.0]]);
        let x1 = batch(&[[-1.0, 0.0], [0.5, 0.5]]);
        let phi = net.forward(&x0, &x1, &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(phi.shape(), &[4, 2, 2]);
        assert!(phi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolant_has_no_cross_batch_coupling() {
        let mut net = InterpolantNet::new(2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        *net.mlp.layers.last_mut().unwrap() = Linear::init(32, 2, &mut rng);
        let x0 = batch(&[[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]]);
        let x1 = batch(&[[-1.0, 0.0], [0.5, 0.5], [2.0, 2.0]]);
        let ts = [0.1, 0.7];
        let phi = net.forward(&x0, &x1, &ts).unwrap();
        let perm = [2, 0, 1];
        let phip = net
            .forward(&x0.select_rows(&perm), &x1.select_rows(&perm), &ts)
            .unwrap();
        for k in 0..2 {
            for (bi, &src) in perm.iter().enumerate() {
                for d in 0..2 {
                    assert_eq!(phip.data()[(k * 3 + bi) * 2 + d], phi.data()[(k * 3 + src) * 2 + d]);
                }
            }
        }
    }

    #[test]
    fn descriptors_round_trip() {
        let e = EnergyModel::new(2, 1);
        let i = InterpolantNet::new(2, 1);
        assert!(matches!(model_from_descriptor(&e.descriptor()), Ok(AnyModel::Energy(_))));
        assert!(matches!(
            model_from_descriptor(&i.descriptor()),
            Ok(AnyModel::Interpolant(_))
        ));
        assert!(model_from_descriptor("energy-mlp:dim=2:width=7").is_err());
        assert_eq!(e.param_count(), 2 * 32 + 32 + 5 * (32 * 32 + 32) + 3 * 33);
    }

    #[test]
    fn load_named_checks_shapes() {
        let src = EnergyModel::new(2, 4);
        let arrays: Vec<(String, Tensor)> = src
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let mut dst = EnergyModel::zeroed(2);
        dst.load_named(&arrays).unwrap();
        assert_eq!(dst, src);
        let mut bad = arrays.clone();
        bad[0].1 = Tensor::zeros(&[3, 32]);
        assert!(dst.load_named(&bad).is_err());
    }
}
