//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute. [`Tape::backward`]
//! walks the record once in reverse order and accumulates gradients
//! additively, so a value used by several consumers receives the sum of the
//! branch gradients.
//!
//! ```
//! use ebmgeo_core::autodiff::Tape;
//! use ebmgeo_core::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let w = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = w.mul(w).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Broadcasting is deliberately narrow: in `add`, `sub` and `mul` one operand
//! may omit (or set to 1) the leading batch dimension of the other. Anything
//! else is a shape error.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_acc, matmul_bt_into, matmul_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand is repeated over the rows of the left.
    Right,
    /// Left operand is repeated over the rows of the right.
    Left,
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Binary(BinKind, usize, usize, Bcast),
    Scale(usize, f64),
    AddScalar(usize),
    Silu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SqNormRows(usize),
    Gather(usize, Vec<usize>),
    Reshape(usize),
    /// Row-wise map with a per-row Jacobian (`out_cols × in_cols`) captured at forward time.
    MapRows { input: usize, jac: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Operation record for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.backward_done.set(false);
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, trainable: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every trainable leaf gets an entry in the result; leaves the loss does
    /// not depend on get zeros. A tape can be differentiated once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !core::ptr::eq(loss.tape, self) {
            return Err(Error::invalid("loss belongs to a different tape"));
        }
        if self.backward_done.get() {
            return Err(Error::BackwardAlreadyRun);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: root.value.shape().to_vec(),
            });
        }
        if !root.requires_grad {
            return Err(Error::NotDifferentiable);
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let out = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                if !n.requires_grad {
                    return None;
                }
                match g {
                    Some(g) => Some(Tensor::new(n.value.shape().to_vec(), g).expect("grad shape")),
                    None if n.trainable => Some(Tensor::zeros(n.value.shape())),
                    None => None,
                }
            })
            .collect();
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(&contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Sums a full-size gradient down to the broadcast operand's size.
fn reduce_rows(g: &[f64], small: usize) -> Vec<f64> {
    let mut out = vec![0.0; small];
    for chunk in g.chunks(small) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (n, k) = (av.shape()[0], av.shape()[1]);
            let m = bv.shape()[1];
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; n * k];
                matmul_bt_into(g, bv.data(), n, k, m, &mut ga);
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * m];
                matmul_at_acc(av.data(), g, n, k, m, &mut gb);
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Binary(kind, a, b, bc) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            let (la, lb) = (av.len(), bv.len());
            let at = |i: usize| av[i % la];
            let bt = |i: usize| bv[i % lb];
            let (ga_full, gb_full): (Option<Vec<f64>>, Option<Vec<f64>>) = match kind {
                BinKind::Add => (Some(g.to_vec()), Some(g.to_vec())),
                BinKind::Sub => (Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())),
                BinKind::Mul => (
                    nodes[*a]
                        .requires_grad
                        .then(|| g.iter().enumerate().map(|(i, gi)| gi * bt(i)).collect()),
                    nodes[*b]
                        .requires_grad
                        .then(|| g.iter().enumerate().map(|(i, gi)| gi * at(i)).collect()),
                ),
            };
            if let Some(ga) = ga_full {
                let ga = if *bc == Bcast::Left { reduce_rows(&ga, la) } else { ga };
                accumulate(grads, nodes, *a, ga);
            }
            if let Some(gb) = gb_full {
                let gb = if *bc == Bcast::Right { reduce_rows(&gb, lb) } else { gb };
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::Silu(a) => {
            let x = nodes[*a].value.data();
            let ga = g
                .iter()
                .zip(x)
                .map(|(gi, &xi)| {
                    let s = sigmoid(xi);
                    gi * s * (1.0 + xi * (1.0 - s))
                })
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Exp(a) => {
            let y = node.value.data();
            accumulate(grads, nodes, *a, g.iter().zip(y).map(|(gi, yi)| gi * yi).collect());
        }
        Op::Log(a) => {
            let x = nodes[*a].value.data();
            accumulate(grads, nodes, *a, g.iter().zip(x).map(|(gi, xi)| gi / xi).collect());
        }
        Op::Square(a) => {
            let x = nodes[*a].value.data();
            accumulate(
                grads,
                nodes,
                *a,
                g.iter().zip(x).map(|(gi, xi)| 2.0 * gi * xi).collect(),
            );
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::SqNormRows(a) => {
            let x = &nodes[*a].value;
            let c = x.cols();
            let ga = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, xi)| 2.0 * xi * g[i / c])
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Gather(a, idx) => {
            let src = &nodes[*a].value;
            let c = src.cols();
            let mut ga = vec![0.0; src.len()];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[i * c + j] += g[r * c + j];
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::MapRows { input, jac } => {
            let x = &nodes[*input].value;
            let (n, d) = (x.rows(), x.cols());
            let m = node.value.cols();
            let mut ga = vec![0.0; n * d];
            for r in 0..n {
                let jr = &jac[r * m * d..(r + 1) * m * d];
                for o in 0..m {
                    let go = g[r * m + o];
                    if go == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        ga[r * d + j] += go * jr[o * d + j];
                    }
                }
            }
            accumulate(grads, nodes, *input, ga);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Bcast, Vec<usize>)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok((Bcast::Same, sa.to_vec()));
    }
    let tail_matches = |big: &[usize], small: &[usize]| {
        !big.is_empty()
            && (small == &big[1..] || (small.len() == big.len() && small[0] == 1 && small[1..] == big[1..]))
    };
    if tail_matches(sa, sb) {
        Ok((Bcast::Right, sa.to_vec()))
    } else if tail_matches(sb, sa) {
        Ok((Bcast::Left, sb.to_vec()))
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the current value. The copy has no gradient history.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Same as [`Var::value`]; named for call sites that cut the graph on purpose.
    pub fn detach(&self) -> Tensor {
        self.value()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if core::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid("operands belong to different tapes"))
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
                .expect("unary keeps shape")
        };
        let rg = self.requires_grad();
        self.tape.push(value, op, rg, false)
    }

    fn binary(&self, other: Var<'_>, kind: BinKind) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (bc, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let name = match kind {
                BinKind::Add => "add",
                BinKind::Sub => "sub",
                BinKind::Mul => "mul",
            };
            let (bc, shape) = broadcast(name, a, b)?;
            let (ad, bd) = (a.data(), b.data());
            let n: usize = shape.iter().product();
            let (la, lb) = (ad.len(), bd.len());
            let f = |x: f64, y: f64| match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
            };
            let data = (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect();
            (bc, Tensor::new(shape, data)?)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::Binary(kind, self.id, other.id, bc), rg, false))
    }

    /// `[n, k] · [k, m] -> [n, m]`.
    pub fn matmul(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; n * m];
            matmul_into(a.data(), b.data(), n, k, m, &mut out);
            Tensor::new(vec![n, m], out)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::Matmul(self.id, other.id), rg, false))
    }

    pub fn add(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Add)
    }

    pub fn sub(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Sub)
    }

    pub fn mul(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Mul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn silu(&self) -> Var<'t> {
        self.unary(Op::Silu(self.id), silu)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |v| v.exp())
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), |v| v.ln())
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.nodes.borrow()[self.id].value.data().iter().sum();
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), rg, false)
    }

    pub fn mean(&self) -> Var<'t> {
        let s = {
            let nodes = self.tape.nodes.borrow();
            let d = nodes[self.id].value.data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id), rg, false)
    }

    /// Squared Euclidean norm of every row: `[n, d] -> [n]`.
    pub fn sqnorm_rows(&self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let out = (0..x.rows())
                .map(|r| x.row(r).iter().map(|v| v * v).sum())
                .collect();
            Tensor::vector(out)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::SqNormRows(self.id), rg, false)
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::invalid(alloc::format!(
                    "row index {bad} out of range for shape {:?}",
                    x.shape()
                )));
            }
            x.select_rows(idx)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Gather(self.id, idx.to_vec()), rg, false))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg, false))
    }

    /// Applies a row-wise map whose Jacobian the caller supplies.
    ///
    /// `f` receives the `[n, d]` input and returns the `[n, out_cols]` output
    /// together with a flat `n × out_cols × d` Jacobian. Only first-order
    /// information is recorded.
    pub fn map_rows<F>(&self, out_cols: usize, f: F) -> Result<Var<'t>>
    where
        F: FnOnce(&Tensor) -> Result<(Tensor, Vec<f64>)>,
    {
        let (value, jac) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape().len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "map_rows",
                    left: x.shape().to_vec(),
                    right: vec![0, 0],
                });
            }
            let (n, d) = (x.rows(), x.cols());
            let (value, jac) = f(x)?;
            if value.shape() != [n, out_cols] || jac.len() != n * out_cols * d {
                return Err(Error::ShapeMismatch {
                    op: "map_rows",
                    left: vec![n, out_cols, d],
                    right: value.shape().to_vec(),
                });
            }
            (value, jac)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::MapRows { input: self.id, jac }, rg, false))
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Ids of recorded values holding a gradient with at least one nonzero entry.
    pub fn nonzero_ids(&self) -> Vec<usize> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| {
                g.as_ref()
                    .filter(|t| t.data().iter().any(|&v| v != 0.0))
                    .map(|_| i)
            })
            .collect()
    }
}
