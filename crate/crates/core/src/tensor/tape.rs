//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value and the indices of its
//! operands. `Tape::backward` walks the nodes in reverse insertion order,
//! which is a valid topological order because operands always precede their
//! results.
//!
//! Binary elementwise ops broadcast over the 2-D view of their operands: a
//! 1x1 operand broadcasts everywhere, a 1xC row across rows and an Rx1
//! column across columns.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Sum(usize),
    SumRows(usize),
    GatherRows(usize, Vec<usize>),
    ConcatCols(usize, usize),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }
}

/// Records a computation graph. Cheap to create; build a fresh one per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of one scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, or zeros if it did not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Vec<f64> {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => vec![0.0; var.numel()],
        }
    }

    pub fn get_ref(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads[var.id].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Registers a tensor as a leaf; it receives a gradient if
    /// `requires_grad` is set.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// A leaf that always receives a gradient.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(Vec::new(), vec![v], Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        ensure!(
            nodes[loss.id].data.len() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            nodes[loss.id].shape
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let (r, c) = (node.rows(), node.cols());
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate_broadcast(&mut grads, &nodes, *a, &g, r, c, |g, _| g);
                    accumulate_broadcast(&mut grads, &nodes, *b, &g, r, c, |g, _| g);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(&mut grads, &nodes, *a, &g, r, c, |g, _| g);
                    accumulate_broadcast(&mut grads, &nodes, *b, &g, r, c, |g, _| -g);
                }
                Op::Mul(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    accumulate_broadcast(&mut grads, &nodes, *a, &g, r, c, |g, (i, j)| {
                        g * at(nb, i, j)
                    });
                    accumulate_broadcast(&mut grads, &nodes, *b, &g, r, c, |g, (i, j)| {
                        g * at(na, i, j)
                    });
                }
                Op::Div(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    accumulate_broadcast(&mut grads, &nodes, *a, &g, r, c, |g, (i, j)| {
                        g / at(nb, i, j)
                    });
                    accumulate_broadcast(&mut grads, &nodes, *b, &g, r, c, |g, (i, j)| {
                        let bv = at(nb, i, j);
                        -g * at(na, i, j) / (bv * bv)
                    });
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, &nodes, *a, g.iter().map(|g| g * s));
                }
                Op::AddScalar(a) => accumulate(&mut grads, &nodes, *a, g.iter().copied()),
                Op::MatMul(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    let k = na.cols();
                    if nodes[*a].needs_grad {
                        // dA = G · Bᵀ
                        let mut ga = vec![0.0; r * k];
                        for i in 0..r {
                            for j in 0..c {
                                let gij = g[i * c + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for t in 0..k {
                                    ga[i * k + t] += gij * nb.data[t * c + j];
                                }
                            }
                        }
                        accumulate(&mut grads, &nodes, *a, ga.into_iter());
                    }
                    if nodes[*b].needs_grad {
                        // dB = Aᵀ · G
                        let mut gb = vec![0.0; k * c];
                        for i in 0..r {
                            for t in 0..k {
                                let av = na.data[i * k + t];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..c {
                                    gb[t * c + j] += av * g[i * c + j];
                                }
                            }
                        }
                        accumulate(&mut grads, &nodes, *b, gb.into_iter());
                    }
                }
                Op::Relu(a) => {
                    let x = &nodes[*a].data;
                    accumulate(
                        &mut grads,
                        &nodes,
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Sigmoid(a) => {
                    let y = &node.data;
                    accumulate(
                        &mut grads,
                        &nodes,
                        *a,
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)),
                    );
                }
                Op::Softplus(a) => {
                    let x = &nodes[*a].data;
                    accumulate(
                        &mut grads,
                        &nodes,
                        *a,
                        g.iter().zip(x).map(|(g, x)| g * sigmoid(*x)),
                    );
                }
                Op::Exp(a) => {
                    let y = &node.data;
                    accumulate(&mut grads, &nodes, *a, g.iter().zip(y).map(|(g, y)| g * y));
                }
                Op::Ln(a) => {
                    let x = &nodes[*a].data;
                    accumulate(&mut grads, &nodes, *a, g.iter().zip(x).map(|(g, x)| g / x));
                }
                Op::Square(a) => {
                    let x = &nodes[*a].data;
                    accumulate(
                        &mut grads,
                        &nodes,
                        *a,
                        g.iter().zip(x).map(|(g, x)| 2.0 * g * x),
                    );
                }
                Op::Sum(a) => {
                    let n = nodes[*a].data.len();
                    accumulate(&mut grads, &nodes, *a, std::iter::repeat_n(g[0], n));
                }
                Op::SumRows(a) => {
                    let ca = nodes[*a].cols();
                    let ra = nodes[*a].rows();
                    accumulate(&mut grads, &nodes, *a, (0..ra * ca).map(|idx| g[idx / ca]));
                }
                Op::GatherRows(a, idx) => {
                    if nodes[*a].needs_grad {
                        let mut ga = vec![0.0; nodes[*a].data.len()];
                        for (out_row, &src) in idx.iter().enumerate() {
                            for j in 0..c {
                                ga[src * c + j] += g[out_row * c + j];
                            }
                        }
                        accumulate(&mut grads, &nodes, *a, ga.into_iter());
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[*a].cols();
                    let cb = nodes[*b].cols();
                    accumulate(
                        &mut grads,
                        &nodes,
                        *a,
                        (0..r)
                            .flat_map(|i| (0..ca).map(move |j| (i, j)))
                            .map(|(i, j)| g[i * c + j]),
                    );
                    accumulate(
                        &mut grads,
                        &nodes,
                        *b,
                        (0..r)
                            .flat_map(|i| (0..cb).map(move |j| (i, j)))
                            .map(|(i, j)| g[i * c + ca + j]),
                    );
                }
            }
            grads[id] = Some(g);
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Value of `node` at broadcast position (i, j).
fn at(node: &Node, i: usize, j: usize) -> f64 {
    let (r, c) = (node.rows(), node.cols());
    let ii = if r == 1 { 0 } else { i };
    let jj = if c == 1 { 0 } else { j };
    node.data[ii * c + jj]
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    target: usize,
    values: impl Iterator<Item = f64>,
) {
    if !nodes[target].needs_grad {
        return;
    }
    match &mut grads[target] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(values) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(values.collect()),
    }
}

/// Accumulates `f(g_ij, (i, j))` into `target`, summing over broadcast axes.
fn accumulate_broadcast(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    target: usize,
    g: &[f64],
    r: usize,
    c: usize,
    f: impl Fn(f64, (usize, usize)) -> f64,
) {
    let node = &nodes[target];
    if !node.needs_grad {
        return;
    }
    let (tr, tc) = (node.rows(), node.cols());
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        let ti = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let tj = if tc == 1 { 0 } else { j };
            out[ti * tc + tj] += f(g[i * c + j], (i, j));
        }
    }
    accumulate(grads, nodes, target, out.into_iter());
}

fn broadcast_shape(a: &Node, b: &Node) -> Result<(Vec<usize>, usize, usize)> {
    if a.shape == b.shape {
        return Ok((a.shape.clone(), a.rows(), a.cols()));
    }
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let r = match (ra, rb) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => {
            return Err(Error::Dimension(format!(
                "cannot broadcast {:?} with {:?}",
                a.shape, b.shape
            )))
        }
    };
    let c = match (ca, cb) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => {
            return Err(Error::Dimension(format!(
                "cannot broadcast {:?} with {:?}",
                a.shape, b.shape
            )))
        }
    };
    Ok((vec![r, c], r, c))
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].data.len()
    }

    pub fn rows(&self) -> usize {
        self.tape.nodes.borrow()[self.id].rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.nodes.borrow()[self.id].cols()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor {
            shape: n.shape.clone(),
            data: n.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].data[0]
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn binary(
        self,
        other: Var<'t>,
        op: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (shape, r, c) = broadcast_shape(a, b)?;
            let mut data = Vec::with_capacity(r * c);
            if a.shape == b.shape {
                data.extend(a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)));
            } else {
                for i in 0..r {
                    for j in 0..c {
                        data.push(f(at(a, i, j), at(b, i, j)));
                    }
                }
            }
            (shape, data)
        };
        let needs = self.needs_grad() || other.needs_grad();
        Ok(self.tape.push(shape, data, op(self.id, other.id), needs))
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|x| f(*x)).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(shape, data, op, needs)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + s)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let total = self.tape.nodes.borrow()[self.id].data.iter().sum();
        let needs = self.needs_grad();
        self.tape
            .push(Vec::new(), vec![total], Op::Sum(self.id), needs)
    }

    /// Per-row sums: R x C -> R x 1.
    pub fn sum_rows(self) -> Var<'t> {
        let (r, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let (r, c) = (a.rows(), a.cols());
            (
                r,
                (0..r)
                    .map(|i| a.data[i * c..(i + 1) * c].iter().sum())
                    .collect(),
            )
        };
        let needs = self.needs_grad();
        self.tape
            .push(vec![r, 1], data, Op::SumRows(self.id), needs)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            ensure!(
                a.shape.len() == 2 && b.shape.len() == 2 && a.shape[1] == b.shape[0],
                Dimension,
                "matmul of {:?} by {:?}",
                a.shape,
                b.shape
            );
            let (r, k, c) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for t in 0..k {
                    let av = a.data[i * k + t];
                    let brow = &b.data[t * c..(t + 1) * c];
                    let orow = &mut out[i * c..(i + 1) * c];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            (vec![r, c], out)
        };
        let needs = self.needs_grad() || other.needs_grad();
        Ok(self
            .tape
            .push(shape, data, Op::MatMul(self.id, other.id), needs))
    }

    /// Picks rows by index: K x C -> len(indices) x C.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let (r, c) = (a.rows(), a.cols());
            if let Some(bad) = indices.iter().find(|&&i| i >= r) {
                return Err(Error::Contract(format!(
                    "row index {bad} out of range 0..{r}"
                )));
            }
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(&a.data[i * c..(i + 1) * c]);
            }
            (vec![indices.len(), c], data)
        };
        let needs = self.needs_grad();
        Ok(self.tape.push(
            shape,
            data,
            Op::GatherRows(self.id, indices.to_vec()),
            needs,
        ))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            ensure!(
                a.rows() == b.rows(),
                Dimension,
                "concat of {:?} and {:?}",
                a.shape,
                b.shape
            );
            let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
            let mut data = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                data.extend_from_slice(&a.data[i * ca..(i + 1) * ca]);
                data.extend_from_slice(&b.data[i * cb..(i + 1) * cb]);
            }
            (vec![r, ca + cb], data)
        };
        let needs = self.needs_grad() || other.needs_grad();
        Ok(self
            .tape
            .push(shape, data, Op::ConcatCols(self.id, other.id), needs))
    }
}
