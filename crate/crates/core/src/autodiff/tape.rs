use std::cell::RefCell;

use super::var::Var;
use crate::error::{Error, Result};
use num_traits::Float;

use crate::scalar::{kernel, Real, Scalar};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddC(T),
    SubC(T),
    /// `c - x`
    RSubC(T),
    MulC(T),
    DivC(T),
    Neg,
    Pow(T),
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Relu,
    Max,
    Sum,
    /// Operands laid out as `[a_1..a_n, b_1..b_n]`.
    Dot,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddC(_) => "add_const",
            Op::SubC(_) => "sub_const",
            Op::RSubC(_) => "rsub_const",
            Op::MulC(_) => "mul_const",
            Op::DivC(_) => "div_const",
            Op::Neg => "neg",
            Op::Pow(_) => "pow",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Max => "max",
            Op::Sum => "sum",
            Op::Dot => "dot",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node<T> {
    op: Op<T>,
    start: u32,
    len: u32,
    value: T,
}

#[derive(Debug, Default)]
struct Data<T> {
    nodes: Vec<Node<T>>,
    args: Vec<u32>,
}

/// Append-only record of scalar operations.
///
/// Nodes only reference earlier nodes, so a reverse sweep in index order is a
/// valid topological traversal. The tape is single-threaded; build separate
/// tapes on separate threads.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    data: RefCell<Data<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            data: RefCell::new(Data {
                nodes: Vec::new(),
                args: Vec::new(),
            }),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            data: RefCell::new(Data {
                nodes: Vec::with_capacity(nodes),
                args: Vec::with_capacity(nodes * 2),
            }),
        }
    }

    /// Records an independent variable.
    pub fn var(&self, value: T) -> Var<'_, T> {
        let idx = self.push(Op::Leaf, &[], value);
        Var::from_parts(self, idx, value)
    }

    pub fn vars(&self, values: &[T]) -> Vec<Var<'_, T>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar slots held by the tape: one per node plus one per operand reference.
    pub fn footprint(&self) -> usize {
        let d = self.data.borrow();
        d.nodes.len() + d.args.len()
    }

    pub fn value(&self, id: NodeId) -> T {
        self.data.borrow().nodes[id].value
    }

    /// Recomputes every node value from the recorded leaves and checks it
    /// matches what was stored at record time.
    pub fn replay_matches(&self) -> bool {
        let d = self.data.borrow();
        let mut vals: Vec<T> = Vec::with_capacity(d.nodes.len());
        for node in &d.nodes {
            let args = &d.args[node.start as usize..(node.start + node.len) as usize];
            let a = |k: usize| vals[args[k] as usize];
            let v = match node.op {
                Op::Leaf => node.value,
                Op::Add => a(0) + a(1),
                Op::Sub => a(0) - a(1),
                Op::Mul => a(0) * a(1),
                Op::Div => a(0) / a(1),
                Op::AddC(c) => a(0) + c,
                Op::SubC(c) => a(0) - c,
                Op::RSubC(c) => c - a(0),
                Op::MulC(c) => a(0) * c,
                Op::DivC(c) => a(0) / c,
                Op::Neg => -a(0),
                Op::Pow(e) => kernel::pow(a(0), e),
                Op::Exp => kernel::exp(a(0)),
                Op::Ln => kernel::ln(a(0)),
                Op::Sin => kernel::sin(a(0)),
                Op::Cos => kernel::cos(a(0)),
                Op::Tanh => kernel::tanh(a(0)),
                Op::Relu => {
                    if a(0) > T::zero() {
                        a(0)
                    } else {
                        T::zero()
                    }
                }
                Op::Max => {
                    if a(0) >= a(1) {
                        a(0)
                    } else {
                        a(1)
                    }
                }
                Op::Sum => crate::scalar::sum_values(args.iter().map(|&i| vals[i as usize])),
                Op::Dot => {
                    let n = args.len() / 2;
                    crate::scalar::dot_values(
                        (0..n).map(|k| (vals[args[k] as usize], vals[args[n + k] as usize])),
                    )
                }
            };
            if v == node.value {
                vals.push(v);
            } else {
                return false;
            }
        }
        true
    }

    pub(crate) fn push(&self, op: Op<T>, args: &[NodeId], value: T) -> NodeId {
        let mut d = self.data.borrow_mut();
        let idx = d.nodes.len();
        let start = d.args.len() as u32;
        d.args.extend(args.iter().map(|&a| {
            debug_assert!(a < idx, "operand must precede node");
            a as u32
        }));
        d.nodes.push(Node {
            op,
            start,
            len: args.len() as u32,
            value,
        });
        idx
    }

    pub(crate) fn owns(&self, v: &Var<'_, T>) -> bool {
        std::ptr::eq(self, v.tape())
    }

    fn check_ids(&self, ids: &[NodeId]) -> Result<()> {
        let n = self.len();
        match ids.iter().find(|&&i| i >= n) {
            Some(&index) => Err(Error::NotOnTape { index }),
            None => Ok(()),
        }
    }

    fn check_vars(&self, vars: &[Var<'_, T>]) -> Result<Vec<NodeId>> {
        vars.iter()
            .map(|v| {
                if self.owns(v) {
                    Ok(v.id())
                } else {
                    Err(Error::NotOnTape { index: v.id() })
                }
            })
            .collect()
    }

    /// Marks nodes in `lo..=hi` that depend on any of `inputs`.
    fn dependency_mask(d: &Data<T>, inputs: &[NodeId], lo: usize, hi: usize) -> Vec<bool> {
        let mut need = vec![false; hi + 1];
        for &i in inputs {
            if i <= hi {
                need[i] = true;
            }
        }
        for i in lo..=hi {
            if need[i] {
                continue;
            }
            let node = &d.nodes[i];
            let args = &d.args[node.start as usize..(node.start + node.len) as usize];
            need[i] = args.iter().any(|&a| need[a as usize]);
        }
        need
    }

    /// Gradient of a scalar output with respect to `inputs`, one reverse sweep.
    pub fn grad(&self, output: Var<'_, T>, inputs: &[Var<'_, T>]) -> Result<Vec<T>> {
        self.vjp(&[output], &[T::one()], inputs)
    }

    /// `weightsᵀ · J` where `J` is the Jacobian of `outputs` w.r.t. `inputs`.
    pub fn vjp(
        &self,
        outputs: &[Var<'_, T>],
        weights: &[T],
        inputs: &[Var<'_, T>],
    ) -> Result<Vec<T>> {
        let outs = self.check_vars(outputs)?;
        let ins = self.check_vars(inputs)?;
        self.vjp_ids(&outs, weights, &ins)
    }

    /// [`Tape::vjp`] on raw node ids; lets a recorded graph be swept many times.
    pub fn vjp_ids(&self, outputs: &[NodeId], weights: &[T], inputs: &[NodeId]) -> Result<Vec<T>> {
        if weights.len() != outputs.len() {
            return Err(Error::LengthMismatch {
                what: "vjp weights vs outputs",
                expected: outputs.len(),
                got: weights.len(),
            });
        }
        self.check_ids(outputs)?;
        self.check_ids(inputs)?;
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let Some(&hi) = outputs.iter().max() else {
            return Ok(vec![T::zero(); inputs.len()]);
        };
        let lo = *inputs.iter().min().expect("non-empty");
        if lo > hi {
            return Ok(vec![T::zero(); inputs.len()]);
        }
        let d = self.data.borrow();
        let need = Self::dependency_mask(&d, inputs, lo, hi);
        let mut adj = vec![T::zero(); hi + 1];
        for (&o, &w) in outputs.iter().zip(weights) {
            adj[o] += w;
        }
        for i in (lo..=hi).rev() {
            let a = adj[i];
            if a == T::zero() || !need[i] {
                continue;
            }
            let node = d.nodes[i];
            if !a.is_finite() || !node.value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            let args = &d.args[node.start as usize..(node.start + node.len) as usize];
            let val = |k: usize| d.nodes[args[k] as usize].value;
            let mut acc = |k: usize, contrib: T| -> Result<()> {
                let j = args[k] as usize;
                if need[j] {
                    if !contrib.is_finite() {
                        return Err(Error::NonFinite {
                            node: i,
                            op: node.op.name(),
                        });
                    }
                    adj[j] += contrib;
                }
                Ok(())
            };
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    acc(0, a)?;
                    acc(1, a)?;
                }
                Op::Sub => {
                    acc(0, a)?;
                    acc(1, -a)?;
                }
                Op::Mul => {
                    let (x, y) = (val(0), val(1));
                    acc(0, a * y)?;
                    acc(1, a * x)?;
                }
                Op::Div => {
                    let y = val(1);
                    acc(0, a / y)?;
                    acc(1, -a * node.value / y)?;
                }
                Op::AddC(_) | Op::SubC(_) => acc(0, a)?,
                Op::RSubC(_) | Op::Neg => acc(0, -a)?,
                Op::MulC(c) => acc(0, a * c)?,
                Op::DivC(c) => acc(0, a / c)?,
                Op::Pow(e) => acc(0, a * e * Float::powf(val(0), e - T::one()))?,
                Op::Exp => acc(0, a * node.value)?,
                Op::Ln => acc(0, a / val(0))?,
                Op::Sin => acc(0, a * Float::cos(val(0)))?,
                Op::Cos => acc(0, -a * Float::sin(val(0)))?,
                Op::Tanh => acc(0, a * (T::one() - node.value * node.value))?,
                Op::Relu => {
                    if val(0) > T::zero() {
                        acc(0, a)?;
                    }
                }
                Op::Max => {
                    if val(0) >= val(1) {
                        acc(0, a)?;
                    } else {
                        acc(1, a)?;
                    }
                }
                Op::Sum => {
                    for k in 0..args.len() {
                        acc(k, a)?;
                    }
                }
                Op::Dot => {
                    let n = args.len() / 2;
                    for k in 0..n {
                        let (x, y) = (val(k), val(n + k));
                        acc(k, a * y)?;
                        acc(n + k, a * x)?;
                    }
                }
            }
        }
        let out: Vec<T> = inputs
            .iter()
            .map(|&i| adj.get(i).copied().unwrap_or_else(T::zero))
            .collect();
        if let Some(pos) = out.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                node: inputs[pos],
                op: "gradient",
            });
        }
        Ok(out)
    }

    /// Gradient of `output` w.r.t. `inputs`, recorded on this tape so it can be
    /// differentiated again (reverse-over-reverse).
    pub fn grad_graph<'t>(
        &'t self,
        output: Var<'t, T>,
        inputs: &[Var<'t, T>],
    ) -> Result<Vec<Var<'t, T>>> {
        let out = self.check_vars(&[output])?[0];
        let ins = self.check_vars(inputs)?;
        let zero = || self.var(T::zero());
        if ins.is_empty() {
            return Ok(Vec::new());
        }
        let lo = *ins.iter().min().expect("non-empty");
        if lo > out {
            return Ok(inputs.iter().map(|_| zero()).collect());
        }
        let need = {
            let d = self.data.borrow();
            Self::dependency_mask(&d, &ins, lo, out)
        };
        let mut adj: Vec<Option<Var<'t, T>>> = vec![None; out + 1];
        adj[out] = Some(self.var(T::one()));
        let mut args: Vec<NodeId> = Vec::new();
        for i in (lo..=out).rev() {
            let Some(a) = adj[i] else { continue };
            if !need[i] {
                continue;
            }
            let node = {
                let d = self.data.borrow();
                let node = d.nodes[i];
                args.clear();
                args.extend(
                    d.args[node.start as usize..(node.start + node.len) as usize]
                        .iter()
                        .map(|&x| x as usize),
                );
                node
            };
            if !node.value.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            let var = |k: usize| Var::from_parts(self, args[k], self.value(args[k]));
            let me = Var::from_parts(self, i, node.value);
            let mut acc = |k: usize, c: Var<'t, T>| {
                let j = args[k];
                if need[j] {
                    adj[j] = Some(match adj[j] {
                        None => c,
                        Some(prev) => prev + c,
                    });
                }
            };
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    acc(0, a);
                    acc(1, a);
                }
                Op::Sub => {
                    acc(0, a);
                    if need[args[1]] {
                        acc(1, -a);
                    }
                }
                Op::Mul => {
                    let (x, y) = (var(0), var(1));
                    if need[args[0]] {
                        acc(0, a * y);
                    }
                    if need[args[1]] {
                        acc(1, a * x);
                    }
                }
                Op::Div => {
                    let y = var(1);
                    if need[args[0]] {
                        acc(0, a / y);
                    }
                    if need[args[1]] {
                        acc(1, -(a * me) / y);
                    }
                }
                Op::AddC(_) | Op::SubC(_) => acc(0, a),
                Op::RSubC(_) | Op::Neg => acc(0, -a),
                Op::MulC(c) => acc(0, a * c),
                Op::DivC(c) => acc(0, a / c),
                Op::Pow(e) => {
                    let x = var(0);
                    acc(0, a * (Real::powf(x, e - T::one()) * e));
                }
                Op::Exp => acc(0, a * me),
                Op::Ln => acc(0, a / var(0)),
                Op::Sin => acc(0, a * Real::cos(var(0))),
                Op::Cos => acc(0, -(a * Real::sin(var(0)))),
                Op::Tanh => acc(0, a * (me * me).rsub(T::one())),
                Op::Relu => {
                    if self.value(args[0]) > T::zero() {
                        acc(0, a);
                    }
                }
                Op::Max => {
                    if self.value(args[0]) >= self.value(args[1]) {
                        acc(0, a);
                    } else {
                        acc(1, a);
                    }
                }
                Op::Sum => {
                    for k in 0..args.len() {
                        acc(k, a);
                    }
                }
                Op::Dot => {
                    let n = args.len() / 2;
                    for k in 0..n {
                        if need[args[k]] {
                            acc(k, a * var(n + k));
                        }
                        if need[args[n + k]] {
                            acc(n + k, a * var(k));
                        }
                    }
                }
            }
        }
        let out: Vec<Var<'t, T>> = ins
            .iter()
            .map(|&i| adj.get(i).copied().flatten().unwrap_or_else(zero))
            .collect();
        if let Some(g) = out.iter().find(|g| !g.value().is_finite()) {
            return Err(Error::NonFinite {
                node: g.id(),
                op: "gradient",
            });
        }
        Ok(out)
    }
}

