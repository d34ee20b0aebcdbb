//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes in exact reverse order of recording and can run at most once per tape.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::conv::{self, ConvParams};
use crate::error::CoreError;
use crate::flow::FlowField;
use crate::math;
use crate::tensor::{ensure_same_shape, Shape, Tensor};
use crate::warp::{self, WarpTable};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identifies a parameter: the owning set and its position within that set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u32,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, trainable }
    }
}

static NEXT_GROUP: AtomicU32 = AtomicU32::new(1);

/// An ordered collection of parameters owned by one model.
///
/// Each set gets a process-unique group id, so several models can share one
/// tape and gradients land only in the set that owns them.
#[derive(Debug, PartialEq)]
pub struct ParamSet {
    group: u32,
    params: Vec<Parameter>,
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet { group: NEXT_GROUP.fetch_add(1, Ordering::Relaxed), params: self.params.clone() }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { group: NEXT_GROUP.fetch_add(1, Ordering::Relaxed), params: Vec::new() }
    }

    pub fn group(&self) -> u32 {
        self.group
    }

    pub fn push(&mut self, param: Parameter) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients recorded for this set into each trainable parameter.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for &(key, var) in &grads.params {
            if key.group != self.group {
                continue;
            }
            let p = &mut self.params[key.index as usize];
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.get(var) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Replaces the values of all parameters, checking names and shapes.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<(), CoreError> {
        if values.len() != self.params.len() {
            return Err(CoreError::DimMismatch { op: "load parameters", dim: "parameter count", expected: self.params.len(), actual: values.len() });
        }
        for (p, (name, v)) in self.params.iter().zip(values) {
            if &p.name != name {
                return Err(CoreError::InvalidArgument("load parameters: parameter name mismatch"));
            }
            ensure_same_shape("load parameters", p.value.shape(), v.shape())?;
        }
        for (p, (_, v)) in self.params.iter_mut().zip(values) {
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Deliberate corruption of one backward rule, used to prove that the
/// gradient checks catch broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Conv2dBackward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param,
    Conv2d { input: Var, weight: Var, bias: Var, params: ConvParams },
    LeakyRelu { input: Var, slope: f32 },
    Binary { a: Var, b: Var, kind: Elementwise },
    Scale { input: Var, factor: f32 },
    Warp { source: Var, tables: Vec<WarpTable> },
    Sum { input: Var },
    Mean { input: Var },
    Softplus { input: Var },
    SpatialMean { input: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamKey, Var>,
    frozen: Vec<u32>,
    consumed: bool,
    fault: Option<Fault>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamKey, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it lies on a differentiable path.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape { fault, ..Self::default() }
    }

    /// Parameters of `set` recorded after this call are treated as constants.
    pub fn freeze(&mut self, set: &ParamSet) {
        self.frozen.push(set.group());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Hash of which side of zero every leaky-ReLU input fell on. Two
    /// evaluations with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::LeakyRelu { input, .. } = node.op {
                for &x in self.nodes[input.0].value.data() {
                    h = (h ^ (x >= 0.0) as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf; its gradient is available from [`Gradients::get`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records parameter `index` of `set`. Repeated calls return the same node,
    /// so every use of one parameter shares a single gradient slot.
    pub fn param(&mut self, set: &ParamSet, index: usize) -> Var {
        let key = ParamKey { group: set.group(), index: index as u32 };
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let p = set.get(index);
        let requires = p.trainable && !self.frozen.contains(&key.group);
        let v = self.push(p.value.clone(), Op::Param, requires);
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, params: ConvParams) -> Result<Var, CoreError> {
        let out = conv::forward(self.value(input), self.value(weight), self.value(bias), params)?;
        let req = self.req(input) || self.req(weight) || self.req(bias);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, params }, req))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Result<Var, CoreError> {
        if !(0.0..=1.0).contains(&slope) {
            return Err(CoreError::InvalidArgument("leaky_relu: slope must lie in [0, 1]"));
        }
        let out = self.value(input).map(|x| if x >= 0.0 { x } else { slope * x });
        let req = self.req(input);
        Ok(self.push(out, Op::LeakyRelu { input, slope }, req))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var, CoreError> {
        let (va, vb) = (self.value(a), self.value(b));
        let op: &'static str = match kind {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
        };
        ensure_same_shape(op, va.shape(), vb.shape())?;
        let out = match kind {
            Elementwise::Add => va.zip_map(vb, |x, y| x + y),
            Elementwise::Sub => va.zip_map(vb, |x, y| x - y),
            Elementwise::Mul => va.zip_map(vb, |x, y| x * y),
        }?;
        let req = self.req(a) || self.req(b);
        Ok(self.push(out, Op::Binary { a, b, kind }, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let out = self.value(input).map(|x| x * factor);
        let req = self.req(input);
        self.push(out, Op::Scale { input, factor }, req)
    }

    /// Backward bilinear warp of `source` by one flow per image (or one shared flow).
    /// The flow is a constant: no gradient reaches it.
    pub fn bilinear_warp(&mut self, source: Var, flows: &[FlowField]) -> Result<Var, CoreError> {
        let tables: Vec<WarpTable> = flows.iter().map(WarpTable::new).collect();
        let out = warp::forward(self.value(source), &tables)?;
        let req = self.req(source);
        Ok(self.push(out, Op::Warp { source, tables }, req))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum_f64() as f32;
        let req = self.req(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, req)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let m = if t.is_empty() { 0.0 } else { (t.sum_f64() / t.len() as f64) as f32 };
        let req = self.req(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, req)
    }

    /// `ln(1 + e^x)` elementwise; `-ln σ(x) = softplus(-x)`.
    pub fn softplus(&mut self, input: Var) -> Var {
        let out = self.value(input).map(math::softplus);
        let req = self.req(input);
        self.push(out, Op::Softplus { input }, req)
    }

    /// Global average pool: `(n, c, h, w) -> (n, c, 1, 1)`.
    pub fn spatial_mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s = t.shape();
        let plane = s.plane();
        let data = (0..s.n * s.c)
            .map(|i| {
                let chunk = &t.data()[i * plane..(i + 1) * plane];
                (chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32
            })
            .collect();
        let out = Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("n*c elements");
        let req = self.req(input);
        self.push(out, Op::SpatialMean { input }, req)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, CoreError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Runs the reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, CoreError> {
        if self.consumed {
            return Err(CoreError::TapeConsumed);
        }
        let ls = self.value(loss).shape();
        if ls.len() != 1 {
            return Err(CoreError::NonScalarLoss(ls));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(ls));
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, t: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &nodes[i].op {
            Op::Input | Op::Constant | Op::Param => {}
            Op::Conv2d { input, weight, bias, params } => {
                let need_params = nodes[weight.0].requires_grad || nodes[bias.0].requires_grad;
                let cg = conv::backward(&nodes[input.0].value, &nodes[weight.0].value, g, *params, nodes[input.0].requires_grad, need_params);
                if let Some(gi) = cg.input {
                    send(*input, gi);
                }
                if let Some(mut gw) = cg.weight {
                    if self.fault == Some(Fault::Conv2dBackward) {
                        for v in gw.data_mut() {
                            *v *= 1.05;
                        }
                    }
                    send(*weight, gw);
                }
                if let Some(gb) = cg.bias {
                    let s = nodes[bias.0].value.shape();
                    send(*bias, gb.reshape(s).expect("bias length checked in forward"));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = &nodes[input.0].value;
                let gi = g.zip_map(x, |gv, xv| if xv >= 0.0 { gv } else { gv * slope }).expect("same shape");
                send(*input, gi);
            }
            Op::Binary { a, b, kind } => match kind {
                Elementwise::Add => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Elementwise::Sub => {
                    send(*a, g.clone());
                    send(*b, g.map(|v| -v));
                }
                Elementwise::Mul => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].requires_grad {
                        send(*a, g.zip_map(vb, |x, y| x * y).expect("same shape"));
                    }
                    if nodes[b.0].requires_grad {
                        send(*b, g.zip_map(va, |x, y| x * y).expect("same shape"));
                    }
                }
            },
            Op::Scale { input, factor } => send(*input, g.map(|v| v * factor)),
            Op::Warp { source, tables } => send(*source, warp::backward(g, tables)),
            Op::Sum { input } => {
                let s = nodes[input.0].value.shape();
                send(*input, Tensor::full(s, g.item()));
            }
            Op::Mean { input } => {
                let s = nodes[input.0].value.shape();
                let n = s.len().max(1);
                send(*input, Tensor::full(s, (g.item() as f64 / n as f64) as f32));
            }
            Op::Softplus { input } => {
                let x = &nodes[input.0].value;
                send(*input, g.zip_map(x, |gv, xv| gv * math::sigmoid(xv)).expect("same shape"));
            }
            Op::SpatialMean { input } => {
                let s = nodes[input.0].value.shape();
                let plane = s.plane();
                let inv = 1.0 / plane as f32;
                let gd = g.data();
                let t = Tensor::from_fn(s, |n, c, _, _| gd[n * s.c + c] * inv);
                send(*input, t);
            }
        }
    }
}
