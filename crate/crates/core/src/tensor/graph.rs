use super::kernels::{conv2d_backward, conv2d_forward, Exec};
use super::{Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
        padding: usize,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Square {
        input: Var,
    },
    Sum {
        input: Var,
    },
    SumPerImage {
        input: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            Op::Act { input, .. }
            | Op::Slice { input, .. }
            | Op::Scale { input, .. }
            | Op::Square { input }
            | Op::Sum { input }
            | Op::SumPerImage { input } => vec![*input],
            Op::Concat { inputs } => inputs.clone(),
            Op::Binary { a, b, .. } => vec![*a, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run tape. Every operation appends a node; [`Graph::backward`]
/// walks the tape in reverse creation order.
///
/// Gradients are accumulated only on leaves created with `requires_grad`.
/// Calling `backward` twice without [`Graph::zero_grad`] adds the second
/// pass onto the first.
pub struct Graph {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a `requires_grad` leaf, if a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Stride-1 cross-correlation. `weight` is `[outC, inC, kH, kW]`, `bias`
    /// holds `outC` values in any shape.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let out = conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias).data(),
            dilation,
            padding,
            self.exec,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
                padding,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = match kind {
            Activation::Relu => self.value(input).map(|x| if x <= 0.0 { 0.0 } else { x }),
            Activation::Sigmoid => self.value(input).map(sigmoid),
        };
        self.push(out, Op::Act { input, kind })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn slice_channels(
        &mut self,
        input: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let out = self.value(input).slice_channels(start, len)?;
        Ok(self.push(out, Op::Slice { input, start }))
    }

    /// Element-wise `a + b`. `b` may have one channel and is then repeated
    /// across the channels of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Add)
    }

    /// Element-wise `a - b`, same broadcasting as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Sub)
    }

    /// Element-wise `a * b`, same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Mul)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let map = Broadcast::new(ta.shape(), tb.shape())?;
        let (da, db) = (ta.data(), tb.data());
        let data = (0..da.len())
            .map(|i| {
                let (x, y) = (da[i], db[map.b_index(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Binary { a, b, kind }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|x| x * factor);
        self.push(out, Op::Scale { input, factor })
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| x * x);
        self.push(out, Op::Square { input })
    }

    /// Sum of every element, as a 1x1x1x1 tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input })
    }

    /// Per-batch-entry sum, shape `N x 1 x 1 x 1`.
    pub fn sum_per_image(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let n = t.shape().batch;
        let per = t.len() / n.max(1);
        let data = t
            .data()
            .chunks(per.max(1))
            .map(|c| c.iter().sum())
            .collect();
        let out = Tensor::new(Shape::new(n, 1, 1, 1), data).expect("per-image sums");
        self.push(out, Op::SumPerImage { input })
    }

    /// Reverse-mode pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            for v in node.op.inputs() {
                assert!(v.0 < i, "graph cycle: node {i} consumes node {}", v.0);
            }
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaf_grads.push((i, g));
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    dilation,
                    padding,
                } => {
                    let cg = conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *dilation,
                        *padding,
                        self.exec,
                    )?;
                    if needs(*input) {
                        accumulate(&mut grads, *input, cg.input);
                    }
                    if needs(*weight) {
                        accumulate(&mut grads, *weight, cg.weight);
                    }
                    if needs(*bias) {
                        let bshape = self.shape(*bias);
                        accumulate(&mut grads, *bias, Tensor::new(bshape, cg.bias)?);
                    }
                }
                Op::Act { input, kind } => {
                    let out = &node.value;
                    let x = self.value(*input);
                    let data = match kind {
                        Activation::Relu => x
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                            .collect(),
                        Activation::Sigmoid => out
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&s, &g)| g * s * (1.0 - s))
                            .collect(),
                    };
                    accumulate(&mut grads, *input, Tensor::new(x.shape(), data)?);
                }
                Op::Concat { inputs } => {
                    let mut start = 0;
                    for v in inputs {
                        let c = self.shape(*v).channels;
                        if needs(*v) {
                            accumulate(&mut grads, *v, g.slice_channels(start, c)?);
                        }
                        start += c;
                    }
                }
                Op::Slice { input, start } => {
                    let s = self.shape(*input);
                    let mut full = Tensor::zeros(s);
                    let gs = g.shape();
                    let p = s.plane();
                    for n in 0..s.batch {
                        let dst = (n * s.channels + start) * p;
                        let src = n * gs.channels * p;
                        full.data_mut()[dst..dst + gs.channels * p]
                            .copy_from_slice(&g.data()[src..src + gs.channels * p]);
                    }
                    accumulate(&mut grads, *input, full);
                }
                Op::Binary { a, b, kind } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let map = Broadcast::new(ta.shape(), tb.shape())?;
                    if needs(*a) {
                        let ga = match kind {
                            Binary::Add | Binary::Sub => g.clone(),
                            Binary::Mul => {
                                let data = (0..g.len())
                                    .map(|k| g.data()[k] * tb.data()[map.b_index(k)])
                                    .collect();
                                Tensor::new(g.shape(), data)?
                            }
                        };
                        accumulate(&mut grads, *a, ga);
                    }
                    if needs(*b) {
                        let mut gb = Tensor::zeros(tb.shape());
                        for k in 0..g.len() {
                            let contrib = match kind {
                                Binary::Add => g.data()[k],
                                Binary::Sub => -g.data()[k],
                                Binary::Mul => g.data()[k] * ta.data()[k],
                            };
                            gb.data_mut()[map.b_index(k)] += contrib;
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads, *input, g.map(|x| x * factor));
                }
                Op::Square { input } => {
                    let x = self.value(*input);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(x, g)| 2.0 * x * g)
                        .collect();
                    accumulate(&mut grads, *input, Tensor::new(x.shape(), data)?);
                }
                Op::Sum { input } => {
                    accumulate(
                        &mut grads,
                        *input,
                        Tensor::full(self.shape(*input), g.data()[0]),
                    );
                }
                Op::SumPerImage { input } => {
                    let s = self.shape(*input);
                    let per = s.numel() / s.batch.max(1);
                    let data = (0..s.numel()).map(|k| g.data()[k / per]).collect();
                    accumulate(&mut grads, *input, Tensor::new(s, data)?);
                }
            }
        }

        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shape"),
        slot @ None => *slot = Some(g),
    }
}

/// Logistic function clamped to the open interval (0, 1).
pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Index map from an element of `a` to the matching element of `b`.
struct Broadcast {
    channel_broadcast: bool,
    per_image: usize,
    plane: usize,
}

impl Broadcast {
    fn new(a: Shape, b: Shape) -> Result<Self, TensorError> {
        if a == b {
            return Ok(Self {
                channel_broadcast: false,
                per_image: 0,
                plane: 0,
            });
        }
        if b.channels == 1 && a.same_spatial(&b) {
            return Ok(Self {
                channel_broadcast: true,
                per_image: a.channels * a.plane(),
                plane: a.plane(),
            });
        }
        Err(TensorError::Incompatible(a, b))
    }

    #[inline]
    fn b_index(&self, i: usize) -> usize {
        if self.channel_broadcast {
            (i / self.per_image) * self.plane + i % self.plane
        } else {
            i
        }
    }
}
