use crate::ops::{self, ConvSpec};
use crate::{NnError, Result, Scalar, Shape4, Tensor4};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    ReflectionPad {
        input: Var,
        pad: usize,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    UnitTanh {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    /// `mean((x - target)^2)`
    MseToConst {
        input: Var,
        target: T,
    },
    /// `mean(|a - b|)`
    MeanAbsDiff {
        lhs: Var,
        rhs: Var,
    },
    /// `0.5 * sum(x^2) / batch`
    HalfSquaredNorm {
        input: Var,
    },
    /// `sum(x * weights)` against a constant weight grid.
    DotConst {
        input: Var,
        weights: Tensor4<T>,
    },
    Scale {
        input: Var,
        factor: T,
    },
    SumScalars {
        inputs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode recorder for the fixed operator set of this crate.
///
/// Values are computed eagerly. A node requires a gradient when any of its
/// inputs does; leaves decide for themselves. [`Graph::backward`] returns
/// gradients for every gradient-requiring leaf the root depends on.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of a scalar root with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor4<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor4<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor4<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor4<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant copy of `var`'s value that blocks gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let value = ops::conv2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            rg,
        ))
    }

    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let value = ops::conv_transpose2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec,
            },
            rg,
        ))
    }

    pub fn reflection_pad2d(&mut self, input: Var, pad: usize) -> Result<Var> {
        let value = ops::reflection_pad2d(self.value(input), pad)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::ReflectionPad { input, pad }, rg))
    }

    pub fn instance_norm(&mut self, input: Var, eps: T) -> Var {
        let out = ops::instance_norm(self.value(input), eps);
        let rg = self.requires_grad(input);
        self.push(
            out.output,
            Op::InstanceNorm {
                input,
                inv_std: out.inv_std,
            },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = ops::leaky_relu(self.value(input), slope);
        let rg = self.requires_grad(input);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.leaky_relu(input, T::zero())
    }

    pub fn unit_tanh(&mut self, input: Var) -> Var {
        let value = ops::unit_tanh(self.value(input));
        let rg = self.requires_grad(input);
        self.push(value, Op::UnitTanh { input }, rg)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(NnError::shape("add", a.shape(), b.shape()));
        }
        let mut value = a.clone();
        value.add_assign(b);
        let rg = self.any_grad(&[Some(lhs), Some(rhs)]);
        Ok(self.push(value, Op::Add { lhs, rhs }, rg))
    }

    pub fn mse_to_const(&mut self, input: Var, target: T) -> Var {
        let x = self.value(input);
        let n = T::from_usize(x.len()).unwrap();
        let v = x.data().iter().map(|&v| (v - target) * (v - target)).sum::<T>() / n;
        let rg = self.requires_grad(input);
        self.push(Tensor4::scalar(v), Op::MseToConst { input, target }, rg)
    }

    pub fn mean_abs_diff(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(NnError::shape("mean_abs_diff", a.shape(), b.shape()));
        }
        let n = T::from_usize(a.len()).unwrap();
        let v = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        let rg = self.any_grad(&[Some(lhs), Some(rhs)]);
        Ok(self.push(Tensor4::scalar(v), Op::MeanAbsDiff { lhs, rhs }, rg))
    }

    pub fn half_squared_norm(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let batch = T::from_usize(x.shape().n).unwrap();
        let half = T::from_f64_lossy(0.5);
        let v = half * x.data().iter().map(|&v| v * v).sum::<T>() / batch;
        let rg = self.requires_grad(input);
        self.push(Tensor4::scalar(v), Op::HalfSquaredNorm { input }, rg)
    }

    pub fn dot_const(&mut self, input: Var, weights: Tensor4<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(NnError::shape("dot_const", x.shape(), weights.shape()));
        }
        let v = x.dot(&weights);
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor4::scalar(v), Op::DotConst { input, weights }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    pub fn sum_scalars(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut acc = T::zero();
        for &v in inputs {
            let t = self.value(v);
            if t.shape() != Shape4::scalar() {
                return Err(NnError::shape("sum_scalars", Shape4::scalar(), t.shape()));
            }
            acc = acc + t.item();
        }
        let rg = inputs.iter().any(|v| self.requires_grad(*v));
        Ok(self.push(
            Tensor4::scalar(acc),
            Op::SumScalars {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root` (seeded with gradient 1).
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.value(root).shape();
        if root_shape != Shape4::scalar() {
            return Err(NnError::shape("backward", Shape4::scalar(), root_shape));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..=root.0).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor4::scalar(T::one()));
        let mut settled: Vec<Option<Tensor4<T>>> = (0..=root.0).map(|_| None).collect();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                settled[i] = Some(g);
            }
        }
        Ok(Gradients { grads: settled })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor4<T>, grads: &mut [Option<Tensor4<T>>]) -> Result<()> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            }
            | Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let need = (rg(*input), rg(*weight), bias.is_some_and(rg));
                let x = self.value(*input);
                let w = self.value(*weight);
                let out = if matches!(node.op, Op::Conv2d { .. }) {
                    ops::conv2d_backward(x, w, g, *spec, need)?
                } else {
                    ops::conv_transpose2d_backward(x, w, g, *spec, need)?
                };
                if let Some(gx) = out.input {
                    accumulate(&mut grads[input.0], gx);
                }
                if let Some(gw) = out.weight {
                    accumulate(&mut grads[weight.0], gw);
                }
                if let (Some(b), Some(gb)) = (bias, out.bias) {
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::ReflectionPad { input, pad } => {
                let gx = ops::reflection_pad2d_backward(self.value(*input).shape(), g, *pad);
                accumulate(&mut grads[input.0], gx);
            }
            Op::InstanceNorm { input, inv_std } => {
                let gx = ops::instance_norm_backward(&node.value, inv_std, g);
                accumulate(&mut grads[input.0], gx);
            }
            Op::LeakyRelu { input, slope } => {
                let gx = ops::leaky_relu_backward(self.value(*input), g, *slope);
                accumulate(&mut grads[input.0], gx);
            }
            Op::UnitTanh { input } => {
                let gx = ops::unit_tanh_backward(&node.value, g);
                accumulate(&mut grads[input.0], gx);
            }
            Op::Add { lhs, rhs } => {
                if rg(*lhs) {
                    accumulate(&mut grads[lhs.0], g.clone());
                }
                if rg(*rhs) {
                    accumulate(&mut grads[rhs.0], g.clone());
                }
            }
            Op::MseToConst { input, target } => {
                let x = self.value(*input);
                let n = T::from_usize(x.len()).unwrap();
                let k = T::from_f64_lossy(2.0) * g.item() / n;
                accumulate(&mut grads[input.0], x.map(|v| k * (v - *target)));
            }
            Op::MeanAbsDiff { lhs, rhs } => {
                let (a, b) = (self.value(*lhs), self.value(*rhs));
                let n = T::from_usize(a.len()).unwrap();
                let k = g.item() / n;
                let mut ga = a.clone();
                for (v, &bv) in ga.data_mut().iter_mut().zip(b.data()) {
                    let d = *v - bv;
                    *v = if d > T::zero() {
                        k
                    } else if d < T::zero() {
                        -k
                    } else {
                        T::zero()
                    };
                }
                if rg(*rhs) {
                    accumulate(&mut grads[rhs.0], ga.map(|v| -v));
                }
                if rg(*lhs) {
                    accumulate(&mut grads[lhs.0], ga);
                }
            }
            Op::HalfSquaredNorm { input } => {
                let x = self.value(*input);
                let k = g.item() / T::from_usize(x.shape().n).unwrap();
                accumulate(&mut grads[input.0], x.map(|v| k * v));
            }
            Op::DotConst { input, weights } => {
                let k = g.item();
                accumulate(&mut grads[input.0], weights.map(|v| k * v));
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                accumulate(&mut grads[input.0], g.map(|v| v * f));
            }
            Op::SumScalars { inputs } => {
                for &v in inputs {
                    if rg(v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
        }
        Ok(())
    }
}
