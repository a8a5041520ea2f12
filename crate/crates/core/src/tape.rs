//! Reverse-mode differentiation over a fixed set of operations.
//!
//! Every op call evaluates eagerly, appends one node holding its output and
//! whatever its backward pass needs, and returns a [`Var`] handle.
//! [`Tape::backward`] walks the nodes in exact reverse recording order,
//! summing contributions into each input's accumulator in that order. A tape
//! can be differentiated once; node values are released as the backward
//! sweep passes them and a second call is an error.

use crate::error::{Error, Result};
use crate::layers::{agc, batchnorm, conv, pool, relu, xent};
use crate::layers::{BnContext, LabelMap, Padding, PoolIndices};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    Constant,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    ReduceMean(Var),
    Conv2d {
        input: Var,
        weight: Var,
        padding: Padding,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Agc {
        z: Var,
        lambda: Var,
        gamma: Var,
        beta: Var,
        means: Vec<T>,
    },
    BatchNorm {
        z: Var,
        scale: Var,
        shift: Var,
        ctx: BnContext<T>,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        indices: PoolIndices,
    },
    Unpool {
        input: Var,
        pool: Var,
    },
    SoftmaxXent {
        logits: Var,
        grad: Tensor<T>,
    },
}

struct Node<T: Real> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of the differentiable leaves, indexed by their [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The recorded value of `var`. Panics if the backward sweep already
    /// released it.
    pub fn value(&self, var: Var) -> &Tensor<T> {
        self.nodes[var.0]
            .value
            .as_ref()
            .expect("tape value released by backward")
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::Tape("cannot record on a tape after backward".into()));
        }
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// A differentiable input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
            .expect("leaf on consumed tape")
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
            .expect("constant on consumed tape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn reduce_mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).reduce_mean(axes)?;
        self.push(out, Op::ReduceMean(a), &[a])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, padding: Padding) -> Result<Var> {
        let out = conv::conv2d(self.value(input), self.value(weight), padding)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                padding,
            },
            &[input, weight],
        )
    }

    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let out = conv::add_channel_bias(self.value(input), self.value(bias))?;
        self.push(out, Op::ChannelBias { input, bias }, &[input, bias])
    }

    pub fn agc(&mut self, z: Var, lambda: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, means) = agc::agc_forward_with_means(
            self.value(z),
            self.value(lambda),
            self.value(gamma),
            self.value(beta),
        )?;
        self.push(
            out,
            Op::Agc {
                z,
                lambda,
                gamma,
                beta,
                means,
            },
            &[z, lambda, gamma, beta],
        )
    }

    /// Train-mode batch normalization. Returns the output together with the
    /// batch mean and variance so the caller can update running statistics.
    pub fn batchnorm(
        &mut self,
        z: Var,
        scale: Var,
        shift: Var,
        epsilon: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (out, ctx) = batchnorm::batchnorm_train(
            self.value(z),
            self.value(scale),
            self.value(shift),
            epsilon,
        )?;
        let (mean, var) = (ctx.mean.clone(), ctx.var.clone());
        let v = self.push(
            out,
            Op::BatchNorm {
                z,
                scale,
                shift,
                ctx,
            },
            &[z, scale, shift],
        )?;
        Ok((v, mean, var))
    }

    pub fn relu(&mut self, z: Var) -> Result<Var> {
        let out = relu::relu(self.value(z));
        self.push(out, Op::Relu(z), &[z])
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, indices) = pool::maxpool2x2(self.value(input))?;
        self.push(out, Op::MaxPool { input, indices }, &[input])
    }

    /// Unpools `input` using the indices recorded by the max-pool node `pool`.
    pub fn unpool2x2(&mut self, input: Var, pool: Var) -> Result<Var> {
        let out = match &self.nodes[pool.0].op {
            Op::MaxPool { indices, .. } => pool::unpool2x2(self.value(input), indices)?,
            _ => return Err(Error::Tape(format!("node {} is not a max-pool", pool.0))),
        };
        self.push(out, Op::Unpool { input, pool }, &[input])
    }

    pub fn softmax_xent(
        &mut self,
        logits: Var,
        labels: &LabelMap,
        class_weights: &[T],
    ) -> Result<Var> {
        let (loss, grad) = xent::weighted_softmax_xent(self.value(logits), labels, class_weights)?;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, grad },
            &[logits],
        )
    }

    /// Pool indices recorded by a max-pool node.
    pub fn pool_indices(&self, pool: Var) -> Option<&PoolIndices> {
        match &self.nodes[pool.0].op {
            Op::MaxPool { indices, .. } => Some(indices),
            _ => None,
        }
    }

    /// Differentiates the scalar `loss` with respect to every leaf.
    ///
    /// Leaves the loss does not depend on get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Tape("empty tape".into()));
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {loss_shape:?}"
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&loss_shape, T::one())?);

        for i in (0..n).rev() {
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros_like(self.value(Var(i))));
                }
                continue;
            }
            if let Some(g) = grads[i].take() {
                if self.nodes[i].requires_grad {
                    for (input, contribution) in self.node_backward(i, &g)? {
                        accumulate(&mut grads[input.0], contribution)?;
                    }
                }
            }
            // Nothing recorded before `i` reads node `i`'s own state.
            self.nodes[i].value = None;
            self.nodes[i].op = Op::Constant;
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::with_capacity(4);
        let mut emit = |v: Var, t: Tensor<T>| {
            if self.needs(v) {
                out.push((v, t));
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                emit(*a, g.clone());
                emit(*b, g.clone());
            }
            Op::Mul(a, b) => {
                emit(*a, g.mul(self.value(*b))?);
                emit(*b, g.mul(self.value(*a))?);
            }
            Op::Scale(a, c) => emit(*a, g.scale(*c)),
            Op::Sum(a) => {
                let gv = g.item()?;
                emit(*a, Tensor::full(self.value(*a).shape(), gv)?);
            }
            Op::ReduceMean(a) => {
                let x = self.value(*a);
                let count = T::from_f64((x.len() / g.len()) as f64);
                let spread: Vec<T> = (0..x.len())
                    .map(|f| g.data()[x.reduced_index(f, g.shape())] / count)
                    .collect();
                emit(*a, x.with_data(spread));
            }
            Op::Conv2d {
                input,
                weight,
                padding,
            } => {
                let (gi, gw) = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *padding,
                    g,
                    self.needs(*input),
                )?;
                if let Some(gi) = gi {
                    emit(*input, gi);
                }
                emit(*weight, gw);
            }
            Op::ChannelBias { input, bias } => {
                emit(*bias, conv::channel_sums(g)?);
                emit(*input, g.clone());
            }
            Op::Agc {
                z,
                lambda,
                gamma,
                beta,
                means,
            } => {
                let grads = agc::agc_backward_with_means(
                    self.value(*z),
                    means,
                    self.value(*lambda),
                    self.value(*gamma),
                    g,
                )?;
                emit(*z, grads.z);
                emit(*lambda, grads.lambda);
                emit(*gamma, grads.gamma);
                emit(*beta, grads.beta);
            }
            Op::BatchNorm {
                z,
                scale,
                shift,
                ctx,
            } => {
                let (gz, gs, gb) = batchnorm::batchnorm_backward(ctx, self.value(*scale), g)?;
                emit(*z, gz);
                emit(*scale, gs);
                emit(*shift, gb);
            }
            Op::Relu(z) => emit(*z, relu::relu_backward(self.value(Var(i)), g)?),
            Op::MaxPool { input, indices } => emit(*input, pool::scatter(g, indices)),
            Op::Unpool { input, pool: p } => {
                let indices = self
                    .pool_indices(*p)
                    .ok_or_else(|| Error::Tape("missing pool indices".into()))?;
                emit(*input, pool::unpool2x2_backward(g, indices)?);
            }
            Op::SoftmaxXent { logits, grad } => emit(*logits, grad.scale(g.item()?)),
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, contribution: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&contribution),
        None => {
            *slot = Some(contribution);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., -2., 3., 0.5, 7., 8.]));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        let unused = tape.leaf(t(&[3], &[1., 2., 3.]));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[2], &[1., 2.]));
        let x = tape.leaf(t(&[2], &[3., 4.]));
        let p = tape.mul(c, x).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn second_backward_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1., 2.]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
        assert!(tape.sum(x).is_err());
    }

    #[test]
    fn empty_tape_rejected() {
        let mut tape = Tape::<f64>::new();
        // an empty tape has no valid Var; fabricate one through a throwaway tape
        let mut other = Tape::<f64>::new();
        let v = other.leaf(Tensor::scalar(1.0));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn reduce_mean_gradient_spreads_evenly() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let m = tape.reduce_mean(x, &[2, 3]).unwrap();
        let w = tape.constant(t(&[2, 1, 1, 1], &[1., 3.]));
        let p = tape.mul(m, w).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75]
        );
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.]));
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.add(a, x).unwrap();
        let loss = tape.sum(b).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn unpool_requires_pool_node() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        let y = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]).unwrap());
        assert!(tape.unpool2x2(y, x).is_err());
    }
}
