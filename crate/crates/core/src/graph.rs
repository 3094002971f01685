//! Reverse-mode differentiation over a recorded forward pass.
//!
//! A [`Graph`] is rebuilt for every forward evaluation: leaves are pushed,
//! each op appends a node holding its value and whatever it needs for the
//! backward sweep, and [`Graph::backward`] walks the nodes in reverse.
//! Backward can be run repeatedly with different seeds on the same graph.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Conv2d { input: Var, kernels: Var, bias: Option<Var>, stride: usize, padding: usize },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    MatMul { a: Var, b: Var },
    Relu(Var),
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Reshape(Var),
    /// `scale * x + shift`, constants.
    Affine { input: Var, scale: f64 },
    Add(Var, Var),
    Square(Var),
    Sum(Var),
    CrossEntropy { logits: Var, grad: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::Conv2d { input, kernels, bias, .. } => {
                self.needs(*input) || self.needs(*kernels) || bias.is_some_and(|b| self.needs(b))
            }
            Op::Dense { input, weight, bias } => {
                self.needs(*input) || self.needs(*weight) || bias.is_some_and(|b| self.needs(b))
            }
            Op::MatMul { a, b } | Op::Add(a, b) => self.needs(*a) || self.needs(*b),
            Op::Relu(v) | Op::Reshape(v) | Op::Square(v) | Op::Sum(v) => self.needs(*v),
            Op::MaxPool2 { input, .. } | Op::Affine { input, .. } => self.needs(*input),
            Op::CrossEntropy { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = tensor::conv2d(
            self.value(input),
            self.value(kernels),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(out, Op::Conv2d { input, kernels, bias, stride, padding }))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = tensor::dense(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Dense { input, weight, bias }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = tensor::relu(self.value(input));
        self.push(out, Op::Relu(input))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = tensor::max_pool2(self.value(input))?;
        Ok(self.push(out, Op::MaxPool2 { input, argmax }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::lit(scale), T::lit(shift));
        let out = self.value(input).map(|v| s * v + b);
        self.push(out, Op::Affine { input, scale })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v * v);
        self.push(out, Op::Square(input))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum(input))
    }

    /// Softmax cross-entropy of `logits` against `label`; a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (loss, grad) = tensor::cross_entropy(self.value(logits), label)?;
        // logit gradient kept as a constant node for the backward sweep
        let grad = self.push(grad, Op::Constant);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, grad }))
    }

    /// Propagates `seed` (shaped like `output`) back to every node it depends on.
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(output).shape() {
            return dim_err(format!(
                "seed shape {:?} does not match output shape {:?}",
                seed.shape(),
                self.value(output).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
            match &mut grads[v.0] {
                Some(acc) => acc.axpy(T::one(), &g),
                slot => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = None;
                continue;
            }
            // leaf gradients stay in place for the caller
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Conv2d { input, kernels, bias, stride, padding } => {
                    let (gx, gk, gb) = tensor::conv2d_backward(
                        self.value(*input),
                        self.value(*kernels),
                        *stride,
                        *padding,
                        &g,
                        (self.needs(*input), self.needs(*kernels)),
                    )?;
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *input, gx)?;
                    }
                    if let Some(gk) = gk {
                        accumulate(&mut grads, *kernels, gk)?;
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        let gb = gb.reshape(self.value(b).shape())?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::Dense { input, weight, bias } => {
                    let (gx, gw, gb) = tensor::dense_backward(self.value(*input), self.value(*weight), &g)?;
                    if self.needs(*input) {
                        accumulate(&mut grads, *input, gx)?;
                    }
                    if self.needs(*weight) {
                        accumulate(&mut grads, *weight, gw)?;
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        let gb = gb.reshape(self.value(b).shape())?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::MatMul { a, b } => {
                    let ga = tensor::matmul(&g, &tensor::transpose(self.value(*b))?)?;
                    let gb = tensor::matmul(&tensor::transpose(self.value(*a))?, &g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Relu(input) => {
                    let gx = tensor::relu_backward(self.value(*input), &g)?;
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::MaxPool2 { input, argmax } => {
                    let gx = tensor::max_pool2_backward(self.value(*input).shape(), argmax, &g)?;
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Reshape(input) => {
                    let gx = g.reshape(self.value(*input).shape())?;
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Affine { input, scale } => {
                    accumulate(&mut grads, *input, g.scale(T::lit(*scale)))?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Square(input) => {
                    let gx = self.value(*input).zip_map(&g, |x, d| (x + x) * d)?;
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Sum(input) => {
                    let gx = Tensor::filled(self.value(*input).shape(), g.data()[0]);
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::CrossEntropy { logits, grad } => {
                    let gx = self.value(*grad).scale(g.data()[0]);
                    accumulate(&mut grads, *logits, gx)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_gradient_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let grads = g.backward(x, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = g.square(x);
        let s = g.sum(sq);
        assert_eq!(g.value(s).data(), &[14.0]);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn seed_shape_is_checked() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x, &Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // f(x) = sum(x + x) => df/dx = 2
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap());
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    /// Every op in one chain, checked against central differences on each leaf.
    #[test]
    fn chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rand = |shape: &[usize], scale: f64| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
        };
        let x0 = rand(&[6, 6, 3], 1.0);
        let k0 = rand(&[3, 3, 3, 3], 0.5);
        let kb0 = rand(&[3], 0.1);
        let w0 = rand(&[12, 4], 0.5);
        let m0 = rand(&[1, 4], 0.5);

        let forward = |x: &Tensor<f64>, k: &Tensor<f64>, kb: &Tensor<f64>, w: &Tensor<f64>, m: &Tensor<f64>| {
            let mut g = Graph::new();
            let (xv, kv, kbv, wv, mv) =
                (g.leaf(x.clone()), g.leaf(k.clone()), g.leaf(kb.clone()), g.leaf(w.clone()), g.leaf(m.clone()));
            let a = g.affine(xv, 0.5, 0.1);
            let c = g.conv2d(a, kv, Some(kbv), 1, 1).unwrap();
            let r = g.relu(c);
            let p = g.max_pool2(r).unwrap(); // [3,3,3]
            let d_in = g.conv2d(p, kv, None, 2, 1).unwrap(); // [2,2,3]
            let d_in = g.reshape(d_in, &[12]).unwrap();
            let d = g.dense(d_in, wv, None).unwrap(); // [4]
            let row = g.reshape(d, &[1, 4]).unwrap();
            let mm = g.add(row, mv).unwrap();
            let logits = g.reshape(mm, &[4]).unwrap();
            let ce = g.cross_entropy(logits, 2).unwrap();
            let sq = g.square(logits);
            let s = g.sum(sq);
            let tot = g.add(ce, s).unwrap();
            (g, [xv, kv, kbv, wv, mv], tot)
        };

        let (g, leaves, out) = forward(&x0, &k0, &kb0, &w0, &m0);
        let grads = g.backward(out, &Tensor::scalar(1.0)).unwrap();
        let mut inputs = [x0, k0, kb0, w0, m0];
        let h = 1e-5;
        for li in 0..inputs.len() {
            let analytic = grads.get(leaves[li]).unwrap().clone();
            for i in 0..inputs[li].len() {
                let orig = inputs[li].data()[i];
                inputs[li].data_mut()[i] = orig + h;
                let (gp, _, op) = forward(&inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4]);
                inputs[li].data_mut()[i] = orig - h;
                let (gm, _, om) = forward(&inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4]);
                inputs[li].data_mut()[i] = orig;
                let fd = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-5, "leaf {li} index {i}: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a0 = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b0 = Tensor::from_vec(&[4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let f = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let mut g = Graph::new();
            let (av, bv) = (g.leaf(a.clone()), g.leaf(b.clone()));
            let m = g.matmul(av, bv).unwrap();
            let sq = g.square(m);
            let s = g.sum(sq);
            (g, av, bv, s)
        };
        let (g, av, bv, s) = f(&a0, &b0);
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        let h = 1e-6;
        for i in 0..12 {
            let mut ap = a0.clone();
            ap.data_mut()[i] += h;
            let mut am = a0.clone();
            am.data_mut()[i] -= h;
            let (gp, _, _, sp) = f(&ap, &b0);
            let (gm, _, _, sm) = f(&am, &b0);
            let fd = (gp.value(sp).data()[0] - gm.value(sm).data()[0]) / (2.0 * h);
            assert!((grads.get(av).unwrap().data()[i] - fd).abs() < 1e-6);
        }
        assert_eq!(grads.get(bv).unwrap().shape(), &[4, 2]);
    }
}
