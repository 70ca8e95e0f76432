//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records the forward computation as an arena of nodes; ops
//! only ever reference earlier nodes, so reverse creation order is a
//! valid topological order for the backward sweep. Gradients accumulate
//! additively, so a value used on several paths receives the sum of all
//! path gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::kernels::{self, Act, BatchNormSaved};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        saved: BatchNormSaved<F>,
    },
    Activation {
        x: usize,
        act: Act,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Reshape {
        x: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    ConcatChannels {
        a: usize,
        b: usize,
        a_channels: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    /// y = mul·x + add, elementwise with scalar constants; only the
    /// slope matters for the backward pass.
    Affine {
        x: usize,
        mul: F,
    },
    /// Pass-through clamp: gradient flows only where the input was
    /// strictly inside (lo, hi).
    Clamp {
        x: usize,
        lo: F,
        hi: F,
    },
    Ln {
        x: usize,
    },
    MeanAll {
        x: usize,
    },
    Bce {
        pred: usize,
        target: Tensor<F>,
    },
    SoftmaxCe {
        logits: usize,
        targets: Vec<usize>,
        probs: Tensor<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert an input value (parameter or data) with no history.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`backward`](Self::backward) target with
    /// respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // -- op builders --------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let y = kernels::convt2d_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            pad,
            output_pad,
        )?;
        Ok(self.push(
            y,
            Op::ConvT2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
        ))
    }

    /// Training-mode batch norm. Returns the output together with the
    /// batch mean and variance per channel (for running-stat updates).
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<F>, Vec<F>)> {
        let (y, saved) =
            kernels::batchnorm_train_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let mean = saved.mean.clone();
        let var = saved.var.clone();
        let v = self.push(
            y,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                saved,
            },
        );
        Ok((v, mean, var))
    }

    pub fn activation(&mut self, x: Var, act: Act) -> Var {
        let y = kernels::act_forward(self.value(x), act);
        self.push(y, Op::Activation { x: x.0, act })
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::dense_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(
            y,
            Op::Dense {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshaped(shape)?;
        Ok(self.push(y, Op::Reshape { x: x.0 }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = kernels::global_avg_pool_forward(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x: x.0 }))
    }

    /// Concatenate two N×C×H×W batches along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if na != nb || ha != hb || wa != wb {
            return Err(CoreError::Shape(format!(
                "concat_channels mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = ha * wa;
        let mut out = Tensor::zeros(&[na, ca + cb, ha, wa]);
        {
            let od = out.data_mut();
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for n in 0..na {
                let dst = &mut od[n * (ca + cb) * plane..(n + 1) * (ca + cb) * plane];
                dst[..ca * plane].copy_from_slice(&ad[n * ca * plane..(n + 1) * ca * plane]);
                dst[ca * plane..].copy_from_slice(&bd[n * cb * plane..(n + 1) * cb * plane]);
            }
        }
        Ok(self.push(
            out,
            Op::ConcatChannels {
                a: a.0,
                b: b.0,
                a_channels: ca,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = self.value(a).clone();
        for (v, &bv) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = *v + bv;
        }
        Ok(self.push(y, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::Shape(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = self.value(a).clone();
        for (v, &bv) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = *v * bv;
        }
        Ok(self.push(y, Op::Mul { a: a.0, b: b.0 }))
    }

    /// y = mul·x + add.
    pub fn affine(&mut self, x: Var, mul: F, add: F) -> Var {
        let y = self.value(x).map(|v| mul * v + add);
        self.push(y, Op::Affine { x: x.0, mul })
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        self.affine(x, c, F::zero())
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        let y = self.value(x).map(|v| kernels::clamp(v, lo, hi));
        self.push(y, Op::Clamp { x: x.0, lo, hi })
    }

    /// Natural log; callers must guarantee positive inputs (clamp first).
    pub fn ln(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.ln());
        self.push(y, Op::Ln { x: x.0 })
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(CoreError::Empty("mean over empty tensor".into()));
        }
        let inv = F::from_usize(self.value(x).len()).recip();
        let mut acc = F::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        Ok(self.push(Tensor::scalar(acc * inv), Op::MeanAll { x: x.0 }))
    }

    /// Mean binary cross-entropy against fixed 0/1 targets.
    pub fn bce(&mut self, pred: Var, target: Tensor<F>) -> Result<Var> {
        let loss = kernels::bce_forward(self.value(pred), &target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred: pred.0,
                target,
            },
        ))
    }

    /// Mean softmax cross-entropy of logit rows against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let (loss, probs) = kernels::softmax_ce_forward(self.value(logits), &targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: logits.0,
                targets,
                probs,
            },
        ))
    }

    // -- backward ------------------------------------------------------

    /// Reverse sweep from a scalar output; gradients land in each node
    /// and are queried with [`grad`](Self::grad).
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if !self.nodes[out.0].value.is_scalar() {
            return Err(CoreError::InvalidArg(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[out.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.nodes[out.0].value.shape(), F::one()));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.dispatch(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn dispatch(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    *stride,
                    *pad,
                    g,
                )?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *w, dw)?;
                accumulate(grads, *b, db)?;
            }
            Op::ConvT2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) = kernels::convt2d_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*w].value,
                    *stride,
                    *pad,
                    g,
                )?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *w, dw)?;
                accumulate(grads, *b, db)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(
                    &self.nodes[*x].value,
                    &self.nodes[*gamma].value,
                    saved,
                    g,
                )?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *gamma, dgamma)?;
                accumulate(grads, *beta, dbeta)?;
            }
            Op::Activation { x, act } => {
                let dx = kernels::act_backward(
                    &self.nodes[*x].value,
                    &self.nodes[idx].value,
                    g,
                    *act,
                );
                accumulate(grads, *x, dx)?;
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) =
                    kernels::dense_backward(&self.nodes[*x].value, &self.nodes[*w].value, g)?;
                accumulate(grads, *x, dx)?;
                accumulate(grads, *w, dw)?;
                accumulate(grads, *b, db)?;
            }
            Op::Reshape { x } => {
                let dx = g.reshaped(self.nodes[*x].value.shape())?;
                accumulate(grads, *x, dx)?;
            }
            Op::GlobalAvgPool { x } => {
                let dx = kernels::global_avg_pool_backward(self.nodes[*x].value.shape(), g);
                accumulate(grads, *x, dx)?;
            }
            Op::ConcatChannels { a, b, a_channels } => {
                let (n, ctot, h, w) = self.nodes[idx].value.dims4()?;
                let ca = *a_channels;
                let cb = ctot - ca;
                let plane = h * w;
                let mut da = Tensor::zeros(self.nodes[*a].value.shape());
                let mut db = Tensor::zeros(self.nodes[*b].value.shape());
                for ni in 0..n {
                    let src = &g.data()[ni * ctot * plane..(ni + 1) * ctot * plane];
                    da.data_mut()[ni * ca * plane..(ni + 1) * ca * plane]
                        .copy_from_slice(&src[..ca * plane]);
                    db.data_mut()[ni * cb * plane..(ni + 1) * cb * plane]
                        .copy_from_slice(&src[ca * plane..]);
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Mul { a, b } => {
                let mut da = g.clone();
                for (d, &bv) in da.data_mut().iter_mut().zip(self.nodes[*b].value.data()) {
                    *d = *d * bv;
                }
                let mut db = g.clone();
                for (d, &av) in db.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                    *d = *d * av;
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Affine { x, mul } => {
                let m = *mul;
                let dx = g.map(|v| v * m);
                accumulate(grads, *x, dx)?;
            }
            Op::Clamp { x, lo, hi } => {
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(self.nodes[*x].value.data()) {
                    if xv <= *lo || xv >= *hi {
                        *d = F::zero();
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::Ln { x } => {
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(self.nodes[*x].value.data()) {
                    *d = *d / xv;
                }
                accumulate(grads, *x, dx)?;
            }
            Op::MeanAll { x } => {
                let len = self.nodes[*x].value.len();
                let gv = g.data()[0] * F::from_usize(len).recip();
                let dx = Tensor::full(self.nodes[*x].value.shape(), gv);
                accumulate(grads, *x, dx)?;
            }
            Op::Bce { pred, target } => {
                let dp = kernels::bce_backward(&self.nodes[*pred].value, target, g.data()[0]);
                accumulate(grads, *pred, dp)?;
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let dl = kernels::softmax_ce_backward(probs, targets, g.data()[0]);
                accumulate(grads, *logits, dl)?;
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], idx: usize, g: Tensor<F>) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_grad_is_one() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(4.0f64));
        let loss = tape.mean_all(w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data()[0], 1.0);
    }

    #[test]
    fn square_grad_is_two_w() {
        // f(w) = w² at w = 3 → df/dw = 6.
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0f64));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.mean_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data()[0], 6.0);
    }

    #[test]
    fn shared_use_accumulates() {
        // w used twice: f = mean(w·a) + mean(w·b) must equal the
        // single-use rewrite f = mean(w·(a+b)) in gradient.
        let a = Tensor::new(&[3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[3], vec![-1.0f64, 0.5, 2.0]).unwrap();
        let w0 = Tensor::new(&[3], vec![0.3f64, -0.7, 1.1]).unwrap();

        let mut t1 = Tape::new();
        let w = t1.leaf(w0.clone());
        let av = t1.leaf(a.clone());
        let bv = t1.leaf(b.clone());
        let pa = t1.mul(w, av).unwrap();
        let pb = t1.mul(w, bv).unwrap();
        let ma = t1.mean_all(pa).unwrap();
        let mb = t1.mean_all(pb).unwrap();
        let loss = t1.add(ma, mb).unwrap();
        t1.backward(loss).unwrap();
        let two_path = t1.grad(w).unwrap().clone();

        let mut t2 = Tape::new();
        let w = t2.leaf(w0);
        let mut ab = a.clone();
        ab.add_assign(&b).unwrap();
        let abv = t2.leaf(ab);
        let p = t2.mul(w, abv).unwrap();
        let loss = t2.mean_all(p).unwrap();
        t2.backward(loss).unwrap();
        let one_path = t2.grad(w).unwrap().clone();

        for (x, y) in two_path.data().iter().zip(one_path.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::<f64>::zeros(&[2, 2]));
        let err = tape.backward(w).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArg(_)));
    }

    #[test]
    fn unreached_leaf_has_no_grad() {
        let mut tape = Tape::new();
        let used = tape.leaf(Tensor::scalar(2.0f64));
        let unused = tape.leaf(Tensor::scalar(5.0f64));
        let loss = tape.mean_all(used).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(unused).is_none());
    }
}
