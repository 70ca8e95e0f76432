//! Layer graph shared by the generator, discriminator, and classifier.
//!
//! A [`Network`] is an ordered list of layers owning their parameters.
//! Training passes run on a [`Tape`]; inference runs tape-free through
//! the same kernels, so both paths produce identical numbers for
//! identical weights (batch norm aside: training uses batch statistics,
//! inference the running ones).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::kernels::{self, Act};
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

pub enum Layer<F> {
    Dense {
        w: Parameter<F>,
        b: Parameter<F>,
    },
    Conv2d {
        w: Parameter<F>,
        b: Parameter<F>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        w: Parameter<F>,
        b: Parameter<F>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    },
    BatchNorm2d {
        gamma: Parameter<F>,
        beta: Parameter<F>,
        /// Exponential averages of the batch statistics, zero-debiased
        /// on read (like Adam's moment correction) so evaluation mode is
        /// meaningful after only a few training steps.
        running_mean: Tensor<F>,
        running_var: Tensor<F>,
        updates: u64,
        momentum: f64,
        eps: f64,
    },
    Activation(Act),
    /// Per-sample target shape (batch dimension is preserved).
    Reshape(Vec<usize>),
    /// Collapse each sample to a row vector.
    Flatten,
    GlobalAvgPool,
}

impl<F: Scalar> Layer<F> {
    pub fn batchnorm(channels: usize, name_prefix: &str) -> Self {
        Layer::BatchNorm2d {
            gamma: Parameter::new(format!("{name_prefix}.gamma"), Tensor::full(&[channels], F::one())),
            beta: Parameter::new(format!("{name_prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::zeros(&[channels]),
            updates: 0,
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Update-counter sentinel marking re-estimated (exact) batch-norm
/// statistics; large enough that the debias factor is exactly 1.
const REFRESHED_STATS: u64 = 1 << 30;

/// Tape handles of one forward pass's parameter leaves, in parameter
/// order. Each training pass yields its own binding; gradients flow back
/// through [`Network::accumulate_grads`] with the binding that produced
/// them (a network forwarded twice on one tape has two bindings, and
/// both carry gradients).
pub struct Binding(Vec<Var>);

pub struct Network<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Self { layers }
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { w, b }
                | Layer::Conv2d { w, b, .. }
                | Layer::ConvTranspose2d { w, b, .. } => {
                    out.push(w);
                    out.push(b);
                }
                Layer::BatchNorm2d { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { w, b }
                | Layer::Conv2d { w, b, .. }
                | Layer::ConvTranspose2d { w, b, .. } => {
                    out.push(w);
                    out.push(b);
                }
                Layer::BatchNorm2d { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Draw kernel/dense weights from N(0, std²), zero the biases, and
    /// reset batch-norm to identity (gamma 1, beta 0, fresh running
    /// stats). Rejects std <= 0.
    pub fn init_weights(&mut self, std: f64, rng: &mut SeedStream) -> Result<()> {
        if std <= 0.0 {
            return Err(CoreError::InvalidArg(format!(
                "weight init std must be > 0, got {std}"
            )));
        }
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { w, b }
                | Layer::Conv2d { w, b, .. }
                | Layer::ConvTranspose2d { w, b, .. } => {
                    for v in w.value.data_mut() {
                        *v = F::from_f64(rng.normal() * std);
                    }
                    b.value.fill(F::zero());
                    w.zero_grad();
                    b.zero_grad();
                }
                Layer::BatchNorm2d {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    updates,
                    ..
                } => {
                    gamma.value.fill(F::one());
                    beta.value.fill(F::zero());
                    running_mean.fill(F::zero());
                    running_var.fill(F::zero());
                    *updates = 0;
                    gamma.zero_grad();
                    beta.zero_grad();
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Training-mode forward on the tape. Binds every parameter as a
    /// fresh leaf and updates batch-norm running statistics. The
    /// returned [`Binding`] routes this pass's gradients back in
    /// [`accumulate_grads`](Self::accumulate_grads).
    pub fn forward_train(&mut self, tape: &mut Tape<F>, input: Var) -> Result<(Var, Binding)> {
        let mut bound = Vec::new();
        let mut cur = input;
        for layer in &mut self.layers {
            cur = match layer {
                Layer::Dense { w, b } => {
                    let wv = tape.leaf(w.value.clone());
                    let bv = tape.leaf(b.value.clone());
                    bound.push(wv);
                    bound.push(bv);
                    tape.dense(cur, wv, bv)?
                }
                Layer::Conv2d { w, b, stride, pad } => {
                    let wv = tape.leaf(w.value.clone());
                    let bv = tape.leaf(b.value.clone());
                    bound.push(wv);
                    bound.push(bv);
                    tape.conv2d(cur, wv, bv, *stride, *pad)?
                }
                Layer::ConvTranspose2d {
                    w,
                    b,
                    stride,
                    pad,
                    output_pad,
                } => {
                    let wv = tape.leaf(w.value.clone());
                    let bv = tape.leaf(b.value.clone());
                    bound.push(wv);
                    bound.push(bv);
                    tape.conv_transpose2d(cur, wv, bv, *stride, *pad, *output_pad)?
                }
                Layer::BatchNorm2d {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    updates,
                    momentum,
                    eps,
                } => {
                    let gv = tape.leaf(gamma.value.clone());
                    let bv = tape.leaf(beta.value.clone());
                    bound.push(gv);
                    bound.push(bv);
                    let (y, mean, var) = tape.batchnorm_train(cur, gv, bv, *eps)?;
                    let m = F::from_f64(*momentum);
                    let keep = F::one() - m;
                    for (r, &bm) in running_mean.data_mut().iter_mut().zip(&mean) {
                        *r = keep * *r + m * bm;
                    }
                    for (r, &bv2) in running_var.data_mut().iter_mut().zip(&var) {
                        *r = keep * *r + m * bv2;
                    }
                    *updates += 1;
                    y
                }
                Layer::Activation(act) => tape.activation(cur, *act),
                Layer::Reshape(dims) => {
                    let batch = tape.value(cur).shape()[0];
                    let mut shape = Vec::with_capacity(dims.len() + 1);
                    shape.push(batch);
                    shape.extend_from_slice(dims);
                    tape.reshape(cur, &shape)?
                }
                Layer::Flatten => {
                    let s = tape.value(cur).shape();
                    let batch = s[0];
                    let rest: usize = s[1..].iter().product();
                    tape.reshape(cur, &[batch, rest])?
                }
                Layer::GlobalAvgPool => tape.global_avg_pool(cur)?,
            };
        }
        Ok((cur, Binding(bound)))
    }

    /// Add one pass's tape gradients into each parameter's `grad`.
    pub fn accumulate_grads(&mut self, tape: &Tape<F>, binding: &Binding) -> Result<()> {
        let mut params = self.params_mut();
        if binding.0.len() != params.len() {
            return Err(CoreError::InvalidArg(format!(
                "binding carries {} leaves for {} parameters",
                binding.0.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(&binding.0) {
            if let Some(g) = tape.grad(*v) {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward without a tape (running batch-norm stats,
    /// no gradient bookkeeping).
    pub fn infer(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.infer_capture_pool(input)?.0)
    }

    /// Re-estimate batch-norm population statistics under the current
    /// weights by forwarding the given batches in training mode and
    /// pooling the per-batch moments. Few-step runs leave the
    /// exponential averages biased toward early network states; this
    /// pins evaluation mode to the final weights instead.
    pub fn refresh_batchnorm(&mut self, batches: &[Tensor<F>]) -> Result<()> {
        if batches.is_empty() {
            return Err(CoreError::Empty("batch-norm refresh needs at least one batch".into()));
        }
        struct Acc {
            weighted_mean: Vec<f64>,
            weighted_sq: Vec<f64>,
            weight: f64,
        }
        let mut accs: Vec<Option<Acc>> = (0..self.layers.len()).map(|_| None).collect();
        for batch in batches {
            let mut cur = batch.clone();
            for (li, layer) in self.layers.iter().enumerate() {
                cur = match layer {
                    Layer::Dense { w, b } => kernels::dense_forward(&cur, &w.value, &b.value)?,
                    Layer::Conv2d { w, b, stride, pad } => {
                        kernels::conv2d_forward(&cur, &w.value, &b.value, *stride, *pad)?
                    }
                    Layer::ConvTranspose2d {
                        w,
                        b,
                        stride,
                        pad,
                        output_pad,
                    } => kernels::convt2d_forward(
                        &cur, &w.value, &b.value, *stride, *pad, *output_pad,
                    )?,
                    Layer::BatchNorm2d {
                        gamma, beta, eps, ..
                    } => {
                        let (n, c, h, w) = cur.dims4()?;
                        let m = (n * h * w) as f64;
                        let (y, saved) =
                            kernels::batchnorm_train_forward(&cur, &gamma.value, &beta.value, *eps)?;
                        let acc = accs[li].get_or_insert_with(|| Acc {
                            weighted_mean: alloc::vec![0.0; c],
                            weighted_sq: alloc::vec![0.0; c],
                            weight: 0.0,
                        });
                        for i in 0..c {
                            let mu = saved.mean[i].as_f64();
                            acc.weighted_mean[i] += m * mu;
                            acc.weighted_sq[i] += m * (saved.var[i].as_f64() + mu * mu);
                        }
                        acc.weight += m;
                        y
                    }
                    Layer::Activation(act) => kernels::act_forward(&cur, *act),
                    Layer::Reshape(dims) => {
                        let batch_n = cur.shape()[0];
                        let mut shape = Vec::with_capacity(dims.len() + 1);
                        shape.push(batch_n);
                        shape.extend_from_slice(dims);
                        cur.reshaped(&shape)?
                    }
                    Layer::Flatten => {
                        let batch_n = cur.shape()[0];
                        let rest: usize = cur.shape()[1..].iter().product();
                        cur.reshaped(&[batch_n, rest])?
                    }
                    Layer::GlobalAvgPool => kernels::global_avg_pool_forward(&cur)?,
                };
            }
        }
        for (layer, acc) in self.layers.iter_mut().zip(accs) {
            if let Layer::BatchNorm2d {
                running_mean,
                running_var,
                updates,
                ..
            } = layer
            {
                let Some(acc) = acc else { continue };
                for (i, r) in running_mean.data_mut().iter_mut().enumerate() {
                    *r = F::from_f64(acc.weighted_mean[i] / acc.weight);
                }
                for (i, r) in running_var.data_mut().iter_mut().enumerate() {
                    let mu = acc.weighted_mean[i] / acc.weight;
                    *r = F::from_f64((acc.weighted_sq[i] / acc.weight - mu * mu).max(0.0));
                }
                *updates = REFRESHED_STATS;
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward that also returns the output of the last
    /// [`Layer::GlobalAvgPool`], the embedding used for feature-space
    /// comparisons. None when the network has no pooling layer.
    pub fn infer_capture_pool(&self, input: &Tensor<F>) -> Result<(Tensor<F>, Option<Tensor<F>>)> {
        let mut cur = input.clone();
        let mut pooled = None;
        for layer in &self.layers {
            cur = match layer {
                Layer::Dense { w, b } => kernels::dense_forward(&cur, &w.value, &b.value)?,
                Layer::Conv2d { w, b, stride, pad } => {
                    kernels::conv2d_forward(&cur, &w.value, &b.value, *stride, *pad)?
                }
                Layer::ConvTranspose2d {
                    w,
                    b,
                    stride,
                    pad,
                    output_pad,
                } => kernels::convt2d_forward(&cur, &w.value, &b.value, *stride, *pad, *output_pad)?,
                Layer::BatchNorm2d {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    updates,
                    momentum,
                    eps,
                } => {
                    // Zero-debias the exponential averages; before any
                    // training step fall back to the identity prior.
                    let (mean, var) = if *updates == 0 {
                        (
                            Tensor::zeros(running_mean.shape()),
                            Tensor::full(running_var.shape(), F::one()),
                        )
                    } else {
                        let u = (*updates).min(i32::MAX as u64) as i32;
                        let bc = F::one() - F::from_f64((1.0 - momentum).powi(u));
                        (
                            running_mean.map(|v| v / bc),
                            running_var.map(|v| v / bc),
                        )
                    };
                    kernels::batchnorm_eval_forward(
                        &cur,
                        &gamma.value,
                        &beta.value,
                        &mean,
                        &var,
                        *eps,
                    )?
                }
                Layer::Activation(act) => kernels::act_forward(&cur, *act),
                Layer::Reshape(dims) => {
                    let batch = cur.shape()[0];
                    let mut shape = Vec::with_capacity(dims.len() + 1);
                    shape.push(batch);
                    shape.extend_from_slice(dims);
                    cur.reshaped(&shape)?
                }
                Layer::Flatten => {
                    let batch = cur.shape()[0];
                    let rest: usize = cur.shape()[1..].iter().product();
                    cur.reshaped(&[batch, rest])?
                }
                Layer::GlobalAvgPool => {
                    let y = kernels::global_avg_pool_forward(&cur)?;
                    pooled = Some(y.clone());
                    y
                }
            };
        }
        Ok((cur, pooled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_net() -> Network<f64> {
        Network::new(vec![
            Layer::Dense {
                w: Parameter::new("fc.w", Tensor::zeros(&[3, 2])),
                b: Parameter::new("fc.b", Tensor::zeros(&[2])),
            },
            Layer::Activation(Act::Tanh),
        ])
    }

    #[test]
    fn init_rejects_zero_std() {
        let mut net = tiny_net();
        let mut rng = SeedStream::new(1);
        assert!(net.init_weights(0.0, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let mut a = tiny_net();
        let mut b = tiny_net();
        a.init_weights(0.02, &mut SeedStream::new(5)).unwrap();
        b.init_weights(0.02, &mut SeedStream::new(5)).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn train_and_infer_paths_agree_without_batchnorm() {
        let mut net = tiny_net();
        net.init_weights(0.5, &mut SeedStream::new(9)).unwrap();
        let x = Tensor::new(&[2, 3], vec![0.1, -0.4, 0.7, 1.0, 0.0, -1.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (y_train, _) = net.forward_train(&mut tape, xv).unwrap();
        let y_infer = net.infer(&x).unwrap();
        assert_eq!(tape.value(y_train).data(), y_infer.data());
    }

    #[test]
    fn grads_flow_into_parameters() {
        let mut net = tiny_net();
        net.init_weights(0.5, &mut SeedStream::new(9)).unwrap();
        let x = Tensor::new(&[1, 3], vec![0.3, -0.2, 0.9]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let (y, binding) = net.forward_train(&mut tape, xv).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
        net.zero_grads();
        net.accumulate_grads(&tape, &binding).unwrap();
        let total: f64 = net
            .params()
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g.abs())
            .sum();
        assert!(total > 0.0);
    }

    #[test]
    fn two_passes_both_contribute_gradients() {
        // Forwarding the same network twice on one tape and accumulating
        // both bindings doubles the single-pass gradient.
        let mut net = tiny_net();
        net.init_weights(0.5, &mut SeedStream::new(9)).unwrap();
        let x = Tensor::new(&[1, 3], vec![0.3, -0.2, 0.9]).unwrap();

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (y1, b1) = net.forward_train(&mut tape, xv).unwrap();
        let xv2 = tape.leaf(x.clone());
        let (y2, b2) = net.forward_train(&mut tape, xv2).unwrap();
        let s = tape.add(y1, y2).unwrap();
        let loss = tape.mean_all(s).unwrap();
        tape.backward(loss).unwrap();
        net.zero_grads();
        net.accumulate_grads(&tape, &b1).unwrap();
        net.accumulate_grads(&tape, &b2).unwrap();
        let double: Vec<f64> = net
            .params()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect();

        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let (y, b) = net.forward_train(&mut tape, xv).unwrap();
        let loss = tape.mean_all(y).unwrap();
        tape.backward(loss).unwrap();
        net.zero_grads();
        net.accumulate_grads(&tape, &b).unwrap();
        let single: Vec<f64> = net
            .params()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect();

        for (d, s) in double.iter().zip(&single) {
            assert!((d - 2.0 * s).abs() < 1e-12);
        }
    }
}
