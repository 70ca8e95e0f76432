//! Pure numeric kernels: GEMM, convolution (direct and transposed),
//! batch normalization, activations, pooling, and losses.
//!
//! Every kernel is a plain function from values to values, shared by the
//! autodiff tape (forward + backward) and the tape-free inference path, so
//! both routes compute identical numbers. Loop orders are fixed; results
//! are deterministic for a given input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

/// Register tile width of the GEMM micro-kernels.
const NR: usize = 16;

/// C += A·B with A (m×k), B (k×n), C (m×n), all row-major.
///
/// Accumulates 16-wide output tiles in registers over the full k range;
/// convolution layers produce many tall-skinny products (n as small as
/// 16) where in-memory row accumulation is store-bound.
pub fn gemm_nn<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let tiles = n / NR;
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for t in 0..tiles {
            let j0 = t * NR;
            let mut acc = [F::zero(); NR];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &b[p * n + j0..p * n + j0 + NR];
                for l in 0..NR {
                    acc[l] = acc[l] + aip * brow[l];
                }
            }
            let crow = &mut c[i * n + j0..i * n + j0 + NR];
            for l in 0..NR {
                crow[l] = crow[l] + acc[l];
            }
        }
        let j0 = tiles * NR;
        if j0 < n {
            let crow = &mut c[i * n + j0..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &b[p * n + j0..(p + 1) * n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj = *cj + aip * bj;
                }
            }
        }
    }
}

/// C += A·Bᵀ with A (m×k), B (n×k), C (m×n).
pub fn gemm_nt<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cij) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *cij = *cij + dot(arow, brow);
        }
    }
}

/// C += Aᵀ·B with A (k×m), B (k×n), C (m×n).
pub fn gemm_tn<F: Scalar>(c: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let tiles = n / NR;
    for i in 0..m {
        for t in 0..tiles {
            let j0 = t * NR;
            let mut acc = [F::zero(); NR];
            for p in 0..k {
                let aip = a[p * m + i];
                let brow = &b[p * n + j0..p * n + j0 + NR];
                for l in 0..NR {
                    acc[l] = acc[l] + aip * brow[l];
                }
            }
            let crow = &mut c[i * n + j0..i * n + j0 + NR];
            for l in 0..NR {
                crow[l] = crow[l] + acc[l];
            }
        }
        let j0 = tiles * NR;
        if j0 < n {
            for p in 0..k {
                let aip = a[p * m + i];
                let brow = &b[p * n + j0..(p + 1) * n];
                let crow = &mut c[i * n + j0..(i + 1) * n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj = *cj + aip * bj;
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the reduction
/// vectorizes without reassociation flags.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

// ---------------------------------------------------------------------------
// Convolution geometry and im2col
// ---------------------------------------------------------------------------

/// Spatial size of a strided cross-correlation output.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(CoreError::InvalidArg("stride must be >= 1".into()));
    }
    if k > input + 2 * pad {
        return Err(CoreError::Shape(format!(
            "kernel {k} larger than padded input {input}+2*{pad}"
        )));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Spatial size of a transposed-convolution output.
pub fn convt_out_dim(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(CoreError::InvalidArg("stride must be >= 1".into()));
    }
    if output_pad >= stride {
        return Err(CoreError::InvalidArg(format!(
            "output_pad {output_pad} must be < stride {stride}"
        )));
    }
    let grown = (input - 1) * stride + k + output_pad;
    if grown < 2 * pad + 1 {
        return Err(CoreError::Shape(format!(
            "transposed conv output collapses: (({input}-1)*{stride}+{k}+{output_pad}) <= 2*{pad}"
        )));
    }
    Ok(grown - 2 * pad)
}

/// Gather one sample (C×H×W) into patch-matrix form (C·k·k rows, oh·ow
/// columns) for the given cross-correlation geometry. Out-of-range taps
/// read as zero (zero padding).
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [F],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for d in drow.iter_mut() {
                            *d = F::zero();
                        }
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-accumulate patch columns back into the
/// C×H×W sample.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    cols: &[F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [F],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            drow[ix as usize] = drow[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

fn check_conv_weight<F: Scalar>(w: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let (co, ci, kh, kw) = w.dims4()?;
    if kh != kw {
        return Err(CoreError::Shape(format!(
            "only square kernels supported, got {kh}x{kw}"
        )));
    }
    Ok((co, ci, kh))
}

/// Strided cross-correlation with zero padding: (N,Ci,H,W) ⋆ (Co,Ci,k,k)
/// + bias (Co) → (N,Co,H',W').
pub fn conv2d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, ci, h, wd) = x.dims4()?;
    let (co, ci_w, k) = check_conv_weight(w)?;
    if ci != ci_w {
        return Err(CoreError::Shape(format!(
            "conv2d input has {ci} channels but weight expects {ci_w} (weight {:?}, input {:?})",
            w.shape(),
            x.shape()
        )));
    }
    if b.len() != co {
        return Err(CoreError::Shape(format!(
            "conv2d bias length {} != out channels {co}",
            b.len()
        )));
    }
    let oh = conv_out_dim(h, k, stride, pad)?;
    let ow = conv_out_dim(wd, k, stride, pad)?;
    let ckk = ci * k * k;
    let mut cols = vec![F::zero(); ckk * oh * ow];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let xs = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        im2col(
            &xs[ni * ci * h * wd..(ni + 1) * ci * h * wd],
            ci,
            h,
            wd,
            k,
            stride,
            pad,
            oh,
            ow,
            &mut cols,
        );
        let o = &mut od[ni * co * oh * ow..(ni + 1) * co * oh * ow];
        gemm_nn(o, w.data(), &cols, co, ckk, oh * ow);
        for (c, &bias) in b.data().iter().enumerate() {
            for v in &mut o[c * oh * ow..(c + 1) * oh * ow] {
                *v = *v + bias;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: usize,
    pad: usize,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, ci, h, wd) = x.dims4()?;
    let (co, _, k) = check_conv_weight(w)?;
    let (_, _, oh, ow) = dout.dims4()?;
    let ckk = ci * k * k;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut cols = vec![F::zero(); ckk * oh * ow];
    let mut dcols = vec![F::zero(); ckk * oh * ow];
    let xs = x.data();
    let gs = dout.data();
    for ni in 0..n {
        let xn = &xs[ni * ci * h * wd..(ni + 1) * ci * h * wd];
        let gn = &gs[ni * co * oh * ow..(ni + 1) * co * oh * ow];
        im2col(xn, ci, h, wd, k, stride, pad, oh, ow, &mut cols);
        // dW += dOut · colsᵀ
        gemm_nt(dw.data_mut(), gn, &cols, co, oh * ow, ckk);
        // db += row sums of dOut
        for (c, dbc) in db.data_mut().iter_mut().enumerate() {
            let mut s = F::zero();
            for &g in &gn[c * oh * ow..(c + 1) * oh * ow] {
                s = s + g;
            }
            *dbc = *dbc + s;
        }
        // dcols = Wᵀ · dOut, then scatter back
        for d in dcols.iter_mut() {
            *d = F::zero();
        }
        gemm_tn(&mut dcols, w.data(), gn, ckk, co, oh * ow);
        col2im(
            &dcols,
            ci,
            h,
            wd,
            k,
            stride,
            pad,
            oh,
            ow,
            &mut dx.data_mut()[ni * ci * h * wd..(ni + 1) * ci * h * wd],
        );
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// transposed conv2d
// ---------------------------------------------------------------------------

/// Transposed convolution (the adjoint of [`conv2d_forward`] for the same
/// kernel/stride/pad): (N,A,H,W) with weight (A,B,k,k) + bias (B) →
/// (N,B,H',W') where H' = (H−1)·stride − 2·pad + k + output_pad.
pub fn convt2d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<Tensor<F>> {
    let (n, a, h, wd) = x.dims4()?;
    let (a_w, bo, k) = check_conv_weight(w)?;
    if a != a_w {
        return Err(CoreError::Shape(format!(
            "transposed conv2d input has {a} channels but weight expects {a_w}"
        )));
    }
    if b.len() != bo {
        return Err(CoreError::Shape(format!(
            "transposed conv2d bias length {} != out channels {bo}",
            b.len()
        )));
    }
    let oh = convt_out_dim(h, k, stride, pad, output_pad)?;
    let ow = convt_out_dim(wd, k, stride, pad, output_pad)?;
    let bkk = bo * k * k;
    let mut tmp = vec![F::zero(); bkk * h * wd];
    let mut out = Tensor::zeros(&[n, bo, oh, ow]);
    let xs = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        let xn = &xs[ni * a * h * wd..(ni + 1) * a * h * wd];
        for t in tmp.iter_mut() {
            *t = F::zero();
        }
        // tmp = Wᵀ · x  (patch space), then scatter with conv geometry
        gemm_tn(&mut tmp, w.data(), xn, bkk, a, h * wd);
        let o = &mut od[ni * bo * oh * ow..(ni + 1) * bo * oh * ow];
        col2im(&tmp, bo, oh, ow, k, stride, pad, h, wd, o);
        for (c, &bias) in b.data().iter().enumerate() {
            for v in &mut o[c * oh * ow..(c + 1) * oh * ow] {
                *v = *v + bias;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`convt2d_forward`].
pub fn convt2d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: usize,
    pad: usize,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, a, h, wd) = x.dims4()?;
    let (_, bo, k) = check_conv_weight(w)?;
    let (_, _, oh, ow) = dout.dims4()?;
    let bkk = bo * k * k;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[bo]);
    let mut gcols = vec![F::zero(); bkk * h * wd];
    let xs = x.data();
    let gs = dout.data();
    for ni in 0..n {
        let xn = &xs[ni * a * h * wd..(ni + 1) * a * h * wd];
        let gn = &gs[ni * bo * oh * ow..(ni + 1) * bo * oh * ow];
        im2col(gn, bo, oh, ow, k, stride, pad, h, wd, &mut gcols);
        // dx = W · cols(dOut)
        gemm_nn(
            &mut dx.data_mut()[ni * a * h * wd..(ni + 1) * a * h * wd],
            w.data(),
            &gcols,
            a,
            bkk,
            h * wd,
        );
        // dW += x · cols(dOut)ᵀ
        gemm_nt(dw.data_mut(), xn, &gcols, a, h * wd, bkk);
        for (c, dbc) in db.data_mut().iter_mut().enumerate() {
            let mut s = F::zero();
            for &g in &gn[c * oh * ow..(c + 1) * oh * ow] {
                s = s + g;
            }
            *dbc = *dbc + s;
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// batch normalization (2d, per channel over N×H×W)
// ---------------------------------------------------------------------------

pub struct BatchNormSaved<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub invstd: Vec<F>,
}

/// Training-mode batch norm: per-channel statistics over N×H×W with the
/// biased variance estimator. Rejects batches where N·H·W < 2 (variance
/// undefined).
pub fn batchnorm_train_forward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, BatchNormSaved<F>)> {
    let (n, c, h, w) = x.dims4()?;
    check_bn_params(c, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(CoreError::InvalidArg(format!(
            "batchnorm in train mode needs N*H*W >= 2, got {m}"
        )));
    }
    let minv = F::from_usize(m).recip();
    let eps = F::from_f64(eps);
    let mut mean = vec![F::zero(); c];
    let mut variance = vec![F::zero(); c];
    let mut invstd = vec![F::zero(); c];
    let plane = h * w;
    let xs = x.data();
    for ci in 0..c {
        let mut s = F::zero();
        let mut s2 = F::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for &v in &xs[base..base + plane] {
                s = s + v;
                s2 = s2 + v * v;
            }
        }
        let mu = s * minv;
        let var = s2 * minv - mu * mu;
        let var = if var < F::zero() { F::zero() } else { var };
        mean[ci] = mu;
        variance[ci] = var;
        invstd[ci] = (var + eps).sqrt().recip();
    }
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for ci in 0..c {
        let (mu, is) = (mean[ci], invstd[ci]);
        let (g, be) = (gamma.data()[ci], beta.data()[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for (yv, &xv) in yd[base..base + plane].iter_mut().zip(&xs[base..base + plane]) {
                *yv = g * (xv - mu) * is + be;
            }
        }
    }
    Ok((
        y,
        BatchNormSaved {
            mean,
            var: variance,
            invstd,
        },
    ))
}

/// Eval-mode batch norm: affine map with running statistics.
pub fn batchnorm_eval_forward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &Tensor<F>,
    running_var: &Tensor<F>,
    eps: f64,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    check_bn_params(c, gamma, beta)?;
    if n == 0 {
        return Err(CoreError::Empty("batchnorm on empty batch".into()));
    }
    let eps = F::from_f64(eps);
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    let (xs, yd) = (x.data(), y.data_mut());
    for ci in 0..c {
        let is = (running_var.data()[ci] + eps).sqrt().recip();
        let mu = running_mean.data()[ci];
        let (g, be) = (gamma.data()[ci], beta.data()[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for (yv, &xv) in yd[base..base + plane].iter_mut().zip(&xs[base..base + plane]) {
                *yv = g * (xv - mu) * is + be;
            }
        }
    }
    Ok(y)
}

fn check_bn_params<F: Scalar>(c: usize, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(CoreError::Shape(format!(
            "batchnorm gamma/beta lengths {}/{} != channels {c}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Gradients of training-mode batch norm through the batch statistics.
pub fn batchnorm_backward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    saved: &BatchNormSaved<F>,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let m = F::from_usize(n * plane);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let xs = x.data();
    let gs = dout.data();
    for ci in 0..c {
        let (mu, is) = (saved.mean[ci], saved.invstd[ci]);
        let g = gamma.data()[ci];
        let mut sum_dy = F::zero();
        let mut sum_dy_xhat = F::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for (&dy, &xv) in gs[base..base + plane].iter().zip(&xs[base..base + plane]) {
                sum_dy = sum_dy + dy;
                sum_dy_xhat = sum_dy_xhat + dy * (xv - mu) * is;
            }
        }
        dbeta.data_mut()[ci] = sum_dy;
        dgamma.data_mut()[ci] = sum_dy_xhat;
        let k1 = sum_dy / m;
        let k2 = sum_dy_xhat / m;
        let dxd = dx.data_mut();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for ((dxv, &dy), &xv) in dxd[base..base + plane]
                .iter_mut()
                .zip(&gs[base..base + plane])
                .zip(&xs[base..base + plane])
            {
                let xhat = (xv - mu) * is;
                *dxv = g * is * (dy - k1 - xhat * k2);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

/// Activation kinds. Softmax applies over the last axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Softmax,
}

pub fn act_forward<F: Scalar>(x: &Tensor<F>, act: Act) -> Tensor<F> {
    match act {
        Act::Relu => x.map(|v| if v > F::zero() { v } else { F::zero() }),
        Act::LeakyRelu { slope } => {
            let s = F::from_f64(slope);
            x.map(|v| if v > F::zero() { v } else { s * v })
        }
        Act::Tanh => x.map(|v| v.tanh()),
        Act::Sigmoid => x.map(|v| (F::one() + (-v).exp()).recip()),
        Act::Softmax => softmax_last_axis(x),
    }
}

/// VJP of [`act_forward`]; `x` is the activation input and `y` its output.
pub fn act_backward<F: Scalar>(x: &Tensor<F>, y: &Tensor<F>, dout: &Tensor<F>, act: Act) -> Tensor<F> {
    let mut dx = Tensor::zeros(x.shape());
    match act {
        Act::Relu => {
            for ((d, &g), &v) in dx.data_mut().iter_mut().zip(dout.data()).zip(x.data()) {
                *d = if v > F::zero() { g } else { F::zero() };
            }
        }
        Act::LeakyRelu { slope } => {
            let s = F::from_f64(slope);
            for ((d, &g), &v) in dx.data_mut().iter_mut().zip(dout.data()).zip(x.data()) {
                *d = if v > F::zero() { g } else { s * g };
            }
        }
        Act::Tanh => {
            for ((d, &g), &yv) in dx.data_mut().iter_mut().zip(dout.data()).zip(y.data()) {
                *d = g * (F::one() - yv * yv);
            }
        }
        Act::Sigmoid => {
            for ((d, &g), &yv) in dx.data_mut().iter_mut().zip(dout.data()).zip(y.data()) {
                *d = g * yv * (F::one() - yv);
            }
        }
        Act::Softmax => {
            let cols = *x.shape().last().unwrap_or(&1);
            let rows = x.len() / cols;
            let (dxd, yd, gd) = (dx.data_mut(), y.data(), dout.data());
            for r in 0..rows {
                let (ys, gs) = (&yd[r * cols..(r + 1) * cols], &gd[r * cols..(r + 1) * cols]);
                let mut inner = F::zero();
                for (&yv, &g) in ys.iter().zip(gs) {
                    inner = inner + yv * g;
                }
                for ((d, &yv), &g) in dxd[r * cols..(r + 1) * cols].iter_mut().zip(ys).zip(gs) {
                    *d = yv * (g - inner);
                }
            }
        }
    }
    dx
}

fn softmax_last_axis<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let cols = *x.shape().last().unwrap_or(&1);
    let rows = x.len() / cols.max(1);
    let mut y = Tensor::zeros(x.shape());
    let (xs, yd) = (x.data(), y.data_mut());
    for r in 0..rows {
        let row = &xs[r * cols..(r + 1) * cols];
        let mut mx = F::neg_infinity();
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let out = &mut yd[r * cols..(r + 1) * cols];
        let mut sum = F::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum = sum + e;
        }
        let inv = sum.recip();
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }
    y
}

// ---------------------------------------------------------------------------
// dense layer
// ---------------------------------------------------------------------------

/// Affine map: (N,Fin)·(Fin,Fout) + bias (Fout) → (N,Fout).
pub fn dense_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, fin) = x.dims2()?;
    let (fin_w, fout) = w.dims2()?;
    if fin != fin_w {
        return Err(CoreError::Shape(format!(
            "dense input width {fin} != weight input width {fin_w}"
        )));
    }
    if b.len() != fout {
        return Err(CoreError::Shape(format!(
            "dense bias length {} != output width {fout}",
            b.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, fout]);
    gemm_nn(out.data_mut(), x.data(), w.data(), n, fin, fout);
    let od = out.data_mut();
    for r in 0..n {
        for (o, &bv) in od[r * fout..(r + 1) * fout].iter_mut().zip(b.data()) {
            *o = *o + bv;
        }
    }
    Ok(out)
}

pub fn dense_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, fin) = x.dims2()?;
    let (_, fout) = w.dims2()?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[fout]);
    // dx = dOut · Wᵀ
    gemm_nt(dx.data_mut(), dout.data(), w.data(), n, fout, fin);
    // dW = xᵀ · dOut
    gemm_tn(dw.data_mut(), x.data(), dout.data(), fin, n, fout);
    let dbd = db.data_mut();
    for r in 0..n {
        for (d, &g) in dbd.iter_mut().zip(&dout.data()[r * fout..(r + 1) * fout]) {
            *d = *d + g;
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// global average pooling
// ---------------------------------------------------------------------------

/// (N,C,H,W) → (N,C), mean over the spatial plane.
pub fn global_avg_pool_forward<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let inv = F::from_usize(plane).recip();
    let mut y = Tensor::zeros(&[n, c]);
    let (xs, yd) = (x.data(), y.data_mut());
    for i in 0..n * c {
        let mut s = F::zero();
        for &v in &xs[i * plane..(i + 1) * plane] {
            s = s + v;
        }
        yd[i] = s * inv;
    }
    Ok(y)
}

pub fn global_avg_pool_backward<F: Scalar>(x_shape: &[usize], dout: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let plane = h * w;
    let inv = F::from_usize(plane).recip();
    let mut dx = Tensor::zeros(x_shape);
    let dxd = dx.data_mut();
    for (i, &g) in dout.data().iter().enumerate() {
        let gv = g * inv;
        for d in &mut dxd[i * plane..(i + 1) * plane] {
            *d = gv;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Probability clamp applied before logarithms in the adversarial losses
/// and binary cross-entropy.
pub const EPS_CLIP: f64 = 1e-7;

/// Mean binary cross-entropy over all elements. Predictions must lie in
/// [0,1] before clamping; targets must be 0 or 1.
pub fn bce_forward<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<F> {
    if pred.shape() != target.shape() {
        return Err(CoreError::Shape(format!(
            "bce prediction shape {:?} != target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::Empty("bce on empty batch".into()));
    }
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    let mut acc = F::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        if p < F::zero() || p > F::one() {
            return Err(CoreError::InvalidArg(format!(
                "bce prediction {} outside [0,1]",
                p.as_f64()
            )));
        }
        let pc = clamp(p, lo, hi);
        acc = acc - (t * pc.ln() + (F::one() - t) * (F::one() - pc).ln());
    }
    Ok(acc / F::from_usize(pred.len()))
}

/// VJP of [`bce_forward`] with respect to the raw (pre-clamp) predictions;
/// clamped coordinates receive zero gradient.
pub fn bce_backward<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, upstream: F) -> Tensor<F> {
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    let inv_n = F::from_usize(pred.len()).recip();
    let mut dp = Tensor::zeros(pred.shape());
    for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        if p <= lo || p >= hi {
            *d = F::zero();
        } else {
            *d = upstream * inv_n * ((F::one() - t) / (F::one() - p) - t / p);
        }
    }
    dp
}

/// Mean softmax cross-entropy of logits (N,K) against integer targets.
/// Returns the loss and the softmax probabilities for the backward pass.
pub fn softmax_ce_forward<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
) -> Result<(F, Tensor<F>)> {
    let (n, k) = logits.dims2()?;
    if targets.len() != n {
        return Err(CoreError::Shape(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(CoreError::Empty("cross-entropy on empty batch".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(CoreError::InvalidArg(format!(
            "target label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax_last_axis(logits);
    let mut acc = F::zero();
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    for (r, &t) in targets.iter().enumerate() {
        let p = clamp(probs.data()[r * k + t], lo, hi);
        acc = acc - p.ln();
    }
    Ok((acc / F::from_usize(n), probs))
}

/// VJP of [`softmax_ce_forward`] with respect to the logits.
pub fn softmax_ce_backward<F: Scalar>(
    probs: &Tensor<F>,
    targets: &[usize],
    upstream: F,
) -> Tensor<F> {
    let k = probs.shape()[1];
    let n = targets.len();
    let scale = upstream * F::from_usize(n).recip();
    let mut d = probs.map(|p| p);
    let dd = d.data_mut();
    for (r, &t) in targets.iter().enumerate() {
        dd[r * k + t] = dd[r * k + t] - F::one();
    }
    for v in dd.iter_mut() {
        *v = *v * scale;
    }
    d
}

pub fn clamp<F: Scalar>(x: F, lo: F, hi: F) -> F {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}
