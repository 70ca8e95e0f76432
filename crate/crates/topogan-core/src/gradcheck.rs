//! Finite-difference verification of tape gradients.
//!
//! The checker replays a user-supplied forward builder: once with
//! backward for the analytic gradients, then twice per sampled
//! coordinate for central differences. Intended for f64 only; training
//! precision is too coarse for the tolerances used in the test suite.

use alloc::vec::Vec;

use crate::error::Result;
use crate::layers::Parameter;
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Builds a scalar loss from leaves bound to `params` (same order).
pub trait LossBuilder {
    fn build(&mut self, tape: &mut Tape<f64>, params: &[Var]) -> Result<Var>;
}

impl<T: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>> LossBuilder for T {
    fn build(&mut self, tape: &mut Tape<f64>, params: &[Var]) -> Result<Var> {
        self(tape, params)
    }
}

/// Max relative error between analytic and central-difference gradients
/// over up to `coords_per_param` sampled coordinates of each parameter.
///
/// The step is `h_scale · max(1, |value|)` per coordinate and the error
/// is `|a − d| / max(|a|, |d|, 1e-8)`.
pub fn grad_check<B: LossBuilder>(
    params: &mut [Parameter<f64>],
    mut builder: B,
    h_scale: f64,
    coords_per_param: usize,
    rng: &mut SeedStream,
) -> Result<f64> {
    // Analytic pass.
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let loss = builder.build(&mut tape, &leaves)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(params.iter())
        .map(|(v, p)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect();
    drop(tape);

    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        let len = params[pi].value.len();
        let picks = coords_per_param.min(len);
        for _ in 0..picks {
            let ci = rng.below(len);
            let orig = params[pi].value.data()[ci];
            let h = h_scale * orig.abs().max(1.0);

            params[pi].value.data_mut()[ci] = orig + h;
            let f_plus = eval(params, &mut builder)?;
            params[pi].value.data_mut()[ci] = orig - h;
            let f_minus = eval(params, &mut builder)?;
            params[pi].value.data_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi].data()[ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn eval<B: LossBuilder>(params: &[Parameter<f64>], builder: &mut B) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let loss = builder.build(&mut tape, &leaves)?;
    tape.value(loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        let mut params = [Parameter::new("w", Tensor::scalar(1.7f64))];
        let mut rng = SeedStream::new(11);
        let err = grad_check(
            &mut params,
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let sq = tape.mul(vars[0], vars[0])?;
                tape.mean_all(sq)
            },
            1e-6,
            1,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }
}
