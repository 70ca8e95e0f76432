//! Wall-clock inference timing (ATT: average time test).

use anyhow::{bail, Result};
use std::time::Instant;
use topogan_core::img::normalize_batch;
use topogan_core::layers::Network;
use topogan_core::phantom::Dataset;
use topogan_core::tensor::Tensor;

/// Mean and standard deviation of single-image inference seconds over
/// `repetitions` passes through all images. One warm-up pass runs first
/// and is excluded from the statistics. Single-threaded by construction.
pub fn measure_att(
    net: &Network<f32>,
    images: &Dataset,
    repetitions: usize,
) -> Result<(f64, f64)> {
    if images.is_empty() {
        bail!("timing needs at least one image");
    }
    if repetitions == 0 {
        bail!("timing needs at least one repetition");
    }
    // Pre-normalize single-image batches so only the forward pass is on
    // the clock.
    let batches: Vec<Tensor<f32>> = images
        .images
        .iter()
        .map(|im| normalize_batch::<f32>(&[&im.pixels]))
        .collect::<topogan_core::Result<_>>()?;
    // Warm-up.
    for b in &batches {
        let _ = net.infer(b)?;
    }
    let mut times = Vec::with_capacity(repetitions * batches.len());
    for _ in 0..repetitions {
        for b in &batches {
            let t0 = Instant::now();
            let out = net.infer(b)?;
            let dt = t0.elapsed().as_secs_f64();
            // Keep the output alive so the pass cannot be elided.
            std::hint::black_box(&out);
            times.push(dt);
        }
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One (label, mean, std) row per model variant.
pub fn timing_study(
    models: &[(String, &Network<f32>)],
    images: &Dataset,
    repetitions: usize,
) -> Result<Vec<(String, f64, f64)>> {
    if images.len() < 100 {
        bail!(
            "timing study needs at least 100 images, got {}",
            images.len()
        );
    }
    let mut rows = Vec::new();
    for (name, net) in models {
        let (mean, std) = measure_att(net, images, repetitions)?;
        rows.push((name.clone(), mean, std));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use topogan_core::classifier::{build_classifier, ClassifierConfig};
    use topogan_core::phantom::{generate_corpus, PhantomCfg};
    use topogan_core::rng::SeedStream;

    #[test]
    fn att_is_positive_and_rejects_degenerate_inputs() {
        let ds = generate_corpus(&[3, 3], &PhantomCfg::default(), 1).unwrap();
        let mut net = build_classifier::<f32>(&ClassifierConfig::new(2, 4)).unwrap();
        net.init_weights(0.02, &mut SeedStream::new(1)).unwrap();
        let (mean, std) = measure_att(&net, &ds, 2).unwrap();
        assert!(mean > 0.0);
        assert!(std >= 0.0);
        let empty = topogan_core::phantom::Dataset::new(Vec::new(), 2);
        assert!(measure_att(&net, &empty, 1).is_err());
        assert!(measure_att(&net, &ds, 0).is_err());
    }
}
