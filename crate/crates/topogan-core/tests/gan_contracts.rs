//! Contract tests for the adversarial pipeline: a finite-difference
//! check of the composed generator→discriminator gradient, the loss
//! identities, and small end-to-end training runs with determinism and
//! synthesis checks.

use topogan_core::gan::{
    adversarial_losses, sample_noise, synthesize, train_cgan, CganModel, Discriminator,
    DiscriminatorConfig, GanMode, GanTrainConfig, GenObjective, Generator, GeneratorConfig,
    Profile, NOISE_DIM,
};
use topogan_core::kernels::EPS_CLIP;
use topogan_core::phantom::{generate_corpus, PhantomCfg, Provenance};
use topogan_core::rng::SeedStream;
use topogan_core::tape::Tape;
use topogan_core::tensor::Tensor;

fn build_pair(seed: u64) -> (Generator<f64>, Discriminator<f64>) {
    let mut rng = SeedStream::new(seed);
    let mut gen = Generator::build(GeneratorConfig {
        profile: Profile::Desk,
        conditional: false,
        num_classes: 2,
    });
    gen.net.init_weights(0.02, &mut rng).unwrap();
    let mut disc = Discriminator::build(DiscriminatorConfig {
        profile: Profile::Desk,
        conditional: false,
        num_classes: 2,
        leaky_slope: 0.2,
    });
    disc.init_weights(0.02, &mut rng).unwrap();
    (gen, disc)
}

/// −mean ln D(G(z)) on a fresh tape; gradients reach every generator and
/// discriminator parameter.
fn composed_loss(
    gen: &mut Generator<f64>,
    disc: &mut Discriminator<f64>,
    z: &Tensor<f64>,
    want_grads: bool,
) -> (f64, Option<(Vec<Tensor<f64>>, Vec<Tensor<f64>>)>) {
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let (fake, g_bind) = gen.net.forward_train(&mut tape, zv).unwrap();
    let (adv, _cls, d_bind) = disc.forward_train(&mut tape, fake).unwrap();
    let c = tape.clamp(adv, EPS_CLIP, 1.0 - EPS_CLIP);
    let ln = tape.ln(c);
    let m = tape.mean_all(ln).unwrap();
    let loss = tape.scale(m, -1.0);
    let value = tape.value(loss).item().unwrap();
    if !want_grads {
        return (value, None);
    }
    tape.backward(loss).unwrap();
    gen.net.zero_grads();
    gen.net.accumulate_grads(&tape, &g_bind).unwrap();
    disc.zero_grads();
    disc.accumulate_grads(&tape, &d_bind).unwrap();
    let g_grads = gen.net.params().iter().map(|p| p.grad.clone()).collect();
    let d_grads = disc.all_params().iter().map(|p| p.grad.clone()).collect();
    (value, Some((g_grads, d_grads)))
}

#[test]
fn composed_generator_discriminator_gradient_checks_out() {
    let (mut gen, mut disc) = build_pair(77);
    let z = sample_noise::<f64>(1, &mut SeedStream::new(5)).unwrap();
    let (_, grads) = composed_loss(&mut gen, &mut disc, &z, true);
    let (g_grads, d_grads) = grads.unwrap();

    let mut rng = SeedStream::new(6);
    let mut max_rel = 0.0f64;
    let h_scale = 1e-5;
    // Two sampled coordinates of every parameter tensor in both nets.
    for net_sel in 0..2 {
        let n_params = if net_sel == 0 {
            g_grads.len()
        } else {
            d_grads.len()
        };
        for pi in 0..n_params {
            for _ in 0..2 {
                let (len, analytic) = {
                    let g = if net_sel == 0 { &g_grads[pi] } else { &d_grads[pi] };
                    (g.len(), g.clone())
                };
                let ci = rng.below(len);
                let orig = {
                    let params = if net_sel == 0 {
                        gen.net.params()
                    } else {
                        disc.all_params()
                    };
                    params[pi].value.data()[ci]
                };
                let h = h_scale * orig.abs().max(1.0);
                set_param(&mut gen, &mut disc, net_sel, pi, ci, orig + h);
                let (fp, _) = composed_loss(&mut gen, &mut disc, &z, false);
                set_param(&mut gen, &mut disc, net_sel, pi, ci, orig - h);
                let (fm, _) = composed_loss(&mut gen, &mut disc, &z, false);
                set_param(&mut gen, &mut disc, net_sel, pi, ci, orig);
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.data()[ci];
                // Biases feeding a batch-norm layer have exactly zero
                // gradient (the channel mean absorbs them); central
                // differences only resolve zero down to the cancellation
                // noise ε·|f|/2h ≈ 1e-11, so near-zero pairs are compared
                // absolutely instead of relatively.
                if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
    }
    assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
}

fn set_param(
    gen: &mut Generator<f64>,
    disc: &mut Discriminator<f64>,
    net_sel: usize,
    pi: usize,
    ci: usize,
    v: f64,
) {
    if net_sel == 0 {
        gen.net.params_mut()[pi].value.data_mut()[ci] = v;
    } else {
        disc.all_params_mut()[pi].value.data_mut()[ci] = v;
    }
}

#[test]
fn loss_d_equals_bce_composition_exactly() {
    // loss_D from the adversarial formula must equal
    // BCE(d_real, 1) + BCE(d_fake, 0) bit for bit.
    let mut rng = SeedStream::new(9);
    for _ in 0..50 {
        let n = 1 + rng.below(16);
        let real: Vec<f64> = (0..n).map(|_| rng.uniform01()).collect();
        let fake: Vec<f64> = (0..n).map(|_| rng.uniform01()).collect();
        let (loss_d, _) =
            adversarial_losses(&real, &fake, GenObjective::NonSaturating).unwrap();
        let ones = Tensor::full(&[n], 1.0f64);
        let zeros = Tensor::zeros(&[n]);
        let bce_real = topogan_core::kernels::bce_forward(
            &Tensor::new(&[n], real.clone()).unwrap(),
            &ones,
        )
        .unwrap();
        let bce_fake = topogan_core::kernels::bce_forward(
            &Tensor::new(&[n], fake.clone()).unwrap(),
            &zeros,
        )
        .unwrap();
        assert!(
            (loss_d - (bce_real + bce_fake)).abs() < 1e-12,
            "{loss_d} vs {}",
            bce_real + bce_fake
        );
    }
}

#[test]
fn equilibrium_value_is_two_ln_two() {
    let (d, g) = adversarial_losses::<f64>(&[0.5; 8], &[0.5; 8], GenObjective::Saturating).unwrap();
    assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    // Eq. value term ln D(x) + ln(1−D(G(z))) at 0.5/0.5 is −2 ln 2 per
    // sample, i.e. −loss_D.
    assert!((g - (-std::f64::consts::LN_2)).abs() < 1e-12);
}

fn tiny_gan_config(seed: u64, epochs: usize) -> GanTrainConfig {
    GanTrainConfig {
        epochs,
        batch_size: 10,
        seed,
        ..GanTrainConfig::default()
    }
}

#[test]
fn per_class_training_yields_one_generator_per_class_with_sane_history() {
    let ds = generate_corpus(&[10, 10], &PhantomCfg::default(), 21).unwrap();
    let model = train_cgan::<f32>(&ds, &tiny_gan_config(3, 2)).unwrap();
    let CganModel::PerClass(gans) = &model else {
        panic!("expected per-class model");
    };
    assert_eq!(gans.len(), 2);
    for (label, trained) in gans {
        let h = &trained.history;
        assert_eq!(h.len(), 2, "class {label}: 1 batch x 2 epochs");
        assert!(h.all_finite());
        for i in 0..h.len() {
            assert!(h.d_real_mean[i] > 0.0 && h.d_real_mean[i] < 1.0);
            assert!(h.d_fake_mean[i] > 0.0 && h.d_fake_mean[i] < 1.0);
        }
    }
}

#[test]
fn training_is_deterministic_and_synthesis_contracts_hold() {
    let ds = generate_corpus(&[10, 10], &PhantomCfg::default(), 22).unwrap();
    let cfg = tiny_gan_config(7, 2);
    let m1 = train_cgan::<f32>(&ds, &cfg).unwrap();
    let m2 = train_cgan::<f32>(&ds, &cfg).unwrap();
    let (CganModel::PerClass(a), CganModel::PerClass(b)) = (&m1, &m2) else {
        panic!();
    };
    for ((_, ta), (_, tb)) in a.iter().zip(b) {
        assert_eq!(ta.history.d_loss, tb.history.d_loss);
        assert_eq!(ta.history.g_loss, tb.history.g_loss);
        for (pa, pb) in ta.generator.net.params().iter().zip(tb.generator.net.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    let gen = m1.generator_for(1).unwrap();
    let imgs = synthesize(gen, 5, 1, &mut SeedStream::new(11)).unwrap();
    assert_eq!(imgs.len(), 5);
    for im in &imgs {
        assert_eq!(im.class_label, 1);
        assert_eq!(im.provenance, Provenance::Synthesized);
        assert_eq!((im.pixels.width, im.pixels.height), (64, 64));
    }
    // Different noise seeds give different pixels.
    let other = synthesize(gen, 5, 1, &mut SeedStream::new(12)).unwrap();
    let diff = imgs[0].pixels.max_abs_diff(&other[0].pixels).unwrap();
    assert!(diff > 0);
    // Same seed reproduces bit-identical images.
    let again = synthesize(gen, 5, 1, &mut SeedStream::new(11)).unwrap();
    for (x, y) in imgs.iter().zip(&again) {
        assert_eq!(x.pixels, y.pixels);
    }
    assert!(synthesize(gen, 0, 1, &mut SeedStream::new(1)).is_err());
}

#[test]
fn empty_class_is_rejected() {
    let mut ds = generate_corpus(&[6, 6], &PhantomCfg::default(), 1).unwrap();
    ds.images.retain(|im| im.class_label == 0);
    let err = match train_cgan::<f32>(&ds, &tiny_gan_config(1, 1)) {
        Err(e) => e,
        Ok(_) => panic!("training on a dataset with an empty class must fail"),
    };
    assert!(matches!(err, topogan_core::CoreError::Empty(_)));
}

#[test]
fn conditional_mode_trains_one_shared_generator() {
    let ds = generate_corpus(&[8, 8], &PhantomCfg::default(), 30).unwrap();
    let cfg = GanTrainConfig {
        epochs: 1,
        batch_size: 8,
        mode: GanMode::Conditional,
        seed: 5,
        ..GanTrainConfig::default()
    };
    let model = train_cgan::<f32>(&ds, &cfg).unwrap();
    let CganModel::Conditional(trained) = &model else {
        panic!("expected conditional model");
    };
    assert!(trained.history.all_finite());
    assert!(trained.generator.cfg.conditional);
    // The same generator serves both labels, via the one-hot input.
    let a = synthesize(&trained.generator, 2, 0, &mut SeedStream::new(2)).unwrap();
    let b = synthesize(&trained.generator, 2, 1, &mut SeedStream::new(2)).unwrap();
    assert_ne!(a[0].pixels, b[0].pixels);
}

#[test]
fn noise_dimension_is_hundred() {
    let z = sample_noise::<f32>(3, &mut SeedStream::new(0)).unwrap();
    assert_eq!(z.shape(), &[3, NOISE_DIM]);
    assert_eq!(NOISE_DIM, 100);
}
