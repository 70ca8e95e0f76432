//! Adversarial synthesis of labeled topography images.
//!
//! The generator maps a 100-dimensional uniform noise vector (plus a
//! one-hot class code in conditional mode) through a projection and four
//! strided transposed convolutions to a 64×64×3 tanh image. The
//! discriminator mirrors it with four strided convolutions and two
//! heads: a sigmoid real/fake score and class logits. Training
//! alternates one discriminator step (real batch + fake batch) with one
//! generator step per iteration.
//!
//! Per-class mode trains one generator per class; conditional mode
//! trains a single pair with the class embedded at both inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::adam::{Adam, AdamParams};
use crate::error::{CoreError, Result};
use crate::img::{denormalize_batch, normalize_batch};
use crate::kernels::{Act, EPS_CLIP};
use crate::layers::{Binding, Layer, Network, Parameter};
use crate::phantom::{Dataset, LabeledImage, Provenance};
use crate::rng::{derive_seed, SeedStream};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Noise vector length.
pub const NOISE_DIM: usize = 100;

/// Patient id attached to synthesized images; never collides with the
/// phantom corpus ids.
pub const SYNTH_PATIENT_ID: u32 = u32::MAX;

pub const IMG_SIZE: usize = 64;
const KERNEL: usize = 5;
const STRIDE: usize = 2;
const PAD: usize = 2;
const OUTPUT_PAD: usize = 1;

/// Channel widths: `full` is the published-scale architecture, `desk` a
/// reduced-width variant that keeps every run CPU-feasible without
/// changing any algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    /// Generator stage widths, seed plane first; the final stage always
    /// emits 3 channels.
    pub fn generator_channels(self) -> [usize; 4] {
        match self {
            Profile::Desk => [128, 64, 32, 16],
            Profile::Full => [1024, 512, 256, 128],
        }
    }

    /// Discriminator stage widths (the generator's, reversed).
    pub fn discriminator_channels(self) -> [usize; 4] {
        let g = self.generator_channels();
        [g[3], g[2], g[1], g[0]]
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorConfig {
    pub profile: Profile,
    pub conditional: bool,
    pub num_classes: usize,
}

impl GeneratorConfig {
    pub fn input_dim(&self) -> usize {
        NOISE_DIM + if self.conditional { self.num_classes } else { 0 }
    }
}

pub struct Generator<F> {
    pub net: Network<F>,
    pub cfg: GeneratorConfig,
}

impl<F: Scalar> Generator<F> {
    /// Projection to a 4×4 seed block, then four 5×5 stride-2 transposed
    /// convolutions doubling 4→8→16→32→64. Batch norm + ReLU everywhere
    /// except the final stage, which ends in tanh.
    pub fn build(cfg: GeneratorConfig) -> Self {
        let ch = cfg.profile.generator_channels();
        let c0 = ch[0];
        let mut layers = vec![
            Layer::Dense {
                w: Parameter::new("project.w", Tensor::zeros(&[cfg.input_dim(), 16 * c0])),
                b: Parameter::new("project.b", Tensor::zeros(&[16 * c0])),
            },
            Layer::Reshape(vec![c0, 4, 4]),
            Layer::batchnorm(c0, "bn0"),
            Layer::Activation(Act::Relu),
        ];
        for stage in 0..4 {
            let cin = ch[stage];
            let cout = if stage == 3 { 3 } else { ch[stage + 1] };
            layers.push(Layer::ConvTranspose2d {
                w: Parameter::new(
                    format!("up{stage}.w"),
                    Tensor::zeros(&[cin, cout, KERNEL, KERNEL]),
                ),
                b: Parameter::new(format!("up{stage}.b"), Tensor::zeros(&[cout])),
                stride: STRIDE,
                pad: PAD,
                output_pad: OUTPUT_PAD,
            });
            if stage < 3 {
                layers.push(Layer::batchnorm(cout, &format!("bn{}", stage + 1)));
                layers.push(Layer::Activation(Act::Relu));
            } else {
                layers.push(Layer::Activation(Act::Tanh));
            }
        }
        Self {
            net: Network::new(layers),
            cfg,
        }
    }

    /// Concatenate a one-hot class code onto each noise row
    /// (conditional mode only).
    pub fn input_from_noise(&self, z: &Tensor<F>, label: Option<usize>) -> Result<Tensor<F>> {
        let (n, zd) = z.dims2()?;
        if zd != NOISE_DIM {
            return Err(CoreError::Shape(format!(
                "noise dimension {zd}, expected {NOISE_DIM}"
            )));
        }
        if !self.cfg.conditional {
            return Ok(z.clone());
        }
        let Some(label) = label else {
            return Err(CoreError::InvalidArg(
                "conditional generator needs a class label".into(),
            ));
        };
        if label >= self.cfg.num_classes {
            return Err(CoreError::InvalidArg(format!(
                "label {label} out of range for {} classes",
                self.cfg.num_classes
            )));
        }
        let k = self.cfg.num_classes;
        let mut data = vec![F::zero(); n * (NOISE_DIM + k)];
        for r in 0..n {
            data[r * (NOISE_DIM + k)..r * (NOISE_DIM + k) + NOISE_DIM]
                .copy_from_slice(&z.data()[r * NOISE_DIM..(r + 1) * NOISE_DIM]);
            data[r * (NOISE_DIM + k) + NOISE_DIM + label] = F::one();
        }
        Tensor::new(&[n, NOISE_DIM + k], data)
    }

    /// Generate a batch of images in [-1, 1] (evaluation mode).
    pub fn generate(&self, z: &Tensor<F>, label: Option<usize>) -> Result<Tensor<F>> {
        let input = self.input_from_noise(z, label)?;
        self.net.infer(&input)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorConfig {
    pub profile: Profile,
    pub conditional: bool,
    pub num_classes: usize,
    pub leaky_slope: f64,
}

pub struct Discriminator<F> {
    pub trunk: Network<F>,
    pub adv_head: Network<F>,
    pub cls_head: Network<F>,
    pub cfg: DiscriminatorConfig,
}

impl<F: Scalar> Discriminator<F> {
    /// Four 5×5 stride-2 convolutions halving 64→32→16→8→4, batch norm
    /// and leaky ReLU at every stage, then a sigmoid real/fake head and
    /// a class-logit head over the shared flattened features.
    pub fn build(cfg: DiscriminatorConfig) -> Self {
        let ch = cfg.profile.discriminator_channels();
        let in_ch = 3 + if cfg.conditional { 1 } else { 0 };
        let mut layers = Vec::new();
        let mut cin = in_ch;
        for (stage, &cout) in ch.iter().enumerate() {
            layers.push(Layer::Conv2d {
                w: Parameter::new(
                    format!("down{stage}.w"),
                    Tensor::zeros(&[cout, cin, KERNEL, KERNEL]),
                ),
                b: Parameter::new(format!("down{stage}.b"), Tensor::zeros(&[cout])),
                stride: STRIDE,
                pad: PAD,
            });
            layers.push(Layer::batchnorm(cout, &format!("bn{stage}")));
            layers.push(Layer::Activation(Act::LeakyRelu {
                slope: cfg.leaky_slope,
            }));
            cin = cout;
        }
        layers.push(Layer::Flatten);
        let feat = 4 * 4 * ch[3];
        let adv_head = Network::new(vec![
            Layer::Dense {
                w: Parameter::new("adv.w", Tensor::zeros(&[feat, 1])),
                b: Parameter::new("adv.b", Tensor::zeros(&[1])),
            },
            Layer::Activation(Act::Sigmoid),
        ]);
        let cls_head = Network::new(vec![Layer::Dense {
            w: Parameter::new("cls.w", Tensor::zeros(&[feat, cfg.num_classes])),
            b: Parameter::new("cls.b", Tensor::zeros(&[cfg.num_classes])),
        }]);
        Self {
            trunk: Network::new(layers),
            adv_head,
            cls_head,
            cfg,
        }
    }

    pub fn init_weights(&mut self, std: f64, rng: &mut SeedStream) -> Result<()> {
        self.trunk.init_weights(std, rng)?;
        self.adv_head.init_weights(std, rng)?;
        self.cls_head.init_weights(std, rng)
    }

    pub fn zero_grads(&mut self) {
        self.trunk.zero_grads();
        self.adv_head.zero_grads();
        self.cls_head.zero_grads();
    }

    pub fn all_params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.trunk.params();
        p.extend(self.adv_head.params());
        p.extend(self.cls_head.params());
        p
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let (t, a, c) = (&mut self.trunk, &mut self.adv_head, &mut self.cls_head);
        let mut p = t.params_mut();
        p.extend(a.params_mut());
        p.extend(c.params_mut());
        p
    }

    /// Training-mode forward: (sigmoid real/fake scores N×1, class
    /// logits N×k) plus the pass binding for gradient routing.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<F>,
        images: Var,
    ) -> Result<(Var, Var, DiscBinding)> {
        check_image_batch(tape.value(images).shape(), self.cfg.conditional)?;
        let (feat, trunk) = self.trunk.forward_train(tape, images)?;
        let (adv, adv_b) = self.adv_head.forward_train(tape, feat)?;
        let (cls, cls_b) = self.cls_head.forward_train(tape, feat)?;
        Ok((
            adv,
            cls,
            DiscBinding {
                trunk,
                adv: adv_b,
                cls: cls_b,
            },
        ))
    }

    pub fn accumulate_grads(&mut self, tape: &Tape<F>, binding: &DiscBinding) -> Result<()> {
        self.trunk.accumulate_grads(tape, &binding.trunk)?;
        self.adv_head.accumulate_grads(tape, &binding.adv)?;
        self.cls_head.accumulate_grads(tape, &binding.cls)
    }

    /// Evaluation-mode scores: (adversarial probabilities N, class
    /// logits N×k).
    pub fn infer(&self, images: &Tensor<F>) -> Result<(Vec<F>, Tensor<F>)> {
        check_image_batch(images.shape(), self.cfg.conditional)?;
        let feat = self.trunk.infer(images)?;
        let adv = self.adv_head.infer(&feat)?;
        let cls = self.cls_head.infer(&feat)?;
        Ok((adv.data().to_vec(), cls))
    }
}

/// Gradient routing for one discriminator pass.
pub struct DiscBinding {
    trunk: Binding,
    adv: Binding,
    cls: Binding,
}

fn check_image_batch(shape: &[usize], conditional: bool) -> Result<()> {
    let want_c = 3 + usize::from(conditional);
    match shape {
        [_, c, h, w] if *c == want_c && *h == IMG_SIZE && *w == IMG_SIZE => Ok(()),
        other => Err(CoreError::Shape(format!(
            "expected N x {want_c} x {IMG_SIZE} x {IMG_SIZE} image batch, got {other:?}"
        ))),
    }
}

/// Batch of uniform noise vectors in [-1, 1], shape N×100.
pub fn sample_noise<F: Scalar>(batch: usize, rng: &mut SeedStream) -> Result<Tensor<F>> {
    if batch == 0 {
        return Err(CoreError::InvalidArg("noise batch must be >= 1".into()));
    }
    let data = (0..batch * NOISE_DIM)
        .map(|_| F::from_f64(rng.uniform_sym()))
        .collect();
    Tensor::new(&[batch, NOISE_DIM], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanMode {
    PerClass,
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenObjective {
    /// −mean ln D(G(z)) — the practical default.
    NonSaturating,
    /// +mean ln(1 − D(G(z))) — the literal minimax form.
    Saturating,
}

#[derive(Clone, Debug)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub init_std: f64,
    pub batch_size: usize,
    pub mode: GanMode,
    pub objective: GenObjective,
    pub profile: Profile,
    pub seed: u64,
    /// None resolves by mode: off per-class, on conditional.
    pub class_head: Option<bool>,
    pub class_head_weight: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-4,
            init_std: 0.02,
            batch_size: 32,
            mode: GanMode::PerClass,
            objective: GenObjective::NonSaturating,
            profile: Profile::Desk,
            seed: 0,
            class_head: None,
            class_head_weight: 1.0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::InvalidArg("epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(CoreError::InvalidArg(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidArg("batch size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn class_head_enabled(&self) -> bool {
        self.class_head
            .unwrap_or(matches!(self.mode, GanMode::Conditional))
    }
}

/// Per-iteration training record.
#[derive(Clone, Debug, Default)]
pub struct GanHistory {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    pub d_real_mean: Vec<f64>,
    pub d_fake_mean: Vec<f64>,
}

impl GanHistory {
    pub fn len(&self) -> usize {
        self.d_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_loss.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.d_loss
            .iter()
            .chain(&self.g_loss)
            .chain(&self.d_real_mean)
            .chain(&self.d_fake_mean)
            .all(|v| v.is_finite())
    }
}

pub struct TrainedGan<F> {
    pub generator: Generator<F>,
    pub history: GanHistory,
}

pub enum CganModel<F> {
    /// One generator per class label, ascending label order.
    PerClass(Vec<(usize, TrainedGan<F>)>),
    Conditional(TrainedGan<F>),
}

impl<F: Scalar> CganModel<F> {
    /// The generator responsible for a class label.
    pub fn generator_for(&self, label: usize) -> Option<&Generator<F>> {
        match self {
            CganModel::PerClass(gans) => gans
                .iter()
                .find(|(l, _)| *l == label)
                .map(|(_, g)| &g.generator),
            CganModel::Conditional(g) => Some(&g.generator),
        }
    }

    pub fn histories(&self) -> Vec<(usize, &GanHistory)> {
        match self {
            CganModel::PerClass(gans) => gans.iter().map(|(l, g)| (*l, &g.history)).collect(),
            CganModel::Conditional(g) => vec![(0, &g.history)],
        }
    }
}

/// Mean adversarial losses from already-scored probability batches.
///
/// loss_D = −mean ln d_real − mean ln(1 − d_fake); loss_G depends on the
/// objective. Probabilities are clamped to [EPS_CLIP, 1−EPS_CLIP] before
/// the logs.
pub fn adversarial_losses<F: Scalar>(
    d_real: &[F],
    d_fake: &[F],
    objective: GenObjective,
) -> Result<(F, F)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(CoreError::Empty("adversarial losses on an empty batch".into()));
    }
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    let mut real_term = F::zero();
    for &p in d_real {
        real_term = real_term + crate::kernels::clamp(p, lo, hi).ln();
    }
    real_term = real_term / F::from_usize(d_real.len());
    let mut fake_ln = F::zero(); // mean ln d_fake
    let mut fake_ln1m = F::zero(); // mean ln (1 − d_fake)
    for &p in d_fake {
        let pc = crate::kernels::clamp(p, lo, hi);
        fake_ln = fake_ln + pc.ln();
        fake_ln1m = fake_ln1m + (F::one() - pc).ln();
    }
    fake_ln = fake_ln / F::from_usize(d_fake.len());
    fake_ln1m = fake_ln1m / F::from_usize(d_fake.len());

    let loss_d = -real_term - fake_ln1m;
    let loss_g = match objective {
        GenObjective::NonSaturating => -fake_ln,
        GenObjective::Saturating => fake_ln1m,
    };
    Ok((loss_d, loss_g))
}

/// Tape version of the discriminator loss.
fn d_loss_on_tape<F: Scalar>(tape: &mut Tape<F>, d_real: Var, d_fake: Var) -> Result<Var> {
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    let cr = tape.clamp(d_real, lo, hi);
    let ln_r = tape.ln(cr);
    let mr = tape.mean_all(ln_r)?;
    let real_term = tape.scale(mr, -F::one());

    let cf = tape.clamp(d_fake, lo, hi);
    let one_minus = tape.affine(cf, -F::one(), F::one());
    let ln_f = tape.ln(one_minus);
    let mf = tape.mean_all(ln_f)?;
    let fake_term = tape.scale(mf, -F::one());
    tape.add(real_term, fake_term)
}

/// Tape version of the generator loss.
fn g_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    d_fake: Var,
    objective: GenObjective,
) -> Result<Var> {
    let (lo, hi) = (F::from_f64(EPS_CLIP), F::from_f64(1.0 - EPS_CLIP));
    let cf = tape.clamp(d_fake, lo, hi);
    match objective {
        GenObjective::NonSaturating => {
            let ln_f = tape.ln(cf);
            let m = tape.mean_all(ln_f)?;
            Ok(tape.scale(m, -F::one()))
        }
        GenObjective::Saturating => {
            let one_minus = tape.affine(cf, -F::one(), F::one());
            let ln_f = tape.ln(one_minus);
            tape.mean_all(ln_f)
        }
    }
}

/// Single channel plane carrying the class label, scaled into [-1, 1]
/// to match the image range (conditional discriminator input).
fn label_plane<F: Scalar>(labels: &[usize], num_classes: usize) -> Tensor<F> {
    let plane = IMG_SIZE * IMG_SIZE;
    let mut data = vec![F::zero(); labels.len() * plane];
    for (i, &l) in labels.iter().enumerate() {
        let v = if num_classes > 1 {
            F::from_f64(2.0 * l as f64 / (num_classes - 1) as f64 - 1.0)
        } else {
            F::zero()
        };
        for d in &mut data[i * plane..(i + 1) * plane] {
            *d = v;
        }
    }
    Tensor::new(&[labels.len(), 1, IMG_SIZE, IMG_SIZE], data).expect("sized above")
}

/// Train adversarial networks on a dataset per the configured mode.
///
/// Per-class mode trains one generator-discriminator pair per class on
/// that class's images only; every class must be nonempty. Conditional
/// mode trains one pair on everything.
pub fn train_cgan<F: Scalar>(dataset: &Dataset, cfg: &GanTrainConfig) -> Result<CganModel<F>> {
    cfg.validate()?;
    match cfg.mode {
        GanMode::PerClass => {
            let mut gans = Vec::new();
            for label in 0..dataset.num_classes {
                let images = dataset.of_class(label);
                if images.is_empty() {
                    return Err(CoreError::Empty(format!(
                        "class {label} has no images to train on"
                    )));
                }
                let labels = vec![label; images.len()];
                let seed = derive_seed(cfg.seed, &format!("gan/class/{label}"));
                let trained = train_single(
                    &images,
                    &labels,
                    dataset.num_classes,
                    cfg,
                    seed,
                    false,
                )?;
                gans.push((label, trained));
            }
            Ok(CganModel::PerClass(gans))
        }
        GanMode::Conditional => {
            if dataset.is_empty() {
                return Err(CoreError::Empty("conditional training on an empty dataset".into()));
            }
            let images: Vec<&LabeledImage> = dataset.images.iter().collect();
            let labels: Vec<usize> = dataset.images.iter().map(|im| im.class_label).collect();
            let seed = derive_seed(cfg.seed, "gan/conditional");
            let trained = train_single(&images, &labels, dataset.num_classes, cfg, seed, true)?;
            Ok(CganModel::Conditional(trained))
        }
    }
}

fn train_single<F: Scalar>(
    images: &[&LabeledImage],
    labels: &[usize],
    num_classes: usize,
    cfg: &GanTrainConfig,
    seed: u64,
    conditional: bool,
) -> Result<TrainedGan<F>> {
    let mut rng = SeedStream::new(seed);
    let gen_cfg = GeneratorConfig {
        profile: cfg.profile,
        conditional,
        num_classes,
    };
    let disc_cfg = DiscriminatorConfig {
        profile: cfg.profile,
        conditional,
        num_classes,
        leaky_slope: 0.2,
    };
    let mut gen = Generator::build(gen_cfg);
    gen.net.init_weights(cfg.init_std, &mut rng)?;
    let mut disc = Discriminator::build(disc_cfg);
    disc.init_weights(cfg.init_std, &mut rng)?;

    let g_refs = gen.net.params();
    let mut g_opt = Adam::new(AdamParams::with_lr(cfg.lr), &g_refs)?;
    drop(g_refs);
    let d_refs = disc.all_params();
    let mut d_opt = Adam::new(AdamParams::with_lr(cfg.lr), &d_refs)?;
    drop(d_refs);

    let class_head = cfg.class_head_enabled();
    let w_cls = F::from_f64(cfg.class_head_weight);
    let mut history = GanHistory::default();
    let mut order: Vec<usize> = (0..images.len()).collect();

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let bn = chunk.len();
            let real_imgs: Vec<&crate::img::Rgb8Image> =
                chunk.iter().map(|&i| &images[i].pixels).collect();
            let real_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let real_batch = normalize_batch::<F>(&real_imgs)?;

            // Generator forward (training mode) once per iteration; its
            // output value doubles as the detached fake batch for the
            // discriminator step.
            let z = sample_noise::<F>(bn, &mut rng)?;
            let fake_labels: Vec<usize> = if conditional {
                (0..bn).map(|_| rng.below(num_classes)).collect()
            } else {
                real_labels.clone()
            };
            let mut g_tape = Tape::new();
            let g_in = if conditional {
                // One-hot per row; rows may carry different labels.
                let k = num_classes;
                let mut data = vec![F::zero(); bn * (NOISE_DIM + k)];
                for r in 0..bn {
                    data[r * (NOISE_DIM + k)..r * (NOISE_DIM + k) + NOISE_DIM]
                        .copy_from_slice(&z.data()[r * NOISE_DIM..(r + 1) * NOISE_DIM]);
                    data[r * (NOISE_DIM + k) + NOISE_DIM + fake_labels[r]] = F::one();
                }
                Tensor::new(&[bn, NOISE_DIM + k], data)?
            } else {
                z.clone()
            };
            let g_in_var = g_tape.leaf(g_in);
            let (fake_var, g_binding) = gen.net.forward_train(&mut g_tape, g_in_var)?;
            let fake_value = g_tape.value(fake_var).clone();

            // --- discriminator step: real batch + fake batch ---
            disc.zero_grads();
            let mut d_tape: Tape<F> = Tape::new();
            let real_in = if conditional {
                let imgs = d_tape.leaf(real_batch.clone());
                let plane = d_tape.leaf(label_plane(&real_labels, num_classes));
                d_tape.concat_channels(imgs, plane)?
            } else {
                d_tape.leaf(real_batch.clone())
            };
            let (d_real_adv, d_real_cls, real_binding) = disc.forward_train(&mut d_tape, real_in)?;
            let fake_in = if conditional {
                let imgs = d_tape.leaf(fake_value.clone());
                let plane = d_tape.leaf(label_plane(&fake_labels, num_classes));
                d_tape.concat_channels(imgs, plane)?
            } else {
                d_tape.leaf(fake_value.clone())
            };
            let (d_fake_adv, _d_fake_cls, fake_binding) = disc.forward_train(&mut d_tape, fake_in)?;
            let adv_loss = d_loss_on_tape(&mut d_tape, d_real_adv, d_fake_adv)?;
            let d_total = if class_head {
                let ce = d_tape.softmax_cross_entropy(d_real_cls, real_labels.clone())?;
                let ce_w = d_tape.scale(ce, w_cls);
                d_tape.add(adv_loss, ce_w)?
            } else {
                adv_loss
            };
            d_tape.backward(d_total)?;
            disc.accumulate_grads(&d_tape, &real_binding)?;
            disc.accumulate_grads(&d_tape, &fake_binding)?;
            let mut d_params = disc.all_params_mut();
            d_opt.step(&mut d_params)?;
            drop(d_params);

            let d_loss_val = d_tape.value(d_total).item()?.as_f64();
            let d_real_mean = mean_of(d_tape.value(d_real_adv).data());
            let d_fake_mean = mean_of(d_tape.value(d_fake_adv).data());

            // --- generator step through the updated discriminator ---
            gen.net.zero_grads();
            let d_in_g = if conditional {
                let plane = g_tape.leaf(label_plane(&fake_labels, num_classes));
                g_tape.concat_channels(fake_var, plane)?
            } else {
                fake_var
            };
            let (g_fake_adv, g_fake_cls, _disc_binding) = disc.forward_train(&mut g_tape, d_in_g)?;
            let g_adv = g_loss_on_tape(&mut g_tape, g_fake_adv, cfg.objective)?;
            let g_total = if class_head {
                let ce = g_tape.softmax_cross_entropy(g_fake_cls, fake_labels.clone())?;
                let ce_w = g_tape.scale(ce, w_cls);
                g_tape.add(g_adv, ce_w)?
            } else {
                g_adv
            };
            g_tape.backward(g_total)?;
            gen.net.accumulate_grads(&g_tape, &g_binding)?;
            let mut g_params = gen.net.params_mut();
            g_opt.step(&mut g_params)?;
            drop(g_params);

            let g_loss_val = g_tape.value(g_total).item()?.as_f64();
            if !(d_loss_val.is_finite() && g_loss_val.is_finite()) {
                return Err(CoreError::InvalidArg(format!(
                    "non-finite adversarial loss at iteration {} (D {d_loss_val}, G {g_loss_val})",
                    history.len()
                )));
            }
            history.d_loss.push(d_loss_val);
            history.g_loss.push(g_loss_val);
            history.d_real_mean.push(d_real_mean);
            history.d_fake_mean.push(d_fake_mean);
        }
    }
    // Pin the generator's evaluation-mode statistics to the final
    // weights using fresh noise batches, so synthesis matches the
    // trained behavior.
    let mut refresh = Vec::new();
    for _ in 0..4 {
        let z = sample_noise::<F>(64, &mut rng)?;
        let lbls: Vec<usize> = if conditional {
            (0..64).map(|_| rng.below(num_classes)).collect()
        } else {
            Vec::new()
        };
        if conditional {
            let k = num_classes;
            let mut data = vec![F::zero(); 64 * (NOISE_DIM + k)];
            for r in 0..64 {
                data[r * (NOISE_DIM + k)..r * (NOISE_DIM + k) + NOISE_DIM]
                    .copy_from_slice(&z.data()[r * NOISE_DIM..(r + 1) * NOISE_DIM]);
                data[r * (NOISE_DIM + k) + NOISE_DIM + lbls[r]] = F::one();
            }
            refresh.push(Tensor::new(&[64, NOISE_DIM + k], data)?);
        } else {
            refresh.push(z);
        }
    }
    gen.net.refresh_batchnorm(&refresh)?;
    Ok(TrainedGan {
        generator: gen,
        history,
    })
}

fn mean_of<F: Scalar>(xs: &[F]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().map(|x| x.as_f64()).sum::<f64>() / xs.len() as f64
}

/// Sample `n` labeled images from a trained generator, denormalized to
/// 8-bit RGB and tagged as synthesized.
pub fn synthesize<F: Scalar>(
    gen: &Generator<F>,
    n: usize,
    label: usize,
    rng: &mut SeedStream,
) -> Result<Vec<LabeledImage>> {
    if n == 0 {
        return Err(CoreError::InvalidArg("cannot synthesize 0 images".into()));
    }
    let cond_label = gen.cfg.conditional.then_some(label);
    let mut out = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let bn = remaining.min(64);
        let z = sample_noise::<F>(bn, rng)?;
        let batch = gen.generate(&z, cond_label)?;
        for pixels in denormalize_batch(&batch)? {
            out.push(LabeledImage {
                pixels,
                class_label: label,
                patient_id: SYNTH_PATIENT_ID,
                provenance: Provenance::Synthesized,
            });
        }
        remaining -= bn;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_batch_contract() {
        let mut rng = SeedStream::new(1);
        let z = sample_noise::<f64>(32, &mut rng).unwrap();
        assert_eq!(z.shape(), &[32, NOISE_DIM]);
        assert!(z.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(sample_noise::<f64>(0, &mut rng).is_err());

        let mut a = SeedStream::new(7);
        let mut b = SeedStream::new(7);
        assert_eq!(
            sample_noise::<f64>(4, &mut a).unwrap().data(),
            sample_noise::<f64>(4, &mut b).unwrap().data()
        );
    }

    #[test]
    fn noise_mean_near_zero() {
        let mut rng = SeedStream::new(2);
        let z = sample_noise::<f64>(1000, &mut rng).unwrap();
        let mean = z.data().iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn adversarial_loss_closed_forms() {
        // Perfect discriminator → loss_D → 0.
        let (d, _) = adversarial_losses::<f64>(
            &[1.0 - 1e-9, 1.0 - 1e-9],
            &[1e-9, 1e-9],
            GenObjective::NonSaturating,
        )
        .unwrap();
        assert!(d < 1e-5, "loss_D {d}");

        // Equilibrium: d_real = d_fake = 0.5 → loss_D = 2 ln 2.
        let (d, _) =
            adversarial_losses::<f64>(&[0.5], &[0.5], GenObjective::NonSaturating).unwrap();
        assert!((d - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);

        // Saturating objective at d_fake = 0.5 → loss_G = ln 0.5.
        let (_, g) = adversarial_losses::<f64>(&[0.5], &[0.5], GenObjective::Saturating).unwrap();
        assert!((g - 0.5f64.ln()).abs() < 1e-12);

        assert!(adversarial_losses::<f64>(&[], &[0.5], GenObjective::Saturating).is_err());
    }

    #[test]
    fn generator_shapes_and_range() {
        let mut gen = Generator::<f32>::build(GeneratorConfig {
            profile: Profile::Desk,
            conditional: false,
            num_classes: 2,
        });
        gen.net
            .init_weights(0.02, &mut SeedStream::new(3))
            .unwrap();
        let z = sample_noise::<f32>(2, &mut SeedStream::new(4)).unwrap();
        let imgs = gen.generate(&z, None).unwrap();
        assert_eq!(imgs.shape(), &[2, 3, 64, 64]);
        assert!(imgs.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        // Same weights and noise → identical images.
        let again = gen.generate(&z, None).unwrap();
        assert_eq!(imgs.data(), again.data());
        // Wrong noise width rejected.
        let bad = Tensor::<f32>::zeros(&[2, 64]);
        assert!(gen.generate(&bad, None).is_err());
    }

    #[test]
    fn generator_stage_spatial_sizes() {
        // 4 → 8 → 16 → 32 → 64 through the four up-sampling stages.
        let mut h = 4usize;
        for _ in 0..4 {
            h = crate::kernels::convt_out_dim(h, KERNEL, STRIDE, PAD, OUTPUT_PAD).unwrap();
        }
        assert_eq!(h, 64);
        // Discriminator reverses it: 64 → 32 → 16 → 8 → 4.
        let mut d = 64usize;
        for _ in 0..4 {
            d = crate::kernels::conv_out_dim(d, KERNEL, STRIDE, PAD).unwrap();
        }
        assert_eq!(d, 4);
    }

    #[test]
    fn discriminator_outputs_probability_and_logits() {
        let mut disc = Discriminator::<f32>::build(DiscriminatorConfig {
            profile: Profile::Desk,
            conditional: false,
            num_classes: 8,
            leaky_slope: 0.2,
        });
        disc.init_weights(0.02, &mut SeedStream::new(5)).unwrap();
        let mut rng = SeedStream::new(6);
        let imgs = Tensor::<f32>::new(
            &[3, 3, 64, 64],
            (0..3 * 3 * 64 * 64)
                .map(|_| rng.uniform_sym() as f32)
                .collect(),
        )
        .unwrap();
        let (adv, cls) = disc.infer(&imgs).unwrap();
        assert_eq!(adv.len(), 3);
        assert_eq!(cls.shape(), &[3, 8]);
        assert!(adv.iter().all(|&p| p > 0.0 && p < 1.0));
        // Duplicated rows score identically.
        let mut dup_data = imgs.data()[..3 * 64 * 64].to_vec();
        dup_data.extend_from_slice(&imgs.data()[..3 * 64 * 64]);
        let dup = Tensor::<f32>::new(&[2, 3, 64, 64], dup_data).unwrap();
        let (adv2, _) = disc.infer(&dup).unwrap();
        assert_eq!(adv2[0], adv2[1]);
        // Wrong shape rejected.
        assert!(disc.infer(&Tensor::<f32>::zeros(&[1, 3, 32, 32])).is_err());
    }

    #[test]
    fn weight_init_statistics() {
        // init_weights(std = 0.02) over ≥ 1e5 kernel weights: empirical
        // mean within ±0.001, std within 0.02 ± 0.002.
        let gen = || {
            Generator::<f64>::build(GeneratorConfig {
                profile: Profile::Desk,
                conditional: false,
                num_classes: 2,
            })
        };
        let mut g = gen();
        g.net.init_weights(0.02, &mut SeedStream::new(11)).unwrap();
        let weights: Vec<f64> = g
            .net
            .params()
            .iter()
            .filter(|p| p.name.ends_with(".w"))
            .flat_map(|p| p.value.data().iter().copied())
            .collect();
        assert!(weights.len() >= 100_000, "{} weights", weights.len());
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let std = (weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((std - 0.02).abs() < 0.002, "std {std}");

        // Same seed → identical weights.
        let mut g2 = gen();
        g2.net.init_weights(0.02, &mut SeedStream::new(11)).unwrap();
        for (a, b) in g.net.params().iter().zip(g2.net.params()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }
}
