//! Compact convolutional diagnosis network.
//!
//! Four 3×3 stride-2 conv blocks (batch norm + leaky ReLU) with a width
//! knob, global average pooling, and a dense head. The pooled vector is
//! the embedding used for feature-space comparisons. Trained with Adam
//! on softmax cross-entropy under a fixed protocol (defaults: 20 epochs,
//! batch 32, learning rate 0.001).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adam::{Adam, AdamParams};
use crate::error::{CoreError, Result};
use crate::img::normalize_batch;
use crate::kernels::Act;
use crate::layers::{Layer, Network, Parameter};
use crate::phantom::Dataset;
use crate::rng::SeedStream;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub const INPUT_SIZE: usize = 64;

#[derive(Clone, Copy, Debug)]
pub struct ClassifierConfig {
    pub num_classes: usize,
    /// First block width; blocks widen ×2 per stage.
    pub base_width: usize,
    pub leaky_slope: f64,
}

impl ClassifierConfig {
    pub fn new(num_classes: usize, base_width: usize) -> Self {
        Self {
            num_classes,
            base_width,
            leaky_slope: 0.2,
        }
    }

    /// Stage widths: w, 2w, 4w, 8w.
    pub fn widths(&self) -> [usize; 4] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    /// Embedding width (the pooled channel count).
    pub fn embedding_dim(&self) -> usize {
        8 * self.base_width
    }
}

/// Build the network; weights are zero until `init_weights`.
pub fn build_classifier<F: Scalar>(cfg: &ClassifierConfig) -> Result<Network<F>> {
    if cfg.num_classes < 2 {
        return Err(CoreError::InvalidArg(format!(
            "classifier needs at least 2 classes, got {}",
            cfg.num_classes
        )));
    }
    if cfg.base_width == 0 {
        return Err(CoreError::InvalidArg("base width must be >= 1".into()));
    }
    let widths = cfg.widths();
    let mut layers = Vec::new();
    let mut cin = 3;
    for (stage, &cout) in widths.iter().enumerate() {
        layers.push(Layer::Conv2d {
            w: Parameter::new(format!("block{stage}.w"), Tensor::zeros(&[cout, cin, 3, 3])),
            b: Parameter::new(format!("block{stage}.b"), Tensor::zeros(&[cout])),
            stride: 2,
            pad: 1,
        });
        layers.push(Layer::batchnorm(cout, &format!("bn{stage}")));
        layers.push(Layer::Activation(Act::LeakyRelu {
            slope: cfg.leaky_slope,
        }));
        cin = cout;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Dense {
        w: Parameter::new("head.w", Tensor::zeros(&[widths[3], cfg.num_classes])),
        b: Parameter::new("head.b", Tensor::zeros(&[cfg.num_classes])),
    });
    Ok(Network::new(layers))
}

#[derive(Clone, Debug)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.001,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Train a classifier on labeled images. `train` and `val` must be
/// patient-disjoint (the caller's responsibility; splits come from the
/// cross-validation machinery) and nonempty.
pub fn train_classifier<F: Scalar>(
    train: &Dataset,
    val: &Dataset,
    cfg: &ClassifierConfig,
    tcfg: &ClassifierTrainConfig,
) -> Result<(Network<F>, TrainHistory)> {
    let mut rng = SeedStream::new(tcfg.seed);
    let mut net = build_classifier::<F>(cfg)?;
    net.init_weights(0.02, &mut rng)?;
    let history = train_network(&mut net, train, val, tcfg, &mut rng)?;
    Ok((net, history))
}

/// Training loop over an already-built network; `rng` drives the epoch
/// shuffles (weight init is the caller's concern).
pub fn train_network<F: Scalar>(
    net: &mut Network<F>,
    train: &Dataset,
    val: &Dataset,
    tcfg: &ClassifierTrainConfig,
    rng: &mut SeedStream,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(CoreError::Empty("training set has no images".into()));
    }
    if val.is_empty() {
        return Err(CoreError::Empty("validation set has no images".into()));
    }
    if tcfg.epochs == 0 || tcfg.batch_size == 0 {
        return Err(CoreError::InvalidArg(
            "epochs and batch size must be >= 1".into(),
        ));
    }
    let mut history = TrainHistory::default();
    let counts = train.class_counts();
    for (label, &c) in counts.iter().enumerate() {
        if c == 0 {
            history
                .warnings
                .push(format!("class {label} absent from the training set"));
        }
    }

    let refs = net.params();
    let mut opt = Adam::new(AdamParams::with_lr(tcfg.lr), &refs)?;
    drop(refs);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..tcfg.epochs {
        if tcfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let imgs: Vec<&crate::img::Rgb8Image> =
                chunk.iter().map(|&i| &train.images[i].pixels).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.images[i].class_label).collect();
            let batch = normalize_batch::<F>(&imgs)?;

            net.zero_grads();
            let mut tape = Tape::new();
            let x = tape.leaf(batch);
            let (logits, binding) = net.forward_train(&mut tape, x)?;
            let loss = tape.softmax_cross_entropy(logits, labels.clone())?;
            tape.backward(loss)?;
            net.accumulate_grads(&tape, &binding)?;
            let mut params = net.params_mut();
            opt.step(&mut params)?;
            drop(params);

            loss_sum += tape.value(loss).item()?.as_f64() * chunk.len() as f64;
            correct += count_correct(tape.value(logits), &labels);
        }
        let epoch_loss = loss_sum / train.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(CoreError::InvalidArg(format!(
                "non-finite training loss at epoch {}",
                history.train_loss.len()
            )));
        }
        history.train_loss.push(epoch_loss);
        history.train_acc.push(correct as f64 / train.len() as f64);
        // Pin evaluation-mode statistics to the current weights before
        // scoring the held-out set.
        refresh_stats(net, train, tcfg.batch_size)?;
        let (val_labels, _) = predict_dataset(net, val, 64)?;
        let val_correct = val_labels
            .iter()
            .zip(&val.images)
            .filter(|(&p, im)| p == im.class_label)
            .count();
        history.val_acc.push(val_correct as f64 / val.len() as f64);
    }
    Ok(history)
}

fn refresh_stats<F: Scalar>(net: &mut Network<F>, train: &Dataset, batch: usize) -> Result<()> {
    let mut batches = Vec::new();
    for chunk in train.images.chunks(batch.max(2)) {
        let imgs: Vec<&crate::img::Rgb8Image> = chunk.iter().map(|im| &im.pixels).collect();
        batches.push(normalize_batch::<F>(&imgs)?);
    }
    net.refresh_batchnorm(&batches)
}

fn count_correct<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(r, &t)| argmax(&logits.data()[r * k..(r + 1) * k]) == t)
        .count()
}

fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Labels and softmax probabilities for an image batch (evaluation
/// mode). Ties resolve to the lowest class index.
pub fn predict_batch<F: Scalar>(
    net: &Network<F>,
    images: &Tensor<F>,
) -> Result<(Vec<usize>, Tensor<F>)> {
    let logits = net.infer(images)?;
    let probs = crate::kernels::act_forward(&logits, Act::Softmax);
    let k = probs.shape()[1];
    let labels = (0..probs.shape()[0])
        .map(|r| argmax(&probs.data()[r * k..(r + 1) * k]))
        .collect();
    Ok((labels, probs))
}

/// Predict a whole dataset in batches; returns labels and probabilities
/// row-aligned with `ds.images`.
pub fn predict_dataset<F: Scalar>(
    net: &Network<F>,
    ds: &Dataset,
    batch: usize,
) -> Result<(Vec<usize>, Vec<F>)> {
    let mut labels = Vec::with_capacity(ds.len());
    let mut probs = Vec::new();
    for chunk in ds.images.chunks(batch.max(1)) {
        let imgs: Vec<&crate::img::Rgb8Image> = chunk.iter().map(|im| &im.pixels).collect();
        let x = normalize_batch::<F>(&imgs)?;
        let (l, p) = predict_batch(net, &x)?;
        labels.extend(l);
        probs.extend_from_slice(p.data());
    }
    Ok((labels, probs))
}

/// Post-pool (pre-dense) activations, N×E.
pub fn extract_embeddings<F: Scalar>(net: &Network<F>, images: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, pooled) = net.infer_capture_pool(images)?;
    pooled.ok_or_else(|| {
        CoreError::InvalidArg("network has no pooling layer to read embeddings from".into())
    })
}

/// Embeddings for a whole dataset, batched, as an N×E f64 matrix.
pub fn dataset_embeddings<F: Scalar>(
    net: &Network<F>,
    ds: &Dataset,
    batch: usize,
) -> Result<Tensor<f64>> {
    let mut rows: Vec<f64> = Vec::new();
    let mut width = 0usize;
    for chunk in ds.images.chunks(batch.max(1)) {
        let imgs: Vec<&crate::img::Rgb8Image> = chunk.iter().map(|im| &im.pixels).collect();
        let x = normalize_batch::<F>(&imgs)?;
        let emb = extract_embeddings(net, &x)?;
        width = emb.shape()[1];
        rows.extend(emb.data().iter().map(|v| v.as_f64()));
    }
    Tensor::new(&[ds.len(), width], rows)
}
