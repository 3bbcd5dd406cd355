//! Supervised training of the extractor through a temporary linear head.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Chw};
use super::{BackboneParams, Layer};
use crate::error::{Error, Result};
use crate::grid::Image;

/// Mini-batch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Loss curve recorded during training. `epoch_losses[e]` is the mean
/// cross-entropy over the training set with the parameters held at the
/// start of epoch `e`; the last entry is the final loss.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

/// Trains the extractor by minimizing softmax cross-entropy through a
/// temporary linear head, which is discarded afterwards. Deterministic
/// for a fixed seed.
pub fn train_backbone(
    train: &[(Image, usize)],
    p0: &BackboneParams,
    cfg: &TrainConfig,
) -> Result<BackboneParams> {
    train_backbone_traced(train, p0, cfg).map(|(p, _)| p)
}

/// Like [`train_backbone`] but also returns the recorded loss curve.
pub fn train_backbone_traced(
    train: &[(Image, usize)],
    p0: &BackboneParams,
    cfg: &TrainConfig,
) -> Result<(BackboneParams, TrainTrace)> {
    let num_classes = validate_labels(train)?;
    for (img, _) in train {
        p0.check_input(img)?;
    }
    let mut params = p0.clone();
    let mut head = Head::new(params.feature_dim, num_classes, cfg.seed);
    let mut trace = TrainTrace {
        epoch_losses: Vec::with_capacity(cfg.epochs + 1),
    };
    if cfg.epochs == 0 {
        return Ok((params, trace));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        trace.epoch_losses.push(dataset_loss(train, &params, &head));
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(batch_size) {
            let mut grads = Grads::zeros(&params, &head);
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let (img, label) = &train[i];
                batch_loss += backprop_sample(img, *label, &params, &head, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss {batch_loss}"),
                });
            }
            apply_update(&mut params, &mut head, &grads, cfg.learning_rate / batch.len() as f32);
        }
    }
    trace.epoch_losses.push(dataset_loss(train, &params, &head));
    Ok((params, trace))
}

fn validate_labels(train: &[(Image, usize)]) -> Result<usize> {
    let max = train
        .iter()
        .map(|(_, l)| *l)
        .max()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    let mut seen = vec![false; max + 1];
    for (_, l) in train {
        seen[*l] = true;
    }
    let distinct = seen.iter().filter(|s| **s).count();
    if distinct < 2 {
        return Err(Error::invalid("training needs at least 2 classes"));
    }
    Ok(max + 1)
}

struct Head {
    dim: usize,
    classes: usize,
    weights: Vec<f32>, // [class][dim]
    bias: Vec<f32>,
}

impl Head {
    fn new(dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let limit = (6.0 / (dim + classes) as f64).sqrt() as f32;
        Head {
            dim,
            classes,
            weights: (0..classes * dim).map(|_| rng.gen_range(-limit..=limit)).collect(),
            bias: vec![0.0; classes],
        }
    }

    fn logits(&self, features: &[f32]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                row.iter()
                    .zip(features)
                    .map(|(&w, &f)| w as f64 * f as f64)
                    .sum::<f64>()
                    + self.bias[c] as f64
            })
            .collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

// Keeps NaN probabilities NaN so divergence is detectable; only clamps
// legitimate tiny values away from ln(0).
fn cross_entropy(prob_true: f64) -> f64 {
    if prob_true.is_nan() {
        f64::NAN
    } else {
        -prob_true.max(1e-300).ln()
    }
}

struct Grads {
    kernels: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
    head_w: Vec<f32>,
    head_b: Vec<f32>,
}

impl Grads {
    fn zeros(params: &BackboneParams, head: &Head) -> Self {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for layer in &params.layers {
            if let Layer::Conv(conv) = layer {
                kernels.push(vec![0.0; conv.kernel.len()]);
                biases.push(vec![0.0; conv.bias.len()]);
            }
        }
        Grads {
            kernels,
            biases,
            head_w: vec![0.0; head.weights.len()],
            head_b: vec![0.0; head.bias.len()],
        }
    }
}

/// Forward + backward for one sample; accumulates gradients, returns the loss.
fn backprop_sample(
    img: &Image,
    label: usize,
    params: &BackboneParams,
    head: &Head,
    grads: &mut Grads,
) -> f64 {
    let acts = params.forward_acts(img);
    let last = acts.last().unwrap();
    let area = (last.h * last.w) as f64;
    let features: Vec<f32> = (0..last.c)
        .map(|d| (last.channel(d).iter().map(|&v| v as f64).sum::<f64>() / area) as f32)
        .collect();

    let probs = softmax(&head.logits(&features));
    let loss = cross_entropy(probs[label]);

    // d loss / d logit = softmax - onehot
    let mut grad_features = vec![0.0f32; head.dim];
    for c in 0..head.classes {
        let g = (probs[c] - if c == label { 1.0 } else { 0.0 }) as f32;
        grads.head_b[c] += g;
        let wrow = &head.weights[c * head.dim..(c + 1) * head.dim];
        let grow = &mut grads.head_w[c * head.dim..(c + 1) * head.dim];
        for d in 0..head.dim {
            grow[d] += g * features[d];
            grad_features[d] += g * wrow[d];
        }
    }

    // Pooling spreads each feature gradient uniformly over its map.
    let mut grad = Chw::zeros(last.c, last.h, last.w);
    for d in 0..last.c {
        let v = grad_features[d] / (last.h * last.w) as f32;
        grad.channel_mut(d).fill(v);
    }

    let mut conv_idx = grads.kernels.len();
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        grad = match layer {
            Layer::Conv(conv) => {
                conv_idx -= 1;
                if conv.relu {
                    ops::relu_mask(&mut grad, &acts[idx + 1]);
                }
                ops::conv_backward_params(
                    conv,
                    &acts[idx],
                    &grad,
                    &mut grads.kernels[conv_idx],
                    &mut grads.biases[conv_idx],
                );
                ops::conv_backward_input(conv, &grad)
            }
            Layer::MaxPool2 => ops::maxpool_backward(&acts[idx], &grad),
        };
    }
    loss
}

fn apply_update(params: &mut BackboneParams, head: &mut Head, grads: &Grads, step: f32) {
    let mut conv_idx = 0;
    for layer in params.layers.iter_mut() {
        if let Layer::Conv(conv) = layer {
            for (w, g) in conv.kernel.iter_mut().zip(&grads.kernels[conv_idx]) {
                *w -= step * g;
            }
            for (b, g) in conv.bias.iter_mut().zip(&grads.biases[conv_idx]) {
                *b -= step * g;
            }
            conv_idx += 1;
        }
    }
    for (w, g) in head.weights.iter_mut().zip(&grads.head_w) {
        *w -= step * g;
    }
    for (b, g) in head.bias.iter_mut().zip(&grads.head_b) {
        *b -= step * g;
    }
}

fn dataset_loss(train: &[(Image, usize)], params: &BackboneParams, head: &Head) -> f64 {
    let mut total = 0.0f64;
    for (img, label) in train {
        let acts = params.forward_acts(img);
        let last = acts.last().unwrap();
        let area = (last.h * last.w) as f64;
        let features: Vec<f32> = (0..last.c)
            .map(|d| (last.channel(d).iter().map(|&v| v as f64).sum::<f64>() / area) as f32)
            .collect();
        let probs = softmax(&head.logits(&features));
        total += cross_entropy(probs[*label]);
    }
    total / train.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::forward;

    fn toy_set(n_per_class: usize) -> Vec<(Image, usize)> {
        // Two classes: bright top half vs bright bottom half, with a seeded
        // jitter so samples differ.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut set = Vec::new();
        for label in 0..2usize {
            for _ in 0..n_per_class {
                let mut data = vec![0.0f32; 8 * 8];
                for y in 0..8 {
                    for x in 0..8 {
                        let bright = if label == 0 { y < 4 } else { y >= 4 };
                        let base: f32 = if bright { 0.8 } else { 0.2 };
                        data[y * 8 + x] = (base + rng.gen_range(-0.1..=0.1)).clamp(0.0, 1.0);
                    }
                }
                set.push((Image::new(8, 8, 1, data).unwrap(), label));
            }
        }
        set
    }

    fn small_params(seed: u64) -> BackboneParams {
        BackboneParams::new(
            &[
                super::super::LayerSpec::Conv { out_channels: 4, relu: true },
                super::super::LayerSpec::MaxPool2,
                super::super::LayerSpec::Conv { out_channels: 6, relu: true },
            ],
            1,
            (8, 8),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_returns_params_unchanged() {
        let set = toy_set(4);
        let p0 = small_params(1);
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, batch_size: 4, seed: 0 };
        let p1 = train_backbone(&set, &p0, &cfg).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn zero_epochs_returns_params_unchanged() {
        let set = toy_set(2);
        let p0 = small_params(2);
        let cfg = TrainConfig { epochs: 0, learning_rate: 0.1, batch_size: 4, seed: 0 };
        let p1 = train_backbone(&set, &p0, &cfg).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn loss_drops_on_separable_data() {
        let set = toy_set(8);
        let p0 = small_params(3);
        let cfg = TrainConfig { epochs: 10, learning_rate: 0.1, batch_size: 4, seed: 0 };
        let (_, trace) = train_backbone_traced(&set, &p0, &cfg).unwrap();
        let first = trace.epoch_losses[0];
        let last = *trace.epoch_losses.last().unwrap();
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn single_class_is_error() {
        let set: Vec<_> = toy_set(4).into_iter().filter(|(_, l)| *l == 0).collect();
        let p0 = small_params(4);
        let err = train_backbone(&set, &p0, &TrainConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set(4);
        let p0 = small_params(5);
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.05, batch_size: 4, seed: 9 };
        let a = train_backbone(&set, &p0, &cfg).unwrap();
        let b = train_backbone(&set, &p0, &cfg).unwrap();
        assert_eq!(a, b);
        let img = &set[0].0;
        assert_eq!(
            forward(img, &a).unwrap().1.data(),
            forward(img, &b).unwrap().1.data()
        );
    }

    #[test]
    fn divergence_reports_epoch() {
        let set = toy_set(4);
        let p0 = small_params(6);
        // An absurd learning rate overflows the activations quickly.
        let cfg = TrainConfig { epochs: 50, learning_rate: 1e30, batch_size: 4, seed: 0 };
        match train_backbone(&set, &p0, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
