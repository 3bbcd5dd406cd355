//! Convolutional feature extractor: forward pass with global average
//! pooling, exact input gradients of individual pooled features, and
//! small-scale supervised training.

mod io;
mod ops;
mod train;

pub use io::{load_backbone, load_precomputed, save_backbone};
pub use ops::ConvLayer;
pub use train::{train_backbone, train_backbone_traced, TrainConfig, TrainTrace};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Image;
use ops::Chw;

/// One stage of the extractor.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool2,
}

/// Architecture element used to build [`BackboneParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, relu: bool },
    MaxPool2,
}

/// Weights and architecture of the feature extractor.
///
/// The last layer must be a convolution; its output channels are the
/// feature maps that global average pooling turns into the feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    layers: Vec<Layer>,
    input_channels: usize,
    input_size: (usize, usize),
    feature_dim: usize,
    rng_seed: u64,
}

impl BackboneParams {
    /// Builds a backbone from layer specs with seeded Glorot-uniform
    /// initialization (`±sqrt(6 / (fan_in + fan_out))`).
    pub fn new(
        specs: &[LayerSpec],
        input_channels: usize,
        input_size: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if input_channels != 1 && input_channels != 3 {
            return Err(Error::invalid("input channels must be 1 or 3"));
        }
        if !matches!(specs.last(), Some(LayerSpec::Conv { .. })) {
            return Err(Error::invalid("the last layer must be a convolution"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = input_channels;
        let mut feature_dim = 0;
        for spec in specs {
            match *spec {
                LayerSpec::Conv { out_channels, relu } => {
                    if out_channels == 0 {
                        return Err(Error::invalid("conv layer needs at least one channel"));
                    }
                    layers.push(Layer::Conv(glorot_conv(channels, out_channels, relu, &mut rng)));
                    channels = out_channels;
                    feature_dim = out_channels;
                }
                LayerSpec::MaxPool2 => layers.push(Layer::MaxPool2),
            }
        }
        Ok(BackboneParams {
            layers,
            input_channels,
            input_size,
            feature_dim,
            rng_seed: seed,
        })
    }

    /// The default architecture: three 3x3 conv+ReLU stages with two 2x2
    /// max-pools in between, ending in `feature_dim` channels.
    pub fn default_architecture(
        input_channels: usize,
        feature_dim: usize,
        input_size: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            &[
                LayerSpec::Conv { out_channels: 16, relu: true },
                LayerSpec::MaxPool2,
                LayerSpec::Conv { out_channels: 32, relu: true },
                LayerSpec::MaxPool2,
                LayerSpec::Conv { out_channels: feature_dim, relu: true },
            ],
            input_channels,
            input_size,
            seed,
        )
    }

    /// A single pass-through convolution (center tap 1, no nonlinearity).
    /// Its pooled feature is exactly the mean of each input channel, which
    /// makes it useful as a diagnostic reference.
    pub fn identity(input_channels: usize, input_size: (usize, usize)) -> Self {
        let mut kernel = vec![0.0; input_channels * input_channels * 9];
        for c in 0..input_channels {
            kernel[(c * input_channels + c) * 9 + 4] = 1.0;
        }
        BackboneParams {
            layers: vec![Layer::Conv(ConvLayer {
                in_channels: input_channels,
                out_channels: input_channels,
                kernel,
                bias: vec![0.0; input_channels],
                relu: false,
            })],
            input_channels,
            input_size,
            feature_dim: input_channels,
            rng_seed: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        if (img.height(), img.width()) != self.input_size {
            return Err(Error::invalid(format!(
                "image is {}x{}, backbone expects {}x{}",
                img.height(),
                img.width(),
                self.input_size.0,
                self.input_size.1
            )));
        }
        if img.channels() != self.input_channels {
            return Err(Error::invalid(format!(
                "image has {} channels, backbone expects {}",
                img.channels(),
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Activations after every layer; index 0 is the input itself.
    fn forward_acts(&self, img: &Image) -> Vec<Chw> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(image_to_chw(img));
        for layer in &self.layers {
            let next = match layer {
                Layer::Conv(conv) => ops::conv_forward(conv, acts.last().unwrap()),
                Layer::MaxPool2 => ops::maxpool_forward(acts.last().unwrap()),
            };
            acts.push(next);
        }
        acts
    }
}

/// The D feature maps emitted by the final convolution, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ChannelStack {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || rows == 0 || cols == 0 || data.len() != channels * rows * cols {
            return Err(Error::invalid("channel stack shape mismatch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("channel stack contains non-finite values"));
        }
        Ok(ChannelStack {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, d: usize) -> &[f32] {
        &self.data[d * self.rows * self.cols..(d + 1) * self.rows * self.cols]
    }
}

/// A dense feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    data: Vec<f32>,
}

impl FeatureVector {
    pub fn new(data: Vec<f32>) -> Self {
        FeatureVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Signed per-pixel gradient with the shape of the input image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl GradientMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid("gradient map shape mismatch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gradient map contains non-finite values"));
        }
        Ok(GradientMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Runs the extractor and pools each final feature map to one number.
pub fn forward(img: &Image, params: &BackboneParams) -> Result<(ChannelStack, FeatureVector)> {
    params.check_input(img)?;
    let acts = params.forward_acts(img);
    let last = acts.last().unwrap();
    let stack = ChannelStack::new(last.c, last.h, last.w, last.data.clone())?;
    let features = pool_stack(&stack);
    Ok((stack, features))
}

/// Channel-wise mean of a stack; sums in f64 for a stable mean.
pub fn pool_stack(stack: &ChannelStack) -> FeatureVector {
    let area = (stack.rows * stack.cols) as f64;
    let data = (0..stack.channels)
        .map(|d| (stack.channel(d).iter().map(|&v| v as f64).sum::<f64>() / area) as f32)
        .collect();
    FeatureVector::new(data)
}

/// Exact reverse-mode gradient of pooled feature `d` with respect to every
/// input value. The ReLU subgradient at 0 is 0; pooling ties route to the
/// first maximal element.
pub fn input_gradient(img: &Image, params: &BackboneParams, d: usize) -> Result<GradientMap> {
    params.check_input(img)?;
    if d >= params.feature_dim {
        return Err(Error::invalid(format!(
            "channel {d} out of range for feature_dim {}",
            params.feature_dim
        )));
    }
    let acts = params.forward_acts(img);
    let grad = backward_from_channel(params, &acts, d);
    Ok(chw_to_gradient_map(&grad))
}

/// Input gradients for several channels, sharing one forward pass.
pub fn input_gradients(
    img: &Image,
    params: &BackboneParams,
    channels: &[usize],
) -> Result<Vec<GradientMap>> {
    params.check_input(img)?;
    if let Some(&d) = channels.iter().find(|&&d| d >= params.feature_dim) {
        return Err(Error::invalid(format!(
            "channel {d} out of range for feature_dim {}",
            params.feature_dim
        )));
    }
    let acts = params.forward_acts(img);
    Ok(channels
        .iter()
        .map(|&d| chw_to_gradient_map(&backward_from_channel(params, &acts, d)))
        .collect())
}

fn backward_from_channel(params: &BackboneParams, acts: &[Chw], d: usize) -> Chw {
    let last = acts.last().unwrap();
    let mut grad = Chw::zeros(last.c, last.h, last.w);
    let seed = 1.0 / (last.h * last.w) as f32;
    grad.channel_mut(d).fill(seed);
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        grad = match layer {
            Layer::Conv(conv) => {
                if conv.relu {
                    ops::relu_mask(&mut grad, &acts[idx + 1]);
                }
                ops::conv_backward_input(conv, &grad)
            }
            Layer::MaxPool2 => ops::maxpool_backward(&acts[idx], &grad),
        };
    }
    grad
}

fn glorot_conv(in_channels: usize, out_channels: usize, relu: bool, rng: &mut ChaCha8Rng) -> ConvLayer {
    let fan_in = in_channels * 9;
    let fan_out = out_channels * 9;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let kernel = (0..out_channels * in_channels * 9)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    ConvLayer {
        in_channels,
        out_channels,
        kernel,
        bias: vec![0.0; out_channels],
        relu,
    }
}

fn image_to_chw(img: &Image) -> Chw {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = Chw::zeros(c, h, w);
    for ch in 0..c {
        let plane = out.channel_mut(ch);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = img.value(y, x, ch);
            }
        }
    }
    out
}

fn chw_to_gradient_map(t: &Chw) -> GradientMap {
    let mut data = vec![0.0f32; t.c * t.h * t.w];
    for c in 0..t.c {
        let plane = t.channel(c);
        for y in 0..t.h {
            for x in 0..t.w {
                data[(y * t.w + x) * t.c + c] = plane[y * t.w + x];
            }
        }
    }
    GradientMap {
        height: t.h,
        width: t.w,
        channels: t.c,
        data,
    }
}
