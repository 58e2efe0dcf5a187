//! Conditional Markovian patch discriminator.
//!
//! Judges (blurred input, candidate) pairs: the two images are concatenated
//! along channels and pushed through a fixed 10-layer convolutional ladder.
//! Four stride-2 layers shrink the map 16×, so each unit of the output grid
//! scores one local patch; the sigmoid keeps every score in (0, 1).
//!
//! The ladder: layers 1–5 are 3×3 stride-1 with widths w, w, 2w, 2w, 4w
//! (w = `base_width`); layers 6–9 are 3×3 stride-2 rising to 8w; layer 10 is
//! a 1×1 projection to a single channel. LeakyReLU sits between layers.
//! Instance normalization can be toggled on for layers 2–9.
//!
//! Ordering the stride-1 layers before the downsampling ones keeps the
//! receptive field of one output unit at 41 px — a genuinely local patch on
//! any input of 64 px and up.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv_output_size, Element, Parameter, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub image_channels: usize,
    /// Width of the first layer; later layers scale from it.
    pub base_width: usize,
    pub leaky_slope: f64,
    /// Per-channel instance normalization on the middle layers (off by
    /// default: the conditional pairing carries the statistics we judge).
    pub instance_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_channels: 3,
            base_width: 64,
            leaky_slope: 0.2,
            instance_norm: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_channels < 1 {
            return Err(Error::Config("image_channels must be >= 1".into()));
        }
        if self.base_width < 1 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        Ok(())
    }
}

struct Layer<E: Element> {
    weight: Tensor<E>,
    bias: Tensor<E>,
    stride: usize,
    padding: usize,
    norm: Option<(Tensor<E>, Tensor<E>)>,
}

pub const NUM_LAYERS: usize = 10;

/// The instantiated patch discriminator.
pub struct Discriminator<E: Element = f32> {
    config: DiscriminatorConfig,
    layers: Vec<Layer<E>>,
}

/// Per-layer (out_channels, kernel, stride) of the ladder.
pub fn layer_spec(base_width: usize) -> [(usize, usize, usize); NUM_LAYERS] {
    let w = base_width;
    [
        (w, 3, 1),
        (w, 3, 1),
        (2 * w, 3, 1),
        (2 * w, 3, 1),
        (4 * w, 3, 1),
        (4 * w, 3, 2),
        (8 * w, 3, 2),
        (8 * w, 3, 2),
        (8 * w, 3, 2),
        (1, 1, 1),
    ]
}

/// Receptive-field extent (in input pixels) of one unit of the patch map.
pub fn receptive_field() -> usize {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for (_, k, stride) in layer_spec(1) {
        rf += (k - 1) * jump;
        jump *= stride;
    }
    rf
}

/// Spatial size of the patch map for an H (or W) input extent.
pub fn patch_map_size(mut extent: usize) -> usize {
    for (_, k, stride) in layer_spec(1) {
        extent = conv_output_size(extent, k, stride, (k - 1) / 2, 1).unwrap_or(0);
    }
    extent
}

/// Build the 10-layer ladder with Gaussian(0, 0.02) weights, zero biases,
/// deterministically from the seed.
pub fn build_discriminator<E: Element>(
    config: &DiscriminatorConfig,
    rng_seed: u64,
) -> Result<Discriminator<E>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut cin = 2 * config.image_channels;
    let mut layers = Vec::with_capacity(NUM_LAYERS);
    for (i, (cout, k, stride)) in layer_spec(config.base_width).into_iter().enumerate() {
        let weight = Tensor::randn(&[cout, cin, k, k], 0.02, &mut rng).with_requires_grad();
        let bias = Tensor::zeros(&[cout]).with_requires_grad();
        let norm = (config.instance_norm && i > 0 && i < NUM_LAYERS - 1).then(|| {
            (
                Tensor::<E>::ones(&[cout]).with_requires_grad(),
                Tensor::<E>::zeros(&[cout]).with_requires_grad(),
            )
        });
        layers.push(Layer { weight, bias, stride, padding: (k - 1) / 2, norm });
        cin = cout;
    }
    Ok(Discriminator { config: config.clone(), layers })
}

impl<E: Element> Discriminator<E> {
    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Patch realness map for a (blurred, candidate) pair. Both inputs are
    /// B×C×H×W with H, W ≥ 16; the result is B×1×h×w with values in (0, 1).
    pub fn forward(&self, blurred: &Tensor<E>, candidate: &Tensor<E>) -> Result<Tensor<E>> {
        if blurred.shape() != candidate.shape() {
            return Err(Error::Shape(format!(
                "discriminator pair must share shape, got {:?} and {:?}",
                blurred.shape(),
                candidate.shape()
            )));
        }
        let shape = blurred.shape();
        if shape.len() != 4 || shape[1] != self.config.image_channels {
            return Err(Error::Shape(format!(
                "discriminator expects B×{}×H×W inputs, got {shape:?}",
                self.config.image_channels
            )));
        }
        if shape[2] < 16 || shape[3] < 16 {
            return Err(Error::InvalidArg(format!(
                "discriminator needs at least 16×16 inputs, got {}×{}",
                shape[2], shape[3]
            )));
        }

        let mut x = Tensor::concat_channels(&[blurred.clone(), candidate.clone()])?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = conv2d(&x, &layer.weight, &layer.bias, layer.stride, 1, layer.padding)?;
            if let Some((gain, shift)) = &layer.norm {
                x = x.instance_norm(gain, shift, 1e-5)?;
            }
            if i < last {
                x = x.leaky_relu(self.config.leaky_slope);
            }
        }
        Ok(x.sigmoid())
    }

    /// Names follow `discriminator.layer{1..10}.{weight,bias}` (plus
    /// `.norm.{gain,shift}` when instance norm is enabled).
    pub fn named_parameters(&self) -> Vec<Parameter<E>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let base = format!("discriminator.layer{}", i + 1);
            out.push(Parameter::new(format!("{base}.weight"), layer.weight.clone()));
            out.push(Parameter::new(format!("{base}.bias"), layer.bias.clone()));
            if let Some((gain, shift)) = &layer.norm {
                out.push(Parameter::new(format!("{base}.norm.gain"), gain.clone()));
                out.push(Parameter::new(format!("{base}.norm.shift"), shift.clone()));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|p| p.tensor.numel()).sum()
    }
}
