//! Training objectives: pixel ℓ₁, perceptual distance over deep features,
//! the conditional adversarial terms, and their weighted combination
//! `net = gan + k1·percep + k2·l1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Element, Tensor};

/// Probabilities are clamped to [EPS, 1−EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

/// Weights of the perceptual (k1) and ℓ₁ (k2) terms in the combined loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub k1: f64,
    pub k2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { k1: 145.0, k2: 170.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got k1={}, k2={}",
                self.k1, self.k2
            )));
        }
        Ok(())
    }
}

/// How to build the perceptual feature map φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// φ = id; the perceptual loss degenerates to pixel MSE.
    Identity,
    /// A fixed, seeded 3-layer convolutional stack (widths 32/64/128,
    /// stride 2 each) standing in for a pretrained feature network.
    RandomConv { seed: u64 },
    /// Layer weights read from a checkpoint-format parameter file, so a real
    /// pretrained extractor can be plugged in.
    External { path: String },
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::RandomConv { seed: 0 }
    }
}

struct ExtractorLayer<E: Element> {
    weight: Tensor<E>,
    bias: Tensor<E>,
    stride: usize,
    padding: usize,
}

/// A fixed (non-trainable) convolutional feature map. Deterministic; its
/// parameters are never handed to an optimizer.
pub struct FeatureExtractor<E: Element = f32> {
    layers: Vec<ExtractorLayer<E>>,
    leaky_slope: f64,
}

pub const RANDOM_CONV_WIDTHS: [usize; 3] = [32, 64, 128];

impl<E: Element> FeatureExtractor<E> {
    pub fn identity() -> Self {
        FeatureExtractor { layers: Vec::new(), leaky_slope: 0.0 }
    }

    /// The seeded random stack. Weights use fan-in scaling so feature
    /// magnitudes stay comparable to the input's.
    pub fn random_conv(seed: u64, image_channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = image_channels;
        for cout in RANDOM_CONV_WIDTHS {
            let std = (2.0 / (cin as f64 * 9.0)).sqrt();
            layers.push(ExtractorLayer {
                weight: Tensor::randn(&[cout, cin, 3, 3], std, &mut rng),
                bias: Tensor::zeros(&[cout]),
                stride: 2,
                padding: 1,
            });
            cin = cout;
        }
        FeatureExtractor { layers, leaky_slope: 0.0 }
    }

    /// Assemble an extractor from externally loaded conv layers
    /// (weight Cout×Cin×k×k, bias [Cout], stride, padding).
    pub fn from_layers(
        layers: Vec<(Tensor<E>, Tensor<E>, usize, usize)>,
        leaky_slope: f64,
    ) -> Result<Self> {
        for (w, b, _, _) in &layers {
            if w.shape().len() != 4 || b.shape().len() != 1 || b.shape()[0] != w.shape()[0] {
                return Err(Error::Shape(format!(
                    "extractor layer expects conv weight/bias, got {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(FeatureExtractor {
            layers: layers
                .into_iter()
                .map(|(weight, bias, stride, padding)| ExtractorLayer { weight, bias, stride, padding })
                .collect(),
            leaky_slope,
        })
    }

    pub fn build(spec: &ExtractorSpec, image_channels: usize) -> Result<Self> {
        match spec {
            ExtractorSpec::Identity => Ok(Self::identity()),
            ExtractorSpec::RandomConv { seed } => Ok(Self::random_conv(*seed, image_channels)),
            ExtractorSpec::External { path } => Err(Error::Config(format!(
                "external extractor `{path}` must be loaded through the checkpoint reader"
            ))),
        }
    }

    /// Layer tensors in order, for persistence.
    pub fn layer_tensors(&self) -> Vec<(Tensor<E>, Tensor<E>, usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.weight.clone(), l.bias.clone(), l.stride, l.padding))
            .collect()
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// φ(x). Gradients flow through to `x`; the weights themselves are leaves
    /// that never require grad. Every conv is followed by the rectifier, so
    /// the output matches a "post-ReLU activations" reading of φ.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut y = x.clone();
        for layer in &self.layers {
            y = conv2d(&y, &layer.weight, &layer.bias, layer.stride, 1, layer.padding)?
                .leaky_relu(self.leaky_slope);
        }
        Ok(y)
    }
}

/// Mean absolute difference over all elements.
pub fn l1_loss<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    Ok(a.sub(b)?.abs().mean())
}

/// Mean squared distance between feature activations of the two images.
/// Normalized over feature width, height, channels and batch; gradients flow
/// through `generated` only.
pub fn perceptual_loss<E: Element>(
    extractor: &FeatureExtractor<E>,
    ground_truth: &Tensor<E>,
    generated: &Tensor<E>,
) -> Result<Tensor<E>> {
    if ground_truth.shape() != generated.shape() {
        return Err(Error::Shape(format!(
            "perceptual loss inputs must share shape, got {:?} and {:?}",
            ground_truth.shape(),
            generated.shape()
        )));
    }
    let target = extractor.forward(&ground_truth.detach())?;
    let features = extractor.forward(generated)?;
    Ok(features.sub(&target)?.square().mean())
}

/// Discriminator objective: −mean log d_real − mean log(1 − d_fake), the
/// ascent direction of the adversarial game negated for minimization.
/// Probabilities are clamped so the logs stay finite.
pub fn gan_discriminator_loss<E: Element>(d_real: &Tensor<E>, d_fake: &Tensor<E>) -> Result<Tensor<E>> {
    let real_term = d_real.clamp(PROB_EPS, 1.0 - PROB_EPS).ln().mean().affine(-1.0, 0.0);
    let fake_term = d_fake
        .affine(-1.0, 1.0)
        .clamp(PROB_EPS, 1.0 - PROB_EPS)
        .ln()
        .mean()
        .affine(-1.0, 0.0);
    real_term.add(&fake_term)
}

/// Generator adversarial objective on the conditional pair:
/// −mean log d_fake, pushing the patch probabilities toward 1.
pub fn gan_generator_loss_conditional<E: Element>(d_fake_conditional: &Tensor<E>) -> Tensor<E> {
    d_fake_conditional
        .clamp(PROB_EPS, 1.0 - PROB_EPS)
        .ln()
        .mean()
        .affine(-1.0, 0.0)
}

/// The combined objective: `gan + k1·percep + k2·l1`.
pub fn net_loss<E: Element>(
    gan: &Tensor<E>,
    percep: &Tensor<E>,
    l1: &Tensor<E>,
    w: &LossWeights,
) -> Result<Tensor<E>> {
    gan.add(&percep.affine(w.k1, 0.0))?.add(&l1.affine(w.k2, 0.0))
}
