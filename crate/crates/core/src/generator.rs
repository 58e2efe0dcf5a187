//! The dense generator.
//!
//! Four stages: a head convolution lifting the image to 4·chr feature maps, a
//! dense field of N blocks whose outputs all feed forward by channel
//! concatenation, a tail that re-expands to 4·chr maps, and a global skip
//! that concatenates head and tail outputs before a final fusion convolution
//! back to image channels.
//!
//! Block m of the dense field therefore sees `4·chr + (m−1)·chr` input
//! channels. A 1×1 choke bounds what reaches the 3×3 convolution at 4·chr;
//! the 3×3 is dilated on every even-numbered block, with the dilation rising
//! linearly to the centre of the field and falling symmetrically after it.
//!
//! Two ablation variants swap parts of the field for residual blocks
//! (element-wise sum skip, constant width): `VariantA` replaces the three
//! blocks nearest the head and the three nearest the tail, `VariantB` the
//! three central blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive2;
use crate::tensor::{conv2d, Element, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All N blocks dense (the full model).
    Dense,
    /// Residual blocks at the extremes, dense in the middle.
    VariantA,
    /// Dense across the extremes, successive residuals in the middle.
    VariantB,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Channel rate: activation channels emitted by each dense block.
    pub chr: usize,
    /// Number of blocks in the dense field. Must be even (the symmetric
    /// dilation schedule needs it).
    pub num_blocks: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub variant: Variant,
    pub image_channels: usize,
    /// Ablation flag for the head↔tail concatenation.
    pub global_skip: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            chr: 64,
            num_blocks: 10,
            leaky_slope: 0.2,
            dropout_rate: 0.5,
            variant: Variant::Dense,
            image_channels: 3,
            global_skip: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chr < 1 {
            return Err(Error::Config("chr must be >= 1".into()));
        }
        if self.num_blocks < 2 || self.num_blocks % 2 != 0 {
            return Err(Error::Config(format!(
                "num_blocks must be even and >= 2, got {}",
                self.num_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.image_channels < 1 {
            return Err(Error::Config("image_channels must be >= 1".into()));
        }
        match self.variant {
            Variant::VariantA if self.num_blocks < 8 => Err(Error::Config(
                "variant_a needs num_blocks >= 8 (3 residual + dense + 3 residual)".into(),
            )),
            Variant::VariantB if self.num_blocks < 4 => {
                Err(Error::Config("variant_b needs num_blocks >= 4".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Output (chr channels) is concatenated onto the running feature bank.
    Dense,
    /// Output is summed with the block input; width is preserved.
    Residual,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockPlan {
    /// 1-based position in the field.
    pub index: usize,
    pub kind: BlockKind,
    pub input_channels: usize,
    pub choke_channels: usize,
    pub output_channels: usize,
    pub dilation: usize,
}

/// Per-block channel bookkeeping plus the tail/final widths.
#[derive(Debug, Clone)]
pub struct ChannelPlan {
    pub blocks: Vec<BlockPlan>,
    pub tail_input: usize,
    pub tail_output: usize,
    pub final_input: usize,
}

/// Dilation factor per block, 1-based. Odd positions are plain spatial
/// convolutions; even positions dilate, rising linearly to the centre of the
/// field and falling symmetrically toward the tail.
pub fn dilation_schedule(num_blocks: usize) -> Result<Vec<usize>> {
    if num_blocks % 2 != 0 || num_blocks == 0 {
        return Err(Error::InvalidArg(format!(
            "dilation schedule needs an even block count, got {num_blocks}"
        )));
    }
    Ok((1..=num_blocks)
        .map(|i| {
            if i % 2 == 1 {
                1
            } else {
                1 + i.min(num_blocks - i + 2) / 2
            }
        })
        .collect())
}

/// First (1-based) index of the three central residual blocks in `VariantB`.
fn variant_b_center(num_blocks: usize) -> usize {
    (num_blocks - 3) / 2 + 1
}

/// Channel counts for every block, the tail, and the final fusion layer.
pub fn channel_plan(config: &GeneratorConfig) -> Result<ChannelPlan> {
    config.validate()?;
    let chr = config.chr;
    let base = 4 * chr;
    let n = config.num_blocks;
    let dilations = dilation_schedule(n)?;
    let mut blocks = Vec::with_capacity(n);
    let mut bank = base;

    let push_dense = |blocks: &mut Vec<BlockPlan>, bank: &mut usize, index: usize| {
        blocks.push(BlockPlan {
            index,
            kind: BlockKind::Dense,
            input_channels: *bank,
            choke_channels: base,
            output_channels: chr,
            dilation: dilations[index - 1],
        });
        *bank += chr;
    };
    let push_residual = |blocks: &mut Vec<BlockPlan>, width: usize, index: usize| {
        blocks.push(BlockPlan {
            index,
            kind: BlockKind::Residual,
            input_channels: width,
            choke_channels: base,
            output_channels: width,
            dilation: dilations[index - 1],
        });
    };

    match config.variant {
        Variant::Dense => {
            for m in 1..=n {
                push_dense(&mut blocks, &mut bank, m);
            }
        }
        Variant::VariantA => {
            for m in 1..=3 {
                push_residual(&mut blocks, base, m);
            }
            for m in 4..=n - 3 {
                push_dense(&mut blocks, &mut bank, m);
            }
            // The suffix residual blocks run after the tail, at tail width.
            for m in n - 2..=n {
                push_residual(&mut blocks, base, m);
            }
        }
        Variant::VariantB => {
            let c = variant_b_center(n);
            for m in 1..c {
                push_dense(&mut blocks, &mut bank, m);
            }
            for m in c..c + 3 {
                push_residual(&mut blocks, bank, m);
            }
            for m in c + 3..=n {
                push_dense(&mut blocks, &mut bank, m);
            }
        }
    }

    Ok(ChannelPlan {
        blocks,
        tail_input: bank,
        tail_output: base,
        final_input: if config.global_skip { 2 * base } else { base },
    })
}

const WEIGHT_STD: f64 = 0.02;

struct Conv<E: Element> {
    weight: Tensor<E>,
    bias: Tensor<E>,
    dilation: usize,
    padding: usize,
}

impl<E: Element> Conv<E> {
    fn init(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize, dilation: usize) -> Conv<E> {
        Conv {
            weight: Tensor::randn(&[cout, cin, k, k], WEIGHT_STD, rng).with_requires_grad(),
            bias: Tensor::zeros(&[cout]).with_requires_grad(),
            dilation,
            padding: dilation * (k - 1) / 2,
        }
    }

    fn apply(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(x, &self.weight, &self.bias, 1, self.dilation, self.padding)
    }
}

struct Block<E: Element> {
    plan: BlockPlan,
    choke: Conv<E>,
    conv: Conv<E>,
}

impl<E: Element> Block<E> {
    /// LeakyReLU → 1×1 choke → LeakyReLU → 3×3 dilated conv → dropout, plus
    /// the residual sum for residual blocks.
    fn apply(&self, x: &Tensor<E>, cfg: &GeneratorConfig, training: bool, seed: u64) -> Result<Tensor<E>> {
        assert_eq!(
            x.shape()[1],
            self.plan.input_channels,
            "block {} expects {} input channels",
            self.plan.index,
            self.plan.input_channels
        );
        let y = self.choke.apply(&x.leaky_relu(cfg.leaky_slope))?;
        let y = self.conv.apply(&y.leaky_relu(cfg.leaky_slope))?;
        let y = y.dropout(cfg.dropout_rate, training, seed)?;
        match self.plan.kind {
            BlockKind::Dense => Ok(y),
            BlockKind::Residual => x.add(&y),
        }
    }
}

/// The instantiated generator network.
pub struct Generator<E: Element = f32> {
    config: GeneratorConfig,
    plan: ChannelPlan,
    head: Conv<E>,
    blocks: Vec<Block<E>>,
    tail: Conv<E>,
    fuse: Conv<E>,
}

/// Build a generator with Gaussian(0, 0.02) weights and zero biases,
/// deterministically from the seed.
pub fn build_generator<E: Element>(config: &GeneratorConfig, rng_seed: u64) -> Result<Generator<E>> {
    let plan = channel_plan(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let base = 4 * config.chr;

    let head = Conv::init(&mut rng, base, config.image_channels, 3, 1);
    let mut blocks = Vec::with_capacity(plan.blocks.len());
    for bp in &plan.blocks {
        let choke = Conv::init(&mut rng, bp.choke_channels, bp.input_channels, 1, 1);
        let conv = Conv::init(&mut rng, bp.output_channels, bp.choke_channels, 3, bp.dilation);
        blocks.push(Block { plan: *bp, choke, conv });
    }
    let tail = Conv::init(&mut rng, plan.tail_output, plan.tail_input, 1, 1);
    let fuse = Conv::init(&mut rng, config.image_channels, plan.final_input, 3, 1);

    Ok(Generator { config: config.clone(), plan, head, blocks, tail, fuse })
}

impl<E: Element> Generator<E> {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    pub fn max_dilation(&self) -> usize {
        self.plan.blocks.iter().map(|b| b.dilation).max().unwrap_or(1)
    }

    /// Deblur a batch. `image` is B×C×H×W in [−1,1]; the output keeps the
    /// shape and range. `rng_seed` fixes the dropout masks in training mode;
    /// inference ignores it.
    pub fn forward(&self, image: &Tensor<E>, training: bool, rng_seed: u64) -> Result<Tensor<E>> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != self.config.image_channels {
            return Err(Error::Shape(format!(
                "generator expects B×{}×H×W input, got {shape:?}",
                self.config.image_channels
            )));
        }
        let min_side = 2 * self.max_dilation() + 1;
        if shape[2] < min_side || shape[3] < min_side {
            return Err(Error::InvalidArg(format!(
                "input {}×{} is smaller than the {min_side}-px minimum for this dilation schedule",
                shape[2], shape[3]
            )));
        }
        {
            let one = E::one();
            let data = image.data_ref();
            if data.iter().any(|v| !v.is_finite() || v.abs() > one) {
                return Err(Error::InvalidArg(
                    "generator input must lie in [-1, 1]; normalize before calling".into(),
                ));
            }
        }

        let head_out = self.head.apply(image)?;
        let mut bank = head_out.clone();
        let mut post_tail_blocks = Vec::new();

        for block in &self.blocks {
            if self.config.variant == Variant::VariantA && block.plan.index > self.config.num_blocks - 3 {
                post_tail_blocks.push(block);
                continue;
            }
            let seed = derive2(rng_seed, block.plan.index as u64, 0);
            let y = block.apply(&bank, &self.config, training, seed)?;
            bank = match block.plan.kind {
                BlockKind::Dense => Tensor::concat_channels(&[bank, y])?,
                BlockKind::Residual => y,
            };
        }

        assert_eq!(bank.shape()[1], self.plan.tail_input, "tail input width");
        let mut out = self.tail.apply(&bank.leaky_relu(self.config.leaky_slope))?;

        for block in post_tail_blocks {
            let seed = derive2(rng_seed, block.plan.index as u64, 0);
            out = block.apply(&out, &self.config, training, seed)?;
        }

        let fused = if self.config.global_skip {
            Tensor::concat_channels(&[head_out, out])?
        } else {
            out
        };
        assert_eq!(fused.shape()[1], self.plan.final_input, "final input width");
        Ok(self.fuse.apply(&fused)?.tanh())
    }

    /// All trainable tensors, names following
    /// `generator.{head,dense.{m}.{choke,conv},tail,final}.{weight,bias}`.
    pub fn named_parameters(&self) -> Vec<Parameter<E>> {
        let mut out = Vec::new();
        let mut push = |name: String, conv: &Conv<E>| {
            out.push(Parameter::new(format!("{name}.weight"), conv.weight.clone()));
            out.push(Parameter::new(format!("{name}.bias"), conv.bias.clone()));
        };
        push("generator.head".into(), &self.head);
        for b in &self.blocks {
            push(format!("generator.dense.{}.choke", b.plan.index), &b.choke);
            push(format!("generator.dense.{}.conv", b.plan.index), &b.conv);
        }
        push("generator.tail".into(), &self.tail);
        push("generator.final".into(), &self.fuse);
        out
    }

    /// Total trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|p| p.tensor.numel()).sum()
    }
}
