use crate::autodiff::{conv_out_len, ConvSpec, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::{Conv, Ctx, Init};

/// Leaky-ReLU slope inside the discriminator.
pub const D_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Channels of the candidate segment map.
    pub classes: usize,
    /// Channels of the LiDAR condition.
    pub cond_channels: usize,
    /// Width of the 1×1 fusion of candidate and condition.
    pub fuse_width: usize,
    /// Convolution blocks after the fusion. The last one emits one score per patch.
    pub blocks: Vec<BlockSpec>,
    pub init: Init,
}

impl DiscriminatorConfig {
    /// Five halving blocks and a stride-1 scoring block.
    pub fn toy(classes: usize) -> Self {
        let halve = |out_c| BlockSpec { out_c, kernel: 4, stride: 2, padding: 1 };
        Self {
            classes,
            cond_channels: classes,
            fuse_width: 8,
            blocks: vec![
                halve(8),
                halve(16),
                halve(16),
                halve(16),
                halve(16),
                BlockSpec { out_c: 1, kernel: 3, stride: 1, padding: 1 },
            ],
            init: Init::Kaiming,
        }
    }

    /// Patch grid produced for an `h × w` input.
    pub fn patch_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        for (k, b) in self.blocks.iter().enumerate() {
            let spec = ConvSpec::new(b.stride, b.padding, 1);
            match (conv_out_len(h, b.kernel, spec), conv_out_len(w, b.kernel, spec)) {
                (Some(nh), Some(nw)) if nh >= 1 && nw >= 1 => (h, w) = (nh, nw),
                _ => {
                    return Err(Error::shape(format!(
                        "discriminator block {k} has no output on a {h}x{w} grid"
                    )))
                }
            }
        }
        Ok((h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.last().map(|b| b.out_c) != Some(1) {
            return Err(Error::InvalidConfig("the last discriminator block must emit one channel".into()));
        }
        if self.classes == 0 || self.cond_channels == 0 || self.fuse_width == 0 {
            return Err(Error::InvalidConfig("discriminator channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional patch critic. No normalisation layers.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    fuse_cand: Conv,
    fuse_cond: Conv,
    blocks: Vec<Conv>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new();
        let init = config.init;
        let fuse_cand = Conv::pointwise(&mut s, "fuse.cand", config.classes, config.fuse_width, init, rng)?;
        let fuse_cond = Conv::pointwise(&mut s, "fuse.cond", config.cond_channels, config.fuse_width, init, rng)?;
        let mut blocks = Vec::new();
        let mut c = 2 * config.fuse_width;
        for (k, b) in config.blocks.iter().enumerate() {
            let spec = ConvSpec::new(b.stride, b.padding, 1);
            blocks.push(Conv::new(&mut s, &format!("block{k}"), c, b.out_c, b.kernel, spec, init, rng)?);
            c = b.out_c;
        }
        Ok(Self {
            config,
            params: s,
            fuse_cand,
            fuse_cond,
            blocks,
        })
    }

    /// Patch scores `[N, 1, gh, gw]`. The condition is resized to the candidate grid first.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, cand: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, cs) = (cand.shape(), cond.shape());
        if s.len() != 4 || cs.len() != 4 || s[0] != cs[0] {
            return Err(Error::shape(format!("discriminator inputs {s:?} and {cs:?}")));
        }
        let cond = if cs[2..] == s[2..] {
            cond.clone()
        } else {
            cond.bilinear_upsample(s[2], s[3])?
        };
        let slope = T::from_f64(D_SLOPE);
        let a = self.fuse_cand.forward(ctx, cand)?.leaky_relu(slope);
        let b = self.fuse_cond.forward(ctx, &cond)?.leaky_relu(slope);
        let mut x = Tensor::concat(&[&a, &b], 1)?;
        let last = self.blocks.len() - 1;
        for (k, block) in self.blocks.iter().enumerate() {
            x = block.forward(ctx, &x)?;
            if k != last {
                x = x.leaky_relu(slope);
            }
        }
        Ok(x)
    }
}
