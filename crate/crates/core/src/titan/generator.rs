use crate::autodiff::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::{Conv, Ctx, Init, Norm};

/// Leaky-ReLU slope inside the generator.
pub const G_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Range-view channels (x, y, z, i, r).
    pub range_channels: usize,
    /// Classes of the condition and of the output.
    pub classes: usize,
    pub base_width: usize,
    /// Input grid the model is trained on.
    pub in_h: usize,
    pub in_w: usize,
    /// Output grid for an `in_h × in_w` input.
    pub out_h: usize,
    pub out_w: usize,
    /// Dilations of the parallel 3×3 convolutions in every residual block.
    pub dilations: Vec<usize>,
    /// Encoder stages; each halves the grid and doubles the width.
    pub stages: usize,
    /// Average-pool the merged input once before the contextual module.
    pub stem_pool: bool,
    pub dropout: f64,
    pub init: Init,
}

impl GeneratorConfig {
    /// Small model for 64×128 crops.
    pub fn toy(classes: usize) -> Self {
        Self {
            range_channels: 5,
            classes,
            base_width: 8,
            in_h: 64,
            in_w: 128,
            out_h: 64,
            out_w: 128,
            dilations: vec![1, 2, 3],
            stages: 2,
            stem_pool: true,
            dropout: 0.2,
            init: Init::Kaiming,
        }
    }

    /// Grid divisor every input side must be a multiple of.
    pub fn granularity(&self) -> usize {
        1 << (self.stages + usize::from(self.stem_pool))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.range_channels == 0 || self.classes == 0 || self.base_width == 0 {
            return bad("generator channel counts must be positive".into());
        }
        if self.base_width % 4 != 0 {
            return bad(format!("base width {} must be a multiple of 4 for pixel shuffle", self.base_width));
        }
        if self.dilations.is_empty() {
            return bad("at least one dilation is required".into());
        }
        let g = self.granularity();
        if self.in_h % g != 0 || self.in_w % g != 0 {
            return bad(format!("input {}x{} is not a multiple of {g}", self.in_h, self.in_w));
        }
        let inner_h = self.in_h / if self.stem_pool { 2 } else { 1 };
        let inner_w = self.in_w / if self.stem_pool { 2 } else { 1 };
        if self.out_h < inner_h || self.out_w < inner_w {
            return bad(format!(
                "output {}x{} is smaller than the decoder grid {inner_h}x{inner_w}",
                self.out_h, self.out_w
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Upper bound, in input pixels, on how far an output pixel's inputs can
    /// lie from it along either axis. Pools and pixel shuffles are counted at
    /// their full footprint so sub-pixel offsets are covered.
    pub fn receptive_radius(&self) -> usize {
        let block = |dil: &[usize], s: usize| dil.iter().sum::<usize>() * s;
        let mut s = 1;
        let mut r = 0;
        if self.stem_pool {
            r += 2 * s;
            s *= 2;
        }
        r += block(&[1, 2], s);
        for _ in 0..self.stages {
            r += block(&self.dilations, s);
            r += 2 * s;
            s *= 2;
        }
        r += block(&self.dilations, s);
        for _ in 0..self.stages {
            r += s;
            s /= 2;
            r += block(&self.dilations, s);
        }
        // final bilinear resize reads two neighbours at the decoder stride
        r + 2 * s
    }

    /// Output size for an input of the given size.
    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let g = self.granularity();
        if in_h != self.in_h || in_w % g != 0 || (in_w * self.out_w) % self.in_w != 0 {
            return Err(Error::shape(format!(
                "input {in_h}x{in_w} is incompatible with a model trained on {}x{}",
                self.in_h, self.in_w
            )));
        }
        Ok((self.out_h, in_w * self.out_w / self.in_w))
    }
}

/// Parallel dilated 3×3 branches fused by a 1×1, plus a 1×1 shortcut.
#[derive(Clone, Debug)]
struct ResBlock {
    shortcut: Conv,
    branches: Vec<(Conv, Norm)>,
    fuse: Conv,
    fuse_norm: Norm,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, dilations: &[usize], init: Init, rng: &mut Rng) -> Result<Self> {
        let shortcut = Conv::pointwise(store, &format!("{name}.shortcut"), in_c, out_c, init, rng)?;
        let mut branches = Vec::new();
        let mut c = in_c;
        for (k, &d) in dilations.iter().enumerate() {
            let conv = Conv::dilated(store, &format!("{name}.conv{k}"), c, out_c, d, init, rng)?;
            let norm = Norm::new(store, &format!("{name}.norm{k}"), out_c)?;
            branches.push((conv, norm));
            c = out_c;
        }
        let fuse = Conv::pointwise(store, &format!("{name}.fuse"), out_c * dilations.len(), out_c, init, rng)?;
        let fuse_norm = Norm::new(store, &format!("{name}.fuse_norm"), out_c)?;
        Ok(Self {
            shortcut,
            branches,
            fuse,
            fuse_norm,
        })
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let slope = T::from_f64(G_SLOPE);
        let skip = self.shortcut.forward(ctx, x)?.leaky_relu(slope);
        let mut h = x.clone();
        let mut outs = Vec::new();
        for (conv, norm) in &self.branches {
            h = conv.forward(ctx, &h)?.leaky_relu(slope);
            h = norm.forward(ctx, &h)?;
            outs.push(h.clone());
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let cat = Tensor::concat(&refs, 1)?;
        let fused = self.fuse.forward(ctx, &cat)?.leaky_relu(slope);
        let fused = self.fuse_norm.forward(ctx, &fused)?;
        fused.add(&skip)
    }
}

/// Conditional generator from a range view and its LiDAR segment map to
/// camera-view class logits.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    merge_range: Conv,
    merge_cond: Conv,
    merge: Conv,
    context: ResBlock,
    encoder: Vec<ResBlock>,
    bottleneck: ResBlock,
    decoder: Vec<ResBlock>,
    head: Conv,
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new();
        let (b, init, dil) = (config.base_width, config.init, config.dilations.clone());
        let merge_range = Conv::pointwise(&mut s, "merge.range", config.range_channels, b, init, rng)?;
        let merge_cond = Conv::pointwise(&mut s, "merge.cond", config.classes, b, init, rng)?;
        let merge = Conv::pointwise(&mut s, "merge.fuse", 2 * b, b, init, rng)?;
        let context = ResBlock::new(&mut s, "context", b, b, &[1, 2], init, rng)?;
        let mut encoder = Vec::new();
        let mut widths = vec![b];
        let mut c = b;
        for k in 0..config.stages {
            encoder.push(ResBlock::new(&mut s, &format!("enc{k}"), c, 2 * c, &dil, init, rng)?);
            c *= 2;
            widths.push(c);
        }
        let bottleneck = ResBlock::new(&mut s, "bottleneck", c, c, &dil, init, rng)?;
        let mut decoder = Vec::new();
        for k in (0..config.stages).rev() {
            // pixel shuffle quarters the channels, then the encoder skip joins
            let skip = widths[k + 1];
            let out = widths[k];
            decoder.push(ResBlock::new(&mut s, &format!("dec{k}"), c / 4 + skip, out, &dil, init, rng)?);
            c = out;
            if c % 4 != 0 && k > 0 {
                return Err(Error::InvalidConfig(format!("decoder width {c} is not divisible by 4")));
            }
        }
        let head = Conv::pointwise(&mut s, "head", c, config.classes, init, rng)?;
        Ok(Self {
            config,
            params: s,
            merge_range,
            merge_cond,
            merge,
            context,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// Decoder features before the class head and the final resize.
    pub fn features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, range: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (rs, cs) = (range.shape(), cond.shape());
        if rs.len() != 4 || cs.len() != 4 || rs[1] != cfg.range_channels || cs[1] != cfg.classes || rs[0] != cs[0] || rs[2..] != cs[2..] {
            return Err(Error::shape(format!("generator inputs {rs:?} and {cs:?} do not match the config")));
        }
        cfg.output_size(rs[2], rs[3])?;
        let slope = T::from_f64(G_SLOPE);
        let r = self.merge_range.forward(ctx, range)?.leaky_relu(slope);
        let s = self.merge_cond.forward(ctx, cond)?.leaky_relu(slope);
        let mut x = self.merge.forward(ctx, &Tensor::concat(&[&r, &s], 1)?)?.leaky_relu(slope);
        if cfg.stem_pool {
            x = x.avg_pool2()?;
        }
        x = self.context.forward(ctx, &x)?;
        let mut skips = Vec::new();
        for block in &self.encoder {
            x = block.forward(ctx, &x)?;
            x = ctx.dropout(&x, cfg.dropout)?;
            skips.push(x.clone());
            x = x.avg_pool2()?;
        }
        x = self.bottleneck.forward(ctx, &x)?;
        for block in &self.decoder {
            let skip = skips.pop().expect("one skip per encoder stage");
            let up = x.pixel_shuffle(2)?;
            x = block.forward(ctx, &Tensor::concat(&[&up, &skip], 1)?)?;
            x = ctx.dropout(&x, cfg.dropout)?;
        }
        Ok(x)
    }

    /// Class logits `[N, C, out_h, out_w']`, with `out_w'` scaled with the input width.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, range: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let (oh, ow) = self.config.output_size(range.shape()[2], range.shape()[3])?;
        let x = self.features(ctx, range, cond)?;
        self.head.forward(ctx, &x)?.bilinear_upsample(oh, ow)
    }
}
