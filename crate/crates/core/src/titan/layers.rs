use rand::Rng as _;

use crate::autodiff::{Bound, ConvSpec, ParamId, ParamStore, Scalar, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// Weight initialisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    #[default]
    Kaiming,
    /// Every weight and bias zero.
    Zero,
}

/// State threaded through a forward pass.
pub struct Ctx<'a, T: Scalar> {
    pub bound: &'a Bound<T>,
    pub store: &'a ParamStore,
    pub train: bool,
    pub rng: Option<&'a mut Rng>,
    /// Running-statistics updates gathered in training mode.
    pub stat_updates: Vec<(ParamId, Vec<f32>)>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn eval(bound: &'a Bound<T>, store: &'a ParamStore) -> Self {
        Self {
            bound,
            store,
            train: false,
            rng: None,
            stat_updates: Vec::new(),
        }
    }

    pub fn train(bound: &'a Bound<T>, store: &'a ParamStore, rng: &'a mut Rng) -> Self {
        Self {
            bound,
            store,
            train: true,
            rng: Some(rng),
            stat_updates: Vec::new(),
        }
    }

    pub fn dropout(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        match (self.train, self.rng.as_deref_mut()) {
            (true, Some(rng)) => x.dropout(p, true, rng),
            _ => Ok(x.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
    pub in_c: usize,
    pub out_c: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        spec: ConvSpec,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let shape = [out_c, in_c, k, k];
        let fan_in = in_c * k * k;
        let w = match init {
            Init::Kaiming => store.kaiming_uniform(&format!("{name}.w"), &shape, fan_in, rng)?,
            Init::Zero => store.zeros(&format!("{name}.w"), &shape, true)?,
        };
        let b = match init {
            Init::Kaiming => {
                let bound = 1.0 / (fan_in as f32).sqrt();
                let data = (0..out_c).map(|_| rng.random_range(-bound..=bound)).collect();
                store.add(&format!("{name}.b"), &[out_c], data, true)?
            }
            Init::Zero => store.zeros(&format!("{name}.b"), &[out_c], true)?,
        };
        Ok(Self { w, b, spec, in_c, out_c })
    }

    /// 1×1 convolution.
    pub fn pointwise(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, init: Init, rng: &mut Rng) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 1, ConvSpec::default(), init, rng)
    }

    /// 3×3 convolution with the given dilation, size preserving.
    pub fn dilated(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, dilation: usize, init: Init, rng: &mut Rng) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 3, ConvSpec::same(3, dilation), init, rng)
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(ctx.bound.get(self.w), self.spec)?
            .add_channel_bias(ctx.bound.get(self.b))
    }
}

/// Instance normalisation without affine terms. Training uses per-sample
/// statistics and tracks their running mean; evaluation uses the running
/// values so the layer acts per pixel.
#[derive(Clone, Debug)]
pub struct Norm {
    mean: ParamId,
    var: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f32 = 0.1;

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let mean = store.zeros(&format!("{name}.running_mean"), &[channels], false)?;
        let var = store.add(&format!("{name}.running_var"), &[channels], vec![1.0; channels], false)?;
        Ok(Self { mean, var })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = x.shape()[1];
        if ctx.train {
            let (y, moments) = x.instance_norm(NORM_EPS)?;
            let n = x.shape()[0] as f64;
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for (i, &(m, v)) in moments.iter().enumerate() {
                mean[i % c] += m / n;
                var[i % c] += v / n;
            }
            let old_m = &ctx.store.param(self.mean).data;
            let old_v = &ctx.store.param(self.var).data;
            let blend = |old: &[f32], new: &[f64]| -> Vec<f32> {
                old.iter()
                    .zip(new)
                    .map(|(&o, &v)| (1.0 - NORM_MOMENTUM) * o + NORM_MOMENTUM * v as f32)
                    .collect()
            };
            ctx.stat_updates.push((self.mean, blend(old_m, &mean)));
            ctx.stat_updates.push((self.var, blend(old_v, &var)));
            Ok(y)
        } else {
            let m = &ctx.store.param(self.mean).data;
            let v = &ctx.store.param(self.var).data;
            let inv: Vec<T> = v
                .iter()
                .map(|&v| T::from_f64(1.0 / (f64::from(v) + NORM_EPS).sqrt()))
                .collect();
            let shift: Vec<T> = m
                .iter()
                .zip(&inv)
                .map(|(&m, &s)| T::from_f64(-f64::from(m)) * s)
                .collect();
            let shift = x.graph().constant(shift, &[c])?;
            x.channel_scale(&inv)?.add_channel_bias(&shift)
        }
    }
}

/// Applies gathered running-statistics updates.
pub fn apply_stat_updates(store: &mut ParamStore, updates: Vec<(ParamId, Vec<f32>)>) {
    for (id, data) in updates {
        store.data_mut(id).copy_from_slice(&data);
    }
}
