use std::collections::HashMap;
use std::path::Path;

use crate::autodiff::checkpoint::{read_tensors, write_tensors};
use crate::autodiff::{Adam, AdamConfig, Graph, NamedTensor, Tensor};
use crate::error::{Error, Result};
use crate::labels::{ClassList, SegmentMap, UNLABELED};
use crate::losses::{self, GuidingLoss, LossReport};
use crate::rng::{self, Rng};

use super::augment::AugmentConfig;
use super::discriminator::{BlockSpec, Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::layers::{apply_stat_updates, Ctx, Init};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub lambda: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub guide: GuidingLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 10,
            max_steps: 2000,
            seed: 0,
            augment: AugmentConfig::default(),
            lambda: losses::GP_LAMBDA,
            n_critic: 1,
            guide: GuidingLoss::Lovasz,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if self.batch_size == 0 || self.n_critic == 0 {
            return Err(Error::InvalidConfig("batch size and critic steps must be at least 1".into()));
        }
        if !unit(self.augment.flip_prob) || !unit(self.augment.drop_prob) || !unit(self.augment.drop_max_fraction) {
            return Err(Error::InvalidConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive and lambda non-negative".into()));
        }
        Ok(())
    }
}

/// One training batch. Range and condition share the LiDAR grid; targets
/// live on the camera grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub lidar_h: usize,
    pub lidar_w: usize,
    /// `[N, 5, h, w]`, normalised.
    pub range: Vec<f32>,
    /// `[N, C, h, w]` one-hot of the LiDAR segment map.
    pub cond: Vec<f32>,
    pub targets: Vec<SegmentMap>,
}

impl Batch {
    pub fn check(&self, range_channels: usize, classes: usize) -> Result<()> {
        let plane = self.lidar_h * self.lidar_w;
        if self.size == 0
            || self.range.len() != self.size * range_channels * plane
            || self.cond.len() != self.size * classes * plane
            || self.targets.len() != self.size
        {
            return Err(Error::shape("batch tensors are inconsistent"));
        }
        Ok(())
    }

    pub(crate) fn tensors(&self, g: &Graph<f32>, range_channels: usize, classes: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        self.check(range_channels, classes)?;
        let range = g.constant(self.range.clone(), &[self.size, range_channels, self.lidar_h, self.lidar_w])?;
        let cond = g.constant(self.cond.clone(), &[self.size, classes, self.lidar_h, self.lidar_w])?;
        Ok((range, cond))
    }
}

fn finite(step: u64, what: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::TrainingDiverged { step, what })
    }
}

/// Generator, critic and their optimisers.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: Generator,
    pub critic: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub classes: ClassList,
    pub config: TrainConfig,
    step: u64,
    rng: Rng,
}

impl Trainer {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, classes: ClassList, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if g.classes != classes.len() || d.classes != classes.len() || d.cond_channels != classes.len() {
            return Err(Error::InvalidConfig("model class counts differ from the class list".into()));
        }
        let mut init = rng::stream(config.seed, 0);
        let generator = Generator::new(g, &mut init)?;
        let critic = Discriminator::new(d, &mut init)?;
        let opt_g = Adam::new(config.adam, &generator.params);
        let opt_d = Adam::new(config.adam, &critic.params);
        Ok(Self {
            generator,
            critic,
            opt_g,
            opt_d,
            classes,
            rng: rng::stream(config.seed, 1),
            config,
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Critic update(s) followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let gcfg = &self.generator.config;
        let (rc, c) = (gcfg.range_channels, gcfg.classes);
        let step = self.step;
        let graph = Graph::<f32>::new();
        let (range, cond) = batch.tensors(&graph, rc, c)?;

        let g_bound = self.generator.params.bind(&graph, true);
        let mut ctx = Ctx::train(&g_bound, &self.generator.params, &mut self.rng);
        let logits = self.generator.forward(&mut ctx, &range, &cond)?;
        let stat_updates = std::mem::take(&mut ctx.stat_updates);
        drop(ctx);
        let probs = logits.softmax(1)?;
        let s = probs.shape().to_vec();
        if s[2] != batch.targets[0].height() || s[3] != batch.targets[0].width() {
            return Err(Error::shape("generator output differs from the target grid"));
        }

        // The critic never sees unlabelled target pixels, in either input.
        let plane = s[2] * s[3];
        let mut mask = vec![0.0f32; probs.numel()];
        for (n, t) in batch.targets.iter().enumerate() {
            for (p, &id) in t.ids().iter().enumerate() {
                if id != UNLABELED && self.classes.channel_of(id).is_some() {
                    for k in 0..c {
                        mask[(n * c + k) * plane + p] = 1.0;
                    }
                }
            }
        }
        let real: Vec<f32> = batch.targets.iter().flat_map(|t| self.classes.one_hot(t)).collect();
        let real = graph.constant(real, &s)?;
        let fake = probs.mul_const(&mask)?;

        let mut d_loss_v = 0.0;
        let mut gp_v = 0.0;
        for _ in 0..self.config.n_critic {
            let d_bound = self.critic.params.bind(&graph, true);
            let d_ctx = Ctx::eval(&d_bound, &self.critic.params);
            let critic = |x: &Tensor<f32>| self.critic.forward(&d_ctx, x, &cond);
            let (d_loss, gp) = losses::wgan_gp_d_loss(&critic, &real, &fake.detach(), self.config.lambda, &mut self.rng)?;
            d_loss_v = finite(step, "critic loss", f64::from(d_loss.item()))?;
            gp_v = finite(step, "gradient penalty", f64::from(gp.item()))?;
            let grads = self.critic.params.grads_of(&d_bound, &d_loss)?;
            self.opt_d.update(&mut self.critic.params, &grads)?;
        }

        let d_bound = self.critic.params.bind(&graph, false);
        let d_ctx = Ctx::eval(&d_bound, &self.critic.params);
        let critic = |x: &Tensor<f32>| self.critic.forward(&d_ctx, x, &cond);
        let g_adv = losses::wgan_g_loss(&critic, &fake)?;
        let lovasz = losses::lovasz_softmax(&probs, &batch.targets, &self.classes)?;
        let guide = match self.config.guide {
            GuidingLoss::Lovasz => Some(lovasz.clone()),
            GuidingLoss::Mse => Some(losses::mse_guide(&probs, &batch.targets, &self.classes)?),
            GuidingLoss::None => None,
        };
        let total = match &guide {
            Some(t) => g_adv.add(&t.broadcast_to(g_adv.shape())?)?,
            None => g_adv.clone(),
        };
        let g_adv_v = finite(step, "generator adversarial loss", f64::from(g_adv.item()))?;
        let lovasz_v = finite(step, "Lovasz loss", f64::from(lovasz.item()))?;
        let guide_v = finite(step, "guiding loss", guide.as_ref().map_or(0.0, |t| f64::from(t.item())))?;
        let grads = self.generator.params.grads_of(&g_bound, &total)?;
        self.opt_g.update(&mut self.generator.params, &grads)?;
        apply_stat_updates(&mut self.generator.params, stat_updates);
        self.step += 1;
        Ok(LossReport {
            d_loss: d_loss_v,
            g_adv_loss: g_adv_v,
            lovasz_loss: lovasz_v,
            guide_loss: guide_v,
            gp_term: gp_v,
            total_g: losses::total_generator_loss(g_adv_v, guide_v),
        })
    }

    /// Generator logits in evaluation mode (no dropout, running statistics).
    pub fn predict_logits(&self, graph: &Graph<f32>, range: &Tensor<f32>, cond: &Tensor<f32>) -> Result<Tensor<f32>> {
        predict_logits(&self.generator, graph, range, cond)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_tensors(path, &self.export())
    }

    pub fn export(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            meta_generator(&self.generator.config),
            meta_critic(&self.critic.config),
            NamedTensor {
                name: "meta/classes".into(),
                shape: vec![self.classes.len()],
                data: self.classes.ids().iter().map(|&v| f32::from(v)).collect(),
            },
        ];
        out.extend(self.generator.params.export("gen/"));
        out.extend(self.critic.params.export("disc/"));
        out.extend(self.opt_g.export("adam_gen/", &self.generator.params));
        out.extend(self.opt_d.export("adam_disc/", &self.critic.params));
        out
    }

    /// Restores models and optimiser moments saved by [`Trainer::save`].
    pub fn load(path: &Path, config: TrainConfig) -> Result<Self> {
        let t = read_tensors(path)?;
        let (gcfg, dcfg, classes) = read_meta(&t)?;
        let mut trainer = Trainer::new(gcfg, dcfg, classes, config)?;
        trainer.generator.params.import("gen/", &t)?;
        trainer.critic.params.import("disc/", &t)?;
        trainer.opt_g.import("adam_gen/", &trainer.generator.params, &t)?;
        trainer.opt_d.import("adam_disc/", &trainer.critic.params, &t)?;
        trainer.step = trainer.opt_g.steps();
        Ok(trainer)
    }
}

/// Generator logits in evaluation mode.
pub fn predict_logits(generator: &Generator, graph: &Graph<f32>, range: &Tensor<f32>, cond: &Tensor<f32>) -> Result<Tensor<f32>> {
    let bound = generator.params.bind(graph, false);
    let mut ctx = Ctx::eval(&bound, &generator.params);
    generator.forward(&mut ctx, range, cond)
}

/// Loads just the generator and its class list from a checkpoint.
pub fn load_generator(path: &Path) -> Result<(Generator, ClassList)> {
    let t = read_tensors(path)?;
    let (gcfg, _, classes) = read_meta(&t)?;
    let mut g = Generator::new(gcfg, &mut rng::seeded(0))?;
    g.params.import("gen/", &t)?;
    Ok((g, classes))
}

fn meta_generator(c: &GeneratorConfig) -> NamedTensor {
    let mut data = vec![
        c.range_channels as f32,
        c.classes as f32,
        c.base_width as f32,
        c.in_h as f32,
        c.in_w as f32,
        c.out_h as f32,
        c.out_w as f32,
        c.stages as f32,
        f32::from(u8::from(c.stem_pool)),
        c.dropout as f32,
    ];
    data.extend(c.dilations.iter().map(|&d| d as f32));
    NamedTensor {
        name: "meta/generator".into(),
        shape: vec![data.len()],
        data,
    }
}

fn meta_critic(c: &DiscriminatorConfig) -> NamedTensor {
    let mut data = vec![c.classes as f32, c.cond_channels as f32, c.fuse_width as f32];
    for b in &c.blocks {
        data.extend([b.out_c as f32, b.kernel as f32, b.stride as f32, b.padding as f32]);
    }
    NamedTensor {
        name: "meta/critic".into(),
        shape: vec![data.len()],
        data,
    }
}

fn read_meta(t: &HashMap<String, NamedTensor>) -> Result<(GeneratorConfig, DiscriminatorConfig, ClassList)> {
    let get = |k: &str| {
        t.get(k)
            .map(|v| v.data.iter().map(|&x| x as usize).collect::<Vec<_>>())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {k}")))
    };
    let g = get("meta/generator")?;
    if g.len() < 11 {
        return Err(Error::Checkpoint("generator metadata is too short".into()));
    }
    let dropout = f64::from(t["meta/generator"].data[9]);
    let gcfg = GeneratorConfig {
        range_channels: g[0],
        classes: g[1],
        base_width: g[2],
        in_h: g[3],
        in_w: g[4],
        out_h: g[5],
        out_w: g[6],
        stages: g[7],
        stem_pool: g[8] != 0,
        dropout,
        dilations: g[10..].to_vec(),
        init: Init::Zero,
    };
    let d = get("meta/critic")?;
    if d.len() < 7 || (d.len() - 3) % 4 != 0 {
        return Err(Error::Checkpoint("critic metadata is malformed".into()));
    }
    let dcfg = DiscriminatorConfig {
        classes: d[0],
        cond_channels: d[1],
        fuse_width: d[2],
        blocks: d[3..]
            .chunks(4)
            .map(|b| BlockSpec { out_c: b[0], kernel: b[1], stride: b[2], padding: b[3] })
            .collect(),
        init: Init::Zero,
    };
    let ids: Vec<u8> = get("meta/classes")?.iter().map(|&v| v as u8).collect();
    Ok((gcfg, dcfg, ClassList::new(&ids)?))
}
