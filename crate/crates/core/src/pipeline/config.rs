use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::geometry::ProjectionConfig;
use crate::labels::ClassList;
use crate::titan::{AugmentConfig, BlockSpec, DiscriminatorConfig, GeneratorConfig, Init, TrainConfig};

use super::scene::{BoxSize, Count, CylinderSize, PinholeCamera, Span, SyntheticSceneConfig};

/// `key = value` lines; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    context: String,
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                context: format!("{context}:{}", n + 1),
                message: "expected key = value".into(),
            })?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    context: format!("{context}:{}", n + 1),
                    message: format!("duplicate key {k}"),
                });
            }
        }
        Ok(Self {
            context: context.into(),
            entries,
        })
    }

    fn err(&self, key: &str, message: impl Display) -> Error {
        Error::Parse {
            context: format!("{} ({key})", self.context),
            message: message.to_string(),
        }
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.err(key, e)),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Whitespace-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split_whitespace()
            .map(|s| s.parse().map_err(|e| self.err(key, e)))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn take_pair<T: FromStr + Copy>(&mut self, key: &str) -> Result<Option<(T, T)>>
    where
        T::Err: Display,
    {
        match self.take_list::<T>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(v) if v.len() == 1 => Ok(Some((v[0], v[0]))),
            Some(_) => Err(self.err(key, "expected one or two values")),
        }
    }

    fn span(&mut self, key: &str, d: Span) -> Result<Span> {
        Ok(self.take_pair(key)?.map_or(d, |(a, b)| Span::new(a, b)))
    }

    fn count(&mut self, key: &str, d: Count) -> Result<Count> {
        Ok(self.take_pair(key)?.map_or(d, |(a, b)| Count::new(a, b)))
    }

    fn box_size(&mut self, key: &str, d: BoxSize) -> Result<BoxSize> {
        Ok(BoxSize {
            length: self.span(&format!("{key}.length"), d.length)?,
            width: self.span(&format!("{key}.width"), d.width)?,
            height: self.span(&format!("{key}.height"), d.height)?,
        })
    }

    fn cyl_size(&mut self, key: &str, d: CylinderSize) -> Result<CylinderSize> {
        Ok(CylinderSize {
            radius: self.span(&format!("{key}.radius"), d.radius)?,
            height: self.span(&format!("{key}.height"), d.height)?,
        })
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

/// Shortest decimal degree value that converts back to exactly `rad`.
fn degrees_text(rad: f64) -> String {
    (0..17)
        .map(|digits| format!("{:.*}", digits, rad.to_degrees()))
        .find(|t| t.parse::<f64>().is_ok_and(|d| d.to_radians() == rad))
        .unwrap_or_else(|| rad.to_degrees().to_string())
}

fn span_text(s: Span) -> String {
    format!("{} {}", s.min, s.max)
}

impl SyntheticSceneConfig {
    /// Keys missing from `text` keep the values of `base`.
    pub fn from_kv(text: &str, context: &str, base: &SyntheticSceneConfig) -> Result<Self> {
        let mut kv = KvFile::parse(text, context)?;
        let b = base;
        let deg = |v: Option<f64>, d: f64| v.map_or(d, f64::to_radians);
        let lidar = ProjectionConfig {
            width: kv.take_or("lidar.azimuths", b.lidar.width)?,
            height: kv.take_or("lidar.beams", b.lidar.height)?,
            fov_up: deg(kv.take("lidar.fov_up_deg")?, b.lidar.fov_up),
            fov_down: deg(kv.take("lidar.fov_down_deg")?, b.lidar.fov_down),
        };
        let c = &b.camera;
        let camera = PinholeCamera {
            width: kv.take_or("camera.width", c.width)?,
            height: kv.take_or("camera.height", c.height)?,
            fx: kv.take_or("camera.fx", c.fx)?,
            fy: kv.take_or("camera.fy", c.fy)?,
            cx: kv.take_or("camera.cx", c.cx)?,
            cy: kv.take_or("camera.cy", c.cy)?,
            position: match kv.take_list::<f64>("camera.position")? {
                None => c.position,
                Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
                Some(_) => return Err(kv.err("camera.position", "expected three values")),
            },
            yaw: deg(kv.take("camera.yaw_deg")?, c.yaw),
        };
        let cfg = Self {
            seed: kv.take_or("seed", b.seed)?,
            lidar,
            sensor_height: kv.take_or("sensor_height", b.sensor_height)?,
            max_range: kv.take_or("max_range", b.max_range)?,
            camera,
            extent: kv.take_or("extent", b.extent)?,
            road_half_width: kv.span("road_half_width", b.road_half_width)?,
            sidewalk_width: kv.span("sidewalk_width", b.sidewalk_width)?,
            cars: kv.count("cars", b.cars)?,
            car_size: kv.box_size("car", b.car_size)?,
            trucks: kv.count("trucks", b.trucks)?,
            truck_size: kv.box_size("truck", b.truck_size)?,
            buildings: kv.count("buildings", b.buildings)?,
            building_size: kv.box_size("building", b.building_size)?,
            poles: kv.count("poles", b.poles)?,
            pole_size: kv.cyl_size("pole", b.pole_size)?,
            persons: kv.count("persons", b.persons)?,
            person_size: kv.cyl_size("person", b.person_size)?,
            trees: kv.count("trees", b.trees)?,
            tree_size: kv.cyl_size("tree", b.tree_size)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let c = &self.camera;
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("lidar.azimuths = {}", self.lidar.width),
            format!("lidar.beams = {}", self.lidar.height),
            format!("lidar.fov_up_deg = {}", degrees_text(self.lidar.fov_up)),
            format!("lidar.fov_down_deg = {}", degrees_text(self.lidar.fov_down)),
            format!("sensor_height = {}", self.sensor_height),
            format!("max_range = {}", self.max_range),
            format!("camera.width = {}", c.width),
            format!("camera.height = {}", c.height),
            format!("camera.fx = {}", c.fx),
            format!("camera.fy = {}", c.fy),
            format!("camera.cx = {}", c.cx),
            format!("camera.cy = {}", c.cy),
            format!("camera.position = {} {} {}", c.position[0], c.position[1], c.position[2]),
            format!("camera.yaw_deg = {}", degrees_text(c.yaw)),
            format!("extent = {}", self.extent),
            format!("road_half_width = {}", span_text(self.road_half_width)),
            format!("sidewalk_width = {}", span_text(self.sidewalk_width)),
        ];
        let boxes = [
            ("cars", "car", self.cars, self.car_size),
            ("trucks", "truck", self.trucks, self.truck_size),
            ("buildings", "building", self.buildings, self.building_size),
        ];
        for (n, k, count, s) in boxes {
            lines.push(format!("{n} = {} {}", count.min, count.max));
            lines.push(format!("{k}.length = {}", span_text(s.length)));
            lines.push(format!("{k}.width = {}", span_text(s.width)));
            lines.push(format!("{k}.height = {}", span_text(s.height)));
        }
        let cyls = [
            ("poles", "pole", self.poles, self.pole_size),
            ("persons", "person", self.persons, self.person_size),
            ("trees", "tree", self.trees, self.tree_size),
        ];
        for (n, k, count, s) in cyls {
            lines.push(format!("{n} = {} {}", count.min, count.max));
            lines.push(format!("{k}.radius = {}", span_text(s.radius)));
            lines.push(format!("{k}.height = {}", span_text(s.height)));
        }
        lines.join("\n") + "\n"
    }
}

/// Model and optimisation settings of a training run. Grid sizes come from
/// the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub classes: ClassList,
    pub base_width: usize,
    pub stages: usize,
    pub dilations: Vec<usize>,
    pub stem_pool: bool,
    pub dropout: f64,
    pub critic_fuse_width: usize,
    pub critic_blocks: Vec<BlockSpec>,
}

impl RunConfig {
    /// Five classes, the small models and batches of two.
    pub fn desk() -> Self {
        let classes = ClassList::new(&[1, 7, 8, 9, 12]).expect("distinct ids");
        let g = GeneratorConfig::toy(classes.len());
        let d = DiscriminatorConfig::toy(classes.len());
        Self {
            train: TrainConfig {
                adam: AdamConfig {
                    lr: 1e-4,
                    ..AdamConfig::default()
                },
                batch_size: 2,
                max_steps: 1200,
                ..TrainConfig::default()
            },
            classes,
            base_width: g.base_width,
            stages: g.stages,
            dilations: g.dilations,
            stem_pool: g.stem_pool,
            dropout: g.dropout,
            critic_fuse_width: d.fuse_width,
            critic_blocks: d.blocks,
        }
    }

    pub fn generator_config(&self, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> GeneratorConfig {
        GeneratorConfig {
            range_channels: crate::geometry::CHANNELS,
            classes: self.classes.len(),
            base_width: self.base_width,
            in_h,
            in_w,
            out_h,
            out_w,
            dilations: self.dilations.clone(),
            stages: self.stages,
            stem_pool: self.stem_pool,
            dropout: self.dropout,
            init: Init::Kaiming,
        }
    }

    pub fn critic_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            classes: self.classes.len(),
            cond_channels: self.classes.len(),
            fuse_width: self.critic_fuse_width,
            blocks: self.critic_blocks.clone(),
            init: Init::Kaiming,
        }
    }

    /// Keys missing from `text` keep the values of `base`.
    pub fn from_kv(text: &str, context: &str, base: &RunConfig) -> Result<Self> {
        let mut kv = KvFile::parse(text, context)?;
        let b = base;
        let t = &b.train;
        let classes = match kv.take_list::<u8>("classes")? {
            Some(ids) => ClassList::new(&ids)?,
            None => b.classes.clone(),
        };
        let critic_blocks = match kv.take_list::<String>("critic.blocks")? {
            None => b.critic_blocks.clone(),
            Some(items) => items
                .iter()
                .map(|s| {
                    let v: Vec<usize> = s.split(':').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| kv.err("critic.blocks", e))?;
                    match v[..] {
                        [out_c, kernel, stride, padding] => Ok(BlockSpec { out_c, kernel, stride, padding }),
                        _ => Err(kv.err("critic.blocks", "blocks are out:kernel:stride:padding")),
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let cfg = Self {
            train: TrainConfig {
                adam: AdamConfig {
                    lr: kv.take_or("lr", t.adam.lr)?,
                    beta1: kv.take_or("beta1", t.adam.beta1)?,
                    beta2: kv.take_or("beta2", t.adam.beta2)?,
                    eps: kv.take_or("adam_eps", t.adam.eps)?,
                },
                batch_size: kv.take_or("batch_size", t.batch_size)?,
                max_steps: kv.take_or("max_steps", t.max_steps)?,
                seed: kv.take_or("seed", t.seed)?,
                augment: AugmentConfig {
                    flip_prob: kv.take_or("flip_prob", t.augment.flip_prob)?,
                    drop_prob: kv.take_or("drop_prob", t.augment.drop_prob)?,
                    drop_max_fraction: kv.take_or("drop_max_fraction", t.augment.drop_max_fraction)?,
                },
                lambda: kv.take_or("lambda", t.lambda)?,
                n_critic: kv.take_or("n_critic", t.n_critic)?,
                guide: kv.take_or("guide", t.guide)?,
            },
            classes,
            base_width: kv.take_or("base_width", b.base_width)?,
            stages: kv.take_or("stages", b.stages)?,
            dilations: kv.take_list("dilations")?.unwrap_or_else(|| b.dilations.clone()),
            stem_pool: kv.take_or("stem_pool", b.stem_pool)?,
            dropout: kv.take_or("dropout", b.dropout)?,
            critic_fuse_width: kv.take_or("critic.fuse_width", b.critic_fuse_width)?,
            critic_blocks,
        };
        kv.finish()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
        [
            format!("lr = {}", t.adam.lr),
            format!("beta1 = {}", t.adam.beta1),
            format!("beta2 = {}", t.adam.beta2),
            format!("adam_eps = {}", t.adam.eps),
            format!("batch_size = {}", t.batch_size),
            format!("max_steps = {}", t.max_steps),
            format!("seed = {}", t.seed),
            format!("flip_prob = {}", t.augment.flip_prob),
            format!("drop_prob = {}", t.augment.drop_prob),
            format!("drop_max_fraction = {}", t.augment.drop_max_fraction),
            format!("lambda = {}", t.lambda),
            format!("n_critic = {}", t.n_critic),
            format!("guide = {}", t.guide),
            format!("classes = {}", join(&mut self.classes.ids().iter().map(u8::to_string))),
            format!("base_width = {}", self.base_width),
            format!("stages = {}", self.stages),
            format!("dilations = {}", join(&mut self.dilations.iter().map(usize::to_string))),
            format!("stem_pool = {}", self.stem_pool),
            format!("dropout = {}", self.dropout),
            format!("critic.fuse_width = {}", self.critic_fuse_width),
            format!(
                "critic.blocks = {}",
                join(&mut self.critic_blocks.iter().map(|b| format!("{}:{}:{}:{}", b.out_c, b.kernel, b.stride, b.padding)))
            ),
        ]
        .join("\n")
            + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::GuidingLoss;

    #[test]
    fn run_config_round_trips() {
        let mut c = RunConfig::desk();
        c.train.guide = GuidingLoss::Mse;
        c.train.adam.lr = 3.5e-4;
        let back = RunConfig::from_kv(&c.to_kv(), "test", &RunConfig::desk()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn scene_config_keeps_defaults_and_rejects_unknown_keys() {
        let base = SyntheticSceneConfig::desk();
        let c = SyntheticSceneConfig::from_kv("cars = 1 2\n# comment\n", "t", &base).unwrap();
        assert_eq!(c.cars, Count::new(1, 2));
        assert_eq!(c.lidar, base.lidar);
        assert!(SyntheticSceneConfig::from_kv("carz = 1", "t", &base).is_err());
        assert!(SyntheticSceneConfig::from_kv("cars 1", "t", &base).is_err());
        assert!(SyntheticSceneConfig::from_kv("seed = 1\nseed = 2", "t", &base).is_err());
    }

    #[test]
    fn scene_config_text_round_trips() {
        let c = SyntheticSceneConfig::default();
        let back = SyntheticSceneConfig::from_kv(&c.to_kv(), "t", &SyntheticSceneConfig::desk()).unwrap();
        assert_eq!(back.cars, c.cars);
        assert_eq!(back.camera.width, c.camera.width);
        assert!((back.lidar.fov_down - c.lidar.fov_down).abs() < 1e-15);
    }
}
