use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, ProjectionConfig};
use crate::labels::{ids, SegmentMap, UNLABELED};
use crate::rng::{self, Rng};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min > 0.0 && self.max >= self.min
    }
}

/// Inclusive count range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Count {
    pub min: usize,
    pub max: usize,
}

impl Count {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

/// Box footprint `length × width × height` (length along the road).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSize {
    pub length: Span,
    pub width: Span,
    pub height: Span,
}

/// Vertical cylinder `radius × height`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylinderSize {
    pub radius: Span,
    pub height: Span,
}

/// Pinhole camera looking along `yaw`; `x` right, `y` down in the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub position: [f64; 3],
    pub yaw: f64,
}

impl PinholeCamera {
    pub fn horizontal_fov(&self) -> f64 {
        (self.cx / self.fx).atan() + ((self.width as f64 - self.cx) / self.fx).atan()
    }

    fn axes(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let (s, c) = self.yaw.sin_cos();
        ([c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0])
    }

    /// Ray direction through the centre of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> [f64; 3] {
        let (f, r, d) = self.axes();
        let a = (col as f64 + 0.5 - self.cx) / self.fx;
        let b = (row as f64 + 0.5 - self.cy) / self.fy;
        std::array::from_fn(|k| f[k] + a * r[k] + b * d[k])
    }

    /// Image coordinates `(u, v)` of a world point in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let (f, r, d) = self.axes();
        let q: [f64; 3] = std::array::from_fn(|k| p[k] - self.position[k]);
        let dot = |a: [f64; 3]| a[0] * q[0] + a[1] * q[1] + a[2] * q[2];
        let depth = dot(f);
        (depth > 0.0).then(|| (self.cx + self.fx * dot(r) / depth, self.cy + self.fy * dot(d) / depth))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneConfig {
    pub seed: u64,
    /// Beams are rows, azimuth steps are columns.
    pub lidar: ProjectionConfig,
    /// Height of the LiDAR above the ground plane.
    pub sensor_height: f64,
    pub max_range: f64,
    pub camera: PinholeCamera,
    /// Half-length of the populated stretch of road.
    pub extent: f64,
    pub road_half_width: Span,
    pub sidewalk_width: Span,
    pub cars: Count,
    pub car_size: BoxSize,
    pub trucks: Count,
    pub truck_size: BoxSize,
    pub buildings: Count,
    pub building_size: BoxSize,
    pub poles: Count,
    pub pole_size: CylinderSize,
    pub persons: Count,
    pub person_size: CylinderSize,
    pub trees: Count,
    pub tree_size: CylinderSize,
}

impl Default for SyntheticSceneConfig {
    /// HDL-64-like sensor and a KITTI-sized camera, every primitive kind enabled.
    fn default() -> Self {
        Self {
            seed: 0,
            lidar: ProjectionConfig::hdl64(),
            sensor_height: 1.73,
            max_range: 80.0,
            camera: PinholeCamera {
                width: 1241,
                height: 376,
                fx: 718.856,
                fy: 718.856,
                cx: 607.1928,
                cy: 185.2157,
                position: [0.0; 3],
                yaw: 0.0,
            },
            extent: 40.0,
            road_half_width: Span::new(3.0, 5.0),
            sidewalk_width: Span::new(1.5, 3.0),
            cars: Count::new(2, 8),
            car_size: BoxSize {
                length: Span::new(3.6, 4.8),
                width: Span::new(1.6, 2.0),
                height: Span::new(1.4, 1.7),
            },
            trucks: Count::new(0, 2),
            truck_size: BoxSize {
                length: Span::new(6.0, 9.0),
                width: Span::new(2.3, 2.6),
                height: Span::new(2.8, 3.6),
            },
            buildings: Count::new(2, 6),
            building_size: BoxSize {
                length: Span::new(8.0, 20.0),
                width: Span::new(6.0, 12.0),
                height: Span::new(5.0, 15.0),
            },
            poles: Count::new(0, 6),
            pole_size: CylinderSize {
                radius: Span::new(0.1, 0.2),
                height: Span::new(4.0, 7.0),
            },
            persons: Count::new(0, 4),
            person_size: CylinderSize {
                radius: Span::new(0.25, 0.35),
                height: Span::new(1.6, 1.9),
            },
            trees: Count::new(0, 6),
            tree_size: CylinderSize {
                radius: Span::new(0.8, 2.0),
                height: Span::new(3.0, 8.0),
            },
        }
    }
}

impl SyntheticSceneConfig {
    /// 512-step LiDAR, 64×128 camera with a 90° field of view, and only
    /// cars, buildings and the ground strips (five classes).
    pub fn desk() -> Self {
        let d = Self::default();
        Self {
            lidar: ProjectionConfig {
                width: 512,
                ..ProjectionConfig::hdl64()
            },
            camera: PinholeCamera {
                width: 128,
                height: 64,
                fx: 64.0,
                fy: 64.0,
                cx: 64.0,
                cy: 32.0,
                position: [0.0; 3],
                yaw: 0.0,
            },
            cars: Count::new(3, 8),
            buildings: Count::new(3, 6),
            trucks: Count::new(0, 0),
            poles: Count::new(0, 0),
            persons: Count::new(0, 0),
            trees: Count::new(0, 0),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        self.lidar.validate()?;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.sensor_height) || !pos(self.max_range) || !pos(self.extent) {
            return bad("sensor height, max range and extent must be positive");
        }
        let spans = [self.road_half_width, self.sidewalk_width];
        let boxes = [self.car_size, self.truck_size, self.building_size];
        let cyls = [self.pole_size, self.person_size, self.tree_size];
        if !spans.iter().all(Span::valid)
            || !boxes.iter().all(|b| b.length.valid() && b.width.valid() && b.height.valid())
            || !cyls.iter().all(|c| c.radius.valid() && c.height.valid())
        {
            return bad("every size range must be positive with min <= max");
        }
        let counts = [self.cars, self.trucks, self.buildings, self.poles, self.persons, self.trees];
        if counts.iter().any(|c| c.min > c.max) {
            return bad("every count range needs min <= max");
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !pos(c.fx) || !pos(c.fy) {
            return bad("camera needs a positive size and focal length");
        }
        if !(c.cx > 0.0 && c.cx < c.width as f64 && c.yaw.is_finite()) {
            return bad("camera principal point must lie inside the image");
        }
        // a pinhole view is always narrower than 180°, hence inside a 360° scan
        Ok(())
    }

    /// Azimuth the LiDAR crop is centred on, matching the camera heading.
    pub fn crop_center(&self) -> f64 {
        let c = &self.camera;
        c.yaw + 0.5 * ((c.cx / c.fx).atan() - ((c.width as f64 - c.cx) / c.fx).atan())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Cylinder { center: [f64; 2], radius: f64, z0: f64, z1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: u8,
    pub reflectivity: f32,
}

/// Ground strips and placed primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub ground_z: f64,
    pub road_half_width: f64,
    pub sidewalk_width: f64,
    pub primitives: Vec<Primitive>,
}

/// A ray hit: distance, class and surface reflectivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub class: u8,
    pub reflectivity: f32,
}

fn reflectivity(class: u8) -> f32 {
    match class {
        ids::CAR => 0.55,
        ids::TRUCK => 0.5,
        ids::ROAD => 0.15,
        ids::SIDEWALK => 0.3,
        ids::BUILDING => 0.4,
        ids::TERRAIN => 0.25,
        ids::VEGETATION => 0.35,
        ids::POLE => 0.45,
        ids::PERSON => 0.2,
        _ => 0.3,
    }
}

fn ray_box(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
        } else {
            let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn ray_cylinder(o: [f64; 3], d: [f64; 3], c: [f64; 2], r: f64, z0: f64, z1: f64) -> Option<f64> {
    let (px, py) = (o[0] - c[0], o[1] - c[1]);
    let a = d[0] * d[0] + d[1] * d[1];
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    if a > 1e-15 {
        let b = px * d[0] + py * d[1];
        let cc = px * px + py * py - r * r;
        let disc = b * b - a * cc;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / a;
            let z = o[2] + t * d[2];
            if (z0..=z1).contains(&z) {
                take(t);
            }
        }
    }
    if d[2].abs() > 1e-15 {
        for zc in [z0, z1] {
            let t = (zc - o[2]) / d[2];
            let (x, y) = (px + t * d[0], py + t * d[1]);
            if x * x + y * y <= r * r {
                take(t);
            }
        }
    }
    best
}

impl Scene {
    /// Draws a scene from `cfg` with its own seed.
    pub fn generate(cfg: &SyntheticSceneConfig) -> Result<Scene> {
        cfg.validate()?;
        let mut rng = rng::seeded(cfg.seed);
        let ground_z = -cfg.sensor_height;
        let rw = cfg.road_half_width.sample(&mut rng);
        let sw = cfg.sidewalk_width.sample(&mut rng);
        let mut scene = Scene {
            ground_z,
            road_half_width: rw,
            sidewalk_width: sw,
            primitives: Vec::new(),
        };
        let overlaps = |s: &Scene, min: [f64; 3], max: [f64; 3]| {
            s.primitives.iter().any(|p| {
                let (a, b) = match p.shape {
                    Shape::Box { min, max } => (min, max),
                    Shape::Cylinder { center, radius, z0, z1 } => {
                        ([center[0] - radius, center[1] - radius, z0], [center[0] + radius, center[1] + radius, z1])
                    }
                };
                (0..2).all(|k| min[k] < b[k] + 0.3 && a[k] < max[k] + 0.3)
            })
        };
        let keep_clear = 4.0;
        let place_box = |scene: &mut Scene, rng: &mut Rng, class: u8, size: &BoxSize, y_of: &dyn Fn(&mut Rng, f64) -> f64| {
            for _ in 0..50 {
                let (l, w, h) = (size.length.sample(rng), size.width.sample(rng), size.height.sample(rng));
                let x = rng.random_range(-cfg.extent..=cfg.extent);
                let y = y_of(rng, w);
                let min = [x - l / 2.0, y - w / 2.0, ground_z];
                let max = [x + l / 2.0, y + w / 2.0, ground_z + h];
                let clear = min[0] > keep_clear || max[0] < -keep_clear || min[1] > keep_clear || max[1] < -keep_clear;
                if clear && !overlaps(scene, min, max) {
                    scene.primitives.push(Primitive {
                        shape: Shape::Box { min, max },
                        class,
                        reflectivity: reflectivity(class),
                    });
                    return;
                }
            }
        };
        let side = |rng: &mut Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
        let lane = move |rng: &mut Rng, _w: f64| side(rng) * rw * rng.random_range(0.3..=0.7);
        let beyond = move |rng: &mut Rng, w: f64| side(rng) * (rw + sw + rng.random_range(0.5..=3.0) + w / 2.0);
        for _ in 0..cfg.cars.sample(&mut rng) {
            place_box(&mut scene, &mut rng, ids::CAR, &cfg.car_size, &lane);
        }
        for _ in 0..cfg.trucks.sample(&mut rng) {
            place_box(&mut scene, &mut rng, ids::TRUCK, &cfg.truck_size, &lane);
        }
        for _ in 0..cfg.buildings.sample(&mut rng) {
            place_box(&mut scene, &mut rng, ids::BUILDING, &cfg.building_size, &beyond);
        }
        let place_cyl = |scene: &mut Scene, rng: &mut Rng, class: u8, size: &CylinderSize, y_of: &dyn Fn(&mut Rng, f64) -> f64| {
            for _ in 0..50 {
                let (r, h) = (size.radius.sample(rng), size.height.sample(rng));
                let x = rng.random_range(-cfg.extent..=cfg.extent);
                let y = y_of(rng, 2.0 * r);
                let min = [x - r, y - r, ground_z];
                let max = [x + r, y + r, ground_z + h];
                if (x.abs() > keep_clear || y.abs() > keep_clear) && !overlaps(scene, min, max) {
                    scene.primitives.push(Primitive {
                        shape: Shape::Cylinder { center: [x, y], radius: r, z0: ground_z, z1: ground_z + h },
                        class,
                        reflectivity: reflectivity(class),
                    });
                    return;
                }
            }
        };
        let walk = move |rng: &mut Rng, w: f64| side(rng) * (rw + (w / 2.0 + 0.1).min(sw / 2.0) + rng.random_range(0.0..=(sw - w - 0.2).max(0.0)));
        for _ in 0..cfg.poles.sample(&mut rng) {
            place_cyl(&mut scene, &mut rng, ids::POLE, &cfg.pole_size, &walk);
        }
        for _ in 0..cfg.persons.sample(&mut rng) {
            place_cyl(&mut scene, &mut rng, ids::PERSON, &cfg.person_size, &walk);
        }
        for _ in 0..cfg.trees.sample(&mut rng) {
            place_cyl(&mut scene, &mut rng, ids::VEGETATION, &cfg.tree_size, &beyond);
        }
        Ok(scene)
    }

    fn ground_class(&self, y: f64) -> u8 {
        let a = y.abs();
        if a < self.road_half_width {
            ids::ROAD
        } else if a < self.road_half_width + self.sidewalk_width {
            ids::SIDEWALK
        } else {
            ids::TERRAIN
        }
    }

    /// Nearest hit along `o + t·d` with `0 < t ≤ max_t`.
    pub fn cast(&self, o: [f64; 3], d: [f64; 3], max_t: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut offer = |t: f64, class: u8, reflectivity: f32| {
            if t <= max_t && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, class, reflectivity });
            }
        };
        if d[2] < 0.0 && o[2] > self.ground_z {
            let t = (self.ground_z - o[2]) / d[2];
            let class = self.ground_class(o[1] + t * d[1]);
            offer(t, class, reflectivity(class));
        }
        for p in &self.primitives {
            let t = match p.shape {
                Shape::Box { min, max } => ray_box(o, d, min, max),
                Shape::Cylinder { center, radius, z0, z1 } => ray_cylinder(o, d, center, radius, z0, z1),
            };
            if let Some(t) = t {
                offer(t, p.class, p.reflectivity);
            }
        }
        best
    }

    /// One return per LiDAR pixel ray that hits within range, in row-major
    /// pixel order, labelled with shared ids.
    pub fn scan(&self, lidar: &ProjectionConfig, max_range: f64) -> Result<PointCloud> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for row in 0..lidar.height {
            for col in 0..lidar.width {
                let (az, el) = lidar.pixel_ray(row, col);
                let d = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
                if let Some(h) = self.cast([0.0; 3], d, max_range) {
                    let i = (h.reflectivity * (1.0 - 0.3 * (h.t / max_range) as f32)).max(0.0);
                    points.push(Point::new((h.t * d[0]) as f32, (h.t * d[1]) as f32, (h.t * d[2]) as f32, i));
                    labels.push(u32::from(h.class));
                }
            }
        }
        if points.is_empty() {
            return Err(Error::DegenerateScene("no LiDAR ray hits the scene".into()));
        }
        PointCloud::new(points, Some(labels))
    }

    /// Camera segment map; rays that hit nothing within range are Unlabeled.
    pub fn render(&self, cam: &PinholeCamera, max_range: f64) -> Result<SegmentMap> {
        let mut ids = Vec::with_capacity(cam.width * cam.height);
        for row in 0..cam.height {
            for col in 0..cam.width {
                let d = cam.ray(row, col);
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let hit = self.cast(cam.position, d, max_range / norm);
                ids.push(hit.map_or(UNLABELED, |h| h.class));
            }
        }
        SegmentMap::new(cam.width, cam.height, ids)
    }
}
