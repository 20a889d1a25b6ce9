//! Spherical range-view projection of LiDAR scans and camera-FOV cropping.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Value stored in every channel of a pixel that no point landed on.
pub const FILL: f32 = -1.0;

/// Channels of a range-image pixel, in storage order.
pub const CHANNELS: usize = 5;

/// One LiDAR return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn range(&self) -> f64 {
        let (x, y, z) = (f64::from(self.x), f64::from(self.y), f64::from(self.z));
        (x * x + y * y + z * z).sqrt()
    }
}

/// A scan with optional per-point class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    /// Rejects non-finite coordinates and points at the origin.
    pub fn new(points: Vec<Point>, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::InvalidCloud(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        for (k, p) in points.iter().enumerate() {
            if ![p.x, p.y, p.z, p.intensity].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidCloud(format!("point {k} is not finite")));
            }
            if p.range() == 0.0 {
                return Err(Error::DegeneratePoint);
            }
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `f` to every label, keeping the points.
    pub fn map_labels(&self, f: impl Fn(u32) -> Result<u32>) -> Result<PointCloud> {
        let labels = match &self.labels {
            Some(l) => Some(l.iter().map(|&v| f(v)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(PointCloud {
            points: self.points.clone(),
            labels,
        })
    }

    /// Mirror across the x-z plane (y negated).
    pub fn flip_y(&self) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point { y: -p.y, ..*p })
                .collect(),
            labels: self.labels.clone(),
        }
    }

    /// Keeps the points whose index satisfies `keep`.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Sensor model of a range image. Both field-of-view angles are magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    pub fov_up: f64,
    pub fov_down: f64,
}

impl ProjectionConfig {
    pub fn new(width: usize, height: usize, fov_up: f64, fov_down: f64) -> Result<Self> {
        let cfg = Self {
            width,
            height,
            fov_up,
            fov_down,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 64 beams, 2048 azimuth steps, +3° / -25°.
    pub fn hdl64() -> Self {
        Self {
            width: 2048,
            height: 64,
            fov_up: 3f64.to_radians(),
            fov_down: 25f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("range image must be at least 1x1".into()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.fov_up) || !ok(self.fov_down) || self.fov() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "field of view up {} / down {} must be non-negative with a positive sum",
                self.fov_up, self.fov_down
            )));
        }
        Ok(())
    }

    /// Total vertical field of view.
    pub fn fov(&self) -> f64 {
        self.fov_up + self.fov_down
    }

    /// Azimuth and elevation of the ray through the centre of pixel `(row, col)`.
    pub fn pixel_ray(&self, row: usize, col: usize) -> (f64, f64) {
        let az = PI * (1.0 - 2.0 * (col as f64 + 0.5) / self.width as f64);
        let el = (1.0 - (row as f64 + 0.5) / self.height as f64) * self.fov() - self.fov_down;
        (az, el)
    }

    /// Column whose span contains azimuth `az`, before flooring.
    pub fn azimuth_to_u(&self, az: f64) -> f64 {
        0.5 * (1.0 - az / PI) * self.width as f64
    }

    fn discretise(&self, u: f64, v: f64) -> (usize, usize) {
        let clamp = |x: f64, n: usize| (x.floor().max(0.0) as usize).min(n - 1);
        (clamp(u, self.width), clamp(v, self.height))
    }
}

/// Real-valued image coordinates `(u, v)` of a point, before flooring.
pub fn project_point(x: f64, y: f64, z: f64, cfg: &ProjectionConfig) -> Result<(f64, f64)> {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::DegeneratePoint);
    }
    let u = cfg.azimuth_to_u(y.atan2(x));
    let v = (1.0 - ((z / r).asin() + cfg.fov_down) / cfg.fov()) * cfg.height as f64;
    Ok((u, v))
}

/// Pixel `(col, row)` a point lands on after floor and clamp.
pub fn pixel_of(p: &Point, cfg: &ProjectionConfig) -> Result<(usize, usize)> {
    let (u, v) = project_point(f64::from(p.x), f64::from(p.y), f64::from(p.z), cfg)?;
    Ok(cfg.discretise(u, v))
}

/// Whether a point's unclamped coordinates fall inside the image.
pub fn in_bounds(p: &Point, cfg: &ProjectionConfig) -> bool {
    project_point(f64::from(p.x), f64::from(p.y), f64::from(p.z), cfg).is_ok_and(|(u, v)| {
        (0.0..cfg.width as f64).contains(&u) && (0.0..cfg.height as f64).contains(&v)
    })
}

/// An `h × w × 5` grid of `(x, y, z, i, r)` with a validity mask.
///
/// A crop keeps the sensor configuration of the full scan; `col_offset`
/// records which full-scan column its first column came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
    labels: Option<Vec<u32>>,
    config: ProjectionConfig,
    col_offset: usize,
}

impl RangeImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn col_offset(&self) -> usize {
        self.col_offset
    }

    /// Full-scan column of local column `col`.
    pub fn source_column(&self, col: usize) -> usize {
        (self.col_offset + col) % self.config.width
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// The five channels at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> [f32; CHANNELS] {
        let at = (row * self.width + col) * CHANNELS;
        let mut px = [0.0; CHANNELS];
        px.copy_from_slice(&self.data[at..at + CHANNELS]);
        px
    }

    /// Channel-last storage, row major.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Per-pixel class of the winning point; `None` for unlabelled scans.
    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Copy in `5 × h × w` channel-first layout.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; CHANNELS * plane];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = v;
            }
        }
        out
    }

    /// Range image with columns reversed (`k -> w-1-k`).
    pub fn mirror_columns(&self) -> RangeImage {
        let w = self.width;
        let mut out = self.clone();
        for row in 0..self.height {
            for col in 0..w {
                let (src, dst) = (row * w + col, row * w + (w - 1 - col));
                out.data[dst * CHANNELS..(dst + 1) * CHANNELS]
                    .copy_from_slice(&self.data[src * CHANNELS..(src + 1) * CHANNELS]);
                out.valid[dst] = self.valid[src];
                if let (Some(o), Some(s)) = (out.labels.as_mut(), self.labels.as_ref()) {
                    o[dst] = s[src];
                }
            }
        }
        out
    }
}

/// Projects a cloud with the default executor.
pub fn project_cloud(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<RangeImage> {
    project_cloud_with(Exec::default(), cloud, cfg)
}

/// Projects every point; on collisions the nearest point wins (earliest on ties).
pub fn project_cloud_with(exec: Exec, cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<RangeImage> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pts = cloud.points();
    let targets = exec.map(pts.len(), |k| pixel_of(&pts[k], cfg).map(|pix| (pix, pts[k].range())));
    let (w, h) = (cfg.width, cfg.height);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; w * h];
    for (k, t) in targets.into_iter().enumerate() {
        let ((col, row), r) = t?;
        let cell = &mut best[row * w + col];
        if cell.map_or(true, |(br, _)| r < br) {
            *cell = Some((r, k));
        }
    }
    let mut data = vec![FILL; w * h * CHANNELS];
    let mut valid = vec![false; w * h];
    let mut labels = cloud.labels().map(|_| vec![0u32; w * h]);
    for (cell, slot) in best.iter().enumerate() {
        let Some((r, k)) = *slot else { continue };
        let p = &pts[k];
        data[cell * CHANNELS..(cell + 1) * CHANNELS]
            .copy_from_slice(&[p.x, p.y, p.z, p.intensity, r as f32]);
        valid[cell] = true;
        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels()) {
            out[cell] = src[k];
        }
    }
    Ok(RangeImage {
        width: w,
        height: h,
        data,
        valid,
        labels,
        config: *cfg,
        col_offset: 0,
    })
}

/// Width in columns of a horizontal field of view on a `full_width` scan.
pub fn crop_width(full_width: usize, horizontal_fov: f64) -> usize {
    let w = (full_width as f64 * horizontal_fov / (2.0 * PI)).round_ties_even() as usize;
    w.clamp(1, full_width)
}

/// First full-scan column of the crop centred on `center_azimuth`.
pub fn crop_start(full_width: usize, center_azimuth: f64, width: usize) -> usize {
    let c = 0.5 * (1.0 - center_azimuth / PI) * full_width as f64;
    let start = (c - width as f64 / 2.0).round() as i64;
    start.rem_euclid(full_width as i64) as usize
}

/// The column slab covering `center ± fov/2`, wrapping across the ±π seam.
pub fn crop_to_camera_fov(img: &RangeImage, center_azimuth: f64, horizontal_fov: f64) -> Result<RangeImage> {
    if !(horizontal_fov > 0.0 && horizontal_fov <= 2.0 * PI) || !center_azimuth.is_finite() {
        return Err(Error::Precondition(format!(
            "horizontal fov {horizontal_fov} must lie in (0, 2π]"
        )));
    }
    let full = img.config.width;
    if img.width != full {
        return Err(Error::Precondition("only full scans can be cropped".into()));
    }
    let width = crop_width(full, horizontal_fov);
    let start = crop_start(full, center_azimuth, width);
    let h = img.height;
    let mut data = Vec::with_capacity(h * width * CHANNELS);
    let mut valid = Vec::with_capacity(h * width);
    let mut labels = img.labels.as_ref().map(|_| Vec::with_capacity(h * width));
    for row in 0..h {
        for k in 0..width {
            let src = row * full + (start + k) % full;
            data.extend_from_slice(&img.data[src * CHANNELS..(src + 1) * CHANNELS]);
            valid.push(img.valid[src]);
            if let (Some(out), Some(l)) = (labels.as_mut(), img.labels.as_ref()) {
                out.push(l[src]);
            }
        }
    }
    Ok(RangeImage {
        width,
        height: h,
        data,
        valid,
        labels,
        config: img.config,
        col_offset: start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym() -> ProjectionConfig {
        ProjectionConfig::new(2048, 64, 0.2, 0.2).unwrap()
    }

    #[test]
    fn forward_axis_hits_centre() {
        let (u, v) = project_point(10.0, 0.0, 0.0, &sym()).unwrap();
        assert_eq!((u, v), (1024.0, 32.0));
    }

    #[test]
    fn origin_is_degenerate() {
        assert!(matches!(project_point(0.0, 0.0, 0.0, &sym()), Err(Error::DegeneratePoint)));
        assert!(PointCloud::new(vec![Point::new(0.0, 0.0, 0.0, 0.1)], None).is_err());
    }

    #[test]
    fn single_point_image() {
        let cloud = PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 0.5)], None).unwrap();
        let img = project_cloud(&cloud, &sym()).unwrap();
        assert_eq!(img.valid_count(), 1);
        assert_eq!(img.pixel(32, 1024), [10.0, 0.0, 0.0, 0.5, 10.0]);
        assert_eq!(img.pixel(0, 0), [FILL; 5]);
    }

    #[test]
    fn three_four_five() {
        let cloud = PointCloud::new(vec![Point::new(3.0, 4.0, 0.0, 0.0)], None).unwrap();
        let img = project_cloud(&cloud, &sym()).unwrap();
        let (col, row) = pixel_of(&cloud.points()[0], &sym()).unwrap();
        assert_eq!(img.pixel(row, col)[4], 5.0);
    }

    #[test]
    fn nearest_point_wins() {
        let pts = vec![Point::new(9.0, 0.0, 0.0, 0.9), Point::new(5.0, 0.0, 0.0, 0.1)];
        let img = project_cloud(&PointCloud::new(pts, Some(vec![3, 4])).unwrap(), &sym()).unwrap();
        assert_eq!(img.pixel(32, 1024)[4], 5.0);
        assert_eq!(img.labels().unwrap()[32 * 2048 + 1024], 4);
    }

    #[test]
    fn empty_cloud_rejected() {
        let cloud = PointCloud::new(vec![], None).unwrap();
        assert!(matches!(project_cloud(&cloud, &sym()), Err(Error::EmptyCloud)));
    }

    #[test]
    fn crop_slabs() {
        let img = project_cloud(&PointCloud::new(vec![Point::new(1.0, 0.0, 0.0, 0.0)], None).unwrap(), &sym()).unwrap();
        let full = crop_to_camera_fov(&img, 0.0, 2.0 * PI).unwrap();
        assert_eq!(full, RangeImage { col_offset: 0, ..img.clone() });
        let front = crop_to_camera_fov(&img, 0.0, PI / 2.0).unwrap();
        assert_eq!((front.width(), front.col_offset()), (512, 768));
        let back = crop_to_camera_fov(&img, PI, PI / 2.0).unwrap();
        let cols: Vec<usize> = (0..512).map(|k| back.source_column(k)).collect();
        let expected: Vec<usize> = (1792..2048).chain(0..256).collect();
        assert_eq!(cols, expected);
        assert!(crop_to_camera_fov(&img, 0.0, 0.0).is_err());
    }

    #[test]
    fn pixel_rays_round_trip() {
        let cfg = ProjectionConfig::hdl64();
        for (row, col) in [(0, 0), (63, 2047), (17, 900), (40, 1024)] {
            let (az, el) = cfg.pixel_ray(row, col);
            let p = Point::new((el.cos() * az.cos() * 7.0) as f32, (el.cos() * az.sin() * 7.0) as f32, (el.sin() * 7.0) as f32, 0.0);
            assert_eq!(pixel_of(&p, &cfg).unwrap(), (col, row));
        }
    }
}
