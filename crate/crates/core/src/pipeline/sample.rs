use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{crop_to_camera_fov, project_cloud_with, PointCloud, ProjectionConfig, RangeImage, CHANNELS};
use crate::labels::{ClassList, SegmentMap, UNLABELED};
use crate::rng::Rng;
use crate::titan::{augment, AugmentConfig, Batch};
use crate::Exec;

use super::scene::{Scene, SyntheticSceneConfig};

/// Per-channel means of (x, y, z, intensity, range) used for normalisation.
pub const RANGE_MEANS: [f32; CHANNELS] = [10.88, 0.23, -1.04, 0.21, 12.12];
/// Per-channel standard deviations matching [`RANGE_MEANS`].
pub const RANGE_STDS: [f32; CHANNELS] = [11.47, 6.91, 0.86, 0.16, 12.32];

/// How a scan maps onto the camera view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewGeometry {
    pub lidar: ProjectionConfig,
    pub center_azimuth: f64,
    pub horizontal_fov: f64,
}

impl ViewGeometry {
    pub fn of_scene(cfg: &SyntheticSceneConfig) -> Self {
        Self {
            lidar: cfg.lidar,
            center_azimuth: cfg.crop_center(),
            horizontal_fov: cfg.camera.horizontal_fov(),
        }
    }

    /// Full projection and camera-facing crop of a cloud.
    pub fn project(&self, cloud: &PointCloud) -> Result<(RangeImage, RangeImage)> {
        let full = project_cloud_with(Exec::Sequential, cloud, &self.lidar)?;
        let crop = crop_to_camera_fov(&full, self.center_azimuth, self.horizontal_fov)?;
        Ok((full, crop))
    }
}

/// Segment map of a projected range image; empty pixels are Unlabeled.
pub fn lidar_segment_map(img: &RangeImage) -> Result<SegmentMap> {
    let labels = img
        .labels()
        .ok_or_else(|| Error::Precondition("range image carries no labels".into()))?;
    let ids = labels
        .iter()
        .zip(img.valid_mask())
        .map(|(&l, &v)| if v { u8::try_from(l).map_err(|_| Error::UnmappedLabel(l)) } else { Ok(UNLABELED) })
        .collect::<Result<Vec<_>>>()?;
    SegmentMap::new(img.width(), img.height(), ids)
}

/// Channel-first standardised range view; empty pixels are zero.
pub fn normalize_range(img: &RangeImage) -> Vec<f32> {
    let plane = img.width() * img.height();
    let mut out = vec![0.0; CHANNELS * plane];
    for (p, px) in img.data().chunks_exact(CHANNELS).enumerate() {
        if img.valid_mask()[p] {
            for c in 0..CHANNELS {
                out[c * plane + p] = (px[c] - RANGE_MEANS[c]) / RANGE_STDS[c];
            }
        }
    }
    out
}

/// A labelled scan with its camera-view ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    /// Labels are shared ids.
    pub cloud: PointCloud,
    pub full: RangeImage,
    /// Camera-facing crop `p′`.
    pub range: RangeImage,
    /// Segment map `p′_s` of the crop.
    pub lidar_map: SegmentMap,
    /// Camera segment map `y_s`.
    pub camera: SegmentMap,
}

impl PairedSample {
    pub fn new(cloud: PointCloud, camera: SegmentMap, geometry: &ViewGeometry) -> Result<Self> {
        let (full, range) = geometry.project(&cloud)?;
        let lidar_map = lidar_segment_map(&range)?;
        Ok(Self {
            cloud,
            full,
            range,
            lidar_map,
            camera,
        })
    }

    pub fn full_map(&self) -> Result<SegmentMap> {
        lidar_segment_map(&self.full)
    }

    /// SHA-256 over the scan, its labels and the camera map.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.cloud.points() {
            for v in [p.x, p.y, p.z, p.intensity] {
                h.update(v.to_le_bytes());
            }
        }
        for l in self.cloud.labels().unwrap_or(&[]) {
            h.update(l.to_le_bytes());
        }
        h.update((self.camera.width() as u64).to_le_bytes());
        h.update(self.camera.ids());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Ray-casts one synthetic scene into a paired sample.
pub fn synth_scene(cfg: &SyntheticSceneConfig) -> Result<PairedSample> {
    let scene = Scene::generate(cfg)?;
    let cloud = scene.scan(&cfg.lidar, cfg.max_range)?;
    let camera = scene.render(&cfg.camera, cfg.max_range)?;
    PairedSample::new(cloud, camera, &ViewGeometry::of_scene(cfg))
}

/// Stacks samples into a training batch. With `augment`, each cloud is
/// flipped and thinned before projection and the camera map follows the flip.
pub fn make_batch(
    samples: &[&PairedSample],
    classes: &ClassList,
    geometry: &ViewGeometry,
    augment_with: Option<(&AugmentConfig, &mut Rng)>,
) -> Result<Batch> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.range.height(), first.range.width());
    let mut batch = Batch {
        size: samples.len(),
        lidar_h: h,
        lidar_w: w,
        range: Vec::with_capacity(samples.len() * CHANNELS * h * w),
        cond: Vec::with_capacity(samples.len() * classes.len() * h * w),
        targets: Vec::with_capacity(samples.len()),
    };
    if augment_with.as_ref().is_some_and(|(c, _)| c.flip_prob > 0.0) && geometry.center_azimuth != 0.0 {
        return Err(Error::Precondition("flip augmentation needs a camera centred on the x axis".into()));
    }
    let mut aug = augment_with;
    for s in samples {
        let (range, map, target) = match aug.as_mut() {
            Some((cfg, rng)) => {
                let a = augment(&s.cloud, cfg, rng);
                let (_, crop) = geometry.project(&a.cloud)?;
                let map = lidar_segment_map(&crop)?;
                let target = if a.flipped { s.camera.mirror_columns() } else { s.camera.clone() };
                (crop, map, target)
            }
            None => (s.range.clone(), s.lidar_map.clone(), s.camera.clone()),
        };
        if (range.height(), range.width()) != (h, w) {
            return Err(Error::shape("samples in a batch have different crop sizes"));
        }
        batch.range.extend(normalize_range(&range));
        batch.cond.extend(classes.one_hot(&map));
        batch.targets.push(target);
    }
    Ok(batch)
}
