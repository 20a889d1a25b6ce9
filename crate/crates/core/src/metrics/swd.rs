use image::RgbImage;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

use super::{laplacian_pyramid, Plane};

/// Flat set of equally sized descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PatchSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(format!("{} values do not split into {dim}-vectors", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn subset(&self, idx: impl Iterator<Item = usize>) -> PatchSet {
        let data = idx.flat_map(|i| self.get(i).iter().copied()).collect();
        PatchSet { dim: self.dim, data }
    }

    /// Standardises each of `channels` contiguous blocks of every descriptor
    /// to zero mean and unit deviation over the whole set.
    pub fn normalize(&mut self, channels: usize) -> Result<()> {
        if channels == 0 || self.dim % channels != 0 {
            return Err(Error::shape(format!("{} dims do not split into {channels} channels", self.dim)));
        }
        let per = self.dim / channels;
        for c in 0..channels {
            let values = || (0..self.len()).flat_map(|i| self.get(i)[c * per..(c + 1) * per].iter().copied());
            let n = (self.len() * per) as f64;
            let mean = values().sum::<f64>() / n;
            let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                for v in &mut self.data[i * self.dim + c * per..i * self.dim + (c + 1) * per] {
                    *v = (*v - mean) / std;
                }
            }
        }
        Ok(())
    }
}

/// Exact 1-D Wasserstein-1 distance between the projections of two equally sized sets.
pub fn sliced_w1(a: &PatchSet, b: &PatchSet, direction: &[f64]) -> Result<f64> {
    if a.dim != b.dim || direction.len() != a.dim {
        return Err(Error::shape("patch and direction dimensions differ"));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Precondition("sliced W1 needs two non-empty sets of equal size".into()));
    }
    let project = |s: &PatchSet| {
        let mut p: Vec<f64> = (0..s.len())
            .map(|i| s.get(i).iter().zip(direction).map(|(x, d)| x * d).sum())
            .collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let (pa, pb) = (project(a), project(b));
    Ok(pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / pa.len() as f64)
}

/// Per-projection distances over `n` random unit directions. The larger set
/// is randomly subsampled to the size of the smaller one first.
pub fn swd_projections<R: Rng>(a: &PatchSet, b: &PatchSet, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("SWD of an empty patch set".into()));
    }
    if a.dim != b.dim {
        return Err(Error::shape(format!("patch dimensions {} and {} differ", a.dim, b.dim)));
    }
    let m = a.len().min(b.len());
    let mut equalize = |s: &PatchSet| {
        if s.len() > m {
            let mut idx = sample(rng, s.len(), m).into_vec();
            idx.sort_unstable();
            s.subset(idx.into_iter())
        } else {
            s.clone()
        }
    };
    let (a, b) = (equalize(a), equalize(b));
    (0..n)
        .map(|_| {
            let mut d: Vec<f64> = (0..a.dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= norm);
            sliced_w1(&a, &b, &d)
        })
        .collect()
}

pub fn swd<R: Rng>(a: &PatchSet, b: &PatchSet, n_projections: usize, rng: &mut R) -> Result<f64> {
    let v = swd_projections(a, b, n_projections, rng)?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

/// `count` random `size × size` patches across all channels, channel-major.
pub fn extract_patches<R: Rng>(channels: &[Plane], size: usize, count: usize, rng: &mut R) -> Result<PatchSet> {
    let first = channels.first().ok_or_else(|| Error::Precondition("no channels".into()))?;
    let (w, h) = (first.width(), first.height());
    if w < size || h < size || channels.iter().any(|c| (c.width(), c.height()) != (w, h)) {
        return Err(Error::shape(format!("cannot take {size}x{size} patches from {w}x{h} channels")));
    }
    let mut data = Vec::with_capacity(count * size * size * channels.len());
    for _ in 0..count {
        let y0 = rng.random_range(0..=h - size);
        let x0 = rng.random_range(0..=w - size);
        for c in channels {
            for y in y0..y0 + size {
                for x in x0..x0 + size {
                    data.push(c.get(y, x));
                }
            }
        }
    }
    PatchSet::new(size * size * channels.len(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwdConfig {
    pub resolution: usize,
    pub min_resolution: usize,
    pub patch: usize,
    pub patches_per_image: usize,
    pub max_patches: usize,
    pub projections: usize,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self {
            resolution: 1024,
            min_resolution: 16,
            patch: 7,
            patches_per_image: 128,
            max_patches: 1 << 14,
            projections: 512,
        }
    }
}

fn pyramid_patches(images: &[RgbImage], cfg: &SwdConfig, seed: u64, exec: Exec) -> Result<Vec<(usize, PatchSet)>> {
    let per_image: Vec<Result<Vec<(usize, PatchSet)>>> = exec.map(images.len(), |i| {
        let mut r = rng::stream(seed, i as u64);
        let pyramids = Plane::channels(&images[i])
            .iter()
            .map(|p| laplacian_pyramid(&p.resize(cfg.resolution, cfg.resolution)?, cfg.min_resolution))
            .collect::<Result<Vec<_>>>()?;
        let levels = pyramids[0].bands.len() + 1;
        (0..levels)
            .map(|l| {
                let planes: Vec<Plane> = pyramids.iter().map(|p| p.levels().nth(l).expect("level").clone()).collect();
                Ok((planes[0].width(), extract_patches(&planes, cfg.patch, cfg.patches_per_image, &mut r)?))
            })
            .collect()
    });
    let per_image = per_image.into_iter().collect::<Result<Vec<_>>>()?;
    let levels = per_image.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        let res = per_image[0][l].0;
        let dim = per_image[0][l].1.dim;
        let data: Vec<f64> = per_image.iter().flat_map(|lv| lv[l].1.data.iter().copied()).take(cfg.max_patches * dim).collect();
        out.push((res, PatchSet::new(dim, data)?));
    }
    Ok(out)
}

/// Per-level SWD between two image sets on Laplacian pyramids of the images
/// resized to `resolution²`, finest level first. Patch positions depend only on
/// the seed and the image index, so identical sets score exactly zero.
pub fn swd_pyramid(a: &[RgbImage], b: &[RgbImage], cfg: &SwdConfig, seed: u64, exec: Exec) -> Result<Vec<(usize, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("SWD of an empty image set".into()));
    }
    let pa = pyramid_patches(a, cfg, seed, exec)?;
    let pb = pyramid_patches(b, cfg, seed, exec)?;
    let base = a.len().max(b.len()) as u64;
    let levels = exec.map(pa.len(), |l| {
        let (mut sa, mut sb) = (pa[l].1.clone(), pb[l].1.clone());
        sa.normalize(3)?;
        sb.normalize(3)?;
        let mut r = rng::stream(seed, base + l as u64);
        Ok((pa[l].0, swd(&sa, &sb, cfg.projections, &mut r)?))
    });
    levels.into_iter().collect()
}
