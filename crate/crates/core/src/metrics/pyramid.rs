use crate::error::{Error, Result};

use super::Plane;

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Reflects an out-of-range index without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    j.clamp(0, n - 1) as usize
}

/// Separable 5-tap binomial blur with mirrored borders, weights scaled by `gain` per axis.
fn blur(p: &Plane, gain: f64) -> Plane {
    let (w, h) = (p.width(), p.height());
    let d = p.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = KERNEL
                .iter()
                .enumerate()
                .map(|(k, &c)| c * gain * d[y * w + mirror(x as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = KERNEL
                .iter()
                .enumerate()
                .map(|(k, &c)| c * gain * tmp[mirror(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    Plane::new(w, h, out).expect("same size")
}

/// Blur then keep every other sample.
pub fn reduce(p: &Plane) -> Plane {
    let b = blur(p, 1.0);
    let (w, h) = (p.width().div_ceil(2), p.height().div_ceil(2));
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| b.get(2 * y, 2 * x))
        .collect();
    Plane::new(w, h, data).expect("same size")
}

/// Zero-insertion upsampling to `w × h` followed by the blur at gain 2 per axis.
pub fn expand(p: &Plane, w: usize, h: usize) -> Plane {
    let mut up = vec![0.0; w * h];
    for y in 0..p.height().min(h.div_ceil(2)) {
        for x in 0..p.width().min(w.div_ceil(2)) {
            up[2 * y * w + 2 * x] = p.get(y, x);
        }
    }
    blur(&Plane::new(w, h, up).expect("same size"), 2.0)
}

/// Band-pass levels from finest to coarsest plus the low-pass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    pub bands: Vec<Plane>,
    pub residual: Plane,
}

impl LaplacianPyramid {
    /// Bands followed by the residual.
    pub fn levels(&self) -> impl Iterator<Item = &Plane> {
        self.bands.iter().chain(std::iter::once(&self.residual))
    }

    pub fn reconstruct(&self) -> Plane {
        let mut img = self.residual.clone();
        for band in self.bands.iter().rev() {
            let up = expand(&img, band.width(), band.height());
            let data = up.data().iter().zip(band.data()).map(|(a, b)| a + b).collect();
            img = Plane::new(band.width(), band.height(), data).expect("same size");
        }
        img
    }
}

/// Burt–Adelson pyramid of a square power-of-two image down to `min_resolution`.
pub fn laplacian_pyramid(img: &Plane, min_resolution: usize) -> Result<LaplacianPyramid> {
    let side = img.width();
    if img.height() != side || !side.is_power_of_two() || !min_resolution.is_power_of_two() || side < min_resolution {
        return Err(Error::Precondition(format!(
            "pyramid needs a square power-of-two image of side >= {min_resolution}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut bands = Vec::new();
    let mut g = img.clone();
    while g.width() > min_resolution {
        let next = reduce(&g);
        let up = expand(&next, g.width(), g.height());
        let data = g.data().iter().zip(up.data()).map(|(a, b)| a - b).collect();
        bands.push(Plane::new(g.width(), g.height(), data)?);
        g = next;
    }
    Ok(LaplacianPyramid { bands, residual: g })
}
