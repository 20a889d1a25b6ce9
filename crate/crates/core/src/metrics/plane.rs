use image::RgbImage;

use crate::error::{Error, Result};

/// Single-channel `f64` image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Rec. 601 luma scaled to [0, 1].
    pub fn luma(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0)
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// One plane per colour channel, scaled to [0, 1].
    pub fn channels(img: &RgbImage) -> [Plane; 3] {
        let (w, h) = (img.width() as usize, img.height() as usize);
        std::array::from_fn(|c| Plane {
            width: w,
            height: h,
            data: img.pixels().map(|p| f64::from(p[c]) / 255.0).collect(),
        })
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Result<Plane> {
        if width == 0 || height == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::shape("cannot resize an empty plane"));
        }
        let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
            let scale = inp as f64 / out as f64;
            (0..out)
                .map(|o| {
                    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(inp - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let (tx, ty) = (taps(width, self.width), taps(height, self.height));
        let mut data = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Ok(Plane { width, height, data })
    }
}
