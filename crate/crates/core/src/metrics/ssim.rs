use crate::error::{Error, Result};

use super::Plane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Sums over every valid `k × k` window, row-major over window origins.
fn box_sums(w: usize, h: usize, k: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut cols = vec![0.0; oh * w];
    for y in 0..oh {
        for x in 0..w {
            cols[y * w + x] = (y..y + k).map(|r| f(r * w + x)).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = cols[y * w + x..y * w + x + k].iter().sum();
        }
    }
    out
}

/// Mean SSIM over all valid windows with a uniform `window × window` kernel.
/// Values are expected in [0, 1].
pub fn ssim(a: &Plane, b: &Plane, window: usize) -> Result<f64> {
    let (w, h) = (a.width(), a.height());
    if (w, h) != (b.width(), b.height()) {
        return Err(Error::shape(format!(
            "images {w}x{h} and {}x{} differ",
            b.width(),
            b.height()
        )));
    }
    if window == 0 || w < window || h < window {
        return Err(Error::Precondition(format!(
            "image {w}x{h} is smaller than the {window}x{window} window"
        )));
    }
    let (da, db) = (a.data(), b.data());
    let sa = box_sums(w, h, window, |i| da[i]);
    let sb = box_sums(w, h, window, |i| db[i]);
    let saa = box_sums(w, h, window, |i| da[i] * da[i]);
    let sbb = box_sums(w, h, window, |i| db[i] * db[i]);
    let sab = box_sums(w, h, window, |i| da[i] * db[i]);
    let n = (window * window) as f64;
    let mut total = 0.0;
    for i in 0..sa.len() {
        let (ma, mb) = (sa[i] / n, sb[i] / n);
        let va = saa[i] / n - ma * ma;
        let vb = sbb[i] / n - mb * mb;
        let cov = sab[i] / n - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / sa.len() as f64)
}
