use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::RangeImage;
use crate::labels::SegmentMap;

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(Error::from)
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    img.save(path).map_err(Error::from)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Binary PGM whose grey values are the shared ids.
pub fn encode_id_map(map: &SegmentMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.ids());
    out
}

pub fn decode_id_map(bytes: &[u8], context: &str) -> Result<SegmentMap> {
    let bad = |m: &str| Error::Parse {
        context: context.into(),
        message: m.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit binary PGM"));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (dim(fields[1])?, dim(fields[2])?);
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != w * h {
        return Err(bad(&format!("expected {} pixels, found {}", w * h, body.len())));
    }
    SegmentMap::new(w, h, body.to_vec())
}

pub fn write_id_map(path: &Path, map: &SegmentMap) -> Result<()> {
    fs::write(path, encode_id_map(map)).map_err(|e| Error::file(path, e))
}

pub fn read_id_map(path: &Path) -> Result<SegmentMap> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_id_map(&bytes, &path.display().to_string())
}

/// Range channel as grey levels, near bright, invalid black.
pub fn range_to_gray(img: &RangeImage, max_range: f32) -> GrayImage {
    GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let (row, col) = (y as usize, x as usize);
        if !img.is_valid(row, col) {
            return Luma([0]);
        }
        let r = img.pixel(row, col)[4].clamp(0.0, max_range);
        Luma([(255.0 - 254.0 * r / max_range).round() as u8])
    })
}
