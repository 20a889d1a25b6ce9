use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::labels::NUM_IDS;

/// Bytes per point: four little-endian `f32` (x, y, z, intensity).
pub const POINT_BYTES: usize = 16;

/// Points of a `.bin` scan, in file order.
pub fn decode_scan(bytes: &[u8]) -> Result<Vec<Point>> {
    if bytes.len() % POINT_BYTES != 0 {
        return Err(Error::MalformedScan { len: bytes.len() as u64 });
    }
    if bytes.is_empty() {
        return Err(Error::EmptyScan);
    }
    Ok(bytes
        .chunks_exact(POINT_BYTES)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes"));
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect())
}

pub fn encode_scan(points: &[Point]) -> Vec<u8> {
    points
        .iter()
        .flat_map(|p| [p.x, p.y, p.z, p.intensity])
        .flat_map(f32::to_le_bytes)
        .collect()
}

pub fn read_kitti_scan(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    PointCloud::new(decode_scan(&bytes)?, None)
}

pub fn write_kitti_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_scan(cloud.points())).map_err(|e| Error::file(path, e))
}

/// Raw `.label` words.
pub fn decode_label_words(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedLabels { len: bytes.len() as u64 });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// Semantic class of a label word (the low 16 bits; the rest is the instance id).
pub fn semantic_id(word: u32) -> u32 {
    word & 0xFFFF
}

/// Raw semantic ids of a `.label` file holding exactly `n_points` words.
pub fn read_kitti_labels(path: &Path, n_points: usize) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let words = decode_label_words(&bytes)?;
    if words.len() != n_points {
        return Err(Error::LabelScanMismatch {
            labels: words.len() as u64,
            points: n_points as u64,
        });
    }
    Ok(words.into_iter().map(semantic_id).collect())
}

pub fn write_kitti_labels(path: &Path, words: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Raw SemanticKITTI id written for each shared id.
pub const RAW_OF_SHARED: [u32; NUM_IDS] = [0, 10, 11, 15, 18, 20, 30, 40, 48, 50, 51, 70, 72, 80, 81];

pub fn raw_of_shared(id: u8) -> Result<u32> {
    RAW_OF_SHARED
        .get(usize::from(id))
        .copied()
        .ok_or(Error::UnmappedLabel(u32::from(id)))
}

/// Reads a scan and its labels, mapping raw ids to shared ids.
pub fn read_labelled_scan(scan: &Path, labels: &Path) -> Result<PointCloud> {
    let cloud = read_kitti_scan(scan)?;
    let raw = read_kitti_labels(labels, cloud.len())?;
    let shared = raw
        .into_iter()
        .map(|r| crate::labels::map_semantickitti_raw(r).map(u32::from))
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(cloud.points().to_vec(), Some(shared))
}

/// Writes a cloud whose labels are shared ids as a `.bin` / `.label` pair.
pub fn write_labelled_scan(scan: &Path, labels: &Path, cloud: &PointCloud) -> Result<()> {
    write_kitti_scan(scan, cloud)?;
    let shared = cloud
        .labels()
        .ok_or_else(|| Error::Precondition("cloud has no labels".into()))?;
    let raw = shared
        .iter()
        .map(|&s| u8::try_from(s).map_err(|_| Error::UnmappedLabel(s)).and_then(raw_of_shared))
        .collect::<Result<Vec<_>>>()?;
    write_kitti_labels(labels, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ids;

    #[test]
    fn raw_table_inverts_the_mapping() {
        for (shared, &raw) in RAW_OF_SHARED.iter().enumerate() {
            assert_eq!(crate::labels::map_semantickitti_raw(raw).unwrap(), shared as u8);
        }
        assert_eq!(RAW_OF_SHARED[usize::from(ids::CAR)], 10);
    }

    #[test]
    fn instance_bits_are_dropped() {
        assert_eq!(semantic_id(0x0001_0001), 1);
        assert_eq!(semantic_id(0xFFFF_0028), 40);
    }

    #[test]
    fn single_point_fixture() {
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5].iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(decode_scan(&bytes).unwrap(), vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        assert!(matches!(decode_scan(&bytes[..15]), Err(Error::MalformedScan { len: 15 })));
        assert!(matches!(decode_scan(&[]), Err(Error::EmptyScan)));
    }
}
