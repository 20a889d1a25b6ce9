//! The 15-id label set shared by the LiDAR and camera taxonomies.

use std::collections::HashMap;
use std::sync::OnceLock;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const NUM_IDS: usize = 15;
pub const UNLABELED: u8 = 0;

pub const CLASS_NAMES: [&str; NUM_IDS] = [
    "Unlabeled",
    "Car",
    "Bicycle",
    "Motorcycle",
    "Truck",
    "Other-Vehicle",
    "Person",
    "Road",
    "Sidewalk",
    "Building",
    "Fence",
    "Vegetation",
    "Terrain",
    "Pole",
    "Traffic-Sign",
];

/// Cityscapes colours of the shared ids.
pub const PALETTE: [[u8; 3]; NUM_IDS] = [
    [0, 0, 0],
    [0, 0, 142],
    [119, 11, 32],
    [0, 0, 230],
    [0, 0, 70],
    [0, 60, 100],
    [220, 20, 60],
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [190, 153, 153],
    [107, 142, 35],
    [152, 251, 152],
    [153, 153, 153],
    [220, 220, 0],
];

pub mod ids {
    pub const CAR: u8 = 1;
    pub const BICYCLE: u8 = 2;
    pub const MOTORCYCLE: u8 = 3;
    pub const TRUCK: u8 = 4;
    pub const OTHER_VEHICLE: u8 = 5;
    pub const PERSON: u8 = 6;
    pub const ROAD: u8 = 7;
    pub const SIDEWALK: u8 = 8;
    pub const BUILDING: u8 = 9;
    pub const FENCE: u8 = 10;
    pub const VEGETATION: u8 = 11;
    pub const TERRAIN: u8 = 12;
    pub const POLE: u8 = 13;
    pub const TRAFFIC_SIGN: u8 = 14;
}

/// One row of a mapping table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingRow {
    pub source_id: u32,
    pub name: String,
    pub target: u32,
}

const SEMANTICKITTI: &str = include_str!("../data/semantickitti.txt");
const SEMANTICKITTI_RAW: &str = include_str!("../data/semantickitti_raw.txt");
const CITYSCAPES: &str = include_str!("../data/cityscapes.txt");

/// Parses `source-id name target` lines; `#` starts a comment.
pub fn parse_mapping(text: &str, context: &str) -> Result<Vec<MappingRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            context: format!("{context}:{}", n + 1),
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, name, target] = fields[..] else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        let num = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("{s}: {e}")));
        rows.push(MappingRow {
            source_id: num(id)?,
            name: name.to_string(),
            target: num(target)?,
        });
    }
    Ok(rows)
}

struct Table {
    rows: Vec<MappingRow>,
    index: HashMap<u32, u32>,
}

fn table(cell: &'static OnceLock<Table>, text: &str, context: &str) -> &'static Table {
    cell.get_or_init(|| {
        let rows = parse_mapping(text, context).expect("bundled mapping tables are well formed");
        let index = rows.iter().map(|r| (r.source_id, r.target)).collect();
        Table { rows, index }
    })
}

fn semantickitti_table() -> &'static Table {
    static CELL: OnceLock<Table> = OnceLock::new();
    table(&CELL, SEMANTICKITTI, "semantickitti.txt")
}

fn semantickitti_raw_table() -> &'static Table {
    static CELL: OnceLock<Table> = OnceLock::new();
    table(&CELL, SEMANTICKITTI_RAW, "semantickitti_raw.txt")
}

fn cityscapes_table() -> &'static Table {
    static CELL: OnceLock<Table> = OnceLock::new();
    table(&CELL, CITYSCAPES, "cityscapes.txt")
}

pub fn semantickitti_rows() -> &'static [MappingRow] {
    &semantickitti_table().rows
}

pub fn cityscapes_rows() -> &'static [MappingRow] {
    &cityscapes_table().rows
}

fn lookup(t: &Table, id: u32) -> Result<u8> {
    t.index
        .get(&id)
        .map(|&v| v as u8)
        .ok_or(Error::UnmappedLabel(id))
}

/// Shared id of a SemanticKITTI learning class (0..=19).
pub fn map_semantickitti(learning_id: u32) -> Result<u8> {
    lookup(semantickitti_table(), learning_id)
}

/// Shared id of a raw SemanticKITTI `.label` class, via the learning classes.
pub fn map_semantickitti_raw(raw_id: u32) -> Result<u8> {
    let learning = semantickitti_raw_table()
        .index
        .get(&raw_id)
        .copied()
        .ok_or(Error::UnmappedLabel(raw_id))?;
    map_semantickitti(learning)
}

/// Shared id of a Cityscapes column of the mapping table (0..=14).
pub fn map_cityscapes(id: u32) -> Result<u8> {
    lookup(cityscapes_table(), id)
}

/// A grid of shared ids, row major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentMap {
    width: usize,
    height: usize,
    ids: Vec<u8>,
}

impl SegmentMap {
    pub fn new(width: usize, height: usize, ids: Vec<u8>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::shape(format!("{} ids for a {width}x{height} map", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&v| usize::from(v) >= NUM_IDS) {
            return Err(Error::UnmappedLabel(u32::from(bad)));
        }
        Ok(Self { width, height, ids })
    }

    pub fn filled(width: usize, height: usize, id: u8) -> Result<Self> {
        Self::new(width, height, vec![id; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.ids[row * self.width + col]
    }

    /// Pixel count of every id.
    pub fn histogram(&self) -> [usize; NUM_IDS] {
        let mut h = [0; NUM_IDS];
        for &v in &self.ids {
            h[usize::from(v)] += 1;
        }
        h
    }

    /// Map with columns reversed.
    pub fn mirror_columns(&self) -> SegmentMap {
        let ids = (0..self.height)
            .flat_map(|r| self.ids[r * self.width..(r + 1) * self.width].iter().rev().copied())
            .collect();
        SegmentMap {
            width: self.width,
            height: self.height,
            ids,
        }
    }

    /// Columns `start..start+len`.
    pub fn columns(&self, start: usize, len: usize) -> Result<SegmentMap> {
        if start + len > self.width {
            return Err(Error::shape(format!("columns {start}..{} of {}", start + len, self.width)));
        }
        let ids = (0..self.height)
            .flat_map(|r| self.ids[r * self.width + start..r * self.width + start + len].iter().copied())
            .collect();
        SegmentMap::new(len, self.height, ids)
    }
}

/// `C × h × w` indicator planes. Without `include_unlabeled` the planes cover
/// ids 1..=14 and unlabelled pixels are zero everywhere.
pub fn one_hot(map: &SegmentMap, include_unlabeled: bool) -> Vec<f32> {
    let classes = if include_unlabeled {
        ClassList::all_with_unlabeled()
    } else {
        ClassList::all()
    };
    classes.one_hot(map)
}

pub fn colorize(map: &SegmentMap) -> RgbImage {
    RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        Rgb(PALETTE[usize::from(map.get(y as usize, x as usize))])
    })
}

/// Inverse of [`colorize`]; colours outside the palette are rejected.
pub fn decolorize(img: &RgbImage) -> Result<SegmentMap> {
    let lookup: HashMap<[u8; 3], u8> = PALETTE.iter().enumerate().map(|(i, &c)| (c, i as u8)).collect();
    let ids = img
        .pixels()
        .map(|p| {
            lookup.get(&p.0).copied().ok_or_else(|| {
                Error::Precondition(format!("colour {:?} is not in the palette", p.0))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentMap::new(img.width() as usize, img.height() as usize, ids)
}

/// Ordered shared ids that a model predicts, one per output channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassList {
    ids: Vec<u8>,
    channel: [Option<usize>; NUM_IDS],
}

impl ClassList {
    pub fn new(ids: &[u8]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidConfig("class list is empty".into()));
        }
        let mut channel = [None; NUM_IDS];
        for (c, &id) in ids.iter().enumerate() {
            let slot = channel
                .get_mut(usize::from(id))
                .ok_or(Error::UnmappedLabel(u32::from(id)))?;
            if slot.is_some() {
                return Err(Error::InvalidConfig(format!("class {id} listed twice")));
            }
            *slot = Some(c);
        }
        Ok(Self {
            ids: ids.to_vec(),
            channel,
        })
    }

    /// The 14 named classes.
    pub fn all() -> Self {
        Self::new(&(1..NUM_IDS as u8).collect::<Vec<_>>()).expect("ids are distinct")
    }

    pub fn all_with_unlabeled() -> Self {
        Self::new(&(0..NUM_IDS as u8).collect::<Vec<_>>()).expect("ids are distinct")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn id_of(&self, channel: usize) -> u8 {
        self.ids[channel]
    }

    pub fn channel_of(&self, id: u8) -> Option<usize> {
        self.channel.get(usize::from(id)).copied().flatten()
    }

    /// Indicator planes over this list; ids outside it give zero vectors.
    pub fn one_hot(&self, map: &SegmentMap) -> Vec<f32> {
        let plane = map.width * map.height;
        let mut out = vec![0.0; self.len() * plane];
        for (p, &id) in map.ids.iter().enumerate() {
            if let Some(c) = self.channel_of(id) {
                out[c * plane + p] = 1.0;
            }
        }
        out
    }

    /// Per-pixel channel of the largest score, lowest channel on ties.
    pub fn argmax(&self, scores: &[f32], width: usize, height: usize) -> Result<SegmentMap> {
        let plane = width * height;
        if scores.len() != plane * self.len() {
            return Err(Error::shape(format!(
                "{} scores for {} classes on {width}x{height}",
                scores.len(),
                self.len()
            )));
        }
        let ids = (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.len() {
                    if scores[c * plane + p] > scores[best * plane + p] {
                        best = c;
                    }
                }
                self.ids[best]
            })
            .collect();
        SegmentMap::new(width, height, ids)
    }
}
