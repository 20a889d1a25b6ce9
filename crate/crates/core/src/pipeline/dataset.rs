use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::Exec;

use super::imageio::{read_id_map, write_id_map};
use super::kitti::{read_labelled_scan, write_labelled_scan};
use super::sample::{synth_scene, PairedSample, ViewGeometry};
use super::scene::SyntheticSceneConfig;

/// Named dataset partition. Each draws scene seeds from its own range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse {
                context: "split".into(),
                message: format!("unknown split {s:?}"),
            }),
        }
    }
}

/// Largest sample index per split and largest base seed.
pub const MAX_SPLIT_SIZE: usize = 1 << 24;
pub const MAX_BASE_SEED: u64 = 1 << 20;

/// Scene seed of sample `index` of `split`; the three ranges never meet.
pub fn scene_seed(base: u64, split: Split, index: usize) -> Result<u64> {
    if base >= MAX_BASE_SEED || index >= MAX_SPLIT_SIZE {
        return Err(Error::InvalidConfig(format!(
            "seed {base} or index {index} exceeds the split seed ranges"
        )));
    }
    Ok((split.index() << 48) | (base << 24) | index as u64)
}

/// Generates `count` samples of one split.
pub fn generate_split(template: &SyntheticSceneConfig, base_seed: u64, split: Split, count: usize, exec: Exec) -> Result<Vec<PairedSample>> {
    let seeds = (0..count).map(|i| scene_seed(base_seed, split, i)).collect::<Result<Vec<_>>>()?;
    exec.map(count, |i| {
        synth_scene(&SyntheticSceneConfig {
            seed: seeds[i],
            ..template.clone()
        })
    })
    .into_iter()
    .collect()
}

/// Samples of the named splits with the shared view geometry.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub geometry: ViewGeometry,
    pub splits: HashMap<Split, Vec<PairedSample>>,
}

impl Dataset {
    pub fn synthesize(template: &SyntheticSceneConfig, base_seed: u64, counts: &[(Split, usize)], exec: Exec) -> Result<Self> {
        let mut splits = HashMap::new();
        for &(split, n) in counts {
            splits.insert(split, generate_split(template, base_seed, split, n, exec)?);
        }
        Ok(Self {
            geometry: ViewGeometry::of_scene(template),
            splits,
        })
    }

    pub fn split(&self, split: Split) -> &[PairedSample] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    /// Fails if any sample hash occurs in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashMap<String, Split> = HashMap::new();
        for split in Split::ALL {
            for s in self.split(split) {
                if let Some(&other) = seen.get(&s.hash()) {
                    if other != split {
                        return Err(Error::Precondition(format!("a sample occurs in both {other} and {split}")));
                    }
                }
                seen.insert(s.hash(), split);
            }
        }
        Ok(())
    }
}

pub const SCENE_FILE: &str = "scene.cfg";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn stem(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("{i:06}"))
}

/// Writes one split as `<dir>/<split>/NNNNNN.{bin,label,pgm}` plus a manifest
/// of sample hashes, and the scene description as `<dir>/scene.cfg`.
pub fn write_split(dir: &Path, scene_text: &str, split: Split, samples: &[PairedSample]) -> Result<()> {
    let sub = dir.join(split.to_string());
    fs::create_dir_all(&sub).map_err(|e| Error::file(&sub, e))?;
    let scene_path = dir.join(SCENE_FILE);
    fs::write(&scene_path, scene_text).map_err(|e| Error::file(&scene_path, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let base = stem(&sub, i);
        write_labelled_scan(&base.with_extension("bin"), &base.with_extension("label"), &s.cloud)?;
        write_id_map(&base.with_extension("pgm"), &s.camera)?;
        manifest.push_str(&format!("{i:06} {}\n", s.hash()));
    }
    let m = sub.join(MANIFEST_FILE);
    fs::write(&m, manifest).map_err(|e| Error::file(&m, e))
}

/// Scene description stored with a dataset.
pub fn read_scene_config(dir: &Path) -> Result<SyntheticSceneConfig> {
    let path = dir.join(SCENE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    SyntheticSceneConfig::from_kv(&text, &path.display().to_string(), &SyntheticSceneConfig::desk())
}

/// Reads one split back, checking every sample against the manifest.
pub fn read_split(dir: &Path, split: Split, geometry: &ViewGeometry, exec: Exec) -> Result<Vec<PairedSample>> {
    let sub = dir.join(split.to_string());
    let m = sub.join(MANIFEST_FILE);
    let text = fs::read_to_string(&m).map_err(|e| Error::file(&m, e))?;
    let entries: Vec<(String, String)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            match (it.next(), it.next()) {
                (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                _ => Err(Error::Parse {
                    context: m.display().to_string(),
                    message: format!("bad manifest line {l:?}"),
                }),
            }
        })
        .collect::<Result<_>>()?;
    exec.map(entries.len(), |i| {
        let base = sub.join(&entries[i].0);
        let cloud = read_labelled_scan(&base.with_extension("bin"), &base.with_extension("label"))?;
        let camera = read_id_map(&base.with_extension("pgm"))?;
        let s = PairedSample::new(cloud, camera, geometry)?;
        if s.hash() != entries[i].1 {
            return Err(Error::Precondition(format!("sample {} does not match its manifest hash", entries[i].0)));
        }
        Ok(s)
    })
    .into_iter()
    .collect()
}
