//! Data ingestion, synthetic paired scenes, training runs and inference.

pub mod config;
pub mod dataset;
pub mod imageio;
pub mod infer;
pub mod kitti;
pub mod sample;
pub mod scene;
pub mod train;

pub use config::{KvFile, RunConfig};
pub use dataset::{generate_split, read_scene_config, read_split, scene_seed, write_split, Dataset, Split};
pub use infer::{evaluate, evaluate_miou, render_panorama, translate, EvalOptions, GeneratorTranslator, Translator};
pub use kitti::{read_kitti_labels, read_kitti_scan, write_kitti_labels, write_kitti_scan};
pub use sample::{make_batch, normalize_range, synth_scene, PairedSample, ViewGeometry};
pub use scene::{PinholeCamera, Scene, SyntheticSceneConfig};
pub use train::{build_trainer, majority_baseline, train, validate, LogRow, LOG_HEADER};
