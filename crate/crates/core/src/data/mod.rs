//! Synthetic scenes, dataset splits and size statistics.

mod bins;
mod scene;
mod split;

pub use bins::{dataset_stats, size_bin, DatasetStats, SizeBin};
pub use scene::{generate_dataset, generate_scene, render_scene, ObjectMask, Scene, SceneSpec, Sample};
pub use split::{split_dataset, DEFAULT_RATIOS};
