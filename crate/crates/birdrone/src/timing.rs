//! Average per-frame inference time.

use std::time::Instant;

use birdrone_core::data::Sample;
use birdrone_core::detect::Detector;
use birdrone_core::train::batch_images;

use crate::error::{Error, Result};

pub const WARMUP_FRAMES: usize = 3;
pub const MIN_TIMED_FRAMES: usize = 10;

/// Seconds per frame for forward, decode and NMS on single images. The first
/// [`WARMUP_FRAMES`] runs are discarded; at least [`MIN_TIMED_FRAMES`] are
/// timed, cycling through `samples` when there are fewer.
pub fn timed_inference(model: &Detector<f32>, samples: &[Sample], conf: f64, nms_iou: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("timing needs at least one sample".into()));
    }
    let frames: Vec<_> = samples.iter().map(|s| batch_images::<f32>(&[s])).collect::<Result<_, _>>()?;
    let timed = frames.len().max(MIN_TIMED_FRAMES);
    let mut total = 0.0;
    for i in 0..WARMUP_FRAMES + timed {
        let img = &frames[i % frames.len()];
        let start = Instant::now();
        let dets = model.predict(img, conf, nms_iou)?;
        let dt = start.elapsed().as_secs_f64();
        std::hint::black_box(dets);
        if i >= WARMUP_FRAMES {
            total += dt;
        }
    }
    Ok(total / timed as f64)
}
