use super::Frame;
use crate::{Error, Result, TARGET_FPS};

/// For each 15 FPS output instant `k / 15` (measured from the first frame),
/// the index of the input frame whose timestamp is nearest, earlier frame on
/// ties. The clip is taken to last one native frame period past its final
/// timestamp.
pub fn resample_indices(timestamps: &[f64], native_fps: f64) -> Result<Vec<usize>> {
    if timestamps.is_empty() {
        return Err(Error::EmptyInput("frame sequence"));
    }
    if !(native_fps.is_finite() && native_fps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "native fps must be positive, got {native_fps}"
        )));
    }
    if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidTimestamps { index: i + 1 });
    }
    let origin = timestamps[0];
    let duration = timestamps[timestamps.len() - 1] - origin + 1.0 / native_fps;
    let count = ((duration * TARGET_FPS - 1e-6).floor() as usize) + 1;

    let mut out = Vec::with_capacity(count);
    let mut cursor = 0usize;
    for k in 0..count {
        let target = origin + k as f64 / TARGET_FPS;
        while cursor + 1 < timestamps.len() && timestamps[cursor + 1] <= target {
            cursor += 1;
        }
        // cursor is the last frame at or before target; compare with the next one.
        let pick = match timestamps.get(cursor + 1) {
            Some(&next) if next - target < (target - timestamps[cursor]).abs() => cursor + 1,
            _ => cursor,
        };
        out.push(pick);
    }
    Ok(out)
}

/// Normalizes a frame sequence to 15 FPS by nearest-frame selection.
/// Output frames carry timestamps `k / 15`.
pub fn resample_to_15fps(frames: &[Frame], native_fps: f64) -> Result<Vec<Frame>> {
    let stamps: Vec<f64> = frames.iter().map(Frame::timestamp).collect();
    let picks = resample_indices(&stamps, native_fps)?;
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(k, i)| frames[i].clone().with_timestamp(k as f64 / TARGET_FPS))
        .collect())
}
