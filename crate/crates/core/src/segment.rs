//! Temporal context: per-block softmax scores summed over a centered window
//! of `eta` blocks, then run-length merged into an activity timeline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, BLOCK_STRIDE, TARGET_FPS};

/// Tolerance on the unit sum of each score vector.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-9;

/// Softmax scores of consecutive blocks of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    start_frames: Vec<u32>,
    scores: Vec<Vec<f64>>,
}

impl ScoreSeries {
    /// Checks that every vector has the same length and sums to one, and
    /// that start frames advance by exactly one block stride.
    pub fn new(entries: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        let classes = entries.first().map_or(0, |e| e.1.len());
        for (i, (start, s)) in entries.iter().enumerate() {
            if s.len() != classes || classes == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "score vector {i} has {} classes, expected {classes}",
                    s.len()
                )));
            }
            let sum: f64 = s.iter().sum();
            if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE || s.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "score vector {i} is not a distribution (sum {sum})"
                )));
            }
            if i > 0 && *start != entries[i - 1].0 + BLOCK_STRIDE as u32 {
                return Err(Error::InvalidArgument(format!(
                    "block {i} starts at frame {start}, expected {}",
                    entries[i - 1].0 + BLOCK_STRIDE as u32
                )));
            }
        }
        let (start_frames, scores) = entries.into_iter().unzip();
        Ok(ScoreSeries {
            start_frames,
            scores,
        })
    }

    /// Consecutive blocks starting at frame 0.
    pub fn from_scores(scores: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            scores
                .into_iter()
                .enumerate()
                .map(|(i, s)| ((i * BLOCK_STRIDE) as u32, s))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn start_frames(&self) -> &[u32] {
        &self.start_frames
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }
}

fn check_eta(eta: usize) -> Result<()> {
    if eta == 0 || eta.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "eta must be odd and at least 1, got {eta}"
        )));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per block: the label with the highest summed score over the centered
/// window of `eta` blocks (truncated at the ends), and that label's summed
/// score divided by the window length.
///
/// The vectors need not be normalized.
pub fn aggregate_scores(scores: &[Vec<f64>], eta: usize) -> Result<Vec<(usize, f64)>> {
    check_eta(eta)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("score series"));
    }
    let classes = scores[0].len();
    if classes == 0 || scores.iter().any(|s| s.len() != classes) {
        return Err(Error::DimensionMismatch(
            "score vectors differ in length".into(),
        ));
    }
    let half = (eta - 1) / 2;
    let n = scores.len();
    let mut sum = vec![0.0; classes];
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half).min(n - 1));
            sum.fill(0.0);
            for s in &scores[lo..=hi] {
                sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            }
            let best = argmax(&sum);
            (best, sum[best] / (hi - lo + 1) as f64)
        })
        .collect())
}

/// Per-block class ids after temporal aggregation.
pub fn aggregate_labels(series: &ScoreSeries, eta: usize) -> Result<Vec<usize>> {
    Ok(aggregate_scores(series.scores(), eta)?
        .into_iter()
        .map(|(label, _)| label)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
    /// Mean over the run of the per-block aggregated score, when known.
    pub score: Option<f64>,
}

/// Contiguous, ordered segments; neighbors always differ in label.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityTimeline {
    pub fps: f64,
    pub segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    start_s: f64,
    end_s: f64,
    label: String,
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TimelineRecord {
    fps: f64,
    segments: Vec<SegmentRecord>,
}

impl ActivityTimeline {
    /// Seconds covered by the timeline.
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_s)
    }

    fn records(&self, names: &[String]) -> Result<Vec<SegmentRecord>> {
        self.segments
            .iter()
            .map(|s| {
                let label = names.get(s.label).ok_or(Error::Label {
                    label: s.label,
                    classes: names.len(),
                })?;
                Ok(SegmentRecord {
                    start_s: s.start_s,
                    end_s: s.end_s,
                    label: label.clone(),
                    score: s.score,
                })
            })
            .collect()
    }

    pub fn to_json(&self, names: &[String]) -> Result<String> {
        let doc = TimelineRecord {
            fps: self.fps,
            segments: self.records(names)?,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    /// Reads a document written by [`Self::to_json`], resolving label names
    /// against `names`.
    pub fn from_json(text: &str, names: &[String]) -> Result<Self> {
        let doc: TimelineRecord =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let segments = doc
            .segments
            .into_iter()
            .map(|r| {
                let label = names
                    .iter()
                    .position(|n| *n == r.label)
                    .ok_or_else(|| Error::Format(format!("unknown label {:?}", r.label)))?;
                Ok(Segment {
                    start_s: r.start_s,
                    end_s: r.end_s,
                    label,
                    score: r.score,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ActivityTimeline {
            fps: doc.fps,
            segments,
        })
    }

    /// `start_s,end_s,label,score` with a header row; a missing score is an
    /// empty field.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        let mut out = String::from("start_s,end_s,label,score\n");
        for r in self.records(names)? {
            let score = r.score.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                r.start_s,
                r.end_s,
                csv_field(&r.label),
                score
            )
            .expect("writing to a string");
        }
        Ok(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Merges runs of equal labels. Block `i` owns `[i * step, (i + 1) * step)`
/// seconds, `step = block_stride / fps`, so `n` blocks cover `[0, n * step]`
/// with no overlap.
pub fn labels_to_timeline(labels: &[usize], fps: f64, block_stride: usize) -> ActivityTimeline {
    build_timeline(labels, None, fps, block_stride)
}

/// As [`labels_to_timeline`], with each segment scored by the mean of its
/// blocks' aggregated scores.
pub fn scored_timeline(blocks: &[(usize, f64)], fps: f64, block_stride: usize) -> ActivityTimeline {
    let labels: Vec<usize> = blocks.iter().map(|b| b.0).collect();
    let scores: Vec<f64> = blocks.iter().map(|b| b.1).collect();
    build_timeline(&labels, Some(&scores), fps, block_stride)
}

fn build_timeline(
    labels: &[usize],
    scores: Option<&[f64]>,
    fps: f64,
    block_stride: usize,
) -> ActivityTimeline {
    let step = block_stride as f64 / fps;
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i < labels.len() && labels[i] == labels[start] {
            continue;
        }
        let score = scores.map(|s| s[start..i].iter().sum::<f64>() / (i - start) as f64);
        segments.push(Segment {
            start_s: start as f64 * step,
            end_s: i as f64 * step,
            label: labels[start],
            score,
        });
        start = i;
    }
    ActivityTimeline { fps, segments }
}

/// Scores to timeline with the pipeline's frame rate and block stride.
pub fn segment_series(series: &ScoreSeries, eta: usize) -> Result<ActivityTimeline> {
    let blocks = aggregate_scores(series.scores(), eta)?;
    Ok(scored_timeline(&blocks, TARGET_FPS, BLOCK_STRIDE))
}
