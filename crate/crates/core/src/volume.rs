//! Block segmentation, interleaved u/v stacking and percentile normalization.
//!
//! A volume is stored row-major as `(row, col, depth)` with depth fastest.
//! Depth slice `2t` holds `u` of the `t`-th flow field in the block and
//! slice `2t + 1` holds its `v`.

use crate::flow::{FlowField, CELLS};
use crate::{Error, Result, BLOCK_LEN, BLOCK_STRIDE, GRID_SIZE, VOLUME_DEPTH};

pub const VOLUME_LEN: usize = GRID_SIZE * GRID_SIZE * VOLUME_DEPTH;

/// Clamp magnitudes for the two flow components.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub p95_u: f64,
    pub p95_v: f64,
}

/// Replaces a zero percentile so that scaling stays finite.
pub const DEGENERATE_PERCENTILE: f32 = 1e-6;

impl NormStats {
    pub fn new(p95_u: f64, p95_v: f64) -> Result<Self> {
        let ok = |p: f64| p.is_finite() && p > 0.0;
        if !ok(p95_u) || !ok(p95_v) {
            return Err(Error::Normalization(format!(
                "percentiles must be positive, got ({p95_u}, {p95_v})"
            )));
        }
        Ok(NormStats { p95_u, p95_v })
    }

    /// Stats `(1, 1)`: leaves data already in `[-1, 1]` untouched.
    pub fn unit() -> Self {
        NormStats {
            p95_u: 1.0,
            p95_v: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowVolume {
    pub data: Vec<f32>,
    pub start_frame: u32,
    pub label: Option<u32>,
    /// Set once the volume has been normalized, to the stats used.
    pub norm: Option<NormStats>,
}

impl FlowVolume {
    pub fn zeros(start_frame: u32, label: Option<u32>) -> Self {
        FlowVolume {
            data: vec![0.0; VOLUME_LEN],
            start_frame,
            label,
            norm: None,
        }
    }

    pub fn from_data(data: Vec<f32>, start_frame: u32, label: Option<u32>) -> Result<Self> {
        if data.len() != VOLUME_LEN {
            return Err(Error::shape(format!(
                "volume needs {VOLUME_LEN} values, got {}",
                data.len()
            )));
        }
        Ok(FlowVolume {
            data,
            start_frame,
            label,
            norm: None,
        })
    }

    #[inline]
    pub fn index(row: usize, col: usize, depth: usize) -> usize {
        (row * GRID_SIZE + col) * VOLUME_DEPTH + depth
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, depth: usize) -> f32 {
        self.data[Self::index(row, col, depth)]
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }
}

/// Splits a flow sequence into 60-field windows starting every 30 fields.
/// A trailing remainder shorter than 60 is dropped. Each window is paired
/// with the frame index of its first field.
pub fn segment_blocks(fields: &[FlowField]) -> Result<Vec<(u32, &[FlowField])>> {
    if fields.len() < BLOCK_LEN {
        return Err(Error::InsufficientFrames {
            needed: BLOCK_LEN,
            got: fields.len(),
        });
    }
    Ok((0..=fields.len() - BLOCK_LEN)
        .step_by(BLOCK_STRIDE)
        .map(|s| (fields[s].frame_index, &fields[s..s + BLOCK_LEN]))
        .collect())
}

/// Interleaves 60 consecutive flow fields into one un-normalized volume.
pub fn stack_volume(window: &[FlowField], start_frame: u32) -> Result<FlowVolume> {
    if window.len() != BLOCK_LEN {
        return Err(Error::InvalidWindow(format!(
            "expected {BLOCK_LEN} fields, got {}",
            window.len()
        )));
    }
    if let Some(t) = window
        .windows(2)
        .position(|w| w[1].frame_index != w[0].frame_index + 1)
    {
        return Err(Error::InvalidWindow(format!(
            "frame indices not consecutive at offset {}",
            t + 1
        )));
    }
    let mut vol = FlowVolume::zeros(start_frame, None);
    for (tau, f) in window.iter().enumerate() {
        if f.u.len() != CELLS || f.v.len() != CELLS {
            return Err(Error::InvalidWindow(format!("field {tau} has wrong size")));
        }
        for cell in 0..CELLS {
            let base = cell * VOLUME_DEPTH + 2 * tau;
            vol.data[base] = f.u[cell];
            vol.data[base + 1] = f.v[cell];
        }
    }
    Ok(vol)
}

/// Inverse of [`stack_volume`]: recovers the 60 fields, numbered from
/// the volume's start frame.
pub fn unstack_volume(vol: &FlowVolume) -> Vec<FlowField> {
    (0..BLOCK_LEN)
        .map(|tau| {
            let mut f = FlowField::zeros(vol.start_frame + tau as u32);
            for cell in 0..CELLS {
                let base = cell * VOLUME_DEPTH + 2 * tau;
                f.u[cell] = vol.data[base];
                f.v[cell] = vol.data[base + 1];
            }
            f
        })
        .collect()
}

/// Segments and stacks a whole flow sequence.
pub fn build_volumes(fields: &[FlowField], label: Option<u32>) -> Result<Vec<FlowVolume>> {
    segment_blocks(fields)?
        .into_iter()
        .map(|(start, window)| {
            let mut v = stack_volume(window, start)?;
            v.label = label;
            Ok(v)
        })
        .collect()
}

/// Exact nearest-rank selection over non-negative f32 values, by a two-pass
/// radix histogram on the IEEE bit pattern (monotone for non-negative
/// floats). `rank` is 1-based.
struct RankSelector {
    coarse: Vec<u64>,
}

impl RankSelector {
    fn new() -> Self {
        RankSelector {
            coarse: vec![0; 1 << 16],
        }
    }

    #[inline]
    fn key(x: f32) -> u32 {
        x.abs().to_bits()
    }

    fn add_coarse(&mut self, x: f32) {
        self.coarse[(Self::key(x) >> 16) as usize] += 1;
    }

    /// Returns (high bucket, rank remaining inside that bucket).
    fn locate(counts: &[u64], rank: u64) -> (usize, u64) {
        let mut seen = 0u64;
        for (b, &c) in counts.iter().enumerate() {
            if seen + c >= rank {
                return (b, rank - seen);
            }
            seen += c;
        }
        unreachable!("rank exceeds population")
    }
}

/// Nearest-rank 95th percentile of `|u|` and `|v|`, pooled over all
/// volumes. Zero percentiles are replaced by [`DEGENERATE_PERCENTILE`].
pub fn fit_norm_stats<'a, I>(volumes: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a FlowVolume>,
    I::IntoIter: Clone,
{
    let iter = volumes.into_iter();
    let mut sel = [RankSelector::new(), RankSelector::new()];
    let mut count = 0u64;
    for vol in iter.clone() {
        for pair in vol.data.chunks_exact(2) {
            sel[0].add_coarse(pair[0]);
            sel[1].add_coarse(pair[1]);
        }
        count += (vol.data.len() / 2) as u64;
    }
    if count == 0 {
        return Err(Error::EmptyInput("training volumes"));
    }
    let rank = (95 * count).div_ceil(100);
    let located = [
        RankSelector::locate(&sel[0].coarse, rank),
        RankSelector::locate(&sel[1].coarse, rank),
    ];
    let mut fine = [vec![0u64; 1 << 16], vec![0u64; 1 << 16]];
    for vol in iter {
        for pair in vol.data.chunks_exact(2) {
            for c in 0..2 {
                let key = RankSelector::key(pair[c]);
                if (key >> 16) as usize == located[c].0 {
                    fine[c][(key & 0xFFFF) as usize] += 1;
                }
            }
        }
    }
    let pick = |c: usize| {
        let (low, _) = RankSelector::locate(&fine[c], located[c].1);
        let value = f32::from_bits(((located[c].0 as u32) << 16) | low as u32);
        if value > 0.0 {
            value
        } else {
            DEGENERATE_PERCENTILE
        }
    };
    NormStats::new(pick(0) as f64, pick(1) as f64)
}

/// Clamps u-slices to `[-p95_u, p95_u]` and v-slices to `[-p95_v, p95_v]`,
/// then scales each into `[-1, 1]`.
pub fn normalize_volume(vol: &FlowVolume, stats: &NormStats) -> FlowVolume {
    let scale = [stats.p95_u, stats.p95_v];
    let data = vol
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = scale[i % 2];
            ((x as f64).clamp(-p, p) / p) as f32
        })
        .collect();
    FlowVolume {
        data,
        start_frame: vol.start_frame,
        label: vol.label,
        norm: Some(*stats),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numbered(n: usize) -> Vec<FlowField> {
        (0..n).map(|k| FlowField::zeros(k as u32)).collect()
    }

    fn starts(n: usize) -> Vec<u32> {
        segment_blocks(&numbered(n))
            .unwrap()
            .iter()
            .map(|(s, _)| *s)
            .collect()
    }

    #[test]
    fn block_starts() {
        assert_eq!(starts(60), vec![0]);
        assert_eq!(starts(90), vec![0, 30]);
        assert_eq!(starts(149), vec![0, 30, 60]);
        assert!(matches!(
            segment_blocks(&numbered(59)),
            Err(Error::InsufficientFrames {
                needed: 60,
                got: 59
            })
        ));
    }

    #[test]
    fn stacking_indices() {
        let mut fields = numbered(60);
        fields[0].u[3 * 32 + 4] = 1.25;
        fields[0].v[3 * 32 + 4] = -0.5;
        fields[7].v[0] = 2.0;
        let vol = stack_volume(&fields, 0).unwrap();
        assert_eq!(vol.data.len(), 32 * 32 * 120);
        assert_eq!(vol.at(3, 4, 0), 1.25);
        assert_eq!(vol.at(3, 4, 1), -0.5);
        assert_eq!(vol.at(0, 0, 15), 2.0);
    }

    #[test]
    fn stacking_rejects_bad_windows() {
        assert!(matches!(
            stack_volume(&numbered(59), 0),
            Err(Error::InvalidWindow(_))
        ));
        let mut gap = numbered(60);
        gap[30].frame_index = 99;
        assert!(matches!(
            stack_volume(&gap, 0),
            Err(Error::InvalidWindow(_))
        ));
    }

    #[test]
    fn percentile_of_tenths() {
        let mut vol = FlowVolume::zeros(0, None);
        // 100 u values 0.1..=10.0 each repeated; v gets zeros.
        let n_pairs = vol.data.len() / 2;
        for i in 0..n_pairs {
            vol.data[2 * i] = 0.1 * ((i % 100) + 1) as f32;
        }
        let s = fit_norm_stats([&vol]).unwrap();
        assert_eq!(s.p95_u, (0.1f32 * 95.0) as f64);
        assert_eq!(s.p95_v, DEGENERATE_PERCENTILE as f64);
    }

    #[test]
    fn percentile_of_constant() {
        let mut vol = FlowVolume::zeros(0, None);
        vol.data
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i % 2 == 0 { -2.5 } else { 0.75 });
        let s = fit_norm_stats([&vol]).unwrap();
        assert_eq!((s.p95_u, s.p95_v), (2.5, 0.75));
        assert!(matches!(
            fit_norm_stats(std::iter::empty::<&FlowVolume>()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn normalization_examples() {
        let stats = NormStats::new(2.0, 4.0).unwrap();
        let mut vol = FlowVolume::zeros(0, None);
        vol.data[0] = 4.0;
        vol.data[2] = -1.0;
        vol.data[1] = -100.0;
        vol.data[3] = 1.0;
        let n = normalize_volume(&vol, &stats);
        assert_eq!(&n.data[..4], &[1.0, -1.0, -0.5, 0.25]);
        assert_eq!(n.norm, Some(stats));
    }

    fn sorted_oracle(values: &mut [f32]) -> f32 {
        values.iter_mut().for_each(|x| *x = x.abs());
        values.sort_by(f32::total_cmp);
        let rank = (95 * values.len()).div_ceil(100);
        values[rank - 1]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stack_unstack_is_identity(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fields: Vec<FlowField> = (0..60u32)
                .map(|k| {
                    let u = (0..CELLS).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
                    let v = (0..CELLS).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
                    FlowField::from_components(k + 17, u, v).unwrap()
                })
                .collect();
            let vol = stack_volume(&fields, 17).unwrap();
            prop_assert_eq!(unstack_volume(&vol), fields);
        }

        #[test]
        fn radix_select_matches_sort(seed in any::<u64>(), spread in 0.001f32..50.0, vols in 1usize..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let volumes: Vec<FlowVolume> = (0..vols)
                .map(|_| {
                    let data = (0..VOLUME_LEN)
                        .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(-spread..spread) })
                        .collect();
                    FlowVolume::from_data(data, 0, None).unwrap()
                })
                .collect();
            let s = fit_norm_stats(&volumes).unwrap();
            let mut us: Vec<f32> = volumes.iter().flat_map(|v| v.data.iter().step_by(2).copied()).collect();
            let mut vs: Vec<f32> = volumes.iter().flat_map(|v| v.data.iter().skip(1).step_by(2).copied()).collect();
            prop_assert_eq!(s.p95_u, sorted_oracle(&mut us) as f64);
            prop_assert_eq!(s.p95_v, sorted_oracle(&mut vs) as f64);
        }

        #[test]
        fn normalized_range_order_and_idempotence(
            data in proptest::collection::vec(-1e3f32..1e3, 240),
            pu in 0.01f64..10.0,
            pv in 0.01f64..10.0,
        ) {
            let mut vol = FlowVolume::zeros(0, None);
            vol.data[..240].copy_from_slice(&data);
            let stats = NormStats::new(pu, pv).unwrap();
            let n = normalize_volume(&vol, &stats);
            prop_assert!(n.data.iter().all(|x| (-1.0..=1.0).contains(x)));
            for i in 0..240 {
                // elementwise oracle
                let p = if i % 2 == 0 { pu } else { pv };
                let expect = ((data[i] as f64).max(-p).min(p) / p) as f32;
                prop_assert_eq!(n.data[i], expect);
                for j in (i % 2..240).step_by(2) {
                    if data[i] < data[j] {
                        prop_assert!(n.data[i] <= n.data[j]);
                    }
                }
            }
            let once = normalize_volume(&n, &NormStats::unit());
            let twice = normalize_volume(&once, &NormStats::unit());
            prop_assert_eq!(&once.data, &twice.data);
            prop_assert_eq!(&once.data, &n.data);
        }
    }
}
