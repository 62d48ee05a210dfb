//! Seeded synthetic data with known ground truth: labeled motion-class
//! flow volumes and textured frame pairs related by a cyclic shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::flow::Frame;
use crate::volume::FlowVolume;
use crate::{BLOCK_LEN, BLOCK_STRIDE, GRID_SIZE, VOLUME_DEPTH};

/// Grid center in cell coordinates.
pub const GRID_CENTER: f64 = (GRID_SIZE as f64 - 1.0) / 2.0;
/// Distance from the center at which rotation and zoom reach the amplitude.
const RADIAL_REFERENCE: f64 = GRID_SIZE as f64 / 2.0;
/// Sign flips of `vertical_bob` happen every this many frames.
pub const BOB_HALF_PERIOD: usize = 7;
/// Columns within this distance of the center are the "inside" of
/// `mixed_window` and carry no motion.
const WINDOW_HALF_WIDTH: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionKind {
    /// Uniform translation along `direction` (radians, image axes).
    Translate { direction: f64 },
    /// In-plane rotation about the grid center.
    RotateZ,
    /// Expansion away from the grid center.
    RadialZoom,
    /// Vertical motion whose sign alternates every [`BOB_HALF_PERIOD`] frames.
    VerticalBob,
    /// No motion; noise only.
    StaticNoise,
    /// Still center, outward horizontal flow in the side columns.
    MixedWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClassSpec {
    pub name: String,
    pub kind: MotionKind,
    /// Pixels per frame. Rotation and zoom reach it 16 cells from center.
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MotionClassSpec {
    pub fn new(
        name: impl Into<String>,
        kind: MotionKind,
        amplitude: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        assert!(
            amplitude >= 0.0 && noise_sigma >= 0.0,
            "amplitude and noise must be non-negative"
        );
        MotionClassSpec {
            name: name.into(),
            kind,
            amplitude,
            noise_sigma,
            seed,
        }
    }

    /// Noise-free flow at a cell for absolute frame `frame`.
    pub fn flow_at(&self, row: usize, col: usize, frame: usize) -> (f64, f64) {
        let a = self.amplitude;
        let x = col as f64 - GRID_CENTER;
        let y = row as f64 - GRID_CENTER;
        match self.kind {
            MotionKind::Translate { direction } => (a * direction.cos(), a * direction.sin()),
            MotionKind::RotateZ => {
                let w = a / RADIAL_REFERENCE;
                (-w * y, w * x)
            }
            MotionKind::RadialZoom => {
                let s = a / RADIAL_REFERENCE;
                (s * x, s * y)
            }
            MotionKind::VerticalBob => {
                let sign = if (frame / BOB_HALF_PERIOD).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                };
                (0.0, sign * a)
            }
            MotionKind::StaticNoise => (0.0, 0.0),
            MotionKind::MixedWindow => {
                if x.abs() > WINDOW_HALF_WIDTH {
                    (a * x.signum(), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    /// Un-normalized volume for block `t` (frames `30t .. 30t + 60`),
    /// labeled `None`. Deterministic in `(seed, t)`.
    pub fn generate_volume(&self, t: u32) -> FlowVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        let noise = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
        let first_frame = t as usize * BLOCK_STRIDE;
        let mut vol = FlowVolume::zeros(first_frame as u32, None);
        for row in 0..GRID_SIZE {
            for col in 0..GRID_SIZE {
                let base = FlowVolume::index(row, col, 0);
                for tau in 0..BLOCK_LEN {
                    let (u, v) = self.flow_at(row, col, first_frame + tau);
                    let (nu, nv) = if self.noise_sigma > 0.0 {
                        (noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    vol.data[base + 2 * tau] = (u + nu) as f32;
                    vol.data[base + 2 * tau + 1] = (v + nv) as f32;
                }
            }
        }
        debug_assert_eq!(vol.data.len(), GRID_SIZE * GRID_SIZE * VOLUME_DEPTH);
        vol
    }
}

/// Free function form of [`MotionClassSpec::generate_volume`].
pub fn generate_volume(spec: &MotionClassSpec, t: u32) -> FlowVolume {
    spec.generate_volume(t)
}

/// Pixels per frame used by `synth` and the acceptance runs.
pub const DEFAULT_AMPLITUDE: f64 = 2.0;
/// Noise sigma as a fraction of the amplitude.
pub const DEFAULT_NOISE_RATIO: f64 = 0.2;

/// The six motion archetypes, all with the given amplitude and
/// `noise_sigma = noise_ratio * amplitude`.
pub fn standard_classes(amplitude: f64, noise_ratio: f64, seed: u64) -> Vec<MotionClassSpec> {
    let kinds = [
        ("translate", MotionKind::Translate { direction: 0.0 }),
        ("rotate_z", MotionKind::RotateZ),
        ("radial_zoom", MotionKind::RadialZoom),
        ("vertical_bob", MotionKind::VerticalBob),
        ("static_noise", MotionKind::StaticNoise),
        ("mixed_window", MotionKind::MixedWindow),
    ];
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, (name, kind))| {
            MotionClassSpec::new(
                name,
                kind,
                amplitude,
                noise_ratio * amplitude,
                mix_seed(seed, i as u64, 0),
            )
        })
        .collect()
}

/// Three classes absent from [`standard_classes`], for transfer runs:
/// translation left, up and down.
pub fn transfer_classes(amplitude: f64, noise_ratio: f64, seed: u64) -> Vec<MotionClassSpec> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let kinds = [
        ("translate_left", PI),
        ("translate_down", FRAC_PI_2),
        ("translate_up", -FRAC_PI_2),
    ];
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, (name, direction))| {
            MotionClassSpec::new(
                name,
                MotionKind::Translate { direction },
                amplitude,
                noise_ratio * amplitude,
                mix_seed(seed, 100 + i as u64, 0),
            )
        })
        .collect()
}

/// SplitMix64-style mixing for deriving independent child seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One labeled synthetic sample and the sequence it belongs to.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub group: u64,
    pub volume: FlowVolume,
}

/// Where a corpus sample comes from; regenerate with [`SampleRef::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub class: u32,
    pub sequence: u32,
    pub block: u32,
}

/// A corpus laid out as `sequences` runs of `blocks` consecutive blocks per
/// class. Every sequence uses its own noise seed.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub classes: Vec<MotionClassSpec>,
    pub sequences: u32,
    pub blocks: u32,
}

impl SyntheticCorpus {
    pub fn new(classes: Vec<MotionClassSpec>, sequences: u32, blocks: u32) -> Self {
        SyntheticCorpus {
            classes,
            sequences,
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len() * (self.sequences * self.blocks) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Group id shared by all blocks of one sequence.
    pub fn group_of(&self, r: SampleRef) -> u64 {
        r.class as u64 * self.sequences as u64 + r.sequence as u64
    }

    pub fn refs(&self) -> Vec<SampleRef> {
        let mut out = Vec::with_capacity(self.len());
        for class in 0..self.classes.len() as u32 {
            for sequence in 0..self.sequences {
                for block in 0..self.blocks {
                    out.push(SampleRef {
                        class,
                        sequence,
                        block,
                    });
                }
            }
        }
        out
    }

    pub fn generate(&self, r: SampleRef) -> FlowVolume {
        let base = &self.classes[r.class as usize];
        let spec = MotionClassSpec {
            seed: mix_seed(base.seed, r.sequence as u64, 1),
            ..base.clone()
        };
        let mut vol = spec.generate_volume(r.block);
        vol.label = Some(r.class);
        vol
    }

    pub fn samples(&self) -> Vec<SyntheticSample> {
        self.refs()
            .into_iter()
            .map(|r| SyntheticSample {
                group: self.group_of(r),
                volume: self.generate(r),
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// Default side length of synthetic textured frames.
pub const TEXTURE_SIZE: usize = 512;
/// Standard deviation (pixels) of the smoothing applied to texture noise.
pub const TEXTURE_BLUR_SIGMA: f64 = 2.5;

fn blur_cyclic_1d(
    src: &[f64],
    dst: &mut [f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    along_x: bool,
) {
    let r = kernel.len() as isize / 2;
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let o = k as isize - r;
                let (xx, yy) = if along_x {
                    ((x as isize + o).rem_euclid(width as isize) as usize, y)
                } else {
                    (x, (y as isize + o).rem_euclid(height as isize) as usize)
                };
                acc += w * src[yy * width + xx];
            }
            dst[y * width + x] = acc;
        }
    }
}

/// Band-limited random texture: white noise smoothed by a periodic
/// Gaussian, rescaled into `[0.05, 0.95]`. The texture tiles seamlessly,
/// so cyclic shifts of it are exact translations.
pub fn textured_frame(width: usize, height: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..width * height).map(|_| rng.gen::<f64>()).collect();
    let radius = (3.0 * TEXTURE_BLUR_SIGMA).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|o| (-(o * o) as f64 / (2.0 * TEXTURE_BLUR_SIGMA * TEXTURE_BLUR_SIGMA)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);
    let mut tmp = vec![0.0; width * height];
    let mut out = vec![0.0; width * height];
    blur_cyclic_1d(&noise, &mut tmp, width, height, &kernel, true);
    blur_cyclic_1d(&tmp, &mut out, width, height, &kernel, false);
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let luma = out
        .iter()
        .map(|&v| (0.05 + 0.9 * (v - lo) / span) as f32)
        .collect();
    Frame::new(width, height, luma, 0.0).expect("valid texture")
}

/// Moves frame content by `(dx, dy)` pixels with wraparound: the result at
/// `(x, y)` is the input at `(x - dx, y - dy)`.
pub fn shift_cyclic(frame: &Frame, dx: i32, dy: i32) -> Frame {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let mut luma = Vec::with_capacity(frame.luma().len());
    for y in 0..h {
        for x in 0..w {
            let sx = (x - dx as i64).rem_euclid(w) as usize;
            let sy = (y - dy as i64).rem_euclid(h) as usize;
            luma.push(frame.at(sx, sy));
        }
    }
    Frame::new(frame.width(), frame.height(), luma, frame.timestamp()).expect("same dimensions")
}

/// A textured frame and its cyclic shift by `shift`; the true flow in
/// every cell is `shift`. Frames are [`TEXTURE_SIZE`] square.
pub fn generate_frame_pair(shift: (i32, i32), texture_seed: u64) -> (Frame, Frame) {
    assert!(
        shift.0.abs() <= 8 && shift.1.abs() <= 8,
        "shift components are limited to 8 px"
    );
    let a = textured_frame(TEXTURE_SIZE, TEXTURE_SIZE, texture_seed);
    let b = shift_cyclic(&a, shift.0, shift.1).with_timestamp(1.0 / crate::TARGET_FPS);
    (a, b)
}

/// `count` frames of one texture drifting by `step` pixels per frame,
/// timestamped at `fps`.
pub fn drifting_frames(
    width: usize,
    height: usize,
    count: usize,
    step: (i32, i32),
    fps: f64,
    seed: u64,
) -> Vec<Frame> {
    let base = textured_frame(width, height, seed);
    (0..count)
        .map(|k| {
            shift_cyclic(&base, step.0 * k as i32, step.1 * k as i32).with_timestamp(k as f64 / fps)
        })
        .collect()
}
