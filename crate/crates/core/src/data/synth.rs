//! Synthetic pulsatile face video with known ground truth.
//!
//! A skin-coloured ellipse on a grey background is tinted by a pulse
//! waveform `p(t) = sin(2 pi f t + phi) + h sin(2 (2 pi f t + phi))`: the green
//! channel carries amplitude `a`, red and blue carry `a/4`. On top come a
//! slow multiplicative illumination drift, optional rigid sway of the
//! ellipse and Gaussian pixel noise. Frames are clipped to `[0, 1]` and
//! rounded to f32 so that they survive the `MARC` round trip unchanged.
//!
//! Per clip the generator draws, in order: heart rate (when drawn from the
//! range), pulse phase, drift frequency, drift phase, motion amplitude,
//! horizontal and vertical sway frequencies and phases, then one noise sample
//! per pixel in `(t, y, x, c)` order.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::chunk::{chunk_file_name, write_chunk, VideoChunk};
use crate::data::manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::numerics::rng::{stream, substream};
use crate::numerics::{Rng, Tensor};

pub const BACKGROUND: f64 = 0.3;
pub const SKIN_RGB: [f64; 3] = [0.7, 0.55, 0.45];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Second-harmonic amplitude relative to the fundamental.
    pub harmonic: f64,
    /// Green-channel pulse amplitude.
    pub pulse_amplitude: f64,
    pub noise_sigma: f64,
    pub drift_amplitude: f64,
    /// Drift frequency is drawn from `[0.01, drift_max_hz)`.
    pub drift_max_hz: f64,
    pub motion_min_px: f64,
    pub motion_max_px: f64,
    /// Ellipse centre and semi-axes as fractions of the frame side.
    pub ellipse_center: (f64, f64),
    pub ellipse_axes: (f64, f64),
    pub fs: f64,
    /// Frames per chunk.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Consecutive chunks per training clip.
    pub train_clip_chunks: usize,
    /// Consecutive chunks per validation/test clip.
    pub eval_clip_chunks: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            hr_min_bpm: 48.0,
            hr_max_bpm: 144.0,
            harmonic: 0.35,
            pulse_amplitude: 0.02,
            noise_sigma: 0.02,
            drift_amplitude: 0.05,
            drift_max_hz: 0.1,
            motion_min_px: 0.0,
            motion_max_px: 4.0,
            ellipse_center: (0.5, 0.5),
            ellipse_axes: (0.3, 0.38),
            fs: 30.0,
            frames: 60,
            height: 64,
            width: 64,
            train_clip_chunks: 1,
            eval_clip_chunks: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("synth config: {m}")));
        if !(self.hr_min_bpm > 0.0 && self.hr_min_bpm <= self.hr_max_bpm) {
            return fail("hr range must satisfy 0 < min <= max");
        }
        if self.noise_sigma < 0.0 || self.drift_amplitude < 0.0 || self.pulse_amplitude < 0.0 {
            return fail("noise, drift and pulse amplitudes must be >= 0");
        }
        if !(self.motion_min_px >= 0.0 && self.motion_min_px <= self.motion_max_px) {
            return fail("motion range must satisfy 0 <= min <= max");
        }
        if self.fs <= 0.0 || self.frames < 2 || self.height == 0 || self.width == 0 {
            return fail("fs, frames and frame size must be positive (frames >= 2)");
        }
        if self.train_clip_chunks == 0 || self.eval_clip_chunks == 0 {
            return fail("clips need at least one chunk");
        }
        if self.drift_max_hz <= 0.01 {
            return fail("drift_max_hz must exceed 0.01");
        }
        Ok(())
    }
}

/// Standardises to zero mean and unit (population) variance; constant input
/// becomes all zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        x.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Renders a clip of `n_frames` frames at heart rate `hr_bpm`.
pub fn synth_clip_at(cfg: &SynthConfig, hr_bpm: f64, n_frames: usize, rng: &mut Rng, source_id: &str) -> Result<VideoChunk> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let f_hr = hr_bpm / 60.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let drift_hz = rng.random_range(0.01..cfg.drift_max_hz);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let motion = if cfg.motion_max_px > cfg.motion_min_px {
        rng.random_range(cfg.motion_min_px..cfg.motion_max_px)
    } else {
        cfg.motion_min_px
    };
    let sway_fx = rng.random_range(0.05..0.5);
    let sway_px = rng.random_range(0.0..2.0 * PI);
    let sway_fy = rng.random_range(0.05..0.5);
    let sway_py = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma >= 0");

    let (cx0, cy0) = (cfg.ellipse_center.0 * w as f64, cfg.ellipse_center.1 * h as f64);
    let (ax, ay) = (cfg.ellipse_axes.0 * w as f64, cfg.ellipse_axes.1 * h as f64);

    let mut pulse = Vec::with_capacity(n_frames);
    let mut data = Vec::with_capacity(n_frames * h * w * 3);
    for ti in 0..n_frames {
        let t = ti as f64 / cfg.fs;
        let arg = 2.0 * PI * f_hr * t + phase;
        let p = arg.sin() + cfg.harmonic * (2.0 * arg).sin();
        pulse.push(p);
        let gain = 1.0 + cfg.drift_amplitude * (2.0 * PI * drift_hz * t + drift_phase).sin();
        let cx = cx0 + motion * (2.0 * PI * sway_fx * t + sway_px).sin();
        let cy = cy0 + 0.5 * motion * (2.0 * PI * sway_fy * t + sway_py).sin();
        let skin = [
            SKIN_RGB[0] + 0.25 * cfg.pulse_amplitude * p,
            SKIN_RGB[1] + cfg.pulse_amplitude * p,
            SKIN_RGB[2] + 0.25 * cfg.pulse_amplitude * p,
        ];
        for y in 0..h {
            let dy = (y as f64 + 0.5 - cy) / ay;
            for x in 0..w {
                let dx = (x as f64 + 0.5 - cx) / ax;
                let inside = dx * dx + dy * dy <= 1.0;
                for ch in skin {
                    let base = if inside { ch } else { BACKGROUND };
                    let mut v = base * gain;
                    if cfg.noise_sigma > 0.0 {
                        v += noise.sample(rng);
                    }
                    data.push(v.clamp(0.0, 1.0) as f32 as f64);
                }
            }
        }
    }
    let ppg = standardize(&pulse);
    VideoChunk::new(Tensor::new(&[n_frames, h, w, 3], data)?, ppg, cfg.fs, source_id)
}

/// One chunk-length clip at a heart rate drawn uniformly from the range.
pub fn synth_clip(cfg: &SynthConfig, rng: &mut Rng) -> Result<VideoChunk> {
    let hr = if cfg.hr_max_bpm > cfg.hr_min_bpm {
        rng.random_range(cfg.hr_min_bpm..cfg.hr_max_bpm)
    } else {
        cfg.hr_min_bpm
    };
    synth_clip_at(cfg, hr, cfg.frames, rng, "synth")
}

/// Cuts a clip into consecutive chunks of `len` frames; each chunk's label
/// is re-standardised.
pub fn split_clip(clip: &VideoChunk, len: usize) -> Result<Vec<VideoChunk>> {
    let [t, h, w, c] = clip.dims();
    if len == 0 || t % len != 0 {
        return Err(Error::invalid(format!("clip of {t} frames does not split into chunks of {len}")));
    }
    let per = h * w * c;
    (0..t / len)
        .map(|k| {
            let frames = clip.frames.data()[k * len * per..(k + 1) * len * per].to_vec();
            VideoChunk::new(
                Tensor::new(&[len, h, w, c], frames)?,
                standardize(&clip.ppg[k * len..(k + 1) * len]),
                clip.fs,
                clip.source_id.clone(),
            )
        })
        .collect()
}

/// Planned clip of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    pub index: usize,
    pub split: Split,
    pub hr_bpm: f64,
    pub source_id: String,
}

/// Assigns one heart rate per clip, one clip per stratum of the HR range.
/// Validation and test clips take evenly spaced strata, so their rates never
/// coincide with a training rate.
pub fn plan_dataset(cfg: &SynthConfig, n_train: usize, n_val: usize, n_test: usize) -> Vec<ClipPlan> {
    let n = n_train + n_val + n_test;
    if n == 0 {
        return Vec::new();
    }
    let mut rng = substream(cfg.seed, stream::SYNTH_BASE - 1);
    let width = (cfg.hr_max_bpm - cfg.hr_min_bpm) / n as f64;
    let rates: Vec<f64> = (0..n)
        .map(|k| cfg.hr_min_bpm + (k as f64 + rng.random_range(0.1..0.9)) * width)
        .collect();
    let n_eval = n_val + n_test;
    let mut split_of = vec![Split::Train; n];
    let (mut tests_left, mut vals_left) = (n_test, n_val);
    for j in 0..n_eval {
        let pos = ((j as f64 + 0.5) * n as f64 / n_eval as f64) as usize;
        // alternate, falling back to whichever split still needs clips
        let want_test = (j % 2 == 0 && tests_left > 0) || vals_left == 0;
        split_of[pos.min(n - 1)] = if want_test {
            tests_left -= 1;
            Split::Test
        } else {
            vals_left -= 1;
            Split::Val
        };
    }
    let mut counters = [0usize; 3];
    (0..n)
        .map(|k| {
            let split = split_of[k];
            let c = &mut counters[split as usize];
            let source_id = format!("{split}_{:04}", *c);
            *c += 1;
            ClipPlan {
                index: k,
                split,
                hr_bpm: rates[k],
                source_id,
            }
        })
        .collect()
}

/// Renders the planned clip; its random stream depends only on the seed and
/// the clip index.
pub fn render_planned(cfg: &SynthConfig, plan: &ClipPlan) -> Result<Vec<VideoChunk>> {
    let chunks = match plan.split {
        Split::Train => cfg.train_clip_chunks,
        _ => cfg.eval_clip_chunks,
    };
    let mut rng = substream(cfg.seed, stream::SYNTH_BASE + plan.index as u64);
    let clip = synth_clip_at(cfg, plan.hr_bpm, chunks * cfg.frames, &mut rng, &plan.source_id)?;
    split_clip(&clip, cfg.frames)
}

/// Generates `n_train + n_val + n_test` clips into `out_dir` and writes
/// `manifest.txt` there.
pub fn synth_dataset(cfg: &SynthConfig, n_train: usize, n_val: usize, n_test: usize, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut entries = Vec::new();
    for plan in plan_dataset(cfg, n_train, n_val, n_test) {
        for (k, chunk) in render_planned(cfg, &plan)?.iter().enumerate() {
            let name = chunk_file_name(&plan.source_id, k);
            write_chunk(&out_dir.join(&name), chunk)?;
            entries.push(ManifestEntry {
                split: plan.split,
                path: name.into(),
            });
        }
    }
    entries.sort_by(|a, b| (a.split, &a.path).cmp(&(b.split, &b.path)));
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        fs: cfg.fs,
        dims: [cfg.frames, cfg.height, cfg.width, 3],
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Spatial mean of the green channel per frame: the classic hand-crafted
/// rPPG readout, used as a reference predictor.
pub fn green_mean_trace(chunk: &VideoChunk) -> Vec<f64> {
    let [t, h, w, c] = chunk.dims();
    let green = 1.min(c - 1);
    let per = h * w * c;
    (0..t)
        .map(|ti| {
            let frame = &chunk.frames.data()[ti * per..(ti + 1) * per];
            frame.iter().skip(green).step_by(c).sum::<f64>() / (h * w) as f64
        })
        .collect()
}
