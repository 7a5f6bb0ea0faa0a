//! Run configuration: one flat `key = value` file covering data synthesis,
//! model, training, signal processing and paths.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! encoder_channels = 16,32,32,32
//! hr_band = 0.75,2.5
//! ```
//!
//! Keys absent from a file keep their defaults. Values are written with
//! the shortest decimal form that parses back to the same `f64`, so
//! `parse(serialize(c)) == c`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::signal::{Band, SignalConfig};
use crate::training::TrainConfig;

/// File written next to a checkpoint by `train`.
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.marw";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    /// Dataset directory written by `synth`.
    pub data_dir: PathBuf,
    /// Empty means `<data_dir>/manifest.txt`.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Empty means `<out_dir>/model.marw`.
    pub checkpoint: PathBuf,

    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    pub harmonic: f64,
    pub pulse_amplitude: f64,
    pub noise_sigma: f64,
    pub drift_amplitude: f64,
    pub drift_max_hz: f64,
    pub motion_min_px: f64,
    pub motion_max_px: f64,
    pub ellipse_center: (f64, f64),
    pub ellipse_axes: (f64, f64),
    pub fs: f64,
    pub train_clip_chunks: usize,
    pub eval_clip_chunks: usize,

    /// Frames per chunk, shared by data, model and training.
    pub chunk_len: usize,
    /// Side of the square frames.
    pub frame_size: usize,
    pub encoder_channels: Vec<usize>,
    pub feature_size: usize,
    pub gate_hidden: usize,
    pub input_norm: bool,

    pub alpha: f64,
    pub beta: f64,
    pub mask_size: usize,
    pub mask_fill: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,

    pub hr_band: Band,
    pub detrend_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let g = SignalConfig::default();
        RunConfig {
            seed: 0,
            data_dir: PathBuf::from("data"),
            manifest: PathBuf::new(),
            out_dir: PathBuf::from("run"),
            checkpoint: PathBuf::new(),
            n_train: 12,
            n_val: 0,
            n_test: 4,
            hr_min_bpm: s.hr_min_bpm,
            hr_max_bpm: s.hr_max_bpm,
            harmonic: s.harmonic,
            pulse_amplitude: s.pulse_amplitude,
            noise_sigma: s.noise_sigma,
            drift_amplitude: s.drift_amplitude,
            drift_max_hz: s.drift_max_hz,
            motion_min_px: s.motion_min_px,
            motion_max_px: s.motion_max_px,
            ellipse_center: s.ellipse_center,
            ellipse_axes: s.ellipse_axes,
            fs: s.fs,
            train_clip_chunks: s.train_clip_chunks,
            eval_clip_chunks: s.eval_clip_chunks,
            chunk_len: t.chunk_len,
            frame_size: m.height,
            encoder_channels: m.encoder_channels,
            feature_size: m.feature_size,
            gate_hidden: m.gate_hidden,
            input_norm: m.input_norm,
            alpha: t.alpha,
            beta: t.beta,
            mask_size: t.mask_size,
            mask_fill: t.mask_fill,
            batch_size: t.batch_size,
            epochs: t.epochs,
            max_lr: t.max_lr,
            hr_band: g.hr_band,
            detrend_lambda: g.detrend_lambda,
        }
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn write_value(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                <$t>::from_str(s).map_err(|e| e.to_string())
            }
            fn write_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(u64, usize, f64, bool);

impl Value for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn write_value(&self) -> String {
        self.to_string_lossy().into_owned()
    }
}

impl Value for Vec<usize> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| usize::parse_value(p.trim())).collect()
    }
    fn write_value(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Value for (f64, f64) {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
        Ok((f64::parse_value(a.trim())?, f64::parse_value(b.trim())?))
    }
    fn write_value(&self) -> String {
        format!("{},{}", self.0, self.1)
    }
}

impl Value for Band {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let (lo, hi) = <(f64, f64)>::parse_value(s)?;
        Ok(Band { lo, hi })
    }
    fn write_value(&self) -> String {
        (self.lo, self.hi).write_value()
    }
}

/// Declares the key table once; generates `set`, `serialize` and `KEYS`.
macro_rules! keys {
    ($($section:literal => [$($field:ident),* $(,)?]),* $(,)?) => {
        impl RunConfig {
            /// Every recognised key, in file order.
            pub const KEYS: &'static [&'static str] = &[$($(stringify!($field)),*),*];

            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $($(stringify!($field) => self.$field = Value::parse_value(value)?,)*)*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            pub fn serialize(&self) -> String {
                let mut out = String::new();
                $(
                    let _ = writeln!(out, "# {}", $section);
                    $(let _ = writeln!(out, "{} = {}", stringify!($field), self.$field.write_value());)*
                    out.push('\n');
                )*
                out
            }
        }
    };
}

keys! {
    "run" => [seed, data_dir, manifest, out_dir, checkpoint],
    "synthetic data" => [
        n_train, n_val, n_test, hr_min_bpm, hr_max_bpm, harmonic, pulse_amplitude, noise_sigma,
        drift_amplitude, drift_max_hz, motion_min_px, motion_max_px, ellipse_center, ellipse_axes,
        fs, train_clip_chunks, eval_clip_chunks,
    ],
    "model" => [chunk_len, frame_size, encoder_channels, feature_size, gate_hidden, input_norm],
    "training" => [alpha, beta, mask_size, mask_fill, batch_size, epochs, max_lr],
    "signal" => [hr_band, detrend_lambda],
}

impl RunConfig {
    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value.trim()).map_err(|m| err(format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::file(path, e))
    }

    pub fn manifest_path(&self) -> PathBuf {
        if self.manifest.as_os_str().is_empty() {
            self.data_dir.join(MANIFEST_FILE)
        } else {
            self.manifest.clone()
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.out_dir.join(CHECKPOINT_FILE)
        } else {
            self.checkpoint.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            hr_min_bpm: self.hr_min_bpm,
            hr_max_bpm: self.hr_max_bpm,
            harmonic: self.harmonic,
            pulse_amplitude: self.pulse_amplitude,
            noise_sigma: self.noise_sigma,
            drift_amplitude: self.drift_amplitude,
            drift_max_hz: self.drift_max_hz,
            motion_min_px: self.motion_min_px,
            motion_max_px: self.motion_max_px,
            ellipse_center: self.ellipse_center,
            ellipse_axes: self.ellipse_axes,
            fs: self.fs,
            frames: self.chunk_len,
            height: self.frame_size,
            width: self.frame_size,
            train_clip_chunks: self.train_clip_chunks,
            eval_clip_chunks: self.eval_clip_chunks,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frames: self.chunk_len,
            height: self.frame_size,
            width: self.frame_size,
            in_channels: 3,
            encoder_channels: self.encoder_channels.clone(),
            feature_size: self.feature_size,
            gate_hidden: self.gate_hidden,
            input_norm: self.input_norm,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            chunk_len: self.chunk_len,
            mask_size: self.mask_size,
            mask_fill: self.mask_fill,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_lr: self.max_lr,
            seed: self.seed,
        }
    }

    pub fn signal_config(&self) -> SignalConfig {
        SignalConfig {
            hr_band: self.hr_band,
            detrend_lambda: self.detrend_lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_roundtrip_and_key_coverage() {
        let c = RunConfig::default();
        let text = c.serialize();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        let written: Vec<&str> = text
            .lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once(" = ").unwrap().0)
            .collect();
        assert_eq!(written, RunConfig::KEYS);
    }

    #[test]
    fn defaults_are_consistent_with_module_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.model_config(), ModelConfig::default());
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.synth_config(), SynthConfig::default());
        assert_eq!(c.signal_config(), SignalConfig::default());
    }

    #[test]
    fn comments_partial_files_and_errors() {
        let c = RunConfig::parse("# sweep\n  beta = 0.25  \n\nencoder_channels = 4, 8\n").unwrap();
        assert_eq!(c.beta, 0.25);
        assert_eq!(c.encoder_channels, vec![4, 8]);
        assert_eq!(c.alpha, 0.3);
        for (text, line) in [("beta 0.2", 1), ("\nbogus = 1", 2), ("seed = -1", 1), ("seed = 1\nseed = 2", 2)] {
            match RunConfig::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn derived_paths() {
        let c = RunConfig::default();
        assert_eq!(c.manifest_path(), PathBuf::from("data/manifest.txt"));
        assert_eq!(c.checkpoint_path(), PathBuf::from("run/model.marw"));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3..1e3f64]
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(
            seed in any::<u64>(),
            alpha in finite(),
            max_lr in finite(),
            center in (finite(), finite()),
            band in (finite(), finite()),
            channels in proptest::collection::vec(1usize..512, 1..6),
            n_train in any::<usize>(),
            input_norm in any::<bool>(),
            dir in "[a-zA-Z0-9_./-]{0,20}",
        ) {
            let c = RunConfig {
                seed,
                alpha,
                max_lr,
                ellipse_center: center,
                hr_band: Band { lo: band.0, hi: band.1 },
                encoder_channels: channels,
                n_train,
                input_norm,
                out_dir: PathBuf::from(dir),
                ..RunConfig::default()
            };
            prop_assert_eq!(RunConfig::parse(&c.serialize()).unwrap(), c);
        }
    }
}
