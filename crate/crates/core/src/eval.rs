//! Clip-level heart-rate evaluation of a trained model.
//!
//! A clip is the run of consecutive chunks sharing a source id. The model
//! predicts each chunk independently; the standardised chunk predictions are
//! concatenated into one trace per clip and read out by
//! [`signal::heart_rate`](crate::signal::heart_rate). Ground truth is the
//! spectral peak of the concatenated label.

use crate::data::synth::{green_mean_trace, standardize};
use crate::data::VideoChunk;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, MetricsRow};
use crate::model::Erea;
use crate::numerics::ParamStore;
use crate::signal::{estimate_hr_fft, heart_rate, SignalConfig};

pub type Clip = (String, Vec<VideoChunk>);

fn clip_fs(chunks: &[VideoChunk]) -> Result<f64> {
    chunks
        .first()
        .map(|c| c.fs)
        .ok_or_else(|| Error::InsufficientData("clip without chunks".into()))
}

/// Concatenated, per-chunk standardised model output.
pub fn predict_trace(model: &Erea, store: &ParamStore, chunks: &[VideoChunk]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for c in chunks {
        let (y, _) = model.infer(store, &c.frames)?;
        out.extend(standardize(&y));
    }
    Ok(out)
}

pub fn label_trace(chunks: &[VideoChunk]) -> Vec<f64> {
    chunks.iter().flat_map(|c| c.ppg.iter().copied()).collect()
}

/// Ground-truth heart rate of a clip, BPM.
pub fn label_hr(chunks: &[VideoChunk], cfg: &SignalConfig) -> Result<f64> {
    estimate_hr_fft(&label_trace(chunks), clip_fs(chunks)?, cfg.hr_band)
}

/// Scores `predict` against the label heart rate of every clip.
pub fn evaluate_with(
    clips: &[Clip],
    cfg: &SignalConfig,
    mut predict: impl FnMut(&[VideoChunk]) -> Result<Vec<f64>>,
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(clips.len());
    for (id, chunks) in clips {
        let fs = clip_fs(chunks)?;
        rows.push(MetricsRow {
            source_id: id.clone(),
            gt_bpm: label_hr(chunks, cfg)?,
            pred_bpm: heart_rate(&predict(chunks)?, fs, cfg)?,
        });
    }
    MetricsReport::new(rows)
}

pub fn evaluate_model(model: &Erea, store: &ParamStore, clips: &[Clip], cfg: &SignalConfig) -> Result<MetricsReport> {
    evaluate_with(clips, cfg, |chunks| predict_trace(model, store, chunks))
}

/// Hand-crafted reference: the spatial mean of the green channel.
pub fn evaluate_green_mean(clips: &[Clip], cfg: &SignalConfig) -> Result<MetricsReport> {
    evaluate_with(clips, cfg, |chunks| {
        Ok(chunks.iter().flat_map(|c| standardize(&green_mean_trace(c))).collect())
    })
}
