//! WebAssembly bindings for the browser demo. Three operations:
//! synthesise a face clip and read its pulse from the green channel,
//! split a modulated beat series into LF/HF power, and score a shifted,
//! rescaled prediction with the regression losses.

use std::f64::consts::PI;

use mar_rppg::data::synth::{green_mean_trace, standardize, synth_clip_at, SynthConfig};
use mar_rppg::numerics::rng::rng_from_seed;
use mar_rppg::signal::{heart_rate, hrv_lf_hf, IbiSeries, SignalConfig};
use mar_rppg::training::{l1_loss, neg_pearson_loss, regression_loss};
use mar_rppg::Result;
use wasm_bindgen::prelude::*;

const FS: f64 = 30.0;
const SIDE: usize = 48;

fn js(e: mar_rppg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct PulseReadout {
    bpm: f64,
    trace: Vec<f64>,
    frame: Vec<u8>,
}

#[wasm_bindgen]
impl PulseReadout {
    #[wasm_bindgen(getter)]
    pub fn bpm(&self) -> f64 {
        self.bpm
    }

    /// Standardised green-mean trace, one sample per frame.
    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    /// First frame as RGBA bytes, `side * side * 4` long.
    #[wasm_bindgen(getter)]
    pub fn frame(&self) -> Vec<u8> {
        self.frame.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        SIDE
    }
}

pub fn pulse_readout(hr_bpm: f64, noise_sigma: f64, motion_px: f64, seconds: f64, seed: u64) -> Result<PulseReadout> {
    let cfg = SynthConfig {
        noise_sigma,
        motion_min_px: motion_px,
        motion_max_px: motion_px,
        height: SIDE,
        width: SIDE,
        seed,
        ..SynthConfig::default()
    };
    let n = ((seconds * FS).round() as usize).max(2);
    let clip = synth_clip_at(&cfg, hr_bpm, n, &mut rng_from_seed(seed), "demo")?;
    let trace = standardize(&green_mean_trace(&clip));
    let bpm = heart_rate(&trace, FS, &SignalConfig::default())?;
    let frame = clip.frames.data()[..SIDE * SIDE * 3]
        .chunks(3)
        .flat_map(|px| [px[0], px[1], px[2], 1.0].map(|v| (v * 255.0).round() as u8))
        .collect();
    Ok(PulseReadout { bpm, trace, frame })
}

/// Renders a synthetic face clip and estimates its heart rate.
#[wasm_bindgen(js_name = readPulse)]
pub fn read_pulse(hr_bpm: f64, noise_sigma: f64, motion_px: f64, seconds: f64, seed: u32) -> Result<PulseReadout, JsError> {
    pulse_readout(hr_bpm, noise_sigma, motion_px, seconds, seed as u64).map_err(js)
}

/// `[lf_power, hf_power, lf_hf_ratio, rf_hz]`; absent values are NaN.
pub fn hrv_bands(mod_hz: f64, depth_s: f64, seconds: f64) -> Result<Vec<f64>> {
    let mut t = 0.0;
    let mut intervals = Vec::new();
    while t < seconds {
        let iv = 0.85 + depth_s * (2.0 * PI * mod_hz * t).sin();
        t += iv;
        intervals.push(iv);
    }
    let r = hrv_lf_hf(&IbiSeries::from_intervals(0.0, intervals)?)?;
    Ok(vec![
        r.lf_power,
        r.hf_power,
        r.lf_hf_ratio.unwrap_or(f64::NAN),
        r.rf_hz.unwrap_or(f64::NAN),
    ])
}

/// Normalised LF/HF power of beat intervals `0.85 + depth sin(2 pi f t)`.
#[wasm_bindgen(js_name = hrvBands)]
pub fn hrv_bands_js(mod_hz: f64, depth_s: f64, seconds: f64) -> Result<Vec<f64>, JsError> {
    hrv_bands(mod_hz, depth_s, seconds).map_err(js)
}

/// `[l1, neg_pearson, regression]` of `gain * sin` delayed by `shift`
/// frames against a 72 BPM label.
pub fn losses(shift: f64, gain: f64, alpha: f64) -> Result<Vec<f64>> {
    let f = 1.2;
    let z: Vec<f64> = (0..120).map(|i| (2.0 * PI * f * i as f64 / FS).sin()).collect();
    let y: Vec<f64> = (0..120)
        .map(|i| gain * (2.0 * PI * f * (i as f64 - shift) / FS).sin())
        .collect();
    Ok(vec![l1_loss(&y, &z)?, neg_pearson_loss(&y, &z)?, regression_loss(&y, &z, alpha)?])
}

#[wasm_bindgen(js_name = regressionLosses)]
pub fn regression_losses(shift: f64, gain: f64, alpha: f64) -> Result<Vec<f64>, JsError> {
    losses(shift, gain, alpha).map_err(js)
}
