use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_finite, Band};
use crate::error::{Error, Result};

/// Minimum zero-padding factor of the heart-rate periodogram.
pub const PAD_FACTOR: usize = 8;

/// One-sided power spectrum `|X_k|^2`, `k = 0..=n_fft/2`, of `x` zero-padded
/// to `n_fft` samples, optionally Hann-windowed.
pub fn power_spectrum(x: &[f64], n_fft: usize, hann: bool) -> Vec<f64> {
    assert!(n_fft >= x.len() && n_fft > 0);
    let n = x.len();
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (i, &v) in x.iter().enumerate() {
        let w = if hann && n > 1 {
            0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()
        } else {
            1.0
        };
        buf[i] = Complex::new(v * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf[..=n_fft / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Location of the largest spectral bin whose frequency lies in `band`,
/// refined by a parabola through it and its neighbours. Returns the peak
/// frequency in Hz, or `None` when the band holds no power.
pub fn peak_frequency(power: &[f64], bin_hz: f64, band: Band) -> Option<f64> {
    let lo = (band.lo / bin_hz).ceil().max(0.0) as usize;
    let hi = ((band.hi / bin_hz).floor() as usize).min(power.len().checked_sub(1)?);
    if lo > hi {
        return None;
    }
    let mut k = lo;
    for j in lo..=hi {
        if power[j] > power[k] {
            k = j;
        }
    }
    if power[k].is_nan() || power[k] <= 0.0 {
        return None;
    }
    let mut delta = 0.0;
    if k > 0 && k + 1 < power.len() {
        let (a, b, c) = (power[k - 1], power[k], power[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Some(((k as f64 + delta) * bin_hz).clamp(band.lo, band.hi))
}

/// Heart rate in BPM from the Hann-windowed, zero-padded periodogram peak
/// inside `band`. The signal mean is removed first.
pub fn estimate_hr_fft(s: &[f64], fs: f64, band: Band) -> Result<f64> {
    band.check(fs)?;
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {}", s.len())));
    }
    check_finite(s, "estimate_hr_fft")?;
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let centred: Vec<f64> = s.iter().map(|v| v - mean).collect();
    if centred.iter().all(|&v| v == 0.0) {
        return Err(Error::NoPulseEnergy);
    }
    let n_fft = (PAD_FACTOR * s.len()).next_power_of_two();
    let power = power_spectrum(&centred, n_fft, true);
    let f = peak_frequency(&power, fs / n_fft as f64, band).ok_or(Error::NoPulseEnergy)?;
    Ok(60.0 * f)
}
