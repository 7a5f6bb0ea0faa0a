//! Post-processing from an rPPG trace to heart rate, heart-rate variability
//! and respiratory frequency.

pub mod csv;
pub mod filter;
pub mod hrv;
pub mod spectrum;

pub use filter::{bandpass, detrend};
pub use hrv::{detect_peaks, hrv_lf_hf, interbeat_intervals, respiratory_frequency, HrvReport, IbiSeries};
pub use spectrum::estimate_hr_fft;

use crate::error::{Error, Result};

/// A closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// 45-150 BPM.
    pub const HR: Band = Band { lo: 0.75, hi: 2.5 };
    pub const LF: Band = Band { lo: 0.04, hi: 0.15 };
    pub const HF: Band = Band { lo: 0.15, hi: 0.4 };
    pub const RESPIRATION: Band = Band { lo: 0.1, hi: 0.5 };

    pub const fn new(lo: f64, hi: f64) -> Self {
        Band { lo, hi }
    }

    /// Checks `0 < lo < hi < fs/2`.
    pub fn check(&self, fs: f64) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < fs / 2.0) {
            return Err(Error::invalid(format!(
                "band [{}, {}] Hz must satisfy 0 < lo < hi < fs/2 = {}",
                self.lo,
                self.hi,
                fs / 2.0
            )));
        }
        Ok(())
    }
}

/// Settings of the trace-to-heart-rate chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalConfig {
    pub hr_band: Band,
    pub detrend_lambda: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            hr_band: Band::HR,
            detrend_lambda: 100.0,
        }
    }
}

/// Detrend, band-limit and read out the heart rate of a trace, in BPM.
pub fn heart_rate(trace: &[f64], fs: f64, cfg: &SignalConfig) -> Result<f64> {
    let d = detrend(trace, cfg.detrend_lambda)?;
    let b = bandpass(&d, fs, cfg.hr_band)?;
    estimate_hr_fft(&b, fs, cfg.hr_band)
}

pub(crate) fn check_finite(s: &[f64], op: &'static str) -> Result<()> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pulse_like() -> impl Strategy<Value = Vec<f64>> {
        (0.8f64..2.4, 0.0f64..0.8, 0.0f64..6.3, prop::collection::vec(-0.3f64..0.3, 600)).prop_map(
            |(f, h, ph, noise)| {
                noise
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let a = 2.0 * PI * f * i as f64 / 30.0 + ph;
                        a.sin() + h * (2.0 * a).sin() + e
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn hr_is_amplitude_invariant(s in pulse_like(), a in 0.01f64..100.0, k in -8i32..8) {
            let base = estimate_hr_fft(&s, 30.0, Band::HR).unwrap();
            let pow2: Vec<f64> = s.iter().map(|v| v * 2f64.powi(k)).collect();
            prop_assert_eq!(estimate_hr_fft(&pow2, 30.0, Band::HR).unwrap(), base);
            let scaled: Vec<f64> = s.iter().map(|v| v * a).collect();
            let hr = estimate_hr_fft(&scaled, 30.0, Band::HR).unwrap();
            prop_assert!((hr - base).abs() <= 1e-9 * base);
        }

        #[test]
        fn bandpass_is_idempotent(s in pulse_like()) {
            let once = bandpass(&s, 30.0, Band::HR).unwrap();
            let twice = bandpass(&once, 30.0, Band::HR).unwrap();
            let rms = (once.iter().zip(&twice).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
            prop_assert!(rms < 1e-9);
        }

        #[test]
        fn peaks_ignore_doubling(s in pulse_like()) {
            let b = bandpass(&s, 30.0, Band::HR).unwrap();
            let doubled: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
            prop_assert_eq!(detect_peaks(&b, 30.0).unwrap(), detect_peaks(&doubled, 30.0).unwrap());
        }

        #[test]
        fn intervals_telescope(mut peaks in prop::collection::vec(0usize..5000, 3..60)) {
            peaks.sort_unstable();
            peaks.dedup();
            if let Ok(ibi) = interbeat_intervals(&peaks, 30.0) {
                let total = ibi.intervals.iter().fold(ibi.times[0], |acc, d| acc + d);
                prop_assert_eq!(total, *ibi.times.last().unwrap());
                prop_assert!(ibi.intervals.iter().all(|&d| d > 0.0));
            }
        }

        #[test]
        fn hrv_powers_normalised(f in 0.05f64..0.38, depth in 0.01f64..0.1) {
            let mut t = 0.0;
            let mut iv = Vec::new();
            while t < 120.0 {
                let d = 0.9 + depth * (2.0 * PI * f * t).sin();
                iv.push(d);
                t += d;
            }
            let rep = hrv_lf_hf(&IbiSeries::from_intervals(0.0, iv).unwrap()).unwrap();
            prop_assert!(rep.lf_power >= 0.0 && rep.hf_power >= 0.0);
            if let Some(r) = rep.lf_hf_ratio {
                prop_assert!((rep.lf_power + rep.hf_power - 1.0).abs() < 1e-12);
                prop_assert!((r - rep.lf_power / rep.hf_power).abs() <= 1e-12 * r.max(1.0));
            }
        }
    }
}
