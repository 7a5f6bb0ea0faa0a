//! Beat detection, interbeat intervals and their spectral analysis.

use super::spectrum::{peak_frequency, power_spectrum, PAD_FACTOR};
use super::{check_finite, estimate_hr_fft, Band};
use crate::error::{Error, Result};

/// Uniform resampling rate of the interval series, Hz.
pub const IBI_RESAMPLE_HZ: f64 = 4.0;
/// Intervals outside this range (seconds) are treated as artifacts.
pub const IBI_RANGE: (f64, f64) = (0.33, 2.0);
pub const MIN_INTERVALS: usize = 8;
pub const MIN_SPAN_S: f64 = 30.0;

/// Beat indices of a band-limited pulse trace.
///
/// A sample is a beat when it is a strict local maximum, reaches 0.6 of the
/// maximum over a centred window of 1.5 beat periods, and lies at least half
/// a period after the previous beat (the larger of two close candidates
/// wins). The beat period comes from [`estimate_hr_fft`] over the HR band.
pub fn detect_peaks(s: &[f64], fs: f64) -> Result<Vec<usize>> {
    let bpm = estimate_hr_fft(s, fs, Band::HR)?;
    let period = fs * 60.0 / bpm;
    let half_win = ((1.5 * period) / 2.0).round().max(1.0) as usize;
    let min_sep = (0.5 * period).round() as usize;
    let n = s.len();
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(s[i] > s[i - 1] && s[i] >= s[i + 1]) {
            continue;
        }
        let lo = i.saturating_sub(half_win);
        let hi = (i + half_win + 1).min(n);
        let local_max = s[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if s[i] < 0.6 * local_max {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < min_sep => {
                if s[i] > s[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    Ok(peaks)
}

/// Interbeat-interval series. `times[0]` is the first beat and
/// `times[i + 1] = times[i] + intervals[i]`, so an artifact interval that
/// was dropped closes up the time axis behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct IbiSeries {
    pub times: Vec<f64>,
    pub intervals: Vec<f64>,
}

impl IbiSeries {
    /// Builds the series from a first beat time and a list of intervals.
    pub fn from_intervals(start: f64, intervals: Vec<f64>) -> Result<Self> {
        if intervals.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("interbeat intervals must be positive and finite"));
        }
        let mut times = Vec::with_capacity(intervals.len() + 1);
        times.push(start);
        for d in &intervals {
            times.push(times[times.len() - 1] + d);
        }
        Ok(IbiSeries { times, intervals })
    }

    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// Intervals between consecutive beats, seconds, with artifacts outside
/// [`IBI_RANGE`] removed.
pub fn interbeat_intervals(peaks: &[usize], fs: f64) -> Result<IbiSeries> {
    if peaks.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 beats, got {}", peaks.len())));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
    }
    let intervals: Vec<f64> = peaks
        .windows(2)
        .map(|w| (w[1] as f64 - w[0] as f64) / fs)
        .filter(|&d| (IBI_RANGE.0..=IBI_RANGE.1).contains(&d))
        .collect();
    if intervals.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} plausible interbeat intervals",
            intervals.len()
        )));
    }
    IbiSeries::from_intervals(peaks[0] as f64 / fs, intervals)
}

/// Natural cubic spline through `(x, y)`, evaluated at `at` (clamped to the
/// knot range).
pub fn cubic_spline(x: &[f64], y: &[f64], at: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2 && y.len() == n);
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives, natural end conditions; Thomas algorithm
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..k {
            let f = h[i] / diag[i - 1];
            diag[i] -= f * h[i];
            rhs[i] -= f * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    let mut seg = 0;
    at.iter()
        .map(|&t| {
            let t = t.clamp(x[0], x[n - 1]);
            while seg + 2 < n && t > x[seg + 1] {
                seg += 1;
            }
            while seg > 0 && t < x[seg] {
                seg -= 1;
            }
            let (x0, x1, hi) = (x[seg], x[seg + 1], h[seg]);
            let (a, b) = ((x1 - t) / hi, (t - x0) / hi);
            a * y[seg]
                + b * y[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hi * hi / 6.0
        })
        .collect()
}

/// Mean-removed interval series on a uniform [`IBI_RESAMPLE_HZ`] grid, or
/// `None` when it has no variability.
fn resampled_tachogram(ibi: &IbiSeries) -> Result<Option<Vec<f64>>> {
    check_finite(&ibi.intervals, "ibi")?;
    if ibi.intervals.len() < MIN_INTERVALS || ibi.span() < MIN_SPAN_S {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_INTERVALS} intervals spanning {MIN_SPAN_S} s, got {} over {:.1} s",
            ibi.intervals.len(),
            ibi.span()
        )));
    }
    let x = &ibi.times[1..];
    let n_grid = ((x[x.len() - 1] - x[0]) * IBI_RESAMPLE_HZ).floor() as usize + 1;
    let grid: Vec<f64> = (0..n_grid).map(|i| x[0] + i as f64 / IBI_RESAMPLE_HZ).collect();
    let mut r = cubic_spline(x, &ibi.intervals, &grid);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter_mut().for_each(|v| *v -= mean);
    let var = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
    if var.sqrt() <= 1e-9 * mean.abs() {
        return Ok(None);
    }
    Ok(Some(r))
}

fn tachogram_spectrum(r: &[f64]) -> (Vec<f64>, f64) {
    let n_fft = (PAD_FACTOR * r.len()).next_power_of_two();
    (power_spectrum(r, n_fft, true), IBI_RESAMPLE_HZ / n_fft as f64)
}

/// Frequency-domain heart-rate variability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvReport {
    /// Normalised LF power; `lf_power + hf_power` is 1 unless both are 0.
    pub lf_power: f64,
    pub hf_power: f64,
    /// `lf_power / hf_power`, absent when HF power is zero.
    pub lf_hf_ratio: Option<f64>,
    /// Respiratory frequency, absent without respiratory modulation.
    pub rf_hz: Option<f64>,
}

impl HrvReport {
    pub fn ratio(&self) -> Result<f64> {
        self.lf_hf_ratio.ok_or(Error::RatioUndefined)
    }
}

/// LF (`[0.04, 0.15)` Hz) and HF (`[0.15, 0.4]` Hz) power of the
/// Hann-windowed periodogram of the interval series, resampled at 4 Hz by
/// a natural cubic spline. A series without variability reports zero power
/// and no ratio.
pub fn hrv_lf_hf(ibi: &IbiSeries) -> Result<HrvReport> {
    let Some(r) = resampled_tachogram(ibi)? else {
        return Ok(HrvReport {
            lf_power: 0.0,
            hf_power: 0.0,
            lf_hf_ratio: None,
            rf_hz: None,
        });
    };
    let (power, bin_hz) = tachogram_spectrum(&r);
    let (mut lf, mut hf) = (0.0, 0.0);
    for (k, p) in power.iter().enumerate() {
        let f = k as f64 * bin_hz;
        if (Band::LF.lo..Band::LF.hi).contains(&f) {
            lf += p;
        } else if (Band::HF.lo..=Band::HF.hi).contains(&f) {
            hf += p;
        }
    }
    let total = lf + hf;
    let (lf_power, hf_power) = if total > 0.0 { (lf / total, hf / total) } else { (0.0, 0.0) };
    Ok(HrvReport {
        lf_power,
        hf_power,
        lf_hf_ratio: (hf_power > 0.0).then(|| lf_power / hf_power),
        rf_hz: peak_frequency(&power, bin_hz, Band::RESPIRATION),
    })
}

/// Respiratory frequency read from respiratory sinus arrhythmia: the peak
/// of the interval-series periodogram within `[0.1, 0.5]` Hz.
pub fn respiratory_frequency(ibi: &IbiSeries) -> Result<f64> {
    let r = resampled_tachogram(ibi)?.ok_or(Error::NoRespiratoryModulation)?;
    let (power, bin_hz) = tachogram_spectrum(&r);
    peak_frequency(&power, bin_hz, Band::RESPIRATION).ok_or(Error::NoRespiratoryModulation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(period: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * i as f64 / period).sin()).collect()
    }

    /// Beats whose instantaneous interval is `0.8 + 0.05 sin(2 pi f t)`.
    fn modulated(f: f64, secs: f64) -> IbiSeries {
        let mut t = 0.0;
        let mut intervals = Vec::new();
        while t < secs {
            let d = 0.8 + 0.05 * (2.0 * PI * f * t).sin();
            intervals.push(d);
            t += d;
        }
        IbiSeries::from_intervals(0.0, intervals).unwrap()
    }

    /// Band fractions of the analytic modulation sampled on the 4 Hz grid,
    /// via a direct DFT at the Fourier frequencies.
    fn dft_band_fractions(f: f64, secs: f64) -> (f64, f64) {
        let n = (secs * IBI_RESAMPLE_HZ) as usize;
        let x: Vec<f64> = (0..n).map(|i| 0.05 * (2.0 * PI * f * i as f64 / IBI_RESAMPLE_HZ).sin()).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
        let (mut lf, mut hf) = (0.0, 0.0);
        for k in 0..=n / 2 {
            let fk = k as f64 * IBI_RESAMPLE_HZ / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x[i] * w[i] * a.cos();
                im += x[i] * w[i] * a.sin();
            }
            let p = re * re + im * im;
            if (0.04..0.15).contains(&fk) {
                lf += p;
            } else if (0.15..=0.4).contains(&fk) {
                hf += p;
            }
        }
        (lf / (lf + hf), hf / (lf + hf))
    }

    #[test]
    fn sine_peaks_are_one_period_apart() {
        let s = sine(25.0, 1800);
        let p = detect_peaks(&s, 30.0).unwrap();
        for w in p.windows(2) {
            assert!((w[1] as i64 - w[0] as i64 - 25).abs() <= 1);
        }
        let s = sine(25.0, 1800);
        assert!((p.len() as i64 - 72).abs() <= 1, "{}", p.len());
        let scaled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(detect_peaks(&scaled, 30.0).unwrap(), p);
    }

    #[test]
    fn intervals_from_peaks() {
        let ibi = interbeat_intervals(&[0, 30, 60], 30.0).unwrap();
        assert_eq!(ibi.intervals, vec![1.0, 1.0]);
        let ibi = interbeat_intervals(&[0, 30, 120, 150, 180], 30.0).unwrap();
        assert_eq!(ibi.intervals, vec![1.0, 1.0, 1.0]);
        let ibi = interbeat_intervals(&[0, 25, 50, 75], 30.0).unwrap();
        assert!(ibi.intervals.iter().all(|d| (d - 0.8333).abs() < 1e-4));
        assert!(interbeat_intervals(&[0, 30], 30.0).is_err());
    }

    #[test]
    fn spline_reproduces_cubic_free_data() {
        let x = [0.0, 0.7, 1.5, 2.0, 3.1];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let at = [0.0, 0.3, 1.0, 2.5, 3.1];
        for (a, v) in at.iter().zip(cubic_spline(&x, &y, &at)) {
            assert!((v - (2.0 * a - 1.0)).abs() < 1e-12);
        }
        let knots = cubic_spline(&x, &[1.0, 3.0, -2.0, 0.5, 4.0], &x);
        assert_eq!(knots[2], -2.0);
    }

    #[test]
    fn band_fractions_follow_modulation() {
        for (f, lf_dominant) in [(0.1, true), (0.25, false)] {
            let secs = 180.0;
            let rep = hrv_lf_hf(&modulated(f, secs)).unwrap();
            let (olf, ohf) = dft_band_fractions(f, secs);
            assert!((rep.lf_power + rep.hf_power - 1.0).abs() < 1e-12);
            if lf_dominant {
                assert!(rep.lf_power > 0.9 && olf > 0.9, "{rep:?} {olf}");
            } else {
                assert!(rep.hf_power > 0.9 && ohf > 0.9, "{rep:?} {ohf}");
            }
            assert!((rep.lf_power - olf).abs() < 0.05);
        }
    }

    #[test]
    fn respiratory_peak() {
        for f in [0.15, 0.25] {
            let rf = respiratory_frequency(&modulated(f, 180.0)).unwrap();
            assert!((rf - f).abs() < 0.01, "{f}: {rf}");
        }
    }

    #[test]
    fn constant_intervals() {
        let ibi = IbiSeries::from_intervals(0.0, vec![0.8; 60]).unwrap();
        let rep = hrv_lf_hf(&ibi).unwrap();
        assert_eq!((rep.lf_power, rep.hf_power), (0.0, 0.0));
        assert!(matches!(rep.ratio(), Err(Error::RatioUndefined)));
        assert!(matches!(respiratory_frequency(&ibi), Err(Error::NoRespiratoryModulation)));
    }

    #[test]
    fn short_series_rejected() {
        let ibi = IbiSeries::from_intervals(0.0, vec![0.8; 20]).unwrap();
        assert!(matches!(hrv_lf_hf(&ibi), Err(Error::InsufficientData(_))));
    }
}
