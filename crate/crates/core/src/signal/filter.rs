use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_finite, Band};
use crate::error::{Error, Result};

/// Smoothness-prior detrending: returns `s - trend` where
/// `trend = (I + lambda^2 D2' D2)^-1 s` and `D2` is the second-difference
/// operator. The system is pentadiagonal and solved by banded Cholesky.
pub fn detrend(s: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = s.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("detrend needs at least 3 samples, got {n}")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("detrend lambda must be finite and >= 0, got {lambda}")));
    }
    check_finite(s, "detrend")?;
    let trend = smoothness_prior_solve(s, lambda * lambda);
    Ok(s.iter().zip(&trend).map(|(x, t)| x - t).collect())
}

/// Solves `(I + mu D2' D2) x = b`.
fn smoothness_prior_solve(b: &[f64], mu: f64) -> Vec<f64> {
    const P: usize = 2;
    let n = b.len();
    // band[i][d] holds A[i][i - d]
    let mut band = vec![[0.0f64; P + 1]; n];
    for row in band.iter_mut() {
        row[0] = 1.0;
    }
    let c = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for a in 0..3 {
            for bb in 0..=a {
                band[k + a][a - bb] += mu * c[a] * c[bb];
            }
        }
    }
    // in-place banded Cholesky, L stored in the same layout
    for i in 0..n {
        for j in i.saturating_sub(P)..=i {
            let mut sum = band[i][i - j];
            for k in i.saturating_sub(P)..j {
                sum -= band[i][i - k] * band[j][j - k];
            }
            band[i][i - j] = if i == j { sum.sqrt() } else { sum / band[j][0] };
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in i.saturating_sub(P)..i {
            sum -= band[i][i - k] * y[k];
        }
        y[i] = sum / band[i][0];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..(i + P + 1).min(n) {
            sum -= band[k][k - i] * x[k];
        }
        x[i] = sum / band[i][0];
    }
    x
}

/// Zero-phase FFT-mask band-pass: bins whose frequency lies outside
/// `[lo, hi]` are zeroed.
pub fn bandpass(s: &[f64], fs: f64, band: Band) -> Result<Vec<f64>> {
    band.check(fs)?;
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!("bandpass needs at least 2 samples, got {}", s.len())));
    }
    check_finite(s, "bandpass")?;
    let n = s.len();
    let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band.lo || f > band.hi {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|v| v.re / n as f64).collect())
}
