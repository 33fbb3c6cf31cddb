use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::PipelineError;
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessOp {
    /// Scale by the largest magnitude so every value lies in [-1, 1].
    Normalize,
    /// Drop values whose magnitude is below the threshold.
    RemoveSilence { threshold: f64 },
    /// Trailing moving average over `window` values.
    RemoveNoise { window: usize },
    /// Zero every spectral bin outside [f_lo, f_hi] Hz.
    CropAudio { f_lo: f64, f_hi: f64 },
}

pub fn preprocess(sample: &Sample, ops: &[PreprocessOp]) -> Result<Sample, PipelineError> {
    let mut out = sample.clone();
    for op in ops {
        out.values = match *op {
            PreprocessOp::Normalize => normalize(&out.values),
            PreprocessOp::RemoveSilence { threshold } => remove_silence(&out.values, threshold)?,
            PreprocessOp::RemoveNoise { window } => remove_noise(&out.values, window)?,
            PreprocessOp::CropAudio { f_lo, f_hi } => crop_audio(&out.values, out.rate, f_lo, f_hi)?,
        };
    }
    Ok(out)
}

pub fn normalize(values: &[f64]) -> Vec<f64> {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return values.to_vec();
    }
    values.iter().map(|v| v / peak).collect()
}

pub fn remove_silence(values: &[f64], threshold: f64) -> Result<Vec<f64>, PipelineError> {
    if !(threshold >= 0.0) {
        return Err(PipelineError::BadThreshold(threshold));
    }
    let kept: Vec<f64> = values.iter().copied().filter(|v| v.abs() >= threshold).collect();
    if kept.is_empty() {
        return Err(PipelineError::EmptyAfterSilenceRemoval);
    }
    Ok(kept)
}

pub fn remove_noise(values: &[f64], window: usize) -> Result<Vec<f64>, PipelineError> {
    if window == 0 {
        return Err(PipelineError::BadWindow);
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// Frequency in Hz represented by bin `k` of an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize, rate: u32) -> f64 {
    let k = k.min(n - k);
    k as f64 * f64::from(rate) / n as f64
}

pub fn crop_audio(values: &[f64], rate: u32, f_lo: f64, f_hi: f64) -> Result<Vec<f64>, PipelineError> {
    let nyquist = f64::from(rate) / 2.0;
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist) {
        return Err(PipelineError::BadBand {
            lo: f_lo,
            hi: f_hi,
            nyquist,
        });
    }
    let n = values.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = bin_frequency(k, n, rate);
        if f < f_lo || f > f_hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}
