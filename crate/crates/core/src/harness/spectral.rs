//! Welch transfer-function and amplitude-spectrum estimates.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::control::log_slope;

/// Standard gravity used to express spectra in g.
pub const STANDARD_GRAVITY: f64 = 9.8;

/// Fewest Welch segments accepted by [`transmissibility`].
pub const MIN_SEGMENTS: usize = 8;

/// Shortest record accepted by [`spectrum`].
pub const MIN_SPECTRUM_SAMPLES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("insufficient data: {got} available, {needed} needed")]
    InsufficientData { needed: usize, got: usize },
    #[error("input and output lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid spectral parameter: {0}")]
    BadParameter(String),
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos())).collect()
}

struct Segmenter {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Segmenter {
    fn new(len: usize) -> Self {
        Self { fft: FftPlanner::new().plan_fft_forward(len), window: hann(len) }
    }

    /// Mean-removed, windowed FFT of `x`.
    fn transform(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let mut buf: Vec<Complex<f64>> =
            x.iter().zip(&self.window).map(|(v, w)| Complex::new((v - mean) * w, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }
}

fn segment_starts(n: usize, len: usize) -> Vec<usize> {
    let hop = (len / 2).max(1);
    if n < len {
        return Vec::new();
    }
    (0..=(n - len) / hop).map(|k| k * hop).collect()
}

/// Averaged cross-spectral transfer estimate `H = S_xy / S_xx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferEstimate {
    pub frequency_hz: Vec<f64>,
    pub response: Vec<Complex<f64>>,
    /// Averaged input auto-spectrum per bin (arbitrary units).
    pub input_power: Vec<f64>,
    pub coherence: Vec<f64>,
    pub segments: usize,
}

impl TransferEstimate {
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.response.iter().map(|h| 20.0 * h.norm().log10()).collect()
    }

    fn band(&self, f_lo: f64, f_hi: f64) -> Vec<(f64, f64)> {
        self.frequency_hz
            .iter()
            .zip(self.magnitude_db())
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(f, d)| (*f, d))
            .collect()
    }

    /// Least-squares slope of magnitude (dB) against `log10 f` in a band.
    pub fn slope_db_per_decade(&self, f_lo: f64, f_hi: f64) -> Result<f64, SpectralError> {
        let pts = self.band(f_lo, f_hi);
        if pts.len() < 2 {
            return Err(SpectralError::InsufficientData { needed: 2, got: pts.len() });
        }
        Ok(log_slope(&pts))
    }

    /// First -3 dB crossing after the magnitude peak, searched within
    /// `[f_lo, f_hi]` and interpolated in `log f`.
    pub fn cutoff_hz(&self, f_lo: f64, f_hi: f64) -> Option<f64> {
        cutoff_from_curve(&self.band(f_lo, f_hi))
    }
}

/// `-3 dB` crossing after the peak of a `(f, dB)` curve.
pub fn cutoff_from_curve(curve: &[(f64, f64)]) -> Option<f64> {
    let peak = curve.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?.0;
    curve[peak..].windows(2).find(|w| w[0].1 >= -3.0 && w[1].1 < -3.0).map(|w| {
        let (f0, d0) = w[0];
        let (f1, d1) = w[1];
        let s = (-3.0 - d0) / (d1 - d0);
        10f64.powf(f0.log10() + s * (f1.log10() - f0.log10()))
    })
}

/// Welch estimate of the transfer from `input` to `output` with Hann
/// windows, 50% overlap and per-segment mean removal.
pub fn transmissibility(
    input: &[f64],
    output: &[f64],
    sample_rate: f64,
    segment_len: usize,
) -> Result<TransferEstimate, SpectralError> {
    if input.len() != output.len() {
        return Err(SpectralError::LengthMismatch(input.len(), output.len()));
    }
    if !(sample_rate > 0.0) || segment_len < 4 {
        return Err(SpectralError::BadParameter("need a positive sample rate and segments of at least 4".into()));
    }
    let starts = segment_starts(input.len(), segment_len);
    if starts.len() < MIN_SEGMENTS {
        return Err(SpectralError::InsufficientData { needed: MIN_SEGMENTS, got: starts.len() });
    }
    let seg = Segmenter::new(segment_len);
    let bins = segment_len / 2;
    let mut sxx = vec![0.0; bins + 1];
    let mut syy = vec![0.0; bins + 1];
    let mut sxy = vec![Complex::new(0.0, 0.0); bins + 1];
    for &s in &starts {
        let x = seg.transform(&input[s..s + segment_len]);
        let y = seg.transform(&output[s..s + segment_len]);
        for k in 1..=bins {
            sxx[k] += x[k].norm_sqr();
            syy[k] += y[k].norm_sqr();
            sxy[k] += x[k].conj() * y[k];
        }
    }
    let mut est = TransferEstimate {
        frequency_hz: Vec::new(),
        response: Vec::new(),
        input_power: Vec::new(),
        coherence: Vec::new(),
        segments: starts.len(),
    };
    let m = starts.len() as f64;
    for k in 1..=bins {
        if !(sxx[k] > 0.0) {
            continue;
        }
        est.frequency_hz.push(k as f64 * sample_rate / segment_len as f64);
        est.response.push(sxy[k] / sxx[k]);
        est.input_power.push(sxx[k] / m);
        let coh = if syy[k] > 0.0 { sxy[k].norm_sqr() / (sxx[k] * syy[k]) } else { 0.0 };
        est.coherence.push(coh);
    }
    Ok(est)
}

/// Single-sided amplitude spectrum in g.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum {
    pub frequency_hz: Vec<f64>,
    /// Sinusoid amplitude per bin (g), Hann-corrected.
    pub amplitude_g: Vec<f64>,
    pub segment_len: usize,
    /// Equivalent noise bandwidth of the window, in bins.
    pub enbw_bins: f64,
}

impl AmplitudeSpectrum {
    /// Frequency of the largest bin and the amplitude of the tone there,
    /// taken from the power in the window main lobe so that it does not
    /// depend on where the tone falls between bins.
    pub fn peak(&self) -> Option<(f64, f64)> {
        let (k, _) = self.amplitude_g.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        let lobe = &self.amplitude_g[k.saturating_sub(2)..(k + 3).min(self.amplitude_g.len())];
        let power: f64 = lobe.iter().map(|a| a * a).sum::<f64>() / self.enbw_bins;
        Some((self.frequency_hz[k], power.sqrt()))
    }

    /// Signal power (g^2) between `f_lo` and `f_hi`.
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.frequency_hz
            .iter()
            .zip(&self.amplitude_g)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, a)| a * a / (2.0 * self.enbw_bins))
            .sum()
    }
}

/// Welch-averaged amplitude spectrum of an acceleration record (m/s^2),
/// reported in g. Segments are the largest power of two up to 16384 that
/// fits the record.
pub fn spectrum(accel: &[f64], sample_rate: f64) -> Result<AmplitudeSpectrum, SpectralError> {
    if accel.len() < MIN_SPECTRUM_SAMPLES {
        return Err(SpectralError::InsufficientData { needed: MIN_SPECTRUM_SAMPLES, got: accel.len() });
    }
    if !(sample_rate > 0.0) {
        return Err(SpectralError::BadParameter("sample rate must be positive".into()));
    }
    let mut len = 1usize;
    while len * 2 <= accel.len().min(16384) {
        len *= 2;
    }
    let seg = Segmenter::new(len);
    let starts = segment_starts(accel.len(), len);
    let bins = len / 2;
    let mut power = vec![0.0; bins + 1];
    for &s in &starts {
        let x = seg.transform(&accel[s..s + len]);
        for k in 0..=bins {
            power[k] += x[k].norm_sqr();
        }
    }
    let sum_w: f64 = seg.window.iter().sum();
    let sum_w2: f64 = seg.window.iter().map(|w| w * w).sum();
    let m = starts.len() as f64;
    Ok(AmplitudeSpectrum {
        frequency_hz: (1..=bins).map(|k| k as f64 * sample_rate / len as f64).collect(),
        amplitude_g: (1..=bins).map(|k| 2.0 * (power[k] / m).sqrt() / sum_w / STANDARD_GRAVITY).collect(),
        segment_len: len,
        enbw_bins: len as f64 * sum_w2 / (sum_w * sum_w),
    })
}
