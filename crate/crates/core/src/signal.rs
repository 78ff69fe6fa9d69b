//! Time/frequency transforms and the tensor types shared by all modules.
//!
//! The forward DFT is unscaled (`e^{-2 pi i ...}`); all normalization lives
//! in the synthesis window, which is the canonical dual of the analysis
//! window for the configured hop. Signals are padded by `window_length - hop`
//! zeros on both sides so every sample is covered by a full set of
//! overlapping windows, which makes the round trip exact up to rounding.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};

/// Multichannel time-domain signal: `samples` is channels x length.
#[derive(Debug, Clone)]
pub struct TimeDomainAudio {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl TimeDomainAudio {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(BssError::DimensionMismatch(format!(
                "audio must have at least one channel and one sample, got {}x{}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if sample_rate == 0 {
            return Err(BssError::InvalidConfig("sample rate must be positive".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(BssError::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Single channel as a new one-channel signal.
    pub fn channel(&self, index: usize) -> Result<Self> {
        if index >= self.channels() {
            return Err(BssError::DimensionMismatch(format!(
                "channel {index} out of range ({} channels)",
                self.channels()
            )));
        }
        let row = self.samples.row(index).insert_axis(ndarray::Axis(0));
        Ok(Self {
            samples: row.to_owned(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Complex spectrogram stack: `data` is channels-or-sources x frames x bins.
#[derive(Debug, Clone)]
pub struct SpectrogramTensor {
    pub data: Array3<Complex64>,
    pub frame_hop: usize,
    pub fft_length: usize,
}

impl SpectrogramTensor {
    pub fn new(data: Array3<Complex64>, frame_hop: usize, fft_length: usize) -> Self {
        Self { data, frame_hop, fft_length }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            data: Array3::zeros(other.data.raw_dim()),
            frame_hop: other.frame_hop,
            fft_length: other.fft_length,
        }
    }

    /// (channels, frames, bins)
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.data.dim();
        (d.0, d.1, d.2)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Window {
    #[default]
    Hann,
}

/// STFT framing parameters. Only half (2x) and three-quarter (4x) overlap
/// are supported; those are the two settings the pipeline is validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub window: Window,
    pub fft_length: usize,
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            window_length,
            hop,
            window: Window::Hann,
            fft_length: window_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_fft_length(mut self, fft_length: usize) -> Result<Self> {
        self.fft_length = fft_length;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop == 0 {
            return Err(BssError::InvalidConfig(
                "window length and hop must be positive".into(),
            ));
        }
        if self.window_length % self.hop != 0 {
            return Err(BssError::InvalidConfig(format!(
                "hop {} must divide window length {}",
                self.hop, self.window_length
            )));
        }
        let overlap = self.window_length / self.hop;
        if overlap != 2 && overlap != 4 {
            return Err(BssError::InvalidConfig(format!(
                "window/hop ratio must be 2 or 4, got {overlap}"
            )));
        }
        if self.fft_length < self.window_length {
            return Err(BssError::InvalidConfig(format!(
                "fft length {} must be >= window length {}",
                self.fft_length, self.window_length
            )));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    /// Edge padding applied on both sides of the signal.
    pub fn edge_pad(&self) -> usize {
        self.window_length - self.hop
    }

    /// Frame count for a signal of the given length.
    pub fn frames(&self, length: usize) -> usize {
        (length + self.edge_pad()).div_ceil(self.hop)
    }
}

/// Periodic Hann window.
pub fn hann_window(length: usize) -> Vec<f64> {
    (0..length)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / length as f64).cos()))
        .collect()
}

/// Canonical dual of the analysis window for the given hop:
/// `wd[i] = w[i] / sum_k w[i + k*hop]^2`.
fn synthesis_window(window: &[f64], hop: usize) -> Vec<f64> {
    let mut periodized = vec![0.0; hop];
    for (i, w) in window.iter().enumerate() {
        periodized[i % hop] += w * w;
    }
    window
        .iter()
        .enumerate()
        .map(|(i, w)| w / periodized[i % hop])
        .collect()
}

/// One-sided STFT of a multichannel signal.
pub fn stft(audio: &TimeDomainAudio, cfg: &StftConfig) -> Result<SpectrogramTensor> {
    cfg.validate()?;
    let length = audio.len();
    if cfg.window_length > length {
        return Err(BssError::SignalTooShort {
            window: cfg.window_length,
            length,
        });
    }
    let channels = audio.channels();
    let pad = cfg.edge_pad();
    let frames = cfg.frames(length);
    let bins = cfg.bins();
    let window = hann_window(cfg.window_length);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_length);
    let mut buf = vec![Complex64::default(); cfg.fft_length];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    let mut out = Array3::<Complex64>::zeros((channels, frames, bins));
    for m in 0..channels {
        let row = audio.samples.row(m);
        for t in 0..frames {
            buf.fill(Complex64::default());
            let start = t as isize * cfg.hop as isize - pad as isize;
            for (i, w) in window.iter().enumerate() {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < length {
                    buf[i] = Complex64::new(row[idx as usize] * w, 0.0);
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..bins {
                out[(m, t, f)] = buf[f];
            }
        }
    }
    Ok(SpectrogramTensor::new(out, cfg.hop, cfg.fft_length))
}

/// Overlap-add synthesis back to the time domain. The one-sided spectrum is
/// mirrored by conjugate symmetry; the output is truncated or zero-padded to
/// `length` samples.
pub fn istft(
    spec: &SpectrogramTensor,
    cfg: &StftConfig,
    length: usize,
    sample_rate: u32,
) -> Result<TimeDomainAudio> {
    cfg.validate()?;
    let (channels, frames, bins) = spec.shape();
    if bins != cfg.bins() {
        return Err(BssError::DimensionMismatch(format!(
            "spectrogram has {bins} bins but config implies {}",
            cfg.bins()
        )));
    }
    if spec.frame_hop != cfg.hop || spec.fft_length != cfg.fft_length {
        return Err(BssError::DimensionMismatch(format!(
            "spectrogram framing (hop {}, fft {}) does not match config (hop {}, fft {})",
            spec.frame_hop, spec.fft_length, cfg.hop, cfg.fft_length
        )));
    }
    if channels == 0 || frames == 0 {
        return Err(BssError::DimensionMismatch("empty spectrogram".into()));
    }

    let pad = cfg.edge_pad();
    let total = (frames - 1) * cfg.hop + cfg.window_length;
    let window = hann_window(cfg.window_length);
    let dual = synthesis_window(&window, cfg.hop);
    let nfft = cfg.fft_length;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);
    let mut buf = vec![Complex64::default(); nfft];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];

    let mut out = Array2::<f64>::zeros((channels, length));
    let mut acc = vec![0.0f64; total];
    for m in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for f in 0..bins {
                buf[f] = spec.data[(m, t, f)];
            }
            for f in bins..nfft {
                buf[f] = spec.data[(m, t, nfft - f)].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let base = t * cfg.hop;
            for i in 0..cfg.window_length {
                acc[base + i] += buf[i].re / nfft as f64 * dual[i];
            }
        }
        for i in 0..length {
            let idx = pad + i;
            if idx < total {
                out[(m, i)] = acc[idx];
            }
        }
    }
    TimeDomainAudio::new(out, sample_rate)
}
