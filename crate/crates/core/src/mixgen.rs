//! Synthetic test-signal and mixture generation.
//!
//! Sources are plucked harmonic tones (re-struck every `note_period`
//! seconds, partial k at amplitude `k^-amplitude_decay` decaying at
//! `temporal_decay * sqrt(k)` per second, with vibrato and per-note gain
//! jitter), band-passed noise, or file-backed signals. Mixing is an
//! instantaneous matrix, explicit FIR filters, or seeded exponentially
//! decaying reverb filters around a structured direct path. Everything is
//! deterministic given the spec seed.

use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::signal::TimeDomainAudio;
use crate::wav;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicTone {
    pub f0: f64,
    pub partials: usize,
    /// Partial k enters at amplitude `k^-amplitude_decay`.
    pub amplitude_decay: f64,
    /// Partial k decays at `temporal_decay * sqrt(k)` nepers per second
    /// from each note onset.
    pub temporal_decay: f64,
    /// Seconds between note onsets (the tone is re-struck).
    pub note_period: f64,
    /// Raised-cosine attack time in seconds.
    pub attack: f64,
    /// Vibrato excursion as a fraction of f0.
    pub vibrato_depth: f64,
    /// Vibrato rate in Hz.
    pub vibrato_rate: f64,
    /// Per-note gain jitter, uniform in +- this many dB.
    pub gain_jitter_db: f64,
}

impl Default for HarmonicTone {
    fn default() -> Self {
        Self {
            f0: 220.0,
            partials: 10,
            amplitude_decay: 1.0,
            temporal_decay: 4.0,
            note_period: 0.62,
            attack: 0.001,
            vibrato_depth: 0.006,
            vibrato_rate: 4.5,
            gain_jitter_db: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SourceSpec {
    HarmonicTone(HarmonicTone),
    /// White noise through a windowed-sinc band-pass.
    FilteredNoise { low_hz: f64, high_hz: f64 },
    /// First channel of a WAV file; must match the spec sample rate.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Mixing {
    /// Channels-by-sources gain matrix applied sample-wise.
    Instantaneous { gains: Array2<f64> },
    /// Explicit per-(channel, source) FIR filters.
    Convolutive { filters: Vec<Vec<Vec<f64>>> },
    /// Seeded random FIRs: a direct path of `gains[m][n]` at
    /// `delays[m][n]` samples plus an exponentially decaying noise tail
    /// whose energy sits `direct_to_reverb_db` below the direct path.
    SeededReverb {
        gains: Array2<f64>,
        delays: Vec<Vec<usize>>,
        taps: usize,
        /// Tail decay time constant in seconds.
        decay: f64,
        direct_to_reverb_db: f64,
    },
}

impl Mixing {
    /// (channels, sources)
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self {
            Mixing::Instantaneous { gains } => Ok((gains.nrows(), gains.ncols())),
            Mixing::Convolutive { filters } => {
                let m = filters.len();
                let n = filters.first().map_or(0, |r| r.len());
                if filters.iter().any(|r| r.len() != n) {
                    return Err(BssError::InvalidConfig(
                        "ragged convolutive filter table".into(),
                    ));
                }
                Ok((m, n))
            }
            Mixing::SeededReverb { gains, delays, .. } => {
                if delays.len() != gains.nrows()
                    || delays.iter().any(|r| r.len() != gains.ncols())
                {
                    return Err(BssError::InvalidConfig(
                        "delay table does not match gain matrix".into(),
                    ));
                }
                Ok((gains.nrows(), gains.ncols()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixSpec {
    pub sources: Vec<SourceSpec>,
    pub mixing: Mixing,
    /// Ambient white noise level as mixture-to-noise ratio in dB.
    pub snr_ambient_db: Option<f64>,
    /// Seconds.
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

/// Default two-source desk-scale scenario: plucked harmonic tones at 220 and
/// 311 Hz under instantaneous mixing with 30 dB ambient noise.
pub fn det2_harmonic(seed: u64) -> MixSpec {
    MixSpec {
        sources: vec![
            SourceSpec::HarmonicTone(HarmonicTone::default()),
            SourceSpec::HarmonicTone(HarmonicTone {
                f0: 311.0,
                note_period: 0.87,
                vibrato_rate: 5.5,
                ..HarmonicTone::default()
            }),
        ],
        mixing: Mixing::Instantaneous {
            gains: Array2::from_shape_vec((2, 2), vec![1.0, 0.6, 0.6, 1.0]).unwrap(),
        },
        snr_ambient_db: Some(30.0),
        duration: 5.0,
        sample_rate: 16_000,
        seed,
    }
}

/// Convolutive variant of [`det2_harmonic`]: 512-tap seeded reverb filters
/// (20 ms decay) around the same direct-path gains.
pub fn det2_harmonic_convolutive(seed: u64) -> MixSpec {
    let mut spec = det2_harmonic(seed);
    spec.mixing = Mixing::SeededReverb {
        gains: Array2::from_shape_vec((2, 2), vec![1.0, 0.6, 0.6, 1.0]).unwrap(),
        delays: vec![vec![1, 5], vec![6, 2]],
        taps: 512,
        decay: 0.020,
        direct_to_reverb_db: 12.0,
    };
    spec
}

impl MixSpec {
    pub fn channels(&self) -> usize {
        self.mixing.dims().map(|(m, _)| m).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(BssError::InvalidConfig("no sources".into()));
        }
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(BssError::InvalidConfig(
                "duration and sample rate must be positive".into(),
            ));
        }
        let (channels, sources) = self.mixing.dims()?;
        if sources != self.sources.len() {
            return Err(BssError::DimensionMismatch(format!(
                "mixing expects {sources} sources but spec lists {}",
                self.sources.len()
            )));
        }
        if channels == 0 {
            return Err(BssError::InvalidConfig("mixing has no output channels".into()));
        }
        for s in &self.sources {
            match s {
                SourceSpec::HarmonicTone(h) => {
                    if h.f0 <= 0.0 || h.partials == 0 || h.note_period <= 0.0 {
                        return Err(BssError::InvalidConfig(
                            "harmonic tone needs positive f0, period and partials".into(),
                        ));
                    }
                }
                SourceSpec::FilteredNoise { low_hz, high_hz } => {
                    if !(0.0 <= *low_hz && low_hz < high_hz
                        && *high_hz <= self.sample_rate as f64 / 2.0)
                    {
                        return Err(BssError::InvalidConfig(
                            "noise band must satisfy 0 <= low < high <= Nyquist".into(),
                        ));
                    }
                }
                SourceSpec::File { .. } => {}
            }
        }
        Ok(())
    }

    /// Advisory notes that do not prevent synthesis: non-determined channel
    /// counts and FIR lengths too long for a narrowband separation model.
    pub fn warnings(&self, stft_window: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok((m, n)) = self.mixing.dims() {
            if n < 2 {
                out.push("determined separation needs at least 2 sources".into());
            }
            if m != n {
                out.push(format!(
                    "channels ({m}) != sources ({n}): not a determined scenario"
                ));
            }
        }
        let fir_len = match &self.mixing {
            Mixing::Convolutive { filters } => filters
                .iter()
                .flat_map(|r| r.iter().map(Vec::len))
                .max()
                .unwrap_or(0),
            Mixing::SeededReverb { taps, .. } => *taps,
            Mixing::Instantaneous { .. } => 0,
        };
        if let (Some(window), true) = (stft_window, fir_len > 0) {
            if fir_len >= window / 2 {
                out.push(format!(
                    "FIR length {fir_len} is not small against the {window}-sample window; \
                     the narrowband approximation degrades"
                ));
            }
        }
        out
    }
}

/// Synthesized mixture with per-source reference images.
#[derive(Debug, Clone)]
pub struct MixOutput {
    /// Channels x length.
    pub mixture: TimeDomainAudio,
    /// One channel per source: the source image at the first microphone
    /// (pre-noise), matching the back-projection reference.
    pub references: TimeDomainAudio,
}

fn render_tone(h: &HarmonicTone, fs: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let offset = rng.random::<f64>() * h.note_period;
    let n_notes = ((len as f64 / fs + offset) / h.note_period) as usize + 2;
    let gains: Vec<f64> = (0..n_notes)
        .map(|_| {
            let db = (rng.random::<f64>() * 2.0 - 1.0) * h.gain_jitter_db;
            10f64.powf(db / 20.0)
        })
        .collect();
    let phase0 = rng.random::<f64>() * 2.0 * PI;

    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let since = (t + offset) % h.note_period;
        let note = ((t + offset) / h.note_period) as usize;
        // vibrato as phase modulation: theta(t) integrates
        // f0 (1 + depth sin(2 pi r t))
        let theta = 2.0
            * PI
            * h.f0
            * (t - h.vibrato_depth * (2.0 * PI * h.vibrato_rate * t).cos()
                / (2.0 * PI * h.vibrato_rate));
        let attack = if h.attack > 0.0 {
            let a = (since / h.attack).min(1.0);
            0.5 * (1.0 - (PI * a).cos())
        } else {
            1.0
        };
        let mut acc = 0.0;
        for k in 1..=h.partials {
            let kf = k as f64;
            let env = (-h.temporal_decay * kf.sqrt() * since).exp();
            acc += (kf * (theta + phase0)).sin() / kf.powf(h.amplitude_decay) * env;
        }
        *o = acc * attack * gains[note];
    }
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

fn render_noise(low_hz: f64, high_hz: f64, fs: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    // windowed-sinc band-pass
    let taps = 513usize;
    let half = (taps / 2) as isize;
    let (fl, fh) = (low_hz / fs, high_hz / fs);
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let kernel: Vec<f64> = (0..taps)
        .map(|i| {
            let k = i as isize - half;
            let ideal = 2.0 * fh * sinc(2.0 * fh * k as f64) - 2.0 * fl * sinc(2.0 * fl * k as f64);
            let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / (taps - 1) as f64).cos());
            ideal * w
        })
        .collect();
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, k) in kernel.iter().enumerate() {
            let idx = i as isize - (j as isize - half);
            if idx >= 0 && (idx as usize) < len {
                acc += k * white[idx as usize];
            }
        }
        *o = acc;
    }
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}

fn render_file(path: &PathBuf, sample_rate: u32, len: usize) -> Result<Vec<f64>> {
    let audio = wav::read_wav(path)?;
    if audio.sample_rate != sample_rate {
        return Err(BssError::InvalidConfig(format!(
            "file {} has sample rate {} but the spec wants {}",
            path.display(),
            audio.sample_rate,
            sample_rate
        )));
    }
    let mut out = vec![0.0; len];
    let row = audio.samples.row(0);
    for i in 0..len.min(row.len()) {
        out[i] = row[i];
    }
    Ok(out)
}

fn convolve_truncated(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let kmax = kernel.len().min(i + 1);
        let mut acc = 0.0;
        for (k, kv) in kernel.iter().enumerate().take(kmax) {
            acc += kv * signal[i - k];
        }
        *o = acc;
    }
    out
}

fn seeded_reverb_filters(
    gains: &Array2<f64>,
    delays: &[Vec<usize>],
    taps: usize,
    decay: f64,
    drr_db: f64,
    fs: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<f64>>> {
    let (channels, sources) = gains.dim();
    let mut filters = vec![vec![Vec::new(); sources]; channels];
    for m in 0..channels {
        for n in 0..sources {
            let d = delays[m][n].min(taps - 1);
            let mut h = vec![0.0; taps];
            h[d] = gains[(m, n)];
            let mut energy = 0.0;
            let tail: Vec<f64> = (d + 1..taps)
                .map(|k| {
                    let g: f64 = rng.sample(StandardNormal);
                    let v = g * (-((k - d) as f64) / (decay * fs)).exp();
                    energy += v * v;
                    v
                })
                .collect();
            if energy > 0.0 {
                let scale = gains[(m, n)].abs() * 10f64.powf(-drr_db / 20.0) / energy.sqrt();
                for (k, v) in tail.iter().enumerate() {
                    h[d + 1 + k] = v * scale;
                }
            }
            filters[m][n] = h;
        }
    }
    filters
}

/// Deterministic synthesis of the mixture and its per-source references.
pub fn synthesize(spec: &MixSpec) -> Result<MixOutput> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let len = (spec.duration * fs).round() as usize;
    let (channels, n_sources) = spec.mixing.dims()?;

    // independent child streams so source count changes do not reshuffle
    // unrelated randomness
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let source_seeds: Vec<u64> = (0..n_sources).map(|_| master.random()).collect();
    let filter_seed: u64 = master.random();
    let noise_seed: u64 = master.random();

    let mut sources = Vec::with_capacity(n_sources);
    for (s, seed) in spec.sources.iter().zip(source_seeds) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rendered = match s {
            SourceSpec::HarmonicTone(h) => render_tone(h, fs, len, &mut rng),
            SourceSpec::FilteredNoise { low_hz, high_hz } => {
                render_noise(*low_hz, *high_hz, fs, len, &mut rng)
            }
            SourceSpec::File { path } => render_file(path, spec.sample_rate, len)?,
        };
        sources.push(rendered);
    }

    let filters: Option<Vec<Vec<Vec<f64>>>> = match &spec.mixing {
        Mixing::Instantaneous { .. } => None,
        Mixing::Convolutive { filters } => Some(filters.clone()),
        Mixing::SeededReverb { gains, delays, taps, decay, direct_to_reverb_db } => {
            let mut rng = ChaCha8Rng::seed_from_u64(filter_seed);
            Some(seeded_reverb_filters(
                gains,
                delays,
                *taps,
                *decay,
                *direct_to_reverb_db,
                fs,
                &mut rng,
            ))
        }
    };

    let mut mixture = Array2::<f64>::zeros((channels, len));
    let mut references = Array2::<f64>::zeros((n_sources, len));
    for n in 0..n_sources {
        for m in 0..channels {
            let image: Vec<f64> = match (&spec.mixing, &filters) {
                (Mixing::Instantaneous { gains }, _) => {
                    sources[n].iter().map(|v| v * gains[(m, n)]).collect()
                }
                (_, Some(filters)) => convolve_truncated(&sources[n], &filters[m][n]),
                _ => unreachable!(),
            };
            for (i, v) in image.iter().enumerate() {
                mixture[(m, i)] += v;
            }
            if m == 0 {
                for (i, v) in image.iter().enumerate() {
                    references[(n, i)] = *v;
                }
            }
        }
    }

    if let Some(snr_db) = spec.snr_ambient_db {
        let power = mixture.iter().map(|v| v * v).sum::<f64>() / mixture.len() as f64;
        let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in mixture.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
    }

    Ok(MixOutput {
        mixture: TimeDomainAudio::new(mixture, spec.sample_rate)?,
        references: TimeDomainAudio::new(references, spec.sample_rate)?,
    })
}
