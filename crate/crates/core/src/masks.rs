//! Mask-generating functions for the plug-and-play solver: thresholding
//! masks, the model-based variance mask, cepstrum transforms, cosine
//! shrinkage, and the harmonic mask built from all of them.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::signal::SpectrogramTensor;

/// Real mask with entries in [0, 1], sources x frames x bins.
#[derive(Debug, Clone)]
pub struct MaskTensor {
    pub values: Array3<f64>,
}

impl MaskTensor {
    /// Wrap generator output. Entries may exceed [0, 1] only by rounding
    /// noise; anything further is a bug in the generator.
    fn from_generator(mut values: Array3<f64>) -> Self {
        debug_assert!(
            values.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)),
            "mask generator produced values outside [0,1]"
        );
        values.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self { values }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.values.dim();
        (d.0, d.1, d.2)
    }

    /// (mean, min, max) over all entries.
    pub fn stats(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in self.values.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        (sum / self.values.len() as f64, lo, hi)
    }

    /// Entrywise product with a spectrogram.
    pub fn apply(&self, z: &SpectrogramTensor) -> SpectrogramTensor {
        assert_eq!(self.values.dim(), z.data.dim());
        let mut out = z.clone();
        ndarray::Zip::from(&mut out.data)
            .and(&self.values)
            .for_each(|o, &m| *o = *o * m);
        out
    }
}

/// Complex cepstra, sources x frames x quefrencies.
#[derive(Debug, Clone)]
pub struct CepstrumTensor {
    pub values: Array3<Complex64>,
}

impl CepstrumTensor {
    pub fn quefrencies(&self) -> usize {
        self.values.dim().2
    }
}

/// Parameters of the harmonic mask.
///
/// `gamma` defaults to 1/N (resolved against the source count at mask time)
/// and `quefrency_length` defaults to the bin count (no zero padding).
/// `epsilon` is the log floor; it may be zero only for inputs with strictly
/// positive magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvaConfig {
    pub lambda: f64,
    pub kappa: u32,
    pub gamma: Option<f64>,
    pub epsilon: f64,
    pub quefrency_length: Option<usize>,
}

impl Default for HvaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.08,
            kappa: 3,
            gamma: None,
            epsilon: 1e-3,
            quefrency_length: None,
        }
    }
}

impl HvaConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(BssError::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.kappa < 1 {
            return Err(BssError::InvalidConfig("kappa must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if g <= 0.0 || !g.is_finite() {
                return Err(BssError::InvalidConfig("gamma must be positive".into()));
            }
        }
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(BssError::InvalidConfig("epsilon must be >= 0".into()));
        }
        if let Some(c) = self.quefrency_length {
            if c < bins {
                return Err(BssError::InvalidConfig(format!(
                    "quefrency length {c} must be >= bin count {bins}"
                )));
            }
        }
        Ok(())
    }
}

/// Soft-threshold mask: `(1 - lambda/|z|)_+` per entry.
pub fn mask_l1(z: &SpectrogramTensor, lambda: f64) -> MaskTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    let values = z.data.mapv(|v| {
        let mag = v.norm();
        if mag <= lambda { 0.0 } else { 1.0 - lambda / mag }
    });
    MaskTensor::from_generator(values)
}

/// Group-threshold mask: `(1 - lambda/||z[n,t,.]||)_+`, constant over the
/// frequency axis within each (source, frame) group.
pub fn mask_l21(z: &SpectrogramTensor, lambda: f64) -> MaskTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    let (sources, frames, bins) = z.shape();
    let mut values = Array3::zeros((sources, frames, bins));
    for n in 0..sources {
        for t in 0..frames {
            let norm: f64 = (0..bins)
                .map(|f| z.data[(n, t, f)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let factor = if norm <= lambda { 0.0 } else { 1.0 - lambda / norm };
            for f in 0..bins {
                values[(n, t, f)] = factor;
            }
        }
    }
    MaskTensor::from_generator(values)
}

/// Variance-weighted Gaussian-model mask `v/(v + lambda)`; independent of
/// the masked variable, so it is constant across iterations.
pub fn mask_model_iva(variance: &Array3<f64>, lambda: f64) -> Result<MaskTensor> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(BssError::InvalidConfig("lambda must be >= 0".into()));
    }
    if variance.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(BssError::InvalidConfig(
            "variance entries must be nonnegative and finite".into(),
        ));
    }
    let values = variance.mapv(|v| {
        let denom = v + lambda;
        if denom > 0.0 { v / denom } else { 0.0 }
    });
    Ok(MaskTensor::from_generator(values))
}

/// Frequency-directional DFT of a real tensor with 1/F scaling, zero padded
/// to `quefrency_length` points.
pub fn cepstrum_forward(logmag: &Array3<f64>, quefrency_length: usize) -> CepstrumTensor {
    let (sources, frames, bins) = logmag.dim();
    assert!(quefrency_length >= bins, "quefrency length must be >= bin count");
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(quefrency_length);
    let mut buf = vec![Complex64::default(); quefrency_length];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let scale = 1.0 / bins as f64;
    let mut out = Array3::zeros((sources, frames, quefrency_length));
    for n in 0..sources {
        for t in 0..frames {
            buf.fill(Complex64::default());
            for f in 0..bins {
                buf[f] = Complex64::new(logmag[(n, t, f)], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for c in 0..quefrency_length {
                out[(n, t, c)] = buf[c] * scale;
            }
        }
    }
    CepstrumTensor { values: out }
}

/// Inverse of `cepstrum_forward` with F/C scaling, truncated to `bins`
/// frequency points; the caller receives the full complex result.
pub(crate) fn cepstrum_inverse_complex(cep: &CepstrumTensor, bins: usize) -> Array3<Complex64> {
    let (sources, frames, quefrencies) = cep.values.dim();
    assert!(quefrencies >= bins, "bin count must be <= quefrency length");
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(quefrencies);
    let mut buf = vec![Complex64::default(); quefrencies];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let scale = bins as f64 / quefrencies as f64;
    let mut out = Array3::zeros((sources, frames, bins));
    for n in 0..sources {
        for t in 0..frames {
            for c in 0..quefrencies {
                buf[c] = cep.values[(n, t, c)];
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..bins {
                out[(n, t, f)] = buf[f] * scale;
            }
        }
    }
    out
}

/// Real part of the inverse frequency-directional transform.
pub fn cepstrum_inverse(cep: &CepstrumTensor, bins: usize) -> Array3<f64> {
    cepstrum_inverse_complex(cep, bins).mapv(|z| z.re)
}

/// Cosine-shrinkage mask on cepstrum magnitudes: the kappa-fold composition
/// of the raised cosine applied to `min(1, |nu|/(2 lambda))`. All ones when
/// lambda is zero.
pub fn cosine_shrink_mask(cep: &CepstrumTensor, lambda: f64, kappa: u32) -> Array3<f64> {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    assert!(kappa >= 1, "kappa must be >= 1");
    cep.values.mapv(|v| {
        let mut s = if lambda > 0.0 {
            (v.norm() / (2.0 * lambda)).min(1.0)
        } else {
            1.0
        };
        for _ in 0..kappa {
            s = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
        }
        s
    })
}

/// Wiener-like combination of per-source powers: `(p_n / sum_n p_n)^gamma`.
/// Bins whose total power is zero get the uniform value `(1/N)^gamma`; the
/// count of such bins is returned alongside the mask.
pub fn wiener_like_mask(power: &Array3<f64>, gamma: f64) -> (MaskTensor, usize) {
    assert!(gamma > 0.0, "gamma must be positive");
    debug_assert!(power.iter().all(|&p| p >= 0.0));
    let (sources, frames, bins) = power.dim();
    let mut values = Array3::zeros((sources, frames, bins));
    let mut zero_bins = 0usize;
    for t in 0..frames {
        for f in 0..bins {
            let total: f64 = (0..sources).map(|n| power[(n, t, f)]).sum();
            if total > 0.0 {
                for n in 0..sources {
                    values[(n, t, f)] = (power[(n, t, f)] / total).powf(gamma);
                }
            } else {
                zero_bins += 1;
                let uniform = (1.0 / sources as f64).powf(gamma);
                for n in 0..sources {
                    values[(n, t, f)] = uniform;
                }
            }
        }
    }
    (MaskTensor::from_generator(values), zero_bins)
}

/// Harmonic mask: per-frame log magnitudes are mean-centered, transformed to
/// cepstra, shrunk by the cosine mask, transformed back, re-centered and
/// exponentiated into enhanced powers, then combined by the Wiener-like
/// rule. The power ratio is evaluated with the per-bin maximum factored out
/// so arbitrarily large magnitudes cannot overflow.
pub fn hva_mask(z: &SpectrogramTensor, cfg: &HvaConfig) -> Result<MaskTensor> {
    let (sources, frames, bins) = z.shape();
    cfg.validate(bins)?;
    if !z.is_finite() {
        return Err(BssError::NonFinite("mask input"));
    }
    if sources == 1 {
        return Ok(MaskTensor::from_generator(Array3::from_elem(
            (1, frames, bins),
            1.0,
        )));
    }
    let quefrencies = cfg.quefrency_length.unwrap_or(bins);
    let gamma = cfg.gamma.unwrap_or(1.0 / sources as f64);

    // zeta = log(|z| + eps); per-(source, frame) mean over bins
    let zeta = z.data.mapv(|v| (v.norm() + cfg.epsilon).ln());
    let mut mean = Array2::<f64>::zeros((sources, frames));
    for n in 0..sources {
        for t in 0..frames {
            mean[(n, t)] = (0..bins).map(|f| zeta[(n, t, f)]).sum::<f64>() / bins as f64;
        }
    }
    let mut centered = zeta;
    for n in 0..sources {
        for t in 0..frames {
            for f in 0..bins {
                centered[(n, t, f)] -= mean[(n, t)];
            }
        }
    }

    let nu = cepstrum_forward(&centered, quefrencies);
    let shrink = cosine_shrink_mask(&nu, cfg.lambda, cfg.kappa);
    let masked = CepstrumTensor {
        values: ndarray::Zip::from(&nu.values)
            .and(&shrink)
            .map_collect(|&v, &s| v * s),
    };
    let xi = cepstrum_inverse_complex(&masked, bins);

    // the shrinkage factor is even in |nu|, so the inverse of a real input
    // stays real up to rounding; anything larger indicates a broken input
    let real_norm: f64 = xi.iter().map(|v| v.re * v.re).sum::<f64>().sqrt();
    let imag_norm: f64 = xi.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
    assert!(
        imag_norm <= 1e-8 * real_norm + 1e-12,
        "imaginary residue too large: {imag_norm} vs real {real_norm}"
    );

    // enhanced log magnitudes; combine as exp(2 rho) with the per-bin max
    // subtracted before exponentiation.
    let mut rho = xi.mapv(|v| v.re);
    for n in 0..sources {
        for t in 0..frames {
            for f in 0..bins {
                rho[(n, t, f)] += mean[(n, t)];
            }
        }
    }
    let mut values = Array3::zeros((sources, frames, bins));
    for t in 0..frames {
        for f in 0..bins {
            let top = (0..sources)
                .map(|n| rho[(n, t, f)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for n in 0..sources {
                let e = (2.0 * (rho[(n, t, f)] - top)).exp();
                values[(n, t, f)] = e;
                total += e;
            }
            for n in 0..sources {
                values[(n, t, f)] = (values[(n, t, f)] / total).powf(gamma);
            }
        }
    }
    Ok(MaskTensor::from_generator(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(n: usize, t: usize, f: usize, seed: u64, scale: f64) -> SpectrogramTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((n, t, f), |_| {
            Complex64::new(
                (rng.random::<f64>() - 0.5) * scale,
                (rng.random::<f64>() - 0.5) * scale,
            )
        });
        SpectrogramTensor::new(data, 1, 2)
    }

    #[test]
    fn mask_l1_closed_forms() {
        let mut data = Array3::zeros((1, 1, 3));
        data[(0, 0, 0)] = Complex64::new(2.0, 0.0);
        data[(0, 0, 1)] = Complex64::new(0.5, 0.0);
        data[(0, 0, 2)] = Complex64::default();
        let z = SpectrogramTensor::new(data, 1, 2);
        let m = mask_l1(&z, 1.0);
        assert_eq!(m.values[(0, 0, 0)], 0.5);
        assert_eq!(m.values[(0, 0, 1)], 0.0);
        assert_eq!(m.values[(0, 0, 2)], 0.0);
        let ones = mask_l1(&z, 0.0);
        // lambda = 0 passes every nonzero entry; |z| = 0 keeps factor 0
        assert_eq!(ones.values[(0, 0, 0)], 1.0);
        assert_eq!(ones.values[(0, 0, 1)], 1.0);
    }

    #[test]
    fn mask_l21_group_structure() {
        let z = random_spec(2, 3, 4, 1, 2.0);
        let m = mask_l21(&z, 0.4);
        for n in 0..2 {
            for t in 0..3 {
                for f in 1..4 {
                    assert_eq!(m.values[(n, t, f)], m.values[(n, t, 0)]);
                }
            }
        }
        // F = 1 equals mask_l1
        let z1 = random_spec(2, 5, 1, 2, 2.0);
        let a = mask_l21(&z1, 0.3);
        let b = mask_l1(&z1, 0.3);
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn model_iva_mask_values() {
        let v = Array3::from_elem((1, 1, 3), 2.0);
        let m = mask_model_iva(&v, 2.0).unwrap();
        assert!(m.values.iter().all(|&x| (x - 0.5).abs() <= 1e-15));
        let z = mask_model_iva(&Array3::zeros((1, 1, 2)), 1.0).unwrap();
        assert!(z.values.iter().all(|&x| x == 0.0));
        let v3 = Array3::from_elem((1, 1, 1), 3.0);
        let m3 = mask_model_iva(&v3, 1.0).unwrap();
        assert!((m3.values[(0, 0, 0)] - 0.75).abs() <= 1e-15);
        let mut bad = Array3::zeros((1, 1, 1));
        bad[(0, 0, 0)] = -1.0;
        assert!(mask_model_iva(&bad, 1.0).is_err());
    }

    #[test]
    fn cepstrum_constant_spectrum_is_dc_only() {
        let logmag = Array3::from_elem((1, 1, 8), 1.5);
        let cep = cepstrum_forward(&logmag, 8);
        assert!((cep.values[(0, 0, 0)] - Complex64::new(1.5, 0.0)).norm() <= 1e-12);
        for c in 1..8 {
            assert!(cep.values[(0, 0, c)].norm() <= 1e-12);
        }
    }

    #[test]
    fn cepstrum_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logmag = Array3::from_shape_fn((2, 3, 7), |_| rng.random::<f64>() * 2.0 - 1.0);
        for c in [7, 14] {
            let cep = cepstrum_forward(&logmag, c);
            let back = cepstrum_inverse(&cep, 7);
            for (a, b) in back.iter().zip(logmag.iter()) {
                assert!((a - b).abs() <= 1e-12, "C={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn cepstrum_matches_naive_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bins = 5;
        let quef = 9;
        let logmag = Array3::from_shape_fn((1, 2, bins), |_| rng.random::<f64>() * 2.0 - 1.0);
        let cep = cepstrum_forward(&logmag, quef);
        for t in 0..2 {
            for c in 0..quef {
                let mut acc = Complex64::default();
                for f in 0..bins {
                    let ang = -2.0 * std::f64::consts::PI * (c * f) as f64 / quef as f64;
                    acc += Complex64::new(ang.cos(), ang.sin()) * logmag[(0, t, f)];
                }
                acc /= bins as f64;
                assert!((cep.values[(0, t, c)] - acc).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn cepstrum_delta_inverse_is_constant() {
        let mut values = Array3::zeros((1, 1, 6));
        values[(0, 0, 0)] = Complex64::new(2.5, 0.0);
        let back = cepstrum_inverse(&CepstrumTensor { values }, 6);
        for f in 0..6 {
            assert!((back[(0, 0, f)] - 2.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_shrink_fixed_points() {
        let lambda = 0.3;
        let mut values = Array3::zeros((1, 1, 3));
        values[(0, 0, 0)] = Complex64::default(); // 0 -> 0
        values[(0, 0, 1)] = Complex64::new(lambda, 0.0); // lambda -> 1/2
        values[(0, 0, 2)] = Complex64::new(0.0, 2.0 * lambda); // 2 lambda -> 1
        let cep = CepstrumTensor { values };
        for kappa in 1..=3 {
            let s = cosine_shrink_mask(&cep, lambda, kappa);
            assert_eq!(s[(0, 0, 0)], 0.0);
            assert!((s[(0, 0, 1)] - 0.5).abs() <= 1e-15);
            assert_eq!(s[(0, 0, 2)], 1.0);
        }
        // lambda = 0 passes everything
        let s0 = cosine_shrink_mask(&cep, 0.0, 2);
        assert!(s0.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cosine_shrink_monotone_and_steepening() {
        let lambda = 1.0;
        let n_pts = 101;
        let values = Array3::from_shape_fn((1, 1, n_pts), |(_, _, i)| {
            Complex64::new(2.0 * lambda * i as f64 / (n_pts - 1) as f64, 0.0)
        });
        let cep = CepstrumTensor { values };
        let mut prev_gap = None;
        for kappa in 1..=4 {
            let s = cosine_shrink_mask(&cep, lambda, kappa);
            for i in 1..n_pts {
                assert!(s[(0, 0, i)] >= s[(0, 0, i - 1)] - 1e-15, "monotone");
            }
            // steepening around the inflection: value at lambda/2 falls and
            // at 3 lambda/2 rises with kappa
            let lo = s[(0, 0, 25)];
            let hi = s[(0, 0, 75)];
            if let Some((plo, phi)) = prev_gap {
                assert!(lo <= plo + 1e-15);
                assert!(hi >= phi - 1e-15);
            }
            prev_gap = Some((lo, hi));
        }
    }

    #[test]
    fn wiener_mask_closed_forms() {
        let p = Array3::from_elem((2, 1, 1), 3.0);
        let (m, zeros) = wiener_like_mask(&p, 1.0);
        assert_eq!(zeros, 0);
        assert!((m.values[(0, 0, 0)] - 0.5).abs() <= 1e-15);
        let (mh, _) = wiener_like_mask(&p, 0.5);
        assert!((mh.values[(0, 0, 0)] - 0.5f64.sqrt()).abs() <= 1e-15);
        let mut hot = Array3::zeros((2, 1, 1));
        hot[(0, 0, 0)] = 5.0;
        let (m1, _) = wiener_like_mask(&hot, 1.0);
        assert_eq!(m1.values[(0, 0, 0)], 1.0);
        assert_eq!(m1.values[(1, 0, 0)], 0.0);
        let (mz, z) = wiener_like_mask(&Array3::zeros((2, 1, 2)), 1.0);
        assert_eq!(z, 2);
        assert!(mz.values.iter().all(|&v| (v - 0.5).abs() <= 1e-15));
    }

    #[test]
    fn hva_equal_sources_value() {
        for n in [2usize, 3] {
            let base = random_spec(1, 4, 6, 10, 3.0);
            let mut data = Array3::zeros((n, 4, 6));
            for s in 0..n {
                for t in 0..4 {
                    for f in 0..6 {
                        data[(s, t, f)] = base.data[(0, t, f)];
                    }
                }
            }
            let z = SpectrogramTensor::new(data, 1, 2);
            let m = hva_mask(&z, &HvaConfig::default()).unwrap();
            let want = (1.0 / n as f64).powf(1.0 / n as f64);
            for &v in m.values.iter() {
                assert!((v - want).abs() <= 1e-12, "n={n}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn hva_reduces_to_wiener_when_lambda_zero() {
        let z = random_spec(2, 3, 5, 11, 2.0);
        // strictly positive magnitudes hold with probability one here
        let cfg = HvaConfig { lambda: 0.0, epsilon: 0.0, ..HvaConfig::default() };
        let m = hva_mask(&z, &cfg).unwrap();
        let power = z.data.mapv(|v| v.norm_sqr());
        let (w, _) = wiener_like_mask(&power, 0.5);
        for (a, b) in m.values.iter().zip(w.values.iter()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn hva_per_frame_scale_invariance() {
        let z = random_spec(2, 3, 8, 12, 1.0);
        let cfg = HvaConfig { epsilon: 0.0, ..HvaConfig::default() };
        let m1 = hva_mask(&z, &cfg).unwrap();
        // scale one frame of every source by the same constant
        let mut scaled = z.clone();
        for n in 0..2 {
            for f in 0..8 {
                scaled.data[(n, 1, f)] *= 10.0;
            }
        }
        let m2 = hva_mask(&scaled, &cfg).unwrap();
        for (a, b) in m1.values.iter().zip(m2.values.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn hva_single_source_is_all_ones() {
        let z = random_spec(1, 2, 4, 13, 1.0);
        let m = hva_mask(&z, &HvaConfig::default()).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hva_mask_is_non_separable() {
        // perturbing source 2 changes source 1's mask
        let z = random_spec(2, 2, 6, 14, 1.0);
        let m1 = hva_mask(&z, &HvaConfig::default()).unwrap();
        let mut z2 = z.clone();
        z2.data[(1, 0, 3)] *= 5.0;
        let m2 = hva_mask(&z2, &HvaConfig::default()).unwrap();
        let diff: f64 = (0..6)
            .map(|f| (m1.values[(0, 0, f)] - m2.values[(0, 0, f)]).abs())
            .sum();
        assert!(diff > 1e-6, "source 1 mask should react to source 2");
        // while mask_l1 / mask_l21 are separable per source
        let a1 = mask_l1(&z, 0.2);
        let a2 = mask_l1(&z2, 0.2);
        for f in 0..6 {
            assert_eq!(a1.values[(0, 0, f)], a2.values[(0, 0, f)]);
        }
    }

    #[test]
    fn hva_zero_frame_gives_uniform_mask() {
        let mut z = random_spec(2, 2, 4, 15, 1.0);
        for n in 0..2 {
            for f in 0..4 {
                z.data[(n, 0, f)] = Complex64::default();
            }
        }
        let m = hva_mask(&z, &HvaConfig::default()).unwrap();
        let want = 0.5f64.sqrt();
        for n in 0..2 {
            for f in 0..4 {
                assert!((m.values[(n, 0, f)] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn hva_rejects_non_finite() {
        let mut z = random_spec(2, 1, 3, 16, 1.0);
        z.data[(0, 0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(
            hva_mask(&z, &HvaConfig::default()),
            Err(BssError::NonFinite(_))
        ));
    }

    #[test]
    fn partition_of_unity_before_exponent() {
        let z = random_spec(3, 2, 4, 17, 2.0);
        let m = hva_mask(&z, &HvaConfig::default()).unwrap();
        let gamma = 1.0 / 3.0;
        for t in 0..2 {
            for f in 0..4 {
                let total: f64 = (0..3).map(|n| m.values[(n, t, f)].powf(1.0 / gamma)).sum();
                assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
            }
        }
    }

    #[test]
    fn masks_stay_in_unit_interval_on_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let scale = 10f64.powi(rng.random_range(-150..150));
            let z = random_spec(2, 2, 5, rng.random(), scale);
            for m in [
                mask_l1(&z, 0.1),
                mask_l21(&z, 0.1),
                hva_mask(&z, &HvaConfig::default()).unwrap(),
            ] {
                for &v in m.values.iter() {
                    assert!((0.0..=1.0).contains(&v) && v.is_finite());
                }
            }
        }
    }
}
