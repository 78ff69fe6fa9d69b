//! The implicit data operator, its adjoint, spectral-norm estimation,
//! normalization, whitening, and back projection.
//!
//! The operator maps a stack of per-frequency demixing matrices to the
//! separated spectrograms. It is block diagonal over frequency with repeated
//! copies of the observed data, so it is never materialized: both directions
//! are computed directly from the observation tensor.

use nalgebra::DMatrix;
use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;

use crate::error::{BssError, Result};
use crate::signal::SpectrogramTensor;

/// Per-frequency demixing matrices, `matrices` is bins x sources x channels.
///
/// The flat (vectorized) view is row-major within each frequency and
/// concatenated over frequencies, which is exactly the memory order of the
/// standard-layout array, so `as_vector_slice` is a free view.
#[derive(Debug, Clone, PartialEq)]
pub struct DemixingStack {
    pub matrices: Array3<Complex64>,
}

impl DemixingStack {
    pub fn new(matrices: Array3<Complex64>) -> Self {
        Self { matrices }
    }

    /// Identity demixing: each frequency gets the leading rows of the
    /// identity matrix.
    pub fn identity(bins: usize, sources: usize, channels: usize) -> Self {
        let mut matrices = Array3::zeros((bins, sources, channels));
        for f in 0..bins {
            for n in 0..sources.min(channels) {
                matrices[(f, n, n)] = Complex64::new(1.0, 0.0);
            }
        }
        Self { matrices }
    }

    pub fn zeros(bins: usize, sources: usize, channels: usize) -> Self {
        Self {
            matrices: Array3::zeros((bins, sources, channels)),
        }
    }

    /// (bins, sources, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.matrices.dim();
        (d.0, d.1, d.2)
    }

    /// Flat vector view in the row-major-per-frequency numbering.
    pub fn as_vector_slice(&self) -> &[Complex64] {
        self.matrices
            .as_slice()
            .expect("demixing stack is always standard layout")
    }

    /// Rebuild a stack from the flat vector numbering.
    pub fn from_vector(vec: &[Complex64], bins: usize, sources: usize, channels: usize) -> Result<Self> {
        if vec.len() != bins * sources * channels {
            return Err(BssError::DimensionMismatch(format!(
                "vector of length {} cannot fill {}x{}x{} stack",
                vec.len(),
                bins,
                sources,
                channels
            )));
        }
        let matrices = Array3::from_shape_vec((bins, sources, channels), vec.to_vec())
            .expect("length checked above");
        Ok(Self { matrices })
    }

    /// The demixing matrix at one frequency.
    pub fn matricize(&self, f: usize) -> ArrayView2<'_, Complex64> {
        self.matrices.index_axis(ndarray::Axis(0), f)
    }

    pub fn norm(&self) -> f64 {
        self.matrices.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `a*self + b*other`, entrywise.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut matrices = self.matrices.clone();
        ndarray::Zip::from(&mut matrices)
            .and(&other.matrices)
            .for_each(|x, &y| *x = *x * a + y * b);
        Self { matrices }
    }

    pub fn dot(&self, other: &Self) -> Complex64 {
        self.matrices
            .iter()
            .zip(other.matrices.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Result of a power-method spectral-norm estimate.
#[derive(Debug, Clone, Copy)]
pub struct SpectralNormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Norm used to scale the data operator before solving.
#[derive(Debug, Clone, Copy)]
pub enum OperatorNorm {
    /// Power-method estimate of the largest singular value.
    Spectral { tol: f64, max_iter: usize },
    /// Cheap upper bound: the largest per-frequency Frobenius norm of the
    /// observation block. Always >= the spectral norm, so the scaled
    /// operator has spectral norm <= 1.
    FrobeniusBound,
}

impl Default for OperatorNorm {
    fn default() -> Self {
        OperatorNorm::Spectral { tol: 1e-13, max_iter: 2000 }
    }
}

/// The implicit observation operator. `scale` records the accumulated
/// normalization divisor (1 until `normalize` is called).
#[derive(Debug, Clone)]
pub struct DataOperator {
    observations: SpectrogramTensor,
    scale: f64,
}

impl DataOperator {
    pub fn new(observations: SpectrogramTensor) -> Result<Self> {
        if !observations.is_finite() {
            return Err(BssError::NonFinite("observations"));
        }
        Ok(Self { observations, scale: 1.0 })
    }

    pub fn observations(&self) -> &SpectrogramTensor {
        &self.observations
    }

    /// Accumulated normalization divisor.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn channels(&self) -> usize {
        self.observations.channels()
    }

    pub fn frames(&self) -> usize {
        self.observations.frames()
    }

    pub fn bins(&self) -> usize {
        self.observations.bins()
    }

    fn check_demix(&self, w: &DemixingStack) -> Result<()> {
        let (bins, _, channels) = w.shape();
        if bins != self.bins() || channels != self.channels() {
            return Err(BssError::DimensionMismatch(format!(
                "demixing stack {}x_x{} does not match observations with {} bins, {} channels",
                bins,
                channels,
                self.bins(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Separated spectrograms: `out[n,t,f] = sum_m W[f][n,m] x[m,t,f]`.
    pub fn apply(&self, w: &DemixingStack) -> Result<SpectrogramTensor> {
        self.check_demix(w)?;
        let (bins, sources, channels) = w.shape();
        let frames = self.frames();
        let x = &self.observations.data;
        let mut out = Array3::<Complex64>::zeros((sources, frames, bins));
        for f in 0..bins {
            let wf = w.matricize(f);
            for t in 0..frames {
                for n in 0..sources {
                    let mut acc = Complex64::default();
                    for m in 0..channels {
                        acc += wf[(n, m)] * x[(m, t, f)];
                    }
                    out[(n, t, f)] = acc;
                }
            }
        }
        Ok(SpectrogramTensor::new(
            out,
            self.observations.frame_hop,
            self.observations.fft_length,
        ))
    }

    /// Adjoint: `out[f][n,m] = sum_t y[n,t,f] conj(x[m,t,f])`.
    pub fn adjoint_apply(&self, y: &SpectrogramTensor) -> Result<DemixingStack> {
        let (sources, frames, bins) = y.shape();
        if bins != self.bins() || frames != self.frames() {
            return Err(BssError::DimensionMismatch(format!(
                "dual tensor {}x{}x{} does not match observations {}x{}x{}",
                sources,
                frames,
                bins,
                self.channels(),
                self.frames(),
                self.bins()
            )));
        }
        let channels = self.channels();
        let x = &self.observations.data;
        let mut out = Array3::<Complex64>::zeros((bins, sources, channels));
        for f in 0..bins {
            for n in 0..sources {
                for m in 0..channels {
                    let mut acc = Complex64::default();
                    for t in 0..frames {
                        acc += y.data[(n, t, f)] * x[(m, t, f)].conj();
                    }
                    out[(f, n, m)] = acc;
                }
            }
        }
        Ok(DemixingStack::new(out))
    }

    /// Power-method estimate of the largest singular value, iterating
    /// `v <- X^H X v` on the demixing-stack domain from a normalized
    /// all-ones start vector. Convergence is declared when successive
    /// Rayleigh quotients differ relatively by less than `tol`.
    pub fn spectral_norm(&self, tol: f64, max_iter: usize) -> SpectralNormEstimate {
        let sources = self.channels();
        let bins = self.bins();
        let channels = self.channels();
        let dim = (bins * sources * channels) as f64;
        let mut v = DemixingStack::new(Array3::from_elem(
            (bins, sources, channels),
            Complex64::new(1.0 / dim.sqrt(), 0.0),
        ));
        let mut lambda_prev = f64::NAN;
        for it in 1..=max_iter {
            let xv = self.apply(&v).expect("shapes fixed internally");
            let u = self.adjoint_apply(&xv).expect("shapes fixed internally");
            // Rayleigh quotient <v, X^H X v> = ||Xv||^2 for unit v
            let lambda = v.dot(&u).re;
            let norm = u.norm();
            if norm == 0.0 {
                return SpectralNormEstimate { value: 0.0, converged: true, iterations: it };
            }
            if lambda_prev.is_finite() {
                let rel = (lambda - lambda_prev).abs() / lambda.abs().max(f64::MIN_POSITIVE);
                if rel < tol {
                    return SpectralNormEstimate {
                        value: lambda.max(0.0).sqrt(),
                        converged: true,
                        iterations: it,
                    };
                }
            }
            lambda_prev = lambda;
            v = DemixingStack::new(u.matrices.mapv(|z| z / norm));
        }
        SpectralNormEstimate {
            value: lambda_prev.max(0.0).sqrt(),
            converged: false,
            iterations: max_iter,
        }
    }

    /// Largest per-frequency Frobenius norm of the observation block; an
    /// upper bound on the spectral norm that needs one pass over the data.
    pub fn frobenius_bound(&self) -> f64 {
        let (channels, frames, bins) = self.observations.shape();
        let mut best = 0.0f64;
        for f in 0..bins {
            let mut e = 0.0;
            for m in 0..channels {
                for t in 0..frames {
                    e += self.observations.data[(m, t, f)].norm_sqr();
                }
            }
            best = best.max(e);
        }
        best.sqrt()
    }

    /// Scale the observations so the operator norm becomes (approximately,
    /// or at most, depending on the chosen norm) one. The divisor is
    /// accumulated into `scale`.
    pub fn normalize_with(mut self, norm: OperatorNorm) -> Result<Self> {
        let value = match norm {
            OperatorNorm::Spectral { tol, max_iter } => {
                let est = self.spectral_norm(tol, max_iter);
                if !est.converged {
                    log::warn!(
                        "power method did not converge in {} iterations; using best estimate {}",
                        est.iterations,
                        est.value
                    );
                }
                est.value
            }
            OperatorNorm::FrobeniusBound => self.frobenius_bound(),
        };
        if value <= 0.0 {
            return Err(BssError::ZeroObservations);
        }
        self.observations.data.mapv_inplace(|z| z / value);
        self.scale *= value;
        Ok(self)
    }

    pub fn normalize(self) -> Result<Self> {
        self.normalize_with(OperatorNorm::default())
    }
}

/// Per-frequency whitening transforms, `matrices` is bins x channels x channels.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    pub matrices: Array3<Complex64>,
}

impl WhiteningTransform {
    /// Total demixing referred to the raw observations:
    /// `out[f] = demix[f] * Q[f]`.
    pub fn compose(&self, demix: &DemixingStack) -> DemixingStack {
        let (bins, sources, channels) = demix.shape();
        let mut out = Array3::<Complex64>::zeros((bins, sources, channels));
        for f in 0..bins {
            for n in 0..sources {
                for m in 0..channels {
                    let mut acc = Complex64::default();
                    for k in 0..channels {
                        acc += demix.matrices[(f, n, k)] * self.matrices[(f, k, m)];
                    }
                    out[(f, n, m)] = acc;
                }
            }
        }
        DemixingStack::new(out)
    }
}

/// Per-frequency PCA whitening: the sample covariance of the output is the
/// identity. Eigenvalues are floored at 1e-12 times the largest one before
/// inversion, so rank-deficient covariances never fail.
pub fn whiten(x: &SpectrogramTensor) -> Result<(SpectrogramTensor, WhiteningTransform)> {
    let (channels, frames, bins) = x.shape();
    if frames < channels {
        return Err(BssError::DimensionMismatch(format!(
            "whitening needs at least as many frames as channels ({frames} < {channels})"
        )));
    }
    if !x.is_finite() {
        return Err(BssError::NonFinite("observations"));
    }
    let mut out = Array3::<Complex64>::zeros((channels, frames, bins));
    let mut transforms = Array3::<Complex64>::zeros((bins, channels, channels));
    for f in 0..bins {
        // sample covariance (1/T) sum_t x x^H, symmetrized
        let mut cov = DMatrix::<Complex64>::zeros(channels, channels);
        for t in 0..frames {
            for a in 0..channels {
                for b in 0..channels {
                    cov[(a, b)] += x.data[(a, t, f)] * x.data[(b, t, f)].conj();
                }
            }
        }
        cov /= Complex64::new(frames as f64, 0.0);
        let herm = (&cov + cov.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = nalgebra::SymmetricEigen::new(herm);
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let floor = max_eig.max(f64::MIN_POSITIVE) * 1e-12;
        // Q = Lambda^{-1/2} E^H
        let mut q = DMatrix::<Complex64>::zeros(channels, channels);
        for r in 0..channels {
            let lam = eig.eigenvalues[r].max(floor);
            let inv_sqrt = 1.0 / lam.sqrt();
            for c in 0..channels {
                q[(r, c)] = eig.eigenvectors[(c, r)].conj() * inv_sqrt;
            }
        }
        for a in 0..channels {
            for b in 0..channels {
                transforms[(f, a, b)] = q[(a, b)];
            }
        }
        for t in 0..frames {
            for a in 0..channels {
                let mut acc = Complex64::default();
                for b in 0..channels {
                    acc += q[(a, b)] * x.data[(b, t, f)];
                }
                out[(a, t, f)] = acc;
            }
        }
    }
    Ok((
        SpectrogramTensor::new(out, x.frame_hop, x.fft_length),
        WhiteningTransform { matrices: transforms },
    ))
}

/// Back projection output: each source expressed as its image at the
/// reference channel; frequencies where the demixing matrix was singular
/// fall back to the pseudo-inverse and are listed in `pseudo_inverse_bins`.
#[derive(Debug, Clone)]
pub struct BackProjected {
    pub spectrogram: SpectrogramTensor,
    pub pseudo_inverse_bins: Vec<usize>,
}

/// Rescale separated sources by the inverse demixing matrix so each is
/// expressed at the reference channel (minimal distortion principle):
/// `out[n,t,f] = inv(W[f])[ref,n] * shat[n,t,f]`.
pub fn back_project(
    shat: &SpectrogramTensor,
    x: &SpectrogramTensor,
    w: &DemixingStack,
    ref_channel: usize,
) -> Result<BackProjected> {
    let (sources, frames, bins) = shat.shape();
    let (wb, wn, wm) = w.shape();
    if wb != bins || wn != sources {
        return Err(BssError::DimensionMismatch(format!(
            "demixing stack {wb}x{wn}x{wm} does not match estimates {sources}x{frames}x{bins}"
        )));
    }
    if wn != wm {
        return Err(BssError::DimensionMismatch(format!(
            "back projection needs square demixing matrices, got {wn}x{wm}"
        )));
    }
    if x.bins() != bins || x.frames() != frames || x.channels() != wm {
        return Err(BssError::DimensionMismatch(
            "observations do not match demixing stack and estimates".into(),
        ));
    }
    if ref_channel >= wm {
        return Err(BssError::DimensionMismatch(format!(
            "reference channel {ref_channel} out of range ({wm} channels)"
        )));
    }
    let mut out = Array3::<Complex64>::zeros((sources, frames, bins));
    let mut pinv_bins = Vec::new();
    for f in 0..bins {
        let wf = w.matricize(f);
        let mat = DMatrix::from_fn(wn, wm, |r, c| wf[(r, c)]);
        let inv = match mat.clone().try_inverse() {
            Some(inv) => inv,
            None => {
                pinv_bins.push(f);
                mat.pseudo_inverse(1e-12)
                    .unwrap_or_else(|_| DMatrix::zeros(wm, wn))
            }
        };
        for n in 0..sources {
            let g = inv[(ref_channel, n)];
            for t in 0..frames {
                out[(n, t, f)] = g * shat.data[(n, t, f)];
            }
        }
    }
    Ok(BackProjected {
        spectrogram: SpectrogramTensor::new(out, shat.frame_hop, shat.fft_length),
        pseudo_inverse_bins: pinv_bins,
    })
}
