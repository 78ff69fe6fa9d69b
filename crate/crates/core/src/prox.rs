//! Proximity operators for the exact splitting solver.
//!
//! All spectrogram operators are multiplicative: each entry is scaled by a
//! factor in [0, 1], so phases are preserved. Zero magnitudes (or zero group
//! norms) take the factor 0, the continuous extension of the formulas.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linops::DemixingStack;
use crate::signal::SpectrogramTensor;

/// Bin-wise soft threshold: each entry scaled by `(1 - lambda/|z|)_+`.
pub fn prox_l1(z: &SpectrogramTensor, lambda: f64) -> SpectrogramTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    let mut out = z.clone();
    out.data.mapv_inplace(|v| {
        let mag = v.norm();
        if mag <= lambda {
            Complex64::default()
        } else {
            v * (1.0 - lambda / mag)
        }
    });
    out
}

/// Group threshold over per-source-per-frame frequency vectors: the whole
/// group `z[n,t,.]` is scaled by `(1 - lambda/||z[n,t,.]||)_+`.
pub fn prox_l21(z: &SpectrogramTensor, lambda: f64) -> SpectrogramTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    let (sources, frames, bins) = z.shape();
    let mut out = z.clone();
    for n in 0..sources {
        for t in 0..frames {
            let norm: f64 = (0..bins)
                .map(|f| z.data[(n, t, f)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let factor = if norm <= lambda { 0.0 } else { 1.0 - lambda / norm };
            for f in 0..bins {
                out.data[(n, t, f)] = z.data[(n, t, f)] * factor;
            }
        }
    }
    out
}

/// p-shrinkage: each entry scaled by `(1 - (lambda/|z|)^{2-p})_+`. Reduces to
/// the soft threshold at p = 1.
pub fn p_shrinkage(z: &SpectrogramTensor, lambda: f64, p: f64) -> SpectrogramTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    assert!(p <= 1.0, "p-shrinkage exponent must be <= 1");
    let mut out = z.clone();
    let e = 2.0 - p;
    out.data.mapv_inplace(|v| {
        let mag = v.norm();
        if mag <= lambda {
            Complex64::default()
        } else {
            v * (1.0 - (lambda / mag).powf(e))
        }
    });
    out
}

/// Social-sparsity shrinkage: the neighborhood energy `h * |z|^2` (2-D
/// convolution over frames and bins, zero padded, kernel centered) replaces
/// the plain magnitude in the soft-threshold factor.
pub fn social_shrinkage(
    z: &SpectrogramTensor,
    lambda: f64,
    kernel: &ndarray::Array2<f64>,
) -> SpectrogramTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    assert!(
        kernel.iter().all(|&h| h >= 0.0 && h.is_finite()),
        "kernel entries must be nonnegative and finite"
    );
    let (sources, frames, bins) = z.shape();
    let (kt, kf) = kernel.dim();
    let (ct, cf) = (kt / 2, kf / 2);
    let mut out = z.clone();
    for n in 0..sources {
        for t in 0..frames {
            for f in 0..bins {
                // convolution: out(t,f) = sum_{i,j} h(i,j) P(t + ct - i, f + cf - j)
                let mut energy = 0.0;
                for i in 0..kt {
                    let ti = t as isize + ct as isize - i as isize;
                    if ti < 0 || ti as usize >= frames {
                        continue;
                    }
                    for j in 0..kf {
                        let fj = f as isize + cf as isize - j as isize;
                        if fj < 0 || fj as usize >= bins {
                            continue;
                        }
                        energy += kernel[(i, j)] * z.data[(n, ti as usize, fj as usize)].norm_sqr();
                    }
                }
                let norm = energy.sqrt();
                let factor = if norm <= lambda { 0.0 } else { 1.0 - lambda / norm };
                out.data[(n, t, f)] = z.data[(n, t, f)] * factor;
            }
        }
    }
    out
}

/// Shrinkage for the variance-weighted squared l2 penalty: each entry scaled
/// by `v/(v + lambda)`.
pub fn prox_weighted_l2(
    z: &SpectrogramTensor,
    variance: &ndarray::Array3<f64>,
    lambda: f64,
) -> SpectrogramTensor {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    assert_eq!(variance.dim(), z.data.dim(), "variance shape must match");
    let mut out = z.clone();
    ndarray::Zip::from(&mut out.data)
        .and(variance)
        .for_each(|o, &v| {
            debug_assert!(v >= 0.0);
            let denom = v + lambda;
            *o = if denom > 0.0 { *o * (v / denom) } else { Complex64::default() };
        });
    out
}

/// Log-det prox: per frequency, every singular value sigma of the demixing
/// matrix becomes `(sigma + sqrt(sigma^2 + 4 mu)) / 2`, with the singular
/// subspaces unchanged. For the zero matrix the recomposition is unitary
/// dependent; only its singular values (all `sqrt(mu)`) are contractual.
pub fn prox_logdet(w: &DemixingStack, mu: f64) -> DemixingStack {
    assert!(mu > 0.0, "prox step must be positive");
    let (bins, n, m) = w.shape();
    let mut out = DemixingStack::zeros(bins, n, m);
    for f in 0..bins {
        let wf = w.matricize(f);
        let mat = DMatrix::from_fn(n, m, |r, c| wf[(r, c)]);
        let svd = mat.svd(true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v_t requested");
        let k = svd.singular_values.len();
        let mut recon = DMatrix::<Complex64>::zeros(n, m);
        for r in 0..n {
            for c in 0..m {
                let mut acc = Complex64::default();
                for s in 0..k {
                    let sigma = svd.singular_values[s];
                    let boosted = 0.5 * (sigma + (sigma * sigma + 4.0 * mu).sqrt());
                    acc += u[(r, s)] * boosted * vt[(s, c)];
                }
                recon[(r, c)] = acc;
            }
        }
        for r in 0..n {
            for c in 0..m {
                out.matrices[(f, r, c)] = recon[(r, c)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec_from(values: Vec<Complex64>, n: usize, t: usize, f: usize) -> SpectrogramTensor {
        SpectrogramTensor::new(Array3::from_shape_vec((n, t, f), values).unwrap(), 1, 2)
    }

    fn random_spec(n: usize, t: usize, f: usize, seed: u64) -> SpectrogramTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        spec_from(
            (0..n * t * f)
                .map(|_| Complex64::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0))
                .collect(),
            n,
            t,
            f,
        )
    }

    #[test]
    fn soft_threshold_closed_forms() {
        let z = spec_from(
            vec![
                Complex64::new(3.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, -4.0),
                Complex64::default(),
            ],
            1,
            1,
            4,
        );
        let out = prox_l1(&z, 1.0);
        assert_eq!(out.data[(0, 0, 0)], Complex64::new(2.0, 0.0));
        assert_eq!(out.data[(0, 0, 1)], Complex64::default());
        assert_eq!(out.data[(0, 0, 2)], Complex64::new(0.0, -3.0)); // phase kept
        assert_eq!(out.data[(0, 0, 3)], Complex64::default());
    }

    #[test]
    fn group_threshold_closed_forms() {
        let z = spec_from(vec![Complex64::new(3.0, 0.0), Complex64::new(4.0, 0.0)], 1, 1, 2);
        let zeroed = prox_l21(&z, 5.0);
        assert!(zeroed.data.iter().all(|v| v.norm() == 0.0));
        let half = prox_l21(&z, 2.5);
        assert!((half.data[(0, 0, 0)] - Complex64::new(1.5, 0.0)).norm() <= 1e-15);
        assert!((half.data[(0, 0, 1)] - Complex64::new(2.0, 0.0)).norm() <= 1e-15);
    }

    #[test]
    fn group_of_size_one_is_soft_threshold() {
        let z = random_spec(2, 5, 1, 1);
        let a = prox_l21(&z, 0.7);
        let b = prox_l1(&z, 0.7);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).norm() <= 1e-15);
        }
    }

    #[test]
    fn p_shrinkage_closed_forms() {
        let z = spec_from(vec![Complex64::new(2.0, 0.0)], 1, 1, 1);
        let out = p_shrinkage(&z, 1.0, 0.0);
        assert!((out.data[(0, 0, 0)].re - 1.5).abs() <= 1e-15);
        // p = 1 reduces to the soft threshold
        let z2 = random_spec(1, 4, 3, 2);
        let a = p_shrinkage(&z2, 0.6, 1.0);
        let b = prox_l1(&z2, 0.6);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).norm() <= 1e-14);
        }
        // below threshold zeroed for p < 2
        let z3 = spec_from(vec![Complex64::new(0.3, 0.4)], 1, 1, 1);
        assert_eq!(p_shrinkage(&z3, 0.5, -1.0).data[(0, 0, 0)], Complex64::default());
    }

    #[test]
    fn social_delta_kernel_is_soft_threshold() {
        let z = random_spec(2, 4, 5, 3);
        let delta = Array2::from_elem((1, 1), 1.0);
        let a = social_shrinkage(&z, 0.8, &delta);
        let b = prox_l1(&z, 0.8);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).norm() <= 1e-14);
        }
    }

    #[test]
    fn social_full_band_kernel_is_group_threshold() {
        let z = random_spec(1, 3, 4, 4);
        let bins = 4;
        // a single-frame kernel of ones wide enough to cover every bin from
        // any center recovers the per-frame frequency group
        let kernel = Array2::from_elem((1, 2 * bins - 1), 1.0);
        let a = social_shrinkage(&z, 0.8, &kernel);
        let b = prox_l21(&z, 0.8);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).norm() <= 1e-14);
        }
    }

    #[test]
    fn social_matches_naive_convolution_oracle() {
        let z = random_spec(1, 4, 4, 5);
        let kernel = Array2::from_elem((3, 3), 1.0);
        let out = social_shrinkage(&z, 0.5, &kernel);
        let (_, frames, bins) = z.shape();
        for t in 0..frames {
            for f in 0..bins {
                let mut energy = 0.0;
                for dt in -1..=1i32 {
                    for df in -1..=1i32 {
                        let ti = t as i32 + dt;
                        let fj = f as i32 + df;
                        if ti >= 0 && (ti as usize) < frames && fj >= 0 && (fj as usize) < bins {
                            energy += z.data[(0, ti as usize, fj as usize)].norm_sqr();
                        }
                    }
                }
                let norm = energy.sqrt();
                let factor = if norm <= 0.5 { 0.0 } else { 1.0 - 0.5 / norm };
                let want = z.data[(0, t, f)] * factor;
                assert!((out.data[(0, t, f)] - want).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn weighted_l2_closed_forms() {
        let z = spec_from(vec![Complex64::new(2.0, 2.0)], 1, 1, 1);
        let v = Array3::from_elem((1, 1, 1), 1.0);
        let half = prox_weighted_l2(&z, &v, 1.0);
        assert!((half.data[(0, 0, 0)] - Complex64::new(1.0, 1.0)).norm() <= 1e-15);
        let zeroed = prox_weighted_l2(&z, &Array3::zeros((1, 1, 1)), 1.0);
        assert_eq!(zeroed.data[(0, 0, 0)], Complex64::default());
        let huge = prox_weighted_l2(&z, &Array3::from_elem((1, 1, 1), 1e12), 1.0);
        assert!((huge.data[(0, 0, 0)] - z.data[(0, 0, 0)]).norm() <= 1e-10 * z.data[(0, 0, 0)].norm());
    }

    fn stack_from(mats: Vec<Complex64>, f: usize, n: usize, m: usize) -> DemixingStack {
        DemixingStack::new(Array3::from_shape_vec((f, n, m), mats).unwrap())
    }

    #[test]
    fn logdet_scalar_closed_form() {
        // sigma = 3, mu = 4 -> (3 + 5)/2 = 4
        let w = stack_from(vec![Complex64::new(3.0, 0.0)], 1, 1, 1);
        let out = prox_logdet(&w, 4.0);
        assert!((out.matrices[(0, 0, 0)].re - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn logdet_zero_matrix_singular_values() {
        let w = DemixingStack::zeros(2, 2, 2);
        let out = prox_logdet(&w, 1.0);
        for f in 0..2 {
            let wf = out.matricize(f);
            let mat = DMatrix::from_fn(2, 2, |r, c| wf[(r, c)]);
            let sv = mat.svd(false, false).singular_values;
            for s in sv.iter() {
                assert!((s - 1.0).abs() <= 1e-12, "singular value {s}");
            }
        }
    }

    #[test]
    fn logdet_optimality_identity() {
        // sigma' (sigma' - sigma) = mu for every singular value
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DemixingStack::new(Array3::from_shape_fn((3, 2, 2), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        }));
        let mu = 0.7;
        let out = prox_logdet(&w, mu);
        for f in 0..3 {
            let a = DMatrix::from_fn(2, 2, |r, c| w.matricize(f)[(r, c)]);
            let b = DMatrix::from_fn(2, 2, |r, c| out.matricize(f)[(r, c)]);
            let sin = a.svd(false, false).singular_values;
            let mut sout = b.svd(false, false).singular_values.as_slice().to_vec();
            sout.sort_by(|x, y| y.partial_cmp(x).unwrap());
            for (s, sp) in sin.iter().zip(sout.iter()) {
                assert!((sp * (sp - s) - mu).abs() <= 1e-12, "{sp} vs {s}");
                assert!(*sp >= mu.sqrt() - 1e-12);
                assert!(*sp > *s);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn phase_preserved_and_contractive(seed in 0u64..1000, lambda in 0.0f64..2.0) {
            let z = random_spec(2, 3, 4, seed);
            for out in [prox_l1(&z, lambda), prox_l21(&z, lambda),
                        p_shrinkage(&z, lambda, 0.5)] {
                for (o, i) in out.data.iter().zip(z.data.iter()) {
                    // output is a nonnegative real multiple of the input
                    prop_assert!(o.norm() <= i.norm() + 1e-15);
                    let cross = (o.conj() * i).im.abs();
                    prop_assert!(cross <= 1e-12 * (i.norm_sqr() + 1.0));
                    prop_assert!((o.conj() * i).re >= -1e-15);
                }
            }
        }

        #[test]
        fn convex_proxes_nonexpansive(seed in 0u64..500, lambda in 0.0f64..1.5) {
            let a = random_spec(2, 3, 4, seed);
            let b = random_spec(2, 3, 4, seed + 7777);
            let dist = |x: &SpectrogramTensor, y: &SpectrogramTensor| -> f64 {
                x.data.iter().zip(y.data.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
            };
            let d0 = dist(&a, &b);
            prop_assert!(dist(&prox_l1(&a, lambda), &prox_l1(&b, lambda)) <= d0 + 1e-12);
            prop_assert!(dist(&prox_l21(&a, lambda), &prox_l21(&b, lambda)) <= d0 + 1e-12);
            let v = Array3::from_elem((2, 3, 4), 0.8);
            prop_assert!(dist(&prox_weighted_l2(&a, &v, lambda), &prox_weighted_l2(&b, &v, lambda)) <= d0 + 1e-12);
        }

        // The spectral map is not globally nonexpansive (the underlying
        // penalty -sum log sigma is not convex in the matrix), but the
        // scalar singular-value update is a strict contraction, and the
        // matrix map is nonexpansive when the singular subspaces agree.
        #[test]
        fn logdet_scalar_map_contracts(sa in 0.0f64..10.0, sb in 0.0f64..10.0, mu in 0.05f64..2.0) {
            let boost = |s: f64| 0.5 * (s + (s * s + 4.0 * mu).sqrt());
            prop_assert!((boost(sa) - boost(sb)).abs() <= (sa - sb).abs() + 1e-12);
        }

        #[test]
        fn logdet_nonexpansive_on_shared_subspaces(seed in 0u64..200, mu in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = DemixingStack::new(Array3::from_shape_fn((2, 2, 2), |_| {
                Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
            }));
            // scale each frequency slice: singular vectors unchanged
            let c = 0.3 + rng.random::<f64>() * 2.0;
            let scaled = DemixingStack::new(base.matrices.mapv(|v| v * c));
            let d0 = base.combine(1.0, &scaled, -1.0).norm();
            let d1 = prox_logdet(&base, mu)
                .combine(1.0, &prox_logdet(&scaled, mu), -1.0)
                .norm();
            prop_assert!(d1 <= d0 + 1e-10);
        }
    }
}
