//! Reconstruction losses: spatial MSE, frequency-domain distance, and the
//! frequency-weighted loss with its analytic gradient.
//!
//! The weighted loss is, per channel,
//! `L = (1/MN) sum_{u,v} w(u,v) |F(u,v) - Fhat(u,v)|`
//! with `F`/`Fhat` the forward transforms of input and reconstruction and
//! `w` from [`crate::spectral::weight_matrix`]; channels are averaged.
//! The spectral difference is computed as `dft2(f - fhat)`, which equals
//! `dft2(f) - dft2(fhat)` by linearity but keeps a constant-offset
//! reconstruction *exactly* loss-free: the transform of a constant plane
//! has exact zeros off the DC bin, and the DC weight is zero.

use std::str::FromStr;

use num_complex::Complex64;

use crate::spectral::{dft2, idft2_complex, weight_matrix, WeightMode};
use crate::types::{ComplexMatrix, GradientImage, Image, RealMatrix};
use crate::{Error, Result};

/// Which reconstruction loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Wfdl,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "wfdl" => Ok(LossKind::Wfdl),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss '{other}' (expected mse|wfdl)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Wfdl => "wfdl",
        })
    }
}

/// Loss selection plus the weight indexing used when the kind is `Wfdl`.
/// Per-channel losses are always averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub weight_mode: WeightMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Wfdl,
            weight_mode: WeightMode::Centered,
        }
    }
}

fn check_shapes(f: &Image, f_hat: &Image) -> Result<()> {
    if !f.same_shape(f_hat) {
        return Err(Error::shape(f.shape_string(), f_hat.shape_string()));
    }
    Ok(())
}

/// Spatial squared error summed over pixels, averaged over channels.
pub fn mse_loss(f: &Image, f_hat: &Image) -> Result<f64> {
    check_shapes(f, f_hat)?;
    let mut total = 0.0;
    for (a, b) in f.planes().iter().zip(f_hat.planes()) {
        total += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total / f.channels() as f64)
}

/// Gradient of [`mse_loss`] with respect to the reconstruction.
pub fn mse_gradient(f: &Image, f_hat: &Image) -> Result<GradientImage> {
    check_shapes(f, f_hat)?;
    let scale = 2.0 / f.channels() as f64;
    let planes = f
        .planes()
        .iter()
        .zip(f_hat.planes())
        .map(|(a, b)| (b - a) * scale)
        .collect();
    GradientImage::new(planes)
}

/// Mean complex distance between two spectra: `(1/MN) sum |F - Fhat|`.
pub fn frequency_distance(f: &ComplexMatrix, f_hat: &ComplexMatrix) -> Result<f64> {
    if f.dim() != f_hat.dim() {
        return Err(Error::shape(
            format!("{}x{}", f.dim().0, f.dim().1),
            format!("{}x{}", f_hat.dim().0, f_hat.dim().1),
        ));
    }
    let (m, n) = f.dim();
    let sum: f64 = f
        .iter()
        .zip(f_hat.iter())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(sum / (m as f64 * n as f64))
}

/// Frequency-weighted reconstruction loss, averaged over channels.
///
/// With `weight_mode = None` this reduces to the unweighted frequency
/// distance of the two transforms.
pub fn wfdl_loss(f: &Image, f_hat: &Image, config: &LossConfig) -> Result<f64> {
    check_shapes(f, f_hat)?;
    let weights = weight_matrix(f.height(), f.width(), config.weight_mode);
    let mn = (f.height() * f.width()) as f64;
    let mut total = 0.0;
    for (a, b) in f.planes().iter().zip(f_hat.planes()) {
        let diff_spectrum = dft2(&(a - b));
        total += weights
            .iter()
            .zip(diff_spectrum.iter())
            .map(|(w, d)| w * d.norm())
            .sum::<f64>()
            / mn;
    }
    Ok(total / f.channels() as f64)
}

/// Bins whose magnitude is below this fraction of the largest bin sit at
/// the transform's floating-point noise floor; the gradient treats them
/// as exact zeros so that the zero-bin subgradient rule survives rounding
/// (e.g. a constant-offset reconstruction keeps an exactly zero gradient).
const SPECTRAL_NOISE_FLOOR: f64 = 1e-13;

/// Analytic gradient of [`wfdl_loss`] with respect to the reconstruction.
///
/// Per channel the gradient is `-Re(idft2(w * D/|D|)) / C` with
/// `D = dft2(f - fhat)`; bins with `|D| = 0` (up to the relative noise
/// floor) contribute zero, the subgradient choice at the
/// non-differentiable point.
pub fn wfdl_gradient(f: &Image, f_hat: &Image, config: &LossConfig) -> Result<GradientImage> {
    Ok(wfdl_loss_and_gradient(f, f_hat, config)?.1)
}

/// [`wfdl_loss`] and [`wfdl_gradient`] from one pass over the spectra.
pub fn wfdl_loss_and_gradient(
    f: &Image,
    f_hat: &Image,
    config: &LossConfig,
) -> Result<(f64, GradientImage)> {
    check_shapes(f, f_hat)?;
    let weights = weight_matrix(f.height(), f.width(), config.weight_mode);
    let mn = (f.height() * f.width()) as f64;
    let channels = f.channels() as f64;
    let mut total = 0.0;
    let mut grad_planes = Vec::with_capacity(f.channels());
    for (a, b) in f.planes().iter().zip(f_hat.planes()) {
        let diff_spectrum = dft2(&(a - b));
        let peak = diff_spectrum.iter().fold(0.0f64, |m, d| m.max(d.norm()));
        let floor = SPECTRAL_NOISE_FLOOR * peak;
        let mut weighted_sign = ComplexMatrix::zeros(diff_spectrum.dim());
        let mut channel_sum = 0.0;
        for ((d, w), out) in diff_spectrum
            .iter()
            .zip(weights.iter())
            .zip(weighted_sign.iter_mut())
        {
            let mag = d.norm();
            channel_sum += w * mag;
            if mag > floor {
                *out = w * d / mag;
            }
        }
        total += channel_sum / mn;
        let grad = idft2_complex(&weighted_sign).mapv(|z| -z.re / channels);
        grad_planes.push(grad);
    }
    Ok((total / channels, GradientImage::new(grad_planes)?))
}

/// Loss selected by `config.kind`.
pub fn loss_value(f: &Image, f_hat: &Image, config: &LossConfig) -> Result<f64> {
    match config.kind {
        LossKind::Mse => mse_loss(f, f_hat),
        LossKind::Wfdl => wfdl_loss(f, f_hat, config),
    }
}

/// Loss and its gradient, selected by `config.kind`.
pub fn loss_and_gradient(
    f: &Image,
    f_hat: &Image,
    config: &LossConfig,
) -> Result<(f64, GradientImage)> {
    match config.kind {
        LossKind::Mse => Ok((mse_loss(f, f_hat)?, mse_gradient(f, f_hat)?)),
        LossKind::Wfdl => wfdl_loss_and_gradient(f, f_hat, config),
    }
}

/// Test helper shared with the acceptance suite: build an image whose
/// spectrum has unit energy concentrated on the conjugate bin pair
/// `(0, k)` / `(0, N-k)`, scaled to the requested spatial L2 energy.
pub fn single_bin_perturbation(size: usize, bin: usize, spatial_energy: f64) -> RealMatrix {
    assert!(bin > 0 && bin < size, "bin must be a proper pair index");
    let mut spectrum = ComplexMatrix::zeros((size, size));
    // Parseval: spatial energy = (1/MN) sum |P|^2. A conjugate pair with
    // amplitude a on each side carries 2 a^2 / MN.
    let mn = (size * size) as f64;
    let amplitude = if bin * 2 == size {
        // self-conjugate bin
        (spatial_energy * mn).sqrt()
    } else {
        (spatial_energy * mn / 2.0).sqrt()
    };
    spectrum[(0, bin)] = Complex64::new(amplitude, 0.0);
    if bin * 2 != size {
        spectrum[(0, size - bin)] = Complex64::new(amplitude, 0.0);
    }
    idft2_complex(&spectrum).mapv(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, channels: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..channels)
            .map(|_| RealMatrix::from_shape_fn((h, w), |_| rng.random::<f64>()))
            .collect();
        Image::new(planes).unwrap()
    }

    fn wfdl_config(mode: WeightMode) -> LossConfig {
        LossConfig {
            kind: LossKind::Wfdl,
            weight_mode: mode,
        }
    }

    #[test]
    fn mse_identity_is_zero() {
        let f = random_image(8, 8, 3, 1);
        assert_eq!(mse_loss(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn mse_single_pixel() {
        let f = Image::from_plane(array![[1.0]]).unwrap();
        let g = Image::from_plane(array![[0.5]]).unwrap();
        assert!((mse_loss(&f, &g).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_direct_sum_oracle() {
        let f = random_image(8, 8, 3, 2);
        let g = random_image(8, 8, 3, 3);
        // direct double-loop evaluation, channel mean
        let mut expected = 0.0;
        for c in 0..3 {
            for x in 0..8 {
                for y in 0..8 {
                    let d = f.plane(c)[(x, y)] - g.plane(c)[(x, y)];
                    expected += d * d;
                }
            }
        }
        expected /= 3.0;
        assert!((mse_loss(&f, &g).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let f = random_image(8, 8, 3, 4);
        let g = random_image(8, 4, 3, 5);
        assert!(mse_loss(&f, &g).is_err());
    }

    #[test]
    fn frequency_distance_identity_and_single_bin() {
        let f = dft2(&random_image(4, 4, 1, 6).plane(0).clone());
        assert_eq!(frequency_distance(&f, &f).unwrap(), 0.0);

        let mut a = ComplexMatrix::zeros((1, 1));
        a[(0, 0)] = Complex64::new(3.0, 4.0);
        let b = ComplexMatrix::zeros((1, 1));
        assert!((frequency_distance(&a, &b).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn unit_weights_reduce_to_frequency_distance() {
        let f = random_image(8, 8, 3, 7);
        let g = random_image(8, 8, 3, 8);
        let via_wfdl = wfdl_loss(&f, &g, &wfdl_config(WeightMode::None)).unwrap();
        let mut via_distance = 0.0;
        for c in 0..3 {
            via_distance += frequency_distance(&dft2(f.plane(c)), &dft2(g.plane(c))).unwrap();
        }
        via_distance /= 3.0;
        assert!(
            (via_wfdl - via_distance).abs() < 1e-12,
            "wfdl {via_wfdl} vs distance {via_distance}"
        );
    }

    #[test]
    fn wfdl_identity_is_exactly_zero() {
        let f = random_image(16, 16, 3, 9);
        assert_eq!(wfdl_loss(&f, &f, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn wfdl_is_blind_to_constant_offsets() {
        let f = random_image(16, 16, 3, 10);
        for mode in [WeightMode::Centered, WeightMode::Raw] {
            for c in [-0.3, 0.1, 0.5] {
                let shifted = f.offset(c);
                let loss = wfdl_loss(&f, &shifted, &wfdl_config(mode)).unwrap();
                assert!(loss.abs() <= 1e-12, "mode {mode:?} c {c}: loss {loss}");
                let grad = wfdl_gradient(&f, &shifted, &wfdl_config(mode)).unwrap();
                assert!(grad.max_abs() <= 1e-12, "mode {mode:?} c {c}: grad nonzero");
            }
        }
    }

    #[test]
    fn high_frequency_perturbation_costs_more() {
        let size = 16;
        let base = random_image(size, size, 1, 11);
        let energy = 0.01;
        let low = single_bin_perturbation(size, 1, energy);
        let high = single_bin_perturbation(size, size / 2 - 1, energy);
        // both perturbations carry the same spatial energy
        let e_low: f64 = low.iter().map(|v| v * v).sum();
        let e_high: f64 = high.iter().map(|v| v * v).sum();
        assert!((e_low - e_high).abs() < 1e-9);

        let config = LossConfig::default();
        let loss_low = wfdl_loss(
            &base,
            &Image::from_plane(base.plane(0) + &low).unwrap(),
            &config,
        )
        .unwrap();
        let loss_high = wfdl_loss(
            &base,
            &Image::from_plane(base.plane(0) + &high).unwrap(),
            &config,
        )
        .unwrap();
        assert!(
            loss_high > loss_low,
            "high-bin loss {loss_high} <= low-bin loss {loss_low}"
        );
    }

    /// Max-norm relative error between the analytic gradient and a central
    /// finite-difference evaluation of the loss.
    fn gradient_fd_error(f: &Image, f_hat: &Image, config: &LossConfig, step: f64) -> f64 {
        let analytic = wfdl_gradient(f, f_hat, config).unwrap();
        let mut max_diff = 0.0f64;
        let mut max_ref = 0.0f64;
        for c in 0..f.channels() {
            for x in 0..f.height() {
                for y in 0..f.width() {
                    let perturb = |delta: f64| {
                        let mut planes: Vec<RealMatrix> = f_hat.planes().to_vec();
                        planes[c][(x, y)] += delta;
                        wfdl_loss(f, &Image::new(planes).unwrap(), config).unwrap()
                    };
                    let numeric = (perturb(step) - perturb(-step)) / (2.0 * step);
                    let diff = (analytic.plane(c)[(x, y)] - numeric).abs();
                    max_diff = max_diff.max(diff);
                    max_ref = max_ref.max(numeric.abs());
                }
            }
        }
        max_diff / max_ref.max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for mode in [WeightMode::Centered, WeightMode::Raw, WeightMode::None] {
            let f = random_image(8, 8, 3, 12);
            let g = random_image(8, 8, 3, 13);
            let err = gradient_fd_error(&f, &g, &wfdl_config(mode), 1e-4);
            assert!(err < 1e-4, "mode {mode:?}: fd error {err}");
        }
    }

    #[test]
    fn gradient_identity_is_exactly_zero() {
        let f = random_image(8, 8, 3, 14);
        let grad = wfdl_gradient(&f, &f, &LossConfig::default()).unwrap();
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn losses_are_nonnegative() {
        for seed in 0..10 {
            let f = random_image(6, 6, 3, seed);
            let g = random_image(6, 6, 3, seed + 100);
            assert!(mse_loss(&f, &g).unwrap() >= 0.0);
            assert!(wfdl_loss(&f, &g, &LossConfig::default()).unwrap() >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_distance_symmetry(seed in 0u64..500) {
            let f = dft2(&random_image(6, 6, 1, seed).plane(0).clone());
            let g = dft2(&random_image(6, 6, 1, seed + 1000).plane(0).clone());
            prop_assert_eq!(
                frequency_distance(&f, &g).unwrap(),
                frequency_distance(&g, &f).unwrap()
            );
        }

        #[test]
        fn prop_triangle_inequality(seed in 0u64..500) {
            let f = dft2(&random_image(6, 6, 1, seed).plane(0).clone());
            let g = dft2(&random_image(6, 6, 1, seed + 1000).plane(0).clone());
            let h = dft2(&random_image(6, 6, 1, seed + 2000).plane(0).clone());
            let fg = frequency_distance(&f, &g).unwrap();
            let fh = frequency_distance(&f, &h).unwrap();
            let hg = frequency_distance(&h, &g).unwrap();
            prop_assert!(fg <= fh + hg + 1e-9);
        }
    }
}
