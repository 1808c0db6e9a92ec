//! Complexity-controlled synthetic images.

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

use super::{DatagenError, Image};

/// Uniform random 8-bit image.
pub fn uniform_noise(rng: &mut Rng, side: usize, channels: usize) -> Result<Image, DatagenError> {
    let pixels = (0..side * side * channels).map(|_| rng.below(256) as u8).collect();
    Image::new(side, side, channels, pixels)
}

/// Average-pools non-overlapping `kappa × kappa` windows and writes each
/// window's rounded mean back over the window (nearest-neighbour resize).
///
/// Windows at the right and bottom edges are truncated when `kappa` does not
/// divide the side, and a `kappa` wider than the image pools the whole image.
pub fn average_pool(image: &Image, kappa: usize) -> Result<Image, DatagenError> {
    if kappa == 0 {
        return Err(DatagenError::PoolSize(kappa));
    }
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut out = image.clone();
    for r0 in (0..h).step_by(kappa) {
        for c0 in (0..w).step_by(kappa) {
            let r1 = (r0 + kappa).min(h);
            let c1 = (c0 + kappa).min(w);
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            for c in 0..ch {
                let mut sum = 0u64;
                for r in r0..r1 {
                    for col in c0..c1 {
                        sum += image.get(r, col, c) as u64;
                    }
                }
                let mean = (sum as f64 / count).round() as u8;
                for r in r0..r1 {
                    for col in c0..c1 {
                        out.set(r, col, c, mean);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `n` pooling-noise images: uniform noise pooled with window `kappa`.
pub fn pooling_noise(
    rng: &mut Rng,
    kappa: usize,
    n: usize,
    side: usize,
    channels: usize,
) -> Result<Vec<Image>, DatagenError> {
    if kappa == 0 {
        return Err(DatagenError::PoolSize(kappa));
    }
    (0..n)
        .map(|_| average_pool(&uniform_noise(rng, side, channels)?, kappa))
        .collect()
}

/// Complexity manipulation applied to an existing image set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Manipulation {
    /// `patches` 4×4 patches of uniform noise in [−0.2, 0.2] (pixel scale
    /// [0, 1]) at uniformly random, possibly overlapping, positions.
    Noise { patches: usize },
    /// Average pooling with window `kappa`.
    Pool { kappa: usize },
}

impl Manipulation {
    pub fn label(&self) -> String {
        match self {
            Manipulation::Noise { patches } => format!("Noise-4-{patches}"),
            Manipulation::Pool { kappa } => format!("Pool-{kappa}"),
        }
    }
}

pub const PATCH_SIDE: usize = 4;
pub const PATCH_AMPLITUDE: f64 = 0.2;

fn add_noise_patches(image: &Image, patches: usize, rng: &mut Rng) -> Result<Image, DatagenError> {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    if h < PATCH_SIDE || w < PATCH_SIDE {
        return Err(DatagenError::PatchTooLarge {
            patch: PATCH_SIDE,
            height: h,
            width: w,
        });
    }
    let mut out = image.clone();
    for _ in 0..patches {
        let r0 = rng.below((h - PATCH_SIDE + 1) as u64) as usize;
        let c0 = rng.below((w - PATCH_SIDE + 1) as u64) as usize;
        for r in r0..r0 + PATCH_SIDE {
            for c in c0..c0 + PATCH_SIDE {
                for k in 0..ch {
                    let v = out.get(r, c, k) as f64 / 255.0
                        + rng.uniform(-PATCH_AMPLITUDE, PATCH_AMPLITUDE);
                    out.set(r, c, k, (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    Ok(out)
}

pub fn manipulate(base: &[Image], mode: Manipulation, rng: &mut Rng) -> Result<Vec<Image>, DatagenError> {
    base.iter()
        .map(|img| match mode {
            Manipulation::Noise { patches } => add_noise_patches(img, patches, rng),
            Manipulation::Pool { kappa } => average_pool(img, kappa),
        })
        .collect()
}

/// Normalized 1-D Gaussian kernel folded onto a circle of length `side`.
fn circular_kernel(sigma: f64, side: usize) -> Vec<f64> {
    let mut k = vec![0.0; side];
    if sigma <= 0.0 {
        k[0] = 1.0;
        return k;
    }
    let radius = (4.0 * sigma).ceil() as i64;
    for off in -radius..=radius {
        let wgt = (-(off * off) as f64 / (2.0 * sigma * sigma)).exp();
        k[off.rem_euclid(side as i64) as usize] += wgt;
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn blur_periodic(field: &[f64], side: usize, kernel: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            tmp[r * side + c] = (0..side)
                .map(|o| kernel[o] * field[r * side + (c + side - o) % side])
                .sum();
        }
    }
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            out[r * side + c] = (0..side)
                .map(|o| kernel[o] * tmp[((r + side - o) % side) * side + c])
                .sum();
        }
    }
    out
}

/// Gaussian-blurred white noise.
///
/// Each channel is an i.i.d. `U[0,1)` field circularly convolved with a
/// unit-mass Gaussian kernel of width `sigma`, then mapped onto the full
/// 8-bit scale. The unit-mass kernel keeps values in [0, 1), so contrast
/// shrinks as `sigma` grows and the image tends to a constant colour.
pub fn gauss_texture(
    rng: &mut Rng,
    sigma: f64,
    n: usize,
    side: usize,
    channels: usize,
) -> Result<Vec<Image>, DatagenError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DatagenError::BlurWidth(sigma));
    }
    let kernel = circular_kernel(sigma, side);
    (0..n)
        .map(|_| {
            let mut pixels = vec![0u8; side * side * channels];
            for c in 0..channels {
                let field: Vec<f64> = (0..side * side).map(|_| rng.next_f64()).collect();
                let blurred = blur_periodic(&field, side, &kernel);
                for (i, v) in blurred.into_iter().enumerate() {
                    pixels[i * channels + c] = super::quantize_value(v);
                }
            }
            Image::new(side, side, channels, pixels)
        })
        .collect()
}

/// Replaces each pixel value with a uniform random byte with probability
/// `p` (per pixel and channel).
pub fn corrupt_pixels(images: &[Image], p: f64, rng: &mut Rng) -> Vec<Image> {
    images
        .iter()
        .map(|img| {
            let mut out = img.clone();
            for v in out.pixels_mut() {
                if rng.next_f64() < p {
                    *v = rng.below(256) as u8;
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_variance(img: &Image, c: usize) -> f64 {
        let vals: Vec<f64> = (0..img.height() * img.width())
            .map(|i| img.pixels()[i * img.channels() + c] as f64)
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn full_pool_is_rounded_channel_mean() {
        let mut rng = Rng::new(1);
        let noise = uniform_noise(&mut rng, 8, 3).unwrap();
        let pooled = average_pool(&noise, 8).unwrap();
        for c in 0..3 {
            let sum: u64 = (0..64).map(|i| noise.pixels()[i * 3 + c] as u64).sum();
            let mean = (sum as f64 / 64.0).round() as u8;
            assert!((0..64).all(|i| pooled.pixels()[i * 3 + c] == mean));
            assert_eq!(channel_variance(&pooled, c), 0.0);
        }
    }

    #[test]
    fn unit_pool_is_identity() {
        let mut rng = Rng::new(2);
        let noise = uniform_noise(&mut rng, 8, 1).unwrap();
        assert_eq!(average_pool(&noise, 1).unwrap(), noise);
        let a = pooling_noise(&mut Rng::new(3), 1, 2, 8, 1).unwrap();
        let mut rng = Rng::new(3);
        let b = vec![uniform_noise(&mut rng, 8, 1).unwrap(), uniform_noise(&mut rng, 8, 1).unwrap()];
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_pool_window_is_truncated() {
        let mut rng = Rng::new(4);
        let imgs = pooling_noise(&mut rng, 32, 3, 16, 1).unwrap();
        for img in &imgs {
            assert_eq!(channel_variance(img, 0), 0.0);
        }
    }

    #[test]
    fn zero_patches_is_identity() {
        let base = gauss_texture(&mut Rng::new(5), 2.0, 3, 8, 1).unwrap();
        let out = manipulate(&base, Manipulation::Noise { patches: 0 }, &mut Rng::new(6)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn patches_are_deterministic_and_sized() {
        let base = gauss_texture(&mut Rng::new(5), 2.0, 4, 8, 1).unwrap();
        let a = manipulate(&base, Manipulation::Noise { patches: 3 }, &mut Rng::new(9)).unwrap();
        let b = manipulate(&base, Manipulation::Noise { patches: 3 }, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|i| i.same_geometry(&base[0])));
        assert_ne!(a, base);
        // A patch only touches pixels inside one 4×4 window, |δ| ≤ 0.2·255.
        let one = manipulate(&base, Manipulation::Noise { patches: 1 }, &mut Rng::new(10)).unwrap();
        for (x, y) in one.iter().zip(&base) {
            let changed: Vec<usize> = (0..64).filter(|&i| x.pixels()[i] != y.pixels()[i]).collect();
            assert!(changed.len() <= 16);
            for &i in &changed {
                assert!((x.pixels()[i] as i32 - y.pixels()[i] as i32).abs() <= 52);
            }
            if let (Some(&lo), Some(&hi)) = (changed.first(), changed.last()) {
                assert!(hi / 8 - lo / 8 < 4);
            }
        }
    }

    #[test]
    fn patch_larger_than_image_errors() {
        let tiny = vec![Image::filled(3, 3, 1, 0).unwrap()];
        assert!(matches!(
            manipulate(&tiny, Manipulation::Noise { patches: 1 }, &mut Rng::new(0)),
            Err(DatagenError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn zero_blur_is_uniform_noise() {
        let imgs = gauss_texture(&mut Rng::new(7), 0.0, 1, 64, 1).unwrap();
        let mut hist = [0usize; 4];
        for &p in imgs[0].pixels() {
            hist[p as usize / 64] += 1;
        }
        assert!(hist.iter().all(|&h| h > 850 && h < 1200), "{hist:?}");
    }

    #[test]
    fn heavy_blur_flattens() {
        let imgs = gauss_texture(&mut Rng::new(8), 8.0, 4, 16, 1).unwrap();
        for img in &imgs {
            assert!(channel_variance(img, 0) < 4.0);
        }
    }

    #[test]
    fn kernel_has_unit_mass() {
        for s in [0.0, 0.5, 1.0, 2.0, 4.0, 20.0] {
            let k = circular_kernel(s, 16);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_blur_rejected() {
        assert!(gauss_texture(&mut Rng::new(0), -1.0, 1, 8, 1).is_err());
    }
}
