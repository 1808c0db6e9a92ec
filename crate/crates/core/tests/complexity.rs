use flowood::complexity::{compress_bits, complexity, decode, encode};
use flowood::datagen::{gauss_texture, manipulate, pooling_noise, uniform_noise, Image, Manipulation};
use flowood::numerics::Rng;
use proptest::prelude::*;

fn mean_c(images: &[Image]) -> f64 {
    images.iter().map(complexity).sum::<f64>() / images.len() as f64
}

#[test]
fn golden_lengths() {
    // Pinned from the reference codec. The origin is predicted as 128, so an
    // all-128 image has an all-zero residual plane, which the flush encodes
    // as the empty string.
    assert_eq!(compress_bits(&Image::filled(8, 8, 1, 128).unwrap()), 0);
    for v in [0u8, 37, 200, 255] {
        assert_eq!(compress_bits(&Image::filled(8, 8, 1, v).unwrap()), 32, "value {v}");
    }
    assert_eq!(compress_bits(&uniform_noise(&mut Rng::new(42), 8, 1).unwrap()), 536);
}

#[test]
fn constant_images_below_bound() {
    for v in 0..=255u8 {
        let c = complexity(&Image::filled(8, 8, 1, v).unwrap());
        assert!(c < 0.6, "value {v}: {c}");
    }
}

#[test]
fn uniform_noise_in_band() {
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let c = complexity(&uniform_noise(&mut rng, 8, 1).unwrap());
        assert!((7.5..=9.0).contains(&c), "{c}");
    }
}

#[test]
fn deterministic_length() {
    let img = gauss_texture(&mut Rng::new(1), 1.0, 1, 16, 3).unwrap().remove(0);
    assert_eq!(encode(&img), encode(&img));
}

#[test]
fn pooling_ladder_strictly_decreasing() {
    // 32×32 so that every κ up to 32 is a distinct block size.
    let ladder = [1, 2, 4, 8, 16, 32];
    let means: Vec<f64> = ladder
        .iter()
        .map(|&k| mean_c(&pooling_noise(&mut Rng::new(100 + k as u64), k, 64, 32, 1).unwrap()))
        .collect();
    for w in means.windows(2) {
        assert!(w[0] > w[1], "{means:?}");
    }
}

#[test]
fn noise_patches_raise_complexity() {
    let base = gauss_texture(&mut Rng::new(3), 2.0, 64, 16, 1).unwrap();
    let mut prev = mean_c(&base);
    for n in [4, 8, 16] {
        let m = mean_c(&manipulate(&base, Manipulation::Noise { patches: n }, &mut Rng::new(n as u64)).unwrap());
        assert!(m > prev, "n={n}: {m} <= {prev}");
        prev = m;
    }
    let pooled = mean_c(&manipulate(&base, Manipulation::Pool { kappa: 8 }, &mut Rng::new(0)).unwrap());
    assert!(pooled < mean_c(&base));
}

#[test]
fn blur_ladder_decreasing_to_constant_level() {
    let side = 16;
    let noise = mean_c(&(0..64).map(|i| uniform_noise(&mut Rng::new(i), side, 1).unwrap()).collect::<Vec<_>>());
    let sigmas = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0];
    let means: Vec<f64> = sigmas
        .iter()
        .map(|&s| mean_c(&gauss_texture(&mut Rng::new(9), s, 64, side, 1).unwrap()))
        .collect();
    assert!((means[0] - noise).abs() < 0.1, "{means:?} vs {noise}");
    for w in means.windows(2) {
        assert!(w[0] > w[1], "{means:?}");
    }
    // Constant 16×16 images cost at most 32 bits, i.e. 0.125 bits/dim.
    assert!(*means.last().unwrap() < 0.25, "{means:?}");
}

fn structured_image() -> impl Strategy<Value = Image> {
    (1usize..20, 1usize..20, prop_oneof![Just(1usize), Just(3usize)], 0u8..4, any::<u64>()).prop_map(
        |(h, w, ch, kind, seed)| {
            let mut rng = Rng::new(seed);
            let pixels: Vec<u8> = (0..h * w * ch)
                .map(|i| match kind {
                    0 => rng.below(256) as u8,
                    1 => (seed % 256) as u8,
                    2 => (i % 7) as u8 * 40,
                    _ => if rng.next_f64() < 0.9 { 0 } else { 255 },
                })
                .collect();
            Image::new(h, w, ch, pixels).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lossless_round_trip(img in structured_image()) {
        let bytes = encode(&img);
        let back = decode(&bytes, img.height(), img.width(), img.channels()).unwrap();
        prop_assert_eq!(back, img);
    }
}
