use crate::numerics::Rng;

use super::DatagenError;

/// 8-bit raster, row-major with interleaved channels (the PNM layout).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DatagenError> {
        if channels != 1 && channels != 3 {
            return Err(DatagenError::Channels(channels));
        }
        if height == 0 || width == 0 {
            return Err(DatagenError::EmptyImage);
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(DatagenError::PixelCount {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, DatagenError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of scalar dimensions, `H·W·Ch`.
    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: u8) {
        self.pixels[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn same_geometry(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Continuous vector `(pixels + u) / 256` with `u ~ U[0,1)^d`, together
/// with the log-volume of one quantization bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Dequantized {
    pub values: Vec<f64>,
    /// `−d·ln 256`; add to a continuous log-density to get nats per image.
    pub log_offset: f64,
}

/// Largest jitter kept as is. `p + u` is exact below this for every 8-bit
/// `p`, so `floor(256·v)` always recovers `p`.
const MAX_JITTER: f64 = 1.0 - 1.0 / (1u64 << 44) as f64;

fn dequantize_value(p: u8, u: f64) -> f64 {
    (p as f64 + u.clamp(0.0, MAX_JITTER)) / 256.0
}

pub fn dequantization_offset(d: usize) -> f64 {
    -(d as f64) * 256f64.ln()
}

pub fn dequantize(image: &Image, rng: &mut Rng) -> Dequantized {
    let values = image
        .pixels
        .iter()
        .map(|&p| dequantize_value(p, rng.next_f64()))
        .collect();
    Dequantized {
        values,
        log_offset: dequantization_offset(image.dim()),
    }
}

/// Dequantizes with caller-supplied jitter `u` (each entry in `[0, 1)`).
pub fn dequantize_with(image: &Image, u: &[f64]) -> Dequantized {
    assert_eq!(u.len(), image.dim(), "jitter length");
    let values = image
        .pixels
        .iter()
        .zip(u)
        .map(|(&p, &ui)| dequantize_value(p, ui))
        .collect();
    Dequantized {
        values,
        log_offset: dequantization_offset(image.dim()),
    }
}

/// Maps a continuous value back to its 8-bit bin: `floor(256·v)` clamped to
/// `0..=255`.
pub fn quantize_value(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 256.0).floor().clamp(0.0, 255.0) as u8
}

pub fn quantize(values: &[f64], height: usize, width: usize, channels: usize) -> Result<Image, DatagenError> {
    Image::new(
        height,
        width,
        channels,
        values.iter().map(|&v| quantize_value(v)).collect(),
    )
}
