//! Image complexity as compressed bits per dimension.
//!
//! The built-in codec predicts each pixel from its left neighbour (the first
//! column from the pixel above, the origin from 128), codes the residual
//! modulo 256 with an adaptive order-0 model and a 32-bit range coder, and
//! processes channels one after another with a fresh model each. Only the
//! entropy-coded payload is counted; geometry is implied by the image.

mod coder;

use std::io::{Read, Write};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{encode_pnm, Image};

use coder::{ByteModel, RangeDecoder, RangeEncoder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexityError {
    #[error("external compressor `{program}`: {msg}")]
    External { program: String, msg: String },
    #[error("decoded image is invalid: {0}")]
    Decode(String),
}

fn predict(image: &Image, row: usize, col: usize, ch: usize) -> u8 {
    match (row, col) {
        (0, 0) => 128,
        (_, 0) => image.get(row - 1, 0, ch),
        _ => image.get(row, col - 1, ch),
    }
}

/// Losslessly encodes `image` with the built-in codec.
pub fn encode(image: &Image) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for ch in 0..image.channels() {
        let mut model = ByteModel::new();
        for row in 0..image.height() {
            for col in 0..image.width() {
                let residual = image.get(row, col, ch).wrapping_sub(predict(image, row, col, ch));
                model.encode(&mut enc, residual);
            }
        }
    }
    enc.finish()
}

pub fn decode(bytes: &[u8], height: usize, width: usize, channels: usize) -> Result<Image, ComplexityError> {
    let mut image = Image::filled(height, width, channels, 0).map_err(|e| ComplexityError::Decode(e.to_string()))?;
    let mut dec = RangeDecoder::new(bytes);
    for ch in 0..channels {
        let mut model = ByteModel::new();
        for row in 0..height {
            for col in 0..width {
                let residual = model.decode(&mut dec);
                let v = residual.wrapping_add(predict(&image, row, col, ch));
                image.set(row, col, ch, v);
            }
        }
    }
    Ok(image)
}

/// Bit length `L(x)` of the built-in encoding, flush included.
pub fn compress_bits(image: &Image) -> u64 {
    8 * encode(image).len() as u64
}

/// `C(x) = L(x) / d` in bits per dimension.
pub fn complexity(image: &Image) -> f64 {
    compress_bits(image) as f64 / image.dim() as f64
}

/// Source of `L(x)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Compressor {
    #[default]
    Builtin,
    /// Runs `program args..`, writes the image as binary PGM/PPM to its stdin
    /// and reads the compressed size in bytes as decimal text from stdout.
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Compressor {
    pub fn bits(&self, image: &Image) -> Result<u64, ComplexityError> {
        match self {
            Compressor::Builtin => Ok(compress_bits(image)),
            Compressor::External { program, args } => external_bits(program, args, image),
        }
    }

    pub fn complexity(&self, image: &Image) -> Result<f64, ComplexityError> {
        Ok(self.bits(image)? as f64 / image.dim() as f64)
    }
}

fn external_bits(program: &str, args: &[String], image: &Image) -> Result<u64, ComplexityError> {
    let fail = |msg: String| ComplexityError::External {
        program: program.to_string(),
        msg,
    };
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| fail(format!("spawn failed: {e}")))?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin
            .write_all(&encode_pnm(image))
            .map_err(|e| fail(format!("writing stdin: {e}")))?;
    }
    let mut text = String::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_string(&mut text)
        .map_err(|e| fail(format!("reading stdout: {e}")))?;
    let status = child.wait().map_err(|e| fail(e.to_string()))?;
    if !status.success() {
        return Err(fail(format!("exited with {status}")));
    }
    let bytes: u64 = text
        .trim()
        .parse()
        .map_err(|_| fail(format!("expected a decimal byte count, got {:?}", text.trim())))?;
    Ok(8 * bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::uniform_noise;
    use crate::numerics::Rng;

    #[test]
    fn constant_image_is_cheap() {
        let img = Image::filled(8, 8, 1, 128).unwrap();
        assert!(complexity(&img) < 0.6, "{}", complexity(&img));
        assert_eq!(decode(&encode(&img), 8, 8, 1).unwrap(), img);
    }

    #[test]
    fn uniform_noise_costs_about_a_byte() {
        let mut rng = Rng::new(11);
        for side in [8, 16] {
            let img = uniform_noise(&mut rng, side, 1).unwrap();
            let c = complexity(&img);
            assert!((7.5..=9.0).contains(&c), "side {side}: {c}");
        }
    }

    #[test]
    fn external_hook_counts_bytes() {
        let img = Image::filled(2, 3, 1, 9).unwrap();
        let wc = Compressor::External {
            program: "sh".into(),
            args: vec!["-c".into(), "wc -c".into()],
        };
        let expected = encode_pnm(&img).len() as u64 * 8;
        assert_eq!(wc.bits(&img).unwrap(), expected);
        let bad = Compressor::External {
            program: "sh".into(),
            args: vec!["-c".into(), "echo nope".into()],
        };
        assert!(bad.bits(&img).is_err());
    }
}
