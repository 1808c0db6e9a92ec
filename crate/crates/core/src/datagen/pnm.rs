//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatagenError, Image};

fn parse_error(offset: usize, msg: impl Into<String>) -> DatagenError {
    DatagenError::Parse {
        offset,
        msg: msg.into(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DatagenError> {
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_error(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_error(start, format!("{what} out of range")))
    }
}

/// Decodes a P5/P6 byte buffer.
pub fn decode_pnm(buf: &[u8]) -> Result<Image, DatagenError> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(parse_error(0, "missing P5/P6 magic"));
    }
    let channels = match buf[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(parse_error(1, "only binary P5 and P6 are supported")),
    };
    let mut cur = Cursor { buf, pos: 2 };
    cur.skip_space();
    let width = cur.number("width")?;
    cur.skip_space();
    let height = cur.number("height")?;
    cur.skip_space();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(parse_error(maxval_at, format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_error(2, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match buf.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(parse_error(cur.pos, "expected whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| parse_error(2, "image dimensions overflow"))?;
    let have = buf.len() - cur.pos;
    if have < need {
        return Err(DatagenError::Truncated {
            offset: buf.len(),
            missing: need - have,
        });
    }
    Image::new(height, width, channels, buf[cur.pos..cur.pos + need].to_vec())
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn load_pnm(path: &Path) -> Result<Image, DatagenError> {
    let buf = fs::read(path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    decode_pnm(&buf).map_err(|e| match e {
        DatagenError::Parse { offset, msg } => DatagenError::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn save_pnm(path: &Path, image: &Image) -> Result<(), DatagenError> {
    let mut f = fs::File::create(path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(&encode_pnm(image))
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_rgb() {
        let mut buf = b"P6 2 2 255\n".to_vec();
        buf.extend(0..12u8);
        let img = decode_pnm(&buf).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 3));
        assert_eq!(img.get(1, 1, 2), 11);
    }

    #[test]
    fn comments_are_skipped() {
        let mut buf = b"P5\n# made by hand\n3 1\n# depth\n255\n".to_vec();
        buf.extend([7, 8, 9]);
        assert_eq!(decode_pnm(&buf).unwrap().pixels(), &[7, 8, 9]);
    }

    #[test]
    fn truncated_names_missing_bytes() {
        let mut buf = b"P6 2 2 255\n".to_vec();
        buf.extend(0..7u8);
        let err = decode_pnm(&buf).unwrap_err();
        assert_eq!(err, DatagenError::Truncated { offset: 18, missing: 5 });
        assert!(err.to_string().contains("5 bytes missing"), "{err}");
    }

    #[test]
    fn bad_maxval_and_magic() {
        assert!(matches!(
            decode_pnm(b"P5 1 1 65535\n\0\0"),
            Err(DatagenError::Parse { offset: 7, .. })
        ));
        assert!(matches!(decode_pnm(b"P3 1 1 255\n0"), Err(DatagenError::Parse { offset: 1, .. })));
        assert!(matches!(decode_pnm(b"P5 x"), Err(DatagenError::Parse { offset: 3, .. })));
    }

    #[test]
    fn encode_round_trips() {
        let img = Image::new(3, 2, 1, vec![0, 255, 1, 2, 3, 4]).unwrap();
        assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
    }
}
