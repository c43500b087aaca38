//! PGM (P2 ASCII / P5 binary) image input and output.
//!
//! Intensities are normalized by the file's maxval on load; save quantizes
//! to the requested maxval. Parse failures report the byte offset of the
//! offending input.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    /// Skip whitespace and `#` comments (comments run to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail("unexpected end of file"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn next_number(&mut self, what: &str) -> Result<u32> {
        let tok = self.next_token()?;
        let s = std::str::from_utf8(tok).map_err(|_| self.fail(format!("{what}: not ASCII")))?;
        s.parse::<u32>()
            .map_err(|_| self.fail(format!("{what}: expected unsigned integer, got {s:?}")))
    }
}

/// Load a PGM file (P2 or P5, maxval 1..=65535). The result carries no mask.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    let magic = cur.next_token()?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            cur.pos = 0;
            return Err(cur.fail(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
    };
    let width = cur.next_number("width")? as usize;
    let height = cur.next_number("height")? as usize;
    if width == 0 || height == 0 {
        return Err(cur.fail(format!("degenerate dimensions {width}x{height}")));
    }
    let maxval = cur.next_number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(cur.fail(format!("maxval {maxval} outside 1..=65535")));
    }

    let n = width * height;
    let scale = 1.0 / f64::from(maxval);
    let mut data = Vec::with_capacity(n);

    if binary {
        // Exactly one separator byte between maxval and payload.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(cur.fail("missing separator before binary payload"));
        }
        cur.pos += 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        if bytes.len() - cur.pos < need {
            cur.pos = bytes.len();
            return Err(cur.fail(format!(
                "truncated payload: need {need} bytes, have {}",
                bytes.len() - cur.pos
            )));
        }
        for i in 0..n {
            let raw = if wide {
                u32::from(u16::from_be_bytes([
                    bytes[cur.pos + 2 * i],
                    bytes[cur.pos + 2 * i + 1],
                ]))
            } else {
                u32::from(bytes[cur.pos + i])
            };
            if raw > maxval {
                cur.pos += i * if wide { 2 } else { 1 };
                return Err(cur.fail(format!("sample {raw} exceeds maxval {maxval}")));
            }
            data.push(f64::from(raw) * scale);
        }
    } else {
        for _ in 0..n {
            let raw = cur.next_number("sample")?;
            if raw > maxval {
                return Err(cur.fail(format!("sample {raw} exceeds maxval {maxval}")));
            }
            data.push(f64::from(raw) * scale);
        }
    }

    GrayImage::from_vec(width, height, data)
}

/// Load a PGM file as a region-of-interest mask: nonzero = inside.
pub fn load_roi_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = load_pgm(path)?;
    let mask = img.pixels().iter().map(|v| *v > 0.0).collect();
    Ok((img.width(), img.height(), mask))
}

/// Save as binary P5 with the given maxval (16-bit big-endian when
/// maxval > 255). Intensities are quantized to `round(v * maxval)`.
pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::Parameter("maxval must be at least 1".into()));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    let m = f64::from(maxval);
    if maxval > 255 {
        for v in image.pixels() {
            let q = (v * m).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    } else {
        for v in image.pixels() {
            out.push((v * m).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("warpfield-pgm-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn parses_p2_with_normalization() {
        let p = tmp("a.pgm");
        fs::write(&p, "P2\n# comment\n2 2\n255\n0 255\n255 0\n").unwrap();
        let img = load_pgm(&p).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(1, 0), 1.0);
        assert_eq!(img.get(0, 1), 1.0);
        assert_eq!(img.get(1, 1), 0.0);
    }

    #[test]
    fn parses_p5_single_byte() {
        let p = tmp("b.pgm");
        fs::write(&p, b"P5\n1 1\n255\n\x80").unwrap();
        let img = load_pgm(&p).unwrap();
        assert!((img.get(0, 0) - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_p3_magic() {
        let p = tmp("c.pgm");
        fs::write(&p, "P3\n1 1\n255\n0 0 0\n").unwrap();
        let err = load_pgm(&p).unwrap_err();
        match err {
            Error::Format { reason, .. } => assert!(reason.contains("unsupported magic")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reports_offset_of_truncation() {
        let p = tmp("d.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x01\x02").unwrap();
        match load_pgm(&p).unwrap_err() {
            Error::Format { offset, reason, .. } => {
                assert!(offset > 0);
                assert!(reason.contains("truncated"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_maxval() {
        let p = tmp("e.pgm");
        fs::write(&p, "P2\n1 1\n0\n0\n").unwrap();
        assert!(matches!(load_pgm(&p), Err(Error::Format { .. })));
        fs::write(&p, "P2\n1 1\n70000\n0\n").unwrap();
        assert!(matches!(load_pgm(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let img = GrayImage::from_fn(9, 5, |x, y| ((x * 31 + y * 17) % 97) as f64 / 96.0).unwrap();
        let p = tmp("f.pgm");
        save_pgm(&img, &p, 65535).unwrap();
        let back = load_pgm(&p).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn mask_loads_nonzero_as_inside() {
        let p = tmp("g.pgm");
        fs::write(&p, "P2\n3 1\n255\n0 7 255\n").unwrap();
        let (w, h, mask) = load_roi_mask(&p).unwrap();
        assert_eq!((w, h), (3, 1));
        assert_eq!(mask, vec![false, true, true]);
    }
}
