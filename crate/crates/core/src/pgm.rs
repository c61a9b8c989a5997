//! Netpbm grayscale images.
//!
//! Writes binary `P5` with maxval 255, quantizing `v ∈ [0, 1]` as
//! `⌊255·v + 0.5⌋`. Reads `P5` (8- or 16-bit) and plain `P2`, scaling
//! samples by `1 / maxval`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode(g: &Grid) -> Result<Vec<u8>> {
    if g.channels() != 1 {
        return Err(Error::Shape(format!("PGM needs one channel, got {}", g.channels())));
    }
    if let Some(v) = g.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("PGM value {v} outside [0, 1]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    out.extend(g.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(g: &Grid, path: &Path) -> Result<()> {
    let bytes = encode(g)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|(offset, reason)| Error::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

type Parse<T> = std::result::Result<T, (usize, String)>;

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while self.pos < self.b.len() {
            match self.b[self.pos] {
                b'#' => {
                    while self.pos < self.b.len() && self.b[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Parse<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.b.len() && self.b[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let reason = if start >= self.b.len() {
                format!("unexpected end of file, expected {what}")
            } else {
                format!("expected {what}")
            };
            return Err((start, reason));
        }
        std::str::from_utf8(&self.b[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, format!("{what} out of range")))
    }
}

/// Parses PGM bytes; errors carry the byte offset of the problem.
pub fn decode(b: &[u8]) -> Parse<Grid> {
    if b.len() < 2 || b[0] != b'P' || !matches!(b[1], b'2' | b'5') {
        return Err((0, "missing P2/P5 magic".into()));
    }
    let binary = b[1] == b'5';
    let mut c = Cursor { b, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err((maxval_at, format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err((maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width
        .checked_mul(height)
        .ok_or((maxval_at, "image too large".to_string()))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);
    if binary {
        if c.pos >= b.len() || !b[c.pos].is_ascii_whitespace() {
            return Err((c.pos, "expected a single whitespace byte after maxval".into()));
        }
        let start = c.pos + 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let need = n * bytes_per;
        if b.len() < start + need {
            return Err((b.len(), format!("truncated payload: {} of {need} bytes", b.len() - start)));
        }
        for i in 0..n {
            let at = start + i * bytes_per;
            let v = if bytes_per == 1 {
                usize::from(b[at])
            } else {
                usize::from(u16::from_be_bytes([b[at], b[at + 1]]))
            };
            if v > maxval {
                return Err((at, format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as f64 * scale);
        }
    } else {
        for _ in 0..n {
            c.skip_space();
            let at = c.pos;
            let v = c.number("sample")?;
            if v > maxval {
                return Err((at, format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as f64 * scale);
        }
    }
    Grid::from_vec(height, width, 1, data).map_err(|e| (0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        let g = Grid::from_rows(&[[0.0, 1.0], [0.5, 0.5]]);
        let bytes = encode(&g).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 128, 128]);
    }

    #[test]
    fn header_parses() {
        let mut b = b"P5\n2 2\n255\n".to_vec();
        b.extend([1, 2, 3, 4]);
        let g = decode(&b).unwrap();
        assert_eq!(g.shape(), (2, 2, 1));
        assert_eq!(g.at(1, 1), 4.0 / 255.0);
    }

    #[test]
    fn plain_format_with_comments() {
        let g = decode(b"P2\n# made by hand\n3 1\n# max\n10\n0 5 10\n").unwrap();
        assert_eq!(g.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn sixteen_bit_binary() {
        let mut b = b"P5 1 1 1000\n".to_vec();
        b.extend(500u16.to_be_bytes());
        assert_eq!(decode(&b).unwrap().data(), &[0.5]);
    }

    #[test]
    fn errors_report_offsets() {
        assert_eq!(decode(b"P6\n1 1\n255\n\0").unwrap_err().0, 0);
        let (off, reason) = decode(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert_eq!(off, 13);
        assert!(reason.contains("truncated"), "{reason}");
        let (off, _) = decode(b"P5\n2 x\n255\n").unwrap_err();
        assert_eq!(off, 5);
        let (off, _) = decode(b"P2 2 1 10 3 11").unwrap_err();
        assert_eq!(off, 12);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(encode(&Grid::filled(1, 1, 1, 1.5)).is_err());
        assert!(encode(&Grid::zeros(1, 1, 2)).is_err());
    }
}
