//! Binary PPM (P6) image interchange, plus a PGM (P5) writer for heatmaps.
//!
//! P6 with 8-bit maxval is the only accepted input format. Writing rounds
//! values to the nearest integer and clamps to [0, 255], so integer-valued
//! tensors round-trip losslessly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        Some(b)
    }

    /// Skips whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.pos += 1;
                }
                b'#' => {
                    while let Some(c) = self.bump() {
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                    .ok_or_else(|| self.err(format!("{what} overflows")))?;
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Reads a binary (P6) PPM file into a 3-channel tensor with values in
/// [0, 255]. Only 8-bit files (maxval 255) are supported.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let bytes = fs::read(path)?;
    read_ppm_bytes(&bytes)
}

/// Byte-slice form of [`read_ppm`]; parse errors carry the byte offset.
pub fn read_ppm_bytes(bytes: &[u8]) -> Result<ImageTensor> {
    let mut cur = Cursor::new(bytes);
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(cur.err("not a P6 ppm (bad magic)"));
    }
    cur.pos = 2;
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(cur.err(format!("unsupported maxval {maxval} (only 8-bit supported)")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match cur.bump() {
        Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {}
        _ => {
            cur.pos = cur.pos.saturating_sub(1);
            return Err(cur.err("expected single whitespace after maxval"));
        }
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    // Interleaved RGB on disk, planar in memory.
    let mut data = vec![0.0f64; need];
    let plane = width * height;
    for i in 0..plane {
        data[i] = payload[3 * i] as f64;
        data[plane + i] = payload[3 * i + 1] as f64;
        data[2 * plane + i] = payload[3 * i + 2] as f64;
    }
    ImageTensor::from_vec(3, height, width, data)
}

/// Writes a 3-channel tensor as binary (P6) PPM, rounding to the nearest
/// integer and clamping to [0, 255].
pub fn write_ppm(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ppm_bytes(img)?)?;
    Ok(())
}

/// In-memory form of [`write_ppm`].
pub fn ppm_bytes(img: &ImageTensor) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "ppm requires 3 channels, got {}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.data();
    for i in 0..plane {
        out.push(quantize(data[i]));
        out.push(quantize(data[plane + i]));
        out.push(quantize(data[2 * plane + i]));
    }
    Ok(out)
}

/// Writes a single-channel tensor as binary (P5) PGM.
pub fn write_pgm(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "pgm requires 1 channel, got {}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    fs::write(path, out)?;
    Ok(())
}

#[inline]
fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_integer_image() {
        let mut rng = Rng::new(123);
        let data: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.below(256) as f64).collect();
        let img = ImageTensor::from_vec(3, 4, 4, data).unwrap();
        let bytes = ppm_bytes(&img).unwrap();
        let back = read_ppm_bytes(&bytes).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn exact_bytes_for_2x2() {
        // Byte-level oracle: header then interleaved RGB rows.
        let img = ImageTensor::from_vec(
            3,
            2,
            2,
            vec![
                0.0, 255.0, 10.0, 40.0, // R plane
                0.0, 255.0, 20.0, 50.0, // G plane
                0.0, 255.0, 30.0, 60.0, // B plane
            ],
        )
        .unwrap();
        let bytes = ppm_bytes(&img).unwrap();
        let mut expect = b"P6\n2 2\n255\n".to_vec();
        expect.extend_from_slice(&[0, 0, 0, 255, 255, 255, 10, 20, 30, 40, 50, 60]);
        assert_eq!(bytes, expect);
        let back = read_ppm_bytes(&bytes).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_16_bit_maxval() {
        let bytes = b"P6\n2 2\n65535\n".to_vec();
        match read_ppm_bytes(&bytes) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("maxval")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(
            read_ppm_bytes(b"P5\n2 2\n255\n"),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]); // needs 12 bytes
        match read_ppm_bytes(&bytes) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, bytes.len());
                assert!(message.contains("truncated"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n2 1 # inline\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7, 6, 5, 4]);
        let img = read_ppm_bytes(&bytes).unwrap();
        assert_eq!(img.shape(), (3, 1, 2));
        assert_eq!(img.get(0, 0, 0), 9.0);
        assert_eq!(img.get(2, 0, 1), 4.0);
    }

    #[test]
    fn write_requires_three_channels() {
        let img = ImageTensor::zeros(1, 2, 2);
        assert!(ppm_bytes(&img).is_err());
    }

    #[test]
    fn pgm_writer_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = ImageTensor::from_vec(1, 1, 3, vec![0.0, 128.0, 300.0]).unwrap();
        write_pgm(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes, b"P5\n3 1\n255\n\x00\x80\xff");
    }
}
