//! Binary PPM (P6) and PGM (P5) files, maxval 255.

use std::fs;
use std::path::Path;

use saliency_core::raster::{Frame, GrayImage, InstanceMask};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected {expected} file, found magic {found}")]
    FormatMismatch { expected: &'static str, found: String },
    #[error("truncated payload: {got} of {expected} bytes")]
    Truncated { expected: usize, got: usize },
    #[error("unsupported maxval {0}")]
    MaxVal(u32),
    #[error("invalid image: {0}")]
    Image(String),
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    encode_ppm_bytes(frame.width(), frame.height(), frame.pixels())
}

pub fn encode_pgm_bytes(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = header("P5", width, height);
    out.extend_from_slice(bytes);
    out
}

/// Values in [0,1] are scaled to 0..=255 and rounded.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let bytes: Vec<u8> = image.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode_pgm_bytes(image.width(), image.height(), &bytes)
}

pub fn encode_mask(mask: &InstanceMask) -> Vec<u8> {
    encode_pgm_bytes(mask.width(), mask.height(), mask.ids())
}

/// Parses the header and returns (magic, width, height, payload).
fn parse(data: &[u8]) -> Result<(String, usize, usize, &[u8]), CodecError> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Header(format!("expected 4 header tokens, found {}", tokens.len())));
        }
        tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        if tokens.len() == 1 && tokens[0] != "P5" && tokens[0] != "P6" {
            return Err(CodecError::Header(format!("unknown magic {:?}", tokens[0])));
        }
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= data.len() {
        return Err(CodecError::Truncated { expected: 1, got: 0 });
    }
    pos += 1;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| CodecError::Header(format!("bad {what} {s:?}")));
    let (w, h) = (num(&tokens[1], "width")?, num(&tokens[2], "height")?);
    let maxval = num(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(CodecError::MaxVal(maxval as u32));
    }
    if w == 0 || h == 0 {
        return Err(CodecError::Header("zero extent".into()));
    }
    Ok((tokens.swap_remove(0), w, h, &data[pos..]))
}

fn payload<'a>(data: &'a [u8], magic: &'static str, channels: usize) -> Result<(usize, usize, &'a [u8]), CodecError> {
    let (m, w, h, body) = parse(data)?;
    if m != magic {
        return Err(CodecError::FormatMismatch { expected: magic, found: m });
    }
    let n = w * h * channels;
    if body.len() < n {
        return Err(CodecError::Truncated { expected: n, got: body.len() });
    }
    Ok((w, h, &body[..n]))
}

/// Raw interleaved RGB of a P6 file, without the frame size limits.
pub fn decode_ppm_bytes(data: &[u8]) -> Result<(usize, usize, Vec<u8>), CodecError> {
    let (w, h, body) = payload(data, "P6", 3)?;
    Ok((w, h, body.to_vec()))
}

pub fn encode_ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = header("P6", width, height);
    out.extend_from_slice(rgb);
    out
}

pub fn decode_ppm(data: &[u8]) -> Result<Frame, CodecError> {
    let (w, h, body) = decode_ppm_bytes(data)?;
    Frame::new(w, h, body).map_err(|e| CodecError::Image(e.to_string()))
}

/// Raw bytes of a P5 file.
pub fn decode_pgm_bytes(data: &[u8]) -> Result<(usize, usize, Vec<u8>), CodecError> {
    let (w, h, body) = payload(data, "P5", 1)?;
    Ok((w, h, body.to_vec()))
}

pub fn decode_pgm(data: &[u8]) -> Result<GrayImage, CodecError> {
    let (w, h, body) = decode_pgm_bytes(data)?;
    GrayImage::new(w, h, body.iter().map(|&b| b as f64 / 255.0).collect()).map_err(|e| CodecError::Image(e.to_string()))
}

pub fn decode_mask(data: &[u8]) -> Result<InstanceMask, CodecError> {
    let (w, h, body) = decode_pgm_bytes(data)?;
    InstanceMask::new(w, h, body).map_err(|e| CodecError::Image(e.to_string()))
}

pub fn read_ppm(path: &Path) -> Result<Frame, CodecError> {
    decode_ppm(&fs::read(path)?)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, CodecError> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<(), CodecError> {
    Ok(fs::write(path, encode_ppm(frame))?)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<(), CodecError> {
    Ok(fs::write(path, encode_pgm(image))?)
}

pub fn write_mask(path: &Path, mask: &InstanceMask) -> Result<(), CodecError> {
    Ok(fs::write(path, encode_mask(mask))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_roundtrip() {
        let px: Vec<u8> = (0..12).map(|i| i * 20).collect();
        assert_eq!(decode_ppm_bytes(&encode_ppm_bytes(2, 2, &px)).unwrap(), (2, 2, px));
        let f = Frame::new(16, 16, (0..768).map(|i| (i % 251) as u8).collect()).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&f)).unwrap(), f);
        // frames keep their minimum size on load
        assert!(matches!(decode_ppm(&encode_ppm_bytes(2, 2, &[0; 12])), Err(CodecError::Image(_))));
    }

    #[test]
    fn pgm_read_as_frame_is_mismatch() {
        let g = GrayImage::filled(3, 3, 0.5);
        assert!(matches!(decode_ppm(&encode_pgm(&g)), Err(CodecError::FormatMismatch { expected: "P6", .. })));
    }

    #[test]
    fn gradient_payload_is_nine_bytes() {
        let g = GrayImage::from_fn(3, 3, |x, y| (x + 3 * y) as f64 / 8.0);
        let bytes = encode_pgm(&g);
        assert_eq!(bytes.len() - b"P5\n3 3\n255\n".len(), 9);
        assert_eq!(&bytes[..11], b"P5\n3 3\n255\n");
    }

    #[test]
    fn header_and_payload_errors_differ() {
        assert!(matches!(decode_ppm(b"P6\n2 x\n255\n"), Err(CodecError::Header(_))));
        assert!(matches!(decode_ppm(b"P7\n2 2\n255\n"), Err(CodecError::Header(_))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x01\x02"), Err(CodecError::Truncated { expected: 12, got: 2 })));
        assert!(matches!(decode_ppm(b"P6\n2 2\n65535\n"), Err(CodecError::MaxVal(65535))));
    }

    #[test]
    fn comments_are_skipped() {
        let f = decode_ppm_bytes(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(f, (1, 1, vec![1, 2, 3]));
    }

    proptest! {
        #[test]
        fn byte_roundtrips(w in 16usize..40, h in 16usize..40, seed in any::<u64>()) {
            let px: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let f = Frame::new(w, h, px).unwrap();
            let enc = encode_ppm(&f);
            prop_assert_eq!(encode_ppm(&decode_ppm(&enc).unwrap()), enc);
            let g = decode_pgm(&encode_pgm_bytes(w, h, &f.pixels()[..w * h])).unwrap();
            prop_assert_eq!(encode_pgm(&g), encode_pgm_bytes(w, h, &f.pixels()[..w * h]));
            let m = InstanceMask::new(w, h, f.pixels()[..w * h].to_vec()).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
        }
    }
}
