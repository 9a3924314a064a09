//! Lossless PNG for 8-bit color and little-endian PFM for float radiance.

use std::io::Cursor;

use crate::model::{BufferError, EnvironmentMap, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("png encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    UnsupportedPng(String),
    #[error("malformed pfm: {0}")]
    Pfm(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

/// PNG compression effort. Both are lossless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PngSpeed {
    #[default]
    Balanced,
    Fast,
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, CodecError> {
    encode_png_with(img, PngSpeed::Balanced)
}

pub fn encode_png_with(img: &RgbImage, speed: PngSpeed) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width(), img.height());
        enc.set_color(if img.channels() == 4 {
            png::ColorType::Rgba
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(match speed {
            PngSpeed::Balanced => png::Compression::Balanced,
            PngSpeed::Fast => png::Compression::Fast,
        });
        let mut writer = enc.write_header()?;
        writer.write_image_data(img.values())?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, CodecError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CodecError::UnsupportedPng("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(CodecError::UnsupportedPng(format!("bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(CodecError::UnsupportedPng(format!("color type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    Ok(RgbImage::new(info.width, info.height, channels, buf)?)
}

/// Writes a color PFM (`PF`, scale −1.0 = little-endian, bottom row first).
pub fn encode_pfm(width: u32, height: u32, rgb: &[f32]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), width as usize * height as usize * 3);
    let header = format!("PF\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + rgb.len() * 4);
    out.extend_from_slice(header.as_bytes());
    let row_len = width as usize * 3;
    for row in (0..height as usize).rev() {
        for v in &rgb[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a color PFM into top-row-first RGB floats.
pub fn decode_pfm(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>), CodecError> {
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    // header: magic, width, height, scale; separated by whitespace, one
    // whitespace byte after the scale
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CodecError::Pfm("truncated header".into()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| CodecError::Pfm("non-ascii header".into()))?);
    }
    pos += 1;
    if tokens[0] != "PF" {
        return Err(CodecError::Pfm(format!("unsupported magic {:?}", tokens[0])));
    }
    let parse_dim = |s: &str| s.parse::<u32>().map_err(|_| CodecError::Pfm(format!("bad dimension {s:?}")));
    let width = parse_dim(tokens[1])?;
    let height = parse_dim(tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| CodecError::Pfm(format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 {
        return Err(CodecError::Pfm("scale must be nonzero".into()));
    }
    let little = scale < 0.0;
    let n = width as usize * height as usize * 3;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != n * 4 {
        return Err(CodecError::Pfm(format!("expected {} data bytes, found {}", n * 4, body.len())));
    }
    let mut out = vec![0.0f32; n];
    let row_len = width as usize * 3;
    for (file_row, chunk) in body.chunks_exact(row_len * 4).enumerate() {
        let row = height as usize - 1 - file_row;
        for (i, c) in chunk.chunks_exact(4).enumerate() {
            let b = [c[0], c[1], c[2], c[3]];
            out[row * row_len + i] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok((width, height, out))
}

pub fn encode_env_pfm(map: &EnvironmentMap) -> Vec<u8> {
    encode_pfm(map.width(), map.height(), map.values())
}

pub fn decode_env_pfm(bytes: &[u8]) -> Result<EnvironmentMap, CodecError> {
    let (w, h, values) = decode_pfm(bytes)?;
    Ok(EnvironmentMap::new(w, h, values)?)
}

/// Display tonemap for linear radiance: `clamp(x, 0, 1)^(1/2.2)` to 8 bits.
#[inline]
pub fn tonemap(x: f32) -> u8 {
    let c = x.clamp(0.0, 1.0).powf(1.0 / 2.2);
    (c * 255.0).round() as u8
}

pub fn tonemap_rgb(width: u32, height: u32, rgb: &[f32]) -> RgbImage {
    let values = rgb.iter().map(|&v| tonemap(v)).collect();
    RgbImage::new(width, height, 3, values).expect("tonemap input sized by caller")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_png_keeps_alpha() {
        let vals: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
        let img = RgbImage::new(2, 2, 4, vals).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn fast_png_is_still_lossless() {
        let vals: Vec<u8> = (0..5 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = RgbImage::new(5, 3, 3, vals).unwrap();
        let back = decode_png(&encode_png_with(&img, PngSpeed::Fast).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let vals: Vec<f32> = (0..2 * 4 * 3).map(|i| i as f32 * 0.37 + 1e-7).collect();
        let bytes = encode_pfm(4, 2, &vals);
        assert!(bytes.starts_with(b"PF\n4 2\n-1.0\n"));
        let (w, h, back) = decode_pfm(&bytes).unwrap();
        assert_eq!((w, h), (4, 2));
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pfm_stores_bottom_row_first() {
        let vals = vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let bytes = encode_pfm(1, 2, &vals);
        let body = &bytes[bytes.len() - 24..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn truncated_pfm_is_rejected() {
        let bytes = encode_pfm(2, 1, &[0.5; 6]);
        assert!(decode_pfm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn tonemap_endpoints() {
        assert_eq!(tonemap(0.0), 0);
        assert_eq!(tonemap(1.0), 255);
        assert_eq!(tonemap(7.0), 255);
    }
}
