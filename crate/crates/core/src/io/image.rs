//! Image decoding and encoding: 8-bit non-interlaced PNG (gray or RGB) and
//! binary PGM (`P5`) / PPM (`P6`) with maxval 255. Pixel values map to
//! `[0, 1]` as `v / 255` on load and `round(255 · v)` on save.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("pgm") => Ok(Self::Pgm),
            Some("ppm") => Ok(Self::Ppm),
            _ => Err(Error::UnsupportedFormat(format!(
                "{}: expected .png, .pgm or .ppm",
                path.display()
            ))),
        }
    }

    fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(Self::Png)
        } else if bytes.starts_with(b"P5") {
            Some(Self::Pgm)
        } else if bytes.starts_with(b"P6") {
            Some(Self::Ppm)
        } else {
            None
        }
    }
}

/// Raw interleaved 8-bit pixels.
struct Raw {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Raw> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::load(path, format!("PNG: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {:?}-bit PNG, only 8-bit is supported",
            path.display(),
            info.bit_depth
        )));
    }
    if info.interlaced {
        return Err(Error::UnsupportedFormat(format!(
            "{}: interlaced PNG is not supported",
            path.display()
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: PNG color type {other:?}, only gray and RGB are supported",
                path.display()
            )))
        }
    };
    let mut data = vec![0u8; width * height * channels];
    reader
        .next_frame(&mut data)
        .map_err(|e| Error::load(path, format!("PNG: {e}")))?;
    Ok(Raw {
        width,
        height,
        channels,
        data,
    })
}

fn decode_pnm(bytes: &[u8], path: &Path, channels: usize) -> Result<Raw> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // '#' comments; a single whitespace byte precedes the raster.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::load(path, "malformed PNM header"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::load(path, "malformed PNM header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: PNM maxval {maxval}, only 255 is supported",
            path.display()
        )));
    }
    let n = width * height * channels;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::load(path, "truncated PNM raster"))?
        .to_vec();
    Ok(Raw {
        width,
        height,
        channels,
        data,
    })
}

fn decode(path: &Path) -> Result<Raw> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let raw = match ImageFormat::sniff(&bytes) {
        Some(ImageFormat::Png) => decode_png(&bytes, path)?,
        Some(ImageFormat::Pgm) => decode_pnm(&bytes, path, 1)?,
        Some(ImageFormat::Ppm) => decode_pnm(&bytes, path, 3)?,
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: not a PNG, PGM or PPM file",
                path.display()
            )))
        }
    };
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::load(path, "image has zero size"));
    }
    Ok(raw)
}

/// Reads an image as a `(1, c, h, w)` tensor in `[0, 1]`, `c` ∈ {1, 3}.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let raw = decode(path.as_ref())?;
    let (c, h, w) = (raw.channels, raw.height, raw.width);
    Ok(Tensor::from_fn([1, c, h, w], |_, ch, y, x| {
        raw.data[(y * w + x) * c + ch] as f32 / 255.0
    }))
}

/// Reads a binary mask as `(1, 1, h, w)`: a pixel is foreground when any
/// channel exceeds 127.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let raw = decode(path.as_ref())?;
    let (c, w) = (raw.channels, raw.width);
    Ok(Tensor::from_fn([1, 1, raw.height, w], |_, _, y, x| {
        let px = &raw.data[(y * w + x) * c..(y * w + x + 1) * c];
        if px.iter().any(|v| *v > 127) {
            1.0
        } else {
            0.0
        }
    }))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    let bytes = match format {
        ImageFormat::Png => {
            let mut out = Vec::new();
            let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
            enc.set_color(if channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::invalid(format!("PNG encode: {e}")))?;
            writer
                .write_image_data(data)
                .map_err(|e| Error::invalid(format!("PNG encode: {e}")))?;
            writer
                .finish()
                .map_err(|e| Error::invalid(format!("PNG encode: {e}")))?;
            out
        }
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let want = if format == ImageFormat::Pgm { 1 } else { 3 };
            if want != channels {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: {channels}-channel image cannot be written as {format:?}",
                    path.display()
                )));
            }
            let magic = if want == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
            out.extend_from_slice(data);
            out
        }
    };
    super::write_atomic(path, &bytes)
}

/// Writes a `(1, c, h, w)` tensor, `c` ∈ {1, 3}, with values clamped to
/// `[0, 1]`. The format follows the file extension.
pub fn write_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let [n, c, h, w] = t.shape();
    if n != 1 || !(c == 1 || c == 3) {
        return Err(Error::invalid(format!(
            "cannot write tensor of shape {:?} as an image",
            t.shape()
        )));
    }
    let mut data = vec![0u8; c * h * w];
    for ch in 0..c {
        for (i, v) in t.plane(0, ch).iter().enumerate() {
            data[i * c + ch] = quantize(*v);
        }
    }
    encode(path.as_ref(), w, h, c, &data)
}

/// Writes a `(1, 1, h, w)` probability map as 8-bit gray.
pub fn write_prob_map(path: impl AsRef<Path>, prob: &Tensor<f32>) -> Result<()> {
    if prob.channels() != 1 {
        return Err(Error::invalid("probability map must have one channel"));
    }
    write_image(path, prob)
}

pub const OVERLAY_TP: [u8; 3] = [255, 255, 255];
pub const OVERLAY_FP: [u8; 3] = [255, 255, 0];
pub const OVERLAY_FN: [u8; 3] = [255, 0, 0];
pub const OVERLAY_TN: [u8; 3] = [0, 0, 0];

pub fn overlay_color(pred: bool, gt: bool) -> [u8; 3] {
    match (pred, gt) {
        (true, true) => OVERLAY_TP,
        (true, false) => OVERLAY_FP,
        (false, true) => OVERLAY_FN,
        (false, false) => OVERLAY_TN,
    }
}

/// Writes an RGB comparison of a binary prediction against ground truth.
/// Both are `(1, 1, h, w)`; values ≥ 0.5 count as vessel.
pub fn write_overlay(path: impl AsRef<Path>, pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<()> {
    if pred.shape() != gt.shape() || pred.n() != 1 || pred.channels() != 1 {
        return Err(Error::invalid(format!(
            "overlay needs matching (1, 1, h, w) maps, got {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let data: Vec<u8> = pred
        .data()
        .iter()
        .zip(gt.data())
        .flat_map(|(p, g)| overlay_color(*p >= 0.5, *g >= 0.5))
        .collect();
    encode(path.as_ref(), pred.width(), pred.height(), 3, &data)
}
