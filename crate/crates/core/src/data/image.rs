use std::io::Cursor;
use std::path::Path;

use super::{denormalize, normalize};
use crate::tensor::Tensor;
use crate::{Error, Result};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Largest accepted width × height; guards decoders against hostile headers.
const MAX_PIXELS: usize = 1 << 28;

/// A single-channel image in the normalized `[-0.5, 0.5]` domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || height.checked_mul(width) != Some(pixels.len()) {
            return Err(Error::invalid(format!(
                "{height}x{width} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !(-0.5..=0.5).contains(v)) {
            return Err(Error::invalid(format!(
                "pixel {i} = {} outside [-0.5, 0.5]",
                pixels[i]
            )));
        }
        Ok(Self { height, width, pixels })
    }

    /// From a `(1, H, W, 1)` tensor, clamping into the valid range.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.bhwc()? {
            [1, h, w, 1] => Self::new(h, w, t.data().iter().map(|v| v.clamp(-0.5, 0.5)).collect()),
            _ => Err(Error::invalid(format!("expected a (1, H, W, 1) tensor, got {:?}", t.shape()))),
        }
    }

    pub fn from_levels(height: usize, width: usize, levels: &[u8]) -> Result<Self> {
        Self::new(height, width, levels.iter().map(|&v| normalize(v as f32)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width, 1], self.pixels.clone())
    }

    pub fn to_levels(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| denormalize(v)).collect()
    }
}

/// BT.601 luma on the 8-bit scale.
fn luma(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

/// Decodes an 8-bit grayscale or RGB PNG, or a binary PGM (`P5`, maxval
/// 255). RGB is reduced to BT.601 luma before normalization.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        let head = &bytes[..bytes.len().min(4)];
        Err(Error::UnsupportedImage(format!(
            "unrecognized container (leading bytes {head:02x?}); expected PNG or binary PGM"
        )))
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let png_err = |e: png::DecodingError| Error::UnsupportedImage(format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (width, height, color, depth) = {
        let info = reader.info();
        (info.width as usize, info.height as usize, info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!("png bit depth {depth:?}; only 8-bit is supported")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedImage(format!(
                "png color type {other:?}; only 8-bit grayscale or RGB is supported"
            )))
        }
    };
    check_extent(width, height)?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| {
        Error::UnsupportedImage("png output buffer size overflows".into())
    })?];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let data = &buf[..frame.buffer_size()];
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &data[y * frame.line_size..][..width * channels];
        match channels {
            1 => pixels.extend(row.iter().map(|&v| normalize(v as f32))),
            _ => pixels.extend(row.chunks_exact(3).map(|p| normalize(luma(p[0], p[1], p[2])))),
        }
    }
    GrayImage::new(height, width, pixels)
}

fn check_extent(width: usize, height: usize) -> Result<()> {
    match width.checked_mul(height) {
        Some(n) if n > 0 && n <= MAX_PIXELS => Ok(()),
        _ => Err(Error::UnsupportedImage(format!("image extent {width}x{height} out of range"))),
    }
}

/// Binary PGM: `P5`, width, height, maxval separated by whitespace (with
/// `#` comments), one whitespace byte, then `width × height` bytes.
fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = pgm_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedImage(format!(
            "pgm maxval {maxval}; only 8-bit (maxval 255) is supported"
        )));
    }
    check_extent(width, height)?;
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::UnsupportedImage("pgm header not terminated by whitespace".into())),
    }
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or(Error::TruncatedData {
        needed: pos + n,
        available: bytes.len(),
    })?;
    GrayImage::from_levels(height, width, raster)
}

fn pgm_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .filter(|s| !s.is_empty() && s.len() <= 12)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::UnsupportedImage(format!("malformed pgm header at byte {start}")))
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gray(&bytes).map_err(|e| match e {
        Error::UnsupportedImage(msg) => Error::UnsupportedImage(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// 8-bit grayscale PNG of an image, quantized to the nearest level.
pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>> {
    encode_png_levels(img.width, img.height, &img.to_levels())
}

pub(crate) fn encode_png_levels(width: usize, height: usize, levels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(levels)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_gray_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_levels());
    out
}

/// Writes PGM for a `.pgm` extension, PNG otherwise.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm { encode_gray_pgm(img) } else { encode_gray_png(img)? };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
