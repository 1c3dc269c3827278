//! Raster types exchanged with the external parsing model.
//!
//! `IUV1` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "IUV1"
//! 4       4     width  (u32)
//! 8       4     height (u32)
//! 12      5*N   per pixel, row-major: part u8, u u16, v u16
//! ```
//!
//! `u` and `v` are 16-bit fixed-point fractions (`stored / 65535`). Background
//! pixels (part 0) always carry `u = v = 0`; readers normalise anything else.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

/// Number of body parts; part ids run `1..=NUM_PARTS`, `0` is background.
pub const NUM_PARTS: usize = 24;
pub const IUV_MAGIC: &[u8; 4] = b"IUV1";
pub const IUV_HEADER_LEN: usize = 12;
pub const IUV_PIXEL_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum IuvError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("part id {part} at pixel {index} is out of range (max {NUM_PARTS})")]
    PartIdOutOfRange { index: usize, part: u8 },
    #[error("image dimensions must be non-zero, got {width}x{height}")]
    DimensionZero { width: u32, height: u32 },
    #[error("buffer length {actual} does not match {width}x{height}x{channels}")]
    BufferLength {
        width: u32,
        height: u32,
        channels: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn check_dims(width: u32, height: u32) -> Result<(), IuvError> {
    if width == 0 || height == 0 {
        return Err(IuvError::DimensionZero { width, height });
    }
    Ok(())
}

/// Errors unless both rasters have the same size.
pub fn ensure_same_size(a: (u32, u32), b: (u32, u32)) -> Result<(), IuvError> {
    if a != b {
        return Err(IuvError::DimensionMismatch(a.0, a.1, b.0, b.1));
    }
    Ok(())
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, IuvError> {
        check_dims(width, height)?;
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(IuvError::BufferLength {
                width,
                height,
                channels: 3,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with one color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, IuvError> {
        check_dims(width, height)?;
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, IuvError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Encodes as an 8-bit RGB PNG without alpha.
    pub fn encode_png(&self) -> Result<Vec<u8>, IuvError> {
        let img = RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, IuvError> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), IuvError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// One dense-correspondence sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct IuvPixel {
    pub part: u8,
    pub u: u16,
    pub v: u16,
}

impl IuvPixel {
    pub const BACKGROUND: IuvPixel = IuvPixel {
        part: 0,
        u: 0,
        v: 0,
    };

    pub fn new(part: u8, u: u16, v: u16) -> Self {
        Self { part, u, v }
    }

    /// Builds a pixel from fractional coordinates, rounding to the nearest
    /// fixed-point step.
    pub fn from_fractions(part: u8, u: f64, v: f64) -> Self {
        Self {
            part,
            u: fraction_to_fixed(u),
            v: fraction_to_fixed(v),
        }
    }

    pub fn is_foreground(&self) -> bool {
        self.part > 0
    }

    pub fn u_fraction(&self) -> f64 {
        self.u as f64 / u16::MAX as f64
    }

    pub fn v_fraction(&self) -> f64 {
        self.v as f64 / u16::MAX as f64
    }

    fn canonical(self) -> Self {
        if self.part == 0 {
            Self::BACKGROUND
        } else {
            self
        }
    }
}

pub fn fraction_to_fixed(x: f64) -> u16 {
    (x.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16
}

/// Per-pixel `(part, u, v)` raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseCorrespondenceMap {
    width: u32,
    height: u32,
    pixels: Vec<IuvPixel>,
}

impl DenseCorrespondenceMap {
    /// Validates part ids and canonicalises background pixels.
    pub fn new(width: u32, height: u32, pixels: Vec<IuvPixel>) -> Result<Self, IuvError> {
        check_dims(width, height)?;
        if pixels.len() != width as usize * height as usize {
            return Err(IuvError::BufferLength {
                width,
                height,
                channels: 1,
                actual: pixels.len(),
            });
        }
        let mut pixels = pixels;
        for (index, p) in pixels.iter_mut().enumerate() {
            if p.part as usize > NUM_PARTS {
                return Err(IuvError::PartIdOutOfRange {
                    index,
                    part: p.part,
                });
            }
            *p = p.canonical();
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn background(width: u32, height: u32) -> Result<Self, IuvError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![IuvPixel::BACKGROUND; width as usize * height as usize],
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[IuvPixel] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> IuvPixel {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, px: IuvPixel) -> Result<(), IuvError> {
        let index = y as usize * self.width as usize + x as usize;
        if px.part as usize > NUM_PARTS {
            return Err(IuvError::PartIdOutOfRange {
                index,
                part: px.part,
            });
        }
        self.pixels[index] = px.canonical();
        Ok(())
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_foreground()).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_iuv(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IuvError> {
        read_iuv(bytes)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, IuvError> {
        read_iuv(&std::fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), IuvError> {
        std::fs::write(path, write_iuv(self))?;
        Ok(())
    }
}

/// Parses an `IUV1` byte stream.
pub fn read_iuv(bytes: &[u8]) -> Result<DenseCorrespondenceMap, IuvError> {
    if bytes.len() < 4 || &bytes[..4] != IUV_MAGIC {
        return Err(IuvError::BadMagic {
            expected: *IUV_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < IUV_HEADER_LEN {
        return Err(IuvError::TruncatedPayload {
            expected: IUV_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    check_dims(width, height)?;

    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(IUV_PIXEL_LEN))
        .and_then(|n| n.checked_add(IUV_HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(IuvError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IuvError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }

    let pixels = bytes[IUV_HEADER_LEN..]
        .chunks_exact(IUV_PIXEL_LEN)
        .map(|c| IuvPixel {
            part: c[0],
            u: u16::from_le_bytes([c[1], c[2]]),
            v: u16::from_le_bytes([c[3], c[4]]),
        })
        .collect();
    DenseCorrespondenceMap::new(width, height, pixels)
}

/// Serialises a map as `IUV1`.
pub fn write_iuv(map: &DenseCorrespondenceMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(IUV_HEADER_LEN + map.pixels.len() * IUV_PIXEL_LEN);
    out.extend_from_slice(IUV_MAGIC);
    out.extend_from_slice(&map.width.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    for p in &map.pixels {
        out.push(p.part);
        out.extend_from_slice(&p.u.to_le_bytes());
        out.extend_from_slice(&p.v.to_le_bytes());
    }
    out
}

/// Foreground/background raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, IuvError> {
        check_dims(width, height)?;
        if bits.len() != width as usize * height as usize {
            return Err(IuvError::BufferLength {
                width,
                height,
                channels: 1,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Foreground iff `part > 0`.
pub fn mask_from_iuv(map: &DenseCorrespondenceMap) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        bits: map.pixels.iter().map(IuvPixel::is_foreground).collect(),
    }
}

/// Mask of pixels labelled with one specific part.
pub fn part_mask(map: &DenseCorrespondenceMap, part: u8) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        bits: map
            .pixels
            .iter()
            .map(|p| p.part == part && part > 0)
            .collect(),
    }
}
