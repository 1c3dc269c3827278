//! Atlas-to-frame rendering and model-input assembly.

use std::path::Path;

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::atlas::{
    grid_layout, texel_index, texel_of_fixed, TextureAtlas, ATLAS_TEXELS, GRID_HEIGHT, GRID_WIDTH,
    PLANE_SIZE, TEXELS_PER_PLANE,
};
use crate::iuv::{ensure_same_size, DenseCorrespondenceMap, Frame, IuvError, IuvPixel, NUM_PARTS};

/// Replaces every foreground pixel with the atlas texel it maps to.
///
/// Background pixels are copied. A foreground pixel whose texel is unoccupied
/// (for an inpainted atlas: whose whole part plane is empty) keeps its
/// original color.
pub fn rerender(
    frame: &Frame,
    map: &DenseCorrespondenceMap,
    atlas: &TextureAtlas,
) -> Result<Frame, IuvError> {
    ensure_same_size(frame.size(), map.size())?;
    let colors = atlas.colors();
    let occupied = atlas.occupancy();
    let mut out = frame.pixels().to_vec();
    for (px, dst) in map.pixels().iter().zip(out.chunks_exact_mut(3)) {
        if !px.is_foreground() {
            continue;
        }
        let (row, col) = texel_of_fixed(px.u, px.v);
        let t = texel_index(px.part as usize, row, col);
        if occupied[t] {
            dst.copy_from_slice(&colors[t]);
        }
    }
    Frame::new(frame.width(), frame.height(), out)
}

/// `(round(part*255/24), round(u*255), round(v*255))`, black for background.
pub fn iuv_color(px: IuvPixel) -> [u8; 3] {
    if !px.is_foreground() {
        return [0; 3];
    }
    let part = ((px.part as u32 * 255 + 12) / 24) as u8;
    // u*255 = stored/257; 257 is odd so there are no exact halves
    let u = ((px.u as u32 + 128) / 257) as u8;
    let v = ((px.v as u32 + 128) / 257) as u8;
    [part, u, v]
}

pub fn render_iuv_rgb(map: &DenseCorrespondenceMap) -> Frame {
    let pixels = map.pixels().iter().flat_map(|&p| iuv_color(p)).collect();
    Frame::new(map.width(), map.height(), pixels).expect("map dimensions are valid")
}

/// Background from `frame`, foreground from [`render_iuv_rgb`].
pub fn replace_human_regions(
    frame: &Frame,
    map: &DenseCorrespondenceMap,
) -> Result<Frame, IuvError> {
    ensure_same_size(frame.size(), map.size())?;
    let mut out = frame.pixels().to_vec();
    for (px, dst) in map.pixels().iter().zip(out.chunks_exact_mut(3)) {
        if px.is_foreground() {
            dst.copy_from_slice(&iuv_color(*px));
        }
    }
    Frame::new(frame.width(), frame.height(), out)
}

/// Interleaved `R, G, B, part, u, v` raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SixChannelFrame {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

/// Binds the two PNG halves of a [`SixChannelFrame`] on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SixChannelRecord {
    pub rgb: String,
    pub iuv: String,
    pub width: u32,
    pub height: u32,
}

impl SixChannelFrame {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn channel(&self, index: usize, ch: usize) -> u8 {
        self.data[index * 6 + ch]
    }

    /// Splits into the RGB half and the IUV-rendered half.
    pub fn split(&self) -> (Frame, Frame) {
        let mut rgb = Vec::with_capacity(self.data.len() / 2);
        let mut iuv = Vec::with_capacity(self.data.len() / 2);
        for px in self.data.chunks_exact(6) {
            rgb.extend_from_slice(&px[..3]);
            iuv.extend_from_slice(&px[3..]);
        }
        (
            Frame::new(self.width, self.height, rgb).expect("valid dims"),
            Frame::new(self.width, self.height, iuv).expect("valid dims"),
        )
    }

    pub fn join(rgb: &Frame, iuv: &Frame) -> Result<Self, IuvError> {
        ensure_same_size(rgb.size(), iuv.size())?;
        let data = rgb
            .pixels()
            .chunks_exact(3)
            .zip(iuv.pixels().chunks_exact(3))
            .flat_map(|(a, b)| a.iter().chain(b).copied())
            .collect();
        Ok(Self {
            width: rgb.width(),
            height: rgb.height(),
            data,
        })
    }

    /// Writes `<stem>_rgb.png` and `<stem>_iuv.png` into `dir`.
    pub fn write_pngs(
        &self,
        dir: impl AsRef<Path>,
        stem: &str,
    ) -> Result<SixChannelRecord, IuvError> {
        let (rgb, iuv) = self.split();
        let rgb_name = format!("{stem}_rgb.png");
        let iuv_name = format!("{stem}_iuv.png");
        rgb.write_png(dir.as_ref().join(&rgb_name))?;
        iuv.write_png(dir.as_ref().join(&iuv_name))?;
        Ok(SixChannelRecord {
            rgb: rgb_name,
            iuv: iuv_name,
            width: self.width,
            height: self.height,
        })
    }

    pub fn read_pngs(dir: impl AsRef<Path>, record: &SixChannelRecord) -> Result<Self, IuvError> {
        let rgb = Frame::read_png(dir.as_ref().join(&record.rgb))?;
        let iuv = Frame::read_png(dir.as_ref().join(&record.iuv))?;
        Self::join(&rgb, &iuv)
    }
}

pub fn assemble_six_channel(
    frame: &Frame,
    map: &DenseCorrespondenceMap,
) -> Result<SixChannelFrame, IuvError> {
    ensure_same_size(frame.size(), map.size())?;
    SixChannelFrame::join(frame, &render_iuv_rgb(map))
}

/// 24 luminance planes of 200×200, one per part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppearanceStack {
    values: Vec<u8>,
}

impl AppearanceStack {
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Channel `k` is part `k + 1`.
    pub fn channel(&self, k: usize) -> &[u8] {
        &self.values[k * TEXELS_PER_PLANE..(k + 1) * TEXELS_PER_PLANE]
    }

    /// Average-pools each channel over `block`×`block` cells and scales to
    /// `[0, 1]`. `block` must divide 200.
    pub fn pooled(&self, block: usize) -> Vec<f64> {
        assert!(
            block > 0 && PLANE_SIZE.is_multiple_of(block),
            "block must divide {PLANE_SIZE}"
        );
        let cells = PLANE_SIZE / block;
        let norm = (block * block) as f64 * 255.0;
        let mut out = Vec::with_capacity(NUM_PARTS * cells * cells);
        for k in 0..NUM_PARTS {
            let ch = self.channel(k);
            for br in 0..cells {
                for bc in 0..cells {
                    let mut sum = 0u32;
                    for r in br * block..(br + 1) * block {
                        let row =
                            &ch[r * PLANE_SIZE + bc * block..r * PLANE_SIZE + (bc + 1) * block];
                        sum += row.iter().map(|&v| v as u32).sum::<u32>();
                    }
                    out.push(sum as f64 / norm);
                }
            }
        }
        out
    }

    /// Grayscale 1200×800 image using the atlas grid layout.
    pub fn to_grid_png(&self) -> Result<Vec<u8>, IuvError> {
        let img = GrayImage::from_raw(GRID_WIDTH, GRID_HEIGHT, grid_layout(&self.values, |v| v))
            .expect("grid dimensions are fixed");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// BT.601 luma with round-half-up in integer thousandths.
pub fn luminance(rgb: [u8; 3]) -> u8 {
    ((299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32 + 500) / 1000) as u8
}

pub fn atlas_feature_stack(atlas: &TextureAtlas) -> AppearanceStack {
    debug_assert_eq!(atlas.colors().len(), ATLAS_TEXELS);
    AppearanceStack {
        values: atlas.colors().iter().map(|&c| luminance(c)).collect(),
    }
}
