//! 24-part texture look-up tables.
//!
//! Each body part owns a 200×200 plane addressed by `(row, col) = (v, u)`.
//! Frames are folded into a [`TextureAtlasAccumulator`] holding exact integer
//! channel sums, so partial accumulators built on different threads merge to
//! the same bytes in any order. [`TextureAtlasAccumulator::finalize`] turns
//! sums into colors and [`TextureAtlas::inpaint`] fills the gaps.
//!
//! File formats (little-endian):
//!
//! - `ATL1`: magic, then 24×200×200 records `sumR u64, sumG u64, sumB u64, count u32`
//! - `OCC1`: magic, then 24×200×200 occupancy bits, part-major then row-major,
//!   packed most-significant bit first

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::iuv::{ensure_same_size, DenseCorrespondenceMap, Frame, IuvError, NUM_PARTS};

pub const PLANE_SIZE: usize = 200;
pub const TEXELS_PER_PLANE: usize = PLANE_SIZE * PLANE_SIZE;
pub const ATLAS_TEXELS: usize = NUM_PARTS * TEXELS_PER_PLANE;
pub const GRID_COLUMNS: usize = 6;
pub const GRID_ROWS: usize = 4;
pub const GRID_WIDTH: u32 = (GRID_COLUMNS * PLANE_SIZE) as u32;
pub const GRID_HEIGHT: u32 = (GRID_ROWS * PLANE_SIZE) as u32;

pub const ATL_MAGIC: &[u8; 4] = b"ATL1";
pub const ATL_RECORD_LEN: usize = 28;
pub const OCC_MAGIC: &[u8; 4] = b"OCC1";

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error(transparent)]
    Raster(#[from] IuvError),
    #[error("accumulator arithmetic overflow at texel {0}")]
    ArithmeticOverflow(usize),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("payload length {actual}, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("invalid accumulator record at texel {0}")]
    InvalidRecord(usize),
    #[error("grid image must be {GRID_WIDTH}x{GRID_HEIGHT}, got {0}x{1}")]
    GridSize(u32, u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Quantises fractional `(u, v)` to `(row, col)` inside a plane.
///
/// `col = min(floor(u * 200), 199)`, `row = min(floor(v * 200), 199)`.
pub fn texel_of(u: f64, v: f64) -> (usize, usize) {
    let q = |x: f64| ((x.clamp(0.0, 1.0) * PLANE_SIZE as f64).floor() as usize).min(PLANE_SIZE - 1);
    (q(v), q(u))
}

/// Same quantisation for 16-bit fixed-point coordinates, in exact integer math.
pub fn texel_of_fixed(u: u16, v: u16) -> (usize, usize) {
    let q = |x: u16| ((x as usize * PLANE_SIZE) / u16::MAX as usize).min(PLANE_SIZE - 1);
    (q(v), q(u))
}

/// Linear texel index for `part` in `1..=24`.
#[inline]
pub fn texel_index(part: usize, row: usize, col: usize) -> usize {
    debug_assert!((1..=NUM_PARTS).contains(&part));
    (part - 1) * TEXELS_PER_PLANE + row * PLANE_SIZE + col
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TexelSum {
    pub r: u64,
    pub g: u64,
    pub b: u64,
    pub count: u32,
}

impl TexelSum {
    fn checked_add(&self, other: &TexelSum) -> Option<TexelSum> {
        Some(TexelSum {
            r: self.r.checked_add(other.r)?,
            g: self.g.checked_add(other.g)?,
            b: self.b.checked_add(other.b)?,
            count: self.count.checked_add(other.count)?,
        })
    }

    fn add_pixel(&self, rgb: [u8; 3]) -> Option<TexelSum> {
        self.checked_add(&TexelSum {
            r: rgb[0] as u64,
            g: rgb[1] as u64,
            b: rgb[2] as u64,
            count: 1,
        })
    }

    fn sub_pixel(&mut self, rgb: [u8; 3]) {
        self.r -= rgb[0] as u64;
        self.g -= rgb[1] as u64;
        self.b -= rgb[2] as u64;
        self.count -= 1;
    }

    /// Round-half-up mean color, `None` when nothing was accumulated.
    pub fn mean(&self) -> Option<[u8; 3]> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as u64;
        let div = |s: u64| ((s + n / 2) / n) as u8;
        Some([div(self.r), div(self.g), div(self.b)])
    }

    fn is_valid(&self) -> bool {
        let cap = 255 * self.count as u64;
        if self.count == 0 {
            self.r == 0 && self.g == 0 && self.b == 0
        } else {
            self.r <= cap && self.g <= cap && self.b <= cap
        }
    }
}

/// Exact per-texel channel sums for all 24 parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureAtlasAccumulator {
    texels: Vec<TexelSum>,
}

impl Default for TextureAtlasAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl TextureAtlasAccumulator {
    pub fn new() -> Self {
        Self {
            texels: vec![TexelSum::default(); ATLAS_TEXELS],
        }
    }

    pub fn texels(&self) -> &[TexelSum] {
        &self.texels
    }

    pub fn texel(&self, part: usize, row: usize, col: usize) -> TexelSum {
        self.texels[texel_index(part, row, col)]
    }

    /// Adds every foreground pixel of `frame` to its texel. On error the
    /// accumulator is left unchanged.
    pub fn accumulate(
        &mut self,
        frame: &Frame,
        map: &DenseCorrespondenceMap,
    ) -> Result<(), AtlasError> {
        ensure_same_size(frame.size(), map.size())?;
        let mut applied = Vec::new();
        for (i, px) in map.pixels().iter().enumerate() {
            if !px.is_foreground() {
                continue;
            }
            let (row, col) = texel_of_fixed(px.u, px.v);
            let t = texel_index(px.part as usize, row, col);
            let rgb = frame.pixel_at(i);
            match self.texels[t].add_pixel(rgb) {
                Some(sum) => {
                    self.texels[t] = sum;
                    applied.push((t, rgb));
                }
                None => {
                    for (t, rgb) in applied {
                        self.texels[t].sub_pixel(rgb);
                    }
                    return Err(AtlasError::ArithmeticOverflow(t));
                }
            }
        }
        Ok(())
    }

    /// Texelwise sum with `other`. Commutative and associative; on overflow
    /// `self` is left unchanged.
    pub fn merge(&mut self, other: &TextureAtlasAccumulator) -> Result<(), AtlasError> {
        let merged = self
            .texels
            .par_iter()
            .zip(other.texels.par_iter())
            .enumerate()
            .map(|(i, (a, b))| a.checked_add(b).ok_or(AtlasError::ArithmeticOverflow(i)))
            .collect::<Result<Vec<_>, _>>()?;
        self.texels = merged;
        Ok(())
    }

    /// Fraction of occupied texels per part (index 0 is part 1).
    pub fn coverage(&self) -> [f64; NUM_PARTS] {
        let mut out = [0.0; NUM_PARTS];
        for (k, plane) in self.texels.chunks_exact(TEXELS_PER_PLANE).enumerate() {
            let n = plane.iter().filter(|t| t.count > 0).count();
            out[k] = n as f64 / TEXELS_PER_PLANE as f64;
        }
        out
    }

    pub fn finalize(&self) -> TextureAtlas {
        let mut colors = Vec::with_capacity(ATLAS_TEXELS);
        let mut occupied = Vec::with_capacity(ATLAS_TEXELS);
        for t in &self.texels {
            match t.mean() {
                Some(c) => {
                    colors.push(c);
                    occupied.push(true);
                }
                None => {
                    colors.push([0; 3]);
                    occupied.push(false);
                }
            }
        }
        TextureAtlas { colors, occupied }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + ATLAS_TEXELS * ATL_RECORD_LEN);
        out.extend_from_slice(ATL_MAGIC);
        for t in &self.texels {
            out.extend_from_slice(&t.r.to_le_bytes());
            out.extend_from_slice(&t.g.to_le_bytes());
            out.extend_from_slice(&t.b.to_le_bytes());
            out.extend_from_slice(&t.count.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AtlasError> {
        if bytes.len() < 4 || &bytes[..4] != ATL_MAGIC {
            return Err(AtlasError::BadMagic {
                expected: *ATL_MAGIC,
            });
        }
        let expected = 4 + ATLAS_TEXELS * ATL_RECORD_LEN;
        if bytes.len() != expected {
            return Err(AtlasError::PayloadLength {
                expected,
                actual: bytes.len(),
            });
        }
        let u64_at = |c: &[u8], o: usize| u64::from_le_bytes(c[o..o + 8].try_into().unwrap());
        let mut texels = Vec::with_capacity(ATLAS_TEXELS);
        for (i, c) in bytes[4..].chunks_exact(ATL_RECORD_LEN).enumerate() {
            let t = TexelSum {
                r: u64_at(c, 0),
                g: u64_at(c, 8),
                b: u64_at(c, 16),
                count: u32::from_le_bytes(c[24..28].try_into().unwrap()),
            };
            if !t.is_valid() {
                return Err(AtlasError::InvalidRecord(i));
            }
            texels.push(t);
        }
        Ok(Self { texels })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, AtlasError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), AtlasError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Accumulates many frames by splitting them into `groups` contiguous
/// partitions, accumulating each in parallel and merging in partition order.
pub fn accumulate_parallel(
    items: &[(&Frame, &DenseCorrespondenceMap)],
    groups: usize,
) -> Result<TextureAtlasAccumulator, AtlasError> {
    let groups = groups.max(1);
    let chunk = items.len().div_ceil(groups).max(1);
    let partials = items
        .par_chunks(chunk)
        .map(|part| {
            let mut acc = TextureAtlasAccumulator::new();
            for (f, m) in part {
                acc.accumulate(f, m)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, AtlasError>>()?;
    let mut total = TextureAtlasAccumulator::new();
    for p in &partials {
        total.merge(p)?;
    }
    Ok(total)
}

/// Finalised RGB look-up tables with per-texel occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureAtlas {
    colors: Vec<[u8; 3]>,
    occupied: Vec<bool>,
}

impl Default for TextureAtlas {
    fn default() -> Self {
        Self::empty()
    }
}

impl TextureAtlas {
    /// All texels black and unoccupied.
    pub fn empty() -> Self {
        Self {
            colors: vec![[0; 3]; ATLAS_TEXELS],
            occupied: vec![false; ATLAS_TEXELS],
        }
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn color(&self, part: usize, row: usize, col: usize) -> [u8; 3] {
        self.colors[texel_index(part, row, col)]
    }

    pub fn is_occupied(&self, part: usize, row: usize, col: usize) -> bool {
        self.occupied[texel_index(part, row, col)]
    }

    /// Marks a texel occupied with `rgb`.
    pub fn set(&mut self, part: usize, row: usize, col: usize, rgb: [u8; 3]) {
        let i = texel_index(part, row, col);
        self.colors[i] = rgb;
        self.occupied[i] = true;
    }

    /// Occupies every texel of `part` with one color.
    pub fn fill_plane(&mut self, part: usize, rgb: [u8; 3]) {
        let start = texel_index(part, 0, 0);
        self.colors[start..start + TEXELS_PER_PLANE].fill(rgb);
        self.occupied[start..start + TEXELS_PER_PLANE].fill(true);
    }

    pub fn plane_occupancy(&self, part: usize) -> usize {
        let start = texel_index(part, 0, 0);
        self.occupied[start..start + TEXELS_PER_PLANE]
            .iter()
            .filter(|&&o| o)
            .count()
    }

    pub fn plane_is_empty(&self, part: usize) -> bool {
        self.plane_occupancy(part) == 0
    }

    /// Fills every unoccupied texel of each non-empty plane with the
    /// round-half-up mean of the originally occupied texels at minimal
    /// 4-connected distance. Planes are independent; empty planes stay black.
    pub fn inpaint(&self) -> TextureAtlas {
        let mut out = self.clone();
        out.colors
            .par_chunks_mut(TEXELS_PER_PLANE)
            .zip(out.occupied.par_chunks_mut(TEXELS_PER_PLANE))
            .for_each(|(colors, occupied)| {
                nearest_fill(PLANE_SIZE, PLANE_SIZE, colors, occupied);
            });
        out
    }

    /// Lays the planes out as a 1200×800 image: part `k` sits in tile column
    /// `(k-1) % 6`, tile row `(k-1) / 6`.
    pub fn to_grid_image(&self) -> Frame {
        let grid = grid_layout(&self.colors, |c| c);
        Frame::new(
            GRID_WIDTH,
            GRID_HEIGHT,
            grid.into_iter().flatten().collect(),
        )
        .expect("grid dimensions are fixed")
    }

    /// Inverse of [`to_grid_image`](Self::to_grid_image) combined with an
    /// occupancy bitmap. Unoccupied texels are reset to black.
    pub fn from_grid_image(grid: &Frame, occupied: Vec<bool>) -> Result<Self, AtlasError> {
        if grid.size() != (GRID_WIDTH, GRID_HEIGHT) {
            return Err(AtlasError::GridSize(grid.width(), grid.height()));
        }
        if occupied.len() != ATLAS_TEXELS {
            return Err(AtlasError::PayloadLength {
                expected: ATLAS_TEXELS,
                actual: occupied.len(),
            });
        }
        let mut colors = vec![[0u8; 3]; ATLAS_TEXELS];
        for part in 1..=NUM_PARTS {
            let (ty, tx) = tile_origin(part);
            for row in 0..PLANE_SIZE {
                for col in 0..PLANE_SIZE {
                    let i = texel_index(part, row, col);
                    if occupied[i] {
                        colors[i] = grid.pixel((tx + col) as u32, (ty + row) as u32);
                    }
                }
            }
        }
        Ok(Self { colors, occupied })
    }

    pub fn occupancy_to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + ATLAS_TEXELS / 8);
        out.extend_from_slice(OCC_MAGIC);
        for chunk in self.occupied.chunks(8) {
            let mut byte = 0u8;
            for (bit, &o) in chunk.iter().enumerate() {
                if o {
                    byte |= 0x80 >> bit;
                }
            }
            out.push(byte);
        }
        out
    }

    pub fn occupancy_from_bytes(bytes: &[u8]) -> Result<Vec<bool>, AtlasError> {
        if bytes.len() < 4 || &bytes[..4] != OCC_MAGIC {
            return Err(AtlasError::BadMagic {
                expected: *OCC_MAGIC,
            });
        }
        let expected = 4 + ATLAS_TEXELS.div_ceil(8);
        if bytes.len() != expected {
            return Err(AtlasError::PayloadLength {
                expected,
                actual: bytes.len(),
            });
        }
        Ok((0..ATLAS_TEXELS)
            .map(|i| bytes[4 + i / 8] & (0x80 >> (i % 8)) != 0)
            .collect())
    }

    /// Writes the grid PNG and its `OCC1` sidecar.
    pub fn write_files(
        &self,
        grid_png: impl AsRef<Path>,
        occupancy: impl AsRef<Path>,
    ) -> Result<(), AtlasError> {
        self.to_grid_image().write_png(grid_png)?;
        std::fs::write(occupancy, self.occupancy_to_bytes())?;
        Ok(())
    }

    pub fn read_files(
        grid_png: impl AsRef<Path>,
        occupancy: impl AsRef<Path>,
    ) -> Result<Self, AtlasError> {
        let grid = Frame::read_png(grid_png)?;
        let occ = Self::occupancy_from_bytes(&std::fs::read(occupancy)?)?;
        Self::from_grid_image(&grid, occ)
    }
}

/// Pixel origin `(y, x)` of the tile holding `part`.
pub fn tile_origin(part: usize) -> (usize, usize) {
    let k = part - 1;
    (
        (k / GRID_COLUMNS) * PLANE_SIZE,
        (k % GRID_COLUMNS) * PLANE_SIZE,
    )
}

/// Rearranges per-texel values (part-major planes) into grid-image row-major order.
pub fn grid_layout<T: Copy + Default, U: Copy + Default>(
    texels: &[T],
    f: impl Fn(T) -> U,
) -> Vec<U> {
    let w = GRID_WIDTH as usize;
    let mut out = vec![U::default(); w * GRID_HEIGHT as usize];
    for part in 1..=NUM_PARTS {
        let (ty, tx) = tile_origin(part);
        for row in 0..PLANE_SIZE {
            let src = texel_index(part, row, 0);
            let dst = (ty + row) * w + tx;
            for col in 0..PLANE_SIZE {
                out[dst + col] = f(texels[src + col]);
            }
        }
    }
    out
}

/// Multi-source nearest fill on one `width`×`height` plane.
///
/// BFS gives each empty cell its 4-connected distance `d` to the nearest
/// occupied cell. The sources at exactly `d` lie on a Manhattan diamond, which
/// splits into four diagonal runs; prefix sums along both diagonal directions
/// turn each run into an O(1) lookup.
pub fn nearest_fill(width: usize, height: usize, colors: &mut [[u8; 3]], occupied: &mut [bool]) {
    let n = width * height;
    debug_assert_eq!(colors.len(), n);
    debug_assert_eq!(occupied.len(), n);
    let sources = occupied.iter().filter(|&&o| o).count();
    if sources == 0 || sources == n {
        return;
    }

    let mut dist = vec![u32::MAX; n];
    let mut queue = VecDeque::with_capacity(n);
    for i in 0..n {
        if occupied[i] {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / width, i % width);
        let d = dist[i] + 1;
        let mut visit = |j: usize| {
            if dist[j] == u32::MAX {
                dist[j] = d;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - width);
        }
        if r + 1 < height {
            visit(i + width);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < width {
            visit(i + 1);
        }
    }

    // [count, r, g, b] of source cells, accumulated along each diagonal.
    let value = |i: usize| -> [u64; 4] {
        if occupied[i] {
            let c = colors[i];
            [1, c[0] as u64, c[1] as u64, c[2] as u64]
        } else {
            [0; 4]
        }
    };
    let add = |a: [u64; 4], b: [u64; 4]| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];
    let sub = |a: [u64; 4], b: [u64; 4]| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];

    // main: along (r+1, c+1); anti: along (r+1, c-1)
    let mut main = vec![[0u64; 4]; n];
    let mut anti = vec![[0u64; 4]; n];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let v = value(i);
            main[i] = if r > 0 && c > 0 {
                add(v, main[i - width - 1])
            } else {
                v
            };
            anti[i] = if r > 0 && c + 1 < width {
                add(v, anti[i - width + 1])
            } else {
                v
            };
        }
    }

    let (h, w) = (height as i64, width as i64);
    // cells (r0 + j, c0 + j), j in [0, len)
    let main_run = |r0: i64, c0: i64, len: i64| -> [u64; 4] {
        let lo = 0.max(-r0).max(-c0);
        let hi = len.min(h - r0).min(w - c0);
        if lo >= hi {
            return [0; 4];
        }
        let (re, ce) = (r0 + hi - 1, c0 + hi - 1);
        let (rs, cs) = (r0 + lo, c0 + lo);
        let end = main[(re * w + ce) as usize];
        if rs > 0 && cs > 0 {
            sub(end, main[((rs - 1) * w + cs - 1) as usize])
        } else {
            end
        }
    };
    // cells (r0 + j, c0 - j), j in [0, len)
    let anti_run = |r0: i64, c0: i64, len: i64| -> [u64; 4] {
        let lo = 0.max(-r0).max(c0 - (w - 1));
        let hi = len.min(h - r0).min(c0 + 1);
        if lo >= hi {
            return [0; 4];
        }
        let (re, ce) = (r0 + hi - 1, c0 - hi + 1);
        let (rs, cs) = (r0 + lo, c0 - lo);
        let end = anti[(re * w + ce) as usize];
        if rs > 0 && cs + 1 < w {
            sub(end, anti[((rs - 1) * w + cs + 1) as usize])
        } else {
            end
        }
    };

    for i in 0..n {
        if occupied[i] {
            continue;
        }
        let d = dist[i] as i64;
        let (r, c) = ((i / width) as i64, (i % width) as i64);
        // Four half-open sides of the diamond, each owning its first vertex:
        // top→right, right→bottom, bottom→left, left→top.
        let mut s = main_run(r - d, c, d);
        s = add(s, anti_run(r, c + d, d));
        s = add(s, main_run(r + 1, c - d + 1, d));
        s = add(s, anti_run(r - d + 1, c - 1, d));
        let k = s[0];
        debug_assert!(k > 0);
        colors[i] = [
            ((s[1] + k / 2) / k) as u8,
            ((s[2] + k / 2) / k) as u8,
            ((s[3] + k / 2) / k) as u8,
        ];
    }
    occupied.fill(true);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iuv::IuvPixel;
    use crate::rng::SplitMix64;

    /// Direct O(cells × sources) evaluation of the nearest-fill rule.
    fn brute_fill(
        width: usize,
        height: usize,
        colors: &[[u8; 3]],
        occupied: &[bool],
    ) -> Vec<[u8; 3]> {
        let sources: Vec<(i64, i64, [u8; 3])> = (0..width * height)
            .filter(|&i| occupied[i])
            .map(|i| ((i / width) as i64, (i % width) as i64, colors[i]))
            .collect();
        (0..width * height)
            .map(|i| {
                if occupied[i] {
                    return colors[i];
                }
                let (r, c) = ((i / width) as i64, (i % width) as i64);
                let dmin = sources
                    .iter()
                    .map(|s| (s.0 - r).abs() + (s.1 - c).abs())
                    .min()
                    .unwrap();
                let near: Vec<_> = sources
                    .iter()
                    .filter(|s| (s.0 - r).abs() + (s.1 - c).abs() == dmin)
                    .collect();
                let k = near.len() as u64;
                let mut out = [0u8; 3];
                for ch in 0..3 {
                    let sum: u64 = near.iter().map(|s| s.2[ch] as u64).sum();
                    out[ch] = ((sum + k / 2) / k) as u8;
                }
                out
            })
            .collect()
    }

    fn random_plane(
        rng: &mut SplitMix64,
        w: usize,
        h: usize,
        density: f64,
    ) -> (Vec<[u8; 3]>, Vec<bool>) {
        let mut colors = vec![[0u8; 3]; w * h];
        let mut occ = vec![false; w * h];
        for i in 0..w * h {
            if rng.next_f64() < density {
                occ[i] = true;
                colors[i] = [
                    rng.below(256) as u8,
                    rng.below(256) as u8,
                    rng.below(256) as u8,
                ];
            }
        }
        (colors, occ)
    }

    #[test]
    fn texel_quantisation() {
        assert_eq!(texel_of(0.0, 0.0), (0, 0));
        assert_eq!(texel_of(1.0, 1.0), (199, 199));
        assert_eq!(texel_of(0.5, 0.5), (100, 100));
        assert_eq!(texel_of(0.25, 0.75), (150, 50));
        assert_eq!(texel_of_fixed(0, 0), (0, 0));
        assert_eq!(texel_of_fixed(u16::MAX, u16::MAX), (199, 199));
    }

    #[test]
    fn fixed_and_float_quantisation_agree() {
        for q in 0..=u16::MAX {
            let f = q as f64 / u16::MAX as f64;
            assert_eq!(texel_of(f, f), texel_of_fixed(q, q), "q = {q}");
        }
    }

    fn one_pixel(part: u8, u: u16, v: u16, rgb: [u8; 3]) -> (Frame, DenseCorrespondenceMap) {
        let frame = Frame::filled(1, 1, rgb).unwrap();
        let map = DenseCorrespondenceMap::new(1, 1, vec![IuvPixel::new(part, u, v)]).unwrap();
        (frame, map)
    }

    #[test]
    fn accumulate_single_pixel_twice() {
        let mut acc = TextureAtlasAccumulator::new();
        let (f, m) = one_pixel(3, 0, 0, [10, 20, 30]);
        acc.accumulate(&f, &m).unwrap();
        assert_eq!(
            acc.texel(3, 0, 0),
            TexelSum {
                r: 10,
                g: 20,
                b: 30,
                count: 1
            }
        );
        acc.accumulate(&f, &m).unwrap();
        assert_eq!(
            acc.texel(3, 0, 0),
            TexelSum {
                r: 20,
                g: 40,
                b: 60,
                count: 2
            }
        );
        assert_eq!(acc.finalize().color(3, 0, 0), [10, 20, 30]);
    }

    #[test]
    fn background_is_ignored() {
        let mut acc = TextureAtlasAccumulator::new();
        let (f, m) = one_pixel(0, 0, 0, [10, 20, 30]);
        acc.accumulate(&f, &m).unwrap();
        assert_eq!(acc, TextureAtlasAccumulator::new());
    }

    #[test]
    fn accumulate_rejects_size_mismatch() {
        let mut acc = TextureAtlasAccumulator::new();
        let f = Frame::filled(2, 1, [0; 3]).unwrap();
        let m = DenseCorrespondenceMap::background(1, 2).unwrap();
        assert!(matches!(
            acc.accumulate(&f, &m),
            Err(AtlasError::Raster(IuvError::DimensionMismatch(..)))
        ));
    }

    #[test]
    fn overflow_leaves_accumulator_unchanged() {
        let mut acc = TextureAtlasAccumulator::new();
        acc.texels[texel_index(1, 0, 0)].count = u32::MAX;
        let before = acc.clone();
        let frame = Frame::filled(2, 1, [1, 1, 1]).unwrap();
        let map =
            DenseCorrespondenceMap::new(2, 1, vec![IuvPixel::new(2, 0, 0), IuvPixel::new(1, 0, 0)])
                .unwrap();
        assert!(matches!(
            acc.accumulate(&frame, &map),
            Err(AtlasError::ArithmeticOverflow(_))
        ));
        assert_eq!(acc, before);
        assert!(matches!(
            acc.clone().merge(&before),
            Err(AtlasError::ArithmeticOverflow(0))
        ));
    }

    #[test]
    fn finalize_rounding() {
        let mut acc = TextureAtlasAccumulator::new();
        acc.texels[texel_index(1, 0, 0)] = TexelSum {
            r: 20,
            g: 40,
            b: 60,
            count: 2,
        };
        acc.texels[texel_index(1, 0, 1)] = TexelSum {
            r: 5,
            g: 5,
            b: 5,
            count: 2,
        };
        acc.texels[texel_index(1, 0, 2)] = TexelSum {
            r: 4,
            g: 7,
            b: 0,
            count: 3,
        };
        let atlas = acc.finalize();
        assert_eq!(atlas.color(1, 0, 0), [10, 20, 30]);
        assert_eq!(atlas.color(1, 0, 1), [3, 3, 3]);
        // 4/3 = 1.33 -> 1, 7/3 = 2.33 -> 2
        assert_eq!(atlas.color(1, 0, 2), [1, 2, 0]);
        assert!(!atlas.is_occupied(1, 0, 3));
        assert_eq!(atlas.color(1, 0, 3), [0, 0, 0]);
        let occupied: usize = (1..=24).map(|p| atlas.plane_occupancy(p)).sum();
        assert_eq!(occupied, 3);
    }

    #[test]
    fn coverage_counts() {
        let mut acc = TextureAtlasAccumulator::new();
        assert_eq!(acc.coverage(), [0.0; 24]);
        acc.texels[texel_index(1, 5, 5)] = TexelSum {
            r: 1,
            g: 1,
            b: 1,
            count: 1,
        };
        let cov = acc.coverage();
        assert_eq!(cov[0], 1.0 / 40_000.0);
        assert!(cov[1..].iter().all(|&c| c == 0.0));
        for i in 0..TEXELS_PER_PLANE {
            acc.texels[TEXELS_PER_PLANE * 4 + i].count = 1;
        }
        assert_eq!(acc.coverage()[4], 1.0);
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let mut rng = SplitMix64::new(5);
        let mut a = TextureAtlasAccumulator::new();
        let mut b = TextureAtlasAccumulator::new();
        for _ in 0..500 {
            let i = rng.below(ATLAS_TEXELS as u64) as usize;
            let c = rng.below(4) as u32 + 1;
            a.texels[i] = TexelSum {
                r: 3 * c as u64,
                g: c as u64,
                b: 0,
                count: c,
            };
            let j = rng.below(ATLAS_TEXELS as u64) as usize;
            b.texels[j] = TexelSum {
                r: 1,
                g: 2,
                b: 3,
                count: 1,
            };
        }
        let mut e = TextureAtlasAccumulator::new();
        e.merge(&a).unwrap();
        assert_eq!(e, a);
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab.to_bytes(), ba.to_bytes());
    }

    #[test]
    fn atl1_roundtrip_and_validation() {
        let mut acc = TextureAtlasAccumulator::new();
        acc.texels[7] = TexelSum {
            r: 255,
            g: 0,
            b: 17,
            count: 1,
        };
        let bytes = acc.to_bytes();
        assert_eq!(bytes.len(), 4 + 28 * ATLAS_TEXELS);
        let back = TextureAtlasAccumulator::from_bytes(&bytes).unwrap();
        assert_eq!(back, acc);

        let mut bad = bytes.clone();
        // count of texel 7 -> 0 while sums stay nonzero
        let off = 4 + 7 * 28 + 24;
        bad[off] = 0;
        assert!(matches!(
            TextureAtlasAccumulator::from_bytes(&bad),
            Err(AtlasError::InvalidRecord(7))
        ));
        assert!(matches!(
            TextureAtlasAccumulator::from_bytes(&bytes[..100]),
            Err(AtlasError::PayloadLength { .. })
        ));
        assert!(matches!(
            TextureAtlasAccumulator::from_bytes(b"NOPE"),
            Err(AtlasError::BadMagic { .. })
        ));
    }

    #[test]
    fn inpaint_fixpoint_and_single_source() {
        let mut atlas = TextureAtlas::empty();
        atlas.fill_plane(2, [1, 2, 3]);
        atlas.set(5, 17, 123, [9, 8, 7]);
        let filled = atlas.inpaint();
        assert_eq!(filled.plane_occupancy(2), TEXELS_PER_PLANE);
        assert!(filled.colors[texel_index(2, 0, 0)..texel_index(3, 0, 0)]
            .iter()
            .all(|&c| c == [1, 2, 3]));
        assert_eq!(filled.plane_occupancy(5), TEXELS_PER_PLANE);
        assert!(filled.colors[texel_index(5, 0, 0)..texel_index(6, 0, 0)]
            .iter()
            .all(|&c| c == [9, 8, 7]));
        assert!(filled.plane_is_empty(1));
        assert_eq!(filled.inpaint(), filled);
    }

    #[test]
    fn inpaint_tie_averages() {
        let mut atlas = TextureAtlas::empty();
        atlas.set(1, 10, 9, [10, 0, 0]);
        atlas.set(1, 10, 11, [20, 0, 0]);
        let filled = atlas.inpaint();
        assert_eq!(filled.color(1, 10, 10), [15, 0, 0]);
        // tie of 10 and 21 averages to 15.5 which rounds up
        let mut atlas = TextureAtlas::empty();
        atlas.set(1, 10, 9, [10, 0, 0]);
        atlas.set(1, 10, 11, [21, 0, 0]);
        assert_eq!(atlas.inpaint().color(1, 10, 10), [16, 0, 0]);
    }

    #[test]
    fn nearest_fill_matches_brute_force_small() {
        let mut rng = SplitMix64::new(99);
        for trial in 0..300 {
            let w = 1 + rng.below(12) as usize;
            let h = 1 + rng.below(12) as usize;
            let density = [0.02, 0.1, 0.3, 0.7][trial % 4];
            let (mut colors, mut occ) = random_plane(&mut rng, w, h, density);
            if !occ.iter().any(|&o| o) {
                continue;
            }
            let expected = brute_fill(w, h, &colors, &occ);
            nearest_fill(w, h, &mut colors, &mut occ);
            assert_eq!(colors, expected, "trial {trial} ({w}x{h})");
            assert!(occ.iter().all(|&o| o));
        }
    }

    #[test]
    fn nearest_fill_matches_brute_force_full_plane() {
        let mut rng = SplitMix64::new(1234);
        for density in [0.0005, 0.002] {
            let (mut colors, mut occ) = random_plane(&mut rng, PLANE_SIZE, PLANE_SIZE, density);
            occ[0] = true;
            let expected = brute_fill(PLANE_SIZE, PLANE_SIZE, &colors, &occ);
            nearest_fill(PLANE_SIZE, PLANE_SIZE, &mut colors, &mut occ);
            assert_eq!(colors, expected);
        }
    }

    #[test]
    fn grid_layout_positions() {
        let mut atlas = TextureAtlas::empty();
        assert!(atlas.to_grid_image().pixels().iter().all(|&b| b == 0));
        atlas.fill_plane(1, [255, 0, 0]);
        atlas.fill_plane(7, [0, 0, 255]);
        let img = atlas.to_grid_image();
        assert_eq!(img.size(), (1200, 800));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(199, 199), [255, 0, 0]);
        assert_eq!(img.pixel(200, 0), [0, 0, 0]);
        assert_eq!(img.pixel(0, 200), [0, 0, 255]);
        assert_eq!(img.pixel(199, 399), [0, 0, 255]);
        assert_eq!(img.pixel(0, 400), [0, 0, 0]);
        assert_eq!(img.pixel(200, 200), [0, 0, 0]);
        assert_eq!(tile_origin(24), (600, 1000));
    }

    #[test]
    fn grid_and_occupancy_roundtrip() {
        let mut atlas = TextureAtlas::empty();
        atlas.set(24, 199, 0, [4, 5, 6]);
        atlas.set(13, 3, 150, [7, 8, 9]);
        let occ = atlas.occupancy_to_bytes();
        assert_eq!(occ.len(), 4 + 120_000);
        let back = TextureAtlas::from_grid_image(
            &atlas.to_grid_image(),
            TextureAtlas::occupancy_from_bytes(&occ).unwrap(),
        )
        .unwrap();
        assert_eq!(back, atlas);
    }

    #[test]
    fn first_texel_is_msb_of_first_occupancy_byte() {
        let mut atlas = TextureAtlas::empty();
        atlas.set(1, 0, 0, [1, 1, 1]);
        atlas.set(1, 0, 9, [1, 1, 1]);
        let bytes = atlas.occupancy_to_bytes();
        assert_eq!(&bytes[4..6], &[0x80, 0x40]);
    }
}
