//! Float raster container shared by every pipeline stage, plus the `.fmap`
//! binary format and PNG import/export.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a raster's channels mean. Determines quantization and the
/// interpolation used when the map is warped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Mask,
    Depth,
    Normal,
    Skinning,
    Label,
    Color,
}

impl Semantic {
    pub fn tag(self) -> u8 {
        match self {
            Semantic::Mask => 0,
            Semantic::Depth => 1,
            Semantic::Normal => 2,
            Semantic::Skinning => 3,
            Semantic::Label => 4,
            Semantic::Color => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Semantic::Mask,
            1 => Semantic::Depth,
            2 => Semantic::Normal,
            3 => Semantic::Skinning,
            4 => Semantic::Label,
            5 => Semantic::Color,
            t => return Err(Error::Format(format!("unknown semantic tag {t}"))),
        })
    }

    /// Masks and labels are categorical and get rounded on write.
    pub fn is_categorical(self) -> bool {
        matches!(self, Semantic::Mask | Semantic::Label)
    }
}

/// Row-major, channel-interleaved float image.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    width: usize,
    height: usize,
    channels: usize,
    semantic: Semantic,
    data: Vec<f32>,
}

const MAGIC: &[u8; 4] = b"FMAP";

/// Round half up, used for mask and label quantization.
#[inline]
pub fn quantize(v: f32) -> f32 {
    (v + 0.5).floor()
}

impl RasterMap {
    pub fn new(width: usize, height: usize, channels: usize, semantic: Semantic) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "raster dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            semantic,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_data(
        width: usize,
        height: usize,
        channels: usize,
        semantic: Semantic,
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut map = Self::new(width, height, channels, semantic)?;
        if data.len() != map.data.len() {
            return Err(Error::InvalidInput(format!(
                "raster data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        map.data = data;
        if semantic.is_categorical() {
            map.data.iter_mut().for_each(|v| *v = quantize(*v));
        }
        Ok(map)
    }

    pub fn mask(width: usize, height: usize) -> Self {
        Self::new(width, height, 1, Semantic::Mask).expect("positive mask dimensions")
    }

    /// Builds a mask from a predicate over pixel coordinates.
    pub fn mask_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::mask(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, 0, 1.0);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn semantic(&self) -> Semantic {
        self.semantic
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn with_semantic(mut self, semantic: Semantic) -> Self {
        self.semantic = semantic;
        self
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// True where a single-channel mask is set (value >= 0.5).
    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[self.index(x, y)] >= 0.5
    }

    /// Mask lookup that treats out-of-frame pixels as background.
    #[inline]
    pub fn is_set_i(&self, x: i64, y: i64) -> bool {
        self.in_bounds(x, y) && self.is_set(x as usize, y as usize)
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> i32 {
        self.get(x, y, 0) as i32
    }

    pub fn count_set(&self) -> usize {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_set(x, y))
            .count()
    }

    pub fn same_shape(&self, other: &RasterMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Horizontal mirror: column `x` becomes column `width - 1 - x`.
    pub fn mirrored(&self) -> RasterMap {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(self.width - 1 - x, y);
                let dst = self.index(x, y);
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Sets every pixel to the given channel values.
    pub fn fill(&mut self, value: &[f32]) {
        assert_eq!(value.len(), self.channels);
        for px in self.data.chunks_exact_mut(self.channels) {
            px.copy_from_slice(value);
        }
    }

    /// Writes the `.fmap` container: magic, u32 width/height/channels, u8
    /// semantic, then little-endian f32 samples.
    pub fn write_fmap<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        w.write_all(&[self.semantic.tag()])?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            let v = if self.semantic.is_categorical() {
                quantize(v)
            } else {
                v
            };
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_fmap<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing FMAP magic".into()));
        }
        let mut u = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut u)?;
            *d = u32::from_le_bytes(u) as usize;
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let semantic = Semantic::from_tag(tag[0])?;
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Format("fmap dimensions overflow".into()))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_data(dims[0], dims[1], dims[2], semantic, data)
    }

    pub fn save_fmap(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path.as_ref())?;
        self.write_fmap(std::io::BufWriter::new(f))
    }

    pub fn load_fmap(path: impl AsRef<Path>) -> Result<Self> {
        let f = fs::File::open(path.as_ref())?;
        Self::read_fmap(std::io::BufReader::new(f))
    }

    /// Loads an 8-bit PNG as a mask (any channel > 127 counts as set) or as a
    /// 3-channel color image in [0, 1].
    pub fn load_png(path: impl AsRef<Path>, semantic: Semantic) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?;
        match semantic {
            Semantic::Mask => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                let data = g
                    .pixels()
                    .map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 })
                    .collect();
                Self::from_data(w as usize, h as usize, 1, Semantic::Mask, data)
            }
            Semantic::Color => {
                let c = img.to_rgb8();
                let (w, h) = c.dimensions();
                let data = c.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                Self::from_data(w as usize, h as usize, 3, Semantic::Color, data)
            }
            s => Err(Error::InvalidInput(format!(
                "PNG import not supported for {s:?} maps"
            ))),
        }
    }

    /// Writes masks as 0/255 grayscale and color maps as RGB8.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match (self.semantic, self.channels) {
            (Semantic::Color, 3) => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::RgbImage::from_raw(w, h, buf).map(|i| i.save(path.as_ref()))
            }
            (_, 1) => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(w, h, buf).map(|i| i.save(path.as_ref()))
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "cannot write {:?} map with {} channels as PNG",
                    self.semantic, self.channels
                )))
            }
        };
        res.ok_or_else(|| Error::Format("png buffer size mismatch".into()))?
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// Loads a mask or color image, dispatching on the file extension.
    pub fn load_any(path: impl AsRef<Path>, semantic: Semantic) -> Result<Self> {
        let p = path.as_ref();
        match p.extension().and_then(|e| e.to_str()) {
            Some("fmap") => {
                let m = Self::load_fmap(p)?;
                if m.semantic != semantic {
                    return Err(Error::InvalidInput(format!(
                        "{} holds a {:?} map, expected {semantic:?}",
                        p.display(),
                        m.semantic
                    )));
                }
                Ok(m)
            }
            _ => Self::load_png(p, semantic),
        }
    }
}

/// Intersection-over-union of two masks of equal size.
pub fn mask_iou(a: &RasterMap, b: &RasterMap) -> f64 {
    assert!(a.same_shape(b));
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (sa, sb) = (a.is_set(x, y), b.is_set(x, y));
            inter += (sa && sb) as usize;
            union += (sa || sb) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmap_layout_is_bit_exact() {
        let m = RasterMap::from_data(2, 1, 2, Semantic::Depth, vec![1.0, 2.0, 3.0, 4.5]).unwrap();
        let mut buf = Vec::new();
        m.write_fmap(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FMAP");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(buf[16], 1);
        assert_eq!(buf.len(), 17 + 16);
        assert_eq!(&buf[29..33], &4.5f32.to_le_bytes());
        let back = RasterMap::read_fmap(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn labels_quantize_half_up() {
        let m = RasterMap::from_data(3, 1, 1, Semantic::Label, vec![0.5, 1.49, 2.7]).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_bad_magic_and_sizes() {
        assert!(RasterMap::read_fmap(&b"FMAQ\0\0\0\0"[..]).is_err());
        assert!(RasterMap::new(0, 3, 1, Semantic::Mask).is_err());
        assert!(RasterMap::from_data(2, 2, 1, Semantic::Mask, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mirror_twice_is_identity() {
        let m = RasterMap::mask_from_fn(5, 3, |x, y| x + y == 2);
        assert_ne!(m.mirrored(), m);
        assert_eq!(m.mirrored().mirrored(), m);
    }
}
