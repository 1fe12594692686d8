//! RGB rasters, binary masks, cropping, resampling and file IO.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage, Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type Rgb8 = [u8; 3];

/// Row-major 8-bit RGB image with at least one pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} bytes, {width}x{height} RGB needs {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb8) -> Self {
        let mut img = Self::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb8 {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: Rgb8) {
        let i = self.offset(x, y);
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Rgb8> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn fill_box(&mut self, b: &BBox, color: Rgb8) -> Result<()> {
        self.check_bounds(b)?;
        for y in b.ymin..b.ymax() {
            for x in b.xmin..b.xmax() {
                self.put(x, y, color);
            }
        }
        Ok(())
    }

    pub fn check_bounds(&self, b: &BBox) -> Result<()> {
        if b.fits_within(self.width, self.height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                xmin: b.xmin,
                ymin: b.ymin,
                width: b.width,
                height: b.height,
                img_width: self.width,
                img_height: self.height,
            })
        }
    }

    pub fn crop(&self, b: &BBox) -> Result<RasterImage> {
        self.check_bounds(b)?;
        let row = b.width as usize * 3;
        let mut data = Vec::with_capacity(row * b.height as usize);
        for y in b.ymin..b.ymax() {
            let start = self.offset(b.xmin, y);
            data.extend_from_slice(&self.data[start..start + row]);
        }
        RasterImage::new(b.width, b.height, data)
    }

    /// Copies `src` into `self` with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, src: &RasterImage, x: u32, y: u32) -> Result<()> {
        let region = BBox::new(x, y, src.width, src.height);
        self.check_bounds(&region)?;
        let row = src.width as usize * 3;
        for sy in 0..src.height {
            let dst = self.offset(x, y + sy);
            let s = src.offset(0, sy);
            self.data[dst..dst + row].copy_from_slice(&src.data[s..s + row]);
        }
        Ok(())
    }

    /// Bilinear resampling to exactly `width` x `height` (pixel-center aligned).
    pub fn resize_bilinear(&self, width: u32, height: u32) -> RasterImage {
        assert!(width > 0 && height > 0, "target size must be at least 1x1");
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let xs: Vec<_> = (0..width)
            .map(|x| sample_coord(x, sx, self.width))
            .collect();
        let mut out = RasterImage::filled(width, height, [0, 0, 0]);
        for y in 0..height {
            let (y0, y1, fy) = sample_coord(y, sy, self.height);
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let (p00, p10) = (self.get(x0, y0), self.get(x1, y0));
                let (p01, p11) = (self.get(x0, y1), self.get(x1, y1));
                let mut px = [0u8; 3];
                for c in 0..3 {
                    let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                    let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                    px[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
                }
                out.put(x as u32, y, px);
            }
        }
        out
    }

    /// Shrinks the image so its longer side equals `target_long_side`; images
    /// already within the limit are returned unchanged.
    pub fn resize_preserve_aspect(&self, target_long_side: u32) -> RasterImage {
        let (w, h) = fit_long_side(self.width, self.height, target_long_side);
        self.resize_bilinear(w, h)
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Reads any supported raster format, chosen by content/extension.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| codec_error(path, source))?;
        Self::from_rgb_image(img.to_rgb8())
    }

    /// Writes PNG or JPEG depending on the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let format = ImageFormat::from_path(path).map_err(|source| codec_error(path, source))?;
        crate::fsutil::write_atomic_with(path, |file| {
            self.to_rgb_image()
                .write_to(file, format)
                .map_err(|source| codec_error(path, source))
        })
    }
}

fn codec_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Codec {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

/// Source neighbours and blend weight for destination index `i`.
fn sample_coord(i: u32, scale: f64, len: u32) -> (u32, u32, f64) {
    let src = ((f64::from(i) + 0.5) * scale - 0.5).clamp(0.0, f64::from(len - 1));
    let lo = src.floor() as u32;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - f64::from(lo))
}

/// Output size after fitting the longer side to `target`, never upscaling.
pub fn fit_long_side(width: u32, height: u32, target: u32) -> (u32, u32) {
    assert!(target >= 1, "target long side must be >= 1");
    let long = width.max(height);
    if long <= target {
        return (width, height);
    }
    let scale = f64::from(target) / f64::from(long);
    let shrink = |v: u32| ((f64::from(v) * scale).round() as u32).clamp(1, target);
    if width >= height {
        (target, shrink(height))
    } else {
        (shrink(width), target)
    }
}

/// One boolean per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "mask has {} bits, {width}x{height} needs {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Nearest-neighbour resampling, so the result stays binary.
    pub fn resize_nearest(&self, width: u32, height: u32) -> BinaryMask {
        let mut out = BinaryMask::filled(width, height, false);
        for y in 0..height {
            let sy = nearest_index(y, self.height, height);
            for x in 0..width {
                let sx = nearest_index(x, self.width, width);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

fn nearest_index(i: u32, src_len: u32, dst_len: u32) -> u32 {
    let v = ((u64::from(i) * 2 + 1) * u64::from(src_len)) / (u64::from(dst_len) * 2);
    (v as u32).min(src_len - 1)
}

/// Encodes pixels plus mask as RGBA, alpha 255 for set bits and 0 otherwise.
pub fn to_rgba(pixels: &RasterImage, mask: &BinaryMask) -> RgbaImage {
    RgbaImage::from_fn(pixels.width(), pixels.height(), |x, y| {
        let [r, g, b] = pixels.get(x, y);
        Rgba([r, g, b, if mask.get(x, y) { 255 } else { 0 }])
    })
}

/// Inverse of [`to_rgba`]; alpha >= 128 counts as set.
pub fn from_rgba(img: &RgbaImage) -> Result<(RasterImage, BinaryMask)> {
    let (w, h) = img.dimensions();
    let rgb = RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y);
        Rgb([p[0], p[1], p[2]])
    });
    let bits = img.pixels().map(|p| p[3] >= 128).collect();
    Ok((RasterImage::from_rgb_image(rgb)?, BinaryMask::new(w, h, bits)?))
}

/// HSV with every channel scaled to `[0, 1]`.
pub fn rgb_to_hsv(px: Rgb8) -> [f32; 3] {
    let [r, g, b] = px.map(|c| f32::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [(hue / 6.0).clamp(0.0, 1.0), sat, max]
}

pub fn hsv_to_rgb(hsv: [f32; 3]) -> Rgb8 {
    let [h, s, v] = hsv;
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8])
    }

    #[test]
    fn buffer_length_is_checked() {
        assert!(RasterImage::new(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::new(0, 2, vec![]).is_err());
        assert!(RasterImage::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn full_crop_is_identity() {
        let img = gradient(13, 9);
        assert_eq!(img.crop(&img.bounds()).unwrap(), img);
    }

    #[test]
    fn single_pixel_crop() {
        let img = gradient(13, 9);
        let c = img.crop(&BBox::new(3, 4, 1, 1)).unwrap();
        assert_eq!((c.width(), c.height()), (1, 1));
        assert_eq!(c.get(0, 0), img.get(3, 4));
    }

    #[test]
    fn crop_across_tone_boundary() {
        // left 12 columns black, rest white
        let img = RasterImage::from_fn(20, 10, |x, _| if x < 12 { [0; 3] } else { [255; 3] });
        let c = img.crop(&BBox::new(8, 2, 10, 5)).unwrap();
        let black = c.pixels().filter(|p| *p == [0; 3]).count();
        let white = c.pixels().filter(|p| *p == [255; 3]).count();
        assert_eq!((black, white), (4 * 5, 6 * 5));
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = gradient(10, 10);
        assert!(matches!(
            img.crop(&BBox::new(5, 5, 6, 2)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn resize_sizes() {
        assert_eq!(fit_long_side(1920, 1080, 640), (640, 360));
        assert_eq!(fit_long_side(640, 480, 640), (640, 480));
        assert_eq!(fit_long_side(1000, 1000, 640), (640, 640));
        assert_eq!(fit_long_side(1080, 1920, 640), (360, 640));
        let img = gradient(64, 36);
        let r = img.resize_preserve_aspect(32);
        assert_eq!((r.width(), r.height()), (32, 18));
        assert_eq!(img.resize_preserve_aspect(64), img);
    }

    #[test]
    fn resize_of_uniform_stays_uniform() {
        let img = RasterImage::filled(50, 30, [10, 200, 30]);
        let r = img.resize_bilinear(17, 11);
        assert!(r.pixels().all(|p| p == [10, 200, 30]));
    }

    #[test]
    fn resize_is_deterministic() {
        let img = gradient(97, 41);
        assert_eq!(img.resize_bilinear(40, 17), img.resize_bilinear(40, 17));
    }

    #[test]
    fn hsv_round_trip() {
        for px in [[255, 0, 0], [0, 128, 255], [12, 34, 56], [200, 200, 200], [0, 0, 0]] {
            let back = hsv_to_rgb(rgb_to_hsv(px));
            for c in 0..3 {
                assert!((i32::from(back[c]) - i32::from(px[c])).abs() <= 1, "{px:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn nearest_mask_resize_keeps_full_mask() {
        let m = BinaryMask::filled(7, 3, true).resize_nearest(20, 9);
        assert_eq!(m.count_set(), 180);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = gradient(31, 17);
        img.save(&path).unwrap();
        assert_eq!(RasterImage::load(&path).unwrap(), img);
    }

    #[test]
    fn jpeg_is_written_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jpg");
        let img = RasterImage::filled(16, 16, [90, 90, 90]);
        img.save(&path).unwrap();
        let back = RasterImage::load(&path).unwrap();
        assert_eq!((back.width(), back.height()), (16, 16));
    }

    proptest! {
        #[test]
        fn paste_then_crop_returns_pasted(
            w in 1u32..12, h in 1u32..12, x in 0u32..20, y in 0u32..20, seed in any::<u8>()
        ) {
            let mut canvas = gradient(32, 32);
            let patch = RasterImage::from_fn(w, h, |px, py| [seed, (px * 11) as u8, (py * 13) as u8]);
            canvas.paste(&patch, x, y).unwrap();
            prop_assert_eq!(canvas.crop(&BBox::new(x, y, w, h)).unwrap(), patch);
        }
    }
}
