//! Colour and texture histograms shared by region grouping and the baseline
//! classifier.
//!
//! Colour: 25 bins per HSV channel (75 total). Texture: gradient orientation
//! (8 sectors) crossed with gradient magnitude (10 bins) per HSV channel
//! (240 total). Every pixel contributes one count per channel to each
//! histogram, and histograms are L1-normalised.

use crate::raster::{rgb_to_hsv, RasterImage};

pub const COLOR_BINS_PER_CHANNEL: usize = 25;
pub const COLOR_LEN: usize = COLOR_BINS_PER_CHANNEL * 3;
pub const ORIENTATIONS: usize = 8;
pub const MAGNITUDE_BINS: usize = 10;
pub const TEXTURE_PER_CHANNEL: usize = ORIENTATIONS * MAGNITUDE_BINS;
pub const TEXTURE_LEN: usize = TEXTURE_PER_CHANNEL * 3;

/// Largest central-difference gradient magnitude on `[0, 1]` data.
const MAX_MAGNITUDE: f32 = std::f32::consts::FRAC_1_SQRT_2;

/// Per-pixel histogram bin indices, computed once per image.
#[derive(Debug, Clone)]
pub struct PixelBins {
    pub color: Vec<[u16; 3]>,
    pub texture: Vec<[u16; 3]>,
}

impl PixelBins {
    pub fn compute(img: &RasterImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let hsv: Vec<[f32; 3]> = img.pixels().map(rgb_to_hsv).collect();
        let color = hsv
            .iter()
            .map(|px| {
                let mut out = [0u16; 3];
                for c in 0..3 {
                    let bin = ((px[c] * COLOR_BINS_PER_CHANNEL as f32) as usize)
                        .min(COLOR_BINS_PER_CHANNEL - 1);
                    out[c] = (c * COLOR_BINS_PER_CHANNEL + bin) as u16;
                }
                out
            })
            .collect();

        let mut texture = Vec::with_capacity(w * h);
        for y in 0..h {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let mut out = [0u16; 3];
                for c in 0..3 {
                    let gx = (hsv[y * w + xp][c] - hsv[y * w + xm][c]) * 0.5;
                    let gy = (hsv[yp * w + x][c] - hsv[ym * w + x][c]) * 0.5;
                    out[c] = (c * TEXTURE_PER_CHANNEL + texture_bin(gx, gy)) as u16;
                }
                texture.push(out);
            }
        }
        Self { color, texture }
    }

    /// Normalised histograms over the pixels yielded by `indices`.
    pub fn histograms(&self, indices: impl Iterator<Item = usize>) -> (Vec<f64>, Vec<f64>) {
        let mut color = vec![0.0; COLOR_LEN];
        let mut texture = vec![0.0; TEXTURE_LEN];
        for i in indices {
            for &b in &self.color[i] {
                color[b as usize] += 1.0;
            }
            for &b in &self.texture[i] {
                texture[b as usize] += 1.0;
            }
        }
        normalize(&mut color);
        normalize(&mut texture);
        (color, texture)
    }
}

fn texture_bin(gx: f32, gy: f32) -> usize {
    let angle = gy.atan2(gx) + std::f32::consts::PI;
    let orientation =
        ((angle / std::f32::consts::TAU * ORIENTATIONS as f32) as usize).min(ORIENTATIONS - 1);
    let magnitude = (gx * gx + gy * gy).sqrt();
    let mag_bin =
        ((magnitude / MAX_MAGNITUDE * MAGNITUDE_BINS as f32) as usize).min(MAGNITUDE_BINS - 1);
    orientation * MAGNITUDE_BINS + mag_bin
}

pub fn normalize(hist: &mut [f64]) {
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|v| *v /= total);
    }
}

pub fn histogram_intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Size-weighted average of two histograms.
pub fn merge_histograms(a: &[f64], size_a: usize, b: &[f64], size_b: usize) -> Vec<f64> {
    let (wa, wb) = (size_a as f64, size_b as f64);
    let total = wa + wb;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x * wa + y * wb) / total)
        .collect()
}

/// Concatenated colour and texture histograms of a whole image.
pub fn image_descriptor(img: &RasterImage) -> Vec<f64> {
    let bins = PixelBins::compute(img);
    let (mut color, texture) = bins.histograms(0..img.pixel_count());
    color.extend(texture);
    color
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histograms_are_normalised() {
        let img = RasterImage::from_fn(17, 9, |x, y| [(x * 15) as u8, (y * 28) as u8, 77]);
        let bins = PixelBins::compute(&img);
        let (c, t) = bins.histograms(0..img.pixel_count());
        assert_eq!((c.len(), t.len()), (COLOR_LEN, TEXTURE_LEN));
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solid_color_is_three_spikes() {
        let img = RasterImage::filled(5, 5, [255, 0, 0]);
        let d = image_descriptor(&img);
        let color = &d[..COLOR_LEN];
        // hue 0, saturation 1, value 1
        assert!((color[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((color[COLOR_BINS_PER_CHANNEL + 24] - 1.0 / 3.0).abs() < 1e-12);
        assert!((color[2 * COLOR_BINS_PER_CHANNEL + 24] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(color.iter().filter(|&&v| v > 0.0).count(), 3);
        // flat image: every channel lands in one texture bin
        assert_eq!(d[COLOR_LEN..].iter().filter(|&&v| v > 0.0).count(), 3);
    }

    #[test]
    fn self_intersection_is_one() {
        let img = RasterImage::from_fn(8, 8, |x, y| [(x * 30) as u8, (y * 30) as u8, 0]);
        let d = image_descriptor(&img);
        assert!((histogram_intersection(&d[..COLOR_LEN], &d[..COLOR_LEN]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_is_weighted_mean() {
        let m = merge_histograms(&[1.0, 0.0], 3, &[0.0, 1.0], 1);
        assert_eq!(m, vec![0.75, 0.25]);
    }
}
