use serde::{Deserialize, Serialize};

use super::DataError;

/// Degenerate-std threshold: below it the image is only mean-centred.
pub const MIN_STD: f64 = 1e-8;

/// Short side is rescaled to `crop * RESCALE_NUM / RESCALE_DEN` before center cropping.
const RESCALE_NUM: usize = 256;
const RESCALE_DEN: usize = 224;

/// Pixels in row-major (H, W, C) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self, DataError> {
        if height == 0 || width == 0 || channels == 0 || pixels.is_empty() {
            return Err(DataError::EmptyImage);
        }
        if pixels.len() != height * width * channels {
            return Err(DataError::DimensionMismatch(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        Ok(ImageTensor { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        ImageTensor { height, width, channels, pixels: vec![value; height * width * channels] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Mean and population standard deviation, accumulated in f64.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
        let var = self
            .pixels
            .iter()
            .map(|&p| {
                let d = f64::from(p) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Subtracts the per-image mean and divides by the per-image standard
    /// deviation (or by 1 when it is below [`MIN_STD`]).
    pub fn standardize(&mut self) {
        let (mean, std) = self.moments();
        let div = if std < MIN_STD { 1.0 } else { std };
        for p in &mut self.pixels {
            *p = ((f64::from(*p) - mean) / div) as f32;
        }
    }

    /// Bilinear resize with half-pixel centres; the identity when sizes match.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> ImageTensor {
        let c = self.channels;
        let mut out = vec![0f32; out_h * out_w * c];
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let src = |dst: usize, scale: f64, len: usize| {
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, pos - lo as f64)
        };
        for y in 0..out_h {
            let (y0, y1, fy) = src(y, sy, self.height);
            for x in 0..out_w {
                let (x0, x1, fx) = src(x, sx, self.width);
                for ch in 0..c {
                    let top = f64::from(self.at(y0, x0, ch)) * (1.0 - fx) + f64::from(self.at(y0, x1, ch)) * fx;
                    let bot = f64::from(self.at(y1, x0, ch)) * (1.0 - fx) + f64::from(self.at(y1, x1, ch)) * fx;
                    out[(y * out_w + x) * c + ch] = (top * (1.0 - fy) + bot * fy) as f32;
                }
            }
        }
        ImageTensor { height: out_h, width: out_w, channels: c, pixels: out }
    }

    pub fn center_crop(&self, crop_h: usize, crop_w: usize) -> ImageTensor {
        let top = (self.height - crop_h) / 2;
        let left = (self.width - crop_w) / 2;
        let c = self.channels;
        let mut pixels = Vec::with_capacity(crop_h * crop_w * c);
        for y in top..top + crop_h {
            let start = (y * self.width + left) * c;
            pixels.extend_from_slice(&self.pixels[start..start + crop_w * c]);
        }
        ImageTensor { height: crop_h, width: crop_w, channels: c, pixels }
    }
}

/// Rescale the short side to `round(crop * 256 / 224)`, take the central
/// `crop x crop` window and standardize it.
pub fn preprocess_image(raw: &ImageTensor, crop: usize) -> Result<ImageTensor, DataError> {
    if raw.height == 0 || raw.width == 0 || raw.channels == 0 || raw.pixels.is_empty() {
        return Err(DataError::EmptyImage);
    }
    if crop == 0 {
        return Err(DataError::DimensionMismatch("crop size must be positive".into()));
    }
    let short = ((crop * RESCALE_NUM) as f64 / RESCALE_DEN as f64).round() as usize;
    let (h, w) = if raw.height <= raw.width {
        let w = ((raw.width as f64 * short as f64) / raw.height as f64).round() as usize;
        (short, w.max(short))
    } else {
        let h = ((raw.height as f64 * short as f64) / raw.width as f64).round() as usize;
        (h.max(short), short)
    };
    let mut out = raw.resize_bilinear(h, w).center_crop(crop, crop);
    out.standardize();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_becomes_zero() {
        for (h, w) in [(3, 3), (10, 7), (1, 1)] {
            let img = ImageTensor::filled(h, w, 3, 4.25);
            let out = preprocess_image(&img, 2).unwrap();
            assert_eq!(out.dims(), (2, 2, 3));
            assert!(out.pixels.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn two_by_two_example() {
        let img = ImageTensor::new(2, 2, 1, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let out = preprocess_image(&img, 2).unwrap();
        assert_eq!(out.pixels, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_image_rejected() {
        let img = ImageTensor { height: 0, width: 4, channels: 1, pixels: vec![] };
        assert!(matches!(preprocess_image(&img, 2), Err(DataError::EmptyImage)));
        assert!(matches!(ImageTensor::new(0, 1, 1, vec![]), Err(DataError::EmptyImage)));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ImageTensor::new(3, 4, 2, (0..24).map(|v| v as f32 * 0.37).collect()).unwrap();
        assert_eq!(img.resize_bilinear(3, 4), img);
    }

    #[test]
    fn non_square_crop_is_central() {
        // 4 rows x 8 cols, crop 2 -> short side 2, long side 4
        let img = ImageTensor::new(4, 8, 1, (0..32).map(|v| v as f32).collect()).unwrap();
        let out = preprocess_image(&img, 2).unwrap();
        assert_eq!(out.dims(), (2, 2, 1));
        let (m, s) = out.moments();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
    }
}
