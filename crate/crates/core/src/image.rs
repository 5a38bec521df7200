//! Grayscale images and binary masks.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("image {width}×{height} given {} values", data.len())));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Sub-rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidInput(format!(
                "crop {w}×{h}+{x0}+{y0} outside {}×{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::new(w, h, data)
    }

    /// Centers the image on a square canvas of side `ceil(ratio · max(w, h))`
    /// filled with `background`.
    pub fn pad_to_square(&self, ratio: f64, background: f32) -> GrayImage {
        let side = ((self.width.max(self.height) as f64) * ratio.max(1.0)).ceil() as usize;
        let (ox, oy) = ((side - self.width) / 2, (side - self.height) / 2);
        let mut out = GrayImage::filled(side, side, background);
        for y in 0..self.height {
            let dst = (y + oy) * side + ox;
            out.data[dst..dst + self.width].copy_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
        }
        out
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width - 1);
                let top = self.get(x0, y0) as f64 * (1.0 - tx) + self.get(x1, y0) as f64 * tx;
                let bot = self.get(x0, y1) as f64 * (1.0 - tx) + self.get(x1, y1) as f64 * tx;
                data.push((top * (1.0 - ty) + bot * ty) as f32);
            }
        }
        GrayImage { width, height, data }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        GrayImage::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("mask {width}×{height} given {} values", data.len())));
        }
        Ok(Mask { width, height, data })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `(x0, y0, w, h)` of the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// Crops `image` to the bounding box of `mask`, whitens pixels outside the
/// mask, and pads the crop to a square with margin `ratio` on a white background.
pub fn crop_to_mask(image: &GrayImage, mask: &Mask, ratio: f64) -> Result<GrayImage> {
    if image.width != mask.width || image.height != mask.height {
        return Err(Error::Shape(format!(
            "image {}×{} vs mask {}×{}",
            image.width, image.height, mask.width, mask.height
        )));
    }
    let (x0, y0, w, h) = mask.bounding_box().ok_or(Error::Empty("mask"))?;
    let mut masked = image.clone();
    for (v, &m) in masked.data.iter_mut().zip(&mask.data) {
        if !m {
            *v = 1.0;
        }
    }
    Ok(masked.crop(x0, y0, w, h)?.pad_to_square(ratio, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_is_centered_and_white() {
        let img = GrayImage::filled(20, 10, 0.0);
        let sq = img.pad_to_square(1.15, 1.0);
        assert_eq!((sq.width, sq.height), (23, 23));
        assert_eq!(sq.data.iter().filter(|&&v| v == 0.0).count(), 200);
        assert_eq!(sq.get(0, 0), 1.0);
        assert_eq!(sq.get(11, 11), 0.0);
    }

    #[test]
    fn resize_preserves_constant() {
        let img = GrayImage::filled(17, 9, 0.25);
        assert!(img.resize(32, 32).data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn mask_bbox_and_crop() {
        let mut m = Mask::new(8, 8, vec![false; 64]).unwrap();
        m.data[2 * 8 + 3] = true;
        m.data[5 * 8 + 6] = true;
        assert_eq!(m.bounding_box(), Some((3, 2, 4, 4)));
        let img = GrayImage::filled(8, 8, 0.0);
        let c = crop_to_mask(&img, &m, 1.15).unwrap();
        assert_eq!(c.width, 5);
        assert_eq!(c.data.iter().filter(|&&v| v == 0.0).count(), 2);
        assert!(crop_to_mask(&img, &Mask::new(8, 8, vec![false; 64]).unwrap(), 1.15).is_err());
    }

    #[test]
    fn u8_round_trip() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(GrayImage::from_u8(2, 1, &img.to_u8()).unwrap(), img);
    }
}
