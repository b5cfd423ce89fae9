//! Planar RGB images with `f32` samples in `[0, 255]`, bilinear resampling,
//! and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Channel-major: `data[(c * height + y) * width + x]`.
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty image {width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} RGB image needs {} samples, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, width * height));
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.width * self.height..(c + 1) * self.width * self.height]
    }

    /// Luma plane (ITU-R 601 weights).
    pub fn gray(&self) -> Vec<f32> {
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        let mut m = [0.0; 3];
        for (c, v) in m.iter_mut().enumerate() {
            *v = self.channel(c).iter().map(|&x| x as f64).sum::<f64>() / n;
        }
        m
    }

    /// Resample the region `src` of this image onto an `out_w x out_h` grid.
    ///
    /// Output pixel centers are mapped into the source region with half-pixel
    /// alignment and sampled bilinearly, clamping at the image border. When
    /// `src` is the whole image and the output has the same size, the result
    /// equals the input exactly.
    pub fn warp_region(&self, src: &BBox, out_w: usize, out_h: usize) -> Vec<f32> {
        let sx = src.width() / out_w as f64;
        let sy = src.height() / out_h as f64;
        let xs: Vec<(usize, usize, f32)> = (0..out_w)
            .map(|j| lerp_taps(src.x_min() + (j as f64 + 0.5) * sx - 0.5, self.width))
            .collect();
        let ys: Vec<(usize, usize, f32)> = (0..out_h)
            .map(|i| lerp_taps(src.y_min() + (i as f64 + 0.5) * sy - 0.5, self.height))
            .collect();
        let mut out = vec![0.0f32; 3 * out_w * out_h];
        for c in 0..3 {
            let plane = self.channel(c);
            let dst = &mut out[c * out_w * out_h..(c + 1) * out_w * out_h];
            for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &plane[y0 * self.width..(y0 + 1) * self.width];
                let r1 = &plane[y1 * self.width..(y1 + 1) * self.width];
                let row = &mut dst[i * out_w..(i + 1) * out_w];
                for (o, &(x0, x1, fx)) in row.iter_mut().zip(&xs) {
                    let top = if fx == 0.0 { r0[x0] } else { r0[x0] + (r0[x1] - r0[x0]) * fx };
                    let bot = if fx == 0.0 { r1[x0] } else { r1[x0] + (r1[x1] - r1[x0]) * fx };
                    *o = if fy == 0.0 { top } else { top + (bot - top) * fy };
                }
            }
        }
        out
    }

    /// Whole-image bilinear resize.
    pub fn resized(&self, out_w: usize, out_h: usize) -> Image {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let full = BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
            .expect("image has positive size");
        Image {
            width: out_w,
            height: out_h,
            data: self.warp_region(&full, out_w, out_h),
        }
    }

    pub fn full_box(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64).expect("image has positive size")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * w * h];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32;
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| self.get(c, y as usize, x as usize).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Bilinear taps for a continuous pixel-index coordinate, clamped to `[0, n-1]`.
fn lerp_taps(pos: f64, n: usize) -> (usize, usize, f32) {
    let max = (n - 1) as f64;
    let p = pos.clamp(0.0, max);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    let f = (p - i0 as f64) as f32;
    (i0, i1, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_warp_is_exact() {
        let data: Vec<f32> = (0..3 * 5 * 4).map(|i| (i * 7 % 255) as f32).collect();
        let img = Image::new(5, 4, data.clone()).unwrap();
        assert_eq!(img.warp_region(&img.full_box(), 5, 4), data);
    }

    #[test]
    fn checkerboard_upsample_by_hand() {
        // 2x2 checkerboard [[0, 100], [100, 0]] warped to 4x4: the output
        // centers map to source index coordinates -0.25, 0.25, 0.75, 1.25,
        // which clamp/interpolate to weights 0, 0.25, 0.75, 1 on the second tap.
        let plane = [0.0f32, 100.0, 100.0, 0.0];
        let data: Vec<f32> = plane.iter().cycle().take(12).copied().collect();
        let img = Image::new(2, 2, data).unwrap();
        let out = img.warp_region(&img.full_box(), 4, 4);
        let t = [0.0f32, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let top = 0.0 + (100.0 - 0.0) * t[j];
                let bot = 100.0 + (0.0 - 100.0) * t[j];
                let e = top + (bot - top) * t[i];
                assert!((out[i * 4 + j] - e).abs() < 1e-4, "({i},{j}): {} vs {e}", out[i * 4 + j]);
            }
        }
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 6 * 3).map(|i| (i * 13 % 256) as f32).collect();
        let img = Image::new(6, 3, data).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
    }
}
