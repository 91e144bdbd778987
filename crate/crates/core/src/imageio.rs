//! PNG/JPEG reading and writing plus the resampling used around it.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb};
use sodnet_tensor::kernels::resize_bilinear;
use sodnet_tensor::{Shape, Tensor};

use crate::error::{Result, SodError};
use crate::grid::{GrayMask, Grid, GroundTruth};

pub const MASK_THRESHOLD: u8 = 128;

/// Planar (CHW) RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width || height == 0 || width == 0 {
            return Err(SodError::InvalidMask(format!("{} values for a 3x{height}x{width} image", data.len())));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn from_planes(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        RgbImage { height, width, data }
    }

    pub fn flip_horizontal(&self) -> Self {
        RgbImage::from_planes(self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        RgbImage::from_planes(h, w, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    pub fn resize(&self, oh: usize, ow: usize) -> Self {
        if (oh, ow) == self.dims() {
            return self.clone();
        }
        let t = Tensor::from_vec(Shape([1, 3, self.height, self.width]), self.data.clone()).expect("image shape");
        RgbImage { height: oh, width: ow, data: resize_bilinear(&t, oh, ow).into_vec() }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(Shape([1, 3, self.height, self.width]), self.data.clone()).expect("image shape")
    }
}

/// Bilinear (half-pixel) resize of a real-valued map.
pub fn resize_gray(m: &GrayMask, oh: usize, ow: usize) -> GrayMask {
    if (oh, ow) == m.dims() {
        return m.clone();
    }
    let t = Tensor::from_vec(Shape([1, 1, m.height(), m.width()]), m.data().to_vec()).expect("map shape");
    Grid::from_vec(oh, ow, resize_bilinear(&t, oh, ow).into_vec()).expect("resized map")
}

/// Nearest-neighbour resize, used for binary masks.
pub fn resize_nearest<T: Copy>(g: &Grid<T>, oh: usize, ow: usize) -> Grid<T> {
    let (h, w) = g.dims();
    let pick = |o: usize, n: usize, i: usize| (((i as f64 + 0.5) * n as f64 / o as f64).floor() as usize).min(n - 1);
    Grid::from_fn(oh, ow, |y, x| g.get(pick(oh, h, y), pick(ow, w, x)))
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| SodError::Image { path: path.to_path_buf(), source })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage::from_planes(h, w, |c, y, x| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0))
}

pub fn read_gray_u8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?.to_luma8();
    Ok((img.height() as usize, img.width() as usize, img.into_raw()))
}

/// Load a prediction map: 8-bit grayscale scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<GrayMask> {
    let (h, w, v) = read_gray_u8(path)?;
    GrayMask::from_u8(h, w, &v)
}

/// Load a binary mask, foreground iff the 8-bit value is at least 128.
pub fn read_mask(path: &Path) -> Result<GroundTruth> {
    let (h, w, v) = read_gray_u8(path)?;
    GroundTruth::from_gray(h, w, &v, MASK_THRESHOLD)
}

fn save<P: image::Pixel<Subpixel = u8> + image::PixelWithColorType>(img: ImageBuffer<P, Vec<u8>>, path: &Path) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SodError::io(dir, e))?;
    }
    img.save(path).map_err(|source| SodError::Image { path: path.to_path_buf(), source })
}

/// Write a `[0, 1]` map as 8-bit grayscale with `round(255 v)`.
pub fn write_gray(path: &Path, m: &GrayMask) -> Result<()> {
    let img = GrayImage::from_raw(m.width() as u32, m.height() as u32, m.to_u8()).expect("buffer size");
    save::<Luma<u8>>(img, path)
}

pub fn write_mask(path: &Path, m: &GroundTruth) -> Result<()> {
    write_gray(path, &m.to_gray())
}

pub fn write_rgb(path: &Path, im: &RgbImage) -> Result<()> {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_fn(im.width as u32, im.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(im.get(0, y, x)), q(im.get(1, y, x)), q(im.get(2, y, x))])
    });
    save(img, path)
}

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "PNG"];

/// Image files in `dir` keyed by file stem, sorted by stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| SodError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| SodError::io(dir, e))?.path();
        let ext_ok = path.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e) || EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && ext_ok {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = GrayMask::from_u8(3, 5, &(0..15).map(|v| (v * 17) as u8).collect::<Vec<_>>()).unwrap();
        write_gray(&p, &m).unwrap();
        assert_eq!(read_gray(&p).unwrap(), m);
    }

    #[test]
    fn mask_threshold_is_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let img = GrayImage::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap();
        img.save(&p).unwrap();
        let gt = read_mask(&p).unwrap();
        assert_eq!(gt.grid().data(), &[false, false, true, true]);
    }

    #[test]
    fn nearest_resize_identity_and_upscale() {
        let g = Grid::from_fn(2, 2, |y, x| y * 2 + x);
        assert_eq!(resize_nearest(&g, 2, 2), g);
        let up = resize_nearest(&g, 4, 4);
        assert_eq!(up.get(1, 1), 0);
        assert_eq!(up.get(3, 2), 3);
    }

    #[test]
    fn rgb_flip_is_involution() {
        let im = RgbImage::from_planes(3, 4, |c, y, x| (c * 12 + y * 4 + x) as f32 / 36.0);
        assert_eq!(im.flip_horizontal().flip_horizontal(), im);
        assert_eq!(im.resize(3, 4), im);
    }
}
