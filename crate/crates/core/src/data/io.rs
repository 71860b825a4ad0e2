//! 8-bit PNG and PGM/PPM reading and writing.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(image_err(path, "image has zero size"));
    }
    Ok(img)
}

fn to_real(v: u8) -> Real {
    v as Real / 255.0
}

fn to_u8(v: Real) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel image as a `(1, 1, H, W)` tensor in `[0, 1]`. Colour input
/// is converted to luma.
pub fn read_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(to_real).collect();
    Tensor::from_vec(Shape::new(1, 1, h as usize, w as usize), data)
}

/// Colour image as a `(1, 3, H, W)` tensor in `[0, 1]`. Grayscale input is
/// replicated across the channels.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let (h, w) = (h as usize, w as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        to_real(raw[(y * w + x) * 3 + c])
    }))
}

/// Write plane `(0, 0)` of `t` as 8-bit grayscale; the format follows the
/// file extension.
pub fn write_gray(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    let data = t.data()[..s.plane()].iter().map(|&v| to_u8(v)).collect();
    let img: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(s.w as u32, s.h as u32, data)
        .ok_or_else(|| image_err(path, "buffer size"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Write the first three channels of batch item 0 as 8-bit RGB.
pub fn write_rgb(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    if s.c < 3 {
        return Err(image_err(path, format!("need 3 channels, got {}", s.c)));
    }
    let mut data = Vec::with_capacity(s.plane() * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            data.extend((0..3).map(|c| to_u8(t.at(0, c, y, x))));
        }
    }
    let img: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(s.w as u32, s.h as u32, data)
        .ok_or_else(|| image_err(path, "buffer size"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Round every value to the nearest multiple of 1/255.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| to_real(to_u8(v)))
}
