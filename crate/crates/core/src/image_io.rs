//! 8-bit PNG output for rendered images and masks.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save sample `b` of a `[B,3,H,W]` tensor with values in `[0, 1]`.
pub fn save_rgb_png<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>, b: usize) -> Result<()> {
    let (n, c, h, w) = t.dims4("png")?;
    if c != 3 || b >= n {
        return Err(Error::invalid("png", format!("cannot write sample {b} of {:?} as RGB", t.shape())));
    }
    let d = t.data();
    let hw = h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb(std::array::from_fn(|ch| to_u8(d[(b * 3 + ch) * hw + p].to_f64())))
    });
    img.save(path)?;
    Ok(())
}

/// Save channel 0 of sample `b` as a grayscale PNG.
pub fn save_gray_png<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>, b: usize) -> Result<()> {
    let (n, c, h, w) = t.dims4("png")?;
    if b >= n {
        return Err(Error::invalid("png", format!("no sample {b} in {:?}", t.shape())));
    }
    let base = b * c * h * w;
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(t.data()[base + y as usize * w + x as usize].to_f64())])
    });
    img.save(path)?;
    Ok(())
}
