use std::path::Path;

use image::{ImageFormat, RgbImage};
use tensorkit::{Element, Tensor};

use crate::error::{invalid, MunitError, Result};

/// `[1, 3, H, W]` tensor with `v -> v / 127.5 - 1`.
pub fn rgb_to_tensor<T: Element>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::lit(raw[p * 3 + c] as f64 / 127.5 - 1.0)
    })
}

/// Nearest 8-bit value of `v` in `[-1, 1]`, clamped.
pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Image `item` of an `[N, 3, H, W]` tensor, quantized to 8 bits.
pub fn tensor_to_rgb<T: Element>(t: &Tensor<T>, item: usize) -> Result<RgbImage> {
    let (n, c, h, w) = t.dims4("tensor_to_rgb")?;
    if c != 3 || item >= n {
        return Err(invalid(format!("cannot take RGB image {item} from {:?}", t.shape())));
    }
    let plane = h * w;
    let base = item * 3 * plane;
    let data = t.data();
    let mut raw = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            raw.push(quantize(data[base + ch * plane + p].as_f64()));
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image"))
}

/// Reads an 8-bit RGB PNG as a `[1, 3, H, W]` tensor in `[-1, 1]`. With
/// `size`, images that are not `size x size` are rejected.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<Tensor<f32>> {
    Ok(rgb_to_tensor(&load_rgb(path, size)?))
}

pub fn load_rgb(path: &Path, size: Option<usize>) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| MunitError::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|source| MunitError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let img = match img {
        image::DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(invalid(format!(
                "{}: expected 8-bit RGB, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    if let Some(s) = size {
        if img.width() as usize != s || img.height() as usize != s {
            return Err(invalid(format!(
                "{}: expected {s}x{s}, got {}x{}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
    }
    Ok(img)
}

/// Writes image `item` of an `[N, 3, H, W]` tensor as an 8-bit RGB PNG.
pub fn save_image<T: Element>(t: &Tensor<T>, item: usize, path: &Path) -> Result<()> {
    save_rgb(&tensor_to_rgb(t, item)?, path)
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(|source| MunitError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// All `*.png` files of `dir` in file-name order, as tensors.
pub fn load_domain_images(dir: &Path, size: usize) -> Result<Vec<Tensor<f32>>> {
    png_files(dir)?.iter().map(|p| load_image(p, Some(size))).collect()
}

pub fn png_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| MunitError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(MunitError::Dataset(format!("{}: no PNG images", dir.display())));
    }
    Ok(files)
}
