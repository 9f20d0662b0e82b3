use image::{Rgb, RgbImage};

use super::scene::{
    SceneSpec, Shape, StyleSpec, FILL_VALUE, GRAY_LEVELS, GRID, HUES, RADII, SATURATIONS, TINTS,
};
use crate::error::Result;

/// Pixel coverage of a glyph, row-major, sampled at pixel centers.
pub type Mask = Vec<bool>;

fn inside(shape: Shape, u: f64, v: f64) -> bool {
    match shape {
        Shape::Disk => u * u + v * v <= 1.0,
        Shape::Square => u.abs().max(v.abs()) <= 0.8,
        Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        Shape::Triangle => {
            // Equilateral, circumradius 1, apex up (v grows downward).
            let s = 3f64.sqrt() / 2.0;
            v <= 0.5 && -s * u - 0.5 * v <= 0.5 && s * u - 0.5 * v <= 0.5
        }
    }
}

/// Glyph mask of `scene` on a `size x size` canvas. Depends on nothing else.
pub fn mask(scene: &SceneSpec, size: usize) -> Mask {
    let sz = size as f64;
    let (cx, cy) = (GRID[scene.cx as usize] * sz, GRID[scene.cy as usize] * sz);
    let r = RADII[scene.scale as usize] * sz;
    let theta = (scene.rotation_deg() as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut m = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / r;
            let dy = (y as f64 + 0.5 - cy) / r;
            // Rotate the sample point by -theta into the glyph frame.
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            m[y * size + x] = inside(scene.shape, u, v);
        }
    }
    m
}

/// Chebyshev dilation by `r` pixels.
pub fn dilate(m: &[bool], size: usize, r: usize) -> Mask {
    let r = r as isize;
    let n = size as isize;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    (0..n).contains(&yy) && (0..n).contains(&xx) && m[(yy * n + xx) as usize]
                })
            })
        })
        .collect()
}

/// Chebyshev erosion by one pixel; pixels beyond the border count as empty.
pub fn erode1(m: &[bool], size: usize) -> Mask {
    let n = size as isize;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    (0..n).contains(&yy) && (0..n).contains(&xx) && m[(yy * n + xx) as usize]
                })
            })
        })
        .collect()
}

/// Outline of thickness `t`: the one-pixel inner boundary grown outward by
/// `t - 1` pixels.
pub fn stroke(m: &[bool], size: usize, t: u8) -> Mask {
    let outer = dilate(m, size, t as usize - 1);
    let inner = erode1(m, size);
    outer.iter().zip(&inner).map(|(&o, &i)| o && !i).collect()
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 8-bit intensity of gray level `i`.
pub fn gray_value(i: u8) -> u8 {
    debug_assert!((i as usize) < GRAY_LEVELS);
    to_u8(0.2 + 0.1 * i as f64)
}

/// 8-bit RGB of the fill with hue bin `hue` and saturation bin `sat`.
pub fn fill_color(hue: u8, sat: u8) -> [u8; 3] {
    let h = hue as f64 / HUES as f64 * 6.0;
    let s = SATURATIONS[sat as usize];
    let v = FILL_VALUE;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [to_u8(r + m), to_u8(g + m), to_u8(b + m)]
}

/// Paints `style` onto the glyph mask `m`.
pub fn paint(m: &[bool], size: usize, style: &StyleSpec) -> RgbImage {
    match style {
        StyleSpec::One(s) => {
            let st = stroke(m, size, s.thickness);
            let g = gray_value(s.gray);
            RgbImage::from_fn(size as u32, size as u32, |x, y| {
                if st[y as usize * size + x as usize] {
                    Rgb([g, g, g])
                } else {
                    Rgb([0, 0, 0])
                }
            })
        }
        StyleSpec::Two(s) => {
            let fill = fill_color(s.hue, s.sat);
            let bg = TINTS[s.tint as usize];
            RgbImage::from_fn(size as u32, size as u32, |x, y| {
                Rgb(if m[y as usize * size + x as usize] { fill } else { bg })
            })
        }
    }
}

/// Deterministic rasterization without anti-aliasing.
pub fn render(scene: &SceneSpec, style: &StyleSpec, size: usize) -> Result<RgbImage> {
    scene.validate()?;
    style.validate()?;
    Ok(paint(&mask(scene, size), size, style))
}
