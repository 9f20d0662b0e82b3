use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{invalid, MunitError, Result};

/// Glyph centers as fractions of the image side.
pub const GRID: [f64; 3] = [0.35, 0.5, 0.65];
pub const ROTATIONS_DEG: [u32; 2] = [0, 45];
/// Glyph radius as a fraction of the image side.
pub const RADII: [f64; 2] = [0.17, 0.25];
pub const THICKNESSES: [u8; 3] = [1, 2, 3];
pub const GRAY_LEVELS: usize = 9;
pub const HUES: usize = 8;
pub const SATURATIONS: [f64; 4] = [0.45, 0.6, 0.75, 0.9];
pub const FILL_VALUE: f64 = 0.95;
pub const TINTS: [[u8; 3]; 4] = [[16, 16, 16], [44, 16, 16], [16, 44, 16], [16, 16, 44]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Triangle,
    Square,
    Disk,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Triangle, Shape::Square, Shape::Disk, Shape::Cross];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Shape> {
        Shape::ALL
            .get(i)
            .copied()
            .ok_or_else(|| invalid(format!("shape index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Triangle => "triangle",
            Shape::Square => "square",
            Shape::Disk => "disk",
            Shape::Cross => "cross",
        }
    }

    /// The disk looks the same at every rotation, so it has one.
    pub fn rotations(self) -> usize {
        if self == Shape::Disk {
            1
        } else {
            ROTATIONS_DEG.len()
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = MunitError;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown shape `{s}`")))
    }
}

/// Ground-truth content: which glyph, where, how rotated and how large.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    /// Index into [`GRID`].
    pub cx: u8,
    pub cy: u8,
    /// Index into [`ROTATIONS_DEG`]; always 0 for disks.
    pub rot: u8,
    /// Index into [`RADII`].
    pub scale: u8,
}

impl SceneSpec {
    pub fn new(shape: Shape, cx: u8, cy: u8, rot: u8, scale: u8) -> Result<Self> {
        let s = Self {
            shape,
            cx,
            cy,
            rot,
            scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (self.cx as usize) < GRID.len()
            && (self.cy as usize) < GRID.len()
            && (self.rot as usize) < self.shape.rotations()
            && (self.scale as usize) < RADII.len();
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("scene out of range: {self:?}")))
        }
    }

    /// Every valid scene, in a fixed order.
    pub fn all() -> Vec<SceneSpec> {
        let mut out = Vec::new();
        for shape in Shape::ALL {
            for cx in 0..GRID.len() as u8 {
                for cy in 0..GRID.len() as u8 {
                    for rot in 0..shape.rotations() as u8 {
                        for scale in 0..RADII.len() as u8 {
                            out.push(SceneSpec {
                                shape,
                                cx,
                                cy,
                                rot,
                                scale,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn rotation_deg(&self) -> u32 {
        ROTATIONS_DEG[self.rot as usize]
    }
}

/// Domain 1 appearance: outline thickness and gray level on black.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Style1 {
    /// Stroke thickness in pixels, one of [`THICKNESSES`].
    pub thickness: u8,
    /// Gray level index; level `i` is intensity `0.2 + 0.1 i`.
    pub gray: u8,
}

/// Domain 2 appearance: fill color on a dark tinted background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Style2 {
    pub hue: u8,
    pub sat: u8,
    pub tint: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StyleSpec {
    One(Style1),
    Two(Style2),
}

impl StyleSpec {
    pub fn domain(&self) -> Domain {
        match self {
            StyleSpec::One(_) => Domain::One,
            StyleSpec::Two(_) => Domain::Two,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StyleSpec::One(s) => THICKNESSES.contains(&s.thickness) && (s.gray as usize) < GRAY_LEVELS,
            StyleSpec::Two(s) => {
                (s.hue as usize) < HUES && (s.sat as usize) < SATURATIONS.len() && (s.tint as usize) < TINTS.len()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("style out of range: {self:?}")))
        }
    }

    /// Every valid style of `domain`, in a fixed order.
    pub fn all(domain: Domain) -> Vec<StyleSpec> {
        match domain {
            Domain::One => THICKNESSES
                .iter()
                .flat_map(|&thickness| {
                    (0..GRAY_LEVELS as u8).map(move |gray| StyleSpec::One(Style1 { thickness, gray }))
                })
                .collect(),
            Domain::Two => {
                let mut out = Vec::new();
                for hue in 0..HUES as u8 {
                    for sat in 0..SATURATIONS.len() as u8 {
                        for tint in 0..TINTS.len() as u8 {
                            out.push(StyleSpec::Two(Style2 { hue, sat, tint }));
                        }
                    }
                }
                out
            }
        }
    }

    /// Integer style fields in a fixed order: `(thickness, gray)` or
    /// `(hue, sat, tint)`.
    pub fn fields(&self) -> Vec<u8> {
        match self {
            StyleSpec::One(s) => vec![s.thickness, s.gray],
            StyleSpec::Two(s) => vec![s.hue, s.sat, s.tint],
        }
    }

    pub fn from_fields(domain: Domain, f: &[u8]) -> Result<StyleSpec> {
        let s = match (domain, f) {
            (Domain::One, [thickness, gray]) => StyleSpec::One(Style1 {
                thickness: *thickness,
                gray: *gray,
            }),
            (Domain::Two, [hue, sat, tint]) => StyleSpec::Two(Style2 {
                hue: *hue,
                sat: *sat,
                tint: *tint,
            }),
            _ => return Err(invalid(format!("wrong style field count for domain {domain}: {f:?}"))),
        };
        s.validate()?;
        Ok(s)
    }
}

/// What the `mode` column of the label files holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    /// Glyph shape in both domains.
    Shape,
    /// Domain 2: hue family (adjacent hue bins paired, 4 families).
    /// Domain 1 has no color and falls back to the glyph shape.
    Hue,
}

pub const MODES: usize = 4;

impl ModeLabel {
    pub fn mode(self, scene: &SceneSpec, style: &StyleSpec) -> usize {
        match (self, style) {
            (ModeLabel::Hue, StyleSpec::Two(s)) => s.hue as usize / (HUES / MODES),
            _ => scene.shape.index(),
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeLabel::Shape => "shape",
            ModeLabel::Hue => "hue",
        })
    }
}

impl FromStr for ModeLabel {
    type Err = MunitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shape" => Ok(ModeLabel::Shape),
            "hue" => Ok(ModeLabel::Hue),
            _ => Err(invalid(format!("mode label must be `shape` or `hue`, got `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(SceneSpec::all().len(), 3 * 9 * 2 * 2 + 9 * 2);
        assert_eq!(StyleSpec::all(Domain::One).len(), 27);
        assert_eq!(StyleSpec::all(Domain::Two).len(), 128);
        assert!(SceneSpec::new(Shape::Disk, 0, 0, 1, 0).is_err());
    }

    #[test]
    fn hue_families_are_balanced() {
        let scene = SceneSpec::all()[0];
        let mut counts = [0usize; MODES];
        for st in StyleSpec::all(Domain::Two) {
            counts[ModeLabel::Hue.mode(&scene, &st)] += 1;
        }
        assert_eq!(counts, [32; 4]);
    }
}
