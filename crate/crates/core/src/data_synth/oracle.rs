use std::collections::HashMap;
use std::sync::Arc;

use image::RgbImage;
use tensorkit::{Element, Graph, Rng, Tensor, Var};

use super::io::{rgb_to_tensor, tensor_to_rgb};
use super::render::{fill_color, gray_value, mask, paint, stroke, Mask};
use super::scene::{SceneSpec, Shape, Style1, Style2, StyleSpec, GRAY_LEVELS, HUES, SATURATIONS, THICKNESSES, TINTS};
use crate::domain::Domain;
use crate::error::{invalid, MunitError, Result};
use crate::model::Translator;

/// Exact inverse of the renderer at one image size.
///
/// Construction enumerates every scene and fails if two scenes share a mask
/// or two `(scene, thickness)` pairs share an outline, so a successfully built
/// oracle certifies that geometry is recoverable from pixels.
pub struct Oracle {
    size: usize,
    masks: HashMap<Mask, SceneSpec>,
    strokes: HashMap<Mask, (SceneSpec, u8)>,
    grays: HashMap<u8, u8>,
    fills: HashMap<[u8; 3], (u8, u8)>,
    tints: HashMap<[u8; 3], u8>,
}

fn not_in_range(domain: Domain, reason: impl Into<String>) -> MunitError {
    MunitError::NotInRange {
        domain: domain.number(),
        reason: reason.into(),
    }
}

impl Oracle {
    pub fn new(size: usize) -> Result<Self> {
        let mut masks = HashMap::new();
        let mut strokes = HashMap::new();
        for scene in SceneSpec::all() {
            let m = mask(&scene, size);
            for &t in &THICKNESSES {
                if let Some((prev, pt)) = strokes.insert(stroke(&m, size, t), (scene, t)) {
                    return Err(invalid(format!(
                        "outline collision at size {size}: {prev:?}/{pt} and {scene:?}/{t}"
                    )));
                }
            }
            if let Some(prev) = masks.insert(m, scene) {
                return Err(invalid(format!("mask collision at size {size}: {prev:?} and {scene:?}")));
            }
        }
        let grays: HashMap<u8, u8> = (0..GRAY_LEVELS as u8).map(|i| (gray_value(i), i)).collect();
        let mut fills = HashMap::new();
        for hue in 0..HUES as u8 {
            for sat in 0..SATURATIONS.len() as u8 {
                if fills.insert(fill_color(hue, sat), (hue, sat)).is_some() {
                    return Err(invalid(format!("fill color collision at hue {hue} sat {sat}")));
                }
            }
        }
        let tints: HashMap<[u8; 3], u8> = TINTS.iter().enumerate().map(|(i, &c)| (c, i as u8)).collect();
        if grays.len() != GRAY_LEVELS || tints.len() != TINTS.len() || tints.keys().any(|t| fills.contains_key(t)) {
            return Err(invalid("palette entries are not distinct"));
        }
        Ok(Self {
            size,
            masks,
            strokes,
            grays,
            fills,
            tints,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Recovers `(scene, style)` from a rendered image. Anything the renderer
    /// could not have produced is a [`MunitError::NotInRange`].
    pub fn invert(&self, img: &RgbImage, domain: Domain) -> Result<(SceneSpec, StyleSpec)> {
        let size = self.size;
        if img.width() as usize != size || img.height() as usize != size {
            return Err(not_in_range(
                domain,
                format!("size {}x{} is not {size}x{size}", img.width(), img.height()),
            ));
        }
        let pixels: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
        let (scene, style) = match domain {
            Domain::One => {
                let mut level = None;
                let mut fg = vec![false; size * size];
                for (i, px) in pixels.iter().enumerate() {
                    if *px == [0, 0, 0] {
                        continue;
                    }
                    let lv = (px[0] == px[1] && px[1] == px[2])
                        .then(|| self.grays.get(&px[0]).copied())
                        .flatten()
                        .ok_or_else(|| not_in_range(domain, format!("pixel {i} has color {px:?}")))?;
                    if *level.get_or_insert(lv) != lv {
                        return Err(not_in_range(domain, "more than one stroke gray level"));
                    }
                    fg[i] = true;
                }
                let gray = level.ok_or_else(|| not_in_range(domain, "no stroke pixels"))?;
                let &(scene, thickness) = self
                    .strokes
                    .get(&fg)
                    .ok_or_else(|| not_in_range(domain, "outline matches no scene"))?;
                (scene, StyleSpec::One(Style1 { thickness, gray }))
            }
            Domain::Two => {
                let bg = pixels[0];
                let &tint = self
                    .tints
                    .get(&bg)
                    .ok_or_else(|| not_in_range(domain, format!("background {bg:?} is not a tint")))?;
                let mut color = None;
                let fg: Mask = pixels.iter().map(|&p| p != bg).collect();
                for (i, &px) in pixels.iter().enumerate() {
                    if fg[i] && *color.get_or_insert(px) != px {
                        return Err(not_in_range(domain, "more than one fill color"));
                    }
                }
                let color = color.ok_or_else(|| not_in_range(domain, "no glyph pixels"))?;
                let &(hue, sat) = self
                    .fills
                    .get(&color)
                    .ok_or_else(|| not_in_range(domain, format!("fill {color:?} is not in the palette")))?;
                let &scene = self
                    .masks
                    .get(&fg)
                    .ok_or_else(|| not_in_range(domain, "glyph mask matches no scene"))?;
                (scene, StyleSpec::Two(Style2 { hue, sat, tint }))
            }
        };
        let again = paint(&mask(&scene, size), size, &style);
        if again != *img {
            return Err(not_in_range(domain, "re-rendered image differs"));
        }
        Ok((scene, style))
    }
}

/// Content code layout of the oracle: `[shape, cx, cy, rot, scale]`.
pub const ORACLE_CONTENT_DIM: usize = 5;
pub const ORACLE_STYLE_DIM: usize = 8;

/// The renderer and its inverse behind the translator interface.
///
/// Content codes are `[N, 5, 1, 1]` scene indices; style codes are `[N, 8]`
/// holding the integer style fields followed by zeros. Decoding rounds codes
/// to the nearest integers and rejects values outside the grid. Nothing is
/// differentiable: outputs enter the graph as constants.
#[derive(Clone)]
pub struct OracleTranslator {
    oracle: Arc<Oracle>,
}

impl OracleTranslator {
    pub fn new(size: usize) -> Result<Self> {
        Ok(Self {
            oracle: Arc::new(Oracle::new(size)?),
        })
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    fn invert_batch<T: Element>(&self, x: &Tensor<T>, domain: Domain) -> Result<Vec<(SceneSpec, StyleSpec)>> {
        let n = x.dims4("oracle encode")?.0;
        (0..n)
            .map(|i| self.oracle.invert(&tensor_to_rgb(x, i)?, domain))
            .collect()
    }
}

pub fn scene_code(scene: &SceneSpec) -> [u8; ORACLE_CONTENT_DIM] {
    [scene.shape.index() as u8, scene.cx, scene.cy, scene.rot, scene.scale]
}

pub fn style_code(style: &StyleSpec) -> [u8; ORACLE_STYLE_DIM] {
    let mut out = [0u8; ORACLE_STYLE_DIM];
    for (o, f) in out.iter_mut().zip(style.fields()) {
        *o = f;
    }
    out
}

fn round_code<T: Element>(v: T, what: &str) -> Result<u8> {
    let r = v.as_f64().round();
    if (0.0..=255.0).contains(&r) {
        Ok(r as u8)
    } else {
        Err(invalid(format!("{what} code value {} out of range", v.as_f64())))
    }
}

impl<T: Element> Translator<T> for OracleTranslator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn image_size(&self) -> usize {
        self.oracle.size
    }

    fn style_dim(&self) -> usize {
        ORACLE_STYLE_DIM
    }

    fn encode_content(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var> {
        let specs = self.invert_batch(g.value(x), domain)?;
        let n = specs.len();
        let data = specs
            .iter()
            .flat_map(|(scene, _)| scene_code(scene).map(|v| T::lit(v as f64)))
            .collect();
        Ok(g.constant(Tensor::new([n, ORACLE_CONTENT_DIM, 1, 1], data)?))
    }

    fn encode_style(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var> {
        let specs = self.invert_batch(g.value(x), domain)?;
        let n = specs.len();
        let data = specs
            .iter()
            .flat_map(|(_, style)| style_code(style).map(|v| T::lit(v as f64)))
            .collect();
        Ok(g.constant(Tensor::new([n, ORACLE_STYLE_DIM], data)?))
    }

    fn decode(&self, g: &mut Graph<T>, domain: Domain, c: Var, s: Var) -> Result<Var> {
        let (cv, sv) = (g.value(c), g.value(s));
        let n = cv.shape()[0];
        if cv.numel() != n * ORACLE_CONTENT_DIM || sv.shape() != [n, ORACLE_STYLE_DIM] {
            return Err(invalid(format!(
                "oracle codes must be [N, {ORACLE_CONTENT_DIM}, 1, 1] and [N, {ORACLE_STYLE_DIM}], got {:?} and {:?}",
                cv.shape(),
                sv.shape()
            )));
        }
        let n_fields = StyleSpec::all(domain)[0].fields().len();
        let mut images = Vec::with_capacity(n);
        for i in 0..n {
            let cc: Vec<u8> = cv.data()[i * ORACLE_CONTENT_DIM..(i + 1) * ORACLE_CONTENT_DIM]
                .iter()
                .map(|&v| round_code(v, "content"))
                .collect::<Result<_>>()?;
            let scene = SceneSpec::new(Shape::from_index(cc[0] as usize)?, cc[1], cc[2], cc[3], cc[4])?;
            let sc: Vec<u8> = sv.data()[i * ORACLE_STYLE_DIM..i * ORACLE_STYLE_DIM + n_fields]
                .iter()
                .map(|&v| round_code(v, "style"))
                .collect::<Result<_>>()?;
            let style = StyleSpec::from_fields(domain, &sc)?;
            let img = paint(&mask(&scene, self.oracle.size), self.oracle.size, &style);
            images.push(rgb_to_tensor::<T>(&img));
        }
        Ok(g.constant(Tensor::stack_batch(&images)?))
    }

    /// Uniform over the domain's style grid.
    fn sample_style(&self, domain: Domain, n: usize, rng: &mut Rng) -> Tensor<T> {
        let all = StyleSpec::all(domain);
        let data = (0..n)
            .flat_map(|_| style_code(&all[rng.below(all.len())]).map(|v| T::lit(v as f64)))
            .collect();
        Tensor::new([n, ORACLE_STYLE_DIM], data).expect("sized to shape")
    }
}
