//! Two synthetic image domains rendered from shared scenes with
//! domain-specific styles, and their exact inverse.
//!
//! Domain 1 draws glyph outlines in gray on black; domain 2 fills the same
//! glyph masks with color on a tinted background. All parameters come from
//! small finite grids, so the renderer can be inverted exactly and every
//! property can be checked by enumeration.

mod dataset;
mod io;
mod oracle;
mod render;
mod scene;

pub use dataset::{
    domain_dir, generate_dataset, read_labels, read_manifest, sample_scene, sample_style, write_labels,
    DatasetConfig, DatasetManifest, Labeled, LabeledSet, Split, DATASET_FORMAT, LABELS_FILE, MANIFEST_FILE,
};
pub use io::{
    load_domain_images, load_image, load_rgb, png_files, quantize, rgb_to_tensor, save_image, save_rgb,
    tensor_to_rgb,
};
pub use oracle::{scene_code, style_code, Oracle, OracleTranslator, ORACLE_CONTENT_DIM, ORACLE_STYLE_DIM};
pub use render::{dilate, erode1, fill_color, gray_value, mask, paint, render, stroke, Mask};
pub use scene::{
    ModeLabel, SceneSpec, Shape, Style1, Style2, StyleSpec, FILL_VALUE, GRAY_LEVELS, GRID, HUES, MODES, RADII,
    ROTATIONS_DEG, SATURATIONS, THICKNESSES, TINTS,
};
