//! Dataset construction: procedural backgrounds, glyph rendering,
//! opaque composition, and on-disk manifests.

mod background;
mod dataset;
pub mod render;

pub use background::{make_background, BG_MAX};
pub use dataset::{
    build_dataset, build_pretrain_set, load_manifest, load_record, BuildReport, DatasetConfig,
    DatasetManifest, ManifestRecord, SampleRecord,
};
pub use render::{compose, render_text_image, RenderSpec};
