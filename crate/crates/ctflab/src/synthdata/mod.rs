//! Deterministic synthetic detection data: generation, augmentation, and
//! on-disk interchange.

pub mod augment;
pub mod generate;
pub mod io;
pub mod types;

pub use augment::{
    augment, augment_with_draws, draw_geometric, draw_photometric, flip_horizontal,
    transform_box, transform_image, AugmentationSpec, BlurSpec, ColorJitterSpec, CutoutSpec,
    GeomDraw, PhotoDraw,
};
pub use generate::{
    box_contains_signature, class_signature_matches, generate_clean_sample, generate_dataset,
    DatasetConfig, SplitSet, CLASS_NAMES,
};
pub use io::{export_dataset, import_dataset};
pub use types::{AccessGuard, Annotation, BBox, Role, Sample};
