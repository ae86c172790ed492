//! Supervision targets: density and localization maps at every pyramid
//! level, plus frame-pair augmentation and the annotation file formats.

mod annotation;
mod augment;
mod image;
mod maps;

pub(crate) use annotation::check_points_in;
pub use annotation::{
    heads_by_frame, pixel_of, read_annotations, trajectories, write_annotations, Altitude,
    Attributes, DensityLevel, HeadAnnotation, Illumination, SequenceMeta,
};
pub use augment::{augment, AugmentConfig, FramePair};
pub use image::Image;
pub use maps::{
    density_map, localization_map, multiscale_targets, DensityMap, KernelConfig, LocalizationMap,
    ScalarMap, ScaleTargets,
};
