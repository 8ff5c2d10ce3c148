//! Dataset manifests, patient-level splits, resizing, clip-coherent
//! augmentation, and image file IO.

mod augment;
mod io;
mod manifest;
mod sample;
mod split;

pub use augment::{augment_clip, apply_augment, AugmentParams, AugmentRanges};
pub use io::{read_frame, read_mask, write_frame_u16, write_mask, write_rgb};
pub use manifest::{
    load_manifest, save_manifest, DatasetManifest, FrameRecord, ManifestEntry, PixelSpacing,
    MANIFEST_VERSION,
};
pub use sample::{load_clip, load_samples, resize_sample, Sample};
pub use split::{make_splits, SplitRatios};
