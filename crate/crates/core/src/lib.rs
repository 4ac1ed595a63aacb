//! PET/CT lesion segmentation toolkit: volumes, NIfTI-1 I/O, resampling,
//! augmentation, a 3D U-Net forward pass, sliding-window ensemble inference
//! and challenge metrics.

pub mod augment;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nifti;
pub mod preprocess;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{
    voxel_count, voxel_volume_ml, AnyVolume, LabelVolume, MultiChannelVolume, Orientation, ScalarVolume, Shape, Spacing,
    Volume, VolumeKind,
};
