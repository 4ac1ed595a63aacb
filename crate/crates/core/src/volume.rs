//! Dense 3D volumes with physical voxel spacing.
//!
//! All volumes use (z, y, x) axis order with x varying fastest, so the flat
//! offset of voxel `(z, y, x)` is `z * ny * nx + y * nx + x`. Volumes are
//! immutable once built; every transform in the crate returns a new volume.

use std::fmt;

use crate::error::{Error, Result};

/// Grid extent as `(nz, ny, nx)`.
pub type Shape = [usize; 3];

/// Number of voxels in a grid.
pub fn voxel_count(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

/// Voxel spacing in millimetres as `(sz, sy, sx)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing([f64; 3]);

impl Spacing {
    pub fn new(spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(Spacing(spacing))
        } else {
            Err(Error::InvalidSpacing(spacing))
        }
    }

    pub fn isotropic(mm: f64) -> Result<Self> {
        Self::new([mm; 3])
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    /// Physical volume of one voxel in millilitres.
    pub fn voxel_volume_ml(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2] / 1000.0
    }
}

impl std::ops::Index<usize> for Spacing {
    type Output = f64;

    fn index(&self, axis: usize) -> &f64 {
        &self.0[axis]
    }
}

/// Volume of a single voxel with the given spacing, in millilitres.
pub fn voxel_volume_ml(spacing: [f64; 3]) -> Result<f64> {
    Ok(Spacing::new(spacing)?.voxel_volume_ml())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    Intensity,
    Probability,
    Label,
}

impl VolumeKind {
    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::Intensity => "intensity",
            VolumeKind::Probability => "probability",
            VolumeKind::Label => "label",
        }
    }
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scanner orientation carried through from NIfTI headers.
///
/// Only the voxel spacing is interpreted by the pipeline; these fields are
/// kept so that a read/write cycle does not lose the affine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub qfac: f32,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation {
            qform_code: 0,
            sform_code: 0,
            qfac: 1.0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
        }
    }
}

impl Orientation {
    /// Rescales the sform columns after a change of voxel spacing. Voxel 0 keeps
    /// its physical position.
    pub(crate) fn rescaled(mut self, old: Spacing, new: Spacing) -> Self {
        // srow columns are (x, y, z); spacing is (z, y, x)
        for row in self.srow.iter_mut() {
            for col in 0..3 {
                row[col] = (row[col] as f64 * new[2 - col] / old[2 - col]) as f32;
            }
        }
        self
    }
}

/// Element types a volume can hold.
pub trait Voxel: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
}

impl Voxel for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Voxel for u8 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Dense 3D scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    shape: Shape,
    spacing: Spacing,
    kind: VolumeKind,
    orientation: Orientation,
    data: Vec<T>,
}

/// Intensity or probability volume.
pub type ScalarVolume = Volume<f32>;
/// Segmentation mask.
pub type LabelVolume = Volume<u8>;

fn check_layout(shape: Shape, len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidVolume(format!("shape {shape:?} has a zero extent")));
    }
    if voxel_count(shape) != len {
        return Err(Error::InvalidVolume(format!(
            "data length {len} does not match shape {shape:?} ({} voxels)",
            voxel_count(shape)
        )));
    }
    Ok(())
}

impl<T: Voxel> Volume<T> {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of `(z, y, x)`; does not bounds-check.
    #[inline]
    pub fn offset(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    /// Checked voxel lookup.
    pub fn index_at(&self, z: usize, y: usize, x: usize) -> Result<T> {
        let [nz, ny, nx] = self.shape;
        if z >= nz || y >= ny || x >= nx {
            return Err(Error::Index {
                z,
                y,
                x,
                shape: self.shape,
            });
        }
        Ok(self.data[self.offset(z, y, x)])
    }

    /// Unchecked-by-contract lookup; panics on out-of-range indices.
    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.offset(z, y, x)]
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Same kind and orientation on a new grid. Callers guarantee the value
    /// range of the kind is preserved.
    pub(crate) fn same_kind(&self, shape: Shape, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        check_layout(shape, data.len())?;
        Ok(Volume {
            shape,
            spacing,
            kind: self.kind,
            orientation: self.orientation,
            data,
        })
    }

    pub(crate) fn same_grid(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            kind: self.kind,
            orientation: self.orientation,
            data,
        }
    }

    pub fn same_geometry<U: Voxel>(&self, other: &Volume<U>) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }
}

impl Volume<f32> {
    pub fn intensity(shape: Shape, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_layout(shape, data.len())?;
        Ok(Volume {
            shape,
            spacing,
            kind: VolumeKind::Intensity,
            orientation: Orientation::default(),
            data,
        })
    }

    pub fn probability(shape: Shape, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_layout(shape, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidVolume(format!(
                "probability volume holds {bad}, outside [0, 1]"
            )));
        }
        Ok(Volume {
            shape,
            spacing,
            kind: VolumeKind::Probability,
            orientation: Orientation::default(),
            data,
        })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: f32) -> Result<Self> {
        Self::intensity(shape, spacing, vec![value; voxel_count(shape)])
    }

    /// Minimum and maximum value, ignoring NaNs.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub(crate) fn require_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidKind {
                expected: kind.name(),
                found: self.kind.name(),
            })
        }
    }
}

impl Volume<u8> {
    pub fn label(shape: Shape, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        check_layout(shape, data.len())?;
        Ok(Volume {
            shape,
            spacing,
            kind: VolumeKind::Label,
            orientation: Orientation::default(),
            data,
        })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Either element type, as produced by format readers.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl AnyVolume {
    pub fn shape(&self) -> Shape {
        match self {
            AnyVolume::Scalar(v) => v.shape(),
            AnyVolume::Label(v) => v.shape(),
        }
    }

    pub fn spacing(&self) -> Spacing {
        match self {
            AnyVolume::Scalar(v) => v.spacing(),
            AnyVolume::Label(v) => v.spacing(),
        }
    }

    pub fn kind(&self) -> VolumeKind {
        match self {
            AnyVolume::Scalar(v) => v.kind(),
            AnyVolume::Label(v) => v.kind(),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            AnyVolume::Label(v) => {
                let data = v.data().iter().map(|&b| b as f32).collect();
                Ok(ScalarVolume::intensity(v.shape(), v.spacing(), data)?
                    .with_orientation(*v.orientation()))
            }
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            AnyVolume::Scalar(v) => Err(Error::InvalidKind {
                expected: VolumeKind::Label.name(),
                found: v.kind().name(),
            }),
        }
    }
}

impl From<ScalarVolume> for AnyVolume {
    fn from(v: ScalarVolume) -> Self {
        AnyVolume::Scalar(v)
    }
}

impl From<LabelVolume> for AnyVolume {
    fn from(v: LabelVolume) -> Self {
        AnyVolume::Label(v)
    }
}

/// Channel-stacked network input (for example CT and PET).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelVolume {
    channels: Vec<ScalarVolume>,
    names: Vec<String>,
}

impl MultiChannelVolume {
    pub fn new(channels: Vec<ScalarVolume>, names: Vec<String>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidVolume("multi-channel volume needs at least one channel".into()))?;
        if names.len() != channels.len() {
            return Err(Error::InvalidVolume(format!(
                "{} channel names for {} channels",
                names.len(),
                channels.len()
            )));
        }
        for ch in &channels[1..] {
            if ch.shape() != first.shape() {
                return Err(Error::shape_mismatch("channel shape", first.shape(), ch.shape()));
            }
            if ch.spacing() != first.spacing() {
                return Err(Error::Alignment {
                    what: "channel spacing",
                    left: first.spacing().as_array().to_vec(),
                    right: ch.spacing().as_array().to_vec(),
                });
            }
        }
        Ok(MultiChannelVolume { channels, names })
    }

    pub fn shape(&self) -> Shape {
        self.channels[0].shape()
    }

    pub fn spacing(&self) -> Spacing {
        self.channels[0].spacing()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ScalarVolume] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &ScalarVolume {
        &self.channels[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}
