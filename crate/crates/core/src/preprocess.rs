//! Spacing-aware resampling and assembly of the two-channel PET/CT input.
//!
//! Grids are corner aligned: output voxel `i` samples the input at
//! coordinate `i * new_spacing / old_spacing` along each axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_count, MultiChannelVolume, ScalarVolume, Shape, Spacing, Volume, VolumeKind, Voxel};

/// Target spacing of the autoPET preprocessed release, (z, y, x) in mm.
pub const AUTOPET_SPACING: [f64; 3] = [1.5, 1.01821005, 1.01821005];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleSpec {
    pub target_spacing: Spacing,
    pub interpolation: Interpolation,
}

impl ResampleSpec {
    pub fn new(target_spacing: [f64; 3], interpolation: Interpolation) -> Result<Self> {
        Ok(ResampleSpec {
            target_spacing: Spacing::new(target_spacing)?,
            interpolation,
        })
    }
}

/// Element types that can be resampled.
pub trait Resample: Voxel {
    fn lerp_supported() -> bool;
    fn from_f64(v: f64) -> Self;
}

impl Resample for f32 {
    fn lerp_supported() -> bool {
        true
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Resample for u8 {
    fn lerp_supported() -> bool {
        false
    }

    fn from_f64(_: f64) -> Self {
        unreachable!("labels are only resampled with nearest interpolation")
    }
}

/// Output extent along one axis: `round(n * old / new)`, at least 1.
pub fn resampled_extent(n: usize, old: f64, new: f64) -> usize {
    ((n as f64 * old / new).round() as usize).max(1)
}

/// Per-axis lookup: lower index, upper index, weight of the upper index.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(out_n: usize, in_n: usize, ratio: f64, interp: Interpolation) -> Vec<Tap> {
    let last = in_n - 1;
    (0..out_n)
        .map(|i| {
            let c = i as f64 * ratio;
            match interp {
                Interpolation::Nearest => {
                    // ties round toward the lower index
                    let idx = ((c - 0.5).ceil().max(0.0) as usize).min(last);
                    Tap { lo: idx, hi: idx, frac: 0.0 }
                }
                Interpolation::Trilinear => {
                    let f = c.floor();
                    let lo = f as usize;
                    if lo >= last {
                        Tap { lo: last, hi: last, frac: 0.0 }
                    } else {
                        Tap { lo, hi: lo + 1, frac: c - f }
                    }
                }
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// Samples `volume` onto an explicit output grid. Output voxel `i` reads the
/// input at `i * out_spacing / in_spacing` per axis, clamped to the edge.
pub fn resample_to_grid<T: Resample>(
    volume: &Volume<T>,
    out_shape: Shape,
    out_spacing: Spacing,
    interpolation: Interpolation,
) -> Result<Volume<T>> {
    if interpolation == Interpolation::Trilinear && (!T::lerp_supported() || volume.kind() == VolumeKind::Label) {
        return Err(Error::InvalidInterpolation(
            "label volumes must be resampled with nearest interpolation".into(),
        ));
    }
    let in_shape = volume.shape();
    let in_spacing = volume.spacing();
    if out_shape == in_shape && out_spacing == in_spacing {
        return Ok(volume.clone());
    }
    if out_shape.contains(&0) {
        return Err(Error::Shape(format!("output shape {out_shape:?} has a zero extent")));
    }

    let taps: Vec<Vec<Tap>> = (0..3)
        .map(|a| axis_taps(out_shape[a], in_shape[a], out_spacing[a] / in_spacing[a], interpolation))
        .collect();
    let (tz, ty, tx) = (&taps[0], &taps[1], &taps[2]);
    let src = volume.data();
    let [_, in_ny, in_nx] = in_shape;
    let at = |z: usize, y: usize, x: usize| src[(z * in_ny + y) * in_nx + x];
    let plane = out_shape[1] * out_shape[2];

    let mut out = vec![src[0]; voxel_count(out_shape)];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        let cz = tz[z];
        for (y, row) in slab.chunks_mut(out_shape[2]).enumerate() {
            let cy = ty[y];
            for (x, dst) in row.iter_mut().enumerate() {
                let cx = tx[x];
                *dst = match interpolation {
                    Interpolation::Nearest => at(cz.lo, cy.lo, cx.lo),
                    Interpolation::Trilinear => {
                        let line = |z: usize, y: usize| lerp(at(z, y, cx.lo).to_f64(), at(z, y, cx.hi).to_f64(), cx.frac);
                        let face = |z: usize| lerp(line(z, cy.lo), line(z, cy.hi), cy.frac);
                        T::from_f64(lerp(face(cz.lo), face(cz.hi), cz.frac))
                    }
                };
            }
        }
    });

    let resampled = volume.same_kind(out_shape, out_spacing, out)?;
    let orientation = resampled.orientation().rescaled(in_spacing, out_spacing);
    Ok(resampled.with_orientation(orientation))
}

/// Resamples to the target spacing; output extent per axis is
/// `round(n * old_spacing / new_spacing)`.
pub fn resample<T: Resample>(volume: &Volume<T>, spec: &ResampleSpec) -> Result<Volume<T>> {
    let shape = volume.shape();
    let old = volume.spacing();
    let new = spec.target_spacing;
    let out_shape = [0, 1, 2].map(|a| resampled_extent(shape[a], old[a], new[a]));
    resample_to_grid(volume, out_shape, new, spec.interpolation)
}

/// Intensity normalization for one input channel: optional clipping, then
/// `(v - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNorm {
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_hi: Option<f64>,
}

impl Default for ChannelNorm {
    fn default() -> Self {
        ChannelNorm {
            mean: 0.0,
            std: 1.0,
            clip_lo: None,
            clip_hi: None,
        }
    }
}

impl ChannelNorm {
    pub fn validate(&self) -> Result<()> {
        if !(self.std.is_finite() && self.std > 0.0) || !self.mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normalization needs finite mean and std > 0, got mean {} std {}",
                self.mean, self.std
            )));
        }
        if let (Some(lo), Some(hi)) = (self.clip_lo, self.clip_hi) {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidParameter(format!("clip range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, v: f32) -> f32 {
        let mut v = v as f64;
        if let Some(lo) = self.clip_lo {
            v = v.max(lo);
        }
        if let Some(hi) = self.clip_hi {
            v = v.min(hi);
        }
        ((v - self.mean) / self.std) as f32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    #[serde(default)]
    pub ct: ChannelNorm,
    #[serde(default)]
    pub pet: ChannelNorm,
}

fn normalize(volume: &ScalarVolume, norm: &ChannelNorm) -> ScalarVolume {
    let data = volume.data().par_iter().map(|&v| norm.apply(v)).collect();
    ScalarVolume::intensity(volume.shape(), volume.spacing(), data)
        .expect("same layout")
        .with_orientation(*volume.orientation())
}

/// Normalizes CT and PET and stacks them as channels `[CT, PET]`.
pub fn assemble_input(ct: &ScalarVolume, pet: &ScalarVolume, norm: &NormStats) -> Result<MultiChannelVolume> {
    if ct.shape() != pet.shape() {
        return Err(Error::shape_mismatch("CT vs PET shape", ct.shape(), pet.shape()));
    }
    if ct.spacing() != pet.spacing() {
        return Err(Error::Alignment {
            what: "CT vs PET spacing",
            left: ct.spacing().as_array().to_vec(),
            right: pet.spacing().as_array().to_vec(),
        });
    }
    norm.ct.validate()?;
    norm.pet.validate()?;
    MultiChannelVolume::new(
        vec![normalize(ct, &norm.ct), normalize(pet, &norm.pet)],
        vec!["CT".to_string(), "PET".to_string()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;
    use proptest::prelude::*;

    fn sp(s: f64) -> Spacing {
        Spacing::isotropic(s).unwrap()
    }

    #[test]
    fn same_spacing_is_identity() {
        let v = ScalarVolume::intensity([2, 3, 4], sp(1.5), (0..24).map(|i| i as f32 * 0.37 - 3.0).collect()).unwrap();
        let spec = ResampleSpec::new([1.5; 3], Interpolation::Trilinear).unwrap();
        assert_eq!(resample(&v, &spec).unwrap(), v);
    }

    #[test]
    fn trilinear_line_downsample() {
        let v = ScalarVolume::intensity([1, 1, 4], sp(1.0), vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let spec = ResampleSpec::new([1.0, 1.0, 2.0], Interpolation::Trilinear).unwrap();
        let out = resample(&v, &spec).unwrap();
        assert_eq!(out.shape(), [1, 1, 2]);
        assert_eq!(out.data(), &[0.0, 4.0]);
        assert_eq!(out.spacing().as_array(), [1.0, 1.0, 2.0]);
    }

    #[test]
    fn trilinear_upsample_interpolates_and_clamps() {
        let v = ScalarVolume::intensity([1, 1, 2], sp(1.0), vec![0.0, 2.0]).unwrap();
        let spec = ResampleSpec::new([1.0, 1.0, 0.5], Interpolation::Trilinear).unwrap();
        let out = resample(&v, &spec).unwrap();
        // sample points 0, 0.5, 1.0, 1.5 (clamped to 1)
        assert_eq!(out.data(), &[0.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn nearest_on_labels() {
        let v = LabelVolume::label([1, 1, 4], sp(1.0), vec![0, 1, 1, 0]).unwrap();
        let spec = ResampleSpec::new([1.0, 1.0, 2.0], Interpolation::Nearest).unwrap();
        assert_eq!(resample(&v, &spec).unwrap().data(), &[0, 1]);
        // 1.5 is a tie between 1 and 2: lower index wins
        let v = LabelVolume::label([1, 1, 3], sp(1.0), vec![0, 1, 0]).unwrap();
        let out = resample_to_grid(&v, [1, 1, 2], Spacing::new([1.0, 1.0, 1.5]).unwrap(), Interpolation::Nearest).unwrap();
        assert_eq!(out.data(), &[0, 1]);
    }

    #[test]
    fn trilinear_on_labels_rejected() {
        let v = LabelVolume::label([1, 1, 4], sp(1.0), vec![0, 1, 1, 0]).unwrap();
        let spec = ResampleSpec::new([2.0; 3], Interpolation::Trilinear).unwrap();
        assert!(matches!(resample(&v, &spec), Err(Error::InvalidInterpolation(_))));
    }

    #[test]
    fn extent_never_zero() {
        let v = ScalarVolume::filled([1, 1, 1], sp(1.0), 3.0).unwrap();
        let spec = ResampleSpec::new([10.0; 3], Interpolation::Trilinear).unwrap();
        assert_eq!(resample(&v, &spec).unwrap().shape(), [1, 1, 1]);
    }

    #[test]
    fn autopet_target_shape() {
        let v = ScalarVolume::filled([10, 20, 20], Spacing::new([3.0, 2.0, 2.0]).unwrap(), 1.0).unwrap();
        let spec = ResampleSpec::new(AUTOPET_SPACING, Interpolation::Trilinear).unwrap();
        // 10*3/1.5 = 20, 20*2/1.01821005 = 39.28 -> 39
        assert_eq!(resample(&v, &spec).unwrap().shape(), [20, 39, 39]);
    }

    #[test]
    fn identity_normalization_passes_through() {
        let ct = ScalarVolume::intensity([1, 1, 3], sp(1.0), vec![-1000.0, 0.0, 3000.0]).unwrap();
        let pet = ScalarVolume::intensity([1, 1, 3], sp(1.0), vec![0.0, 2.5, 10.0]).unwrap();
        let m = assemble_input(&ct, &pet, &NormStats::default()).unwrap();
        assert_eq!(m.channel(0).data(), ct.data());
        assert_eq!(m.channel(1).data(), pet.data());
        assert_eq!(m.names(), &["CT".to_string(), "PET".to_string()]);
    }

    #[test]
    fn ct_clipped_before_zscore() {
        let ct = ScalarVolume::intensity([1, 1, 2], sp(1.0), vec![3000.0, -50.0]).unwrap();
        let pet = ScalarVolume::intensity([1, 1, 2], sp(1.0), vec![0.0, 0.0]).unwrap();
        let norm = NormStats {
            ct: ChannelNorm {
                clip_hi: Some(1000.0),
                ..ChannelNorm::default()
            },
            pet: ChannelNorm::default(),
        };
        assert_eq!(assemble_input(&ct, &pet, &norm).unwrap().channel(0).data(), &[1000.0, -50.0]);

        let norm = NormStats {
            ct: ChannelNorm { mean: 100.0, std: 50.0, clip_lo: Some(-200.0), clip_hi: Some(400.0) },
            pet: ChannelNorm::default(),
        };
        assert_eq!(assemble_input(&ct, &pet, &norm).unwrap().channel(0).data(), &[6.0, -3.0]);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let ct = ScalarVolume::filled([2, 2, 2], sp(1.0), 0.0).unwrap();
        let pet = ScalarVolume::filled([2, 2, 3], sp(1.0), 0.0).unwrap();
        let err = assemble_input(&ct, &pet, &NormStats::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Alignment { .. }));
        assert!(msg.contains("[2.0, 2.0, 2.0]") && msg.contains("[2.0, 2.0, 3.0]"), "{msg}");
    }

    #[test]
    fn zero_std_rejected() {
        let v = ScalarVolume::filled([1, 1, 1], sp(1.0), 0.0).unwrap();
        let norm = NormStats {
            ct: ChannelNorm { std: 0.0, ..ChannelNorm::default() },
            pet: ChannelNorm::default(),
        };
        assert!(assemble_input(&v, &v, &norm).is_err());
    }

    fn volume_strategy() -> impl Strategy<Value = ScalarVolume> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(z, y, x)| {
            prop::collection::vec(-1000.0f32..1000.0, z * y * x)
                .prop_map(move |d| ScalarVolume::intensity([z, y, x], sp(1.0), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn trilinear_stays_within_input_range(v in volume_strategy(), s in prop::array::uniform3(0.3f64..2.5)) {
            let (lo, hi) = v.min_max();
            let out = resample(&v, &ResampleSpec::new(s, Interpolation::Trilinear).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|&x| x >= lo && x <= hi));
        }

        #[test]
        fn constant_survives_down_then_up(c in -500.0f32..500.0, shape in prop::array::uniform3(1usize..9), f in 1.1f64..3.0) {
            let v = ScalarVolume::filled(shape, sp(1.0), c).unwrap();
            let down = resample(&v, &ResampleSpec::new([f; 3], Interpolation::Trilinear).unwrap()).unwrap();
            let up = resample(&down, &ResampleSpec::new([1.0; 3], Interpolation::Trilinear).unwrap()).unwrap();
            prop_assert!(up.data().iter().all(|&x| x == c));
        }

        #[test]
        fn nearest_preserves_label_set(shape in prop::array::uniform3(1usize..6), s in prop::array::uniform3(0.4f64..2.0), seed in any::<u64>()) {
            let n = voxel_count(shape);
            let data: Vec<u8> = (0..n as u64).map(|i| ((i.wrapping_mul(seed | 1) >> 7) % 3) as u8).collect();
            let v = LabelVolume::label(shape, sp(1.0), data.clone()).unwrap();
            let out = resample(&v, &ResampleSpec::new(s, Interpolation::Nearest).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|b| data.contains(b)));
        }
    }
}
