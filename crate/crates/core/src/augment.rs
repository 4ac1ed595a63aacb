//! Seedable intensity and spatial augmentations.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. A plan is sampled by drawing, in order: the brightness
//! multiplier, the noise seed, the gamma coin, the gamma exponent, three flip
//! coins (z, y, x) and three rotation angles (z, y, x). Every draw is made even
//! when its transform ends up disabled so the stream layout never shifts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{Interpolation, Resample};
use crate::volume::{LabelVolume, MultiChannelVolume, ScalarVolume, Volume, VolumeKind};

pub type AugmentRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> AugmentRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub brightness_mult_range: (f64, f64),
    pub brightness_sigma: f64,
    pub gamma_range: (f64, f64),
    pub gamma_prob: f64,
    pub flip_prob_per_axis: f64,
    pub rotation_range_deg: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            brightness_mult_range: (0.75, 1.25),
            brightness_sigma: 0.10,
            gamma_range: (0.70, 1.50),
            gamma_prob: 0.30,
            flip_prob_per_axis: 0.5,
            rotation_range_deg: (-15.0, 15.0),
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} ({lo}, {hi}) is not an ordered finite range")))
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")))
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        check_range("brightness_mult_range", self.brightness_mult_range)?;
        check_range("gamma_range", self.gamma_range)?;
        check_range("rotation_range_deg", self.rotation_range_deg)?;
        check_prob("gamma_prob", self.gamma_prob)?;
        check_prob("flip_prob_per_axis", self.flip_prob_per_axis)?;
        if !(self.brightness_sigma.is_finite() && self.brightness_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "brightness_sigma = {} must be >= 0",
                self.brightness_sigma
            )));
        }
        if self.gamma_range.0 <= 0.0 {
            return Err(Error::InvalidParameter("gamma_range must be strictly positive".into()));
        }
        Ok(())
    }
}

/// One realized draw of every augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub m: f64,
    pub sigma: f64,
    pub additive_noise_seed: u64,
    pub apply_gamma: bool,
    pub gamma: f64,
    /// (z, y, x)
    pub flips: [bool; 3],
    /// (z, y, x)
    pub angles_deg: [f64; 3],
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn sample_plan(params: &AugmentParams, rng: &mut AugmentRng) -> Result<AugmentationPlan> {
    params.validate()?;
    let m = uniform(rng, params.brightness_mult_range);
    let additive_noise_seed = rng.random::<u64>();
    let apply_gamma = rng.random::<f64>() < params.gamma_prob;
    let gamma = uniform(rng, params.gamma_range);
    let flips = [(); 3].map(|_| rng.random::<f64>() < params.flip_prob_per_axis);
    let angles_deg = [(); 3].map(|_| uniform(rng, params.rotation_range_deg));
    Ok(AugmentationPlan {
        m,
        sigma: params.brightness_sigma,
        additive_noise_seed,
        apply_gamma,
        gamma,
        flips,
        angles_deg,
    })
}

/// `x_out = m * x_in + n`, with `n ~ N(0, sigma)` drawn per voxel in
/// storage order from a ChaCha8 stream seeded with `noise_seed`.
pub fn brightness(volume: &ScalarVolume, m: f64, sigma: f64, noise_seed: u64) -> Result<ScalarVolume> {
    volume.require_kind(VolumeKind::Intensity)?;
    if !(sigma.is_finite() && sigma >= 0.0) || !m.is_finite() {
        return Err(Error::InvalidParameter(format!("brightness needs finite m and sigma >= 0, got m {m} sigma {sigma}")));
    }
    let data = if sigma == 0.0 {
        volume.data().iter().map(|&x| (m * x as f64) as f32).collect()
    } else {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        let mut rng = rng_from_seed(noise_seed);
        volume
            .data()
            .iter()
            .map(|&x| (m * x as f64 + normal.sample(&mut rng)) as f32)
            .collect()
    };
    Ok(volume.same_grid(data))
}

/// Min-max normalizes to [0, 1], applies `u^(1/gamma)`, and maps back to the
/// original range. Extremes are kept exactly; constant volumes pass through.
pub fn gamma(volume: &ScalarVolume, gamma: f64) -> Result<ScalarVolume> {
    volume.require_kind(VolumeKind::Intensity)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must be > 0")));
    }
    let (lo, hi) = volume.min_max();
    if hi <= lo {
        return Ok(volume.clone());
    }
    let (lo64, range) = (lo as f64, hi as f64 - lo as f64);
    let inv = 1.0 / gamma;
    let data = volume
        .data()
        .par_iter()
        .map(|&x| {
            if x <= lo {
                lo
            } else if x >= hi {
                hi
            } else {
                let u = (x as f64 - lo64) / range;
                ((lo64 + u.powf(inv) * range) as f32).clamp(lo, hi)
            }
        })
        .collect();
    Ok(volume.same_grid(data))
}

/// Mirrors along every flagged axis, (z, y, x).
pub fn flip<T: Resample>(volume: &Volume<T>, axes: [bool; 3]) -> Volume<T> {
    if !axes.contains(&true) {
        return volume.clone();
    }
    let [nz, ny, nx] = volume.shape();
    let src = volume.data();
    let pick = |i: usize, n: usize, f: bool| if f { n - 1 - i } else { i };
    let mut out = Vec::with_capacity(src.len());
    for z in 0..nz {
        let sz = pick(z, nz, axes[0]);
        for y in 0..ny {
            let sy = pick(y, ny, axes[1]);
            let row = (sz * ny + sy) * nx;
            if axes[2] {
                out.extend(src[row..row + nx].iter().rev());
            } else {
                out.extend_from_slice(&src[row..row + nx]);
            }
        }
    }
    volume.same_grid(out)
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation acting on physical (x, y, z) vectors: first about z, then y,
/// then x.
fn rotation_matrix(angles_deg: [f64; 3]) -> Mat3 {
    let [az, ay, ax] = angles_deg.map(f64::to_radians);
    let (sz, cz) = az.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sx, cx) = ax.sin_cos();
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    matmul(&rx, &matmul(&ry, &rz))
}

/// Rotates about the volume centre in physical space and resamples onto the
/// original grid. Samples falling outside the volume take the nearest edge
/// value.
pub fn rotate<T: Resample>(volume: &Volume<T>, angles_deg: [f64; 3], interpolation: Interpolation) -> Result<Volume<T>> {
    if interpolation == Interpolation::Trilinear && (!T::lerp_supported() || volume.kind() == VolumeKind::Label) {
        return Err(Error::InvalidInterpolation("label volumes must be rotated with nearest interpolation".into()));
    }
    if angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidParameter(format!("rotation angles {angles_deg:?} must be finite")));
    }
    if angles_deg == [0.0; 3] {
        return Ok(volume.clone());
    }
    let shape = volume.shape();
    let [nz, ny, nx] = shape;
    let sp = volume.spacing();
    let center = shape.map(|n| (n as f64 - 1.0) / 2.0);
    let r = rotation_matrix(angles_deg);
    let src = volume.data();
    let at = |z: usize, y: usize, x: usize| src[(z * ny + y) * nx + x];

    let mut out = vec![src[0]; src.len()];
    out.par_chunks_mut(ny * nx).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                // physical offset from centre, (x, y, z) order
                let q = [
                    (x as f64 - center[2]) * sp[2],
                    (y as f64 - center[1]) * sp[1],
                    (z as f64 - center[0]) * sp[0],
                ];
                // inverse rotation is the transpose
                let p: [f64; 3] = [0, 1, 2].map(|i| r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2]);
                let coord = [
                    (p[2] / sp[0] + center[0]).clamp(0.0, (nz - 1) as f64),
                    (p[1] / sp[1] + center[1]).clamp(0.0, (ny - 1) as f64),
                    (p[0] / sp[2] + center[2]).clamp(0.0, (nx - 1) as f64),
                ];
                slab[y * nx + x] = match interpolation {
                    Interpolation::Nearest => {
                        let [iz, iy, ix] = coord.map(|c| (c - 0.5).ceil().max(0.0) as usize);
                        at(iz, iy, ix)
                    }
                    Interpolation::Trilinear => {
                        let lo = coord.map(|c| c.floor() as usize);
                        let hi = [0, 1, 2].map(|a| (lo[a] + 1).min(shape[a] - 1));
                        let t = [0, 1, 2].map(|a| coord[a] - lo[a] as f64);
                        let mut acc = 0.0;
                        for (dz, wz) in [(lo[0], 1.0 - t[0]), (hi[0], t[0])] {
                            for (dy, wy) in [(lo[1], 1.0 - t[1]), (hi[1], t[1])] {
                                for (dx, wx) in [(lo[2], 1.0 - t[2]), (hi[2], t[2])] {
                                    let w = wz * wy * wx;
                                    if w != 0.0 {
                                        acc += w * at(dz, dy, dx).to_f64();
                                    }
                                }
                            }
                        }
                        T::from_f64(acc)
                    }
                };
            }
        }
    });
    Ok(volume.same_grid(out))
}

/// Applies a plan to an intensity volume: rotation, flips, brightness, then
/// gamma when drawn.
pub fn apply_plan(volume: &ScalarVolume, plan: &AugmentationPlan) -> Result<ScalarVolume> {
    let v = rotate(volume, plan.angles_deg, Interpolation::Trilinear)?;
    let v = flip(&v, plan.flips);
    let v = brightness(&v, plan.m, plan.sigma, plan.additive_noise_seed)?;
    if plan.apply_gamma {
        gamma(&v, plan.gamma)
    } else {
        Ok(v)
    }
}

/// Applies only the spatial part of a plan to a mask.
pub fn apply_plan_label(mask: &LabelVolume, plan: &AugmentationPlan) -> Result<LabelVolume> {
    let v = rotate(mask, plan.angles_deg, Interpolation::Nearest)?;
    Ok(flip(&v, plan.flips))
}

/// Applies a plan to every channel with shared spatial parameters. Channel
/// `i` draws its noise from `additive_noise_seed + i`.
pub fn apply_plan_multi(input: &MultiChannelVolume, plan: &AugmentationPlan) -> Result<MultiChannelVolume> {
    let channels = input
        .channels()
        .iter()
        .enumerate()
        .map(|(i, ch)| {
            let per_channel = AugmentationPlan {
                additive_noise_seed: plan.additive_noise_seed.wrapping_add(i as u64),
                ..plan.clone()
            };
            apply_plan(ch, &per_channel)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiChannelVolume::new(channels, input.names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use proptest::prelude::*;

    fn sp() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    fn line(data: Vec<f32>) -> ScalarVolume {
        ScalarVolume::intensity([1, 1, data.len()], sp(), data).unwrap()
    }

    #[test]
    fn brightness_identity_and_scale() {
        let v = line(vec![1.0, -3.0, 0.5]);
        assert_eq!(brightness(&v, 1.0, 0.0, 7).unwrap(), v);
        assert_eq!(brightness(&line(vec![1.0, -3.0]), 2.0, 0.0, 7).unwrap().data(), &[2.0, -6.0]);
    }

    #[test]
    fn brightness_rejects_probabilities() {
        let mask = ScalarVolume::probability([1, 1, 1], sp(), vec![0.5]).unwrap();
        assert!(matches!(brightness(&mask, 1.0, 0.0, 0), Err(Error::InvalidKind { .. })));
    }

    #[test]
    fn brightness_noise_statistics() {
        let n = 100_000;
        let v = ScalarVolume::filled([10, 100, 100], sp(), 0.0).unwrap();
        let out = brightness(&v, 1.0, 0.1, 1234).unwrap();
        let d: Vec<f64> = out.data().iter().map(|&x| x as f64).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        // 5% of sigma
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((std - 0.1).abs() < 0.005, "std {std}");
        // deterministic for a fixed seed
        assert_eq!(brightness(&v, 1.0, 0.1, 1234).unwrap(), out);
    }

    #[test]
    fn gamma_examples() {
        let v = line(vec![0.0, 0.25, 1.0]);
        assert_eq!(gamma(&v, 1.0).unwrap(), v);
        let out = gamma(&v, 0.5).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 0.0625).abs() < 1e-7);
        assert_eq!(out.data()[2], 1.0);
        let flat = line(vec![4.0; 5]);
        assert_eq!(gamma(&flat, 0.7).unwrap(), flat);
        assert!(gamma(&v, 0.0).is_err());
        assert!(gamma(&v, -1.0).is_err());
    }

    #[test]
    fn gamma_on_negative_ct_range() {
        let v = line(vec![-1000.0, -500.0, 0.0, 1000.0]);
        let out = gamma(&v, 0.5).unwrap();
        // u = 0.25 -> 0.0625 -> -1000 + 0.0625 * 2000
        assert!((out.data()[1] - -875.0).abs() < 1e-3);
        assert_eq!(out.min_max(), (-1000.0, 1000.0));
    }

    #[test]
    fn flip_examples() {
        let v = line(vec![1.0, 2.0, 3.0]);
        assert_eq!(flip(&v, [false; 3]), v);
        assert_eq!(flip(&v, [false, false, true]).data(), &[3.0, 2.0, 1.0]);
        let cube = ScalarVolume::intensity([2, 2, 2], sp(), (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(flip(&cube, [true, false, false]).data(), &[4.0, 5.0, 6.0, 7.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(flip(&cube, [false, true, false]).data(), &[2.0, 3.0, 0.0, 1.0, 6.0, 7.0, 4.0, 5.0]);
    }

    /// Independent index-permutation oracle for a +90 degree turn about z on
    /// each (y, x) slice: `out[cy + (x - cx)][cx - (y - cy)] = in[y][x]`.
    fn rot90_oracle(v: &ScalarVolume) -> Vec<f32> {
        let [nz, n, _] = v.shape();
        let c = (n as isize - 1) / 2;
        let mut out = vec![f32::NAN; v.len()];
        for z in 0..nz {
            for y in 0..n as isize {
                for x in 0..n as isize {
                    let (oy, ox) = (c + (x - c), c - (y - c));
                    out[(z * n + oy as usize) * n + ox as usize] = v.get(z, y as usize, x as usize);
                }
            }
        }
        out
    }

    #[test]
    fn rotate_quarter_turn_matches_permutation() {
        for n in [3usize, 5] {
            let v = ScalarVolume::intensity([1, n, n], sp(), (0..n * n).map(|i| i as f32).collect()).unwrap();
            let expected = rot90_oracle(&v);
            for interp in [Interpolation::Nearest, Interpolation::Trilinear] {
                let out = rotate(&v, [90.0, 0.0, 0.0], interp).unwrap();
                for (a, b) in out.data().iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-5, "{interp:?}: {:?} vs {expected:?}", out.data());
                }
            }
        }
        let v = ScalarVolume::intensity([1, 3, 3], sp(), (0..9).map(|i| i as f32).collect()).unwrap();
        assert_eq!(rotate(&v, [0.0; 3], Interpolation::Trilinear).unwrap(), v);
    }

    #[test]
    fn rotate_label_requires_nearest() {
        let m = LabelVolume::label([1, 3, 3], sp(), vec![0, 1, 0, 1, 1, 0, 0, 0, 1]).unwrap();
        assert!(matches!(rotate(&m, [10.0, 0.0, 0.0], Interpolation::Trilinear), Err(Error::InvalidInterpolation(_))));
        let out = rotate(&m, [10.0, 5.0, -7.0], Interpolation::Nearest).unwrap();
        assert!(out.data().iter().all(|&b| b <= 1));
    }

    /// 15 then -15 degrees about z with trilinear interpolation on
    /// f = 0.5 sin(0.35 x) + 0.5 cos(0.25 y) + 0.05 z. Linear interpolation
    /// along an axis errs by at most h^2 / 8 * max|f''|, summed over axes.
    /// First pass: (0.5 * 0.35^2 + 0.5 * 0.25^2) / 8. The second pass is a
    /// convex combination of first-pass values (same error) plus trilinear
    /// interpolation of the rotated field, whose directional curvature is at
    /// most 0.5 * 0.35^2 along each in-plane axis.
    #[test]
    fn rotate_round_trip_deviation_bounded() {
        let n = 24;
        let data: Vec<f32> = (0..n * n * 4)
            .map(|i| {
                let (z, y, x) = (i / (n * n), (i / n) % n, i % n);
                ((x as f32 * 0.35).sin() + (y as f32 * 0.25).cos() + 0.1 * z as f32) * 0.5
            })
            .collect();
        let v = ScalarVolume::intensity([4, n, n], sp(), data).unwrap();
        let there = rotate(&v, [15.0, 0.0, 0.0], Interpolation::Trilinear).unwrap();
        let back = rotate(&there, [-15.0, 0.0, 0.0], Interpolation::Trilinear).unwrap();
        let (cx, cy) = (0.5 * 0.35f64.powi(2), 0.5 * 0.25f64.powi(2));
        let bound = (cx + cy) / 8.0 + 2.0 * cx / 8.0;
        // interior points stay inside the grid under a 15 degree turn
        let margin = 4;
        let mut worst = 0f64;
        for z in 0..4 {
            for y in margin..n - margin {
                for x in margin..n - margin {
                    worst = worst.max((back.get(z, y, x) - v.get(z, y, x)).abs() as f64);
                }
            }
        }
        assert!(worst <= bound + 1e-5, "deviation {worst} exceeds {bound}");
    }

    #[test]
    fn plans_are_deterministic() {
        let p = AugmentParams::default();
        let a = sample_plan(&p, &mut rng_from_seed(99)).unwrap();
        let b = sample_plan(&p, &mut rng_from_seed(99)).unwrap();
        assert_eq!(a, b);
        let c = sample_plan(&p, &mut rng_from_seed(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn plan_statistics() {
        let p = AugmentParams::default();
        let mut rng = rng_from_seed(2022);
        let n = 100_000;
        let (mut m_sum, mut gamma_hits, mut flips) = (0.0, 0usize, [0usize; 3]);
        for _ in 0..n {
            let plan = sample_plan(&p, &mut rng).unwrap();
            assert!((0.75..=1.25).contains(&plan.m));
            assert!((0.70..=1.50).contains(&plan.gamma));
            assert!(plan.angles_deg.iter().all(|a| (-15.0..=15.0).contains(a)));
            m_sum += plan.m;
            gamma_hits += plan.apply_gamma as usize;
            for (f, hit) in flips.iter_mut().zip(plan.flips) {
                *f += hit as usize;
            }
        }
        assert!((m_sum / n as f64 - 1.0).abs() < 0.01);
        assert!((gamma_hits as f64 / n as f64 - 0.30).abs() < 0.01);
        for f in flips {
            assert!((f as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = AugmentParams { gamma_prob: 1.5, ..AugmentParams::default() };
        assert!(sample_plan(&p, &mut rng_from_seed(0)).is_err());
        p = AugmentParams { brightness_mult_range: (1.3, 1.2), ..AugmentParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn multi_channel_shares_spatial_params() {
        let base = ScalarVolume::intensity([3, 4, 5], sp(), (0..60).map(|i| i as f32).collect()).unwrap();
        let input = MultiChannelVolume::new(vec![base.clone(), base], vec!["CT".into(), "PET".into()]).unwrap();
        let plan = AugmentationPlan {
            m: 1.0,
            sigma: 0.0,
            additive_noise_seed: 0,
            apply_gamma: false,
            gamma: 1.0,
            flips: [true, false, true],
            angles_deg: [8.0, -3.0, 2.0],
        };
        let out = apply_plan_multi(&input, &plan).unwrap();
        assert_eq!(out.channel(0), out.channel(1));
    }

    proptest! {
        #[test]
        fn brightness_inverse(m in 0.75f64..1.25, data in prop::collection::vec(-1000.0f32..1000.0, 1..64)) {
            let v = line(data);
            let back = brightness(&brightness(&v, m, 0.0, 0).unwrap(), 1.0 / m, 0.0, 0).unwrap();
            for (a, b) in back.data().iter().zip(v.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
            }
        }

        #[test]
        fn gamma_keeps_extremes(g in 0.7f64..1.5, data in prop::collection::vec(-1000.0f32..1000.0, 2..64)) {
            let v = line(data);
            let (lo, hi) = v.min_max();
            let out = gamma(&v, g).unwrap();
            if hi > lo {
                prop_assert_eq!(out.min_max(), (lo, hi));
            }
            prop_assert!(out.data().iter().all(|&x| x >= lo && x <= hi));
        }

        #[test]
        fn flip_is_involution_and_permutation(shape in prop::array::uniform3(1usize..6), axes in prop::array::uniform3(any::<bool>())) {
            let n = shape.iter().product::<usize>();
            let v = ScalarVolume::intensity(shape, sp(), (0..n).map(|i| i as f32).collect()).unwrap();
            let once = flip(&v, axes);
            let mut sorted = once.data().to_vec();
            sorted.sort_by(f32::total_cmp);
            prop_assert_eq!(&sorted[..], v.data());
            prop_assert_eq!(flip(&once, axes), v);
        }

        #[test]
        fn nearest_rotation_keeps_label_set(angles in prop::array::uniform3(-15.0f64..15.0), seed in any::<u64>()) {
            let data: Vec<u8> = (0..125u64).map(|i| ((i.wrapping_mul(seed | 1) >> 5) % 3) as u8).collect();
            let m = LabelVolume::label([5, 5, 5], sp(), data.clone()).unwrap();
            let out = rotate(&m, angles, Interpolation::Nearest).unwrap();
            prop_assert!(out.data().iter().all(|b| data.contains(b)));
        }
    }
}
