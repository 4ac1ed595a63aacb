//! Sliding-window inference with Gaussian importance weighting and fold
//! ensembling.
//!
//! The input is zero-padded to at least one patch per axis and tiled with
//! overlapping patches. Each tile's softmax output is multiplied by a
//! Gaussian centred on the patch and accumulated, together with the weights,
//! in tile-index order. Tiles may be evaluated in parallel or in any order;
//! results are buffered and reduced in index order so the output is
//! bit-identical regardless of scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unet::{self, FeatureMap, WeightStore};
use crate::volume::{voxel_count, LabelVolume, MultiChannelVolume, ScalarVolume, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub patch_shape: [usize; 3],
    pub step_fraction: f64,
    pub gaussian_sigma_scale: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            patch_shape: [192, 192, 192],
            step_fraction: 0.5,
            gaussian_sigma_scale: 1.0 / 8.0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, divisor: usize) -> Result<()> {
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step_fraction {} must lie in (0, 1]",
                self.step_fraction
            )));
        }
        if !(self.gaussian_sigma_scale.is_finite() && self.gaussian_sigma_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gaussian_sigma_scale {} must be > 0",
                self.gaussian_sigma_scale
            )));
        }
        if self.patch_shape.iter().any(|&p| p == 0 || p % divisor != 0) {
            return Err(Error::Shape(format!(
                "patch shape {:?} must be positive and divisible by {divisor} along every axis",
                self.patch_shape
            )));
        }
        Ok(())
    }
}

/// Patch origins along one axis.
///
/// With `d = axis - patch`, the tile count is `ceil(d / (patch * fraction)) + 1`
/// and origin `i` is `i * d / (n - 1)` rounded half up, so the last tile ends
/// flush with the axis. Repeated origins are dropped.
pub fn tile_positions(axis_size: usize, patch_size: usize, step_fraction: f64) -> Result<Vec<usize>> {
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("step_fraction {step_fraction} must lie in (0, 1]")));
    }
    if patch_size == 0 || axis_size < patch_size {
        return Err(Error::Precondition(format!(
            "axis of {axis_size} voxels is shorter than the patch ({patch_size}); pad first"
        )));
    }
    let d = axis_size - patch_size;
    if d == 0 {
        return Ok(vec![0]);
    }
    let target = patch_size as f64 * step_fraction;
    // the epsilon keeps exact quotients such as 192 / 96 from gaining a tile
    let steps = (d as f64 / target - 1e-9).ceil().max(1.0) as usize;
    let n = steps + 1;
    let den = 2 * (n - 1);
    let mut origins: Vec<usize> = (0..n).map(|i| (2 * i * d + (n - 1)) / den).collect();
    // strides under one voxel would repeat origins
    origins.dedup();
    Ok(origins)
}

/// Tile layout over a padded volume.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub shape: Shape,
    pub padded_shape: Shape,
    pub pad_lo: [usize; 3],
    pub pad_hi: [usize; 3],
    pub patch: Shape,
    pub axis_origins: [Vec<usize>; 3],
    /// Cartesian product of the axis origins, z slowest.
    pub tiles: Vec<[usize; 3]>,
}

impl TilePlan {
    pub fn new(shape: Shape, patch: Shape, step_fraction: f64) -> Result<Self> {
        let pad_total = [0, 1, 2].map(|a| patch[a].saturating_sub(shape[a]));
        let pad_lo = pad_total.map(|p| p / 2);
        let pad_hi = [0, 1, 2].map(|a| pad_total[a] - pad_lo[a]);
        let padded_shape = [0, 1, 2].map(|a| shape[a] + pad_total[a]);
        let [oz, oy, ox] = [
            tile_positions(padded_shape[0], patch[0], step_fraction)?,
            tile_positions(padded_shape[1], patch[1], step_fraction)?,
            tile_positions(padded_shape[2], patch[2], step_fraction)?,
        ];
        let mut tiles = Vec::with_capacity(oz.len() * oy.len() * ox.len());
        for &z in &oz {
            for &y in &oy {
                for &x in &ox {
                    tiles.push([z, y, x]);
                }
            }
        }
        Ok(TilePlan {
            shape,
            padded_shape,
            pad_lo,
            pad_hi,
            patch,
            axis_origins: [oz, oy, ox],
            tiles,
        })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Number of tiles needed to cover `shape`.
pub fn tile_count(shape: Shape, patch: Shape, step_fraction: f64) -> Result<usize> {
    Ok(TilePlan::new(shape, patch, step_fraction)?.len())
}

fn gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Separable Gaussian importance map over a patch, z-major.
///
/// Centred at `(n - 1) / 2` per axis with `sigma = sigma_scale * n`,
/// normalized to a maximum of 1, and floored at the smallest positive value
/// so no voxel carries zero weight.
pub fn gaussian_weight_map(patch: Shape, sigma_scale: f64) -> Result<Vec<f32>> {
    if !(sigma_scale.is_finite() && sigma_scale > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_scale {sigma_scale} must be > 0")));
    }
    let g: Vec<Vec<f64>> = (0..3).map(|a| gaussian_1d(patch[a], sigma_scale * patch[a] as f64)).collect();
    let peak: f64 = g.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).product();
    let mut map = Vec::with_capacity(voxel_count(patch));
    for &wz in &g[0] {
        for &wy in &g[1] {
            for &wx in &g[2] {
                map.push((wz * wy * wx / peak) as f32);
            }
        }
    }
    let floor = map.iter().copied().filter(|&v| v > 0.0).fold(f32::INFINITY, f32::min);
    if floor.is_finite() {
        map.iter_mut().filter(|v| **v <= 0.0).for_each(|v| *v = floor);
    }
    Ok(map)
}

/// Anything that maps a patch to per-class logits of the same spatial shape.
pub trait SegmentationModel: Sync {
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    /// Patch extents must be multiples of this.
    fn required_divisor(&self) -> usize {
        1
    }
    /// Identifies the architecture; every fold of an ensemble must agree.
    fn fingerprint(&self) -> String;
    fn predict_logits(&self, patch: &FeatureMap) -> Result<FeatureMap>;
}

impl SegmentationModel for WeightStore {
    fn in_channels(&self) -> usize {
        self.descriptor().in_channels
    }

    fn out_channels(&self) -> usize {
        self.descriptor().out_channels
    }

    fn required_divisor(&self) -> usize {
        self.descriptor().required_divisor()
    }

    fn fingerprint(&self) -> String {
        WeightStore::fingerprint(self).to_string()
    }

    fn predict_logits(&self, patch: &FeatureMap) -> Result<FeatureMap> {
        unet::forward_features(self, patch)
    }
}

/// Model that ignores its input and emits the same logits everywhere.
#[derive(Clone, Debug)]
pub struct ConstantModel {
    pub in_channels: usize,
    pub logits: Vec<f32>,
}

impl SegmentationModel for ConstantModel {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn out_channels(&self) -> usize {
        self.logits.len()
    }

    fn fingerprint(&self) -> String {
        format!("constant-{}x{}", self.in_channels, self.logits.len())
    }

    fn predict_logits(&self, patch: &FeatureMap) -> Result<FeatureMap> {
        let n = patch.spatial_len();
        let data = self.logits.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
        Ok(FeatureMap::new(self.logits.len(), patch.shape(), data))
    }
}

fn pad_input(input: &MultiChannelVolume, plan: &TilePlan) -> FeatureMap {
    let [pz, py, px] = plan.padded_shape;
    let [nz, ny, nx] = plan.shape;
    let [lz, ly, lx] = plan.pad_lo;
    let mut out = FeatureMap::zeros(input.num_channels(), plan.padded_shape);
    let n = voxel_count(plan.padded_shape);
    let data = out.data_mut();
    for (c, ch) in input.channels().iter().enumerate() {
        let src = ch.data();
        for z in 0..nz {
            for y in 0..ny {
                let d = c * n + ((z + lz) * py + y + ly) * px + lx;
                let s = (z * ny + y) * nx;
                data[d..d + nx].copy_from_slice(&src[s..s + nx]);
            }
        }
    }
    let _ = pz;
    out
}

fn extract_patch(padded: &FeatureMap, origin: [usize; 3], patch: Shape) -> FeatureMap {
    let [_, py, px] = padded.shape();
    let n = padded.spatial_len();
    let c = padded.channels();
    let mut data = Vec::with_capacity(c * voxel_count(patch));
    for ch in 0..c {
        for z in 0..patch[0] {
            for y in 0..patch[1] {
                let s = ch * n + ((origin[0] + z) * py + origin[1] + y) * px + origin[2];
                data.extend_from_slice(&padded.data()[s..s + patch[2]]);
            }
        }
    }
    FeatureMap::new(c, patch, data)
}

struct Accumulator {
    probs: Vec<f32>,
    weights: Vec<f32>,
    classes: usize,
    shape: Shape,
}

impl Accumulator {
    fn new(classes: usize, shape: Shape) -> Self {
        let n = voxel_count(shape);
        Accumulator {
            probs: vec![0.0; classes * n],
            weights: vec![0.0; n],
            classes,
            shape,
        }
    }

    fn add(&mut self, tile: &FeatureMap, origin: [usize; 3], gauss: &[f32]) {
        let [_, py, px] = self.shape;
        let n = voxel_count(self.shape);
        let [tz, ty, tx] = tile.shape();
        let tn = tile.spatial_len();
        for z in 0..tz {
            for y in 0..ty {
                let dst = ((origin[0] + z) * py + origin[1] + y) * px + origin[2];
                let src = (z * ty + y) * tx;
                let g = &gauss[src..src + tx];
                for (w, &gw) in self.weights[dst..dst + tx].iter_mut().zip(g) {
                    *w += gw;
                }
                for k in 0..self.classes {
                    let p = &tile.data()[k * tn + src..k * tn + src + tx];
                    let acc = &mut self.probs[k * n + dst..k * n + dst + tx];
                    for ((a, &v), &gw) in acc.iter_mut().zip(p).zip(g) {
                        *a += v * gw;
                    }
                }
            }
        }
    }

    fn normalized(self) -> FeatureMap {
        let n = voxel_count(self.shape);
        let mut probs = self.probs;
        for k in 0..self.classes {
            for (p, &w) in probs[k * n..(k + 1) * n].iter_mut().zip(&self.weights) {
                *p /= w;
            }
        }
        FeatureMap::new(self.classes, self.shape, probs)
    }
}

fn predict_tile<M: SegmentationModel>(model: &M, padded: &FeatureMap, origin: [usize; 3], patch: Shape) -> Result<FeatureMap> {
    let mut out = model.predict_logits(&extract_patch(padded, origin, patch))?;
    if out.shape() != patch || out.channels() != model.out_channels() {
        return Err(Error::Shape(format!(
            "model returned {} x {:?} for a {:?} patch",
            out.channels(),
            out.shape(),
            patch
        )));
    }
    unet::softmax_in_place(&mut out)?;
    Ok(out)
}

/// Stitched class probabilities of one model over the padded grid.
///
/// Tiles are evaluated in `schedule` order, a batch of up to the pool size
/// at a time, and accumulated strictly in tile-index order.
fn predict_padded<M: SegmentationModel>(
    model: &M,
    padded: &FeatureMap,
    plan: &TilePlan,
    gauss: &[f32],
    schedule: &[usize],
) -> Result<FeatureMap> {
    let mut sorted = schedule.to_vec();
    sorted.sort_unstable();
    if sorted != (0..plan.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidParameter(format!(
            "tile schedule must be a permutation of 0..{}",
            plan.len()
        )));
    }
    let mut acc = Accumulator::new(model.out_channels(), plan.padded_shape);
    let mut pending: BTreeMap<usize, FeatureMap> = BTreeMap::new();
    let mut next = 0;
    let batch = rayon::current_num_threads().max(1);
    for chunk in schedule.chunks(batch) {
        let outputs = chunk
            .par_iter()
            .map(|&t| predict_tile(model, padded, plan.tiles[t], plan.patch).map(|o| (t, o)))
            .collect::<Result<Vec<_>>>()?;
        pending.extend(outputs);
        while let Some(tile) = pending.remove(&next) {
            acc.add(&tile, plan.tiles[next], gauss);
            next += 1;
        }
    }
    debug_assert!(pending.is_empty());
    Ok(acc.normalized())
}

fn crop(map: &FeatureMap, plan: &TilePlan) -> FeatureMap {
    let [_, py, px] = plan.padded_shape;
    let [nz, ny, nx] = plan.shape;
    let [lz, ly, lx] = plan.pad_lo;
    let pn = voxel_count(plan.padded_shape);
    let mut data = Vec::with_capacity(map.channels() * voxel_count(plan.shape));
    for k in 0..map.channels() {
        for z in 0..nz {
            for y in 0..ny {
                let s = k * pn + ((z + lz) * py + y + ly) * px + lx;
                data.extend_from_slice(&map.data()[s..s + nx]);
            }
        }
    }
    FeatureMap::new(map.channels(), plan.shape, data)
}

fn check_ensemble<M: SegmentationModel>(models: &[M], input: &MultiChannelVolume, cfg: &InferenceConfig) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one model is required".into()))?;
    let fp = first.fingerprint();
    if let Some((i, m)) = models.iter().enumerate().find(|(_, m)| m.fingerprint() != fp) {
        return Err(Error::EnsembleMismatch(format!(
            "fold {i} has architecture {} but fold 0 has {fp}",
            m.fingerprint()
        )));
    }
    if first.in_channels() != input.num_channels() {
        return Err(Error::Shape(format!(
            "model expects {} channels, input has {}",
            first.in_channels(),
            input.num_channels()
        )));
    }
    cfg.validate(first.required_divisor())
}

/// Single-model prediction with an explicit tile evaluation order. Returns
/// class probabilities cropped to the input shape.
pub fn predict_fold_with_schedule<M: SegmentationModel>(
    model: &M,
    input: &MultiChannelVolume,
    cfg: &InferenceConfig,
    schedule: &[usize],
) -> Result<FeatureMap> {
    check_ensemble(std::slice::from_ref(model), input, cfg)?;
    let plan = TilePlan::new(input.shape(), cfg.patch_shape, cfg.step_fraction)?;
    let gauss = gaussian_weight_map(cfg.patch_shape, cfg.gaussian_sigma_scale)?;
    let padded = pad_input(input, &plan);
    Ok(crop(&predict_padded(model, &padded, &plan, &gauss, schedule)?, &plan))
}

/// Ensemble sliding-window prediction. Fold probabilities are averaged with
/// equal weight; the result holds one probability volume per class on the
/// input grid.
pub fn sliding_window_predict<M: SegmentationModel>(
    models: &[M],
    input: &MultiChannelVolume,
    cfg: &InferenceConfig,
) -> Result<Vec<ScalarVolume>> {
    check_ensemble(models, input, cfg)?;
    let plan = TilePlan::new(input.shape(), cfg.patch_shape, cfg.step_fraction)?;
    let gauss = gaussian_weight_map(cfg.patch_shape, cfg.gaussian_sigma_scale)?;
    let padded = pad_input(input, &plan);
    let schedule: Vec<usize> = (0..plan.len()).collect();

    let mut sum: Option<FeatureMap> = None;
    for model in models {
        let fold = crop(&predict_padded(model, &padded, &plan, &gauss, &schedule)?, &plan);
        match sum.as_mut() {
            None => sum = Some(fold),
            Some(s) => s.data_mut().iter_mut().zip(fold.data()).for_each(|(a, &b)| *a += b),
        }
    }
    let mut mean = sum.expect("at least one fold");
    if models.len() > 1 {
        let k = models.len() as f32;
        mean.data_mut().iter_mut().for_each(|v| *v /= k);
    }

    let spacing = input.spacing();
    let orientation = *input.channel(0).orientation();
    (0..mean.channels())
        .map(|k| {
            let data = mean.channel(k).iter().map(|v| v.clamp(0.0, 1.0)).collect();
            Ok(ScalarVolume::probability(plan.shape, spacing, data)?.with_orientation(orientation))
        })
        .collect()
}

/// Per-voxel most probable class; ties go to the lower class index.
pub fn argmax_mask(probs: &[ScalarVolume]) -> Result<LabelVolume> {
    if probs.len() < 2 {
        return Err(Error::InvalidParameter(format!("argmax needs at least 2 classes, got {}", probs.len())));
    }
    if probs.len() > u8::MAX as usize + 1 {
        return Err(Error::InvalidParameter("at most 256 classes fit a label volume".into()));
    }
    let first = &probs[0];
    if let Some(p) = probs.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::shape_mismatch("class probability shape", first.shape(), p.shape()));
    }
    let data = (0..first.len())
        .map(|i| {
            let mut best = 0;
            for k in 1..probs.len() {
                if probs[k].data()[i] > probs[best].data()[i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelVolume::label(first.shape(), first.spacing(), data)?.with_orientation(*first.orientation()))
}
