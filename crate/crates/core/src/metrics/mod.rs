//! Challenge evaluation: foreground Dice, false-positive and false-negative
//! component volumes, and rank aggregation across teams.

mod ccl;
mod rank;

pub use ccl::{connected_components, connected_components_parallel, ComponentLabeling, Connectivity};
pub use rank::{rank_teams, LeaderboardRow, RankingWeights, TeamMetrics};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Spacing};
use ccl::require_binary;

fn check_pair(pred: &LabelVolume, gt: &LabelVolume) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape_mismatch("prediction vs ground truth shape", pred.shape(), gt.shape()));
    }
    require_binary(pred, "prediction")?;
    require_binary(gt, "ground truth")
}

/// Dice with a caller-chosen value for two empty masks.
pub fn dsc_with(pred: &LabelVolume, gt: &LabelVolume, empty_empty: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += a as usize;
        g += b as usize;
        both += (a & b) as usize;
    }
    if p + g == 0 {
        return Ok(empty_empty);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Dice, 1.0 when both masks are empty.
pub fn dsc(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    dsc_with(pred, gt, 1.0)
}

/// Volume in ml of the components of `a` that share no voxel with `b`.
fn unmatched_volume(a: &LabelVolume, b: &LabelVolume, spacing: Spacing, connectivity: Connectivity) -> Result<f64> {
    check_pair(a, b)?;
    let comps = connected_components(a, connectivity)?;
    let mut hit = vec![false; comps.num_components()];
    for (&l, &v) in comps.labels.iter().zip(b.data()) {
        if l != 0 && v != 0 {
            hit[l as usize - 1] = true;
        }
    }
    let voxels: usize = comps.sizes.iter().zip(&hit).filter(|(_, &h)| !h).map(|(&s, _)| s).sum();
    Ok(voxels as f64 * spacing.voxel_volume_ml())
}

/// False-positive volume: predicted components with no ground-truth overlap.
pub fn fpv(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing, connectivity: Connectivity) -> Result<f64> {
    unmatched_volume(pred, gt, spacing, connectivity)
}

/// False-negative volume: ground-truth components missed entirely.
pub fn fnv(pred: &LabelVolume, gt: &LabelVolume, spacing: Spacing, connectivity: Connectivity) -> Result<f64> {
    unmatched_volume(gt, pred, spacing, connectivity)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub connectivity: Connectivity,
    pub empty_empty_dice: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            connectivity: Connectivity::TwentySix,
            empty_empty_dice: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dsc: f64,
    pub fpv_ml: f64,
    pub fnv_ml: f64,
}

/// Spacings stored as f32 in NIfTI may differ in the last bits.
const SPACING_TOLERANCE_MM: f64 = 1e-4;

/// All three metrics for one case; volumes use the ground-truth spacing.
pub fn evaluate_case(case_id: &str, pred: &LabelVolume, gt: &LabelVolume, opts: &EvalOptions) -> Result<CaseMetrics> {
    let (ps, gs) = (pred.spacing().as_array(), gt.spacing().as_array());
    if ps.iter().zip(&gs).any(|(a, b)| (a - b).abs() > SPACING_TOLERANCE_MM) {
        return Err(Error::Alignment {
            what: "prediction vs ground truth spacing",
            left: ps.to_vec(),
            right: gs.to_vec(),
        });
    }
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dsc: dsc_with(pred, gt, opts.empty_empty_dice)?,
        fpv_ml: fpv(pred, gt, gt.spacing(), opts.connectivity)?,
        fnv_ml: fnv(pred, gt, gt.spacing(), opts.connectivity)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub cases: usize,
    pub mean_dsc: f64,
    pub mean_fpv_ml: f64,
    pub mean_fnv_ml: f64,
}

/// Per-metric means over cases; `None` for an empty list.
pub fn summarize(cases: &[CaseMetrics]) -> Option<MetricsSummary> {
    if cases.is_empty() {
        return None;
    }
    let n = cases.len() as f64;
    let mean = |f: fn(&CaseMetrics) -> f64| cases.iter().map(f).sum::<f64>() / n;
    Some(MetricsSummary {
        cases: cases.len(),
        mean_dsc: mean(|c| c.dsc),
        mean_fpv_ml: mean(|c| c.fpv_ml),
        mean_fnv_ml: mean(|c| c.fnv_ml),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;

    fn m(shape: Shape, spacing: f64, data: Vec<u8>) -> LabelVolume {
        LabelVolume::label(shape, Spacing::isotropic(spacing).unwrap(), data).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let a = m([1, 1, 4], 1.0, vec![1, 1, 0, 0]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        let b = m([1, 1, 4], 1.0, vec![0, 1, 1, 0]);
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
        assert_eq!(dsc(&b, &a).unwrap(), 0.5);
        let e = m([1, 1, 4], 1.0, vec![0; 4]);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(dsc_with(&e, &e, 0.0).unwrap(), 0.0);
        assert_eq!(dsc(&a, &e).unwrap(), 0.0);
        let other = m([1, 2, 2], 1.0, vec![0; 4]);
        assert!(matches!(dsc(&a, &other), Err(Error::Alignment { .. })));
    }

    #[test]
    fn fpv_fnv_examples() {
        let sp = Spacing::isotropic(10.0).unwrap();
        let c = Connectivity::TwentySix;
        let empty = m([1, 1, 5], 10.0, vec![0; 5]);
        let three = m([1, 1, 5], 10.0, vec![1, 1, 1, 0, 0]);
        assert_eq!(fpv(&three, &empty, sp, c).unwrap(), 3.0);
        assert_eq!(fpv(&three, &three, sp, c).unwrap(), 0.0);
        assert_eq!(fnv(&three, &three, sp, c).unwrap(), 0.0);

        // one overlapping component plus a disjoint 2-voxel component
        let pred = m([1, 1, 7], 10.0, vec![1, 1, 1, 0, 0, 1, 1]);
        let gt = m([1, 1, 7], 10.0, vec![0, 1, 0, 0, 0, 0, 0]);
        assert_eq!(fpv(&pred, &gt, sp, c).unwrap(), 2.0);

        let five = m([1, 1, 5], 10.0, vec![1; 5]);
        assert_eq!(fnv(&empty, &five, sp, c).unwrap(), 5.0);
    }

    #[test]
    fn merging_overlapping_components_keeps_fpv() {
        let sp = Spacing::isotropic(1.0).unwrap();
        let gt = m([1, 1, 7], 1.0, vec![1, 0, 1, 0, 0, 0, 0]);
        let split = m([1, 1, 7], 1.0, vec![1, 0, 1, 0, 0, 1, 0]);
        let merged = m([1, 1, 7], 1.0, vec![1, 1, 1, 0, 0, 1, 0]);
        let c = Connectivity::Six;
        assert_eq!(fpv(&split, &gt, sp, c).unwrap(), fpv(&merged, &gt, sp, c).unwrap());
    }

    #[test]
    fn evaluate_rejects_spacing_mismatch() {
        let a = m([1, 1, 2], 1.0, vec![1, 0]);
        let b = m([1, 1, 2], 2.0, vec![1, 0]);
        assert!(evaluate_case("x", &a, &b, &EvalOptions::default()).is_err());
        let r = evaluate_case("x", &a, &a, &EvalOptions::default()).unwrap();
        assert_eq!((r.dsc, r.fpv_ml, r.fnv_ml), (1.0, 0.0, 0.0));
    }

    #[test]
    fn summary_means() {
        let c = |d, f, n| CaseMetrics {
            case_id: "c".into(),
            dsc: d,
            fpv_ml: f,
            fnv_ml: n,
        };
        let s = summarize(&[c(1.0, 0.0, 2.0), c(0.5, 4.0, 0.0)]).unwrap();
        assert_eq!((s.mean_dsc, s.mean_fpv_ml, s.mean_fnv_ml), (0.75, 2.0, 1.0));
        assert!(summarize(&[]).is_none());
    }
}
