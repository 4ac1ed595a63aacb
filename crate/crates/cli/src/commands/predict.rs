use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use petseg_core::inference::{argmax_mask, sliding_window_predict, tile_count};
use petseg_core::nifti::{read_case, write_nifti_file};
use petseg_core::preprocess::{assemble_input, resample, resample_to_grid, Interpolation, ResampleSpec};
use petseg_core::unet::load_weights_file;
use petseg_core::ScalarVolume;

use super::{parse_patch, require_file};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const PROB_FILE: &str = "prob.nii.gz";
pub const MASK_FILE: &str = "mask.nii.gz";

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Case directory holding CTres.nii.gz and SUV.nii.gz.
    #[arg(long)]
    case: PathBuf,
    /// Output directory for prob.nii.gz and mask.nii.gz.
    #[arg(long)]
    out: PathBuf,
    /// UNW1 weight files, one per fold (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    folds: Vec<PathBuf>,
    /// Patch size "n" or "z,y,x".
    #[arg(long, value_parser = parse_patch)]
    patch: Option<[usize; 3]>,
    /// Tile stride as a fraction of the patch, in (0, 1].
    #[arg(long)]
    step: Option<f64>,
    /// Gaussian sigma as a fraction of the patch size.
    #[arg(long)]
    sigma_scale: Option<f64>,
}

pub fn run(args: PredictArgs, cfg: &PipelineConfig) -> CliResult<()> {
    let folds = if args.folds.is_empty() { cfg.inference.folds.clone() } else { args.folds };
    if folds.is_empty() {
        return Err(CliError::Config("no fold weights given (--folds or [inference] folds)".into()));
    }
    let mut icfg = cfg.inference.to_config();
    if let Some(p) = args.patch {
        icfg.patch_shape = p;
    }
    if let Some(s) = args.step {
        icfg.step_fraction = s;
    }
    if let Some(s) = args.sigma_scale {
        icfg.gaussian_sigma_scale = s;
    }

    let models = folds
        .iter()
        .map(|p| {
            require_file(p)?;
            Ok(load_weights_file(p)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let case = read_case(&args.case)?;
    log::info!("case {} shape {:?} spacing {:?}", case.id, case.ct.shape(), case.ct.spacing().as_array());

    let spec = ResampleSpec::new(cfg.preprocess.target_spacing, Interpolation::Trilinear)?;
    let ct = resample(&case.ct, &spec)?;
    let pet = resample(&case.pet, &spec)?;
    let input = assemble_input(&ct, &pet, &cfg.normalization)?;

    let start = Instant::now();
    let tiles = tile_count(input.shape(), icfg.patch_shape, icfg.step_fraction)?;
    let probs = sliding_window_predict(&models, &input, &icfg)?;
    log::info!(
        "predicted {} folds x {} tiles on {:?} in {:.3}s",
        models.len(),
        tiles,
        input.shape(),
        start.elapsed().as_secs_f64()
    );

    let orientation = *case.ct.orientation();
    let back = probs
        .iter()
        .map(|p| Ok(resample_to_grid(p, case.ct.shape(), case.ct.spacing(), Interpolation::Trilinear)?.with_orientation(orientation)))
        .collect::<CliResult<Vec<_>>>()?;
    let mask = argmax_mask(&back)?;
    let mut fg = vec![0f32; back[0].len()];
    for p in &back[1..] {
        fg.iter_mut().zip(p.data()).for_each(|(a, &b)| *a += b);
    }
    fg.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let fg = ScalarVolume::probability(case.ct.shape(), case.ct.spacing(), fg)?.with_orientation(orientation);

    std::fs::create_dir_all(&args.out)?;
    write_nifti_file(&args.out.join(PROB_FILE), &fg)?;
    write_nifti_file(&args.out.join(MASK_FILE), &mask)?;
    log::info!("wrote {} foreground voxels to {}", mask.count_nonzero(), args.out.display());
    Ok(())
}
