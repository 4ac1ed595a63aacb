use std::path::PathBuf;

use clap::Args;
use petseg_core::augment::{apply_plan, apply_plan_label, rng_from_seed, sample_plan};
use petseg_core::nifti::{read_nifti_file, read_nifti_mask, write_nifti_file};
use petseg_core::preprocess::{resample as resample_volume, Interpolation, ResampleSpec};
use petseg_core::AnyVolume;

use super::{create_parent, parse_triple, require_file};
use crate::config::PipelineConfig;
use crate::error::CliResult;

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Target spacing "z,y,x" in mm (default from config).
    #[arg(long, value_parser = parse_triple::<f64>)]
    spacing: Option<[f64; 3]>,
    /// trilinear or nearest; labels default to nearest.
    #[arg(long)]
    interpolation: Option<String>,
}

fn parse_interp(s: &str) -> CliResult<Interpolation> {
    match s {
        "trilinear" => Ok(Interpolation::Trilinear),
        "nearest" => Ok(Interpolation::Nearest),
        _ => Err(petseg_core::Error::InvalidInterpolation(s.to_string()).into()),
    }
}

pub fn resample(args: ResampleArgs, cfg: &PipelineConfig) -> CliResult<()> {
    require_file(&args.input)?;
    let vol = read_nifti_file(&args.input)?;
    let default = match vol {
        AnyVolume::Label(_) => Interpolation::Nearest,
        AnyVolume::Scalar(_) => Interpolation::Trilinear,
    };
    let interp = args.interpolation.as_deref().map(parse_interp).transpose()?.unwrap_or(default);
    let spec = ResampleSpec::new(args.spacing.unwrap_or(cfg.preprocess.target_spacing), interp)?;
    create_parent(&args.output)?;
    let shape = match vol {
        AnyVolume::Label(v) => {
            let out = resample_volume(&v, &spec)?;
            write_nifti_file(&args.output, &out)?;
            out.shape()
        }
        AnyVolume::Scalar(v) => {
            let out = resample_volume(&v, &spec)?;
            write_nifti_file(&args.output, &out)?;
            out.shape()
        }
    };
    log::info!("resampled {} to shape {:?}", args.input.display(), shape);
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Intensity volume.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Optional label mask transformed with the same geometry.
    #[arg(long, requires = "mask_output")]
    mask: Option<PathBuf>,
    #[arg(long)]
    mask_output: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Writes the augmented volume and prints the realized draw as JSON.
pub fn augment(args: AugmentArgs, cfg: &PipelineConfig) -> CliResult<()> {
    require_file(&args.input)?;
    let mut params = cfg.augment_params();
    if let Some(s) = args.seed {
        params.seed = s;
    }
    let plan = sample_plan(&params, &mut rng_from_seed(params.seed))?;
    let vol = read_nifti_file(&args.input)?.into_scalar()?;
    create_parent(&args.output)?;
    write_nifti_file(&args.output, &apply_plan(&vol, &plan)?)?;
    if let (Some(mask), Some(out)) = (&args.mask, &args.mask_output) {
        require_file(mask)?;
        let m = read_nifti_mask(&std::fs::read(mask)?)?;
        create_parent(out)?;
        write_nifti_file(out, &apply_plan_label(&m, &plan)?)?;
    }
    println!("{}", serde_json::to_string(&plan)?);
    Ok(())
}
