use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use petseg_core::inference::{sliding_window_predict, tile_count, InferenceConfig};
use petseg_core::unet::{load_weights_file, save_weights_file, ArchDescriptor, WeightStore};
use petseg_core::{MultiChannelVolume, ScalarVolume, Spacing};
use serde_json::json;

use super::{create_parent, parse_patch, require_file};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// vanilla, shallow or deeper.
    #[arg(long, conflicts_with_all = ["channels", "weights"])]
    preset: Option<String>,
    /// Custom per-stage widths, e.g. "8,16,32".
    #[arg(long, value_delimiter = ',', conflicts_with = "weights")]
    channels: Option<Vec<usize>>,
    /// Describe the architecture stored in a UNW1 file.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    in_channels: usize,
    #[arg(long, default_value_t = 2)]
    out_channels: usize,
    #[arg(long, default_value_t = 2)]
    convs_per_stage: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also save He-initialized random weights to this UNW1 file.
    #[arg(long)]
    write_random: Option<PathBuf>,
    /// Seed for --write-random (default from config).
    #[arg(long)]
    seed: Option<u64>,
}

/// "22.6M" style count.
pub fn millions(n: usize) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

fn descriptor(args: &DescribeArgs) -> CliResult<ArchDescriptor> {
    if let Some(p) = &args.weights {
        require_file(p)?;
        return Ok(load_weights_file(p)?.descriptor().clone());
    }
    let mut d = match (&args.preset, &args.channels) {
        (Some(name), _) => ArchDescriptor::by_name(name).ok_or_else(|| CliError::Input(format!("unknown preset {name:?}")))?,
        (None, Some(ch)) => ArchDescriptor {
            channels: ch.clone(),
            ..ArchDescriptor::vanilla()
        },
        (None, None) => ArchDescriptor::vanilla(),
    };
    if args.preset.is_none() {
        d.in_channels = args.in_channels;
        d.out_channels = args.out_channels;
        d.convs_per_stage = args.convs_per_stage;
    }
    d.validate()?;
    Ok(d)
}

pub fn describe(args: DescribeArgs, cfg: &PipelineConfig) -> CliResult<()> {
    let d = descriptor(&args)?;
    let layers = d.layers();
    let total = d.param_count()?;
    if args.json {
        let rows: Vec<_> = layers.iter().map(|l| json!({"name": l.name, "shape": l.shape, "params": l.numel()})).collect();
        println!(
            "{}",
            json!({
                "descriptor": d.canonical_text(),
                "fingerprint": d.fingerprint(),
                "layers": rows,
                "parameters": total,
                "parameters_millions": millions(total),
            })
        );
    } else {
        let width = layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
        println!("{:<width$}  {:<22}  {:>12}", "layer", "shape", "params");
        for l in &layers {
            println!("{:<width$}  {:<22}  {:>12}", l.name, format!("{:?}", l.shape), l.numel());
        }
        println!("fingerprint: {}", d.fingerprint());
        println!("parameters: {total} ({})", millions(total));
    }
    if let Some(p) = &args.write_random {
        let seed = args.seed.unwrap_or(cfg.seed);
        create_parent(p)?;
        save_weights_file(p, &WeightStore::random(d, seed)?)?;
        log::info!("wrote random weights (seed {seed}) to {}", p.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Synthetic volume size "n" or "z,y,x".
    #[arg(long, value_parser = parse_patch, default_value = "64")]
    shape: [usize; 3],
    #[arg(long, value_parser = parse_patch, default_value = "32")]
    patch: [usize; 3],
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
    steps: Vec<f64>,
    /// Model weights; a small random network when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Only count tiles, skip the forward passes.
    #[arg(long)]
    dry_run: bool,
}

pub fn bench(args: BenchArgs, cfg: &PipelineConfig) -> CliResult<()> {
    let model = match &args.weights {
        Some(p) => {
            require_file(p)?;
            load_weights_file(p)?
        }
        None => WeightStore::random(
            ArchDescriptor {
                channels: vec![4, 8],
                convs_per_stage: 1,
                ..ArchDescriptor::vanilla()
            },
            cfg.seed,
        )?,
    };
    let n: usize = args.shape.iter().product();
    let sp = Spacing::isotropic(1.0)?;
    let chans = (0..model.descriptor().in_channels)
        .map(|c| ScalarVolume::intensity(args.shape, sp, (0..n).map(|i| ((i * (c + 3)) % 97) as f32 / 48.0 - 1.0).collect()))
        .collect::<Result<Vec<_>, _>>()?;
    let names = (0..chans.len()).map(|c| format!("ch{c}")).collect();
    let input = MultiChannelVolume::new(chans, names)?;

    println!("step_fraction,tiles,seconds");
    for &step in &args.steps {
        let icfg = InferenceConfig {
            patch_shape: args.patch,
            step_fraction: step,
            gaussian_sigma_scale: cfg.inference.gaussian_sigma_scale,
        };
        icfg.validate(model.descriptor().required_divisor())?;
        let tiles = tile_count(args.shape, args.patch, step)?;
        let start = Instant::now();
        if !args.dry_run {
            sliding_window_predict(std::slice::from_ref(&model), &input, &icfg)?;
        }
        println!("{step},{tiles},{:.4}", start.elapsed().as_secs_f64());
    }
    Ok(())
}
