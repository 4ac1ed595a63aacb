use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use petseg_core::metrics::{evaluate_case, rank_teams, summarize, CaseMetrics, Connectivity, RankingWeights, TeamMetrics};
use petseg_core::nifti::{read_nifti_mask, SEG_FILE};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_parent, require_file};
use crate::commands::predict::MASK_FILE;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted masks: `<case>.nii[.gz]` files or case directories.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth masks in the same layout.
    #[arg(long)]
    gt: PathBuf,
    /// Per-case CSV (stdout when omitted).
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Aggregate JSON summary.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// 6, 18 or 26.
    #[arg(long)]
    connectivity: Option<Connectivity>,
    /// Dice reported when both masks are empty.
    #[arg(long)]
    empty_empty_dice: Option<f64>,
}

fn strip_nifti_ext(name: &str) -> Option<&str> {
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"))
}

/// Case id -> mask file. Case directories contribute `SEG.nii.gz`, or
/// `mask.nii.gz` as written by `predict`.
fn mask_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_dir() {
            if let Some(f) = [SEG_FILE, MASK_FILE].iter().map(|f| path.join(f)).find(|p| p.is_file()) {
                out.insert(name, f);
            }
        } else if let Some(id) = strip_nifti_ext(&name) {
            out.insert(id.to_string(), path);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Summary<'a> {
    cases: usize,
    mean_dsc: f64,
    mean_fpv_ml: f64,
    mean_fnv_ml: f64,
    connectivity: u8,
    empty_empty_dice: f64,
    per_case: &'a [CaseMetrics],
}

pub fn evaluate(args: EvaluateArgs, cfg: &PipelineConfig) -> CliResult<()> {
    let mut opts = cfg.metrics.to_options();
    if let Some(c) = args.connectivity {
        opts.connectivity = c;
    }
    if let Some(d) = args.empty_empty_dice {
        if !(0.0..=1.0).contains(&d) {
            return Err(CliError::Input(format!("--empty-empty-dice {d} must lie in [0, 1]")));
        }
        opts.empty_empty_dice = d;
    }
    let gt = mask_files(&args.gt)?;
    let pred = mask_files(&args.pred)?;
    if gt.is_empty() {
        return Err(CliError::Io(format!("{}: no ground-truth masks found", args.gt.display())));
    }
    if let Some(id) = gt.keys().find(|id| !pred.contains_key(*id)) {
        return Err(CliError::Io(format!("no prediction for case {id} in {}", args.pred.display())));
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = gt.iter().map(|(id, g)| (id, &pred[id], g)).collect();
    let rows = pairs
        .par_iter()
        .map(|(id, p, g)| {
            require_file(p)?;
            let pm = read_nifti_mask(&std::fs::read(p)?)?;
            let gm = read_nifti_mask(&std::fs::read(g)?)?;
            Ok(evaluate_case(id, &pm, &gm, &opts)?)
        })
        .collect::<CliResult<Vec<CaseMetrics>>>()?;

    let mut w = match &args.out_csv {
        Some(p) => {
            create_parent(p)?;
            csv::Writer::from_writer(Box::new(std::fs::File::create(p)?) as Box<dyn std::io::Write>)
        }
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
    };
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let s = summarize(&rows).expect("at least one case");
    log::info!(
        "evaluated {} cases: mean dsc {:.4}, fpv {:.4} ml, fnv {:.4} ml",
        s.cases,
        s.mean_dsc,
        s.mean_fpv_ml,
        s.mean_fnv_ml
    );
    if let Some(p) = &args.out_json {
        let summary = Summary {
            cases: s.cases,
            mean_dsc: s.mean_dsc,
            mean_fpv_ml: s.mean_fpv_ml,
            mean_fnv_ml: s.mean_fnv_ml,
            connectivity: opts.connectivity.neighbors(),
            empty_empty_dice: opts.empty_empty_dice,
            per_case: &rows,
        };
        create_parent(p)?;
        std::fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// CSV with columns team,dsc,fpv,fnv.
    #[arg(long)]
    input: PathBuf,
    /// Leaderboard CSV (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Row<'a> {
    position: usize,
    team: &'a str,
    dsc: f64,
    fpv: f64,
    fnv: f64,
    rank_dsc: f64,
    rank_fpv: f64,
    rank_fnv: f64,
    score: f64,
}

pub fn rank(args: RankArgs) -> CliResult<()> {
    require_file(&args.input)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&args.input)?;
    let teams = r.deserialize().collect::<Result<Vec<TeamMetrics>, _>>()?;
    let board = rank_teams(&teams, &RankingWeights::default())?;
    let mut w = match &args.output {
        Some(p) => {
            create_parent(p)?;
            csv::Writer::from_writer(Box::new(std::fs::File::create(p)?) as Box<dyn std::io::Write>)
        }
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
    };
    for (i, b) in board.iter().enumerate() {
        w.serialize(Row {
            position: i + 1,
            team: &b.team,
            dsc: b.dsc,
            fpv: b.fpv,
            fnv: b.fnv,
            rank_dsc: b.rank_dsc,
            rank_fpv: b.rank_fpv,
            rank_fnv: b.rank_fnv,
            score: b.score,
        })?;
    }
    w.flush()?;
    log::info!("ranked {} teams; first: {}", board.len(), board[0].team);
    Ok(())
}
