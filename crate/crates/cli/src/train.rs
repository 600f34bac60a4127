use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gprd_core::network::{self, InitScheme};
use gprd_core::simulator::parse_size;
use gprd_core::{CrNetConfig, CrNetModel, Dataset, DatasetPair, LossKind, Provenance, TrainConfig};

use crate::args::{InitArg, LossArg, TrainArgs};
use crate::files::{load, scan_path, scans_with_suffix, write_text};
use crate::usage;

pub fn run(args: &TrainArgs) -> Result<()> {
    let (h, w) = parse_size(&args.size)?;
    let data = load_pairs(&args.data, h, w)?;
    let model_cfg = CrNetConfig {
        base_width: args.base_width,
        init: match args.init {
            InitArg::Scaled => InitScheme::Scaled,
            InitArg::PaperGaussian => InitScheme::PaperGaussian,
        },
        seed: args.seed,
        ..CrNetConfig::default()
    };
    let train_cfg = TrainConfig {
        batch_size: args.batch,
        epochs: args.epochs,
        lr: args.lr,
        seed: args.seed,
        loss: match args.loss {
            LossArg::Combined => LossKind::Combined,
            LossArg::Mae => LossKind::Mae,
            LossArg::Mse => LossKind::Mse,
            LossArg::Msssim => LossKind::MsSsim,
        },
        max_steps: args.max_steps,
        ..TrainConfig::default()
    };
    let mut model = CrNetModel::new(model_cfg)?;
    let history = network::train(&mut model, &data, &train_cfg)?;

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::files::create_dir(parent)?;
    }
    model
        .save(&args.out)
        .with_context(|| format!("cannot write checkpoint {}", args.out.display()))?;
    write_text(&sibling(&args.out, "epochs.csv"), &history.epochs_csv())?;
    write_text(&sibling(&args.out, "steps.csv"), &history.steps_csv())?;
    println!(
        "trained {} steps on {} pairs: loss {:.6} -> {:.6}; checkpoint {}",
        history.steps(),
        data.len(),
        history.initial_loss().unwrap_or(f64::NAN),
        history.final_loss().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

/// `<stem>_raw` / `<stem>_gt` pairs, resized to `h × w` and normalised.
pub fn load_pairs(dir: &Path, h: usize, w: usize) -> Result<Dataset> {
    let raws = scans_with_suffix(dir, "raw")?;
    if raws.is_empty() {
        return Err(usage(format!("no *_raw scans in {}", dir.display())));
    }
    let mut pairs = Vec::with_capacity(raws.len());
    for (stem, raw_path) in &raws {
        let gt_path = scan_path(dir, stem, "gt");
        if !gt_path.exists() {
            return Err(usage(format!("{} has no ground truth {}", raw_path.display(), gt_path.display())));
        }
        let provenance = if stem.starts_with("hybrid") {
            Provenance::Hybrid
        } else {
            Provenance::Simulated
        };
        let pair = DatasetPair::new(load(raw_path)?, load(&gt_path)?, provenance)?;
        pairs.push(pair.prepare(h, w)?);
    }
    Ok(Dataset::new(pairs, 0)?)
}

/// `model.crn` → `model_<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}_{suffix}"))
}
