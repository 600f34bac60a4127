use std::fs;

use anyhow::{Context, Result};
use gprd_core::simulator::{parse_size, synth_clutter, synth_target_response};
use gprd_core::{DatasetConfig, Radargram};
use rayon::prelude::*;

use crate::args::SimulateArgs;
use crate::files::{create_dir, save, scan_path, write_text};
use crate::usage;

pub const MANIFEST: &str = "manifest.txt";
const SCENES_MARKER: &str = "[scenes]";

pub fn run(args: &SimulateArgs) -> Result<()> {
    let config = resolve_config(args)?;
    create_dir(&args.out)?;
    let scenes = config.scenes().map_err(|e| usage(e.to_string()))?;

    let rendered = scenes
        .par_iter()
        .map(|scene| render(scene, config.height, config.width))
        .collect::<gprd_core::Result<Vec<_>>>()?;

    let mut manifest = String::from("# gprd simulate\n");
    manifest.push_str(&config.to_key_values());
    manifest.push_str(SCENES_MARKER);
    manifest.push('\n');
    for (i, (scene, [raw, bg, gt])) in scenes.iter().zip(&rendered).enumerate() {
        let stem = format!("scene_{i:04}");
        save(raw, &scan_path(&args.out, &stem, "raw"))?;
        save(bg, &scan_path(&args.out, &stem, "bg"))?;
        save(gt, &scan_path(&args.out, &stem, "gt"))?;
        manifest.push_str(&format!("{stem} {}\n", scene.manifest_line()));
    }
    write_text(&args.out.join(MANIFEST), &manifest)?;
    println!(
        "simulated {} scenes at {}x{} into {}",
        config.count,
        config.height,
        config.width,
        args.out.display()
    );
    Ok(())
}

/// Manifest settings, if any, then the flags on top.
fn resolve_config(args: &SimulateArgs) -> Result<DatasetConfig> {
    let mut config = match &args.config {
        Some(path) => {
            crate::files::require_exists(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let settings = text.split(SCENES_MARKER).next().unwrap_or("");
            DatasetConfig::from_key_values(settings).with_context(|| format!("bad manifest {}", path.display()))?
        }
        None => DatasetConfig::default(),
    };
    if let Some(count) = args.count {
        config.count = count;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(size) = &args.size {
        let (h, w) = parse_size(size)?;
        (config.scene_height, config.scene_width) = (h, w);
        (config.height, config.width) = (h, w);
    }
    for (key, value) in [
        ("surfaces", &args.surface),
        ("soils", &args.soil),
        ("targets", &args.targets),
        ("materials", &args.materials),
    ] {
        if let Some(value) = value {
            config.set(key, value)?;
        }
    }
    if let Some(r) = args.roughness {
        config.roughness_amp = r;
    }
    config.validate()?;
    Ok(config)
}

/// `[raw, bg, gt]` at the output size. Raw is the sum of the resized parts.
fn render(scene: &gprd_core::SceneSpec, height: usize, width: usize) -> gprd_core::Result<[Radargram; 3]> {
    let gt = synth_target_response(scene)?.resize_bilinear(height, width)?;
    let bg = synth_clutter(scene)?.resize_bilinear(height, width)?;
    let raw = gt.with_data(&bg.data() + &gt.data())?;
    Ok([raw, bg, gt])
}
