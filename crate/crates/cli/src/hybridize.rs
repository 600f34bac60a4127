use std::fmt::Write as _;

use anyhow::Result;
use gprd_core::simulator::{hybridize, hybridize_resized, parse_size};

use crate::args::HybridizeArgs;
use crate::files::{create_dir, load, save, scan_path, scans_with_suffix, write_text};
use crate::usage;

/// Pairs clutter-only scan `i` with clean scans `i+1, i+2, …` (cyclic), so a
/// clutter field is never paired with its own scene while others exist.
pub fn run(args: &HybridizeArgs) -> Result<()> {
    if args.per_clutter == 0 {
        return Err(usage("--per-clutter must be at least 1"));
    }
    let clutter = scans_with_suffix(&args.input, "bg")?;
    let clean_dir = args.clean.as_ref().unwrap_or(&args.input);
    let clean = scans_with_suffix(clean_dir, "gt")?;
    if clutter.is_empty() {
        return Err(usage(format!("no *_bg scans in {}", args.input.display())));
    }
    if clean.is_empty() {
        return Err(usage(format!("no *_gt scans in {}", clean_dir.display())));
    }
    let size = args.size.as_deref().map(parse_size).transpose()?;
    create_dir(&args.out)?;

    let clean: Vec<_> = clean.into_iter().collect();
    let mut manifest = format!("# gprd hybridize\nmix={:?}\nper_clutter={}\n", args.mix, args.per_clutter);
    let mut n = 0;
    for (i, (bg_stem, bg_path)) in clutter.iter().enumerate() {
        let bg = load(bg_path)?;
        for k in 0..args.per_clutter {
            let offset = if clean.len() > 1 { 1 + k % (clean.len() - 1) } else { 0 };
            let (gt_stem, gt_path) = &clean[(i + offset) % clean.len()];
            let gt = load(gt_path)?;
            let pair = match size {
                Some((h, w)) => hybridize_resized(&bg, &gt, args.mix, h, w)?,
                None => hybridize(&bg, &gt, args.mix)?,
            };
            let stem = format!("hybrid_{n:04}");
            save(pair.raw(), &scan_path(&args.out, &stem, "raw"))?;
            save(pair.clutter_free(), &scan_path(&args.out, &stem, "gt"))?;
            writeln!(manifest, "{stem} clutter={bg_stem} clean={gt_stem}")?;
            n += 1;
        }
    }
    write_text(&args.out.join("manifest.txt"), &manifest)?;
    println!("wrote {n} hybrid pairs into {}", args.out.display());
    Ok(())
}
