use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use rayon::prelude::*;

use crate::args::EvaluateArgs;
use crate::files::{all_scans, create_dir, load, scans_with_suffix, write_pgm, write_text};
use crate::scoring::{csv_values, score, ScanScore, COLUMNS};
use crate::usage;

const RESERVED: [&str; 3] = ["raw", "gt", "bg"];

struct Job {
    method: String,
    stem: String,
    path: PathBuf,
}

/// Writes `report.csv` (one row per method and scan, ordered by method then
/// scan name), `summary.csv` (per-method means) and PGM heatmaps.
pub fn run(args: &EvaluateArgs) -> Result<()> {
    let raws = scans_with_suffix(&args.input, "raw")?;
    let gts = scans_with_suffix(&args.input, "gt")?;
    if raws.len() != gts.len() {
        return Err(usage(format!(
            "{} raw scans but {} ground-truth scans in {}",
            raws.len(),
            gts.len(),
            args.input.display()
        )));
    }
    if raws.is_empty() {
        return Err(usage(format!("no *_raw / *_gt pairs in {}", args.input.display())));
    }
    if let Some(stem) = raws.keys().find(|s| !gts.contains_key(*s)) {
        return Err(usage(format!("{stem}_raw has no matching {stem}_gt")));
    }

    let mut jobs = Vec::new();
    for dir in &args.processed {
        for path in all_scans(dir)? {
            if let Some((stem, method)) = split_processed(&path, &raws) {
                jobs.push(Job { method, stem, path });
            }
        }
    }
    if jobs.is_empty() {
        return Err(usage("no processed scans match the input pairs"));
    }
    jobs.sort_by(|a, b| (&a.method, &a.stem).cmp(&(&b.method, &b.stem)));
    if let Some(dup) = jobs.windows(2).find(|w| (&w[0].method, &w[0].stem) == (&w[1].method, &w[1].stem)) {
        return Err(usage(format!("{}_{} appears in more than one processed directory", dup[0].stem, dup[0].method)));
    }

    create_dir(&args.out)?;
    let heatmaps = args.out.join("heatmaps");
    if !args.no_heatmaps {
        create_dir(&heatmaps)?;
    }
    let scores = jobs
        .par_iter()
        .map(|job| {
            let raw = load(&raws[&job.stem])?;
            let gt = load(&gts[&job.stem])?;
            let processed = load(&job.path)?;
            if !args.no_heatmaps {
                write_pgm(&processed, &heatmaps.join(format!("{}_{}.pgm", job.stem, job.method)))?;
            }
            score(&raw, &processed, &gt, args.mask_frac)
        })
        .collect::<Result<Vec<_>>>()?;
    if !args.no_heatmaps {
        for (role, scans) in [("raw", &raws), ("gt", &gts)] {
            for (stem, path) in scans {
                write_pgm(&load(path)?, &heatmaps.join(format!("{stem}_{role}.pgm")))?;
            }
        }
    }

    let columns = COLUMNS.join(",");
    let mut report = format!("method,scan,{columns}\n");
    let mut by_method: BTreeMap<&str, Vec<ScanScore>> = BTreeMap::new();
    for (job, s) in jobs.iter().zip(&scores) {
        let _ = writeln!(report, "{},{},{}", job.method, job.stem, csv_values(&s.values()));
        by_method.entry(&job.method).or_default().push(*s);
    }
    let mut summary = format!("method,scans,{columns}\n");
    for (method, rows) in &by_method {
        let _ = writeln!(summary, "{method},{},{}", rows.len(), csv_values(&ScanScore::mean(rows)));
    }
    write_text(&args.out.join("report.csv"), &report)?;
    write_text(&args.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// `<stem>_<method>.gprb` with `stem` one of the input pairs; the longest
/// matching stem wins.
fn split_processed(path: &std::path::Path, stems: &BTreeMap<String, PathBuf>) -> Option<(String, String)> {
    let name = path.file_stem()?.to_str()?;
    stems
        .keys()
        .filter_map(|stem| {
            let method = name.strip_prefix(stem.as_str())?.strip_prefix('_')?;
            (!method.is_empty() && !RESERVED.contains(&method)).then(|| (stem.clone(), method.to_string()))
        })
        .max_by_key(|(stem, _)| stem.len())
}
