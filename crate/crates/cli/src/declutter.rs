use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gprd_core::network::predict;
use gprd_core::{mean_subtraction, rpca_decompose, svd_removal, CrNetModel, Radargram, RpcaOptions};
use rayon::prelude::*;

use crate::args::{DeclutterArgs, Method};
use crate::files::{all_scans, create_dir, load, parse_window, require_exists, save, scan_path, scan_stem, write_text};
use crate::scoring::{csv_values, score, COLUMNS};
use crate::usage;

/// Processing step after normalising the input to `[0, 1]`.
enum Declutterer {
    MeanSub(Option<(usize, usize)>),
    Svd(usize),
    Rpca(RpcaOptions),
    CrNet(Box<CrNetModel>),
}

struct Outcome {
    stem: String,
    output: Radargram,
    /// RPCA iterations and convergence flag.
    solver: Option<(usize, bool)>,
}

impl Declutterer {
    fn apply(&self, raw: &Radargram) -> Result<(Radargram, Option<(usize, bool)>)> {
        let r = raw.normalize_unit();
        Ok(match self {
            Declutterer::MeanSub(window) => {
                let (a, b) = window.unwrap_or((1, r.width()));
                (mean_subtraction(&r, a, b)?, None)
            }
            Declutterer::Svd(k) => (svd_removal(&r, *k)?, None),
            Declutterer::Rpca(opts) => {
                let out = rpca_decompose(r.data(), opts)?;
                (r.with_data(out.sparse)?, Some((out.iterations, out.converged)))
            }
            Declutterer::CrNet(model) => (predict(model, &r)?, None),
        })
    }
}

pub fn run(args: &DeclutterArgs) -> Result<()> {
    let declutterer = build(args)?;
    let inputs = inputs(&args.input)?;
    create_dir(&args.out)?;
    let method = args.method.as_str();

    let outcomes = inputs
        .par_iter()
        .map(|path| {
            let raw = load(path)?;
            let (output, solver) = declutterer
                .apply(&raw)
                .with_context(|| format!("{method} failed on {}", path.display()))?;
            Ok(Outcome {
                stem: scan_stem(path),
                output,
                solver,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = header(args);
    let _ = write!(report, "scan,iterations,converged");
    for c in COLUMNS {
        let _ = write!(report, ",{c}");
    }
    report.push('\n');
    for (path, outcome) in inputs.iter().zip(&outcomes) {
        save(&outcome.output, &scan_path(&args.out, &outcome.stem, method))?;
        let (iters, converged) = match outcome.solver {
            Some((n, c)) => (n.to_string(), c.to_string()),
            None => ("-".into(), "-".into()),
        };
        let _ = write!(report, "{},{iters},{converged}", outcome.stem);
        let gt_path = path.parent().map(|d| scan_path(d, &outcome.stem, "gt"));
        let scored = match gt_path.filter(|p| p.exists()) {
            Some(gt_path) => match score(&load(path)?, &outcome.output, &load(&gt_path)?, args.mask_frac) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("{}: no metrics: {e:#}", outcome.stem);
                    None
                }
            },
            None => None,
        };
        match scored {
            Some(s) => {
                let _ = writeln!(report, ",{}", csv_values(&s.values()));
            }
            None => {
                let _ = writeln!(report, "{}", ",-".repeat(COLUMNS.len()));
            }
        }
    }
    let report_path = args.out.join(format!("declutter_{method}.txt"));
    write_text(&report_path, &report)?;
    println!(
        "{method}: processed {} scans into {}; report {}",
        outcomes.len(),
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

fn build(args: &DeclutterArgs) -> Result<Declutterer> {
    Ok(match args.method {
        Method::Meansub => Declutterer::MeanSub(args.window.as_deref().map(parse_window).transpose()?),
        Method::Svd => Declutterer::Svd(args.k),
        Method::Rpca => Declutterer::Rpca(RpcaOptions {
            lambda: args.lambda,
            tol: args.tol,
            max_iter: args.max_iter,
            ..RpcaOptions::default()
        }),
        Method::Crnet => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| usage("--method crnet requires --checkpoint"))?;
            require_exists(path)?;
            let model = CrNetModel::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            Declutterer::CrNet(Box::new(model))
        }
    })
}

fn header(args: &DeclutterArgs) -> String {
    let params = match args.method {
        Method::Meansub => format!("window={}", args.window.as_deref().unwrap_or("all")),
        Method::Svd => format!("k={}", args.k),
        Method::Rpca => format!("lambda={} tol={:e} max_iter={}", args.lambda, args.tol, args.max_iter),
        Method::Crnet => format!(
            "checkpoint={}",
            args.checkpoint.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_default()
        ),
    };
    format!("# method={} {params}\n", args.method.as_str())
}

/// A single file, or every `*_raw` scan in a directory (every scan if none
/// carries the suffix).
fn inputs(path: &Path) -> Result<Vec<PathBuf>> {
    require_exists(path)?;
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let all = all_scans(path)?;
    let raw: Vec<PathBuf> = all
        .iter()
        .filter(|p| p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.ends_with("_raw")))
        .cloned()
        .collect();
    let chosen = if raw.is_empty() { all } else { raw };
    if chosen.is_empty() {
        return Err(usage(format!("no scans in {}", path.display())));
    }
    Ok(chosen)
}
