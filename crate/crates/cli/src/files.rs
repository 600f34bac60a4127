use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gprd_core::Radargram;

use crate::usage;

pub const EXT: &str = "gprb";

/// Fails with a usage error naming `path` if it does not exist.
pub fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("input path {} does not exist", path.display())));
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))
}

pub fn load(path: &Path) -> Result<Radargram> {
    Radargram::load(path).with_context(|| format!("cannot read scan {}", path.display()))
}

pub fn save(r: &Radargram, path: &Path) -> Result<()> {
    r.save(path).with_context(|| format!("cannot write scan {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Scans in `dir` named `<stem>_<suffix>.gprb`, keyed by stem.
pub fn scans_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    require_exists(dir)?;
    let tail = format!("_{suffix}.{EXT}");
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(&tail) {
            if !stem.is_empty() {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// All `.gprb` files in `dir`, sorted by name.
pub fn all_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    require_exists(dir)?;
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == EXT))
        .collect();
    out.sort();
    Ok(out)
}

/// File name without `.gprb` and without a trailing `_raw`.
pub fn scan_stem(path: &Path) -> String {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
    name.strip_suffix("_raw").unwrap_or(name).to_string()
}

pub fn scan_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}_{suffix}.{EXT}"))
}

/// 8-bit grey levels: `round(255 · normalize_unit(v))`, row-major.
pub fn pgm_pixels(r: &Radargram) -> Vec<u8> {
    r.normalize_unit().data().iter().map(|&v| (255.0 * v).round() as u8).collect()
}

/// Binary portable graymap (`P5`), one pixel per sample.
pub fn write_pgm(r: &Radargram, path: &Path) -> Result<()> {
    let (h, w) = r.dim();
    let mut bytes = Vec::with_capacity(h * w + 32);
    write!(bytes, "P5\n{w} {h}\n255\n")?;
    bytes.extend(pgm_pixels(r));
    fs::write(path, bytes).with_context(|| format!("cannot write heatmap {}", path.display()))
}

/// `a:b` with `1 <= a <= b`.
pub fn parse_window(text: &str) -> Result<(usize, usize)> {
    let parsed = text
        .split_once(':')
        .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
    match parsed {
        Some((a, b)) if a >= 1 && a <= b => Ok((a, b)),
        _ => Err(usage(format!("window {text:?} must look like a:b with 1 <= a <= b"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_quantizes_normalized_values() {
        let r = Radargram::from_rows(&[&[0.0, 0.5], &[0.25, 1.0]]).unwrap();
        assert_eq!(pgm_pixels(&r), vec![0, 128, 64, 255]);
        let doubled = Radargram::from_rows(&[&[0.0, 1.0], &[0.5, 2.0]]).unwrap();
        assert_eq!(pgm_pixels(&doubled), vec![0, 128, 64, 255]);
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let r = Radargram::zeros(3, 5).unwrap();
        write_pgm(&r, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 15);
    }

    #[test]
    fn stems_drop_raw_suffix() {
        assert_eq!(scan_stem(Path::new("d/scene_0003_raw.gprb")), "scene_0003");
        assert_eq!(scan_stem(Path::new("d/field.gprb")), "field");
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("1:64").unwrap(), (1, 64));
        assert_eq!(parse_window(" 3 : 3 ").unwrap(), (3, 3));
        for bad in ["0:4", "5:4", "4", "a:b"] {
            assert!(parse_window(bad).is_err(), "{bad}");
        }
    }
}
