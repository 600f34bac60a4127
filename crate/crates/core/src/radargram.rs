//! B-scan data model and the `GPRB1` container format.
//!
//! A [`Radargram`] is an `H × W` amplitude grid: rows are time samples and
//! columns are traces (A-scans). Values are immutable once constructed; every
//! operation here returns a new radargram.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_TRACE_SPACING: f64 = 0.01;
pub const WORKING_HEIGHT: usize = 256;
pub const WORKING_WIDTH: usize = 64;

const MAGIC: &str = "GPRB1";
const MAX_HEADER_LEN: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Radargram {
    data: Array2<f64>,
    trace_spacing: f64,
    time_window: Option<f64>,
    label: String,
}

impl Radargram {
    /// Wraps an amplitude grid. Fails on empty grids and non-finite values.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("radargram must be non-empty, got {h}x{w}")));
        }
        if let Some((idx, v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite amplitude {v} at {idx:?}")));
        }
        Ok(Radargram {
            data,
            trace_spacing: DEFAULT_TRACE_SPACING,
            time_window: None,
            label: String::new(),
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(Array2::zeros((height, width)))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::invalid("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let data = Array2::from_shape_vec((h, w), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    pub fn with_trace_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("trace spacing must be positive, got {spacing}")));
        }
        self.trace_spacing = spacing;
        Ok(self)
    }

    pub fn with_time_window(mut self, window: Option<f64>) -> Result<Self> {
        if let Some(t) = window {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::invalid(format!("time window must be positive, got {t}")));
            }
        }
        self.time_window = window;
        Ok(self)
    }

    /// Labels are single-line free text.
    pub fn with_label(mut self, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.contains(['\n', '\r']) {
            return Err(Error::invalid("label must not contain line breaks"));
        }
        self.label = label;
        Ok(self)
    }

    /// Same metadata, new amplitudes.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        let mut out = Self::new(data)?;
        out.trace_spacing = self.trace_spacing;
        out.time_window = self.time_window;
        out.label = self.label.clone();
        Ok(out)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn trace_spacing(&self) -> f64 {
        self.trace_spacing
    }

    pub fn time_window(&self) -> Option<f64> {
        self.time_window
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Affine map onto `[0, 1]`. Constant input maps to all zeros.
    pub fn normalize_unit(&self) -> Radargram {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let data = if range > 0.0 {
            self.data.mapv(|v| (v - lo) / range)
        } else {
            Array2::zeros(self.data.dim())
        };
        self.replace_unchecked(data)
    }

    /// Bilinear resampling with corner-aligned sample coordinates: output
    /// corners coincide with input corners.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Radargram> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("target size must be non-zero, got {height}x{width}")));
        }
        let (h, w) = self.dim();
        if (h, w) == (height, width) {
            return Ok(self.clone());
        }
        let rows = corner_aligned_taps(h, height);
        let cols = corner_aligned_taps(w, width);
        let src = &self.data;
        let data = Array2::from_shape_fn((height, width), |(i, j)| {
            let (r0, r1, fy) = rows[i];
            let (c0, c1, fx) = cols[j];
            let top = lerp(src[[r0, c0]], src[[r0, c1]], fx);
            let bottom = lerp(src[[r1, c0]], src[[r1, c1]], fx);
            lerp(top, bottom, fy)
        });
        // Spacing between traces stretches with the horizontal resampling.
        let mut out = self.replace_unchecked(data);
        if w > 1 && width > 1 {
            out.trace_spacing = self.trace_spacing * (w - 1) as f64 / (width - 1) as f64;
        }
        Ok(out)
    }

    /// Column window using 1-based `start_col`, covering
    /// `start_col..=start_col + width - 1`.
    pub fn crop_window(&self, start_col: usize, width: usize) -> Result<Radargram> {
        let w = self.width();
        if start_col == 0 || width == 0 || start_col + width - 1 > w {
            return Err(Error::invalid(format!(
                "window [{start_col}, {}] outside columns [1, {w}]",
                (start_col + width).saturating_sub(1)
            )));
        }
        let lo = start_col - 1;
        let data = self.data.slice(s![.., lo..lo + width]).to_owned();
        Ok(self.replace_unchecked(data))
    }

    fn replace_unchecked(&self, data: Array2<f64>) -> Radargram {
        Radargram {
            data,
            trace_spacing: self.trace_spacing,
            time_window: self.time_window,
            label: self.label.clone(),
        }
    }

    /// Serialises as `GPRB1 H W trace_spacing time_window label\n` followed
    /// by `H·W` little-endian binary32 amplitudes in row-major order.
    ///
    /// Amplitudes are stored at single precision; a value that overflows
    /// binary32 is rejected.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let (h, w) = self.dim();
        let window = match self.time_window {
            Some(t) => format!("{t:?}"),
            None => "-".to_string(),
        };
        let header = format!("{MAGIC} {h} {w} {:?} {window} {}\n", self.trace_spacing, self.label);
        out.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(h * w * 4);
        for (k, &v) in self.data.iter().enumerate() {
            let single = v as f32;
            if !single.is_finite() {
                let offset = header.len() as u64 + 4 * k as u64;
                return Err(Error::format(offset, format!("amplitude {v} does not fit binary32")));
            }
            payload.extend_from_slice(&single.to_le_bytes());
        }
        out.write_all(&payload)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Radargram> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Radargram> {
        let newline = bytes
            .iter()
            .take(MAX_HEADER_LEN)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(0, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|e| Error::format(e.valid_up_to() as u64, "header is not UTF-8"))?;

        let mut fields = header.splitn(6, ' ');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| Error::format(newline as u64, format!("header missing {name}")))
        };
        let magic = next("magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let h: usize = parse_field(next("height")?, "height", newline)?;
        let w: usize = parse_field(next("width")?, "width", newline)?;
        let spacing: f64 = parse_field(next("trace_spacing")?, "trace_spacing", newline)?;
        let window = match next("time_window")? {
            "-" => None,
            t => Some(parse_field::<f64>(t, "time_window", newline)?),
        };
        let label = next("label")?;
        if h == 0 || w == 0 {
            return Err(Error::format(0, format!("empty grid {h}x{w}")));
        }

        let start = newline + 1;
        let expected = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(0, "grid size overflows"))?;
        let payload = &bytes[start..];
        if payload.len() < expected {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "truncated payload: {} of {} values",
                    payload.len() / 4,
                    h * w
                ),
            ));
        }
        if payload.len() > expected {
            return Err(Error::format(
                (start + expected) as u64,
                format!("{} trailing bytes after payload", payload.len() - expected),
            ));
        }
        let mut values = Vec::with_capacity(h * w);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                let offset = (start + 4 * k) as u64;
                return Err(Error::format(offset, format!("non-finite amplitude {v}")));
            }
            values.push(v as f64);
        }
        let data = Array2::from_shape_vec((h, w), values).expect("payload length checked");
        let bad_meta = |e: Error| Error::format(0, e.to_string());
        Radargram::new(data)
            .and_then(|r| r.with_trace_spacing(spacing))
            .and_then(|r| r.with_time_window(window))
            .and_then(|r| r.with_label(label))
            .map_err(bad_meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Radargram> {
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file))
    }
}

fn parse_field<T: std::str::FromStr>(text: &str, name: &str, offset: usize) -> Result<T> {
    text.parse()
        .map_err(|_| Error::format(offset as u64, format!("cannot parse {name} from {text:?}")))
}

/// For each output index: (lower source index, upper source index, weight of upper).
fn corner_aligned_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            // Exact rational position i*(src-1)/(dst-1).
            let num = i * (src - 1);
            let den = dst - 1;
            let lo = num / den;
            let rem = num % den;
            if rem == 0 {
                (lo, lo, 0.0)
            } else {
                (lo, (lo + 1).min(src - 1), rem as f64 / den as f64)
            }
        })
        .collect()
}

/// Linear interpolation clamped to the segment, so outputs never leave the
/// input range through rounding.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 || a == b {
        return a;
    }
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Hybrid,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Hybrid => "hybrid",
        }
    }
}

/// A supervised training unit: raw scan and its clutter-free counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    raw: Radargram,
    clutter_free: Radargram,
    provenance: Provenance,
}

impl DatasetPair {
    pub fn new(raw: Radargram, clutter_free: Radargram, provenance: Provenance) -> Result<Self> {
        if raw.dim() != clutter_free.dim() {
            return Err(Error::invalid(format!(
                "pair shapes differ: raw {:?}, clutter-free {:?}",
                raw.dim(),
                clutter_free.dim()
            )));
        }
        Ok(DatasetPair {
            raw,
            clutter_free,
            provenance,
        })
    }

    pub fn raw(&self) -> &Radargram {
        &self.raw
    }

    pub fn clutter_free(&self) -> &Radargram {
        &self.clutter_free
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> (usize, usize) {
        self.raw.dim()
    }

    /// Resize both scans to `height × width`, then normalise each to `[0, 1]`.
    pub fn prepare(&self, height: usize, width: usize) -> Result<DatasetPair> {
        let raw = self.raw.resize_bilinear(height, width)?.normalize_unit();
        let clutter_free = self.clutter_free.resize_bilinear(height, width)?.normalize_unit();
        DatasetPair::new(raw, clutter_free, self.provenance)
    }

    /// Same column window applied to both scans.
    pub fn crop_window(&self, start_col: usize, width: usize) -> Result<DatasetPair> {
        DatasetPair::new(
            self.raw.crop_window(start_col, width)?,
            self.clutter_free.crop_window(start_col, width)?,
            self.provenance,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<DatasetPair>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(pairs: Vec<DatasetPair>, seed: u64) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let dim = first.dim();
            if let Some(bad) = pairs.iter().position(|p| p.dim() != dim) {
                return Err(Error::invalid(format!(
                    "pair {bad} has shape {:?}, expected {dim:?}",
                    pairs[bad].dim()
                )));
            }
        }
        Ok(Dataset { pairs, seed })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> Option<(usize, usize)> {
        self.pairs.first().map(DatasetPair::dim)
    }

    /// Column-window augmentation: every pair is cropped to each 1-based
    /// `(start, width)` window in turn.
    pub fn augment_windows(&self, windows: &[(usize, usize)]) -> Result<Dataset> {
        let mut pairs = Vec::with_capacity(self.pairs.len() * windows.len());
        for pair in &self.pairs {
            for &(start, width) in windows {
                pairs.push(pair.crop_window(start, width)?);
            }
        }
        Dataset::new(pairs, self.seed)
    }
}
