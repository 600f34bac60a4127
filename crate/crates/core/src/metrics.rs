//! Full-reference metrics (MAE, MSE, PSNR, MS-SSIM), field metrics (SCR and
//! the improvement factor) and the training losses built from them.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Calibrated per-scale exponents for five scales (Wang et al.).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_shapes(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty images"));
    }
    Ok(())
}

pub fn mae(y: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    check_shapes(y, gt)?;
    let sum: f64 = Zip::from(&y).and(&gt).fold(0.0, |acc, a, b| acc + (a - b).abs());
    Ok(sum / y.len() as f64)
}

pub fn mse(y: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    check_shapes(y, gt)?;
    let sum: f64 = Zip::from(&y).and(&gt).fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok(sum / y.len() as f64)
}

/// PSNR in dB for unit dynamic range; identical images give `+∞`.
pub fn psnr(y: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    Ok(psnr_from_mse(mse(y, gt)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// How local means, variances and covariance are gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistics {
    /// Gaussian-weighted sliding window, valid positions only.
    Windowed,
    /// One set of moments over the whole image per scale.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    /// Number of scales; `None` picks the most that fit, up to five.
    pub scales: Option<usize>,
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Base exponents, one per scale; the active prefix is renormalised.
    pub weights: Vec<f64>,
    pub statistics: Statistics,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            scales: None,
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            weights: MS_SSIM_WEIGHTS.to_vec(),
            statistics: Statistics::Windowed,
        }
    }
}

impl MsSsimConfig {
    pub fn single_scale() -> Self {
        MsSsimConfig {
            scales: Some(1),
            ..Default::default()
        }
    }

    /// Largest scale count whose coarsest image still holds one window.
    pub fn max_scales(&self, height: usize, width: usize) -> usize {
        let need = match self.statistics {
            Statistics::Windowed => self.window_size,
            Statistics::Global => 1,
        };
        let mut m = 0;
        let (mut h, mut w) = (height, width);
        while h >= need && w >= need && m < self.weights.len() {
            m += 1;
            h /= 2;
            w /= 2;
        }
        m
    }

    pub fn resolve_scales(&self, height: usize, width: usize) -> Result<usize> {
        if self.window_size == 0 || self.window_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("window size must be odd, got {}", self.window_size)));
        }
        let max = self.max_scales(height, width);
        match self.scales {
            Some(0) => Err(Error::invalid("MS-SSIM needs at least one scale")),
            Some(m) if m > max => Err(Error::invalid(format!(
                "{height}x{width} image supports at most M={max} scales with window {}, requested {m}",
                self.window_size
            ))),
            Some(m) => Ok(m),
            None if max == 0 => Err(Error::invalid(format!(
                "{height}x{width} image is smaller than the {} window (maximum admissible M=0)",
                self.window_size
            ))),
            None => Ok(max),
        }
    }

    /// Exponents for `m` active scales, summing to one.
    pub fn scale_weights(&self, m: usize) -> Vec<f64> {
        let active = &self.weights[..m];
        let total: f64 = active.iter().sum();
        active.iter().map(|w| w / total).collect()
    }

    fn constants(&self) -> (f64, f64) {
        let c1 = (self.k1 * self.dynamic_range).powi(2);
        let c2 = (self.k2 * self.dynamic_range).powi(2);
        (c1, c2)
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Linear moment operator: Gaussian valid filtering or a global mean.
enum Moments {
    Window(Vec<f64>),
    Global,
}

impl Moments {
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Moments::Global => Array2::from_elem((1, 1), x.mean().expect("non-empty")),
            Moments::Window(k) => {
                let n = k.len();
                let (h, w) = x.dim();
                let (oh, ow) = (h + 1 - n, w + 1 - n);
                let mut tmp = Array2::<f64>::zeros((h, ow));
                for i in 0..h {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for (t, kv) in k.iter().enumerate() {
                            acc += kv * x[[i, j + t]];
                        }
                        tmp[[i, j]] = acc;
                    }
                }
                let mut out = Array2::<f64>::zeros((oh, ow));
                for i in 0..oh {
                    for (t, kv) in k.iter().enumerate() {
                        let src = tmp.row(i + t);
                        let mut dst = out.row_mut(i);
                        dst.scaled_add(*kv, &src);
                    }
                }
                out
            }
        }
    }

    /// Adjoint of [`Moments::apply`] back onto an `h × w` image.
    fn transpose(&self, g: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
        match self {
            Moments::Global => Array2::from_elem((h, w), g[[0, 0]] / (h * w) as f64),
            Moments::Window(k) => {
                let n = k.len();
                let (oh, ow) = g.dim();
                let mut tmp = Array2::<f64>::zeros((h, ow));
                for i in 0..oh {
                    for (t, kv) in k.iter().enumerate() {
                        let src = g.row(i);
                        let mut dst = tmp.row_mut(i + t);
                        dst.scaled_add(*kv, &src);
                    }
                }
                let mut out = Array2::<f64>::zeros((h, w));
                for i in 0..h {
                    for j in 0..ow {
                        let v = tmp[[i, j]];
                        for (t, kv) in k.iter().enumerate() {
                            out[[i, j + t]] += kv * v;
                        }
                    }
                }
                debug_assert_eq!(out.ncols(), ow + n - 1);
                out
            }
        }
    }
}

fn downsample2(x: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = (x.nrows() / 2, x.ncols() / 2);
    Array2::from_shape_fn((h, w), |(i, j)| {
        0.25 * (x[[2 * i, 2 * j]] + x[[2 * i + 1, 2 * j]] + x[[2 * i, 2 * j + 1]] + x[[2 * i + 1, 2 * j + 1]])
    })
}

fn downsample2_transpose(g: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((h, w));
    for ((i, j), &v) in g.indexed_iter() {
        let q = 0.25 * v;
        out[[2 * i, 2 * j]] += q;
        out[[2 * i + 1, 2 * j]] += q;
        out[[2 * i, 2 * j + 1]] += q;
        out[[2 * i + 1, 2 * j + 1]] += q;
    }
    out
}

/// Per-scale SSIM ingredients kept for the backward pass.
struct ScaleTerms {
    mx: Array2<f64>,
    my: Array2<f64>,
    cs_num: Array2<f64>,
    cs_den: Array2<f64>,
    l_num: Array2<f64>,
    l_den: Array2<f64>,
}

impl ScaleTerms {
    fn new(x: ArrayView2<f64>, y: ArrayView2<f64>, moments: &Moments, c1: f64, c2: f64) -> Self {
        let mx = moments.apply(x);
        let my = moments.apply(y);
        let exx = moments.apply((&x * &x).view());
        let eyy = moments.apply((&y * &y).view());
        let exy = moments.apply((&x * &y).view());
        let vx = &exx - &mx * &mx;
        let vy = &eyy - &my * &my;
        let cxy = &exy - &mx * &my;
        let cs_num = cxy.mapv(|v| 2.0 * v + c2);
        let cs_den = (&vx + &vy).mapv(|v| v + c2);
        let l_num = (&mx * &my).mapv(|v| 2.0 * v + c1);
        let l_den = (&mx * &mx + &my * &my).mapv(|v| v + c1);
        ScaleTerms {
            mx,
            my,
            cs_num,
            cs_den,
            l_num,
            l_den,
        }
    }

    /// Mean contrast-structure term, or mean full SSIM when `with_luminance`.
    fn value(&self, with_luminance: bool) -> f64 {
        let cs = &self.cs_num / &self.cs_den;
        if with_luminance {
            (&cs * &self.l_num / &self.l_den).mean().expect("non-empty")
        } else {
            cs.mean().expect("non-empty")
        }
    }

    /// Gradient of [`ScaleTerms::value`] with respect to `x`, scaled by `dv`.
    fn backward(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        moments: &Moments,
        with_luminance: bool,
        dv: f64,
    ) -> Array2<f64> {
        let n = self.mx.len() as f64;
        let dmap = dv / n;
        let cs = &self.cs_num / &self.cs_den;
        let (d_cs, d_mx_lum) = if with_luminance {
            let l = &self.l_num / &self.l_den;
            let d_l = cs.mapv(|c| c * dmap);
            // d l / d mx = 2 my / Q − P · 2 mx / Q².
            let mut d_mx = Array2::<f64>::zeros(self.mx.dim());
            Zip::from(&mut d_mx)
                .and(&d_l)
                .and(&self.mx)
                .and(&self.my)
                .and(&self.l_num)
                .and(&self.l_den)
                .for_each(|o, &dl, &mx, &my, &p, &q| {
                    *o = dl * (2.0 * my / q - p * 2.0 * mx / (q * q));
                });
            (l.mapv(|v| v * dmap), d_mx)
        } else {
            (Array2::from_elem(cs.dim(), dmap), Array2::zeros(self.mx.dim()))
        };
        // cs = A / B, A = 2 cxy + C2, B = vx + vy + C2.
        let d_cxy = Zip::from(&d_cs).and(&self.cs_den).map_collect(|&d, &b| 2.0 * d / b);
        let d_vx = Zip::from(&d_cs)
            .and(&self.cs_num)
            .and(&self.cs_den)
            .map_collect(|&d, &a, &b| -d * a / (b * b));
        // vx = exx − mx², cxy = exy − mx·my.
        let d_mx = &d_mx_lum - &(&self.mx * &d_vx * 2.0) - &(&self.my * &d_cxy);
        let (h, w) = x.dim();
        let g_mx = moments.transpose(d_mx.view(), h, w);
        let g_exx = moments.transpose(d_vx.view(), h, w);
        let g_exy = moments.transpose(d_cxy.view(), h, w);
        g_mx + &(&x * &g_exx * 2.0) + &(&y * &g_exy)
    }
}

struct MsSsimEval {
    value: f64,
    grad: Option<Array2<f64>>,
}

fn ms_ssim_impl(y: ArrayView2<f64>, gt: ArrayView2<f64>, cfg: &MsSsimConfig, want_grad: bool) -> Result<MsSsimEval> {
    check_shapes(y, gt)?;
    let (h, w) = y.dim();
    let m = cfg.resolve_scales(h, w)?;
    let weights = cfg.scale_weights(m);
    let (c1, c2) = cfg.constants();
    let moments = match cfg.statistics {
        Statistics::Windowed => Moments::Window(gaussian_kernel(cfg.window_size, cfg.sigma)),
        Statistics::Global => Moments::Global,
    };

    let mut xs = vec![y.to_owned()];
    let mut ys = vec![gt.to_owned()];
    for k in 1..m {
        xs.push(downsample2(xs[k - 1].view()));
        ys.push(downsample2(ys[k - 1].view()));
    }
    let terms: Vec<ScaleTerms> = (0..m)
        .map(|k| ScaleTerms::new(xs[k].view(), ys[k].view(), &moments, c1, c2))
        .collect();
    let values: Vec<f64> = terms.iter().enumerate().map(|(k, t)| t.value(k == m - 1)).collect();

    // One scale is plain SSIM (exponent one) and may be negative; across
    // scales, non-positive factors are clamped to zero before the powers.
    let value = if m == 1 {
        values[0]
    } else if values.iter().any(|&v| v <= 0.0) {
        0.0
    } else {
        values.iter().zip(&weights).map(|(v, w)| v.powf(*w)).product()
    };
    if !want_grad {
        return Ok(MsSsimEval { value, grad: None });
    }

    let mut grad = Array2::<f64>::zeros(xs[m - 1].dim());
    for k in (0..m).rev() {
        let dv = if m == 1 {
            1.0
        } else if value == 0.0 {
            0.0
        } else {
            value * weights[k] / values[k]
        };
        if k < m - 1 {
            let (hk, wk) = xs[k].dim();
            grad = downsample2_transpose(grad.view(), hk, wk);
        }
        if dv != 0.0 {
            grad += &terms[k].backward(xs[k].view(), ys[k].view(), &moments, k == m - 1, dv);
        }
    }
    Ok(MsSsimEval {
        value,
        grad: Some(grad),
    })
}

/// Multi-scale structural similarity. Each coarser scale is a 2×2 average
/// followed by decimation; luminance enters at the coarsest scale only.
pub fn ms_ssim(y: ArrayView2<f64>, gt: ArrayView2<f64>, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(ms_ssim_impl(y, gt, cfg, false)?.value)
}

/// MS-SSIM and its gradient with respect to `y`.
pub fn ms_ssim_with_grad(y: ArrayView2<f64>, gt: ArrayView2<f64>, cfg: &MsSsimConfig) -> Result<(f64, Array2<f64>)> {
    let eval = ms_ssim_impl(y, gt, cfg, true)?;
    Ok((eval.value, eval.grad.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `MAE + (1 − MS-SSIM)`.
    #[default]
    Combined,
    Mae,
    Mse,
    MsSsim,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Combined => "combined",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
            LossKind::MsSsim => "msssim",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(LossKind::Combined),
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            "msssim" | "ms-ssim" => Ok(LossKind::MsSsim),
            _ => Err(Error::invalid(format!("unknown loss {s:?} (combined|mae|mse|msssim)"))),
        }
    }
}

/// Loss value with its components, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub ms_ssim: Option<f64>,
}

pub fn combined_loss(y: ArrayView2<f64>, gt: ArrayView2<f64>, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(mae(y, gt)? + 1.0 - ms_ssim(y, gt, cfg)?)
}

/// Loss of the selected kind and its gradient with respect to `y`.
pub fn loss_with_grad(
    kind: LossKind,
    y: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    cfg: &MsSsimConfig,
) -> Result<(LossParts, Array2<f64>)> {
    check_shapes(y, gt)?;
    let n = y.len() as f64;
    let mut parts = LossParts::default();
    let mut grad = Array2::<f64>::zeros(y.dim());
    if matches!(kind, LossKind::Combined | LossKind::Mae) {
        parts.mae = Some(mae(y, gt)?);
        Zip::from(&mut grad).and(&y).and(&gt).for_each(|g, &a, &b| {
            let d = a - b;
            *g += if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        });
    }
    if kind == LossKind::Mse {
        parts.mse = Some(mse(y, gt)?);
        Zip::from(&mut grad).and(&y).and(&gt).for_each(|g, &a, &b| *g += 2.0 * (a - b) / n);
    }
    if matches!(kind, LossKind::Combined | LossKind::MsSsim) {
        let (v, g) = ms_ssim_with_grad(y, gt, cfg)?;
        parts.ms_ssim = Some(v);
        grad -= &g;
    }
    parts.total = parts.mae.unwrap_or(0.0) + parts.mse.unwrap_or(0.0) + parts.ms_ssim.map_or(0.0, |v| 1.0 - v);
    Ok((parts, grad))
}

pub fn loss(kind: LossKind, y: ArrayView2<f64>, gt: ArrayView2<f64>, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(match kind {
        LossKind::Combined => combined_loss(y, gt, cfg)?,
        LossKind::Mae => mae(y, gt)?,
        LossKind::Mse => mse(y, gt)?,
        LossKind::MsSsim => 1.0 - ms_ssim(y, gt, cfg)?,
    })
}

/// Boolean target region; `true` marks target pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMask {
    mask: Array2<bool>,
}

impl TargetMask {
    /// Requires at least one target and one clutter pixel.
    pub fn new(mask: Array2<bool>) -> Result<Self> {
        let targets = mask.iter().filter(|&&m| m).count();
        if targets == 0 || targets == mask.len() {
            return Err(Error::invalid(format!(
                "mask needs both regions, has {targets} of {} target pixels",
                mask.len()
            )));
        }
        Ok(TargetMask { mask })
    }

    /// Rectangle of rows `r0..r1` and columns `c0..c1` (half-open, 0-based).
    pub fn rectangle(dim: (usize, usize), rows: (usize, usize), cols: (usize, usize)) -> Result<Self> {
        if rows.1 > dim.0 || cols.1 > dim.1 || rows.0 >= rows.1 || cols.0 >= cols.1 {
            return Err(Error::invalid(format!("rectangle {rows:?}x{cols:?} outside {dim:?}")));
        }
        let mut mask = Array2::from_elem(dim, false);
        mask.slice_mut(s![rows.0..rows.1, cols.0..cols.1]).fill(true);
        Self::new(mask)
    }

    pub fn view(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn target_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Target region where `|gt| ≥ frac · max|gt|`.
pub fn mask_from_ground_truth(gt: ArrayView2<f64>, frac: f64) -> Result<TargetMask> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::invalid(format!("mask fraction must lie in (0, 1], got {frac}")));
    }
    let peak = gt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::invalid("ground truth is all zeros: no target region"));
    }
    TargetMask::new(gt.mapv(|v| v.abs() >= frac * peak))
}

/// Subtracts the median so the background sits at zero amplitude. Scans
/// normalised to `[0, 1]` carry a background offset that would otherwise
/// dominate absolute-amplitude metrics.
pub fn zero_referenced(r: ArrayView2<f64>) -> Array2<f64> {
    let mut values: Vec<f64> = r.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    r.mapv(|v| v - median)
}

/// Signal-to-clutter ratio: peak `|r|` inside the mask over peak `|r|`
/// outside. A silent clutter region gives `+∞`.
pub fn scr(r: ArrayView2<f64>, mask: &TargetMask) -> Result<f64> {
    if r.dim() != mask.dim() {
        return Err(Error::invalid(format!("mask {:?} does not match scan {:?}", mask.dim(), r.dim())));
    }
    let (mut signal, mut clutter) = (0.0f64, 0.0f64);
    Zip::from(&r).and(&mask.mask).for_each(|&v, &m| {
        if m {
            signal = signal.max(v.abs());
        } else {
            clutter = clutter.max(v.abs());
        }
    });
    Ok(if clutter == 0.0 {
        f64::INFINITY
    } else {
        signal / clutter
    })
}

/// Improvement factor `20·log10(SCR_processed / SCR_raw)` in dB.
pub fn improvement_factor(raw: ArrayView2<f64>, processed: ArrayView2<f64>, mask: &TargetMask) -> Result<f64> {
    let before = scr(raw, mask)?;
    let after = scr(processed, mask)?;
    Ok(improvement_from_scr(before, after))
}

pub fn improvement_from_scr(scr_raw: f64, scr_processed: f64) -> f64 {
    if scr_processed.is_infinite() {
        return f64::INFINITY;
    }
    if scr_raw.is_infinite() {
        return f64::NEG_INFINITY;
    }
    20.0 * (scr_processed.log10() - scr_raw.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn mae_examples() {
        let gt = array![[0.5, 0.5]];
        assert_eq!(mae(gt.view(), gt.view()).unwrap(), 0.0);
        assert_eq!(mae(array![[0.0, 0.5]].view(), gt.view()).unwrap(), 0.25);
        let y = gt.mapv(|v| v + 0.5);
        assert_eq!(mae(y.view(), gt.view()).unwrap(), 0.5);
        assert!(mae(array![[0.0]].view(), gt.view()).is_err());
    }

    #[test]
    fn mse_psnr_examples() {
        assert_eq!(psnr_from_mse(1e-4), 40.0);
        let gt = array![[1.0, 1.0]];
        assert_eq!(mse(gt.view(), gt.view()).unwrap(), 0.0);
        assert_eq!(psnr(gt.view(), gt.view()).unwrap(), f64::INFINITY);
        let y = array![[0.0, 1.0]];
        assert_eq!(mse(y.view(), gt.view()).unwrap(), 0.5);
        assert!((psnr(y.view(), gt.view()).unwrap() - 3.010_299_956_639_812).abs() < 1e-12);
    }

    /// Direct luminance term of a pair of constant images.
    fn constant_luminance(a: f64, b: f64) -> f64 {
        let c1 = (0.01f64).powi(2);
        (2.0 * a * b + c1) / (a * a + b * b + c1)
    }

    #[test]
    fn ms_ssim_constant_images_closed_form() {
        let lum = constant_luminance(0.2, 0.8);
        assert!((lum - 0.3201 / 0.6801).abs() < 1e-15);
        assert!((lum - 0.47066).abs() < 1e-5);
        let ya = Array2::from_elem((64, 48), 0.2);
        let yb = Array2::from_elem((64, 48), 0.8);
        let single = ms_ssim(ya.view(), yb.view(), &MsSsimConfig::single_scale()).unwrap();
        assert!((single - lum).abs() < 1e-9, "{single} vs {lum}");
        let cfg = MsSsimConfig::default();
        let m = cfg.resolve_scales(64, 48).unwrap();
        assert_eq!(m, 3);
        let multi = ms_ssim(ya.view(), yb.view(), &cfg).unwrap();
        let w_top = cfg.scale_weights(m)[m - 1];
        assert!((multi - lum.powf(w_top)).abs() < 1e-9);
        let global = MsSsimConfig {
            statistics: Statistics::Global,
            ..MsSsimConfig::single_scale()
        };
        let g = ms_ssim(ya.view(), yb.view(), &global).unwrap();
        // Raw-moment variance of a constant leaves ~1e-15 of cancellation error.
        assert!((g - lum).abs() < 1e-10, "{g} vs {lum}");
    }

    #[test]
    fn ms_ssim_scale_selection() {
        let cfg = MsSsimConfig::default();
        assert_eq!(cfg.resolve_scales(256, 64).unwrap(), 3);
        assert_eq!(cfg.resolve_scales(176, 176).unwrap(), 5);
        assert_eq!(cfg.resolve_scales(64, 32).unwrap(), 2);
        assert_eq!(cfg.resolve_scales(16, 16).unwrap(), 1);
        let err = cfg.resolve_scales(8, 8).unwrap_err().to_string();
        assert!(err.contains("M=0"), "{err}");
        let err = MsSsimConfig { scales: Some(4), ..Default::default() }
            .resolve_scales(256, 64)
            .unwrap_err()
            .to_string();
        assert!(err.contains("M=3"), "{err}");
        let small = MsSsimConfig { window_size: 7, ..Default::default() };
        assert_eq!(small.resolve_scales(64, 32).unwrap(), 3);
        for m in 1..=5 {
            let total: f64 = cfg.scale_weights(m).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn ms_ssim_single_scale_matches_direct_ssim() {
        // Brute-force windowed SSIM: explicit loops over window positions.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 20, 17);
        let y = random_image(&mut rng, 20, 17);
        let k = gaussian_kernel(11, 1.5);
        let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..10 {
            for j in 0..7 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..11 {
                    for b in 0..11 {
                        let wgt = k[a] * k[b];
                        let (p, q) = (x[[i + a, j + b]], y[[i + a, j + b]]);
                        mx += wgt * p;
                        my += wgt * q;
                        xx += wgt * p * p;
                        yy += wgt * q * q;
                        xy += wgt * p * q;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let (sx, sy) = (vx.sqrt(), vy.sqrt());
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
                let s = (cxy + c2 / 2.0) / (sx * sy + c2 / 2.0);
                total += l * c * s;
                count += 1.0;
            }
        }
        let direct = total / count;
        let got = ms_ssim(x.view(), y.view(), &MsSsimConfig::single_scale()).unwrap();
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
    }

    fn finite_difference_check(cfg: &MsSsimConfig, h: usize, w: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_image(&mut rng, h, w);
        // A correlated prediction keeps every scale term positive.
        let y = &gt * 0.7 + &random_image(&mut rng, h, w) * 0.3;
        let (_, grad) = ms_ssim_with_grad(y.view(), gt.view(), cfg).unwrap();
        let step = 1e-5;
        for _ in 0..40 {
            let (i, j) = (rng.random_range(0..h), rng.random_range(0..w));
            let mut plus = y.clone();
            plus[[i, j]] += step;
            let mut minus = y.clone();
            minus[[i, j]] -= step;
            let numeric = (ms_ssim(plus.view(), gt.view(), cfg).unwrap()
                - ms_ssim(minus.view(), gt.view(), cfg).unwrap())
                / (2.0 * step);
            let analytic = grad[[i, j]];
            // Floor near the central-difference round-off, eps / step.
            let scale = analytic.abs().max(numeric.abs()).max(1e-4);
            assert!((analytic - numeric).abs() / scale < 1e-5, "({i},{j}): {analytic} vs {numeric}");
        }
    }

    #[test]
    fn ms_ssim_gradient_matches_finite_differences() {
        finite_difference_check(&MsSsimConfig::default(), 48, 40, 1);
        finite_difference_check(&MsSsimConfig::single_scale(), 24, 16, 2);
        finite_difference_check(
            &MsSsimConfig {
                statistics: Statistics::Global,
                scales: Some(3),
                ..Default::default()
            },
            17,
            23,
            3,
        );
        finite_difference_check(&MsSsimConfig { window_size: 7, ..Default::default() }, 64, 32, 4);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_image(&mut rng, 32, 32);
        let y = &gt * 0.6 + &random_image(&mut rng, 32, 32) * 0.4;
        let cfg = MsSsimConfig::default();
        for kind in [LossKind::Combined, LossKind::Mae, LossKind::Mse, LossKind::MsSsim] {
            let (parts, grad) = loss_with_grad(kind, y.view(), gt.view(), &cfg).unwrap();
            assert!((parts.total - loss(kind, y.view(), gt.view(), &cfg).unwrap()).abs() < 1e-14);
            for _ in 0..10 {
                let (i, j) = (rng.random_range(0..32), rng.random_range(0..32));
                let step = 1e-7;
                let mut plus = y.clone();
                plus[[i, j]] += step;
                let mut minus = y.clone();
                minus[[i, j]] -= step;
                let numeric = (loss(kind, plus.view(), gt.view(), &cfg).unwrap()
                    - loss(kind, minus.view(), gt.view(), &cfg).unwrap())
                    / (2.0 * step);
                assert!((grad[[i, j]] - numeric).abs() < 1e-6, "{kind}: {} vs {numeric}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn combined_loss_examples() {
        let cfg = MsSsimConfig::default();
        let gt = Array2::from_shape_fn((32, 32), |(i, j)| 0.5 + if (i + j) % 2 == 0 { 0.1 } else { -0.1 });
        let y = Array2::from_elem((32, 32), 0.5);
        assert_eq!(combined_loss(gt.view(), gt.view(), &cfg).unwrap(), 0.0);
        let l = combined_loss(y.view(), gt.view(), &cfg).unwrap();
        let ms = ms_ssim(y.view(), gt.view(), &cfg).unwrap();
        assert!((l - (0.1 + 1.0 - ms)).abs() < 1e-12);
        assert!(l >= 0.0);
    }

    #[test]
    fn scr_examples() {
        let mask = TargetMask::new(array![[true, false, false]]).unwrap();
        let r = array![[0.8, -0.2, 0.1]];
        assert!((scr(r.view(), &mask).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(improvement_factor(r.view(), r.view(), &mask).unwrap(), 0.0);
        let raw = array![[0.5, 0.5, 0.0]];
        let processed = array![[0.8, 0.2, 0.0]];
        let im = improvement_factor(raw.view(), processed.view(), &mask).unwrap();
        assert!((im - 20.0 * 4f64.log10()).abs() < 1e-12);
        assert!((im - 12.041).abs() < 1e-3);
        let silent = array![[0.8, 0.0, 0.0]];
        assert_eq!(scr(silent.view(), &mask).unwrap(), f64::INFINITY);
        assert_eq!(improvement_factor(raw.view(), silent.view(), &mask).unwrap(), f64::INFINITY);
        assert!(TargetMask::new(array![[true, true]]).is_err());
        assert!(TargetMask::new(array![[false, false]]).is_err());
    }

    #[test]
    fn mask_examples() {
        let mut gt = Array2::<f64>::zeros((5, 5));
        gt[[2, 3]] = -0.7;
        let mask = mask_from_ground_truth(gt.view(), 0.5).unwrap();
        assert_eq!(mask.target_pixels(), 1);
        assert!(mask.view()[[2, 3]]);
        assert!(mask_from_ground_truth(Array2::<f64>::zeros((3, 3)).view(), 0.1).is_err());
        let rect = TargetMask::rectangle((4, 4), (1, 3), (0, 2)).unwrap();
        assert_eq!(rect.target_pixels(), 4);
    }

    #[test]
    fn zero_reference_removes_median() {
        let r = array![[0.3, 0.3, 0.3], [0.3, 1.0, 0.0]];
        let z = zero_referenced(r.view());
        assert_eq!(z[[0, 0]], 0.0);
        assert!((z[[1, 1]] - 0.7).abs() < 1e-15);
    }

    fn arb_pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        (11usize..30, 11usize..30).prop_flat_map(|(h, w)| {
            let n = h * w;
            (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(a, b)| {
                    (
                        Array2::from_shape_vec((h, w), a).unwrap(),
                        Array2::from_shape_vec((h, w), b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_errors((a, b) in arb_pair()) {
            prop_assert_eq!(mae(a.view(), b.view()).unwrap(), mae(b.view(), a.view()).unwrap());
            prop_assert_eq!(mse(a.view(), b.view()).unwrap(), mse(b.view(), a.view()).unwrap());
        }

        #[test]
        fn ms_ssim_bounds((a, b) in arb_pair()) {
            let cfg = MsSsimConfig::default();
            let same = ms_ssim(a.view(), a.view(), &cfg).unwrap();
            prop_assert!((same - 1.0).abs() <= 1e-9);
            let v = ms_ssim(a.view(), b.view(), &cfg).unwrap();
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn psnr_consistent((a, b) in arb_pair()) {
            let m = mse(a.view(), b.view()).unwrap();
            prop_assume!(m > 0.0);
            let p = psnr(a.view(), b.view()).unwrap();
            prop_assert!((p - 10.0 * (1.0 / m).log10()).abs() <= 1e-9);
        }

        #[test]
        fn improvement_antisymmetric((a, b) in arb_pair()) {
            let (h, w) = a.dim();
            let mask = TargetMask::rectangle((h, w), (0, h / 2), (0, w)).unwrap();
            let ab = improvement_factor(a.view(), b.view(), &mask).unwrap();
            let ba = improvement_factor(b.view(), a.view(), &mask).unwrap();
            prop_assert!((ab + ba).abs() <= 1e-9);
        }
    }
}
