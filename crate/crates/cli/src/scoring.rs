use anyhow::Result;
use gprd_core::metrics::{improvement_from_scr, zero_referenced};
use gprd_core::{mae, mask_from_ground_truth, ms_ssim, mse, psnr, scr, MsSsimConfig, Radargram};

pub const COLUMNS: [&str; 7] = ["MAE", "MSE", "PSNR", "MS-SSIM", "SCR_raw", "SCR_proc", "Im"];

/// Metrics for one processed scan. All three scans are normalised to
/// `[0, 1]`; SCR uses median-referenced amplitudes and a mask drawn from the
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanScore {
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub scr_raw: f64,
    pub scr_proc: f64,
    pub im: f64,
}

impl ScanScore {
    pub fn values(&self) -> [f64; 7] {
        [self.mae, self.mse, self.psnr, self.ms_ssim, self.scr_raw, self.scr_proc, self.im]
    }

    pub fn mean(scores: &[ScanScore]) -> [f64; 7] {
        let mut acc = [0.0; 7];
        for s in scores {
            for (a, v) in acc.iter_mut().zip(s.values()) {
                *a += v;
            }
        }
        acc.map(|a| a / scores.len() as f64)
    }
}

pub fn score(raw: &Radargram, processed: &Radargram, gt: &Radargram, mask_frac: f64) -> Result<ScanScore> {
    let raw = raw.normalize_unit();
    let processed = processed.normalize_unit();
    let gt = gt.normalize_unit();
    let (y, g) = (processed.data(), gt.data());
    let mask = mask_from_ground_truth(zero_referenced(g).view(), mask_frac)?;
    let scr_raw = scr(zero_referenced(raw.data()).view(), &mask)?;
    let scr_proc = scr(zero_referenced(y).view(), &mask)?;
    Ok(ScanScore {
        mae: mae(y, g)?,
        mse: mse(y, g)?,
        psnr: psnr(y, g)?,
        ms_ssim: ms_ssim(y, g, &MsSsimConfig::default())?,
        scr_raw,
        scr_proc,
        im: improvement_from_scr(scr_raw, scr_proc),
    })
}

pub fn csv_values(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn blob(h: usize, w: usize) -> Radargram {
        Radargram::new(Array2::from_shape_fn((h, w), |(i, j)| {
            let (di, dj) = (i as f64 - 20.0, j as f64 - 10.0);
            (-(di * di + dj * dj) / 8.0).exp()
        }))
        .unwrap()
    }

    #[test]
    fn identical_output_scores_perfectly() {
        let gt = blob(64, 32);
        let s = score(&gt, &gt, &gt, 0.2).unwrap();
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.mse, 0.0);
        assert!((s.ms_ssim - 1.0).abs() <= 1e-12);
        assert!(s.psnr.is_infinite());
        assert_eq!(s.im, 0.0);
    }

    #[test]
    fn removing_a_clutter_band_improves_scr() {
        let gt = blob(64, 32);
        let mut raw = gt.data().to_owned();
        raw.row_mut(5).fill(0.9);
        let raw = gt.with_data(raw).unwrap();
        let s = score(&raw, &gt, &gt, 0.2).unwrap();
        assert!(s.scr_proc > s.scr_raw);
        let want = 20.0 * (s.scr_proc / s.scr_raw).log10();
        assert!((s.im - want).abs() <= 1e-12);
    }
}
