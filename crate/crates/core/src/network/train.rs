use std::fmt::Write as _;

use log::{debug, info};
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::CrNetModel;
use super::optim::Adam;
use super::tensor::Tensor4;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::loss_with_grad;
use crate::radargram::{Dataset, Radargram};

/// Loss recorded during training. Step losses are measured on the batch
/// before the update; epoch losses are their means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_lr: Vec<f64>,
    pub step_loss: Vec<f64>,
}

impl TrainHistory {
    pub fn steps(&self) -> usize {
        self.step_loss.len()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.epoch_loss.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }

    /// `epoch,lr,mean_loss`
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,lr,mean_loss\n");
        for (e, (loss, lr)) in self.epoch_loss.iter().zip(&self.epoch_lr).enumerate() {
            let _ = writeln!(out, "{e},{lr:e},{loss:?}");
        }
        out
    }

    /// `step,loss`
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (k, loss) in self.step_loss.iter().enumerate() {
            let _ = writeln!(out, "{k},{loss:?}");
        }
        out
    }
}

fn stack(images: &[ArrayView2<f64>]) -> Tensor4 {
    let (h, w) = images[0].dim();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        data.extend(img.iter().copied());
    }
    Tensor4::from_vec([images.len(), 1, h, w], data).expect("stacked shape")
}

/// Mini-batch Adam training on `(raw, clutter_free)` pairs. Deterministic
/// for a fixed `cfg.seed` and model initialisation.
pub fn train(model: &mut CrNetModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let (h, w) = data.dim().ok_or_else(|| Error::invalid("training set is empty"))?;
    let m = model.config().spatial_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(Error::invalid(format!(
            "training scans are {h}x{w}; both sides must be multiples of {m}, resize the dataset first"
        )));
    }
    cfg.ms_ssim.resolve_scales(h, w)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::from_config(cfg);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|cap| steps >= cap) {
                break;
            }
            let inputs: Vec<_> = chunk.iter().map(|&i| data.pairs[i].raw().data()).collect();
            let targets: Vec<_> = chunk.iter().map(|&i| data.pairs[i].clutter_free().data()).collect();
            let x = stack(&inputs);
            let y = model.forward_train(&x)?;
            let n = chunk.len() as f64;
            let mut grad = Tensor4::zeros(y.shape());
            let mut total = 0.0;
            for (b, target) in targets.iter().enumerate() {
                let pred = y.plane(b, 0);
                let (parts, g) = loss_with_grad(cfg.loss, pred, *target, &cfg.ms_ssim)?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch,
                        detail: format!("sample {b}: {parts:?}"),
                    });
                }
                total += parts.total;
                grad.plane_mut(b, 0).zip_mut_with(&g, |d, &v| *d = v / n);
            }
            let loss = total / n;
            model.zero_grad();
            model.backward(&grad);
            adam.step(&mut model.params_mut(), lr);
            debug!("epoch {epoch} batch {batch} loss {loss:.6}");
            history.step_loss.push(loss);
            epoch_losses.push(loss);
            steps += 1;
        }
        if epoch_losses.is_empty() {
            break 'epochs;
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        info!("epoch {epoch}: lr {lr:e}, mean loss {mean:.6}");
        history.epoch_loss.push(mean);
        history.epoch_lr.push(lr);
    }
    Ok(history)
}

/// Edge-replicating pad of `a` to `(h, w)`.
fn pad_edge(a: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (ah, aw) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[[i.min(ah - 1), j.min(aw - 1)]])
}

/// Normalises `r` to `[0, 1]`, pads it to the network's spatial multiple,
/// runs the evaluation-mode forward pass and crops back to the input size.
pub fn predict(model: &CrNetModel, r: &Radargram) -> Result<Radargram> {
    let (h, w) = r.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot predict on an empty scan"));
    }
    let m = model.config().spatial_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let norm = r.normalize_unit();
    let padded = pad_edge(norm.data(), ph, pw);
    let x = Tensor4::from_vec([1, 1, ph, pw], padded.into_raw_vec_and_offset().0)?;
    let y = model.infer(&x)?;
    let out = y.plane(0, 0).slice(s![..h, ..w]).to_owned();
    r.with_data(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckOptions {
    pub step: f64,
    /// Entries sampled per parameter group; groups this small are checked in full.
    pub samples_per_group: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradientCheckOptions {
    fn default() -> Self {
        GradientCheckOptions {
            step: 1e-5,
            samples_per_group: 6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    /// Sampled entries that sit on a non-differentiable point.
    pub kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative gap between one-sided slopes that marks a non-differentiable point.
const KINK_JUMP: f64 = 1e-2;

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares back-propagated gradients of every parameter group against
/// central differences of `Σ p ⊙ forward_train(x)` for a fixed random `p`.
/// Works on a copy; `model` is not modified.
pub fn gradient_check(model: &CrNetModel, x: &Tensor4, opts: &GradientCheckOptions) -> Result<GradientReport> {
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let out = probe.forward_train(x)?;
    let proj = Tensor4::from_fn(out.shape(), |_| rng.sample(StandardNormal));
    probe.zero_grad();
    probe.backward(&proj);
    let names = probe.param_names();
    let analytic: Vec<Vec<f64>> = probe.params_mut().iter().map(|p| p.grad.clone()).collect();

    let objective = |m: &mut CrNetModel| -> Result<f64> {
        let y = m.forward_train(x)?;
        Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let mut groups = Vec::with_capacity(names.len());
    let mut worst: f64 = 0.0;
    for (g, (name, grads)) in names.into_iter().zip(&analytic).enumerate() {
        let len = grads.len();
        let picks: Vec<usize> = if len <= opts.samples_per_group {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, opts.samples_per_group).into_vec()
        };
        let mut group_worst: f64 = 0.0;
        let mut kinks = 0;
        for &k in &picks {
            let original = probe.params_mut()[g].value[k];
            probe.params_mut()[g].value[k] = original + opts.step;
            let plus = objective(&mut probe)?;
            probe.params_mut()[g].value[k] = original - opts.step;
            let minus = objective(&mut probe)?;
            probe.params_mut()[g].value[k] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let mut err = relative_error(grads[k], numeric);
            if err > opts.tolerance {
                // Across a ReLU or max-pool switch the one-sided slopes differ;
                // there the analytic value must match one of them.
                let centre = objective(&mut probe)?;
                let right = (plus - centre) / opts.step;
                let left = (centre - minus) / opts.step;
                if relative_error(right, left) > KINK_JUMP {
                    kinks += 1;
                    err = relative_error(grads[k], right).min(relative_error(grads[k], left));
                }
            }
            group_worst = group_worst.max(err);
        }
        worst = worst.max(group_worst);
        groups.push(GroupCheck {
            name,
            checked: picks.len(),
            kinks,
            max_rel_error: group_worst,
        });
    }
    Ok(GradientReport {
        groups,
        max_rel_error: worst,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{LossKind, MsSsimConfig};
    use crate::network::CrNetConfig;
    use crate::radargram::{DatasetPair, Provenance};

    fn toy_dataset(count: usize, h: usize, w: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..count)
            .map(|_| {
                let apex: f64 = rng.random_range(0.3..0.7) * h as f64;
                let x0: f64 = rng.random_range(0.3..0.7) * w as f64;
                let clean = Array2::from_shape_fn((h, w), |(i, j)| {
                    let t = ((apex * apex + ((j as f64 - x0) * 1.5).powi(2)).sqrt() - i as f64) / 2.0;
                    0.5 + 0.4 * (-t * t).exp()
                });
                let raw = Array2::from_shape_fn((h, w), |(i, j)| {
                    clean[[i, j]] + 0.3 * (-((i as f64 - 3.0) / 1.5).powi(2)).exp() + 0.01 * (j as f64 * 0.7).sin()
                });
                DatasetPair::new(
                    Radargram::new(raw).unwrap(),
                    Radargram::new(clean).unwrap(),
                    Provenance::Simulated,
                )
                .unwrap()
            })
            .collect();
        Dataset::new(pairs, seed).unwrap()
    }

    fn toy_config(loss: LossKind) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs: 2,
            lr: 1e-3,
            loss,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset(4, 32, 16, 1);
        let cfg = toy_config(LossKind::Combined);
        let run = || {
            let mut model = CrNetModel::new(CrNetConfig::with_base_width(4)).unwrap();
            let h = train(&mut model, &data, &cfg).unwrap();
            let params: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.value.clone()).collect();
            (h, params)
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.steps(), 4);
        assert_eq!(h1.epoch_loss.len(), 2);
    }

    #[test]
    fn mse_selector_trains_on_squared_error() {
        let data = toy_dataset(2, 16, 16, 2);
        let mut cfg = toy_config(LossKind::Mse);
        cfg.epochs = 1;
        cfg.batch_size = 2;
        let base = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let mut model = base.clone();
        let history = train(&mut model, &data, &cfg).unwrap();

        // Oracle: the first recorded loss is the batch-mean MSE of the initial model.
        let mut probe = base.clone();
        let x = stack(&data.pairs.iter().map(|p| p.raw().data()).collect::<Vec<_>>());
        let y = probe.forward_train(&x).unwrap();
        let mut expected = 0.0;
        for (b, pair) in data.pairs.iter().enumerate() {
            let diff = &y.plane(b, 0) - &pair.clutter_free().data();
            expected += diff.mapv(|d| d * d).mean().unwrap();
        }
        expected /= 2.0;
        // Batch order is shuffled; the mean over the full batch is order-free.
        assert!((history.step_loss[0] - expected).abs() <= 1e-12, "{} vs {expected}", history.step_loss[0]);

        let mut combined = base.clone();
        let other = train(&mut combined, &data, &toy_config(LossKind::Combined)).unwrap();
        assert_ne!(history.step_loss[0], other.step_loss[0]);
    }

    #[test]
    fn combined_loss_mostly_decreases_on_one_pair() {
        let data = toy_dataset(1, 32, 16, 3);
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 51,
            lr: 1e-3,
            seed: 5,
            ms_ssim: MsSsimConfig::default(),
            ..TrainConfig::default()
        };
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(4)).unwrap();
        let history = train(&mut model, &data, &cfg).unwrap();
        let losses = &history.step_loss;
        let non_increasing = losses.windows(2).filter(|p| p[1] <= p[0]).count();
        assert!(non_increasing >= 45, "{non_increasing} of 50 steps non-increasing: {losses:?}");
    }

    #[test]
    fn max_steps_caps_training() {
        let data = toy_dataset(4, 16, 16, 6);
        let mut cfg = toy_config(LossKind::Mae);
        cfg.epochs = 10;
        cfg.max_steps = Some(3);
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let h = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(h.steps(), 3);
        assert_eq!(h.epoch_loss.len(), 2);
        assert!(h.epochs_csv().starts_with("epoch,lr,mean_loss\n0,"));
    }

    #[test]
    fn rejects_bad_training_input() {
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let data = toy_dataset(2, 20, 16, 7);
        assert!(train(&mut model, &data, &toy_config(LossKind::Mae)).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        model.output.bias.value[0] = f64::NAN;
        let data = toy_dataset(2, 16, 16, 8);
        let err = train(&mut model, &data, &toy_config(LossKind::Mae)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0, .. }), "{err}");
    }

    #[test]
    fn predict_preserves_shape_and_is_repeatable() {
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let data = toy_dataset(2, 16, 16, 9);
        train(&mut model, &data, &toy_config(LossKind::Mae)).unwrap();
        let r = Radargram::new(Array2::from_shape_fn((37, 21), |(i, j)| (i * j) as f64 - 3.0))
            .unwrap()
            .with_label("probe")
            .unwrap();
        let a = predict(&model, &r).unwrap();
        let b = predict(&model, &r).unwrap();
        assert_eq!(a.dim(), (37, 21));
        assert_eq!(a.label(), "probe");
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor4::from_fn([1, 1, 16, 16], |_| rng.random::<f64>());
        let report = gradient_check(&model, &x, &GradientCheckOptions::default()).unwrap();
        assert!(report.passed(), "max rel error {}: {:?}", report.max_rel_error, report.groups);
        assert!(report.groups.iter().all(|g| g.checked > 0));
    }
}
