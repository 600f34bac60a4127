//! Encoder-decoder clutter-removal network with residual dense skip blocks.
//!
//! All arithmetic is `f64`. Layers implement their own backward passes; see
//! [`layers`] for the primitives and [`model`] for the assembly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{LossKind, MsSsimConfig};

pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use model::{ConvBnRelu, CrNetModel, DoubleConv, Rdb};
pub use optim::Adam;
pub use tensor::Tensor4;
pub use train::{gradient_check, predict, train, GradientCheckOptions, GradientReport, TrainHistory};

/// Weight initialisation for convolutions. Biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Gaussian with standard deviation `1/sqrt(fan_in)`.
    #[default]
    Scaled,
    /// Unit Gaussian.
    PaperGaussian,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Scaled => "scaled",
            InitScheme::PaperGaussian => "paper-gaussian",
        }
    }

    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::Scaled => 1.0 / (fan_in as f64).sqrt(),
            InitScheme::PaperGaussian => 1.0,
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(InitScheme::Scaled),
            "paper-gaussian" => Ok(InitScheme::PaperGaussian),
            _ => Err(Error::invalid(format!("unknown init {s:?} (scaled|paper-gaussian)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrNetConfig {
    pub base_width: usize,
    /// Encoder levels; fixed at 4.
    pub depth: usize,
    pub rdb_layers: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for CrNetConfig {
    fn default() -> Self {
        CrNetConfig {
            base_width: 64,
            depth: 4,
            rdb_layers: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            init: InitScheme::Scaled,
            seed: 0,
        }
    }
}

impl CrNetConfig {
    pub fn with_base_width(base_width: usize) -> Self {
        CrNetConfig {
            base_width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 3 {
            return Err(Error::invalid(format!(
                "base width must be >= 3 so the growth rate is >= 1, got {}",
                self.base_width
            )));
        }
        if self.depth != 4 {
            return Err(Error::invalid(format!("depth is fixed at 4, got {}", self.depth)));
        }
        if self.rdb_layers == 0 {
            return Err(Error::invalid("rdb_layers must be >= 1"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::invalid(format!("bn momentum must be in (0, 1], got {}", self.bn_momentum)));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::invalid(format!("bn eps must be > 0, got {}", self.bn_eps)));
        }
        Ok(())
    }

    /// Growth rate of a dense block whose input has `channels` channels.
    pub fn growth_rate(channels: usize) -> usize {
        channels / 3
    }

    /// Encoder widths followed by the bottleneck width.
    pub fn channel_ladder(&self) -> Vec<usize> {
        (0..=self.depth).map(|i| self.base_width << i).collect()
    }

    /// Spatial dimensions must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub ms_ssim: MsSsimConfig,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 40,
            epochs: 100,
            lr: 1e-4,
            lr_decay: 0.1,
            decay_every: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossKind::Combined,
            ms_ssim: MsSsimConfig::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid("decay interval must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `lr · decay^⌊epoch / decay_every⌋`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_doubles() {
        let cfg = CrNetConfig::with_base_width(8);
        assert_eq!(cfg.channel_ladder(), vec![8, 16, 32, 64, 128]);
        assert_eq!(cfg.spatial_multiple(), 16);
    }

    #[test]
    fn config_validation() {
        assert!(CrNetConfig::with_base_width(2).validate().is_err());
        assert!(CrNetConfig::with_base_width(3).validate().is_ok());
        let mut cfg = CrNetConfig::default();
        cfg.depth = 3;
        assert!(cfg.validate().is_err());
        let mut t = TrainConfig::default();
        t.batch_size = 0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::default();
        t.lr = 0.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        for (epoch, want) in [(0, 1e-4), (29, 1e-4), (30, 1e-5), (60, 1e-6), (99, 1e-7)] {
            let got = cfg.lr_at_epoch(epoch);
            assert!((got - want).abs() <= 1e-12 * want, "epoch {epoch}: {got}");
        }
    }

    #[test]
    fn init_parses() {
        assert_eq!("paper-gaussian".parse::<InitScheme>().unwrap(), InitScheme::PaperGaussian);
        assert!("xavier".parse::<InitScheme>().is_err());
        assert_eq!(InitScheme::Scaled.std(9), 1.0 / 3.0);
    }
}
