//! Clutter removal for ground-penetrating-radar B-scans.
//!
//! The crate is organised around the [`Radargram`] container (rows are time
//! samples, columns are traces):
//!
//! - [`radargram`]: data model, normalisation, resizing, cropping and the
//!   `GPRB1` container format.
//! - [`simulator`]: analytic hyperbola + clutter-field scenes, paired and
//!   hybrid datasets.
//! - [`classical`]: mean subtraction, SVD component removal and RPCA.
//! - [`metrics`]: MAE/MSE/PSNR, MS-SSIM (with gradient), SCR and the
//!   improvement factor, plus the training losses.
//! - [`network`]: the residual-dense U-Net with hand-written backward passes,
//!   Adam, training and inference.

pub mod classical;
pub mod error;
pub mod metrics;
pub mod network;
pub mod radargram;
pub mod simulator;

pub use classical::{mean_subtraction, rpca_decompose, svd_removal, RpcaOptions, RpcaResult};
pub use error::{Error, Result};
pub use metrics::{
    combined_loss, improvement_factor, mae, mask_from_ground_truth, ms_ssim, mse, psnr, scr,
    LossKind, MsSsimConfig, TargetMask,
};
pub use network::{CrNetConfig, CrNetModel, Tensor4, TrainConfig};
pub use radargram::{Dataset, DatasetPair, Provenance, Radargram};
pub use simulator::{DatasetConfig, SceneSpec, SoilSpec, SurfaceKind, SurfaceSpec, TargetSpec};
