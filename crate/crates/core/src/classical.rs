//! Baseline clutter removal: windowed mean subtraction, dominant singular
//! component removal and RPCA (inexact augmented Lagrangian).
//!
//! All routines operate on the matrix exactly as given: no centring or
//! normalisation is applied here.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::radargram::Radargram;

/// Subtracts the average trace over the 1-based inclusive column window
/// `col_start..=col_end` from every trace.
pub fn mean_subtraction(r: &Radargram, col_start: usize, col_end: usize) -> Result<Radargram> {
    let w = r.width();
    if col_start == 0 || col_start > col_end || col_end > w {
        return Err(Error::invalid(format!(
            "mean window [{col_start}, {col_end}] must satisfy 1 <= start <= end <= {w}"
        )));
    }
    let window = r.data().slice_move(ndarray::s![.., col_start - 1..col_end]);
    let mean: Array1<f64> = window.mean_axis(Axis(1)).expect("window is non-empty");
    let mut out = r.data().to_owned();
    for mut column in out.columns_mut() {
        column -= &mean;
    }
    r.with_data(out)
}

/// Thin SVD with singular values sorted in descending order.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

pub(crate) fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    let (h, w) = a.dim();
    DMatrix::from_fn(h, w, |i, j| a[[i, j]])
}

pub(crate) fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Iteration budget for the bidiagonal QR sweeps, per singular value.
const SVD_ITERATIONS_PER_VALUE: usize = 200;

/// Thin SVD with singular values in descending order.
///
/// Uses machine epsilon as the convergence threshold; the library default
/// stops early on exactly rank-deficient input and returns factors that do
/// not reconstruct it.
pub(crate) fn sorted_svd(m: DMatrix<f64>) -> Result<SortedSvd> {
    let budget = SVD_ITERATIONS_PER_VALUE * m.nrows().min(m.ncols()).max(1);
    let svd = m
        .try_svd(true, true, f64::EPSILON, budget)
        .ok_or_else(|| Error::invalid("singular value decomposition did not converge"))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |k, j| v_t[(order[k], j)]);
    Ok(SortedSvd { u, sigma, v_t })
}

/// Removes the `k` largest singular components: `X − Σ_{i≤k} σᵢ uᵢ vᵢᵀ`.
pub fn svd_removal(r: &Radargram, k: usize) -> Result<Radargram> {
    let (h, w) = r.dim();
    let max_k = h.min(w);
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!("k must lie in [1, {max_k}], got {k}")));
    }
    let svd = sorted_svd(to_dmatrix(r.data()))?;
    let mut out = r.data().to_owned();
    for c in 0..k {
        let s = svd.sigma[c];
        for i in 0..h {
            let us = svd.u[(i, c)] * s;
            for j in 0..w {
                out[[i, j]] -= us * svd.v_t[(c, j)];
            }
        }
    }
    r.with_data(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcaOptions {
    /// Weight of the sparse term.
    pub lambda: f64,
    /// Stop once `‖M − L − S‖_F / ‖M‖_F < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty growth factor per iteration.
    pub rho: f64,
    /// Initial penalty as a multiple of `1 / ‖M‖₂`.
    pub mu_scale: f64,
}

impl Default for RpcaOptions {
    fn default() -> Self {
        RpcaOptions {
            lambda: 3e-2,
            tol: 1e-7,
            max_iter: 1000,
            rho: 1.5,
            mu_scale: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaResult {
    pub low_rank: Array2<f64>,
    pub sparse: Array2<f64>,
    pub iterations: usize,
    /// Final `‖M − L − S‖_F / ‖M‖_F`.
    pub residual: f64,
    pub converged: bool,
    /// `‖L‖_* + λ‖M − L‖₁` after each iteration, the objective at the
    /// feasible point nearest the current iterate.
    pub objective: Vec<f64>,
}

/// Robust PCA, `min ‖L‖_* + λ‖S‖₁ s.t. L + S = M`, by the inexact augmented
/// Lagrange multiplier method.
///
/// Starts from `L = S = 0`, `Y = M / max(‖M‖₂, ‖M‖_∞/λ)`, `μ = mu_scale/‖M‖₂`,
/// and alternates singular value thresholding for `L`, soft thresholding for
/// `S`, a dual ascent step for `Y`, and `μ ← ρμ`. Hitting `max_iter` is not
/// an error: the last iterate is returned with `converged == false`.
pub fn rpca_decompose(m: ArrayView2<f64>, opts: &RpcaOptions) -> Result<RpcaResult> {
    if !(opts.lambda > 0.0 && opts.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {}", opts.lambda)));
    }
    if !(opts.tol > 0.0 && opts.rho > 1.0 && opts.mu_scale > 0.0) {
        return Err(Error::invalid("tol and mu_scale must be positive and rho > 1"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    let (h, w) = m.dim();
    let lambda = opts.lambda;
    let m_mat = to_dmatrix(m);
    let norm_fro = m_mat.norm();
    if norm_fro == 0.0 {
        return Ok(RpcaResult {
            low_rank: Array2::zeros((h, w)),
            sparse: Array2::zeros((h, w)),
            iterations: 1,
            residual: 0.0,
            converged: true,
            objective: vec![0.0],
        });
    }
    let norm_two = sorted_svd(m_mat.clone())?.sigma[0];
    let norm_inf = m_mat.amax();
    let dual_scale = norm_two.max(norm_inf / lambda);

    let mut y = &m_mat / dual_scale;
    let mut mu = opts.mu_scale / norm_two;
    let mu_max = mu * 1e7;
    let mut low = DMatrix::<f64>::zeros(h, w);
    let mut sparse = DMatrix::<f64>::zeros(h, w);
    let mut objective = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let inv_mu = 1.0 / mu;

        // L-update: singular value thresholding.
        let target = &m_mat - &sparse + &y * inv_mu;
        let svd = sorted_svd(target)?;
        let mut nuclear = 0.0;
        low.fill(0.0);
        for (c, &s) in svd.sigma.iter().enumerate() {
            let shrunk = s - inv_mu;
            if shrunk <= 0.0 {
                break;
            }
            nuclear += shrunk;
            low += svd.u.column(c) * (svd.v_t.row(c) * shrunk);
        }

        // S-update: elementwise soft thresholding.
        let thresh = lambda * inv_mu;
        sparse = (&m_mat - &low + &y * inv_mu).map(|v| soft_threshold(v, thresh));

        let gap = &m_mat - &low - &sparse;
        y += &gap * mu;
        mu = (mu * opts.rho).min(mu_max);

        residual = gap.norm() / norm_fro;
        // Objective at the feasible pair (L, M − L); L's nuclear norm is the
        // sum of the shrunk singular values.
        objective.push(nuclear + lambda * (&m_mat - &low).iter().map(|v| v.abs()).sum::<f64>());
        if residual < opts.tol {
            break;
        }
    }

    Ok(RpcaResult {
        low_rank: to_array(&low),
        sparse: to_array(&sparse),
        iterations,
        residual,
        converged: residual < opts.tol,
        objective,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
