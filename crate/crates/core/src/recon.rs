//! Total-variation reconstruction from linear measurements.
//!
//! Minimizes `TV(x) + (lambda/2) ||Phi x - y||^2` with a monotone FISTA outer
//! loop; the TV proximal step runs a fast gradient projection on the dual.
//! The monotone variant keeps the recorded objective non-increasing, and all
//! reductions have a fixed order, so identical problems give identical
//! iterates.

use crate::image::Image;
use crate::quant::CompanderModel;
use crate::sensing::{DssOperator, LinearOperator, RademacherOperator, SensingConfig};
use crate::{Error, Result};

/// Isotropic TV with forward differences; differences past the last row or
/// column are zero (replicate boundary).
pub fn tv_norm(img: &Image) -> f64 {
    tv_flat(img.pixels(), img.width(), img.height())
}

fn tv_flat(x: &[f64], w: usize, h: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..h {
        let row = i * w;
        for j in 0..w {
            let v = x[row + j];
            let dx = if j + 1 < w { x[row + j + 1] - v } else { 0.0 };
            let dy = if i + 1 < h { x[row + w + j] - v } else { 0.0 };
            acc += (dx * dx + dy * dy).sqrt();
        }
    }
    acc
}

/// Forward differences into (gx, gy); last column/row stay zero.
fn gradient(x: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        for j in 0..w {
            let v = x[row + j];
            gx[row + j] = if j + 1 < w { x[row + j + 1] - v } else { 0.0 };
            gy[row + j] = if i + 1 < h { x[row + w + j] - v } else { 0.0 };
        }
    }
}

/// Discrete divergence, the negative adjoint of `gradient`.
fn divergence(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        for j in 0..w {
            let mut v = px[row + j];
            if j > 0 {
                v -= px[row + j - 1];
            }
            v += py[row + j];
            if i > 0 {
                v -= py[row - w + j];
            }
            out[row + j] = v;
        }
    }
}

/// Dual state for the TV prox, warm-started across outer iterations.
struct TvProx {
    w: usize,
    h: usize,
    px: Vec<f64>,
    py: Vec<f64>,
    inner_iters: usize,
}

impl TvProx {
    fn new(w: usize, h: usize, inner_iters: usize) -> Self {
        let n = w * h;
        Self {
            w,
            h,
            px: vec![0.0; n],
            py: vec![0.0; n],
            inner_iters,
        }
    }

    /// argmin_u (1/2)||u - v||^2 + theta TV(u), written into `out`.
    fn prox(&mut self, v: &[f64], theta: f64, out: &mut [f64]) {
        let (w, h) = (self.w, self.h);
        let n = w * h;
        let step = 1.0 / (8.0 * theta);
        let mut rx = self.px.clone();
        let mut ry = self.py.clone();
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let mut t = 1.0f64;
        for _ in 0..self.inner_iters {
            // u = v + theta * div(r); with <grad u, p> = -<u, div p> this is
            // the primal point matching dual ascent along +grad(u).
            divergence(&rx, &ry, w, h, out);
            for (o, &vi) in out.iter_mut().zip(v) {
                *o = vi + theta * *o;
            }
            gradient(out, w, h, &mut gx, &mut gy);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            for k in 0..n {
                let mut cx = rx[k] + step * gx[k];
                let mut cy = ry[k] + step * gy[k];
                let norm = (cx * cx + cy * cy).sqrt();
                if norm > 1.0 {
                    cx /= norm;
                    cy /= norm;
                }
                rx[k] = cx + momentum * (cx - self.px[k]);
                ry[k] = cy + momentum * (cy - self.py[k]);
                self.px[k] = cx;
                self.py[k] = cy;
            }
            t = t_next;
        }
        divergence(&self.px, &self.py, w, h, out);
        for (o, &vi) in out.iter_mut().zip(v) {
            *o = vi + theta * *o;
        }
    }
}

pub struct TvProblem<'a> {
    pub op: &'a dyn LinearOperator,
    pub y: &'a [f64],
    pub width: usize,
    pub height: usize,
    /// Data-fidelity weight.
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative-change stopping threshold.
    pub tol: f64,
    /// Optional warm start. When absent the solver starts from the
    /// backprojection `Phi^T y / rows`; a good warm start (e.g. the prediction
    /// image when only residuals were coded) saves most of the iteration
    /// budget because the FISTA error bound scales with `||x0 - x*||^2`.
    pub x0: Option<&'a [f64]>,
}

pub struct TvSolution {
    pub image: Image,
    pub iterations_run: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Objective after each outer iteration (non-increasing).
    pub objectives: Vec<f64>,
}

pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-4;
const PROX_INNER_ITERS: usize = 20;
const POWER_ITERS: usize = 20;
const STEP_MARGIN: f64 = 1.2;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value squared of the operator, by power iteration on
/// `Phi^T Phi` from a fixed deterministic start.
fn operator_norm_sq(op: &dyn LinearOperator) -> f64 {
    let n = op.cols();
    let mut v: Vec<f64> = (0..n)
        .map(|j| 1.0 + 0.01 * ((j.wrapping_mul(2654435761)) % 97) as f64)
        .collect();
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERS {
        let mut w = op.apply_adjoint(&op.apply(&v));
        estimate = norm2(&w);
        if estimate == 0.0 {
            return 1.0;
        }
        for x in &mut w {
            *x /= estimate;
        }
        v = w;
    }
    estimate
}

pub fn solve_tv(problem: &TvProblem) -> Result<TvSolution> {
    let n = problem.width * problem.height;
    if problem.op.cols() != n {
        return Err(Error::Dimension(format!(
            "operator has {} columns, image has {} pixels",
            problem.op.cols(),
            n
        )));
    }
    if problem.y.len() != problem.op.rows() {
        return Err(Error::Dimension(format!(
            "operator has {} rows, y has {} entries",
            problem.op.rows(),
            problem.y.len()
        )));
    }
    if !(problem.lambda > 0.0) {
        return Err(Error::Solver(format!("lambda must be positive, got {}", problem.lambda)));
    }
    if problem.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite measurements".into()));
    }

    let op = problem.op;
    let lambda = problem.lambda;
    let y = problem.y;
    let lip = lambda * operator_norm_sq(op) * STEP_MARGIN;
    let theta = 1.0 / lip;

    let objective = |x: &[f64], phi_x: &[f64]| -> f64 {
        let fid: f64 = phi_x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        tv_flat(x, problem.width, problem.height) + 0.5 * lambda * fid
    };

    let mut x: Vec<f64> = match problem.x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::Dimension(format!(
                    "warm start has {} entries, image has {} pixels",
                    x0.len(),
                    n
                )));
            }
            x0.to_vec()
        }
        None => {
            // x0 = Phi^T y / rows
            let mut bp = op.apply_adjoint(y);
            let inv_rows = 1.0 / op.rows() as f64;
            for v in &mut bp {
                *v *= inv_rows;
            }
            bp
        }
    };
    let mut phi_x = op.apply(&x);
    let mut obj_x = objective(&x, &phi_x);

    let mut x_prev = x.clone();
    let mut phi_x_prev = phi_x.clone();
    let mut yv = x.clone();
    let mut phi_yv = phi_x.clone();
    let mut t = 1.0f64;

    let mut prox = TvProx::new(problem.width, problem.height, PROX_INNER_ITERS);
    let mut z = vec![0.0; n];
    let mut objectives = Vec::with_capacity(problem.max_iters);
    let mut converged = false;
    let mut iterations_run = 0;

    for _ in 0..problem.max_iters {
        iterations_run += 1;
        // Gradient step at the extrapolation point.
        let mut resid: Vec<f64> = phi_yv.iter().zip(y).map(|(a, b)| a - b).collect();
        for r in &mut resid {
            *r *= lambda;
        }
        let grad = op.apply_adjoint(&resid);
        let v: Vec<f64> = yv.iter().zip(&grad).map(|(a, g)| a - theta * g).collect();
        prox.prox(&v, theta, &mut z);

        let phi_z = op.apply(&z);
        let obj_z = objective(&z, &phi_z);

        let dx = z
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rel = dx / norm2(&x).max(1e-12);

        // Monotone step: keep the better of z and the previous iterate.
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut phi_x_prev, &mut phi_x);
        if obj_z <= obj_x {
            x.copy_from_slice(&z);
            phi_x.copy_from_slice(&phi_z);
            obj_x = obj_z;
        } else {
            x.copy_from_slice(&x_prev);
            phi_x.copy_from_slice(&phi_x_prev);
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let a = t / t_next;
        let b = (t - 1.0) / t_next;
        for k in 0..n {
            yv[k] = x[k] + a * (z[k] - x[k]) + b * (x[k] - x_prev[k]);
        }
        for k in 0..phi_yv.len() {
            phi_yv[k] = phi_x[k] + a * (phi_z[k] - phi_x[k]) + b * (phi_x[k] - phi_x_prev[k]);
        }
        t = t_next;

        objectives.push(obj_x);
        if rel < problem.tol {
            converged = true;
            break;
        }
    }

    Ok(TvSolution {
        image: Image::new(problem.width, problem.height, x)?,
        iterations_run,
        final_objective: obj_x,
        converged,
        objectives,
    })
}

/// Solver knobs shared by the decode paths.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Scale constant tying lambda to the quantizer step; see
    /// [`lambda_from_quantizer`].
    pub lambda_c: f64,
    pub max_iters: usize,
    pub tol: f64,
}

/// Calibrated on the quantized pipeline (128x128 natural images, 5-bit
/// layers): enhancement PSNR peaks near c = 1e5 and is flat within ~0.5 dB
/// over a decade around it. Much smaller values leave the data term inert.
pub const DEFAULT_LAMBDA_C: f64 = 1e5;

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            lambda_c: DEFAULT_LAMBDA_C,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// Average signal-domain width of the interior bins of the companded
/// quantizer at (sigma, rate).
pub fn average_bin_width(sigma: f64, rate: u8) -> f64 {
    let model = CompanderModel { sigma };
    let levels = (1u32 << rate) as f64;
    if rate == 1 {
        // No interior bins; use the interquartile range.
        model.expand(0.75) - model.expand(0.25)
    } else {
        (model.expand(1.0 - 1.0 / levels) - model.expand(1.0 / levels)) / (levels - 2.0)
    }
}

/// Data-fidelity weight tied to the quantization noise level:
/// `lambda = c / (m * avg_bin_width^2)`.
/// Convergence-budget ceiling on the fidelity weight, as a multiple of 1/m.
/// The FISTA step is 1/(lambda ||Phi||^2 * margin), so past this point a
/// larger lambda only starves the iteration budget; when quantization noise
/// is small (fine bins push the statistical lambda sky-high) the extra
/// weight cannot be exploited anyway. Value from the noiseless calibration
/// sweep, where PSNR at 300 iterations peaks for lambda in [1/m, 4/m].
pub const LAMBDA_BUDGET_C: f64 = 4.0;

pub fn lambda_from_quantizer(c: f64, m: usize, sigma: f64, rate: u8) -> f64 {
    let width = average_bin_width(sigma, rate);
    (c / (m as f64 * width * width)).min(LAMBDA_BUDGET_C / m as f64)
}

/// Base-layer recovery at base resolution with the non-augmented DSS operator.
pub fn recover_base(
    y_b: &[f64],
    config: &SensingConfig,
    lambda: f64,
    params: &SolverParams,
    x0: Option<&[f64]>,
) -> Result<TvSolution> {
    let op = DssOperator::new(*config)?;
    solve_tv(&TvProblem {
        op: &op,
        y: y_b,
        width: config.base_width,
        height: config.base_height,
        lambda,
        max_iters: params.max_iters,
        tol: params.tol,
        x0,
    })
}

/// Enhancement recovery: rebuilds `y_E = residual + y_pred` and solves at full
/// resolution with the seeded Rademacher operator.
pub fn recover_enhancement(
    residual: &[f64],
    y_pred: &[f64],
    config: &SensingConfig,
    lambda: f64,
    params: &SolverParams,
    x0: Option<&[f64]>,
) -> Result<TvSolution> {
    if residual.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "residual has {} entries, prediction has {}",
            residual.len(),
            y_pred.len()
        )));
    }
    let y_e: Vec<f64> = residual.iter().zip(y_pred).map(|(r, p)| r + p).collect();
    let op = RademacherOperator::enhancement(config)?;
    solve_tv(&TvProblem {
        op: &op,
        y: &y_e,
        width: config.width,
        height: config.height,
        lambda,
        max_iters: params.max_iters,
        tol: params.tol,
        x0,
    })
}


/// Fidelity weight for noiseless (unquantized) measurements. Larger values
/// slow the solver down (the step size shrinks with lambda) without improving
/// the fit within a practical iteration budget; 2/m sits in the sweet spot on
/// piecewise-constant test problems.
pub fn noiseless_lambda(m: usize) -> f64 {
    2.0 / m as f64
}
