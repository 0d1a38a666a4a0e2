//! Comparison filters: isotropic fourth-order diffusion, second-order
//! Perona–Malik diffusion, a 1D demo of both orders, the multi-scale
//! Gaussian ridge filter and a bilateral filter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_finite, gaussian_smooth, gradient, hessian, reflect_index, ScalarField2D};
use crate::solver::{explicit_step, Flow};
use crate::tensor::{perona_malik, FourthOrderTensor, FourthOrderTensorField};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("contrast parameter must be positive, got {lambda}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param(format!("step size must be positive, got {tau}")));
    }
    Ok(())
}

/// Scalar fourth-order diffusion tensor `g(|H|²_F)` per pixel, with the
/// Hessian taken from `u` smoothed by `sigma` (0 for the plain model).
pub fn ifod_tensor_field(u: &ScalarField2D, lambda: f64, sigma: f64) -> Result<FourthOrderTensorField> {
    check_lambda(lambda)?;
    let h = hessian(&gaussian_smooth(u, sigma)?)?;
    Ok(FourthOrderTensorField {
        width: h.width,
        height: h.height,
        data: h
            .data
            .par_iter()
            .map(|m| FourthOrderTensor::isotropic(perona_malik(m.frobenius_sq(), lambda)))
            .collect(),
    })
}

/// One explicit step of isotropic fourth-order diffusion
/// `∂t u = -Σ ∂ij (g(|H(u)|²_F) u_ij)`.
pub fn ifod_step(u: &ScalarField2D, lambda: f64, tau: f64) -> Result<ScalarField2D> {
    check_tau(tau)?;
    explicit_step(u, &ifod_tensor_field(u, lambda, 0.0)?, tau)
}

/// As [`ifod_step`] with the diffusivity computed from `H(u_σ)`.
pub fn ifod_step_regularized(u: &ScalarField2D, lambda: f64, tau: f64, sigma: f64) -> Result<ScalarField2D> {
    check_tau(tau)?;
    explicit_step(u, &ifod_tensor_field(u, lambda, sigma)?, tau)
}

/// One explicit step of `∂t u = div(g(|∇u|²) ∇u)` with diffusivities averaged
/// to the half-pixel positions and no flux across the image border.
pub fn pm_second_order_step(u: &ScalarField2D, lambda: f64, tau: f64) -> Result<ScalarField2D> {
    check_lambda(lambda)?;
    check_tau(tau)?;
    let (w, h) = u.dims();
    let g: Vec<f64> = if w >= 2 && h >= 2 {
        gradient(u)?
            .data
            .iter()
            .map(|d| perona_malik(d[0] * d[0] + d[1] * d[1], lambda))
            .collect()
    } else {
        return Err(Error::param("second-order diffusion needs at least a 2x2 grid"));
    };
    let s = u.as_slice();
    let (ix, iy) = (1.0 / (u.dx() * u.dx()), 1.0 / (u.dy() * u.dy()));
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let mut flux = 0.0;
            if x + 1 < w {
                flux += 0.5 * (g[i] + g[i + 1]) * (s[i + 1] - s[i]) * ix;
            }
            if x > 0 {
                flux -= 0.5 * (g[i] + g[i - 1]) * (s[i] - s[i - 1]) * ix;
            }
            if y + 1 < h {
                flux += 0.5 * (g[i] + g[i + w]) * (s[i + w] - s[i]) * iy;
            }
            if y > 0 {
                flux -= 0.5 * (g[i] + g[i - w]) * (s[i] - s[i - w]) * iy;
            }
            *o = s[i] + tau * flux;
        }
    });
    check_finite(&out, w)?;
    Ok(u.with_data(out))
}

/// Repeats `step` up to `steps` times, calling `observer` with
/// `(step count, elapsed time, image)` before the first step and after each one.
pub fn iterate(
    u0: &ScalarField2D,
    steps: usize,
    tau: f64,
    mut step: impl FnMut(&ScalarField2D) -> Result<ScalarField2D>,
    observer: &mut dyn crate::solver::CycleObserver,
) -> Result<ScalarField2D> {
    let mut u = u0.clone();
    if observer.observe(0, 0.0, &u) == Flow::Stop {
        return Ok(u);
    }
    for k in 1..=steps {
        u = step(&u)?;
        if observer.observe(k, k as f64 * tau, &u) == Flow::Stop {
            break;
        }
    }
    Ok(u)
}

/// Order of the 1D demo flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DemoOrder {
    Second,
    Fourth,
}

/// Explicit 1D Perona–Malik diffusion of order two (`(g(u_x²) u_x)_x`) or
/// four (`-(g(u_xx²) u_xx)_xx`). Fluxes live on half-points for order two
/// with none across the ends; second differences exist only where the
/// stencil fits.
pub fn demo_1d(signal: &[f64], order: DemoOrder, lambda: f64, tau: f64, steps: usize) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_tau(tau)?;
    let n = signal.len();
    if n < 5 {
        return Err(Error::param(format!("demo signal needs at least 5 samples, got {n}")));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("demo signal contains non-finite samples".into()));
    }
    let mut u = signal.to_vec();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        match order {
            DemoOrder::Second => {
                for i in 0..n - 1 {
                    let d = u[i + 1] - u[i];
                    g[i] = perona_malik(d * d, lambda) * d;
                }
                for i in 0..n {
                    let right = if i + 1 < n { g[i] } else { 0.0 };
                    let left = if i > 0 { g[i - 1] } else { 0.0 };
                    next[i] = u[i] + tau * (right - left);
                }
            }
            DemoOrder::Fourth => {
                g[0] = 0.0;
                g[n - 1] = 0.0;
                for i in 1..n - 1 {
                    let v = (u[i - 1] + u[i + 1]) - 2.0 * u[i];
                    g[i] = perona_malik(v * v, lambda) * v;
                }
                for i in 0..n {
                    let mut acc = -2.0 * g[i];
                    if i > 0 {
                        acc += g[i - 1];
                    }
                    if i + 1 < n {
                        acc += g[i + 1];
                    }
                    next[i] = u[i] - tau * acc;
                }
            }
        }
        std::mem::swap(&mut u, &mut next);
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("demo diffusion diverged; reduce the step size".into()));
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeStrengthConfig {
    pub gamma: f64,
    /// Diffusion times `t`; the matching Gaussian width is `√(2t)`.
    pub t_grid: Vec<f64>,
    /// Optional extra Gaussian smoothing of the result.
    pub post_sigma: Option<f64>,
}

impl Default for RidgeStrengthConfig {
    fn default() -> Self {
        RidgeStrengthConfig {
            gamma: 0.75,
            t_grid: (1..=30).map(f64::from).collect(),
            post_sigma: None,
        }
    }
}

impl RidgeStrengthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma must be positive"));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::param("t grid must be non-empty and positive"));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("t grid must be strictly increasing"));
        }
        if let Some(s) = self.post_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("post-smoothing width must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Normalised ridge strength `t^{4γ} (u_xx + u_yy)² ((u_xx - u_yy)² + 4 u_xy²)`.
pub fn ridge_strength(t: f64, gamma: f64, h: crate::grid::Sym2) -> f64 {
    let lap = h.xx + h.yy;
    let diff = h.xx - h.yy;
    t.powf(4.0 * gamma) * lap * lap * (diff * diff + 4.0 * h.xy * h.xy)
}

/// Per-pixel argmax of the ridge strength over `t_grid` (smallest `t` on
/// ties) and the smoothed image at that scale. Also returns the selected `t`.
pub fn multiscale_gaussian_with_scales(
    u: &ScalarField2D,
    cfg: &RidgeStrengthConfig,
) -> Result<(ScalarField2D, ScalarField2D)> {
    cfg.validate()?;
    let n = u.len();
    let mut best_r = vec![f64::NEG_INFINITY; n];
    let mut best_t = vec![cfg.t_grid[0]; n];
    let mut out = vec![0.0; n];
    for &t in &cfg.t_grid {
        let us = gaussian_smooth(u, (2.0 * t).sqrt())?;
        let h = hessian(&us)?;
        best_r
            .par_iter_mut()
            .zip(best_t.par_iter_mut())
            .zip(out.par_iter_mut())
            .zip(h.data.par_iter().zip(us.as_slice().par_iter()))
            .for_each(|(((br, bt), o), (m, &v))| {
                let r = ridge_strength(t, cfg.gamma, *m);
                if r > *br {
                    *br = r;
                    *bt = t;
                    *o = v;
                }
            });
    }
    let mut result = u.with_data(out);
    if let Some(s) = cfg.post_sigma {
        result = gaussian_smooth(&result, s)?;
    }
    Ok((result.normalized_min_max(), u.with_data(best_t)))
}

/// Multi-scale Gaussian filter, min-max normalised to `[0, 1]` over the image.
pub fn multiscale_gaussian(u: &ScalarField2D, cfg: &RidgeStrengthConfig) -> Result<ScalarField2D> {
    Ok(multiscale_gaussian_with_scales(u, cfg)?.0)
}

/// Bilateral filter with Gaussian spatial and range weights over a square
/// window of radius `⌈4 σ_spatial⌉`, mirror-extended at the border.
pub fn bilateral(u: &ScalarField2D, sigma_spatial: f64, sigma_range: f64) -> Result<ScalarField2D> {
    if !(sigma_spatial > 0.0 && sigma_spatial.is_finite() && sigma_range > 0.0) {
        return Err(Error::param("bilateral widths must be positive"));
    }
    let (w, h) = u.dims();
    let radius = (4.0 * sigma_spatial).ceil() as isize;
    let spatial: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_spatial * sigma_spatial)).exp())
        .collect();
    let inv_r = if sigma_range.is_finite() {
        1.0 / (2.0 * sigma_range * sigma_range)
    } else {
        0.0
    };
    let s = u.as_slice();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let c = s[y * w + x];
            let (mut num, mut den) = (0.0, 0.0);
            for (ky, wy) in (-radius..=radius).zip(&spatial) {
                let yy = reflect_index(y as isize + ky, h);
                for (kx, wx) in (-radius..=radius).zip(&spatial) {
                    let xx = reflect_index(x as isize + kx, w);
                    let v = s[yy * w + xx];
                    let d = v - c;
                    let wgt = wy * wx * (-d * d * inv_r).exp();
                    num += wgt * v;
                    den += wgt;
                }
            }
            *o = num / den;
        }
    });
    check_finite(&out, w)?;
    Ok(u.with_data(out))
}
