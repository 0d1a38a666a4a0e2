//! Fourth-order diffusion tensors built from Hessian eigensystems.
//!
//! A tensor acts on Hessians vectorised as `(xx, xy, yx, yy)`, so it is stored
//! as a symmetric 4x4 matrix `E M Eᵀ` whose columns of `E` are the vectorised
//! eigentensors
//!
//! ```text
//! E1 = e1 ⊗ e1      E3 = (e1 ⊗ e2 + e2 ⊗ e1) / √2
//! E2 = e2 ⊗ e2      E4 = (e1 ⊗ e2 - e2 ⊗ e1) / √2
//! ```
//!
//! and `M = diag(μ1, μ2, μ3, μ4)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{HessianField, Sym2};
use crate::scale_select::eigen_unchecked;

/// Which crease types are sharpened; the other type is smoothed with `μ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    #[default]
    Both,
    RidgesOnly,
    ValleysOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityConfig {
    pub lambda: f64,
    #[serde(default)]
    pub mode: DiffusionMode,
}

impl DiffusivityConfig {
    pub fn new(lambda: f64) -> Self {
        DiffusivityConfig {
            lambda,
            mode: DiffusionMode::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!(
                "contrast parameter must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Perona–Malik diffusivity `1 / (1 + s / λ²)` of a squared magnitude `s`.
#[inline]
pub fn perona_malik(s: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + s / (lambda * lambda))
}

/// Tensor eigenvalues from Hessian eigenvalues: Perona–Malik of `ν²` for the
/// first two, their mean for the shear eigentensor, zero for the
/// antisymmetric one.
pub fn mu_from_nu(nu1: f64, nu2: f64, cfg: &DiffusivityConfig) -> [f64; 4] {
    let mu = |nu: f64| {
        let smooth_only = match cfg.mode {
            DiffusionMode::Both => false,
            DiffusionMode::RidgesOnly => nu >= 0.0,
            DiffusionMode::ValleysOnly => nu <= 0.0,
        };
        if smooth_only {
            1.0
        } else {
            perona_malik(nu * nu, cfg.lambda)
        }
    };
    let (m1, m2) = (mu(nu1), mu(nu2));
    [m1, m2, 0.5 * (m1 + m2), 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourthOrderTensor {
    pub matrix: [[f64; 4]; 4],
}

impl FourthOrderTensor {
    /// Identity on symmetric matrices, zero on antisymmetric ones, times `g`.
    pub fn isotropic(g: f64) -> Self {
        let h = 0.5 * g;
        FourthOrderTensor {
            matrix: [
                [g, 0.0, 0.0, 0.0],
                [0.0, h, h, 0.0],
                [0.0, h, h, 0.0],
                [0.0, 0.0, 0.0, g],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, v: [f64; 4]) -> [f64; 4] {
        let m = &self.matrix;
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(m) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
        out
    }
}

/// Vectorised `a ⊗ b` in `(xx, xy, yx, yy)` order.
#[inline]
fn outer(a: [f64; 2], b: [f64; 2]) -> [f64; 4] {
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

/// Columns of the orthogonal eigentensor matrix `E` for the frame `(e1, e2)`.
pub fn eigentensor_basis(e1: [f64; 2], e2: [f64; 2]) -> [[f64; 4]; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let p = outer(e1, e2);
    let q = outer(e2, e1);
    [
        outer(e1, e1),
        outer(e2, e2),
        [s * (p[0] + q[0]), s * (p[1] + q[1]), s * (p[2] + q[2]), s * (p[3] + q[3])],
        [s * (p[0] - q[0]), s * (p[1] - q[1]), s * (p[2] - q[2]), s * (p[3] - q[3])],
    ]
}

/// `E diag(μ) Eᵀ` for an orthonormal frame.
pub fn build_tensor(e1: [f64; 2], e2: [f64; 2], mus: [f64; 4]) -> Result<FourthOrderTensor> {
    let n1 = e1[0] * e1[0] + e1[1] * e1[1];
    let n2 = e2[0] * e2[0] + e2[1] * e2[1];
    let dot = e1[0] * e2[0] + e1[1] * e2[1];
    if (n1 - 1.0).abs() > 1e-8 || (n2 - 1.0).abs() > 1e-8 || dot.abs() > 1e-8 {
        return Err(Error::param(format!(
            "eigenvector frame is not orthonormal: {e1:?}, {e2:?}"
        )));
    }
    Ok(build_unchecked(e1, e2, mus))
}

#[inline]
pub(crate) fn build_unchecked(e1: [f64; 2], e2: [f64; 2], mus: [f64; 4]) -> FourthOrderTensor {
    let cols = eigentensor_basis(e1, e2);
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v: f64 = (0..4).map(|k| mus[k] * cols[k][i] * cols[k][j]).sum();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    FourthOrderTensor { matrix: m }
}

/// `[D : H]_ij = Σ_kl D_ijkl H_kl`, re-symmetrised.
pub fn double_contract(d: &FourthOrderTensor, h: Sym2) -> Sym2 {
    let t = d.apply([h.xx, h.xy, h.xy, h.yy]);
    Sym2::new(t[0], 0.5 * (t[1] + t[2]), t[3])
}

/// One tensor per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FourthOrderTensorField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<FourthOrderTensor>,
}

impl FourthOrderTensorField {
    pub fn uniform(width: usize, height: usize, t: FourthOrderTensor) -> Self {
        FourthOrderTensorField {
            width,
            height,
            data: vec![t; width * height],
        }
    }
}

/// Per-pixel tensor from the eigensystem of a (normalised) Hessian field.
pub fn tensor_field(h: &HessianField, cfg: &DiffusivityConfig) -> Result<FourthOrderTensorField> {
    cfg.validate()?;
    if let Some(bad) = h.data.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite(format!(
            "normalised Hessian at ({}, {}) is {:?}",
            bad % h.width,
            bad / h.width,
            h.data[bad]
        )));
    }
    let data = h
        .data
        .par_iter()
        .map(|m| {
            let e = eigen_unchecked(*m);
            build_unchecked(e.e1, e.e2, mu_from_nu(e.nu1, e.nu2, cfg))
        })
        .collect();
    Ok(FourthOrderTensorField {
        width: h.width,
        height: h.height,
        data,
    })
}
