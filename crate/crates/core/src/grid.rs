//! Image container, Gaussian smoothing and the second-derivative stencils.
//!
//! `x` runs along a row (column index), `y` down the rows (row index). Samples
//! are stored row-major and pixel centres sit at integer coordinates.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Squared Frobenius norm, counting the off-diagonal entry twice.
    pub fn frobenius_sq(&self) -> f64 {
        self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy
    }

    pub fn scale(&self, f: f64) -> Sym2 {
        Sym2::new(self.xx * f, self.xy * f, self.yy * f)
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    /// `r m rᵀ` for a 2x2 (not necessarily orthogonal) matrix `r` given row-major.
    pub fn conjugate(&self, r: [[f64; 2]; 2]) -> Sym2 {
        let m = [[self.xx, self.xy], [self.xy, self.yy]];
        let mut rm = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                rm[i][j] = r[i][0] * m[0][j] + r[i][1] * m[1][j];
            }
        }
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = rm[i][0] * r[j][0] + rm[i][1] * r[j][1];
            }
        }
        Sym2::new(out[0][0], 0.5 * (out[0][1] + out[1][0]), out[1][1])
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

/// Rectangular grid of finite intensities with physical pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    width: usize,
    height: usize,
    dx: f64,
    dy: f64,
    data: Vec<f64>,
}

impl ScalarField2D {
    /// Unit-spaced field from row-major samples.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "field dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::param(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample at ({}, {}) is {}",
                pos % width,
                pos / width,
                data[pos]
            )));
        }
        Ok(ScalarField2D {
            width,
            height,
            dx: 1.0,
            dy: 1.0,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "field dimensions must be positive");
        assert!(value.is_finite(), "fill value must be finite");
        ScalarField2D::from_raw(width, height, 1.0, 1.0, vec![value; width * height])
    }

    /// Samples `f(x, y)` at every pixel. Panics if `f` returns a non-finite value.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "field dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite sample at ({x}, {y})");
                data.push(v);
            }
        }
        ScalarField2D::from_raw(width, height, 1.0, 1.0, data)
    }

    pub(crate) fn from_raw(width: usize, height: usize, dx: f64, dy: f64, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        ScalarField2D {
            width,
            height,
            dx,
            dy,
            data,
        }
    }

    pub fn with_spacing(mut self, dx: f64, dy: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite() && dy > 0.0 && dy.is_finite()) {
            return Err(Error::param(format!(
                "pixel spacing must be positive and finite, got dx={dx}, dy={dy}"
            )));
        }
        self.dx = dx;
        self.dy = dy;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub(crate) fn same_dims(&self, other: &ScalarField2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// Same grid and spacing, new samples (caller guarantees finiteness).
    pub(crate) fn with_data(&self, data: Vec<f64>) -> ScalarField2D {
        ScalarField2D::from_raw(self.width, self.height, self.dx, self.dy, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Result<ScalarField2D> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(&data, self.width)?;
        Ok(self.with_data(data))
    }

    pub fn zip_map(
        &self,
        other: &ScalarField2D,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField2D> {
        self.same_dims(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(&data, self.width)?;
        Ok(self.with_data(data))
    }

    pub fn negated(&self) -> ScalarField2D {
        self.with_data(self.data.iter().map(|v| -v).collect())
    }

    /// Rotates the image by 90° so that the new sample at `(x', y')` is the old
    /// sample at `(width - 1 - y', x')`. Derivatives relabel as
    /// `u'_xx = u_yy`, `u'_yy = u_xx`, `u'_xy = -u_xy`.
    pub fn rotate90(&self) -> ScalarField2D {
        let (w, h) = self.dims();
        let (nw, nh) = (h, w);
        let mut data = Vec::with_capacity(w * h);
        for yp in 0..nh {
            for xp in 0..nw {
                data.push(self.get(w - 1 - yp, xp));
            }
        }
        ScalarField2D::from_raw(nw, nh, self.dy, self.dx, data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Global min-max rescale to `[0, 1]`. A constant field is returned unchanged.
    pub fn normalized_min_max(&self) -> ScalarField2D {
        let (lo, hi) = self.min_max();
        if hi <= lo {
            return self.clone();
        }
        let inv = 1.0 / (hi - lo);
        self.with_data(self.data.iter().map(|v| ((v - lo) * inv).clamp(0.0, 1.0)).collect())
    }
}

pub(crate) fn check_finite(data: &[f64], width: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFinite(format!(
            "sample at ({}, {}) is {}",
            pos % width,
            pos / width,
            data[pos]
        ))),
        None => Ok(()),
    }
}

/// Per-pixel first derivatives `(u_x, u_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 2]>,
}

impl GradientField {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }
}

/// Per-pixel symmetric Hessian; `u_yx` is not stored separately.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Sym2>,
}

impl HessianField {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Sym2 {
        self.data[y * self.width + x]
    }

    /// One entry as a unit-spaced scalar field.
    pub fn component(&self, f: impl Fn(&Sym2) -> f64) -> ScalarField2D {
        ScalarField2D::from_raw(
            self.width,
            self.height,
            1.0,
            1.0,
            self.data.iter().map(f).collect(),
        )
    }

    pub(crate) fn from_components(
        xx: &ScalarField2D,
        xy: &ScalarField2D,
        yy: &ScalarField2D,
    ) -> HessianField {
        let data = xx
            .as_slice()
            .iter()
            .zip(xy.as_slice())
            .zip(yy.as_slice())
            .map(|((&a, &b), &c)| Sym2::new(a, b, c))
            .collect();
        HessianField {
            width: xx.width(),
            height: xx.height(),
            data,
        }
    }
}

/// Half-sample symmetric reflection of an arbitrary index into `0..n`.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Sampled Gaussian of radius `ceil(4σ)`, renormalised to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) * inv).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian smoothing with mirror extension at the border.
/// `sigma` is in pixels; `sigma == 0` returns an identical copy.
pub fn gaussian_smooth(u: &ScalarField2D, sigma: f64) -> Result<ScalarField2D> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::param(format!(
            "Gaussian sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(u.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_rows(u.as_slice(), u.width(), u.height(), &kernel);
    let out = convolve_cols(&rows, u.width(), u.height(), &kernel);
    Ok(u.with_data(out))
}

fn convolve_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width)
        .zip(src.par_chunks(width))
        .for_each_init(
            || vec![0.0; width + 2 * r],
            |ext, (dst, row)| {
                for (k, e) in ext.iter_mut().enumerate() {
                    *e = row[reflect_index(k as isize - r as isize, width)];
                }
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = kernel
                        .iter()
                        .zip(&ext[x..x + kernel.len()])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            },
        );
    debug_assert_eq!(height * width, out.len());
    out
}

fn convolve_cols(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, dst)| {
        for (t, &kv) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r as isize, height);
            let row = &src[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += kv * s;
            }
        }
    });
    out
}

/// Second derivatives from the 3-point and 4-corner stencils. Entries whose
/// stencil leaves the image are zero (natural boundary).
pub fn hessian(u: &ScalarField2D) -> Result<HessianField> {
    let (w, h) = u.dims();
    if w < 3 || h < 3 {
        return Err(Error::param(format!(
            "hessian needs at least a 3x3 grid, got {w}x{h}"
        )));
    }
    let ixx = 1.0 / (u.dx() * u.dx());
    let iyy = 1.0 / (u.dy() * u.dy());
    let ixy = 1.0 / (4.0 * u.dx() * u.dy());
    let s = u.as_slice();
    let mut data = vec![Sym2::ZERO; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y_inner = y > 0 && y + 1 < h;
        for (x, out) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let x_inner = x > 0 && x + 1 < w;
            if x_inner {
                out.xx = ((s[i - 1] + s[i + 1]) - 2.0 * s[i]) * ixx;
            }
            if y_inner {
                out.yy = ((s[i - w] + s[i + w]) - 2.0 * s[i]) * iyy;
            }
            if x_inner && y_inner {
                out.xy = ((s[i - w - 1] + s[i + w + 1]) - (s[i + w - 1] + s[i - w + 1])) * ixy;
            }
        }
    });
    Ok(HessianField {
        width: w,
        height: h,
        data,
    })
}

/// Central differences inside, one-sided differences on the border.
pub fn gradient(u: &ScalarField2D) -> Result<GradientField> {
    let (w, h) = u.dims();
    if w < 2 || h < 2 {
        return Err(Error::param(format!(
            "gradient needs at least a 2x2 grid, got {w}x{h}"
        )));
    }
    let (dx, dy) = (u.dx(), u.dy());
    let s = u.as_slice();
    let mut data = vec![[0.0; 2]; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, g) in row.iter_mut().enumerate() {
            let i = y * w + x;
            g[0] = if x == 0 {
                (s[i + 1] - s[i]) / dx
            } else if x + 1 == w {
                (s[i] - s[i - 1]) / dx
            } else {
                (s[i + 1] - s[i - 1]) / (2.0 * dx)
            };
            g[1] = if y == 0 {
                (s[i + w] - s[i]) / dy
            } else if y + 1 == h {
                (s[i] - s[i - w]) / dy
            } else {
                (s[i + w] - s[i - w]) / (2.0 * dy)
            };
        }
    });
    Ok(GradientField {
        width: w,
        height: h,
        data,
    })
}
