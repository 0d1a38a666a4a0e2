//! Synthetic test images with analytically known centerlines.
//!
//! All bright structures use Gaussian cross-profiles `exp(-d² / 2w²)` of the
//! distance `d` to the centerline, so the intensity maximum sits exactly on
//! the ground-truth curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crease::{dist, CreaseKind, CurveSet, Polyline};
use crate::error::{Error, Result};
use crate::evaluate::densify;
use crate::grid::ScalarField2D;

/// Arc-length spacing of ground-truth vertices.
pub const GT_STEP: f64 = 0.5;

/// A generator description as stored in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    Concentric {
        size: usize,
        radii: Vec<f64>,
        widths: Vec<f64>,
    },
    OccludedVessel {
        size: usize,
        #[serde(default)]
        path: VesselPath,
        width: f64,
        /// Arc-length intervals `[start, end]` along the path.
        #[serde(default)]
        occlusions: Vec<[f64; 2]>,
    },
    Branch {
        size: usize,
        trunk_width: f64,
        branch_width: f64,
    },
    /// A 1D signal, generated as a single-row image without ground truth.
    #[serde(rename = "trapezoid-1d")]
    Trapezoid1d {
        length: usize,
        plateau: f64,
        slope: f64,
    },
}

impl SyntheticSpec {
    /// Three rings spanning fine to coarse scales; radii scale with the
    /// size (15, 35 and 60 px at 256), widths do not.
    pub fn default_concentric(size: usize) -> Self {
        let f = size as f64 / 256.0;
        SyntheticSpec::Concentric {
            size,
            radii: vec![15.0 * f, 35.0 * f, 60.0 * f],
            widths: vec![1.5, 3.0, 6.0],
        }
    }

    /// Width-2 sine vessel with occlusions of 6 and 10 px, starting at arc
    /// lengths 40 and 90 for size 128 and proportionally elsewhere.
    pub fn default_occluded_vessel(size: usize) -> Self {
        let f = size as f64 / 128.0;
        SyntheticSpec::OccludedVessel {
            size,
            path: VesselPath::default(),
            width: 2.0,
            occlusions: vec![[40.0 * f, 40.0 * f + 6.0], [90.0 * f, 90.0 * f + 10.0]],
        }
    }

    pub fn generate(&self) -> Result<Synthetic> {
        match self {
            SyntheticSpec::Concentric { size, radii, widths } => gen_concentric(*size, radii, widths),
            SyntheticSpec::OccludedVessel {
                size,
                path,
                width,
                occlusions,
            } => gen_occluded_vessel(*size, path, *width, occlusions),
            SyntheticSpec::Branch {
                size,
                trunk_width,
                branch_width,
            } => gen_branch(*size, *trunk_width, *branch_width),
            SyntheticSpec::Trapezoid1d { length, plateau, slope } => {
                let signal = gen_trapezoid_1d(*length, *plateau, *slope)?;
                Ok(Synthetic {
                    image: ScalarField2D::new(*length, 1, signal)?,
                    ground_truth: CurveSet::default(),
                    warnings: Vec::new(),
                })
            }
        }
    }
}

/// Clean image, ground-truth centerlines and non-fatal warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub image: ScalarField2D,
    pub ground_truth: CurveSet,
    pub warnings: Vec<String>,
}

fn profile(d: f64, w: f64) -> f64 {
    (-d * d / (2.0 * w * w)).exp()
}

fn check_size(size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::param(format!("image size must be at least 8, got {size}")));
    }
    Ok(())
}

/// Rings centred in the image. Overlapping profiles (more than 10% of the
/// peak at a neighbouring centerline) produce a warning.
pub fn gen_concentric(size: usize, radii: &[f64], widths: &[f64]) -> Result<Synthetic> {
    check_size(size)?;
    if radii.len() != widths.len() {
        return Err(Error::param(format!(
            "{} radii but {} widths",
            radii.len(),
            widths.len()
        )));
    }
    if radii.iter().chain(widths).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::param("radii and widths must be positive"));
    }
    let c = (size as f64 - 1.0) / 2.0;
    if let Some(r) = radii.iter().find(|&&r| r > c) {
        return Err(Error::param(format!("ring of radius {r} does not fit a {size} px image")));
    }
    let mut warnings = Vec::new();
    for (i, (&ri, &wi)) in radii.iter().zip(widths).enumerate() {
        for (j, &rj) in radii.iter().enumerate() {
            if i != j && profile(ri - rj, wi) > 0.1 {
                warnings.push(format!("ring {i} exceeds 10% of its peak on ring {j}"));
            }
        }
    }
    let image = ScalarField2D::from_fn(size, size, |x, y| {
        let r = (x as f64 - c).hypot(y as f64 - c);
        radii
            .iter()
            .zip(widths)
            .map(|(&rr, &w)| profile(r - rr, w))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    });
    let curves = radii
        .iter()
        .map(|&r| {
            let n = ((std::f64::consts::TAU * r / GT_STEP).ceil() as usize).max(8);
            let mut v: Vec<[f64; 2]> = (0..n)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / n as f64;
                    [c + r * a.cos(), c + r * a.sin()]
                })
                .collect();
            v.push(v[0]);
            Polyline::new(CreaseKind::Ridge, v)
        })
        .collect();
    Ok(Synthetic {
        image,
        ground_truth: CurveSet { curves },
        warnings,
    })
}

/// Sine-shaped vessel running left to right across the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselPath {
    /// Distance kept free at the left and right image borders, in pixels.
    pub margin: f64,
    /// Peak deviation from the horizontal mid-line, as a fraction of the size.
    pub amplitude: f64,
    /// Number of sine periods across the image.
    pub periods: f64,
}

impl Default for VesselPath {
    fn default() -> Self {
        VesselPath {
            margin: 8.0,
            amplitude: 0.15,
            periods: 1.0,
        }
    }
}

impl VesselPath {
    /// Centerline sampled finely enough for distance queries.
    pub fn polyline(&self, size: usize) -> Result<Vec<[f64; 2]>> {
        let s = size as f64;
        let (x0, x1) = (self.margin, s - 1.0 - self.margin);
        if !(x1 > x0 && self.amplitude.abs() < 0.5 && self.periods.is_finite()) {
            return Err(Error::param("vessel path does not fit the image"));
        }
        let cy = (s - 1.0) / 2.0;
        let n = ((x1 - x0) * 8.0).ceil() as usize;
        let pts: Vec<[f64; 2]> = (0..=n)
            .map(|k| {
                let x = x0 + (x1 - x0) * k as f64 / n as f64;
                let phase = std::f64::consts::TAU * self.periods * (x - x0) / (x1 - x0);
                [x, cy + self.amplitude * s * phase.sin()]
            })
            .collect();
        Ok(pts)
    }
}

/// Nearest point on a polyline: `(distance, arc length at the foot point)`.
fn nearest_on(p: [f64; 2], v: &[[f64; 2]], cum: &[f64]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for (i, s) in v.windows(2).enumerate() {
        let (vx, vy) = (s[1][0] - s[0][0], s[1][1] - s[0][1]);
        let l2 = vx * vx + vy * vy;
        let t = if l2 > 0.0 {
            (((p[0] - s[0][0]) * vx + (p[1] - s[0][1]) * vy) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = dist(p, [s[0][0] + t * vx, s[0][1] + t * vy]);
        if d < best.0 {
            best = (d, cum[i] + t * (cum[i + 1] - cum[i]));
        }
    }
    best
}

fn cumulative(v: &[[f64; 2]]) -> Vec<f64> {
    let mut cum = vec![0.0];
    for s in v.windows(2) {
        cum.push(cum.last().unwrap() + dist(s[0], s[1]));
    }
    cum
}

/// Portion of `v` between arc lengths `a` and `b`, resampled at `GT_STEP`.
fn sub_curve(v: &[[f64; 2]], cum: &[f64], a: f64, b: f64) -> Vec<[f64; 2]> {
    let n = (((b - a) / GT_STEP).ceil() as usize).max(1);
    (0..=n)
        .map(|k| {
            let s = a + (b - a) * k as f64 / n as f64;
            let i = cum.partition_point(|&c| c <= s).clamp(1, v.len() - 1) - 1;
            let len = cum[i + 1] - cum[i];
            let t = if len > 0.0 { ((s - cum[i]) / len).clamp(0.0, 1.0) } else { 0.0 };
            [v[i][0] + t * (v[i + 1][0] - v[i][0]), v[i][1] + t * (v[i + 1][1] - v[i][1])]
        })
        .collect()
}

/// Vessel along `path` whose intensity drops to background inside the
/// occlusion intervals (arc length along the path), with 1 px linear ramps
/// just outside each interval. Ground truth omits the occluded spans.
pub fn gen_occluded_vessel(
    size: usize,
    path: &VesselPath,
    width: f64,
    occlusions: &[[f64; 2]],
) -> Result<Synthetic> {
    check_size(size)?;
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::param("vessel width must be positive"));
    }
    let v = path.polyline(size)?;
    let cum = cumulative(&v);
    let total = *cum.last().unwrap();
    let mut occ: Vec<[f64; 2]> = occlusions.to_vec();
    occ.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for o in &occ {
        if !(o[0] < o[1] && o[0] >= 0.0 && o[1] <= total) {
            return Err(Error::param(format!(
                "occlusion {o:?} is empty or outside the path length {total:.2}"
            )));
        }
    }
    if occ.windows(2).any(|w| w[1][0] < w[0][1]) {
        return Err(Error::param("occlusion intervals overlap"));
    }
    let mask = |s: f64| {
        occ.iter()
            .map(|o| {
                let gap = if s < o[0] {
                    o[0] - s
                } else if s > o[1] {
                    s - o[1]
                } else {
                    0.0
                };
                gap.min(1.0)
            })
            .fold(1.0, f64::min)
    };
    let image = ScalarField2D::from_fn(size, size, |x, y| {
        let p = [x as f64, y as f64];
        let (d, s) = nearest_on(p, &v, &cum);
        if d > 6.0 * width {
            return 0.0;
        }
        profile(d, width) * mask(s)
    });
    let mut curves = Vec::new();
    let mut start = 0.0;
    for o in occ.iter().chain(std::iter::once(&[total, total])) {
        if o[0] - start > GT_STEP {
            curves.push(Polyline::new(CreaseKind::Ridge, sub_curve(&v, &cum, start, o[0])));
        }
        start = o[1];
    }
    Ok(Synthetic {
        image,
        ground_truth: CurveSet { curves },
        warnings: Vec::new(),
    })
}

/// A Y shape: a vertical trunk from the bottom that splits into two
/// branches towards the top corners.
pub fn gen_branch(size: usize, trunk_width: f64, branch_width: f64) -> Result<Synthetic> {
    check_size(size)?;
    if !(trunk_width > 0.0 && branch_width > 0.0) {
        return Err(Error::param("branch widths must be positive"));
    }
    let s = size as f64;
    let m = (s * 0.12).max(3.0);
    let junction = [(s - 1.0) / 2.0, s * 0.55];
    let segments = [
        ([(s - 1.0) / 2.0, s - 1.0 - m], junction, trunk_width),
        (junction, [m, m], branch_width),
        (junction, [s - 1.0 - m, m], branch_width),
    ];
    let image = ScalarField2D::from_fn(size, size, |x, y| {
        let p = [x as f64, y as f64];
        segments
            .iter()
            .map(|(a, b, w)| profile(crate::evaluate::point_to_polyline(p, &[*a, *b]), *w))
            .fold(0.0, f64::max)
    });
    let curves = segments
        .iter()
        .map(|(a, b, _)| Polyline::new(CreaseKind::Ridge, densify(&[*a, *b], GT_STEP)))
        .collect();
    Ok(Synthetic {
        image,
        ground_truth: CurveSet { curves },
        warnings: Vec::new(),
    })
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation
/// `std(u) / target_snr`, drawn from a ChaCha8 stream seeded with `seed` in
/// row-major order. The result is not clamped.
pub fn add_noise(u: &ScalarField2D, target_snr: f64, seed: u64) -> Result<ScalarField2D> {
    if !(target_snr > 0.0 && target_snr.is_finite()) {
        return Err(Error::param(format!("target SNR must be positive, got {target_snr}")));
    }
    let sd = u.std_dev() / target_snr;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = u
        .as_slice()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sd * z
        })
        .collect();
    Ok(u.with_data(data))
}

/// Symmetric trapezoid in `[0, 1]`: a flat top `plateau` samples wide with
/// linear flanks `slope` samples wide, centred in a signal of `length`.
pub fn gen_trapezoid_1d(length: usize, plateau: f64, slope: f64) -> Result<Vec<f64>> {
    if !(plateau >= 0.0 && slope > 0.0) {
        return Err(Error::param("plateau must be non-negative and slope positive"));
    }
    if plateau + 2.0 * slope > length as f64 - 1.0 {
        return Err(Error::param(format!(
            "plateau {plateau} with flanks {slope} does not fit {length} samples"
        )));
    }
    let c = (length as f64 - 1.0) / 2.0;
    Ok((0..length)
        .map(|i| ((plateau / 2.0 + slope - (i as f64 - c).abs()) / slope).clamp(0.0, 1.0))
        .collect())
}
