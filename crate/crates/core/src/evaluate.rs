//! Centerline accuracy metrics and image comparison helpers.
//!
//! Ground-truth curves are cut into pieces of roughly equal arc length. Each
//! piece is matched to the reconstructed chain with the smallest Hausdorff
//! distance among the chains passing within a neighborhood of it; `E` is the
//! mean distance from matched ground-truth samples to their chain and `p` the
//! matched fraction of ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crease::{dist, CurveSet, Polyline};
use crate::error::{Error, Result};
use crate::grid::ScalarField2D;

/// What `p` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    /// Fraction of ground-truth sample points.
    #[default]
    Points,
    /// Fraction of ground-truth pieces.
    Segments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub neighborhood: f64,
    pub sample_step: f64,
    /// Arc length of the ground-truth pieces; `None` keeps curves whole.
    pub segment_length: Option<f64>,
    pub coverage: CoverageMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            neighborhood: 6.0,
            sample_step: 0.25,
            segment_length: Some(5.0),
            coverage: CoverageMode::Points,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.neighborhood > 0.0 && self.neighborhood.is_finite()) {
            return Err(Error::param("neighborhood must be positive"));
        }
        if !(self.sample_step > 0.0 && self.sample_step.is_finite()) {
            return Err(Error::param("sample step must be positive"));
        }
        if let Some(l) = self.segment_length {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param("segment length must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    /// Index of the ground-truth curve the piece was cut from.
    pub gt_curve: usize,
    /// Arc-length interval of the piece along that curve.
    pub arc: [f64; 2],
    pub samples: usize,
    /// Matched reconstructed curve, if any candidate was found.
    pub matched: Option<usize>,
    pub hausdorff: Option<f64>,
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean distance over matched samples; `None` when nothing matched.
    #[serde(rename = "E")]
    pub e: Option<f64>,
    pub p: f64,
    pub segments: Vec<SegmentResult>,
}

impl EvalResult {
    /// One-line summary such as `E=0.332, p=100%`.
    pub fn summary(&self) -> String {
        let e = match self.e {
            Some(e) => format!("{e:.3}"),
            None => "n/a".to_string(),
        };
        format!("E={e}, p={:.0}%", 100.0 * self.p)
    }
}

#[inline]
fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = vx * vx + vy * vy;
    if l2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / l2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * vx, a[1] + t * vy])
}

/// Distance from `p` to the polyline through `v`.
pub fn point_to_polyline(p: [f64; 2], v: &[[f64; 2]]) -> f64 {
    match v.len() {
        0 => f64::INFINITY,
        1 => dist(p, v[0]),
        _ => v
            .windows(2)
            .map(|s| point_segment(p, s[0], s[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Vertices plus evenly spaced points so that no gap exceeds `step`.
pub fn densify(v: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(v.len());
    if let Some(&first) = v.first() {
        out.push(first);
    }
    for s in v.windows(2) {
        let k = (dist(s[0], s[1]) / step).ceil().max(1.0) as usize;
        for i in 1..=k {
            let t = i as f64 / k as f64;
            out.push([s[0][0] + t * (s[1][0] - s[0][0]), s[0][1] + t * (s[1][1] - s[0][1])]);
        }
    }
    out
}

/// Symmetric Hausdorff distance between two polylines, sampling each at
/// `sample_step` and measuring to the other's segments.
pub fn hausdorff(a: &Polyline, b: &Polyline, sample_step: f64) -> Result<f64> {
    if a.vertices.is_empty() || b.vertices.is_empty() {
        return Err(Error::param("hausdorff distance of an empty polyline"));
    }
    if !(sample_step > 0.0) {
        return Err(Error::param("sample step must be positive"));
    }
    let one_way = |p: &Polyline, q: &Polyline| {
        densify(&p.vertices, sample_step)
            .iter()
            .map(|&x| point_to_polyline(x, &q.vertices))
            .fold(0.0, f64::max)
    };
    Ok(one_way(a, b).max(one_way(b, a)))
}

/// Point at arc length `s` along `v`, with the index of its segment.
fn point_at(v: &[[f64; 2]], cum: &[f64], s: f64) -> ([f64; 2], usize) {
    let i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(v.len() - 2),
        Err(i) => i.saturating_sub(1).min(v.len() - 2),
    };
    let len = cum[i + 1] - cum[i];
    let t = if len > 0.0 { ((s - cum[i]) / len).clamp(0.0, 1.0) } else { 0.0 };
    ([v[i][0] + t * (v[i + 1][0] - v[i][0]), v[i][1] + t * (v[i + 1][1] - v[i][1])], i)
}

struct Piece {
    curve: usize,
    arc: [f64; 2],
    vertices: Vec<[f64; 2]>,
    /// Samples owned by this piece (shared end points are owned once).
    samples: Vec<[f64; 2]>,
    open: bool,
}

fn cut_pieces(idx: usize, c: &Polyline, cfg: &EvalConfig) -> Vec<Piece> {
    let v = &c.vertices;
    if v.len() < 2 {
        return vec![Piece {
            curve: idx,
            arc: [0.0, 0.0],
            vertices: v.clone(),
            samples: v.clone(),
            open: true,
        }];
    }
    let closed = c.is_closed();
    let mut cum = vec![0.0];
    for s in v.windows(2) {
        cum.push(cum.last().unwrap() + dist(s[0], s[1]));
    }
    let total = *cum.last().unwrap();
    let count = match cfg.segment_length {
        Some(l) => ((total / l).round() as usize).max(1),
        None => 1,
    };
    let mut pieces = Vec::with_capacity(count);
    for k in 0..count {
        let (s0, s1) = (total * k as f64 / count as f64, total * (k + 1) as f64 / count as f64);
        let (p0, i0) = point_at(v, &cum, s0);
        let (p1, i1) = point_at(v, &cum, s1);
        let mut verts = vec![p0];
        for (j, &q) in v.iter().enumerate().take(i1 + 1).skip(i0 + 1) {
            if cum[j] > s0 && cum[j] < s1 {
                verts.push(q);
            }
        }
        verts.push(p1);
        verts.dedup();
        let mut samples = densify(&verts, cfg.sample_step);
        let last_piece = k + 1 == count;
        if (closed || !last_piece) && samples.len() > 1 {
            samples.pop();
        }
        pieces.push(Piece {
            curve: idx,
            arc: [s0, s1],
            vertices: verts,
            samples,
            open: !(closed && count == 1),
        });
    }
    pieces
}

/// Whether the point of `g` nearest to `q` is not past one of the open
/// piece's end points.
fn alongside(q: [f64; 2], g: &[[f64; 2]], open: bool) -> bool {
    if !open || g.len() < 2 {
        return true;
    }
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for (i, s) in g.windows(2).enumerate() {
        let (vx, vy) = (s[1][0] - s[0][0], s[1][1] - s[0][1]);
        let l2 = vx * vx + vy * vy;
        let t = if l2 > 0.0 {
            ((q[0] - s[0][0]) * vx + (q[1] - s[0][1]) * vy) / l2
        } else {
            0.0
        };
        let d = point_segment(q, s[0], s[1]);
        if d < best.0 {
            best = (d, i, t);
        }
    }
    let (_, i, t) = best;
    let tol = 1e-9;
    !((i == 0 && t < -tol) || (i == g.len() - 2 && t > 1.0 + tol))
}

/// Matches every ground-truth piece to one reconstructed curve and scores
/// the match.
pub fn match_and_score(gt: &CurveSet, rec: &CurveSet, cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(Error::param("ground truth has no curves"));
    }
    let pieces: Vec<Piece> = gt
        .curves
        .iter()
        .enumerate()
        .flat_map(|(i, c)| cut_pieces(i, c, cfg))
        .collect();
    let dense_rec: Vec<Vec<[f64; 2]>> = rec
        .curves
        .iter()
        .map(|c| densify(&c.vertices, cfg.sample_step))
        .collect();
    let boxes: Vec<[f64; 4]> = rec.curves.iter().map(|c| bbox(&c.vertices)).collect();
    let nb = cfg.neighborhood;

    let segments: Vec<SegmentResult> = pieces
        .par_iter()
        .map(|piece| {
            let gbox = bbox(&piece.vertices);
            let gdense = densify(&piece.vertices, cfg.sample_step);
            let mut best: Option<(f64, usize)> = None;
            for (ci, c) in rec.curves.iter().enumerate() {
                let b = boxes[ci];
                if b[0] > gbox[2] + nb || b[2] < gbox[0] - nb || b[1] > gbox[3] + nb || b[3] < gbox[1] - nb {
                    continue;
                }
                let mut near_max: Option<f64> = None;
                for &q in &dense_rec[ci] {
                    let d = point_to_polyline(q, &piece.vertices);
                    if d <= nb && alongside(q, &piece.vertices, piece.open) {
                        near_max = Some(near_max.map_or(d, |m: f64| m.max(d)));
                    }
                }
                let Some(rec_to_gt) = near_max else {
                    continue;
                };
                let gt_to_rec = gdense
                    .iter()
                    .map(|&p| point_to_polyline(p, &c.vertices))
                    .fold(0.0, f64::max);
                let h = rec_to_gt.max(gt_to_rec);
                if best.is_none_or(|(bh, _)| h < bh) {
                    best = Some((h, ci));
                }
            }
            let (matched, hd, mean) = match best {
                Some((h, ci)) => {
                    let verts = &rec.curves[ci].vertices;
                    let m = piece
                        .samples
                        .iter()
                        .map(|&p| point_to_polyline(p, verts))
                        .sum::<f64>()
                        / piece.samples.len().max(1) as f64;
                    (Some(ci), Some(h), Some(m))
                }
                None => (None, None, None),
            };
            SegmentResult {
                gt_curve: piece.curve,
                arc: piece.arc,
                samples: piece.samples.len(),
                matched,
                hausdorff: hd,
                mean_distance: mean,
            }
        })
        .collect();

    let total: usize = segments.iter().map(|s| s.samples).sum();
    let matched: usize = segments.iter().filter(|s| s.matched.is_some()).map(|s| s.samples).sum();
    let dist_sum: f64 = segments
        .iter()
        .filter_map(|s| s.mean_distance.map(|m| m * s.samples as f64))
        .sum();
    let p = match cfg.coverage {
        CoverageMode::Points => {
            if total == 0 {
                0.0
            } else {
                matched as f64 / total as f64
            }
        }
        CoverageMode::Segments => {
            segments.iter().filter(|s| s.matched.is_some()).count() as f64 / segments.len() as f64
        }
    };
    let e = (matched > 0).then(|| dist_sum / matched as f64);
    Ok(EvalResult { e, p, segments })
}

fn bbox(v: &[[f64; 2]]) -> [f64; 4] {
    v.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

/// Euclidean distance between two images.
pub fn l2_distance(u: &ScalarField2D, v: &ScalarField2D) -> Result<f64> {
    u.same_dims(v)?;
    Ok(u.as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `std(clean) / std(noisy - clean)`, `+∞` when the images agree.
pub fn snr(clean: &ScalarField2D, noisy: &ScalarField2D) -> Result<f64> {
    let noise = noisy.zip_map(clean, |a, b| a - b)?;
    let sn = noise.std_dev();
    if sn == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(clean.std_dev() / sn)
}
