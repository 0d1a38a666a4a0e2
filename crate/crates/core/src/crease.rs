//! Sub-pixel ridge and valley extraction.
//!
//! Creases lie on the zero set of `d = det(g | Hg)` with `g = ∇u_σ` and
//! `H = H(u_σ)`: there the gradient is an eigenvector of the Hessian. That
//! set also contains points where `g` is aligned with the cross-crease
//! eigenvector, so marching squares follows only the crease branch, and
//! every vertex is classified and filtered by the Hessian eigensystem
//! interpolated to it.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_smooth, gradient, hessian, GradientField, HessianField, ScalarField2D, Sym2};
use crate::scale_select::{eigen_unchecked, ScaleSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CreaseKind {
    Ridge,
    Valley,
}

impl CreaseKind {
    pub fn flipped(self) -> CreaseKind {
        match self {
            CreaseKind::Ridge => CreaseKind::Valley,
            CreaseKind::Valley => CreaseKind::Ridge,
        }
    }
}

/// Chain of sub-pixel `(x, y)` vertices. Closed chains repeat the first
/// vertex at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub kind: CreaseKind,
    #[serde(rename = "points")]
    pub vertices: Vec<[f64; 2]>,
    /// Mean magnitude of the cross-crease Hessian eigenvalue along the chain.
    #[serde(default)]
    pub strength: f64,
}

impl Polyline {
    pub fn new(kind: CreaseKind, vertices: Vec<[f64; 2]>) -> Self {
        Polyline {
            kind,
            vertices,
            strength: 0.0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.len() > 2 && self.vertices.first() == self.vertices.last()
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveSet {
    pub curves: Vec<Polyline>,
}

impl CurveSet {
    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn of_kind(&self, kind: CreaseKind) -> impl Iterator<Item = &Polyline> {
        self.curves.iter().filter(move |c| c.kind == kind)
    }
}

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `d` together with the derivatives it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CreaseField {
    pub d: ScalarField2D,
    pub gradient: GradientField,
    pub hessian: HessianField,
}

fn assemble_field(g: GradientField, h: HessianField, like: &ScalarField2D) -> CreaseField {
    let d = g
        .data
        .par_iter()
        .zip(h.data.par_iter())
        .map(|(g, m)| {
            let hg = m.mul_vec(*g);
            g[0] * hg[1] - g[1] * hg[0]
        })
        .collect();
    CreaseField {
        d: like.with_data(d),
        gradient: g,
        hessian: h,
    }
}

/// `d = g_x (Hg)_y - g_y (Hg)_x` of `u_σ`.
pub fn crease_field(u: &ScalarField2D, sigma: f64) -> Result<CreaseField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be non-negative, got {sigma}")));
    }
    let us = gaussian_smooth(u, sigma)?;
    Ok(assemble_field(gradient(&us)?, hessian(&us)?, u))
}

/// As [`crease_field`] with σ looked up per pixel in `scale_map`.
pub fn crease_field_scaled(u: &ScalarField2D, scale_map: &ScalarField2D) -> Result<CreaseField> {
    u.same_dims(scale_map)?;
    if scale_map.as_slice().iter().any(|&s| s < 0.0) {
        return Err(Error::param("scale map values must be non-negative"));
    }
    let mut used = scale_map.as_slice().to_vec();
    used.sort_by(f64::total_cmp);
    used.dedup();
    if used.len() == 1 {
        return crease_field(u, used[0]);
    }
    let space = ScaleSpace::build(u, &used)?;
    let (w, h) = u.dims();
    let levels: Vec<usize> = scale_map.as_slice().iter().map(|&s| space.level_of(s)).collect();
    let g = GradientField {
        width: w,
        height: h,
        data: levels
            .iter()
            .enumerate()
            .map(|(i, &l)| space.gradients[l].data[i])
            .collect(),
    };
    let hf = HessianField {
        width: w,
        height: h,
        data: levels
            .iter()
            .enumerate()
            .map(|(i, &l)| space.hessians[l].data[i])
            .collect(),
    };
    Ok(assemble_field(g, hf, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreaseConfig {
    /// Vertices whose cross-crease eigenvalue is smaller in magnitude are dropped.
    pub strength_threshold: f64,
    /// Same-kind chain ends closer than this are joined; 0 disables linking.
    pub link_gap: f64,
    /// Chains with fewer vertices are discarded.
    pub min_vertices: usize,
}

impl Default for CreaseConfig {
    fn default() -> Self {
        CreaseConfig {
            strength_threshold: 1e-4,
            link_gap: 2.0,
            min_vertices: 2,
        }
    }
}

impl CreaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength_threshold >= 0.0 && self.strength_threshold.is_finite()) {
            return Err(Error::param("strength threshold must be non-negative"));
        }
        if !(self.link_gap >= 0.0 && self.link_gap.is_finite()) {
            return Err(Error::param("link gap must be non-negative"));
        }
        Ok(())
    }
}

/// Identity of a grid edge carrying a zero crossing: `(x, y, vertical)` is
/// the edge from pixel `(x, y)` to `(x + 1, y)` or, if vertical, `(x, y + 1)`.
type EdgeId = (usize, usize, bool);

#[derive(Debug, Clone, Copy)]
struct Crossing {
    pos: [f64; 2],
    keep: Option<(CreaseKind, f64)>,
}

/// Per-pixel cross-crease eigenpair and the gradient component along it.
#[derive(Debug, Clone, Copy)]
struct Frame {
    e2: [f64; 2],
    g: [f64; 2],
}

impl Frame {
    /// `g·e2` with `e2` flipped to agree with `reference`.
    fn across(&self, reference: [f64; 2]) -> f64 {
        let s = if self.e2[0] * reference[0] + self.e2[1] * reference[1] < 0.0 {
            -1.0
        } else {
            1.0
        };
        s * (self.g[0] * self.e2[0] + self.g[1] * self.e2[1])
    }

    fn own_across(&self) -> f64 {
        self.across(self.e2)
    }
}

/// Marching squares on the crease branch of the zero set of `d`, followed
/// by the strength filter.
///
/// With `g = a e1 + b e2`, `d = ±a b (ν2 - ν1)`: the zero set is the union
/// of `a = 0` and the crease branch `b = 0`. Where the gradient along the
/// crease vanishes (creases of constant height) `a` carries no reliable
/// sign, so crossings are located on `b` directly, with the eigenvectors at
/// the two ends of each grid edge oriented to agree. Cells touching the
/// outermost pixel ring are skipped since the Hessian is not defined there.
/// A value counts as positive when it is `>= 0`.
pub fn marching_squares(field: &CreaseField, cfg: &CreaseConfig) -> Result<CurveSet> {
    cfg.validate()?;
    let (w, h) = field.d.dims();
    if w < 2 || h < 2 {
        return Err(Error::param("marching squares needs at least a 2x2 grid"));
    }
    let frames: Vec<Frame> = field
        .hessian
        .data
        .par_iter()
        .zip(field.gradient.data.par_iter())
        .map(|(m, g)| {
            let e = eigen_unchecked(*m);
            Frame {
                e2: e.e2,
                g: *g,
            }
        })
        .collect();

    // crossing of `b` on an edge, with the edge's end points oriented alike
    let crossing_at = |e: EdgeId| -> Option<Crossing> {
        let (x, y, vertical) = e;
        let (x1, y1) = if vertical { (x, y + 1) } else { (x + 1, y) };
        let (i0, i1) = (y * w + x, y1 * w + x1);
        let b0 = frames[i0].own_across();
        let b1 = frames[i1].across(frames[i0].e2);
        if (b0 >= 0.0) == (b1 >= 0.0) {
            return None;
        }
        let t = b0 / (b0 - b1);
        let p = if vertical {
            [x as f64, y as f64 + t]
        } else {
            [x as f64 + t, y as f64]
        };
        Some(Crossing {
            pos: p,
            keep: classify(field, i0, i1, t, cfg.strength_threshold),
        })
    };

    // segments per cell, in row-major cell order
    let cells: Vec<Vec<(EdgeId, Crossing, EdgeId, Crossing)>> = if w < 4 || h < 4 {
        Vec::new()
    } else {
        (1..h - 2)
            .into_par_iter()
            .map(|y| {
                let mut out = Vec::new();
                for x in 1..w - 2 {
                    cell_segments(x, y, w, &frames, &crossing_at, &mut out);
                }
                out
            })
            .collect()
    };

    let mut crossings: HashMap<EdgeId, Crossing> = HashMap::new();
    let mut adj: HashMap<EdgeId, Vec<EdgeId>> = HashMap::new();
    for (a, ca, b, cb) in cells.into_iter().flatten() {
        crossings.entry(a).or_insert(ca);
        crossings.entry(b).or_insert(cb);
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }

    let raw_chains = link_edges(&adj);
    let mut curves = Vec::new();
    for (ids, closed) in raw_chains {
        let pts: Vec<Crossing> = ids.iter().map(|e| crossings[e]).collect();
        split_filtered(&pts, closed, cfg.min_vertices.max(2), &mut curves);
    }
    if cfg.link_gap > 0.0 {
        curves = link_gaps(curves, cfg.link_gap);
    }
    curves.retain(|c| c.vertices.len() >= cfg.min_vertices.max(2));
    Ok(CurveSet { curves })
}

/// Keeps a crossing when the interpolated cross-crease eigenvalue is strong
/// enough; its sign gives the kind.
fn classify(field: &CreaseField, i0: usize, i1: usize, t: f64, threshold: f64) -> Option<(CreaseKind, f64)> {
    let lerp = |a: f64, b: f64| a + t * (b - a);
    let (h0, h1) = (field.hessian.data[i0], field.hessian.data[i1]);
    let m = Sym2::new(lerp(h0.xx, h1.xx), lerp(h0.xy, h1.xy), lerp(h0.yy, h1.yy));
    let e = eigen_unchecked(m);
    if !(e.nu2.abs() >= threshold) || e.nu2 == 0.0 {
        return None;
    }
    let kind = if e.nu2 < 0.0 {
        CreaseKind::Ridge
    } else {
        CreaseKind::Valley
    };
    Some((kind, e.nu2.abs()))
}

/// Pairs of crossing edges inside the cell with top-left pixel `(x, y)`.
/// Cells with an odd number of crossings contain an orientation defect of
/// the eigenvector field and produce nothing.
fn cell_segments(
    x: usize,
    y: usize,
    w: usize,
    frames: &[Frame],
    crossing_at: &impl Fn(EdgeId) -> Option<Crossing>,
    out: &mut Vec<(EdgeId, Crossing, EdgeId, Crossing)>,
) {
    let top: EdgeId = (x, y, false);
    let right: EdgeId = (x + 1, y, true);
    let bottom: EdgeId = (x, y + 1, false);
    let left: EdgeId = (x, y, true);
    let mut edges = Vec::with_capacity(4);
    for e in [top, right, bottom, left] {
        if let Some(c) = crossing_at(e) {
            edges.push((e, c));
        }
    }
    match edges.len() {
        2 => out.push((edges[0].0, edges[0].1, edges[1].0, edges[1].1)),
        4 => {
            let corners = [y * w + x, y * w + x + 1, (y + 1) * w + x + 1, (y + 1) * w + x];
            let reference = frames[corners[0]].e2;
            let b: Vec<f64> = corners.iter().map(|&i| frames[i].across(reference)).collect();
            let centre = 0.25 * (b[0] + b[1] + b[2] + b[3]);
            let (t, r, bo, l) = (edges[0], edges[1], edges[2], edges[3]);
            // the centre joins the corners of its own sign
            if (centre >= 0.0) == (b[0] >= 0.0) {
                out.push((t.0, t.1, r.0, r.1));
                out.push((bo.0, bo.1, l.0, l.1));
            } else {
                out.push((t.0, t.1, l.0, l.1));
                out.push((bo.0, bo.1, r.0, r.1));
            }
        }
        _ => {}
    }
}

/// Walks the crossing graph into chains; returns edge sequences and whether
/// each is closed (closed sequences do not repeat their first edge).
fn link_edges(adj: &HashMap<EdgeId, Vec<EdgeId>>) -> Vec<(Vec<EdgeId>, bool)> {
    let mut keys: Vec<EdgeId> = adj.keys().copied().collect();
    keys.sort_unstable();
    let mut used_seg: HashMap<(EdgeId, EdgeId), usize> = HashMap::new();
    let seg_key = |a: EdgeId, b: EdgeId| if a <= b { (a, b) } else { (b, a) };
    for (a, ns) in adj {
        for &b in ns {
            if *a <= b {
                *used_seg.entry(seg_key(*a, b)).or_default() += 1;
            }
        }
    }
    let mut chains = Vec::new();
    let walk = |start: EdgeId, used: &mut HashMap<(EdgeId, EdgeId), usize>| -> Option<(Vec<EdgeId>, bool)> {
        let mut seq = vec![start];
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().copied().find(|&n| used.get(&seg_key(cur, n)).copied().unwrap_or(0) > 0);
            match next {
                Some(n) => {
                    *used.get_mut(&seg_key(cur, n)).unwrap() -= 1;
                    if n == start {
                        return Some((seq, true));
                    }
                    seq.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        if seq.len() >= 2 {
            Some((seq, false))
        } else {
            None
        }
    };
    // open chains start at crossings of odd degree
    for &k in &keys {
        if adj[&k].len() % 2 == 1 {
            while adj[&k].iter().any(|&n| used_seg.get(&seg_key(k, n)).copied().unwrap_or(0) > 0) {
                if let Some(c) = walk(k, &mut used_seg) {
                    chains.push(c);
                }
            }
        }
    }
    for &k in &keys {
        while adj[&k].iter().any(|&n| used_seg.get(&seg_key(k, n)).copied().unwrap_or(0) > 0) {
            if let Some(c) = walk(k, &mut used_seg) {
                chains.push(c);
            }
        }
    }
    chains
}

/// Splits a chain at rejected vertices and at changes of kind.
fn split_filtered(pts: &[Crossing], closed: bool, min_vertices: usize, out: &mut Vec<Polyline>) {
    let n = pts.len();
    let key = |c: &Crossing| c.keep.map(|k| k.0);
    if closed && n >= 3 {
        let first = key(&pts[0]);
        if first.is_some() && pts.iter().all(|c| key(c) == first) {
            let mut vertices: Vec<[f64; 2]> = pts.iter().map(|c| c.pos).collect();
            vertices.push(pts[0].pos);
            let strength = pts.iter().map(|c| c.keep.unwrap().1).sum::<f64>() / n as f64;
            out.push(Polyline {
                kind: first.unwrap(),
                vertices,
                strength,
            });
            return;
        }
        // start right after a break so no run wraps around the seam
        let start = (0..n)
            .find(|&i| key(&pts[i]) != key(&pts[(i + n - 1) % n]))
            .unwrap_or(0);
        let rotated: Vec<Crossing> = (0..n).map(|i| pts[(start + i) % n]).collect();
        return split_filtered(&rotated, false, min_vertices, out);
    }
    let mut i = 0;
    while i < n {
        let Some((kind, _)) = pts[i].keep else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j < n && key(&pts[j]) == Some(kind) {
            j += 1;
        }
        if j - i >= min_vertices {
            let run = &pts[i..j];
            out.push(Polyline {
                kind,
                vertices: run.iter().map(|c| c.pos).collect(),
                strength: run.iter().map(|c| c.keep.unwrap().1).sum::<f64>() / run.len() as f64,
            });
        }
        i = j;
    }
}

/// Joins same-kind open chains whose ends are within `gap`, nearest pairs
/// first. Bridges are subdivided so vertex spacing stays at most one pixel.
fn link_gaps(curves: Vec<Polyline>, gap: f64) -> Vec<Polyline> {
    let n = curves.len();
    // end `2 i` is the first vertex of chain `i`, `2 i + 1` its last
    let open: Vec<bool> = curves.iter().map(|c| !c.is_closed() && !c.vertices.is_empty()).collect();
    let mut ends: Vec<(f64, usize)> = (0..2 * n)
        .filter(|&e| open[e / 2])
        .map(|e| (end_point(&curves[e / 2], e % 2 == 1)[0], e))
        .collect();
    ends.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (k, &(x0, e0)) in ends.iter().enumerate() {
        for &(x1, e1) in &ends[k + 1..] {
            if x1 - x0 > gap {
                break;
            }
            let (c0, c1) = (e0 / 2, e1 / 2);
            if curves[c0].kind != curves[c1].kind || (c0 == c1 && curves[c0].vertices.len() < 3) {
                continue;
            }
            let dd = dist(end_point(&curves[c0], e0 % 2 == 1), end_point(&curves[c1], e1 % 2 == 1));
            if dd <= gap {
                pairs.push((dd, e0.min(e1), e0.max(e1)));
            }
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));

    // partner[e]: the end joined to `e`; component roots detect loops
    let mut partner: Vec<Option<usize>> = vec![None; 2 * n];
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    let mut closed_root = vec![false; n];
    for (_, e0, e1) in pairs {
        if partner[e0].is_some() || partner[e1].is_some() {
            continue;
        }
        let (r0, r1) = (find(&mut root, e0 / 2), find(&mut root, e1 / 2));
        if r0 == r1 {
            closed_root[r0] = true;
        } else {
            root[r1] = r0;
            closed_root[r0] |= closed_root[r1];
        }
        partner[e0] = Some(e1);
        partner[e1] = Some(e0);
    }

    let mut visited = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for start in 0..n {
        if visited[start] {
            continue;
        }
        if !open[start] || (partner[2 * start].is_none() && partner[2 * start + 1].is_none()) {
            visited[start] = true;
            out.push(curves[start].clone());
            continue;
        }
        let r = find(&mut root, start);
        // open components are walked from their free end, loops from `start`
        let mut entry = 2 * start;
        if !closed_root[r] {
            while let Some(p) = partner[entry] {
                entry = p ^ 1;
            }
        }
        let mut vertices: Vec<[f64; 2]> = Vec::new();
        let (mut weighted, mut count) = (0.0, 0.0);
        let mut e = entry;
        loop {
            let c = e / 2;
            visited[c] = true;
            let mut vs = curves[c].vertices.clone();
            if e % 2 == 1 {
                vs.reverse();
            }
            if let Some(&last) = vertices.last() {
                vertices.extend(bridge(last, vs[0]));
            }
            let m = vs.len() as f64;
            weighted += curves[c].strength * m;
            count += m;
            vertices.extend(vs);
            match partner[e ^ 1] {
                Some(p) if p != entry => e = p,
                Some(_) => {
                    let (a, b) = (*vertices.last().unwrap(), vertices[0]);
                    vertices.extend(bridge(a, b));
                    vertices.push(b);
                    break;
                }
                None => break,
            }
        }
        out.push(Polyline {
            kind: curves[start].kind,
            vertices,
            strength: weighted / count,
        });
    }
    out
}

fn end_point(c: &Polyline, last: bool) -> [f64; 2] {
    if last {
        *c.vertices.last().unwrap()
    } else {
        c.vertices[0]
    }
}

/// Interior points of the straight bridge from `a` to `b`.
fn bridge(a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let k = dist(a, b).ceil().max(1.0) as usize;
    (1..k)
        .map(|i| {
            let t = i as f64 / k as f64;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

/// Crease field of `u` at the per-pixel scales of `scale_map` (σ = 1
/// everywhere when no map is given), then marching squares.
pub fn extract_creases(
    u: &ScalarField2D,
    scale_map: Option<&ScalarField2D>,
    cfg: &CreaseConfig,
) -> Result<CurveSet> {
    let field = match scale_map {
        Some(map) => crease_field_scaled(u, map)?,
        None => crease_field(u, 1.0)?,
    };
    marching_squares(&field, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;

    fn tilted_ridge(n: usize, angle: f64, offset: f64) -> ScalarField2D {
        let (nx, ny) = (-angle.sin(), angle.cos());
        ScalarField2D::from_fn(n, n, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let s = nx * x + ny * y - offset;
            let t = ny * x - nx * y;
            -0.01 * s * s + 0.05 * t
        })
    }

    #[test]
    fn analytic_field() {
        let u = ScalarField2D::from_fn(12, 12, |x, y| {
            let y = y as f64 - 5.5;
            -y * y + x as f64
        });
        let f = crease_field(&u, 0.0).unwrap();
        for y in 1..11 {
            for x in 1..11 {
                let want = 4.0 * (y as f64 - 5.5);
                assert!((f.d.get(x, y) - want).abs() < 1e-12);
            }
        }
        let c = crease_field(&ScalarField2D::filled(8, 8, 0.3), 1.0).unwrap();
        assert!(c.d.as_slice().iter().all(|&v| v == 0.0));
        assert!(crease_field(&u, -1.0).is_err());
    }

    #[test]
    fn field_matches_composition() {
        let u = gaussian_smooth(&random_field(20, 17, 4), 1.5).unwrap();
        let f = crease_field(&u, 1.2).unwrap();
        let us = gaussian_smooth(&u, 1.2).unwrap();
        let g = gradient(&us).unwrap();
        let h = hessian(&us).unwrap();
        for i in 0..u.len() {
            let (gx, gy) = (g.data[i][0], g.data[i][1]);
            let m = h.data[i];
            let hg = [m.xx * gx + m.xy * gy, m.xy * gx + m.yy * gy];
            let want = gx * hg[1] - gy * hg[0];
            assert!((f.d.as_slice()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn horizontal_ridge_is_one_chain_on_the_line() {
        let n = 32;
        let u = ScalarField2D::from_fn(n, n, |x, y| {
            let s = y as f64 - 15.3;
            -s * s + x as f64
        });
        let curves = marching_squares(&crease_field(&u, 0.0).unwrap(), &CreaseConfig::default()).unwrap();
        assert_eq!(curves.len(), 1);
        let c = &curves.curves[0];
        assert_eq!(c.kind, CreaseKind::Ridge);
        assert!(c.vertices.iter().all(|p| (p[1] - 15.3).abs() < 1e-9));
        assert!(c.vertices.len() >= n - 4);
    }

    #[test]
    fn tilted_ridge_within_tolerance() {
        let angle: f64 = 0.3;
        let offset = 14.2;
        let u = tilted_ridge(40, angle, offset);
        let curves = marching_squares(&crease_field(&u, 0.0).unwrap(), &CreaseConfig::default()).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves.curves[0].kind, CreaseKind::Ridge);
        let (nx, ny) = (-angle.sin(), angle.cos());
        for p in &curves.curves[0].vertices {
            let s = nx * p[0] + ny * p[1] - offset;
            assert!(s.abs() < 0.1, "offset {s}");
        }
    }

    #[test]
    fn no_sign_change_gives_nothing() {
        let f = crease_field(&ScalarField2D::filled(10, 10, 1.0), 1.0).unwrap();
        assert!(marching_squares(&f, &CreaseConfig::default()).unwrap().is_empty());
        let u = ScalarField2D::from_fn(10, 10, |x, y| (x + 2 * y) as f64);
        let f = crease_field(&u, 0.0).unwrap();
        assert!(marching_squares(&f, &CreaseConfig::default()).unwrap().is_empty());
    }

    fn rounded(c: &CurveSet) -> Vec<(CreaseKind, Vec<[i64; 2]>)> {
        let mut v: Vec<_> = c
            .curves
            .iter()
            .map(|p| {
                let mut pts: Vec<[i64; 2]> = p
                    .vertices
                    .iter()
                    .map(|q| [(q[0] * 1e8).round() as i64, (q[1] * 1e8).round() as i64])
                    .collect();
                if p.is_closed() {
                    pts.pop();
                }
                pts.sort_unstable();
                (p.kind, pts)
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn negation_swaps_kinds() {
        let u = gaussian_smooth(&random_field(40, 36, 9), 2.0).unwrap();
        let a = extract_creases(&u, None, &CreaseConfig::default()).unwrap();
        let b = extract_creases(&u.negated(), None, &CreaseConfig::default()).unwrap();
        assert!(!a.is_empty());
        let flipped = CurveSet {
            curves: b
                .curves
                .iter()
                .map(|c| Polyline {
                    kind: c.kind.flipped(),
                    ..c.clone()
                })
                .collect(),
        };
        assert_eq!(rounded(&a), rounded(&flipped));
    }

    #[test]
    fn rotation_moves_geometry() {
        let u = gaussian_smooth(&random_field(36, 30, 12), 2.0).unwrap();
        let (w, _) = u.dims();
        let a = extract_creases(&u, None, &CreaseConfig::default()).unwrap();
        let b = extract_creases(&u.rotate90(), None, &CreaseConfig::default()).unwrap();
        // new (x', y') sits at old (w - 1 - y', x')
        let back = CurveSet {
            curves: b
                .curves
                .iter()
                .map(|c| Polyline {
                    vertices: c.vertices.iter().map(|p| [w as f64 - 1.0 - p[1], p[0]]).collect(),
                    ..c.clone()
                })
                .collect(),
        };
        assert!(!a.is_empty());
        assert_eq!(rounded(&a), rounded(&back));
    }

    #[test]
    fn chains_are_simple_and_dense() {
        let u = gaussian_smooth(&random_field(48, 48, 33), 2.5).unwrap();
        let cfg = CreaseConfig {
            link_gap: 0.0,
            ..CreaseConfig::default()
        };
        let curves = extract_creases(&u, None, &cfg).unwrap();
        for c in &curves.curves {
            assert!(c.vertices.len() >= 2);
            let body = if c.is_closed() {
                &c.vertices[..c.vertices.len() - 1]
            } else {
                &c.vertices[..]
            };
            for i in 0..body.len() {
                for j in i + 1..body.len() {
                    assert_ne!(body[i], body[j]);
                }
            }
            for w in c.vertices.windows(2) {
                assert!(dist(w[0], w[1]) <= 2f64.sqrt() + 1e-12);
            }
            // one coordinate of every vertex is integral
            for p in &c.vertices {
                assert!(p[0].fract() == 0.0 || p[1].fract() == 0.0);
            }
        }
    }

    #[test]
    fn link_gaps_joins_nearby_ends() {
        let a = Polyline::new(CreaseKind::Ridge, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let b = Polyline::new(CreaseKind::Ridge, vec![[6.0, 0.0], [5.0, 0.0], [4.0, 0.0], [3.5, 0.0]]);
        let c = Polyline::new(CreaseKind::Valley, vec![[3.0, 0.5], [3.0, 1.5]]);
        let out = link_gaps(vec![a.clone(), b.clone(), c.clone()], 2.0);
        assert_eq!(out.len(), 2);
        let joined = &out[0];
        assert_eq!(joined.vertices.first(), Some(&[0.0, 0.0]));
        assert_eq!(joined.vertices.last(), Some(&[6.0, 0.0]));
        assert!(joined.vertices.windows(2).all(|w| dist(w[0], w[1]) <= 1.0 + 1e-12));
        let out = link_gaps(vec![a, b, c], 1.0);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn clean_rings_give_closed_ridges_at_their_radii() {
        let radii = [12.0, 26.0, 40.0];
        let s = crate::synthgen::gen_concentric(96, &radii, &[1.5, 2.5, 4.0]).unwrap();
        let curves = extract_creases(&s.image, None, &CreaseConfig::default()).unwrap();
        let c = 47.5;
        for r in radii {
            let ring = curves
                .of_kind(CreaseKind::Ridge)
                .filter(|p| p.is_closed())
                .find(|p| (dist(p.vertices[0], [c, c]) - r).abs() < 2.0)
                .unwrap_or_else(|| panic!("no closed ridge near radius {r}"));
            for v in &ring.vertices {
                let d = dist(*v, [c, c]) - r;
                assert!(d.abs() < 0.15, "radius {r}: vertex off by {d}");
            }
            assert!((ring.length() - std::f64::consts::TAU * r).abs() < 0.05 * r);
        }
    }
}
