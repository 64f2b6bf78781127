//! Patch descriptors, all-pairs correlation, argmax matching and soft-argmax
//! refinement.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};

/// Refinement temperature.
pub const DEFAULT_BETA: f64 = 10.0;
/// Largest input (in pixels) for which a dense volume may be built.
pub const MAX_DENSE_PIXELS: usize = 128 * 128;
/// Raw descriptor norms below this count as flat.
pub const FLAT_NORM: f64 = 1e-6;

/// One descriptor per pixel; flat pixels carry the zero descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureGrid {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * dim || dim == 0 {
            return Err(Error::GeometryMismatch(format!(
                "{} values for {width}x{height} descriptors of length {dim}",
                data.len()
            )));
        }
        let valid = data.chunks(dim).map(|d| d.iter().any(|&v| v != 0.0)).collect();
        Ok(Self {
            width,
            height,
            dim,
            data,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// 2x2 mean of descriptors, the feature-side equivalent of pooling the
    /// correlation over its target axes.
    pub fn pooled(&self) -> Result<Self> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot pool {}x{} descriptors",
                self.width, self.height
            )));
        }
        let mut data = vec![0.0; w * h * self.dim];
        for y in 0..h {
            for x in 0..w {
                let out = &mut data[(y * w + x) * self.dim..(y * w + x + 1) * self.dim];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    for (o, v) in out.iter_mut().zip(self.descriptor(2 * x + dx, 2 * y + dy)) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|v| *v *= 0.25);
            }
        }
        Self::new(w, h, self.dim, data)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Zero-mean `(2r+1)^2` patch (border replicated) followed by the central
/// differences `dx, dy`, scaled to unit length.
pub fn extract_features(image: &Grid, radius: usize) -> Result<FeatureGrid> {
    let gray = if image.channels() == 1 {
        image.clone()
    } else {
        image.luminance()
    };
    let (w, h) = (gray.width(), gray.height());
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let r = radius as isize;
    let side = 2 * radius + 1;
    let dim = side * side + 2;
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * dim];
            for x in 0..w {
                let d = &mut row[x * dim..(x + 1) * dim];
                let (xi, yi) = (x as isize, y as isize);
                let mut k = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        d[k] = gray.get_clamped(xi + dx, yi + dy, 0);
                        k += 1;
                    }
                }
                let mean = d[..k].iter().sum::<f64>() / k as f64;
                d[..k].iter_mut().for_each(|v| *v -= mean);
                d[k] = 0.5 * (gray.get_clamped(xi + 1, yi, 0) - gray.get_clamped(xi - 1, yi, 0));
                d[k + 1] = 0.5 * (gray.get_clamped(xi, yi + 1, 0) - gray.get_clamped(xi, yi - 1, 0));
                let norm = dot(d, d).sqrt();
                if norm < FLAT_NORM {
                    d.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    d.iter_mut().for_each(|v| *v /= norm);
                }
            }
            row
        })
        .collect();
    FeatureGrid::new(w, h, dim, rows.concat())
}

/// `C[i, j, k, l]`: source pixel `(x=j, y=i)` against target `(x=l, y=k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    width: usize,
    height: usize,
    target_width: usize,
    target_height: usize,
    data: Vec<f64>,
}

impl CorrelationVolume {
    pub fn from_parts(
        (width, height): (usize, usize),
        (target_width, target_height): (usize, usize),
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != width * height * target_width * target_height {
            return Err(Error::GeometryMismatch("correlation volume size".into()));
        }
        Ok(Self {
            width,
            height,
            target_width,
            target_height,
            data,
        })
    }

    /// `(H, W, H', W')`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.height, self.width, self.target_height, self.target_width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.width + j) * self.target_height + k) * self.target_width + l]
    }
}

/// All-pairs dot products `C = sum_h F1[i,j,h] F2[k,l,h]`.
pub fn build_correlation(f1: &FeatureGrid, f2: &FeatureGrid) -> Result<CorrelationVolume> {
    if f1.dim != f2.dim {
        return Err(Error::GeometryMismatch(format!(
            "descriptor lengths differ: {} vs {}",
            f1.dim, f2.dim
        )));
    }
    for f in [f1, f2] {
        if f.width * f.height > MAX_DENSE_PIXELS {
            return Err(Error::InvalidInput(format!(
                "{}x{} is too large for a dense correlation volume; use a windowed lookup",
                f.width, f.height
            )));
        }
    }
    let per_source = f2.width * f2.height;
    let mut data = vec![0.0; f1.width * f1.height * per_source];
    data.par_chunks_mut(per_source)
        .enumerate()
        .for_each(|(p, out)| {
            let a = &f1.data[p * f1.dim..(p + 1) * f1.dim];
            for (q, o) in out.iter_mut().enumerate() {
                *o = dot(a, &f2.data[q * f2.dim..(q + 1) * f2.dim]);
            }
        });
    CorrelationVolume::from_parts((f1.width, f1.height), (f2.width, f2.height), data)
}

/// Correlation levels with the target axes average-pooled by `2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPyramid {
    levels: Vec<CorrelationVolume>,
}

impl CorrelationPyramid {
    pub fn levels(&self) -> &[CorrelationVolume] {
        &self.levels
    }
}

/// Pools the last two axes 2x per level; `levels` counts the input level.
pub fn pool_correlation(volume: &CorrelationVolume, levels: usize) -> Result<CorrelationPyramid> {
    if levels == 0 {
        return Err(Error::InvalidInput("correlation pyramid needs at least one level".into()));
    }
    let mut out = vec![volume.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let (tw, th) = (prev.target_width / 2, prev.target_height / 2);
        if tw == 0 || th == 0 {
            return Err(Error::InvalidInput(format!(
                "{levels} levels exceed the {}x{} target",
                volume.target_width, volume.target_height
            )));
        }
        let mut data = Vec::with_capacity(prev.width * prev.height * tw * th);
        for i in 0..prev.height {
            for j in 0..prev.width {
                for k in 0..th {
                    for l in 0..tw {
                        let s = prev.get(i, j, 2 * k, 2 * l)
                            + prev.get(i, j, 2 * k, 2 * l + 1)
                            + prev.get(i, j, 2 * k + 1, 2 * l)
                            + prev.get(i, j, 2 * k + 1, 2 * l + 1);
                        data.push(0.25 * s);
                    }
                }
            }
        }
        out.push(CorrelationVolume::from_parts(
            (prev.width, prev.height),
            (tw, th),
            data,
        )?);
    }
    Ok(CorrelationPyramid { levels: out })
}

/// Read access to a correlation pyramid, stored or computed on demand.
pub trait CorrelationLookup: Sync {
    /// `(W, H)` of the source grid.
    fn source_dims(&self) -> (usize, usize);
    fn level_count(&self) -> usize;
    /// `(W', H')` of the target grid at `level`.
    fn target_dims(&self, level: usize) -> (usize, usize);
    /// Correlation of source `(x, y)` with pooled target node `(tx, ty)`.
    fn value(&self, level: usize, x: usize, y: usize, tx: usize, ty: usize) -> f64;
}

impl CorrelationLookup for CorrelationPyramid {
    fn source_dims(&self) -> (usize, usize) {
        (self.levels[0].width, self.levels[0].height)
    }

    fn level_count(&self) -> usize {
        self.levels.len()
    }

    fn target_dims(&self, level: usize) -> (usize, usize) {
        let v = &self.levels[level];
        (v.target_width, v.target_height)
    }

    fn value(&self, level: usize, x: usize, y: usize, tx: usize, ty: usize) -> f64 {
        self.levels[level].get(y, x, ty, tx)
    }
}

/// Correlation computed from source descriptors and a pooled target
/// descriptor pyramid. Pooling is linear, so this equals pooling the dense
/// volume (up to rounding) without the quartic memory.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    source: FeatureGrid,
    targets: Vec<FeatureGrid>,
}

impl FeaturePyramid {
    pub fn new(source: FeatureGrid, target: FeatureGrid, levels: usize) -> Result<Self> {
        if source.dim != target.dim {
            return Err(Error::GeometryMismatch("descriptor lengths differ".into()));
        }
        if levels == 0 {
            return Err(Error::InvalidInput("correlation pyramid needs at least one level".into()));
        }
        let mut targets = vec![target];
        for _ in 1..levels {
            let next = targets.last().unwrap().pooled()?;
            targets.push(next);
        }
        Ok(Self { source, targets })
    }

    pub fn source(&self) -> &FeatureGrid {
        &self.source
    }
}

impl CorrelationLookup for FeaturePyramid {
    fn source_dims(&self) -> (usize, usize) {
        (self.source.width, self.source.height)
    }

    fn level_count(&self) -> usize {
        self.targets.len()
    }

    fn target_dims(&self, level: usize) -> (usize, usize) {
        (self.targets[level].width, self.targets[level].height)
    }

    fn value(&self, level: usize, x: usize, y: usize, tx: usize, ty: usize) -> f64 {
        dot(self.source.descriptor(x, y), self.targets[level].descriptor(tx, ty))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxFlow {
    pub flow: FlowField,
    pub score: Vec<f64>,
    /// False where every correlation in the window was zero (flat source).
    pub valid: Vec<bool>,
}

/// Best integer displacement within `max_disp` (per axis) for every source
/// pixel. Ties go to the smaller displacement, then to the earlier target in
/// row-major order.
pub fn argmax_flow(volume: &CorrelationVolume, max_disp: usize) -> ArgmaxFlow {
    let pyr = CorrelationPyramid {
        levels: vec![volume.clone()],
    };
    argmax_search(&pyr, None, max_disp)
}

/// [`argmax_flow`] on level 0 of any lookup, with the window optionally
/// centered on the rounded displacement of `center`.
pub fn argmax_search(
    lookup: &dyn CorrelationLookup,
    center: Option<&FlowField>,
    max_disp: usize,
) -> ArgmaxFlow {
    let (w, h) = lookup.source_dims();
    let (tw, th) = lookup.target_dims(0);
    let m = max_disp as isize;
    let rows: Vec<Vec<(f64, f64, f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (cx, cy) = center.map_or((0, 0), |c| {
                        let (u, v) = c.get(x, y);
                        (u.round() as isize, v.round() as isize)
                    });
                    let mut best: Option<(f64, isize, isize, isize)> = None;
                    let mut any_nonzero = false;
                    for ty in (y as isize + cy - m)..=(y as isize + cy + m) {
                        if ty < 0 || ty >= th as isize {
                            continue;
                        }
                        for tx in (x as isize + cx - m)..=(x as isize + cx + m) {
                            if tx < 0 || tx >= tw as isize {
                                continue;
                            }
                            let c = lookup.value(0, x, y, tx as usize, ty as usize);
                            any_nonzero |= c != 0.0;
                            let (dx, dy) = (tx - x as isize, ty - y as isize);
                            let mag = dx * dx + dy * dy;
                            let better = match best {
                                None => true,
                                Some((bc, bmag, _, _)) => c > bc || (c == bc && mag < bmag),
                            };
                            if better {
                                best = Some((c, mag, dx, dy));
                            }
                        }
                    }
                    match best {
                        Some((c, _, dx, dy)) if any_nonzero => (dx as f64, dy as f64, c, true),
                        _ => (0.0, 0.0, 0.0, false),
                    }
                })
                .collect()
        })
        .collect();
    let cells: Vec<_> = rows.into_iter().flatten().collect();
    let u = cells.iter().map(|c| c.0).collect();
    let v = cells.iter().map(|c| c.1).collect();
    ArgmaxFlow {
        flow: FlowField::from_parts(w, h, u, v).expect("sizes match by construction"),
        score: cells.iter().map(|c| c.2).collect(),
        valid: cells.iter().map(|c| c.3).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub flow: FlowField,
    /// Largest update length of each step, in pixels.
    pub max_update: Vec<f64>,
}

/// Integer nodes of `level` within `r` level units (per axis) of `(lx, ly)`,
/// clipped to the grid.
fn window_nodes(lookup: &dyn CorrelationLookup, level: usize, (lx, ly): (f64, f64), r: f64) -> Option<[usize; 4]> {
    let (tw, th) = lookup.target_dims(level);
    let x0 = (lx - r).ceil().max(0.0);
    let x1 = (lx + r).floor().min((tw - 1) as f64);
    let y0 = (ly - r).ceil().max(0.0);
    let y1 = (ly + r).floor().min((th - 1) as f64);
    (x0 <= x1 && y0 <= y1).then(|| [x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

/// Bilinear read of a level at fractional target coordinates, clamped to
/// the grid.
fn sample_level(lookup: &dyn CorrelationLookup, level: usize, (x, y): (usize, usize), tx: f64, ty: f64) -> f64 {
    let (tw, th) = lookup.target_dims(level);
    let tx = tx.clamp(0.0, (tw - 1) as f64);
    let ty = ty.clamp(0.0, (th - 1) as f64);
    let (x0, y0) = (tx.floor() as usize, ty.floor() as usize);
    let (fx, fy) = (tx - x0 as f64, ty - y0 as f64);
    let mut acc = (1.0 - fx) * (1.0 - fy) * lookup.value(level, x, y, x0, y0);
    if fx > 0.0 {
        acc += fx * (1.0 - fy) * lookup.value(level, x, y, x0 + 1, y0);
    }
    if fy > 0.0 {
        acc += (1.0 - fx) * fy * lookup.value(level, x, y, x0, y0 + 1);
        if fx > 0.0 {
            acc += fx * fy * lookup.value(level, x, y, x0 + 1, y0 + 1);
        }
    }
    acc
}

/// Coarse correction in level units: the soft-argmax offset over the
/// `(2r+1)^2` window sampled around `(lx, ly)`, kept only when it exceeds
/// one level unit on some axis. Pooling blurs sub-node detail, so smaller
/// offsets at this level are noise.
fn coarse_offset(
    lookup: &dyn CorrelationLookup,
    level: usize,
    src: (usize, usize),
    (lx, ly): (f64, f64),
    radius: isize,
    beta: f64,
    scores: &mut Vec<(f64, f64, f64)>,
) -> Option<(f64, f64)> {
    scores.clear();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (ox, oy) = (dx as f64, dy as f64);
            scores.push((sample_level(lookup, level, src, lx + ox, ly + oy), ox, oy));
        }
    }
    let (ox, oy) = soft_argmax(scores, beta)?;
    (ox.abs() > 1.0 || oy.abs() > 1.0).then_some((ox, oy))
}

/// Softmax-weighted mean position of `(score, x, y)` triples; `None` when
/// every score is zero.
fn soft_argmax(scores: &[(f64, f64, f64)], beta: f64) -> Option<(f64, f64)> {
    if scores.iter().all(|s| s.0 == 0.0) {
        return None;
    }
    let peak = scores.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.0));
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(c, x, y) in scores {
        let w = (beta * (c - peak)).exp();
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    Some((sx / sw, sy / sw))
}

/// `steps` rounds of `flow += delta`.
///
/// A round visits the pyramid coarse to fine. Each level looks at the
/// correlation nodes within `radius` level units (per axis) of the current
/// estimate, where a position `x` maps to `(x + 0.5) / 2^l - 0.5` on level
/// `l`. A coarse level samples its window bilinearly at integer offsets and
/// shifts the estimate by the soft-argmax offset (temperature `beta`) when
/// that exceeds one level unit and raises the level-0 correlation at the
/// estimate; level 0 moves the estimate to the
/// soft-argmax of its integer nodes. No level moves the estimate by more than
/// `radius` of its own units per axis. Pixels whose correlations all vanish
/// stay put.
pub fn iterative_refine(
    flow_init: &FlowField,
    lookup: &dyn CorrelationLookup,
    steps: usize,
    radius: usize,
    beta: f64,
) -> Result<Refinement> {
    let (w, h) = lookup.source_dims();
    if flow_init.width() != w || flow_init.height() != h {
        return Err(Error::GeometryMismatch(format!(
            "flow is {}x{}, correlation source is {w}x{h}",
            flow_init.width(),
            flow_init.height()
        )));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {beta}")));
    }
    let mut flow = flow_init.clone();
    let mut max_update = Vec::with_capacity(steps);
    let r = radius as f64;
    for _ in 0..steps {
        let deltas: Vec<Vec<(f64, f64)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut scores = Vec::new();
                (0..w)
                    .map(|x| {
                        let (u, v) = flow.get(x, y);
                        let (mut px, mut py) = (x as f64 + u, y as f64 + v);
                        for level in (1..lookup.level_count()).rev() {
                            let s = (1usize << level) as f64;
                            let at = ((px + 0.5) / s - 0.5, (py + 0.5) / s - 0.5);
                            if let Some((ox, oy)) =
                                coarse_offset(lookup, level, (x, y), at, radius as isize, beta, &mut scores)
                            {
                                let (nx, ny) = (px + ox * s, py + oy * s);
                                if sample_level(lookup, 0, (x, y), nx, ny) > sample_level(lookup, 0, (x, y), px, py) {
                                    px = nx;
                                    py = ny;
                                }
                            }
                        }
                        if let Some((mx, my)) = fine_soft_argmax(lookup, (x, y), (px, py), r, beta, &mut scores) {
                            px = mx;
                            py = my;
                        }
                        (px - x as f64 - u, py - y as f64 - v)
                    })
                    .collect()
            })
            .collect();
        let mut largest: f64 = 0.0;
        for (y, row) in deltas.into_iter().enumerate() {
            for (x, (du, dv)) in row.into_iter().enumerate() {
                let (u, v) = flow.get(x, y);
                flow.set(x, y, u + du, v + dv);
                largest = largest.max(du.hypot(dv));
            }
        }
        max_update.push(largest);
    }
    Ok(Refinement { flow, max_update })
}

fn fine_soft_argmax(
    lookup: &dyn CorrelationLookup,
    src: (usize, usize),
    at: (f64, f64),
    r: f64,
    beta: f64,
    scores: &mut Vec<(f64, f64, f64)>,
) -> Option<(f64, f64)> {
    let [x0, x1, y0, y1] = window_nodes(lookup, 0, at, r)?;
    scores.clear();
    for ky in y0..=y1 {
        for kx in x0..=x1 {
            scores.push((lookup.value(0, src.0, src.1, kx, ky), kx as f64, ky as f64));
        }
    }
    soft_argmax(scores, beta)
}
