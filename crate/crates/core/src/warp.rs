//! Bilinear backward warping and softmax forward splatting.
//!
//! Splatting has no gradient with respect to the flow; the flow is treated as
//! a constant input.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};

pub const DEFAULT_DEN_EPS: f64 = 1e-6;

fn check_flow(grid: &Grid, flow: &FlowField) -> Result<()> {
    if !flow.matches(grid) {
        return Err(Error::GeometryMismatch(format!(
            "flow is {}x{}, image is {}x{}",
            flow.width(),
            flow.height(),
            grid.width(),
            grid.height()
        )));
    }
    if flow.u().iter().chain(flow.v()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite flow vector".into()));
    }
    Ok(())
}

/// Bilinear sample at `(sx, sy)` with coordinates clamped to the grid.
#[inline]
pub fn sample_bilinear(grid: &Grid, sx: f64, sy: f64, c: usize) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = (sx.floor() as usize).min(w - 1);
    let y0 = (sy.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let top = (1.0 - fx) * grid.get(x0, y0, c) + fx * grid.get(x1, y0, c);
    let bottom = (1.0 - fx) * grid.get(x0, y1, c) + fx * grid.get(x1, y1, c);
    (1.0 - fy) * top + fy * bottom
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: Grid,
    /// False where the sample point fell outside the source and was clamped.
    pub valid: Vec<bool>,
}

/// `out[p] = bilinear(image, p + flow[p])`.
pub fn backward_warp(image: &Grid, flow: &FlowField) -> Result<Warped> {
    check_flow(image, flow)?;
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut valid = vec![true; w * h];
    let mut out = Grid::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.get(x, y);
            let (sx, sy) = (x as f64 + u, y as f64 + v);
            valid[y * w + x] =
                sx >= 0.0 && sx <= (w - 1) as f64 && sy >= 0.0 && sy <= (h - 1) as f64;
            for c in 0..ch {
                out.set(x, y, c, sample_bilinear(image, sx, sy, c));
            }
        }
    }
    Ok(Warped { image: out, valid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splatted {
    pub image: Grid,
    /// Accumulated splat weight; zero marks holes.
    pub coverage: Vec<f64>,
}

/// Softmax splatting: every source pixel deposits `exp(z) * value` and
/// `exp(z)` into the four bilinear neighbours of `p + flow[p]`; targets are
/// normalized where the deposited weight exceeds `den_eps`.
///
/// Deposits landing outside the target are dropped. Accumulation runs in
/// row-major source order.
pub fn softmax_splat(source: &Grid, flow: &FlowField, z: &[f64], den_eps: f64) -> Result<Splatted> {
    check_flow(source, flow)?;
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    if z.len() != w * h {
        return Err(Error::GeometryMismatch(format!(
            "{} splat weights for {w}x{h} pixels",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite splat weight".into()));
    }
    let mut acc = vec![0.0; w * h * ch];
    let mut den = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let weight = z[y * w + x].exp();
            let (u, v) = flow.get(x, y);
            let (tx, ty) = (x as f64 + u, y as f64 + v);
            let (fx0, fy0) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - fx0, ty - fy0);
            let value = source.pixel(x, y);
            for (dx, dy, bw) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if bw == 0.0 {
                    continue;
                }
                let (nx, ny) = (fx0 + dx as f64, fy0 + dy as f64);
                if nx < 0.0 || ny < 0.0 || nx >= w as f64 || ny >= h as f64 {
                    continue;
                }
                let t = ny as usize * w + nx as usize;
                let wt = weight * bw;
                for c in 0..ch {
                    acc[t * ch + c] += wt * value[c];
                }
                den[t] += wt;
            }
        }
    }
    for t in 0..w * h {
        if den[t] > den_eps {
            for c in 0..ch {
                acc[t * ch + c] /= den[t];
            }
        } else {
            den[t] = 0.0;
            for c in 0..ch {
                acc[t * ch + c] = 0.0;
            }
        }
    }
    Ok(Splatted {
        image: Grid::new(w, h, ch, acc)?,
        coverage: den,
    })
}

/// 2x average pooling of a per-pixel scalar map (odd tails dropped).
pub fn pool_scalar(values: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    let g = Grid::new(width, height, 1, values.to_vec())?;
    Ok(g.avg_pool2()?.into_data())
}

/// Splats each pyramid level independently; the flow is downscaled (and its
/// vectors halved) and `z` average-pooled once per level.
pub fn splat_pyramid(
    pyramid: &[Grid],
    flow: &FlowField,
    z: &[f64],
    den_eps: f64,
) -> Result<Vec<Splatted>> {
    let mut out = Vec::with_capacity(pyramid.len());
    let mut flow = flow.clone();
    let mut z = z.to_vec();
    for (level, grid) in pyramid.iter().enumerate() {
        if level > 0 {
            let (fw, fh) = (flow.width(), flow.height());
            flow = flow.downscale()?;
            z = pool_scalar(&z, fw, fh)?;
        }
        out.push(softmax_splat(grid, &flow, &z, den_eps)?);
    }
    Ok(out)
}

/// Image pyramid and hand-crafted feature pyramid of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub images: Vec<Grid>,
    /// Per level: `[intensity, d/dx, d/dy]` of the luminance.
    pub features: Vec<Grid>,
}

/// Central-difference gradients with border replication.
pub fn gradient_features(gray: &Grid) -> Grid {
    Grid::from_fn(gray.width(), gray.height(), 3, |x, y, c| {
        let (xi, yi) = (x as isize, y as isize);
        match c {
            0 => gray.get(x, y, 0),
            1 => 0.5 * (gray.get_clamped(xi + 1, yi, 0) - gray.get_clamped(xi - 1, yi, 0)),
            _ => 0.5 * (gray.get_clamped(xi, yi + 1, 0) - gray.get_clamped(xi, yi - 1, 0)),
        }
    })
}

pub fn build_pyramid(image: &Grid, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidInput("pyramid needs at least one level".into()));
    }
    let mut images = vec![image.clone()];
    for _ in 1..levels {
        let next = images.last().expect("non-empty").avg_pool2()?;
        images.push(next);
    }
    let features = images
        .iter()
        .map(|g| gradient_features(&g.luminance()))
        .collect();
    Ok(Pyramid { images, features })
}
