//! Training-style losses (Charbonnier photometric, second-order smoothness,
//! L1 flow) and image quality metrics (PSNR, SSIM).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};
use crate::warp::backward_warp;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charbonnier {
    pub eps: f64,
    pub beta: f64,
}

impl Default for Charbonnier {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            beta: 0.45,
        }
    }
}

impl Charbonnier {
    pub fn new(eps: f64, beta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "charbonnier needs eps > 0 and finite beta, got eps={eps} beta={beta}"
            )));
        }
        Ok(Self { eps, beta })
    }

    /// `(x^2 + eps^2)^beta`
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (x * x + self.eps * self.eps).powf(self.beta)
    }

    /// Derivative with respect to `x`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let s = x * x + self.eps * self.eps;
        2.0 * self.beta * x * s.powf(self.beta - 1.0)
    }

    /// Mean penalty over a slice.
    pub fn mean(&self, xs: &[f64]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        xs.iter().map(|&x| self.value(x)).sum::<f64>() / xs.len() as f64
    }
}

/// Charbonnier penalty of `i0 - B(i_t)` where `B` backward-warps `i_t` by
/// `flow`; pixels whose sample point left the image are excluded.
pub fn photometric_loss(i0: &Grid, i_t: &Grid, flow: &FlowField, rho: Charbonnier) -> Result<f64> {
    if !i0.same_shape(i_t) {
        return Err(Error::GeometryMismatch("photometric loss frames differ in shape".into()));
    }
    let warped = backward_warp(i_t, flow)?;
    let ch = i0.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &ok) in warped.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        for c in 0..ch {
            sum += rho.value(i0.data()[p * ch + c] - warped.image.data()[p * ch + c]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("flow moves every sample out of the image".into()));
    }
    Ok(sum / n as f64)
}

/// Mean over interior pixels of the L2 norm of the second differences
/// `(u_xx, u_yy, v_xx, v_yy)`.
pub fn smoothness_loss(flow: &FlowField) -> Result<f64> {
    let (w, h) = (flow.width(), flow.height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput(format!(
            "second differences need at least 3x3, got {w}x{h}"
        )));
    }
    let second = |c: &[f64], x: usize, y: usize| {
        let i = y * w + x;
        let xx = c[i + 1] - 2.0 * c[i] + c[i - 1];
        let yy = c[i + w] - 2.0 * c[i] + c[i - w];
        (xx, yy)
    };
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (uxx, uyy) = second(flow.u(), x, y);
            let (vxx, vyy) = second(flow.v(), x, y);
            sum += (uxx * uxx + uyy * uyy + vxx * vxx + vyy * vyy).sqrt();
        }
    }
    Ok(sum / ((w - 2) * (h - 2)) as f64)
}

/// Mean over masked pixels of `|du| + |dv|`.
pub fn l1_flow_loss(predicted: &FlowField, reference: &FlowField, mask: &[bool]) -> Result<f64> {
    if predicted.width() != reference.width() || predicted.height() != reference.height() {
        return Err(Error::GeometryMismatch("flow fields differ in size".into()));
    }
    if mask.len() != predicted.width() * predicted.height() {
        return Err(Error::GeometryMismatch("mask size differs from flow".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sum += (predicted.u()[i] - reference.u()[i]).abs() + (predicted.v()[i] - reference.v()[i]).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("L1 flow loss over an empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// Mean absolute reconstruction error.
pub fn l1_loss(pred: &Grid, gt: &Grid) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::GeometryMismatch("L1 loss images differ in shape".into()));
    }
    Ok(pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        / pred.data().len() as f64)
}

/// Deep-feature perceptual loss; needs pretrained weights this crate does not ship.
pub fn perceptual_loss(_pred: &Grid, _gt: &Grid) -> Result<f64> {
    Err(Error::NotImplemented("perceptual loss"))
}

/// Learned perceptual image similarity; needs pretrained weights.
pub fn lpips(_pred: &Grid, _gt: &Grid) -> Result<f64> {
    Err(Error::NotImplemented("LPIPS"))
}

pub fn mse(pred: &Grid, gt: &Grid) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::GeometryMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Grid, gt: &Grid, peak: f64) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with a Gaussian window, averaged over channels.
pub fn ssim(pred: &Grid, gt: &Grid, params: SsimParams) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::GeometryMismatch("SSIM images differ in shape".into()));
    }
    let (w, h) = (pred.width(), pred.height());
    if params.window == 0 || w < params.window || h < params.window {
        return Err(Error::InvalidInput(format!(
            "SSIM window {} does not fit a {w}x{h} image",
            params.window
        )));
    }
    let k = gaussian_kernel(params.window, params.sigma);
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mut total = 0.0;
    for c in 0..pred.channels() {
        let a = pred.channel(c).into_data();
        let b = gt.channel(c).into_data();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (mu_a, ow, oh) = filter_valid(&a, w, h, &k);
        let (mu_b, ..) = filter_valid(&b, w, h, &k);
        let (aa, ..) = filter_valid(&prod(&a, &a), w, h, &k);
        let (bb, ..) = filter_valid(&prod(&b, &b), w, h, &k);
        let (ab, ..) = filter_valid(&prod(&a, &b), w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / pred.channels() as f64)
}

/// Line-oriented `name=value` report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    entries: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// Serializes with a fixed number of decimals so reruns compare bytewise.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (n, v) in &self.entries {
            let _ = writeln!(s, "{n}={v:.10}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Self::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (n, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("metrics report", format!("no '=' in {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::format("metrics report", format!("bad number in {line:?}")))?;
            r.push(n.trim(), v);
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charbonnier_values() {
        let rho = Charbonnier::new(1e-3, 0.5).unwrap();
        assert!((rho.value(3.0) - (9.0 + 1e-6f64).sqrt()).abs() < 1e-15);
        assert!((rho.value(3.0) - 3.000000167).abs() < 1e-9);
        let d = Charbonnier::default();
        assert!((d.value(0.0) - 1e-3f64.powf(0.9)).abs() < 1e-15);
        let sq = Charbonnier::new(0.1, 1.0).unwrap();
        assert!((sq.value(2.0) - (4.0 + 0.01)).abs() < 1e-12);
        assert!(Charbonnier::new(0.0, 0.5).is_err());
    }

    #[test]
    fn charbonnier_derivative_matches_difference() {
        let rho = Charbonnier::default();
        for x in [-1.3, -0.01, 0.0, 0.2, 2.0] {
            let h = 1e-6;
            let fd = (rho.value(x + h) - rho.value(x - h)) / (2.0 * h);
            assert!((fd - rho.derivative(x)).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn smoothness_of_quadratic_flow() {
        let f = FlowField::from_fn(6, 5, |x, _| ((x * x) as f64, 0.0));
        assert!((smoothness_loss(&f).unwrap() - 2.0).abs() < 1e-12);
        let affine = FlowField::from_fn(6, 5, |x, y| (0.5 * x as f64 - y as f64 + 2.0, 3.0 * y as f64));
        assert_eq!(smoothness_loss(&affine).unwrap(), 0.0);
        assert!(smoothness_loss(&FlowField::zeros(2, 5)).is_err());
    }

    #[test]
    fn l1_flow_values() {
        let m = FlowField::uniform(4, 3, 1.0, 2.0);
        let w = FlowField::zeros(4, 3);
        let mask = vec![true; 12];
        assert_eq!(l1_flow_loss(&m, &w, &mask).unwrap(), 3.0);
        assert_eq!(l1_flow_loss(&m, &m, &mask).unwrap(), 0.0);
        assert!(l1_flow_loss(&m, &w, &[false; 12]).is_err());
    }

    #[test]
    fn psnr_values() {
        let a = Grid::filled(8, 8, 1, 0.5);
        let b = Grid::filled(8, 8, 1, 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let c = Grid::filled(8, 8, 1, 0.51);
        assert!((psnr(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_basics() {
        let a = Grid::from_fn(16, 16, 1, |x, y, _| 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4).cos()));
        assert!((ssim(&a, &a, SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        let s = ssim(&inv, &a, SsimParams::default()).unwrap();
        assert!(s < 0.5, "{s}");
        let s2 = ssim(&a, &inv, SsimParams::default()).unwrap();
        assert!((s - s2).abs() < 1e-12);
        assert!(ssim(&Grid::zeros(5, 5, 1), &Grid::zeros(5, 5, 1), SsimParams::default()).is_err());
    }

    #[test]
    fn deep_feature_losses_are_explicit_gaps() {
        let a = Grid::zeros(2, 2, 1);
        assert!(matches!(perceptual_loss(&a, &a), Err(Error::NotImplemented(_))));
        assert!(matches!(lpips(&a, &a), Err(Error::NotImplemented(_))));
    }

    #[test]
    fn report_round_trip() {
        let mut r = MetricsReport::new();
        r.push("psnr_mean", 31.25);
        r.push("ssim_mean", 0.9);
        let text = r.to_text();
        assert_eq!(text, "psnr_mean=31.2500000000\nssim_mean=0.9000000000\n");
        assert_eq!(MetricsReport::parse(&text).unwrap(), r);
    }
}
