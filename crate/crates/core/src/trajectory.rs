//! Continuous per-pixel trajectories from K shared motion basis functions.
//!
//! A pixel `p` is displaced at normalized time `tau` by
//! `(sum_k ax_k g_k(tau), sum_k ay_k g_k(tau))`. Every basis function is
//! anchored so `g_k(0) = 0`, which pins the initial frame in place.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::FlowField;

/// Default number of basis functions.
pub const DEFAULT_BASIS_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum MotionBasis {
    /// `g_k(t) = t^k`, k = 1..=K.
    Polynomial { k: usize },
    /// `g_k(t) = cos(pi k t) - 1`, k = 1..=K.
    Cosine { k: usize },
    /// Piecewise-linear functions sampled on a uniform grid over `[0, 1]`.
    Tabulated { samples: Vec<Vec<f64>> },
}

impl MotionBasis {
    pub fn polynomial(k: usize) -> Result<Self> {
        Self::check_count(k)?;
        Ok(MotionBasis::Polynomial { k })
    }

    pub fn cosine(k: usize) -> Result<Self> {
        Self::check_count(k)?;
        Ok(MotionBasis::Cosine { k })
    }

    /// Builds a tabulated basis; each function is shifted so its value at
    /// `t = 0` is zero.
    pub fn tabulated(samples: Vec<Vec<f64>>) -> Result<Self> {
        Self::check_count(samples.len())?;
        let n = samples[0].len();
        if n < 2 {
            return Err(Error::InvalidInput("tabulated basis needs at least 2 samples".into()));
        }
        let mut anchored = Vec::with_capacity(samples.len());
        for s in samples {
            if s.len() != n {
                return Err(Error::InvalidInput("tabulated functions differ in length".into()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite tabulated basis value".into()));
            }
            let g0 = s[0];
            anchored.push(s.into_iter().map(|v| v - g0).collect());
        }
        Ok(MotionBasis::Tabulated { samples: anchored })
    }

    fn check_count(k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidInput("motion basis needs K >= 1".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        match self {
            MotionBasis::Polynomial { k } | MotionBasis::Cosine { k } => *k,
            MotionBasis::Tabulated { samples } => samples.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MotionBasis::Polynomial { .. } => "polynomial",
            MotionBasis::Cosine { .. } => "cosine",
            MotionBasis::Tabulated { .. } => "tabulated",
        }
    }

    /// Evaluates all K functions at normalized time `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.count()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfSpan {
                t,
                begin: 0.0,
                end: 1.0,
            });
        }
        match self {
            MotionBasis::Polynomial { .. } => {
                let mut p = 1.0;
                for g in out.iter_mut() {
                    p *= t;
                    *g = p;
                }
            }
            MotionBasis::Cosine { .. } => {
                for (k, g) in out.iter_mut().enumerate() {
                    *g = (std::f64::consts::PI * (k + 1) as f64 * t).cos() - 1.0;
                }
            }
            MotionBasis::Tabulated { samples } => {
                let last = (samples[0].len() - 1) as f64;
                let pos = t * last;
                let i0 = (pos.floor() as usize).min(samples[0].len() - 2);
                let frac = pos - i0 as f64;
                for (g, s) in out.iter_mut().zip(samples) {
                    *g = (1.0 - frac) * s[i0] + frac * s[i0 + 1];
                }
            }
        }
        Ok(())
    }
}

/// Evaluates a basis at normalized time `t`.
pub fn eval_basis(basis: &MotionBasis, t: f64) -> Result<Vec<f64>> {
    basis.eval(t)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Per-pixel coefficients: `2K` values per pixel, x-coefficients first.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    width: usize,
    height: usize,
    k: usize,
    data: Vec<f64>,
}

impl CoefficientField {
    pub fn zeros(width: usize, height: usize, k: usize) -> Self {
        Self {
            width,
            height,
            k,
            data: vec![0.0; width * height * 2 * k],
        }
    }

    pub fn new(width: usize, height: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 2 * k {
            return Err(Error::GeometryMismatch(format!(
                "{} coefficients for {width}x{height} pixels with K={k}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite motion coefficient".into()));
        }
        Ok(Self {
            width,
            height,
            k,
            data,
        })
    }

    /// Same coefficients at every pixel.
    pub fn uniform(width: usize, height: usize, ax: &[f64], ay: &[f64]) -> Result<Self> {
        if ax.len() != ay.len() {
            return Err(Error::InvalidInput("x and y coefficient counts differ".into()));
        }
        let mut data = Vec::with_capacity(width * height * 2 * ax.len());
        for _ in 0..width * height {
            data.extend_from_slice(ax);
            data.extend_from_slice(ay);
        }
        Self::new(width, height, ax.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `(x-coefficients, y-coefficients)` of one pixel.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (&[f64], &[f64]) {
        let i = (y * self.width + x) * 2 * self.k;
        (&self.data[i..i + self.k], &self.data[i + self.k..i + 2 * self.k])
    }

    pub fn set(&mut self, x: usize, y: usize, ax: &[f64], ay: &[f64]) {
        let i = (y * self.width + x) * 2 * self.k;
        self.data[i..i + self.k].copy_from_slice(ax);
        self.data[i + self.k..i + 2 * self.k].copy_from_slice(ay);
    }
}

/// Basis plus coefficients over the time span `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    basis: MotionBasis,
    coefficients: CoefficientField,
    t0: f64,
    t1: f64,
}

impl TrajectoryField {
    pub fn new(basis: MotionBasis, coefficients: CoefficientField, t0: f64, t1: f64) -> Result<Self> {
        if basis.count() != coefficients.k() {
            return Err(Error::InvalidInput(format!(
                "basis has {} functions, coefficients expect {}",
                basis.count(),
                coefficients.k()
            )));
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidWindow { t0, t1 });
        }
        Ok(Self {
            basis,
            coefficients,
            t0,
            t1,
        })
    }

    pub fn basis(&self) -> &MotionBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coefficients
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn width(&self) -> usize {
        self.coefficients.width
    }

    pub fn height(&self) -> usize {
        self.coefficients.height
    }

    /// Maps a time in seconds to `[0, 1]`.
    pub fn normalized(&self, t: f64) -> Result<f64> {
        normalize_time(t, self.t0, self.t1)
    }

    /// Position at time `t` of the point that starts at pixel `(x, y)`.
    pub fn eval_trajectory(&self, x: usize, y: usize, t: f64) -> Result<(f64, f64)> {
        if x >= self.width() || y >= self.height() {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width(),
                height: self.height(),
            });
        }
        let g = self.basis.eval(self.normalized(t)?)?;
        let (ax, ay) = self.coefficients.get(x, y);
        Ok((x as f64 + dot(ax, &g), y as f64 + dot(ay, &g)))
    }

    /// Dense displacement `M(t)` from the initial frame.
    pub fn eval_flow_field(&self, t: f64) -> Result<FlowField> {
        let g = self.basis.eval(self.normalized(t)?)?;
        Ok(FlowField::from_fn(self.width(), self.height(), |x, y| {
            let (ax, ay) = self.coefficients.get(x, y);
            (dot(ax, &g), dot(ay, &g))
        }))
    }
}

fn normalize_time(t: f64, t0: f64, t1: f64) -> Result<f64> {
    if !(t >= t0 && t <= t1) {
        return Err(Error::OutOfSpan {
            t,
            begin: t0,
            end: t1,
        });
    }
    Ok(((t - t0) / (t1 - t0)).clamp(0.0, 1.0))
}

/// Positions of N points at T times, stored row-major as `N x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    pub points: usize,
    pub times: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl TrajectoryMatrix {
    pub fn get(&self, point: usize, time: usize) -> (f64, f64) {
        let i = point * self.times + time;
        (self.xs[i], self.ys[i])
    }
}

/// Evaluates many trajectories at once as `X = P0 + Lambda * Theta`, with
/// `Lambda` the `N x K` coefficients and `Theta` the `K x T` basis values.
pub fn trajectories_matrix(
    field: &TrajectoryField,
    pixels: &[(usize, usize)],
    times: &[f64],
) -> Result<TrajectoryMatrix> {
    let k = field.basis.count();
    let nt = times.len();
    let mut theta = vec![0.0; k * nt];
    let mut g = vec![0.0; k];
    for (j, &t) in times.iter().enumerate() {
        field.basis.eval_into(field.normalized(t)?, &mut g)?;
        for m in 0..k {
            theta[m * nt + j] = g[m];
        }
    }
    let mut xs = vec![0.0; pixels.len() * nt];
    let mut ys = vec![0.0; pixels.len() * nt];
    for (i, &(px, py)) in pixels.iter().enumerate() {
        if px >= field.width() || py >= field.height() {
            return Err(Error::OutOfBounds {
                x: px,
                y: py,
                width: field.width(),
                height: field.height(),
            });
        }
        let (ax, ay) = field.coefficients.get(px, py);
        for j in 0..nt {
            let (mut sx, mut sy) = (0.0, 0.0);
            for m in 0..k {
                sx += ax[m] * theta[m * nt + j];
                sy += ay[m] * theta[m * nt + j];
            }
            xs[i * nt + j] = px as f64 + sx;
            ys[i * nt + j] = py as f64 + sy;
        }
    }
    Ok(TrajectoryMatrix {
        points: pixels.len(),
        times: nt,
        xs,
        ys,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFit {
    pub field: TrajectoryField,
    /// Per-pixel RMS of the 2D fitting residual over the sample times.
    pub residual_rms: Vec<f64>,
}

/// Least-squares coefficients from dense displacement samples.
///
/// `flows[j]` holds the displacement from the initial frame at `times[j]`.
/// One QR factorization of the `T x K` basis matrix is shared by every pixel.
pub fn fit_coefficients(
    basis: &MotionBasis,
    t0: f64,
    t1: f64,
    times: &[f64],
    flows: &[FlowField],
) -> Result<TrajectoryFit> {
    let k = basis.count();
    if times.len() != flows.len() {
        return Err(Error::InvalidInput(format!(
            "{} sample times for {} flow fields",
            times.len(),
            flows.len()
        )));
    }
    if times.len() < k {
        return Err(Error::RankDeficient(format!(
            "{} sample times cannot determine {k} basis coefficients",
            times.len()
        )));
    }
    let (w, h) = (flows[0].width(), flows[0].height());
    if flows.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(Error::GeometryMismatch("sample flows differ in size".into()));
    }
    let nt = times.len();
    let mut design = DMatrix::<f64>::zeros(nt, k);
    let mut g = vec![0.0; k];
    for (j, &t) in times.iter().enumerate() {
        basis.eval_into(normalize_time(t, t0, t1)?, &mut g)?;
        for m in 0..k {
            design[(j, m)] = g[m];
        }
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(i) = (0..k).find(|&i| r[(i, i)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient(format!(
            "basis matrix over the sample times has rank < {k} (pivot {i} vanishes); \
             sample times may coincide"
        )));
    }
    let qt = qr.q().transpose();
    let pinv = r.solve_upper_triangular(&qt).ok_or_else(|| {
        Error::RankDeficient("triangular factor of the basis matrix is singular".into())
    })?;

    let mut coeffs = CoefficientField::zeros(w, h, k);
    let mut residual_rms = vec![0.0; w * h];
    let mut ax = vec![0.0; k];
    let mut ay = vec![0.0; k];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for m in 0..k {
                let (mut sx, mut sy) = (0.0, 0.0);
                for (j, f) in flows.iter().enumerate() {
                    sx += pinv[(m, j)] * f.u()[p];
                    sy += pinv[(m, j)] * f.v()[p];
                }
                ax[m] = sx;
                ay[m] = sy;
            }
            let mut ss = 0.0;
            for (j, f) in flows.iter().enumerate() {
                let (mut px, mut py) = (0.0, 0.0);
                for m in 0..k {
                    px += ax[m] * design[(j, m)];
                    py += ay[m] * design[(j, m)];
                }
                ss += (f.u()[p] - px).powi(2) + (f.v()[p] - py).powi(2);
            }
            residual_rms[p] = (ss / nt as f64).sqrt();
            coeffs.set(x, y, &ax, &ay);
        }
    }
    Ok(TrajectoryFit {
        field: TrajectoryField::new(basis.clone(), coeffs, t0, t1)?,
        residual_rms,
    })
}
