//! Analytic synthetic scenes with exact frames, flow and trajectories.
//!
//! Every scene is a static texture `f` carried by a known motion `P(p, t)`,
//! so `render(t)(x) = f(P^-1(x, t))`. Pixel `(i, j)` is centered at `(i, j)`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::grid::{FlowField, Frame, FrameSequence, Grid};

/// Lowest and highest rendered intensity.
pub const INTENSITY_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TranslatingGaussian,
    RotatingCheckerboard,
    SinusoidalGratingOnCurvedPath,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [
        SceneKind::TranslatingGaussian,
        SceneKind::RotatingCheckerboard,
        SceneKind::SinusoidalGratingOnCurvedPath,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TranslatingGaussian => "translating_gaussian",
            SceneKind::RotatingCheckerboard => "rotating_checkerboard",
            SceneKind::SinusoidalGratingOnCurvedPath => "sinusoidal_grating_on_curved_path",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scene kind {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    pub duration: f64,
    /// Translation velocity in pixels per second (gaussian, grating drift).
    pub velocity: (f64, f64),
    /// Rotation rate in radians per second (checkerboard).
    pub angular_rate: f64,
    /// Vertical path amplitude in pixels (grating).
    pub amplitude: f64,
    /// Path frequency in Hz (grating).
    pub frequency: f64,
    /// Gaussian blob standard deviation in pixels.
    pub sigma: f64,
    /// Checker square side in pixels.
    pub square: f64,
    /// Grating wavelengths in pixels.
    pub wavelength: (f64, f64),
}

const CONFIG_KEYS: &[&str] = &[
    "kind",
    "width",
    "height",
    "duration",
    "vx",
    "vy",
    "angular_rate",
    "amplitude",
    "frequency",
    "sigma",
    "square",
    "wavelength_x",
    "wavelength_y",
];

impl SceneSpec {
    /// Default motion and texture for a scene kind.
    pub fn preset(kind: SceneKind, width: usize, height: usize, duration: f64) -> Self {
        let base = Self {
            kind,
            width,
            height,
            duration,
            velocity: (0.0, 0.0),
            angular_rate: 0.0,
            amplitude: 0.0,
            frequency: 0.0,
            sigma: 5.0,
            square: 8.0,
            wavelength: (16.0, 13.0),
        };
        match kind {
            SceneKind::TranslatingGaussian => Self {
                velocity: (20.0, -12.0),
                ..base
            },
            SceneKind::RotatingCheckerboard => Self {
                angular_rate: 0.8,
                ..base
            },
            SceneKind::SinusoidalGratingOnCurvedPath => Self {
                velocity: (10.0, 0.0),
                amplitude: 3.0,
                frequency: 1.0,
                ..base
            },
        }
    }

    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        kv.check_known(CONFIG_KEYS)?;
        let kind = SceneKind::from_name(
            kv.get_str("kind")
                .ok_or_else(|| Error::InvalidInput("scene config needs kind=".into()))?,
        )?;
        let p = Self::preset(
            kind,
            kv.get_or("width", 64)?,
            kv.get_or("height", 64)?,
            kv.get_or("duration", 0.5)?,
        );
        let spec = Self {
            velocity: (kv.get_or("vx", p.velocity.0)?, kv.get_or("vy", p.velocity.1)?),
            angular_rate: kv.get_or("angular_rate", p.angular_rate)?,
            amplitude: kv.get_or("amplitude", p.amplitude)?,
            frequency: kv.get_or("frequency", p.frequency)?,
            sigma: kv.get_or("sigma", p.sigma)?,
            square: kv.get_or("square", p.square)?,
            wavelength: (
                kv.get_or("wavelength_x", p.wavelength.0)?,
                kv.get_or("wavelength_y", p.wavelength.1)?,
            ),
            ..p
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("kind", self.kind.name());
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("duration", self.duration);
        kv.insert("vx", self.velocity.0);
        kv.insert("vy", self.velocity.1);
        kv.insert("angular_rate", self.angular_rate);
        kv.insert("amplitude", self.amplitude);
        kv.insert("frequency", self.frequency);
        kv.insert("sigma", self.sigma);
        kv.insert("square", self.square);
        kv.insert("wavelength_x", self.wavelength.0);
        kv.insert("wavelength_y", self.wavelength.1);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidInput("scene must be at least 2x2".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidInput(format!("duration must be positive, got {}", self.duration)));
        }
        let params = [
            self.velocity.0,
            self.velocity.1,
            self.angular_rate,
            self.amplitude,
            self.frequency,
        ];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite motion parameter".into()));
        }
        let texture = [self.sigma, self.square, self.wavelength.0, self.wavelength.1];
        if texture.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("texture scales must be positive".into()));
        }
        Ok(())
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Position at time `t` of the texture point that sits at `p` at time 0.
    pub fn motion(&self, p: (f64, f64), t: f64) -> (f64, f64) {
        match self.kind {
            SceneKind::TranslatingGaussian => (p.0 + self.velocity.0 * t, p.1 + self.velocity.1 * t),
            SceneKind::RotatingCheckerboard => {
                let (cx, cy) = self.center();
                let (s, c) = (self.angular_rate * t).sin_cos();
                let (dx, dy) = (p.0 - cx, p.1 - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            }
            SceneKind::SinusoidalGratingOnCurvedPath => {
                let (ox, oy) = self.path_offset(t);
                (p.0 + ox, p.1 + oy)
            }
        }
    }

    /// Inverse of [`SceneSpec::motion`]: where the point now at `x` was at time 0.
    pub fn inverse_motion(&self, x: (f64, f64), t: f64) -> (f64, f64) {
        match self.kind {
            SceneKind::TranslatingGaussian => (x.0 - self.velocity.0 * t, x.1 - self.velocity.1 * t),
            SceneKind::RotatingCheckerboard => {
                let (cx, cy) = self.center();
                let (s, c) = (self.angular_rate * t).sin_cos();
                let (dx, dy) = (x.0 - cx, x.1 - cy);
                (cx + c * dx + s * dy, cy - s * dx + c * dy)
            }
            SceneKind::SinusoidalGratingOnCurvedPath => {
                let (ox, oy) = self.path_offset(t);
                (x.0 - ox, x.1 - oy)
            }
        }
    }

    fn path_offset(&self, t: f64) -> (f64, f64) {
        (
            self.velocity.0 * t,
            self.amplitude * (2.0 * PI * self.frequency * t).sin(),
        )
    }

    /// Texture intensity at time-0 coordinates.
    pub fn texture(&self, p: (f64, f64)) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        let v = match self.kind {
            SceneKind::TranslatingGaussian => {
                // blob centers as fractions of the frame, with amplitudes
                const BLOBS: [(f64, f64, f64); 4] = [
                    (0.30, 0.35, 0.60),
                    (0.68, 0.30, 0.45),
                    (0.55, 0.70, 0.55),
                    (0.22, 0.78, 0.35),
                ];
                let s2 = 2.0 * self.sigma * self.sigma;
                0.2 + BLOBS
                    .iter()
                    .map(|&(fx, fy, a)| {
                        let (dx, dy) = (p.0 - fx * w, p.1 - fy * h);
                        a * (-(dx * dx + dy * dy) / s2).exp()
                    })
                    .sum::<f64>()
            }
            SceneKind::RotatingCheckerboard => {
                let (cx, cy) = self.center();
                let i = ((p.0 - cx) / self.square).floor() as i64;
                let j = ((p.1 - cy) / self.square).floor() as i64;
                if (i + j).rem_euclid(2) == 0 {
                    0.8
                } else {
                    0.2
                }
            }
            SceneKind::SinusoidalGratingOnCurvedPath => {
                0.5 + 0.2 * (2.0 * PI * p.0 / self.wavelength.0).sin()
                    + 0.2 * (2.0 * PI * p.1 / self.wavelength.1).sin()
            }
        };
        v.clamp(INTENSITY_RANGE.0, INTENSITY_RANGE.1)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::OutOfSpan {
                t,
                begin: 0.0,
                end: self.duration,
            });
        }
        Ok(())
    }

    /// Intensity of pixel `(x, y)` at time `t`; the checkerboard averages a
    /// 4x4 grid of subsamples.
    pub fn pixel(&self, x: usize, y: usize, t: f64) -> f64 {
        let (x, y) = (x as f64, y as f64);
        match self.kind {
            SceneKind::RotatingCheckerboard => {
                let mut acc = 0.0;
                for j in 0..4 {
                    for i in 0..4 {
                        let sx = x + (i as f64 + 0.5) / 4.0 - 0.5;
                        let sy = y + (j as f64 + 0.5) / 4.0 - 0.5;
                        acc += self.texture(self.inverse_motion((sx, sy), t));
                    }
                }
                acc / 16.0
            }
            _ => self.texture(self.inverse_motion((x, y), t)),
        }
    }
}

/// Grayscale frames of the scene at each time.
pub fn render(spec: &SceneSpec, times: &[f64]) -> Result<FrameSequence> {
    spec.validate()?;
    let frames = times
        .iter()
        .map(|&t| {
            spec.check_time(t)?;
            let rows: Vec<Vec<f64>> = (0..spec.height)
                .into_par_iter()
                .map(|y| (0..spec.width).map(|x| spec.pixel(x, y, t)).collect())
                .collect();
            Frame::new(Grid::new(spec.width, spec.height, 1, rows.concat())?, t)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Displacement from time `t0` to time `t` of the content at each pixel.
pub fn ground_truth_flow(spec: &SceneSpec, t0: f64, t: f64) -> Result<FlowField> {
    spec.check_time(t0)?;
    spec.check_time(t)?;
    Ok(FlowField::from_fn(spec.width, spec.height, |x, y| {
        let p = (x as f64, y as f64);
        let (qx, qy) = spec.motion(spec.inverse_motion(p, t0), t);
        (qx - p.0, qy - p.1)
    }))
}

/// Positions at each of `times` of the content at `pixels` at time `t0`,
/// one row of `times.len()` points per pixel.
pub fn ground_truth_tracks(
    spec: &SceneSpec,
    t0: f64,
    pixels: &[(usize, usize)],
    times: &[f64],
) -> Result<Vec<Vec<(f64, f64)>>> {
    spec.check_time(t0)?;
    for &t in times {
        spec.check_time(t)?;
    }
    pixels
        .iter()
        .map(|&(x, y)| {
            if x >= spec.width || y >= spec.height {
                return Err(Error::OutOfBounds {
                    x,
                    y,
                    width: spec.width,
                    height: spec.height,
                });
            }
            let origin = spec.inverse_motion((x as f64, y as f64), t0);
            Ok(times.iter().map(|&t| spec.motion(origin, t)).collect())
        })
        .collect()
}
