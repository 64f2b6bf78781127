//! Dense raster types shared by every stage: multi-channel grids, timestamped
//! frames, frame sequences and displacement fields.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Row-major grid with interleaved channels: index `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::GeometryMismatch(format!(
                "{} values for a {width}x{height}x{channels} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty grid");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a grid by evaluating `f(x, y, channel)` at every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty grid");
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    /// Value at `(x, y)` with coordinates clamped to the grid (border replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Grid {
        assert!(c < self.channels);
        Grid::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    /// Luminance; single-channel grids are returned as-is.
    pub fn luminance(&self) -> Grid {
        match self.channels {
            1 => self.clone(),
            3 => Grid::from_fn(self.width, self.height, 1, |x, y, _| {
                let p = self.pixel(x, y);
                LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]
            }),
            n => Grid::from_fn(self.width, self.height, 1, |x, y, _| {
                self.pixel(x, y).iter().sum::<f64>() / n as f64
            }),
        }
    }

    /// 2x average pooling; an odd trailing row or column is dropped.
    pub fn avg_pool2(&self) -> Result<Grid> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot pool a {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(w, h, self.channels, |x, y, c| {
            let (x0, y0) = (2 * x, 2 * y);
            (self.get(x0, y0, c)
                + self.get(x0 + 1, y0, c)
                + self.get(x0, y0 + 1, c)
                + self.get(x0 + 1, y0 + 1, c))
                * 0.25
        }))
    }

    /// Removes `border` pixels from every side.
    pub fn crop(&self, border: usize) -> Result<Grid> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(Error::InvalidInput(format!(
                "border {border} leaves nothing of a {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(
            self.width - 2 * border,
            self.height - 2 * border,
            self.channels,
            |x, y, c| self.get(x + border, y + border, c),
        ))
    }
}

/// A timestamped image of linear, non-negative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    grid: Grid,
    timestamp: f64,
}

impl Frame {
    pub fn new(grid: Grid, timestamp: f64) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::InvalidInput(format!("frame timestamp {timestamp}")));
        }
        if grid.channels != 1 && grid.channels != 3 {
            return Err(Error::InvalidInput(format!(
                "frames carry 1 or 3 channels, got {}",
                grid.channels
            )));
        }
        if let Some(v) = grid.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame intensities must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { grid, timestamp })
    }

    /// Builds a frame, clamping negatives to zero.
    pub fn from_grid_clamped(mut grid: Grid, timestamp: f64) -> Result<Self> {
        for v in grid.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Self::new(grid, timestamp)
    }

    #[inline]
    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn is_gray(&self) -> bool {
        self.grid.channels == 1
    }
}

impl Deref for Frame {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.grid
    }
}

/// Frames with shared geometry and strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("empty frame sequence".into()))?;
        for pair in frames.windows(2) {
            if !pair[0].grid.same_shape(&pair[1].grid) {
                return Err(Error::GeometryMismatch(format!(
                    "frame at t={} is {}x{}x{}, expected {}x{}x{}",
                    pair[1].timestamp,
                    pair[1].width(),
                    pair[1].height(),
                    pair[1].channels(),
                    first.width(),
                    first.height(),
                    first.channels()
                )));
            }
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::InvalidInput(format!(
                    "timestamps must strictly increase ({} then {})",
                    pair[0].timestamp, pair[1].timestamp
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::timestamp).collect()
    }
}

/// Dense per-pixel displacement `(u, v)` = `(dx, dy)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::GeometryMismatch(format!(
                "flow components of length {} and {} for {width}x{height}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { width, height, u, v })
    }

    /// Builds a flow by evaluating `f(x, y) -> (u, v)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self { width, height, u, v }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }

    pub fn scaled(&self, s: f64) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|a| a * s).collect(),
            v: self.v.iter().map(|a| a * s).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &FlowField, b: f64) -> Result<FlowField> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::GeometryMismatch("flow fields differ in size".into()));
        }
        Ok(FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().zip(&other.u).map(|(p, q)| a * p + b * q).collect(),
            v: self.v.iter().zip(&other.v).map(|(p, q)| a * p + b * q).collect(),
        })
    }

    /// Average-pools by 2 and halves the vectors, giving the flow at the next
    /// coarser pyramid level.
    pub fn downscale(&self) -> Result<FlowField> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot downscale a {}x{} flow",
                self.width, self.height
            )));
        }
        let pool = |c: &[f64], x: usize, y: usize| {
            let i = 2 * y * self.width + 2 * x;
            (c[i] + c[i + 1] + c[i + self.width] + c[i + self.width + 1]) * 0.25 * 0.5
        };
        Ok(FlowField::from_fn(w, h, |x, y| (pool(&self.u, x, y), pool(&self.v, x, y))))
    }

    /// Root-mean-square endpoint error against `other` over `mask` (all pixels when `None`).
    pub fn endpoint_rms(&self, other: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::GeometryMismatch("flow fields differ in size".into()));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.u.len() {
            if mask.is_none_or(|m| m[i]) {
                let du = self.u[i] - other.u[i];
                let dv = self.v[i] - other.v[i];
                sum += du * du + dv * dv;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput("empty mask".into()));
        }
        Ok((sum / n as f64).sqrt())
    }
}

/// Mask that drops `border` pixels on every side.
pub fn border_mask(width: usize, height: usize, border: usize) -> Vec<bool> {
    let mut m = vec![false; width * height];
    for y in border..height.saturating_sub(border) {
        for x in border..width.saturating_sub(border) {
            m[y * width + x] = true;
        }
    }
    m
}
