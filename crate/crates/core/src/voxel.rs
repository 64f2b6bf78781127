//! Spatiotemporal event volumes built with a bilinear temporal kernel.

use crate::error::{Error, Result};
use crate::events::{EventStream, Polarity};

/// Temporal channel count used by default.
pub const DEFAULT_BINS: usize = 60;

/// Event histogram of shape `planes x bins x height x width`.
///
/// With polarity separation plane 0 accumulates positive events and plane 1
/// the magnitudes of negative events; otherwise a single signed plane is used.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVolume {
    planes: usize,
    bins: usize,
    width: usize,
    height: usize,
    window: (f64, f64),
    data: Vec<f64>,
}

impl EventVolume {
    pub fn zeros(
        polarity_separated: bool,
        bins: usize,
        width: usize,
        height: usize,
        window: (f64, f64),
    ) -> Self {
        let planes = if polarity_separated { 2 } else { 1 };
        Self {
            planes,
            bins,
            width,
            height,
            window,
            data: vec![0.0; planes * bins * width * height],
        }
    }

    pub fn from_parts(
        planes: usize,
        bins: usize,
        width: usize,
        height: usize,
        window: (f64, f64),
        data: Vec<f64>,
    ) -> Result<Self> {
        if planes != 1 && planes != 2 {
            return Err(Error::InvalidInput(format!("volume planes must be 1 or 2, got {planes}")));
        }
        if data.len() != planes * bins * width * height {
            return Err(Error::GeometryMismatch(format!(
                "{} values for a {planes}x{bins}x{height}x{width} volume",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite volume value".into()));
        }
        Ok(Self {
            planes,
            bins,
            width,
            height,
            window,
            data,
        })
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn polarity_separated(&self) -> bool {
        self.planes == 2
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, plane: usize, bin: usize, x: usize, y: usize) -> usize {
        ((plane * self.bins + bin) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, plane: usize, bin: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(plane, bin, x, y)]
    }

    /// Sum of one plane.
    pub fn plane_sum(&self, plane: usize) -> f64 {
        let n = self.bins * self.width * self.height;
        self.data[plane * n..(plane + 1) * n].iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Bins the events of `[t0, t1)` with `k(a) = max(0, 1 - |a|)` along time.
///
/// An event at time `t` sits at bin coordinate `(t - t0) / (t1 - t0) * (B - 1)`
/// and is shared between the two nearest bins. Spatial coordinates are
/// integral, so the spatial kernel puts all mass on the event's own pixel.
pub fn build_volume(
    stream: &EventStream,
    t0: f64,
    t1: f64,
    bins: usize,
    polarity_separated: bool,
) -> Result<EventVolume> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidWindow { t0, t1 });
    }
    if bins == 0 {
        return Err(Error::InvalidInput("volume needs at least one bin".into()));
    }
    let mut vol = EventVolume::zeros(
        polarity_separated,
        bins,
        stream.width(),
        stream.height(),
        (t0, t1),
    );
    let span = t1 - t0;
    let last = (bins - 1) as f64;
    let lo = stream.events().partition_point(|e| e.t < t0);
    let hi = stream.events().partition_point(|e| e.t < t1);
    for e in &stream.events()[lo..hi] {
        let pos = ((e.t - t0) / span * last).clamp(0.0, last);
        let b0 = pos.floor() as usize;
        let frac = pos - b0 as f64;
        let (plane, value) = match (polarity_separated, e.polarity) {
            (true, Polarity::Positive) => (0, 1.0),
            (true, Polarity::Negative) => (1, 1.0),
            (false, p) => (0, p.sign() as f64),
        };
        let (x, y) = (e.x as usize, e.y as usize);
        let i0 = vol.index(plane, b0, x, y);
        vol.data[i0] += value * (1.0 - frac);
        if frac > 0.0 {
            let i1 = vol.index(plane, b0 + 1, x, y);
            vol.data[i1] += value * frac;
        }
    }
    Ok(vol)
}

/// Scales a volume so its maximum absolute value is 1; all-zero volumes pass
/// through unchanged.
pub fn normalize_volume(volume: &EventVolume) -> EventVolume {
    let m = volume.max_abs();
    let mut out = volume.clone();
    if m > 0.0 {
        for v in &mut out.data {
            *v /= m;
        }
    }
    out
}
