//! Event data model, per-pixel brightness integration and a frame-to-events
//! simulator following the log-intensity threshold-crossing model.
//!
//! Event windows are half-open, `[t0, t1)`, so adjacent windows partition a
//! stream. A window that reaches the stream's `t_end` is closed at that end so
//! the final instant of the stream is never dropped.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Frame, FrameSequence};

/// Default offset added to intensities before taking logarithms.
pub const DEFAULT_LOG_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i64) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::InvalidInput(format!("polarity must be +1 or -1, got {other}"))),
        }
    }
}

/// A single brightness-change impulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: f64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Time-sorted events on a `width x height` sensor over `[t_begin, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: usize,
    height: usize,
    t_begin: f64,
    t_end: f64,
}

impl EventStream {
    pub fn new(
        events: Vec<Event>,
        width: usize,
        height: usize,
        t_begin: f64,
        t_end: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("sensor geometry must be positive".into()));
        }
        if width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!(
                "sensor {width}x{height} exceeds 16-bit coordinates"
            )));
        }
        if !(t_begin.is_finite() && t_end.is_finite()) || t_end < t_begin {
            return Err(Error::InvalidWindow {
                t0: t_begin,
                t1: t_end,
            });
        }
        let mut prev = t_begin;
        for e in &events {
            if (e.x as usize) >= width || (e.y as usize) >= height {
                return Err(Error::OutOfBounds {
                    x: e.x as usize,
                    y: e.y as usize,
                    width,
                    height,
                });
            }
            if !e.t.is_finite() || e.t < prev || e.t > t_end {
                return Err(Error::InvalidInput(format!(
                    "event at t={} is unsorted or outside [{t_begin}, {t_end}]",
                    e.t
                )));
            }
            prev = e.t;
        }
        Ok(Self {
            events,
            width,
            height,
            t_begin,
            t_end,
        })
    }

    /// Sorts `events` by time (stable, row-major at equal times) and spans
    /// exactly the given interval.
    pub fn from_unsorted(
        mut events: Vec<Event>,
        width: usize,
        height: usize,
        t_begin: f64,
        t_end: f64,
    ) -> Result<Self> {
        sort_events(&mut events);
        Self::new(events, width, height, t_begin, t_end)
    }

    pub fn empty(width: usize, height: usize, t_begin: f64, t_end: f64) -> Result<Self> {
        Self::new(Vec::new(), width, height, t_begin, t_end)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn t_begin(&self) -> f64 {
        self.t_begin
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t_begin && t <= self.t_end
    }

    /// Events in `[t0, t1)`, or `[t0, t1]` when `t1` reaches the stream end.
    pub fn window(&self, t0: f64, t1: f64) -> Result<&[Event]> {
        if !(t0 <= t1) {
            return Err(Error::InvalidWindow { t0, t1 });
        }
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = if t1 >= self.t_end {
            self.events.partition_point(|e| e.t <= t1)
        } else {
            self.events.partition_point(|e| e.t < t1)
        };
        Ok(&self.events[lo..hi.max(lo)])
    }

    /// Per-pixel positive and negative event counts in a window.
    pub fn counts(&self, t0: f64, t1: f64) -> Result<PolarityCounts> {
        let mut counts = PolarityCounts::zeros(self.width, self.height);
        for e in self.window(t0, t1)? {
            counts.add(e);
        }
        Ok(counts)
    }
}

/// Stable sort by time, then row-major pixel order.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
}

/// Per-pixel event counts split by polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityCounts {
    pub width: usize,
    pub height: usize,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl PolarityCounts {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            positive: vec![0; width * height],
            negative: vec![0; width * height],
        }
    }

    #[inline]
    fn add(&mut self, e: &Event) {
        let i = e.y as usize * self.width + e.x as usize;
        match e.polarity {
            Polarity::Positive => self.positive[i] += 1,
            Polarity::Negative => self.negative[i] += 1,
        }
    }

    /// Log-intensity change `c_pos * N+ - c_neg * N-` at linear index `i`.
    #[inline]
    pub fn log_change(&self, i: usize, thresholds: ContrastThresholds) -> f64 {
        thresholds.c_pos * self.positive[i] as f64 - thresholds.c_neg * self.negative[i] as f64
    }
}

/// Log-intensity step per event, separately for each polarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastThresholds {
    pub c_pos: f64,
    pub c_neg: f64,
}

impl ContrastThresholds {
    pub fn new(c_pos: f64, c_neg: f64) -> Result<Self> {
        for (name, c) in [("c_pos", c_pos), ("c_neg", c_neg)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and positive, got {c}"
                )));
            }
        }
        Ok(Self { c_pos, c_neg })
    }

    pub fn symmetric(c: f64) -> Result<Self> {
        Self::new(c, c)
    }

    pub fn max(&self) -> f64 {
        self.c_pos.max(self.c_neg)
    }

    #[inline]
    pub fn step(&self, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Positive => self.c_pos,
            Polarity::Negative => -self.c_neg,
        }
    }
}

impl Default for ContrastThresholds {
    fn default() -> Self {
        Self {
            c_pos: 0.2,
            c_neg: 0.2,
        }
    }
}

/// Signed log-brightness change accumulated at one pixel over `[t0, t1)`.
pub fn integrate_pixel(
    stream: &EventStream,
    x: usize,
    y: usize,
    t0: f64,
    t1: f64,
    thresholds: ContrastThresholds,
) -> Result<f64> {
    if x >= stream.width || y >= stream.height {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: stream.width,
            height: stream.height,
        });
    }
    let (mut pos, mut neg) = (0u32, 0u32);
    for e in stream.window(t0, t1)? {
        if e.x as usize == x && e.y as usize == y {
            match e.polarity {
                Polarity::Positive => pos += 1,
                Polarity::Negative => neg += 1,
            }
        }
    }
    Ok(thresholds.c_pos * pos as f64 - thresholds.c_neg * neg as f64)
}

/// Generates the events an ideal sensor would emit for a grayscale video.
///
/// Per pixel the log intensity `ln(L + log_eps)` is linearly interpolated
/// between frames. Whenever it reaches the reference level plus `c_pos`
/// (minus `c_neg`) an event is emitted at the interpolated crossing time and
/// the reference moves by exactly one threshold. The stream spans the first
/// to the last frame timestamp.
pub fn simulate_events(
    frames: &FrameSequence,
    thresholds: ContrastThresholds,
    log_eps: f64,
) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("simulation needs at least two frames".into()));
    }
    if !(log_eps.is_finite() && log_eps > 0.0) {
        return Err(Error::InvalidInput(format!("log_eps must be positive, got {log_eps}")));
    }
    let frames = frames.frames();
    if frames.iter().any(|f| !f.is_gray()) {
        return Err(Error::InvalidInput("simulation requires grayscale frames".into()));
    }
    let (width, height) = (frames[0].width(), frames[0].height());
    let times: Vec<f64> = frames.iter().map(Frame::timestamp).collect();

    let rows: Vec<Vec<Event>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            let mut levels = vec![0.0; frames.len()];
            for x in 0..width {
                for (l, f) in levels.iter_mut().zip(frames) {
                    *l = (f.get(x, y, 0) + log_eps).ln();
                }
                simulate_pixel(&levels, &times, thresholds, x as u16, y as u16, &mut out);
            }
            out
        })
        .collect();

    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    sort_events(&mut events);
    EventStream::new(events, width, height, times[0], times[times.len() - 1])
}

fn simulate_pixel(
    levels: &[f64],
    times: &[f64],
    c: ContrastThresholds,
    x: u16,
    y: u16,
    out: &mut Vec<Event>,
) {
    let mut reference = levels[0];
    for j in 0..levels.len() - 1 {
        let (la, lb) = (levels[j], levels[j + 1]);
        let (ta, tb) = (times[j], times[j + 1]);
        if lb == la {
            continue;
        }
        let crossing = |level: f64| {
            let frac = ((level - la) / (lb - la)).clamp(0.0, 1.0);
            (ta + frac * (tb - ta)).clamp(ta, tb)
        };
        if lb > la {
            while lb >= reference + c.c_pos {
                reference += c.c_pos;
                out.push(Event::new(crossing(reference), x, y, Polarity::Positive));
            }
        } else {
            while lb <= reference - c.c_neg {
                reference -= c.c_neg;
                out.push(Event::new(crossing(reference), x, y, Polarity::Negative));
            }
        }
    }
}
