//! Direct event integration `L(t) = L(t0) * exp(E(t0, t))` and contrast
//! threshold calibration.

use crate::error::{Error, Result};
use crate::events::{ContrastThresholds, EventStream, Polarity};
use crate::grid::{Frame, FrameSequence, Grid};

fn check_geometry(frame: &Frame, stream: &EventStream) -> Result<()> {
    if frame.width() != stream.width() || frame.height() != stream.height() {
        return Err(Error::GeometryMismatch(format!(
            "frame is {}x{}, event sensor is {}x{}",
            frame.width(),
            frame.height(),
            stream.width(),
            stream.height()
        )));
    }
    if !frame.is_gray() {
        return Err(Error::InvalidInput("event integration needs a grayscale frame".into()));
    }
    Ok(())
}

fn check_time(stream: &EventStream, t: f64) -> Result<()> {
    if !stream.contains_time(t) {
        return Err(Error::OutOfSpan {
            t,
            begin: stream.t_begin(),
            end: stream.t_end(),
        });
    }
    Ok(())
}

/// Integrates the events from `initial.timestamp()` up to `t` onto `initial`.
///
/// Per pixel: `max(0, (L0 + eps) * exp(c+ N+ - c- N-) - eps)`, clamped to `[0, 1]`.
pub fn direct_integration(
    initial: &Frame,
    stream: &EventStream,
    t: f64,
    thresholds: ContrastThresholds,
    log_eps: f64,
) -> Result<Frame> {
    check_geometry(initial, stream)?;
    check_time(stream, initial.timestamp())?;
    check_time(stream, t)?;
    if t < initial.timestamp() {
        return Err(Error::InvalidWindow {
            t0: initial.timestamp(),
            t1: t,
        });
    }
    let counts = stream.counts(initial.timestamp(), t)?;
    let mut out = initial.grid().clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let change = counts.log_change(i, thresholds);
        if change != 0.0 {
            *v = ((*v + log_eps) * change.exp() - log_eps).clamp(0.0, 1.0);
        } else {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Frame::new(out, t)
}

/// Direct integration at each of the strictly increasing `times`.
pub fn latent_frames(
    initial: &Frame,
    stream: &EventStream,
    times: &[f64],
    thresholds: ContrastThresholds,
    log_eps: f64,
) -> Result<FrameSequence> {
    let frames = times
        .iter()
        .map(|&t| direct_integration(initial, stream, t, thresholds, log_eps))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Frames at `times` from the log level each pixel is known to have at its
/// own event times.
///
/// An ideal sensor fires exactly when the log intensity reaches the next
/// threshold level, so the level is known at the initial timestamp and at
/// every event. Between knots the level follows the ramp described at
/// [`knot_log_level`]. This uses events after `t` and so needs the whole
/// stream up front.
pub fn interpolated_frames(
    initial: &Frame,
    stream: &EventStream,
    times: &[f64],
    thresholds: ContrastThresholds,
    log_eps: f64,
) -> Result<FrameSequence> {
    check_geometry(initial, stream)?;
    let t0 = initial.timestamp();
    check_time(stream, t0)?;
    for &t in times {
        check_time(stream, t)?;
        if t < t0 {
            return Err(Error::InvalidWindow { t0, t1: t });
        }
    }
    let w = stream.width();
    let n = initial.len_pixels();
    let mut knots: Vec<Vec<(f64, f64)>> = initial
        .data()
        .iter()
        .map(|&v| vec![(t0, (v.clamp(0.0, 1.0) + log_eps).ln())])
        .collect();
    for e in stream.window(t0, stream.t_end())? {
        let k = &mut knots[e.y as usize * w + e.x as usize];
        let level = k.last().expect("seeded").1 + thresholds.step(e.polarity);
        k.push((e.t, level));
    }
    let frames = times
        .iter()
        .map(|&t| {
            let data = (0..n)
                .map(|i| (knot_log_level(&knots[i], t).exp() - log_eps).clamp(0.0, 1.0))
                .collect();
            Frame::new(Grid::new(w, stream.height(), 1, data)?, t)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Log level at `t` from `(time, level)` knots, the first one at or before `t`.
///
/// The move from knot `k` to `k + 1` is a linear ramp that ends at knot
/// `k + 1` and lasts at most twice the neighbouring gaps, so a burst after a
/// quiet spell stays a step. Past the last knot the last step's direction is
/// extrapolated at its rate, up to half a step.
fn knot_log_level(knots: &[(f64, f64)], t: f64) -> f64 {
    let gap = |k: usize| knots[k + 1].0 - knots[k].0;
    let next = knots.partition_point(|&(tk, _)| tk <= t);
    let k = next - 1;
    let (ta, la) = knots[k];
    if let Some(&(tb, lb)) = knots.get(next) {
        let mut ramp = tb - ta;
        // knot 0 is the initial frame, not an event, so it bounds no gap
        if k >= 2 {
            ramp = ramp.min(2.0 * gap(k - 1));
        }
        if next + 1 < knots.len() {
            ramp = ramp.min(2.0 * gap(next));
        }
        let start = tb - ramp;
        if t <= start || ramp <= 0.0 {
            return la;
        }
        return la + (lb - la) * (t - start) / ramp;
    }
    if k >= 2 {
        let (g, step) = (gap(k - 1), la - knots[k - 1].1);
        if g > 0.0 {
            return la + step * ((t - ta) / g).min(0.5);
        }
    }
    la
}

/// How much of the threshold pair the data could determine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationStatus {
    /// Both thresholds fitted independently.
    Full,
    /// Only one polarity was observed; the named threshold copies the other.
    Defaulted(Polarity),
    /// Positive and negative counts were collinear; one shared value was fitted.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    pub thresholds: ContrastThresholds,
    pub status: CalibrationStatus,
    /// Pixels (summed over pairs) that entered the fit.
    pub samples: usize,
}

/// Least-squares fit of `(c_pos, c_neg)` from frame pairs and the events
/// between them.
///
/// Minimizes `sum (dlog - c_pos N+ + c_neg N-)^2` over pixels with at least one
/// event, via the 2x2 normal equations.
pub fn estimate_contrast(
    frame_pairs: &[(Frame, Frame)],
    stream: &EventStream,
    log_eps: f64,
) -> Result<ThresholdEstimate> {
    if frame_pairs.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one frame pair".into()));
    }
    let (mut saa, mut sab, mut sbb, mut sad, mut sbd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut samples = 0usize;
    for (a, b) in frame_pairs {
        check_geometry(a, stream)?;
        check_geometry(b, stream)?;
        if !(b.timestamp() > a.timestamp()) {
            return Err(Error::InvalidWindow {
                t0: a.timestamp(),
                t1: b.timestamp(),
            });
        }
        let counts = stream.counts(a.timestamp(), b.timestamp())?;
        for i in 0..a.len_pixels() {
            let (np, nn) = (counts.positive[i] as f64, counts.negative[i] as f64);
            if np + nn == 0.0 {
                continue;
            }
            let d = (b.data()[i] + log_eps).ln() - (a.data()[i] + log_eps).ln();
            let q = -nn;
            saa += np * np;
            sab += np * q;
            sbb += q * q;
            sad += np * d;
            sbd += q * d;
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(Error::NoEvents("no pixel received events between the frame pairs".into()));
    }

    let (c_pos, c_neg, status) = if sbb == 0.0 {
        let c = sad / saa;
        (c, c, CalibrationStatus::Defaulted(Polarity::Negative))
    } else if saa == 0.0 {
        let c = sbd / sbb;
        (c, c, CalibrationStatus::Defaulted(Polarity::Positive))
    } else {
        let det = saa * sbb - sab * sab;
        if det <= 1e-12 * saa * sbb {
            let c = (sad + sbd) / (saa + 2.0 * sab + sbb);
            (c, c, CalibrationStatus::Shared)
        } else {
            (
                (sbb * sad - sab * sbd) / det,
                (saa * sbd - sab * sad) / det,
                CalibrationStatus::Full,
            )
        }
    };
    let thresholds = ContrastThresholds::new(c_pos, c_neg).map_err(|_| {
        Error::RankDeficient(format!(
            "calibration produced non-positive thresholds ({c_pos}, {c_neg})"
        ))
    })?;
    Ok(ThresholdEstimate {
        thresholds,
        status,
        samples,
    })
}

/// Single-channel luminance frame for integration.
pub fn luminance_frame(frame: &Frame) -> Result<Frame> {
    if frame.is_gray() {
        return Ok(frame.clone());
    }
    Frame::from_grid_clamped(frame.grid().luminance(), frame.timestamp())
}

/// Reapplies the chroma of `color` to a new luminance: each channel is scaled
/// by `(luma + eps) / (luma0 + eps)`.
pub fn transfer_luminance(color: &Frame, luma: &Frame, log_eps: f64) -> Result<Frame> {
    if color.is_gray() {
        return Ok(luma.clone());
    }
    let base = color.grid().luminance();
    let out = Grid::from_fn(color.width(), color.height(), color.channels(), |x, y, c| {
        let ratio = (luma.get(x, y, 0) + log_eps) / (base.get(x, y, 0) + log_eps);
        (color.get(x, y, c) * ratio).clamp(0.0, 1.0)
    });
    Frame::new(out, luma.timestamp())
}
