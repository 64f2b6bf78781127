use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};

use super::{put_u32, write_bytes, Reader};

const EVS1: &str = "EVS1";
const CSV: &str = "events csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Evs1,
}

impl EventFormat {
    /// `.csv` and `.txt` are text, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("txt") => EventFormat::Csv,
            _ => EventFormat::Evs1,
        }
    }
}

/// Events as stored on disk. Neither format is required to carry the
/// sensor size or the recording span, so both are optional here.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub geometry: Option<(usize, usize)>,
    pub span: Option<(f64, f64)>,
    pub events: Vec<Event>,
}

impl EventFile {
    /// Builds a stream. An explicit `geometry` must agree with the file's;
    /// without either it is inferred from the largest coordinates. The span
    /// falls back to the file's, then to the event extent.
    pub fn into_stream(self, geometry: Option<(usize, usize)>, span: Option<(f64, f64)>) -> Result<EventStream> {
        let (width, height) = match (geometry, self.geometry) {
            (Some(g), Some(f)) if g != f => {
                return Err(Error::GeometryMismatch(format!(
                    "events recorded on {}x{}, expected {}x{}",
                    f.0, f.1, g.0, g.1
                )))
            }
            (Some(g), _) | (None, Some(g)) => g,
            (None, None) => {
                let w = self.events.iter().map(|e| e.x as usize + 1).max().unwrap_or(1);
                let h = self.events.iter().map(|e| e.y as usize + 1).max().unwrap_or(1);
                (w, h)
            }
        };
        let (t0, t1) = match span.or(self.span) {
            Some(s) => s,
            None => {
                let lo = self.events.iter().map(|e| e.t).fold(f64::INFINITY, f64::min);
                let hi = self.events.iter().map(|e| e.t).fold(f64::NEG_INFINITY, f64::max);
                if self.events.is_empty() {
                    (0.0, 0.0)
                } else {
                    (lo, hi)
                }
            }
        };
        EventStream::from_unsorted(self.events, width, height, t0, t1)
    }
}

/// Parses `t x y p` lines; commas are accepted as separators. The comments
/// `# sensor W H` and `# span T0 T1` written by [`format_events_csv`] are
/// read back.
pub fn parse_events_csv(text: &str) -> Result<EventFile> {
    let mut file = EventFile {
        geometry: None,
        span: None,
        events: Vec::new(),
    };
    for (n, raw) in text.lines().enumerate() {
        let bad = |what: &str| Error::format(CSV, format!("line {}: {what}: {raw:?}", n + 1));
        let (body, comment) = match raw.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (raw, None),
        };
        if let Some(c) = comment {
            let f: Vec<&str> = c.split_whitespace().collect();
            match f.as_slice() {
                ["sensor", w, h] => {
                    let w = w.parse().map_err(|_| bad("bad sensor width"))?;
                    let h = h.parse().map_err(|_| bad("bad sensor height"))?;
                    file.geometry = Some((w, h));
                }
                ["span", a, b] => {
                    let a = a.parse().map_err(|_| bad("bad span"))?;
                    let b = b.parse().map_err(|_| bad("bad span"))?;
                    file.span = Some((a, b));
                }
                _ => {}
            }
        }
        let fields: Vec<&str> = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let [t, x, y, p] = fields.as_slice() else {
            return Err(bad("expected 4 fields"));
        };
        let t: f64 = t.parse().map_err(|_| bad("bad timestamp"))?;
        let x: u16 = x.parse().map_err(|_| bad("bad x"))?;
        let y: u16 = y.parse().map_err(|_| bad("bad y"))?;
        let p: i64 = p.parse().map_err(|_| bad("bad polarity"))?;
        let polarity = Polarity::from_sign(p).map_err(|_| bad("polarity must be 1 or -1"))?;
        file.events.push(Event::new(t, x, y, polarity));
    }
    Ok(file)
}

/// Timestamps use the shortest representation that parses back exactly.
pub fn format_events_csv(stream: &EventStream) -> String {
    let mut out = format!(
        "# t x y p\n# sensor {} {}\n# span {} {}\n",
        stream.width(),
        stream.height(),
        stream.t_begin(),
        stream.t_end()
    );
    out.reserve(stream.len() * 24);
    for e in stream.events() {
        out.push_str(&format!("{} {} {} {}\n", e.t, e.x, e.y, e.polarity.sign()));
    }
    out
}

pub fn encode_evs1(stream: &EventStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 13 * stream.len());
    out.extend_from_slice(EVS1.as_bytes());
    put_u32(&mut out, EVS1, stream.width())?;
    put_u32(&mut out, EVS1, stream.height())?;
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.polarity.sign().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_evs1(data: &[u8]) -> Result<EventFile> {
    let mut r = Reader::new(EVS1, data)?;
    let width = r.u32()?;
    let height = r.u32()?;
    let count = r.u64()?;
    if count.checked_mul(13) != Some(r.remaining() as u64) {
        return Err(Error::format(EVS1, format!("{count} records do not fit {} bytes", r.remaining())));
    }
    let mut events = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t = r.f64()?;
        let x = r.u16()?;
        let y = r.u16()?;
        let p = r.i8()?;
        let polarity =
            Polarity::from_sign(p as i64).map_err(|_| Error::format(EVS1, format!("polarity byte {p}")))?;
        events.push(Event::new(t, x, y, polarity));
    }
    r.finish()?;
    Ok(EventFile {
        geometry: Some((width, height)),
        span: None,
        events,
    })
}

pub fn load_events(path: &Path) -> Result<EventFile> {
    match EventFormat::from_path(path) {
        EventFormat::Csv => parse_events_csv(&std::fs::read_to_string(path)?),
        EventFormat::Evs1 => decode_evs1(&std::fs::read(path)?),
    }
}

pub fn save_events(path: &Path, stream: &EventStream) -> Result<()> {
    match EventFormat::from_path(path) {
        EventFormat::Csv => write_bytes(path, format_events_csv(stream).as_bytes()),
        EventFormat::Evs1 => write_bytes(path, &encode_evs1(stream)?),
    }
}
