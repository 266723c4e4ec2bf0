//! Raw events and their time-surface representation.
//!
//! A time surface stores, for every pixel, `exp(-(t - t_last) / eta)` where
//! `t_last` is the timestamp of the most recent event at that pixel. Pixels that
//! never fired render as exactly zero.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::FrameId;

/// Magic header of the binary event file format.
pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

/// One brightness-change measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub u: u16,
    pub v: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(u: u16, v: u16, t: f64, polarity: Polarity) -> Self {
        Self { t, u, v, polarity }
    }
}

/// Per-pixel timestamp of the most recent event.
#[derive(Debug, Clone, PartialEq)]
pub struct LastEventMap {
    width: u32,
    height: u32,
    t_last: Vec<f64>,
    latest: f64,
}

impl LastEventMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            t_last: vec![f64::NEG_INFINITY; (width * height) as usize],
            latest: f64::NEG_INFINITY,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Timestamp of the last event at `(u, v)`, `None` if the pixel never fired.
    pub fn t_last(&self, u: u32, v: u32) -> Option<f64> {
        let t = self.t_last[(v * self.width + u) as usize];
        t.is_finite().then_some(t)
    }

    /// Largest timestamp ingested so far.
    pub fn latest(&self) -> Option<f64> {
        self.latest.is_finite().then_some(self.latest)
    }

    /// Folds a time-ordered batch into the map. The batch is validated as a
    /// whole first; on error the map is left untouched.
    pub fn ingest(&mut self, batch: &[Event]) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (index, e) in batch.iter().enumerate() {
            if u32::from(e.u) >= self.width || u32::from(e.v) >= self.height {
                return Err(Error::EventOutOfBounds {
                    index,
                    u: e.u.into(),
                    v: e.v.into(),
                    width: self.width,
                    height: self.height,
                });
            }
            if !e.t.is_finite() || e.t < prev {
                return Err(Error::EventOrder { index, t: e.t, prev });
            }
            prev = e.t;
        }
        for e in batch {
            let slot = &mut self.t_last[usize::from(e.v) * self.width as usize + usize::from(e.u)];
            if e.t > *slot {
                *slot = e.t;
            }
            if e.t > self.latest {
                self.latest = e.t;
            }
        }
        Ok(())
    }

    /// Renders the time surface at query time `t` with decay constant `eta`.
    pub fn render(&self, t: f64, eta: f64) -> Result<TimeSurface> {
        render_time_surface(self, t, eta)
    }
}

/// Background-activity filter: an event survives only if one of its eight
/// neighbours fired within `window` seconds before it. Isolated sensor noise
/// rarely has such support while moving edges almost always do.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityFilter {
    width: u32,
    height: u32,
    window: f64,
    /// Last event time per pixel, over all events seen (kept or not).
    t_last: Vec<f64>,
}

impl ActivityFilter {
    pub fn new(width: u32, height: u32, window: f64) -> Self {
        Self {
            width,
            height,
            window,
            t_last: vec![f64::NEG_INFINITY; (width * height) as usize],
        }
    }

    /// Removes unsupported events from a time-ordered batch. Events outside
    /// the sensor are kept so that later validation can report them.
    pub fn retain(&mut self, events: &mut Vec<Event>) {
        let (w, h) = (self.width as usize, self.height as usize);
        events.retain(|e| {
            let (u, v) = (usize::from(e.u), usize::from(e.v));
            if u >= w || v >= h {
                return true;
            }
            let since = e.t - self.window;
            let mut supported = false;
            for y in v.saturating_sub(1)..(v + 2).min(h) {
                for x in u.saturating_sub(1)..(u + 2).min(w) {
                    if (x, y) != (u, v) && self.t_last[y * w + x] >= since {
                        supported = true;
                    }
                }
            }
            self.t_last[v * w + u] = e.t;
            supported
        });
    }
}

/// Exponential-decay image in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface {
    pub width: u32,
    pub height: u32,
    pub t: f64,
    pub eta: f64,
    pub values: Vec<f64>,
}

impl TimeSurface {
    pub fn zeros(width: u32, height: u32, t: f64, eta: f64) -> Self {
        Self {
            width,
            height,
            t,
            eta,
            values: vec![0.0; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[(v * self.width + u) as usize]
    }
}

pub fn render_time_surface(map: &LastEventMap, t: f64, eta: f64) -> Result<TimeSurface> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("time-surface decay must be positive, got {eta}")));
    }
    if let Some(last) = map.latest() {
        if t < last {
            return Err(Error::TimeRegression { t, last });
        }
    }
    let inv_eta = 1.0 / eta;
    let values = map
        .t_last
        .iter()
        .map(|&tl| {
            if tl.is_finite() {
                (-(t - tl) * inv_eta).exp().clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(TimeSurface {
        width: map.width,
        height: map.height,
        t,
        eta,
        values,
    })
}

/// Left and right time surfaces rendered at a shared instant.
#[derive(Debug, Clone)]
pub struct StereoEventFrame {
    pub left: TimeSurface,
    pub right: TimeSurface,
    pub t: f64,
    pub frame_id: FrameId,
}

pub fn make_stereo_frame(
    left_map: &LastEventMap,
    right_map: &LastEventMap,
    t: f64,
    eta: f64,
    frame_id: FrameId,
) -> Result<StereoEventFrame> {
    if left_map.width != right_map.width || left_map.height != right_map.height {
        return Err(Error::Config(format!(
            "stereo resolution mismatch: {}x{} vs {}x{}",
            left_map.width, left_map.height, right_map.width, right_map.height
        )));
    }
    Ok(StereoEventFrame {
        left: render_time_surface(left_map, t, eta)?,
        right: render_time_surface(right_map, t, eta)?,
        t,
        frame_id,
    })
}

/// Reads an event file, auto-detecting the binary (`EVT1`) or text layout.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut reader = EventReader::open(path)?;
    let mut out = Vec::new();
    while let Some(e) = reader.next_event()? {
        out.push(e);
    }
    Ok(out)
}

/// Incremental reader over an event file in either layout.
pub struct EventReader {
    inner: BufReader<File>,
    path: std::path::PathBuf,
    binary: bool,
    /// Records (binary) or lines (text) consumed so far.
    position: usize,
    peeked: Option<Event>,
    line: String,
}

impl EventReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut inner = BufReader::new(file);
        let binary = inner.fill_buf().map_err(|e| Error::io(path, e))?.starts_with(BINARY_MAGIC);
        if binary {
            inner.consume(BINARY_MAGIC.len());
        }
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            binary,
            position: 0,
            peeked: None,
            line: String::new(),
        })
    }

    pub fn next_event(&mut self) -> Result<Option<Event>> {
        if let Some(e) = self.peeked.take() {
            return Ok(Some(e));
        }
        if self.binary {
            self.next_binary()
        } else {
            self.next_text()
        }
    }

    /// Appends every remaining event with `t ≤ t_end` to `out`.
    pub fn read_until(&mut self, t_end: f64, out: &mut Vec<Event>) -> Result<()> {
        while let Some(e) = self.next_event()? {
            if e.t > t_end {
                self.peeked = Some(e);
                break;
            }
            out.push(e);
        }
        Ok(())
    }

    fn next_binary(&mut self) -> Result<Option<Event>> {
        let path = &self.path;
        let t = match self.inner.read_f64::<LittleEndian>() {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        self.position += 1;
        let r = &mut self.inner;
        let record =
            (|| -> std::io::Result<(u16, u16, i8)> { Ok((r.read_u16::<LittleEndian>()?, r.read_u16::<LittleEndian>()?, r.read_i8()?)) })();
        let (u, v, p) = record.map_err(|_| Error::parse(path, self.position, "truncated binary record"))?;
        let polarity =
            Polarity::from_sign(p.into()).ok_or_else(|| Error::parse(path, self.position, format!("polarity {p} not in {{1, -1}}")))?;
        Ok(Some(Event { t, u, v, polarity }))
    }

    fn next_text(&mut self) -> Result<Option<Event>> {
        loop {
            self.line.clear();
            let n = self.inner.read_line(&mut self.line).map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                return Ok(None);
            }
            self.position += 1;
            let line = self.line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::parse(&self.path, self.position, msg.to_string());
            let mut it = line.split_whitespace();
            let t: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad timestamp"))?;
            let u: u16 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad column"))?;
            let v: u16 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad row"))?;
            let p: i64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad polarity"))?;
            let polarity = Polarity::from_sign(p).ok_or_else(|| bad("polarity must be 1 or -1"))?;
            return Ok(Some(Event { t, u, v, polarity }));
        }
    }
}

/// Streaming writer for the binary event format.
pub struct EventWriter {
    inner: BufWriter<File>,
    path: std::path::PathBuf,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = BufWriter::new(file);
        inner.write_all(BINARY_MAGIC).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, events: &[Event]) -> Result<()> {
        let w = &mut self.inner;
        let res = (|| -> std::io::Result<()> {
            for e in events {
                w.write_f64::<LittleEndian>(e.t)?;
                w.write_u16::<LittleEndian>(e.u)?;
                w.write_u16::<LittleEndian>(e.v)?;
                w.write_i8(e.polarity.sign())?;
            }
            Ok(())
        })();
        res.map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_events_text(path: &Path, events: &[Event]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in events {
        writeln!(w, "{} {} {} {}", e.t, e.u, e.v, e.polarity.sign()).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
