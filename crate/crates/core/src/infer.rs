//! Offline inference of missing channels.
//!
//! Each [`Inference`] streams the trip once (twice for integrals, which
//! first locate their anchor) and only fills channels that are absent.
//! Streaming state is a bounded cache of input samples; every inference
//! needs at most two.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::model::{Channel, TelemetryFrame, Trip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    SafeSpeed,
    SpeedByAcceleration,
    SpeedByMileage,
    SpeedByGpsGround,
    MileageByGpsPosition,
    SpeedByGpsPosition,
    AccelBySpeed,
    MileageBySpeed,
    /// Shifts `visual_t` by `−latency` seconds.
    RealignVisual { latency: f64 },
}

pub const SCALAR_DERIVED: &str = "scalar-derived";

impl Inference {
    pub const NAMES: [&'static str; 9] = [
        "safe_speed",
        "speed_by_acceleration",
        "speed_by_mileage",
        "speed_by_gps_ground",
        "mileage_by_gps_position",
        "speed_by_gps_position",
        "accel_by_speed",
        "mileage_by_speed",
        "realign_visual",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Inference::SafeSpeed => "safe_speed",
            Inference::SpeedByAcceleration => "speed_by_acceleration",
            Inference::SpeedByMileage => "speed_by_mileage",
            Inference::SpeedByGpsGround => "speed_by_gps_ground",
            Inference::MileageByGpsPosition => "mileage_by_gps_position",
            Inference::SpeedByGpsPosition => "speed_by_gps_position",
            Inference::AccelBySpeed => "accel_by_speed",
            Inference::MileageBySpeed => "mileage_by_speed",
            Inference::RealignVisual { .. } => "realign_visual",
        }
    }

    /// Parses a name; `realign_visual=<seconds>` carries the latency.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once('=') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let plain = |i: Inference| match arg {
            None => Ok(i),
            Some(_) => Err(Error::Config(format!("{name} takes no argument"))),
        };
        match name {
            "safe_speed" => plain(Inference::SafeSpeed),
            "speed_by_acceleration" => plain(Inference::SpeedByAcceleration),
            "speed_by_mileage" => plain(Inference::SpeedByMileage),
            "speed_by_gps_ground" => plain(Inference::SpeedByGpsGround),
            "mileage_by_gps_position" => plain(Inference::MileageByGpsPosition),
            "speed_by_gps_position" => plain(Inference::SpeedByGpsPosition),
            "accel_by_speed" => plain(Inference::AccelBySpeed),
            "mileage_by_speed" => plain(Inference::MileageBySpeed),
            "realign_visual" => {
                let latency = match arg {
                    Some(a) => a
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad latency {a:?}")))?,
                    None => return Err(Error::Config("realign_visual needs =<latency>".to_string())),
                };
                Ok(Inference::RealignVisual { latency })
            }
            _ => Err(Error::Config(format!("unknown inference {name:?}"))),
        }
    }

    /// Input samples an inference holds at once.
    pub fn window(&self) -> usize {
        match self {
            Inference::SafeSpeed | Inference::SpeedByGpsGround | Inference::RealignVisual { .. } => 1,
            _ => 2,
        }
    }

    pub fn output(&self) -> Channel {
        match self {
            Inference::SafeSpeed
            | Inference::SpeedByAcceleration
            | Inference::SpeedByMileage
            | Inference::SpeedByGpsGround
            | Inference::SpeedByGpsPosition => Channel::Speed,
            Inference::MileageByGpsPosition | Inference::MileageBySpeed => Channel::Mileage,
            Inference::AccelBySpeed => Channel::AccelForward,
            Inference::RealignVisual { .. } => Channel::VisualT,
        }
    }

    pub fn inputs(&self) -> &'static [Channel] {
        match self {
            Inference::SafeSpeed => &[Channel::FrontWheelSpeed, Channel::RearWheelSpeed],
            Inference::SpeedByAcceleration => &[Channel::AccelForward],
            Inference::SpeedByMileage => &[Channel::Mileage],
            Inference::SpeedByGpsGround => &[Channel::GpsGroundSpeed],
            Inference::MileageByGpsPosition | Inference::SpeedByGpsPosition => {
                &[Channel::GpsLat, Channel::GpsLon]
            }
            Inference::AccelBySpeed | Inference::MileageBySpeed => &[Channel::Speed],
            Inference::RealignVisual { .. } => &[Channel::VisualT],
        }
    }

    pub fn caveat(&self) -> Option<&'static str> {
        match self {
            Inference::AccelBySpeed => Some(SCALAR_DERIVED),
            _ => None,
        }
    }

    /// Runs this inference in place and returns how many frames it filled.
    ///
    /// Integrating and differentiating inferences fail with
    /// [`Error::InsufficientData`] when fewer than two input samples exist.
    pub fn apply(&self, frames: &mut [TelemetryFrame], cache_limit: usize) -> Result<usize> {
        if cache_limit < self.window() {
            return Err(Error::Config(format!(
                "cache limit {cache_limit} below the {} frame window of {}",
                self.window(),
                self.name()
            )));
        }
        match *self {
            Inference::SafeSpeed => Ok(map_pass(frames, Channel::Speed, |f| {
                Some(safe_speed(f.front_wheel_speed?, f.rear_wheel_speed?))
            })),
            Inference::SpeedByGpsGround => {
                Ok(map_pass(frames, Channel::Speed, |f| f.gps_ground_speed))
            }
            Inference::SpeedByAcceleration => integral_pass(
                frames,
                cache_limit,
                Channel::Speed,
                |f| f.accel_forward(),
                3.6,
            ),
            Inference::MileageBySpeed => integral_pass(
                frames,
                cache_limit,
                Channel::Mileage,
                |f| f.speed,
                1.0 / 3600.0,
            ),
            Inference::SpeedByMileage => {
                derivative_pass(frames, cache_limit, Channel::Speed, |f| f.mileage, 3600.0)
            }
            Inference::AccelBySpeed => derivative_pass(
                frames,
                cache_limit,
                Channel::AccelForward,
                |f| f.speed,
                1.0 / 3.6,
            ),
            Inference::MileageByGpsPosition => gps_mileage_pass(frames, cache_limit),
            Inference::SpeedByGpsPosition => {
                let mut scratch = frames.to_vec();
                gps_mileage_pass(&mut scratch, cache_limit)?;
                derivative_pass(&mut scratch, cache_limit, Channel::Speed, |f| f.mileage, 3600.0)?;
                Ok(map_pass_indexed(frames, Channel::Speed, |i, _| scratch[i].speed))
            }
            Inference::RealignVisual { latency } => realign_visual(frames, latency),
        }
    }
}

impl fmt::Display for Inference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inference::RealignVisual { latency } => write!(f, "realign_visual={latency}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Conservative speed from two wheel speeds.
pub fn safe_speed(front: f64, rear: f64) -> f64 {
    front.min(rear)
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    index: usize,
    t: f64,
    value: f64,
}

struct SampleCache {
    samples: VecDeque<Sample>,
    limit: usize,
}

impl SampleCache {
    fn new(limit: usize) -> Self {
        Self {
            samples: VecDeque::new(),
            limit,
        }
    }

    fn push(&mut self, s: Sample) {
        if self.samples.len() == self.limit {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    fn last(&self) -> Option<Sample> {
        self.samples.back().copied()
    }
}

// Speed is a magnitude, so derived negative values are floored at zero.
fn fill(frame: &mut TelemetryFrame, channel: Channel, value: f64) -> bool {
    let value = if channel == Channel::Speed { value.max(0.0) } else { value };
    channel.get(frame).is_none() && channel.set(frame, value)
}

fn map_pass(
    frames: &mut [TelemetryFrame],
    out: Channel,
    f: impl Fn(&TelemetryFrame) -> Option<f64>,
) -> usize {
    map_pass_indexed(frames, out, |_, frame| f(frame))
}

fn map_pass_indexed(
    frames: &mut [TelemetryFrame],
    out: Channel,
    f: impl Fn(usize, &TelemetryFrame) -> Option<f64>,
) -> usize {
    let mut n = 0;
    for (i, frame) in frames.iter_mut().enumerate() {
        if out.get(frame).is_none() {
            if let Some(v) = f(i, frame) {
                n += usize::from(fill(frame, out, v));
            }
        }
    }
    n
}

/// Forward difference at each input sample, scaled; the last sample repeats
/// the final slope.
fn derivative_pass(
    frames: &mut [TelemetryFrame],
    cache_limit: usize,
    out: Channel,
    input: impl Fn(&TelemetryFrame) -> Option<f64>,
    scale: f64,
) -> Result<usize> {
    let mut cache = SampleCache::new(cache_limit);
    let mut seen = 0;
    let mut last_slope = 0.0;
    let mut n = 0;
    for i in 0..frames.len() {
        let Some(value) = input(&frames[i]) else { continue };
        let t = frames[i].t;
        if let Some(prev) = cache.last() {
            last_slope = (value - prev.value) / (t - prev.t) * scale;
            n += usize::from(fill(&mut frames[prev.index], out, last_slope));
        }
        cache.push(Sample { index: i, t, value });
        seen += 1;
    }
    if seen < 2 {
        return Err(Error::InsufficientData { needed: 2, got: seen });
    }
    let last = cache.last().expect("two samples seen");
    n += usize::from(fill(&mut frames[last.index], out, last_slope));
    Ok(n)
}

/// Running left Riemann sum with zero-order hold between input samples.
struct Integrator {
    held: Option<f64>,
    prev_t: f64,
    sum: f64,
}

impl Integrator {
    fn new() -> Self {
        Self {
            held: None,
            prev_t: 0.0,
            sum: 0.0,
        }
    }

    /// Advances to `t` and then latches `sample` if present.
    fn step(&mut self, t: f64, sample: Option<f64>) -> f64 {
        if let Some(a) = self.held {
            self.sum += a * (t - self.prev_t);
        }
        self.prev_t = t;
        if sample.is_some() {
            self.held = sample;
        }
        self.sum
    }
}

struct Span {
    first: usize,
    last: usize,
    count: usize,
}

fn sample_span(frames: &[TelemetryFrame], present: impl Fn(&TelemetryFrame) -> bool) -> Span {
    let mut span = Span {
        first: usize::MAX,
        last: 0,
        count: 0,
    };
    for (i, f) in frames.iter().enumerate() {
        if present(f) {
            span.first = span.first.min(i);
            span.last = i;
            span.count += 1;
        }
    }
    span
}

/// Anchor value and the accumulated quantity at the anchor frame, clamped to
/// the sampled span.
fn anchor(
    frames: &[TelemetryFrame],
    out: Channel,
    span: &Span,
    accumulated: &[f64],
) -> (f64, f64) {
    match frames.iter().position(|f| out.get(f).is_some()) {
        Some(i) => {
            let v0 = out.get(&frames[i]).expect("present");
            let at = i.clamp(span.first, span.last) - span.first;
            let base = if i < span.first { 0.0 } else { accumulated[at] };
            (v0, base)
        }
        None => (0.0, 0.0),
    }
}

fn integral_pass(
    frames: &mut [TelemetryFrame],
    cache_limit: usize,
    out: Channel,
    input: impl Fn(&TelemetryFrame) -> Option<f64>,
    scale: f64,
) -> Result<usize> {
    let span = sample_span(frames, |f| input(f).is_some());
    if span.count < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: span.count,
        });
    }
    let mut cache = SampleCache::new(cache_limit);
    let mut integ = Integrator::new();
    let mut accumulated = Vec::with_capacity(span.last - span.first + 1);
    for (i, frame) in frames.iter().enumerate().take(span.last + 1).skip(span.first) {
        let sample = input(frame);
        accumulated.push(integ.step(frame.t, sample));
        if let Some(value) = sample {
            cache.push(Sample {
                index: i,
                t: frame.t,
                value,
            });
        }
    }
    let (v0, base) = anchor(frames, out, &span, &accumulated);
    let mut n = 0;
    for (k, i) in (span.first..=span.last).enumerate() {
        n += usize::from(fill(&mut frames[i], out, v0 + scale * (accumulated[k] - base)));
    }
    Ok(n)
}

fn gps_mileage_pass(frames: &mut [TelemetryFrame], cache_limit: usize) -> Result<usize> {
    let span = sample_span(frames, |f| f.gps_fix().is_some());
    if span.count < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: span.count,
        });
    }
    let mut cache: VecDeque<(f64, f64)> = VecDeque::new();
    let mut km = 0.0;
    let mut accumulated = Vec::with_capacity(span.last - span.first + 1);
    for f in &frames[span.first..=span.last] {
        if let Some(fix) = f.gps_fix() {
            if let Some(&prev) = cache.back() {
                km += haversine_m(prev, fix) / 1000.0;
            }
            if cache.len() == cache_limit {
                cache.pop_front();
            }
            cache.push_back(fix);
        }
        accumulated.push(km);
    }
    let (s0, base) = anchor(frames, Channel::Mileage, &span, &accumulated);
    let mut n = 0;
    for (k, i) in (span.first..=span.last).enumerate() {
        if frames[i].gps_fix().is_some() {
            n += usize::from(fill(&mut frames[i], Channel::Mileage, s0 + accumulated[k] - base));
        }
    }
    Ok(n)
}

/// Shifts every `visual_t` by `−latency` and checks they stay finite and
/// strictly increasing.
pub fn realign_visual(frames: &mut [TelemetryFrame], latency: f64) -> Result<usize> {
    if !latency.is_finite() {
        return Err(Error::Domain("latency must be finite"));
    }
    let shifted: Vec<(usize, f64)> = frames
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.visual_t.map(|v| (i, v - latency)))
        .collect();
    crate::model::check_increasing(shifted.iter().map(|p| p.1))?;
    for &(i, v) in &shifted {
        frames[i].visual_t = Some(v);
    }
    Ok(shifted.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub inference: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

/// Channel name → inferences that wrote it, in application order.
pub type Provenance = BTreeMap<String, Vec<ProvenanceEntry>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub trip: Trip,
    pub provenance: Provenance,
    /// Inferences that found too little input, with the reason.
    pub skipped: Vec<(String, Error)>,
}

/// Applies `inferences` in order. Inferences without enough input are
/// skipped and reported; other errors abort.
pub fn run_pipeline(trip: Trip, inferences: &[Inference], cache_limit: usize) -> Result<Inferred> {
    if let Some(worst) = inferences.iter().max_by_key(|i| i.window()) {
        if cache_limit < worst.window() {
            return Err(Error::Config(format!(
                "cache limit {cache_limit} below the {} frame window of {}",
                worst.window(),
                worst.name()
            )));
        }
    }
    let metadata = trip.metadata.clone();
    let mut frames = trip.into_frames();
    let mut provenance = Provenance::new();
    let mut skipped = Vec::new();
    for inf in inferences {
        match inf.apply(&mut frames, cache_limit) {
            Ok(0) => {}
            Ok(n) => provenance
                .entry(inf.output().name().to_string())
                .or_default()
                .push(ProvenanceEntry {
                    inference: inf.to_string(),
                    frames: n,
                    caveat: inf.caveat().map(ToString::to_string),
                }),
            Err(e @ Error::InsufficientData { .. }) => skipped.push((inf.to_string(), e)),
            Err(e) => return Err(e),
        }
    }
    Ok(Inferred {
        trip: Trip::new(frames)?.with_metadata(metadata),
        provenance,
        skipped,
    })
}
