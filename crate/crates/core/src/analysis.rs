//! Trip baking and lap splitting.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, path_length_m};
use crate::model::{Channel, TelemetryFrame, Trip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl ChannelStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut acc: Option<(f64, f64, f64, usize)> = None;
        for v in values {
            acc = Some(match acc {
                None => (v, v, v, 1),
                Some((lo, hi, sum, n)) => (lo.min(v), hi.max(v), sum + v, n + 1),
            });
        }
        acc.map(|(min, max, sum, count)| ChannelStats {
            min,
            max,
            // rounding can push the mean a hair outside [min, max]
            mean: (sum / count as f64).clamp(min, max),
            count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    pub channels: BTreeMap<String, ChannelStats>,
    pub duration: f64,
    /// Kilometers.
    pub mileage: f64,
    /// `(lat, lon)` of every frame with a fix, in order.
    pub map: Vec<(f64, f64)>,
}

/// Extrema, means, duration, mileage and the GPS polyline in one pass.
pub fn bake(trip: &Trip) -> Result<TripSummary> {
    let frames = trip.frames();
    if frames.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut acc: BTreeMap<Channel, (f64, f64, f64, usize)> = BTreeMap::new();
    let mut map = Vec::new();
    let mut mileage: Option<(f64, f64)> = None;
    for f in frames {
        for c in Channel::ALL {
            if let Some(v) = c.get(f) {
                acc.entry(c)
                    .and_modify(|(lo, hi, sum, n)| {
                        *lo = lo.min(v);
                        *hi = hi.max(v);
                        *sum += v;
                        *n += 1;
                    })
                    .or_insert((v, v, v, 1));
            }
        }
        if let Some(fix) = f.gps_fix() {
            map.push(fix);
        }
        if let Some(m) = f.mileage {
            mileage = Some(match mileage {
                None => (m, m),
                Some((first, _)) => (first, m),
            });
        }
    }
    let channels = acc
        .into_iter()
        .map(|(c, (min, max, sum, count))| {
            let stats = ChannelStats {
                min,
                max,
                mean: (sum / count as f64).clamp(min, max),
                count,
            };
            (c.name().to_string(), stats)
        })
        .collect();
    let mileage = match mileage {
        Some((first, last)) => last - first,
        None => path_length_m(&map) / 1000.0,
    };
    Ok(TripSummary {
        channels,
        duration: trip.duration(),
        mileage,
        map,
    })
}

/// Start/finish gate: a geodesic circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionVolume {
    /// `(lat, lon)`; `None` uses the first fix of the trip.
    #[serde(default)]
    pub center: Option<(f64, f64)>,
    /// Meters.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Seconds.
    #[serde(default = "default_min_lap")]
    pub min_lap_duration: f64,
}

fn default_radius() -> f64 {
    10.0
}

fn default_min_lap() -> f64 {
    10.0
}

impl Default for CollisionVolume {
    fn default() -> Self {
        Self {
            center: None,
            radius: default_radius(),
            min_lap_duration: default_min_lap(),
        }
    }
}

impl CollisionVolume {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Config("analysis.radius must be positive".to_string()));
        }
        if !(self.min_lap_duration > 0.0) || !self.min_lap_duration.is_finite() {
            return Err(Error::Config(
                "analysis.min_lap_duration must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Frame index ranges. `head`, `laps` and `tail` partition `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LapSplit {
    /// Frames before the first boundary.
    pub head: Range<usize>,
    pub laps: Vec<Range<usize>>,
    /// Frames from the last boundary on; an incomplete lap.
    pub tail: Range<usize>,
}

impl LapSplit {
    pub fn boundaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.laps
            .iter()
            .map(|r| r.start)
            .chain((!self.tail.is_empty() || !self.laps.is_empty()).then_some(self.tail.start))
    }
}

/// Splits at every entry into the volume (outside → inside edge) at least
/// `min_lap_duration` after the previous boundary. The first fix counts as
/// an entry when it lies inside.
pub fn split_laps(trip: &Trip, volume: &CollisionVolume) -> Result<LapSplit> {
    volume.validate()?;
    let frames = trip.frames();
    let Some(first_fix) = frames.iter().find_map(TelemetryFrame::gps_fix) else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let center = volume.center.unwrap_or(first_fix);
    let mut boundaries: Vec<usize> = Vec::new();
    let mut last_boundary_t = f64::NEG_INFINITY;
    let mut inside = false;
    for (i, f) in frames.iter().enumerate() {
        let Some(fix) = f.gps_fix() else { continue };
        let now_inside = haversine_m(center, fix) <= volume.radius;
        if now_inside && !inside && f.t - last_boundary_t >= volume.min_lap_duration {
            boundaries.push(i);
            last_boundary_t = f.t;
        }
        inside = now_inside;
    }
    let n = frames.len();
    Ok(match boundaries.split_last() {
        None => LapSplit {
            head: 0..n,
            laps: Vec::new(),
            tail: n..n,
        },
        Some((&last, _)) => LapSplit {
            head: 0..boundaries[0],
            laps: boundaries.windows(2).map(|w| w[0]..w[1]).collect(),
            tail: last..n,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapStats {
    pub lap: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub duration: f64,
    /// Kilometers over the fixes from this boundary to the next.
    pub distance: f64,
    pub speed: Option<ChannelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapReport {
    pub laps: Vec<LapStats>,
    /// Index into `laps` of the shortest lap.
    pub best: Option<usize>,
}

pub fn lap_stats(trip: &Trip, split: &LapSplit) -> LapReport {
    let frames = trip.frames();
    let laps: Vec<LapStats> = split
        .laps
        .iter()
        .enumerate()
        .map(|(lap, r)| {
            let closing = r.end.min(frames.len() - 1);
            let fixes: Vec<(f64, f64)> = frames[r.start..=closing]
                .iter()
                .filter_map(TelemetryFrame::gps_fix)
                .collect();
            LapStats {
                lap,
                start_frame: r.start,
                end_frame: r.end,
                duration: frames[closing].t - frames[r.start].t,
                distance: path_length_m(&fixes) / 1000.0,
                speed: ChannelStats::of(frames[r.clone()].iter().filter_map(|f| f.speed)),
            }
        })
        .collect();
    let best = laps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.duration.total_cmp(&b.1.duration))
        .map(|(i, _)| i);
    LapReport { laps, best }
}
