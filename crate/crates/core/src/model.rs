//! Telemetry frames, trips and the shared integration conventions.
//!
//! Time is always seconds as `f64`, relative to the trip start. Absent
//! channels are `None`; no sentinel values are used anywhere.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle attitude in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orientation {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Orientation {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }
}

/// Acceleration in m/s²: forward, lateral (+right), vertical.
///
/// Any component may be missing. On the wire this is a three element array
/// whose absent components are `null`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[Option<f64>; 3]", into = "[Option<f64>; 3]")]
pub struct Accel {
    pub forward: Option<f64>,
    pub lateral: Option<f64>,
    pub vertical: Option<f64>,
}

impl Accel {
    pub const fn full(forward: f64, lateral: f64, vertical: f64) -> Self {
        Self {
            forward: Some(forward),
            lateral: Some(lateral),
            vertical: Some(vertical),
        }
    }

    pub fn as_array(&self) -> Option<[f64; 3]> {
        Some([self.forward?, self.lateral?, self.vertical?])
    }
}

impl From<[Option<f64>; 3]> for Accel {
    fn from([forward, lateral, vertical]: [Option<f64>; 3]) -> Self {
        Self {
            forward,
            lateral,
            vertical,
        }
    }
}

impl From<Accel> for [Option<f64>; 3] {
    fn from(a: Accel) -> Self {
        [a.forward, a.lateral, a.vertical]
    }
}

/// One timestamped sample of every vehicle channel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryFrame {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_wheel_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rear_wheel_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throttle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brake: Option<f64>,
    /// Degrees, positive to the right.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel: Option<Accel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_ground_speed: Option<f64>,
    /// Kilometers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mileage: Option<f64>,
    /// Meters to the nearest obstacle ahead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle_distance: Option<f64>,
    /// Fused speed in km/h.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    /// Timestamp of the video frame annotated onto this sample, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_t: Option<f64>,
}

impl TelemetryFrame {
    pub fn at(t: f64) -> Self {
        Self {
            t,
            ..Self::default()
        }
    }

    pub fn gps_fix(&self) -> Option<(f64, f64)> {
        Some((self.gps_lat?, self.gps_lon?))
    }

    pub fn accel_forward(&self) -> Option<f64> {
        self.accel.and_then(|a| a.forward)
    }

    pub fn accel_lateral(&self) -> Option<f64> {
        self.accel.and_then(|a| a.lateral)
    }

    /// Checks the per-frame invariants: finite time, fractions in `[0, 1]`
    /// and non-negative speeds.
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::Domain("frame time must be finite"));
        }
        for (v, what) in [
            (self.throttle, "throttle must lie in [0, 1]"),
            (self.brake, "brake must lie in [0, 1]"),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(what));
                }
            }
        }
        for v in [
            self.front_wheel_speed,
            self.rear_wheel_speed,
            self.fl,
            self.fr,
            self.rl,
            self.rr,
            self.gps_ground_speed,
            self.speed,
        ]
        .into_iter()
        .flatten()
        {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain("speeds must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Scalar channels addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    FrontWheelSpeed,
    RearWheelSpeed,
    Fl,
    Fr,
    Rl,
    Rr,
    Throttle,
    Brake,
    SteeringAngle,
    AccelForward,
    AccelLateral,
    AccelVertical,
    Yaw,
    Pitch,
    Roll,
    GpsLat,
    GpsLon,
    GpsGroundSpeed,
    Mileage,
    ObstacleDistance,
    Speed,
    VisualT,
}

impl Channel {
    pub const ALL: [Channel; 22] = [
        Channel::FrontWheelSpeed,
        Channel::RearWheelSpeed,
        Channel::Fl,
        Channel::Fr,
        Channel::Rl,
        Channel::Rr,
        Channel::Throttle,
        Channel::Brake,
        Channel::SteeringAngle,
        Channel::AccelForward,
        Channel::AccelLateral,
        Channel::AccelVertical,
        Channel::Yaw,
        Channel::Pitch,
        Channel::Roll,
        Channel::GpsLat,
        Channel::GpsLon,
        Channel::GpsGroundSpeed,
        Channel::Mileage,
        Channel::ObstacleDistance,
        Channel::Speed,
        Channel::VisualT,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            Channel::FrontWheelSpeed => "front_wheel_speed",
            Channel::RearWheelSpeed => "rear_wheel_speed",
            Channel::Fl => "fl",
            Channel::Fr => "fr",
            Channel::Rl => "rl",
            Channel::Rr => "rr",
            Channel::Throttle => "throttle",
            Channel::Brake => "brake",
            Channel::SteeringAngle => "steering_angle",
            Channel::AccelForward => "accel.forward",
            Channel::AccelLateral => "accel.lateral",
            Channel::AccelVertical => "accel.vertical",
            Channel::Yaw => "orientation.yaw",
            Channel::Pitch => "orientation.pitch",
            Channel::Roll => "orientation.roll",
            Channel::GpsLat => "gps_lat",
            Channel::GpsLon => "gps_lon",
            Channel::GpsGroundSpeed => "gps_ground_speed",
            Channel::Mileage => "mileage",
            Channel::ObstacleDistance => "obstacle_distance",
            Channel::Speed => "speed",
            Channel::VisualT => "visual_t",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn get(self, f: &TelemetryFrame) -> Option<f64> {
        match self {
            Channel::FrontWheelSpeed => f.front_wheel_speed,
            Channel::RearWheelSpeed => f.rear_wheel_speed,
            Channel::Fl => f.fl,
            Channel::Fr => f.fr,
            Channel::Rl => f.rl,
            Channel::Rr => f.rr,
            Channel::Throttle => f.throttle,
            Channel::Brake => f.brake,
            Channel::SteeringAngle => f.steering_angle,
            Channel::AccelForward => f.accel.and_then(|a| a.forward),
            Channel::AccelLateral => f.accel.and_then(|a| a.lateral),
            Channel::AccelVertical => f.accel.and_then(|a| a.vertical),
            Channel::Yaw => f.orientation.map(|o| o.yaw),
            Channel::Pitch => f.orientation.map(|o| o.pitch),
            Channel::Roll => f.orientation.map(|o| o.roll),
            Channel::GpsLat => f.gps_lat,
            Channel::GpsLon => f.gps_lon,
            Channel::GpsGroundSpeed => f.gps_ground_speed,
            Channel::Mileage => f.mileage,
            Channel::ObstacleDistance => f.obstacle_distance,
            Channel::Speed => f.speed,
            Channel::VisualT => f.visual_t,
        }
    }

    /// Writes a channel value. Orientation components can only be replaced
    /// on frames that already carry an orientation; returns `false` otherwise.
    pub fn set(self, f: &mut TelemetryFrame, v: f64) -> bool {
        fn accel(f: &mut TelemetryFrame) -> &mut Accel {
            f.accel.get_or_insert_with(Accel::default)
        }
        match self {
            Channel::FrontWheelSpeed => f.front_wheel_speed = Some(v),
            Channel::RearWheelSpeed => f.rear_wheel_speed = Some(v),
            Channel::Fl => f.fl = Some(v),
            Channel::Fr => f.fr = Some(v),
            Channel::Rl => f.rl = Some(v),
            Channel::Rr => f.rr = Some(v),
            Channel::Throttle => f.throttle = Some(v),
            Channel::Brake => f.brake = Some(v),
            Channel::SteeringAngle => f.steering_angle = Some(v),
            Channel::AccelForward => accel(f).forward = Some(v),
            Channel::AccelLateral => accel(f).lateral = Some(v),
            Channel::AccelVertical => accel(f).vertical = Some(v),
            Channel::Yaw | Channel::Pitch | Channel::Roll => {
                let Some(o) = f.orientation.as_mut() else {
                    return false;
                };
                match self {
                    Channel::Yaw => o.yaw = v,
                    Channel::Pitch => o.pitch = v,
                    _ => o.roll = v,
                }
            }
            Channel::GpsLat => f.gps_lat = Some(v),
            Channel::GpsLon => f.gps_lon = Some(v),
            Channel::GpsGroundSpeed => f.gps_ground_speed = Some(v),
            Channel::Mileage => f.mileage = Some(v),
            Channel::ObstacleDistance => f.obstacle_distance = Some(v),
            Channel::Speed => f.speed = Some(v),
            Channel::VisualT => f.visual_t = Some(v),
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripMetadata {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<String>,
    /// Raw JSON of the configuration the trip was recorded with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

/// An ordered, validated sequence of frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trip {
    frames: Vec<TelemetryFrame>,
    pub metadata: TripMetadata,
}

impl Trip {
    /// Builds a trip, rejecting invalid frames and non-increasing timestamps
    /// (duplicates included).
    pub fn new(frames: Vec<TelemetryFrame>) -> Result<Self> {
        check_frames(&frames)?;
        Ok(Self {
            frames,
            metadata: TripMetadata::default(),
        })
    }

    pub fn with_metadata(mut self, metadata: TripMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn frames(&self) -> &[TelemetryFrame] {
        &self.frames
    }

    /// Mutable access for passes that only fill channels. Timestamps must
    /// not be touched through this slice.
    pub fn frames_mut(&mut self) -> &mut [TelemetryFrame] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<TelemetryFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// `(t, value)` pairs of every frame carrying `channel`.
    pub fn series(&self, channel: Channel) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .filter_map(|f| channel.get(f).map(|v| (f.t, v)))
            .collect()
    }
}

fn check_frames(frames: &[TelemetryFrame]) -> Result<()> {
    for f in frames {
        f.validate()?;
    }
    check_increasing(frames.iter().map(|f| f.t))
}

pub(crate) fn check_increasing(times: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for (index, t) in times.into_iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::Domain("timestamps must be finite"));
        }
        if let Some(p) = prev {
            if !(t > p) {
                return Err(Error::Ordering {
                    index,
                    prev: p,
                    next: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Left Riemann sum `Σ f(x_i)·(x_{i+1} − x_i)` over consecutive pairs.
///
/// Empty and single point series integrate to zero.
pub fn integrate_left(series: &[(f64, f64)]) -> Result<f64> {
    check_increasing(series.iter().map(|p| p.0))?;
    Ok(series
        .windows(2)
        .map(|w| w[0].1 * (w[1].0 - w[0].0))
        .sum())
}

/// Forward difference quotient, stamped at the left point of each interval.
pub fn differentiate_forward(series: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if series.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: series.len(),
        });
    }
    check_increasing(series.iter().map(|p| p.0))?;
    Ok(series
        .windows(2)
        .map(|w| (w[0].0, (w[1].1 - w[0].1) / (w[1].0 - w[0].0)))
        .collect())
}
