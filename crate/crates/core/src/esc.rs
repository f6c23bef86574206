//! Electronic stability interventions: traction control (DTCS), anti-lock
//! braking (ABS), emergency braking (EBI) and automatic trail braking (ATBS).
//!
//! Every system maps one frame to an [`Intervention`] made of multiplicative
//! throttle/brake scales plus an additive brake request. Calibrations are
//! ordered: `standard` intervenes first, then `aggressive`, then `sport`;
//! `off` never intervenes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TelemetryFrame;

pub const GRAVITY: f64 = 9.81;
/// Floor for reference speeds in km/h when dividing.
pub const SPEED_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Drivetrain {
    RearDrive,
    AllWheelDrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Height of the center of mass, m.
    pub cg_height: f64,
    /// Track width, m.
    pub width: f64,
    /// Length, m.
    pub length: f64,
    pub drivetrain: Drivetrain,
    /// Braking deceleration used for stopping distances, m/s².
    pub max_decel: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 300.0,
            cg_height: 0.5,
            width: 1.5,
            length: 2.5,
            drivetrain: Drivetrain::RearDrive,
            max_decel: 8.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.mass, "mass"),
            (self.cg_height, "cg_height"),
            (self.width, "width"),
            (self.length, "length"),
            (self.max_decel, "max_decel"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("vehicle.{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    Standard,
    Aggressive,
    Sport,
    Off,
}

impl Calibration {
    pub const ALL: [Calibration; 4] = [
        Calibration::Standard,
        Calibration::Aggressive,
        Calibration::Sport,
        Calibration::Off,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EscSystem {
    Dtcs,
    Abs,
    Ebi,
    Atbs,
}

impl EscSystem {
    /// Pipeline order.
    pub const ALL: [EscSystem; 4] = [
        EscSystem::Dtcs,
        EscSystem::Abs,
        EscSystem::Ebi,
        EscSystem::Atbs,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            EscSystem::Dtcs => "dtcs",
            EscSystem::Abs => "abs",
            EscSystem::Ebi => "ebi",
            EscSystem::Atbs => "atbs",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for EscSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub throttle_scale: f64,
    pub brake_scale: f64,
    pub brake_add: f64,
    pub source: EscSystem,
    pub reason: String,
}

impl Intervention {
    pub fn none(source: EscSystem) -> Self {
        Self {
            throttle_scale: 1.0,
            brake_scale: 1.0,
            brake_add: 0.0,
            source,
            reason: String::new(),
        }
    }

    pub fn is_noop(&self) -> bool {
        self.throttle_scale == 1.0 && self.brake_scale == 1.0 && self.brake_add == 0.0
    }
}

// ---- calibration tables ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtcsThresholds {
    /// Slip ratio above which throttle is cut.
    pub slip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsThresholds {
    /// Lock ratio above which brake force is reduced.
    pub lock: f64,
    /// Reference speed (km/h) below which ABS stays inactive.
    pub v_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EbiThresholds {
    /// Brake when the obstacle is closer than `margin × stopping distance`.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtbsThresholds {
    /// Degrees of steering below which ATBS stays inactive.
    pub steer_min: f64,
    /// Front-axle load share bounds.
    pub f_low: f64,
    pub f_high: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelTable<T> {
    pub standard: T,
    pub aggressive: T,
    pub sport: T,
}

impl<T: Copy> LevelTable<T> {
    pub fn get(&self, cal: Calibration) -> Option<T> {
        match cal {
            Calibration::Standard => Some(self.standard),
            Calibration::Aggressive => Some(self.aggressive),
            Calibration::Sport => Some(self.sport),
            Calibration::Off => None,
        }
    }

    fn ordered<K: PartialOrd>(&self, key: impl Fn(&T) -> K, ascending: bool) -> bool {
        let (a, b, c) = (key(&self.standard), key(&self.aggressive), key(&self.sport));
        if ascending {
            a <= b && b <= c
        } else {
            a >= b && b >= c
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscTables {
    pub dtcs: LevelTable<DtcsThresholds>,
    pub abs: LevelTable<AbsThresholds>,
    pub ebi: LevelTable<EbiThresholds>,
    pub atbs: LevelTable<AtbsThresholds>,
}

impl Default for EscTables {
    fn default() -> Self {
        let atbs = |f_low, f_high| AtbsThresholds {
            steer_min: 10.0,
            f_low,
            f_high,
            gain: 5.0,
        };
        let abs = |lock| AbsThresholds { lock, v_min: 5.0 };
        Self {
            dtcs: LevelTable {
                standard: DtcsThresholds { slip: 0.10 },
                aggressive: DtcsThresholds { slip: 0.15 },
                sport: DtcsThresholds { slip: 0.20 },
            },
            abs: LevelTable {
                standard: abs(0.30),
                aggressive: abs(0.45),
                sport: abs(0.60),
            },
            ebi: LevelTable {
                standard: EbiThresholds { margin: 1.3 },
                aggressive: EbiThresholds { margin: 1.15 },
                sport: EbiThresholds { margin: 1.05 },
            },
            atbs: LevelTable {
                standard: atbs(0.48, 0.70),
                aggressive: atbs(0.44, 0.75),
                sport: atbs(0.40, 0.80),
            },
        }
    }
}

impl EscTables {
    /// Checks ranges and that each calibration intervenes no earlier than the
    /// one before it.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("esc.{what}")));
        let levels = |f: &dyn Fn(Calibration) -> bool| {
            [Calibration::Standard, Calibration::Aggressive, Calibration::Sport]
                .into_iter()
                .all(f)
        };
        if !levels(&|c| self.dtcs.get(c).is_some_and(|t| t.slip > 0.0)) {
            return bad("dtcs.slip must be positive");
        }
        if !levels(&|c| {
            self.abs
                .get(c)
                .is_some_and(|t| t.lock > 0.0 && t.lock < 1.0 && t.v_min >= 0.0)
        }) {
            return bad("abs.lock must lie in (0, 1) and v_min must be non-negative");
        }
        if !levels(&|c| self.ebi.get(c).is_some_and(|t| t.margin > 0.0)) {
            return bad("ebi.margin must be positive");
        }
        if !levels(&|c| {
            self.atbs.get(c).is_some_and(|t| {
                t.steer_min >= 0.0 && t.f_low < t.f_high && t.gain > 0.0
            })
        }) {
            return bad("atbs needs steer_min >= 0, f_low < f_high and gain > 0");
        }
        if !self.dtcs.ordered(|t| t.slip, true)
            || !self.abs.ordered(|t| t.lock, true)
            || !self.abs.ordered(|t| t.v_min, true)
            || !self.ebi.ordered(|t| t.margin, false)
            || !self.atbs.ordered(|t| t.steer_min, true)
            || !self.atbs.ordered(|t| t.f_low, false)
            || !self.atbs.ordered(|t| t.f_high, true)
        {
            return bad("thresholds must be ordered standard → aggressive → sport");
        }
        Ok(())
    }
}

// ---- channel helpers ----

fn front_speed(f: &TelemetryFrame) -> Option<f64> {
    f.front_wheel_speed.or(match (f.fl, f.fr) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

fn front_reference(f: &TelemetryFrame) -> Option<f64> {
    f.front_wheel_speed.or(match (f.fl, f.fr) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    })
}

fn rear_speed(f: &TelemetryFrame) -> Option<f64> {
    f.rear_wheel_speed.or(match (f.rl, f.rr) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    })
}

fn require(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or(Error::MissingChannel(name))
}

// ---- systems ----

/// Traction control: cuts throttle when the powered wheels outrun the
/// reference speed.
pub fn dtcs(
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
) -> Result<Intervention> {
    let (powered, reference) = match params.drivetrain {
        Drivetrain::RearDrive => (
            require(rear_speed(frame), "rear_wheel_speed")?,
            require(front_reference(frame), "front_wheel_speed")?,
        ),
        Drivetrain::AllWheelDrive => {
            let fastest = match (front_speed(frame), rear_speed(frame)) {
                (Some(a), Some(b)) => a.max(b),
                (a, b) => require(a.or(b), "wheel speed")?,
            };
            (fastest, require(frame.gps_ground_speed, "gps_ground_speed")?)
        }
    };
    let Some(th) = tables.dtcs.get(cal) else {
        return Ok(Intervention::none(EscSystem::Dtcs));
    };
    let slip = (powered - reference) / reference.max(SPEED_EPSILON);
    if slip > th.slip {
        Ok(Intervention {
            throttle_scale: (1.0 - (slip - th.slip) / th.slip).clamp(0.0, 1.0),
            reason: format!("slip {slip:.3} > {:.3}", th.slip),
            ..Intervention::none(EscSystem::Dtcs)
        })
    } else {
        Ok(Intervention::none(EscSystem::Dtcs))
    }
}

/// Anti-lock braking: releases brake force when the front wheels lock.
pub fn abs_system(
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
) -> Result<Intervention> {
    let brake = require(frame.brake, "brake")?;
    let front = require(front_speed(frame), "front_wheel_speed")?;
    let rear = match params.drivetrain {
        Drivetrain::RearDrive => rear_speed(frame),
        Drivetrain::AllWheelDrive => None,
    };
    let reference = require(
        frame.speed.or(frame.gps_ground_speed).or(rear),
        "speed",
    )?;
    let Some(th) = tables.abs.get(cal) else {
        return Ok(Intervention::none(EscSystem::Abs));
    };
    if !(brake > 0.0) {
        return Ok(Intervention::none(EscSystem::Abs));
    }
    let lock = 1.0 - front / reference.max(SPEED_EPSILON);
    if lock > th.lock && reference > th.v_min {
        Ok(Intervention {
            brake_scale: (1.0 - (lock - th.lock) / (1.0 - th.lock)).clamp(0.0, 1.0),
            reason: format!("lock {lock:.3} > {:.3}", th.lock),
            ..Intervention::none(EscSystem::Abs)
        })
    } else {
        Ok(Intervention::none(EscSystem::Abs))
    }
}

/// Stopping distance in meters from km/h.
pub fn stopping_distance(speed_kmh: f64, max_decel: f64) -> f64 {
    let v = speed_kmh / 3.6;
    v * v / (2.0 * max_decel)
}

/// Emergency braking: full brake once the obstacle is inside the scaled
/// stopping distance.
pub fn ebi(
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
) -> Result<Intervention> {
    let distance = require(frame.obstacle_distance, "obstacle_distance")?;
    let speed = require(frame.speed.or(frame.gps_ground_speed), "speed")?;
    let Some(th) = tables.ebi.get(cal) else {
        return Ok(Intervention::none(EscSystem::Ebi));
    };
    let d_stop = stopping_distance(speed, params.max_decel);
    if d_stop > 0.0 && distance <= th.margin * d_stop {
        Ok(Intervention {
            brake_add: 1.0,
            reason: format!("obstacle {distance:.1} m within {:.1} m", th.margin * d_stop),
            ..Intervention::none(EscSystem::Ebi)
        })
    } else {
        Ok(Intervention::none(EscSystem::Ebi))
    }
}

/// Per-wheel vertical load in newtons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelLoads {
    pub front_left: f64,
    pub front_right: f64,
    pub rear_left: f64,
    pub rear_right: f64,
}

impl WheelLoads {
    pub fn total(&self) -> f64 {
        self.front_left + self.front_right + self.rear_left + self.rear_right
    }

    pub fn front(&self) -> f64 {
        self.front_left + self.front_right
    }
}

/// Four-wheel load model. Forward acceleration transfers load over the track
/// width `w` and lateral acceleration over the length `L`:
///
/// `mg/4 ∓ m·h·a_forward/(2w) ± m·h·a_lateral/(2L)`
/// (front −, rear +; left +, right −).
pub fn cfc(params: &VehicleParams, a_forward: f64, a_lateral: f64) -> WheelLoads {
    let m = params.mass;
    let h = params.cg_height;
    let base = m * GRAVITY / 4.0;
    let fwd = m * h * a_forward / (2.0 * params.width);
    let lat = m * h * a_lateral / (2.0 * params.length);
    WheelLoads {
        front_left: base - fwd + lat,
        front_right: base - fwd - lat,
        rear_left: base + fwd + lat,
        rear_right: base + fwd - lat,
    }
}

/// Trail braking: while steering, adds brake to load an unloaded front axle
/// and eases brake when the front is overloaded.
pub fn atbs(
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
) -> Result<Intervention> {
    let steering = require(frame.steering_angle, "steering_angle")?;
    let a_forward = require(frame.accel_forward(), "accel.forward")?;
    let a_lateral = require(frame.accel_lateral(), "accel.lateral")?;
    let brake = require(frame.brake, "brake")?;
    let Some(th) = tables.atbs.get(cal) else {
        return Ok(Intervention::none(EscSystem::Atbs));
    };
    if !(steering.abs() > th.steer_min) {
        return Ok(Intervention::none(EscSystem::Atbs));
    }
    let loads = cfc(params, a_forward, a_lateral);
    let share = loads.front() / (params.mass * GRAVITY);
    if share < th.f_low {
        Ok(Intervention {
            brake_add: (th.gain * (th.f_low - share)).clamp(0.0, 1.0),
            reason: format!("front share {share:.3} < {:.3}", th.f_low),
            ..Intervention::none(EscSystem::Atbs)
        })
    } else if share > th.f_high && brake > 0.0 {
        Ok(Intervention {
            brake_scale: (1.0 - th.gain * (share - th.f_high)).clamp(0.0, 1.0),
            reason: format!("front share {share:.3} > {:.3}", th.f_high),
            ..Intervention::none(EscSystem::Atbs)
        })
    } else {
        Ok(Intervention::none(EscSystem::Atbs))
    }
}

pub fn evaluate(
    system: EscSystem,
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
) -> Result<Intervention> {
    match system {
        EscSystem::Dtcs => dtcs(params, tables, cal, frame),
        EscSystem::Abs => abs_system(params, tables, cal, frame),
        EscSystem::Ebi => ebi(params, tables, cal, frame),
        EscSystem::Atbs => atbs(params, tables, cal, frame),
    }
}

/// Result of running several systems on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub throttle_scale: f64,
    pub brake_scale: f64,
    pub brake_add: f64,
    /// Interventions that were not no-ops, in pipeline order.
    pub active: Vec<Intervention>,
    /// Systems that could not run on this frame.
    pub skipped: Vec<(EscSystem, Error)>,
}

impl Combined {
    pub fn is_noop(&self) -> bool {
        self.throttle_scale == 1.0 && self.brake_scale == 1.0 && self.brake_add == 0.0
    }

    /// Applied `(throttle, brake)` given the driver's inputs.
    pub fn apply(&self, throttle: f64, brake: f64) -> (f64, f64) {
        (
            (throttle * self.throttle_scale).clamp(0.0, 1.0),
            (brake * self.brake_scale).max(self.brake_add).clamp(0.0, 1.0),
        )
    }
}

/// Runs `enabled` systems in DTCS, ABS, EBI, ATBS order. Scales multiply and
/// the additive brake request takes the maximum.
pub fn pipeline(
    params: &VehicleParams,
    tables: &EscTables,
    cal: Calibration,
    frame: &TelemetryFrame,
    enabled: &[EscSystem],
) -> Combined {
    let mut out = Combined {
        throttle_scale: 1.0,
        brake_scale: 1.0,
        brake_add: 0.0,
        active: Vec::new(),
        skipped: Vec::new(),
    };
    for system in EscSystem::ALL.into_iter().filter(|s| enabled.contains(s)) {
        match evaluate(system, params, tables, cal, frame) {
            Ok(i) => {
                if !i.is_noop() {
                    out.throttle_scale *= i.throttle_scale;
                    out.brake_scale *= i.brake_scale;
                    out.brake_add = out.brake_add.max(i.brake_add);
                    out.active.push(i);
                }
            }
            Err(e) => out.skipped.push((system, e)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame() -> TelemetryFrame {
        TelemetryFrame::at(0.0)
    }

    fn run(system: EscSystem, cal: Calibration, f: &TelemetryFrame) -> Result<Intervention> {
        evaluate(system, &VehicleParams::default(), &EscTables::default(), cal, f)
    }

    #[test]
    fn defaults_are_valid() {
        EscTables::default().validate().unwrap();
        VehicleParams::default().validate().unwrap();
        let mut t = EscTables::default();
        t.dtcs.sport.slip = 0.05;
        assert!(t.validate().is_err());
    }

    #[test]
    fn dtcs_full_cut_at_double_slip() {
        let mut f = frame();
        f.rear_wheel_speed = Some(60.0);
        f.front_wheel_speed = Some(50.0);
        let i = run(EscSystem::Dtcs, Calibration::Standard, &f).unwrap();
        assert!(i.throttle_scale.abs() < 1e-12);
        assert!(run(EscSystem::Dtcs, Calibration::Off, &f).unwrap().is_noop());
        f.rear_wheel_speed = Some(50.0);
        assert!(run(EscSystem::Dtcs, Calibration::Standard, &f).unwrap().is_noop());
        f.front_wheel_speed = None;
        assert!(matches!(
            run(EscSystem::Dtcs, Calibration::Standard, &f),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn dtcs_awd_uses_gps() {
        let p = VehicleParams {
            drivetrain: Drivetrain::AllWheelDrive,
            ..VehicleParams::default()
        };
        let mut f = frame();
        f.front_wheel_speed = Some(55.0);
        f.rear_wheel_speed = Some(56.0);
        assert!(dtcs(&p, &EscTables::default(), Calibration::Standard, &f).is_err());
        f.gps_ground_speed = Some(50.0);
        let i = dtcs(&p, &EscTables::default(), Calibration::Standard, &f).unwrap();
        // slip 0.12 against 0.10
        assert!((i.throttle_scale - 0.8).abs() < 1e-9);
    }

    #[test]
    fn abs_releases_locked_front() {
        let mut f = frame();
        f.front_wheel_speed = Some(2.0);
        f.speed = Some(50.0);
        f.brake = Some(1.0);
        let i = run(EscSystem::Abs, Calibration::Standard, &f).unwrap();
        // lock = 0.96
        assert!((i.brake_scale - (1.0 - (0.96 - 0.30) / 0.70)).abs() < 1e-9);
        assert!(!i.is_noop());
        f.brake = Some(0.0);
        assert!(run(EscSystem::Abs, Calibration::Standard, &f).unwrap().is_noop());
        f.brake = Some(1.0);
        f.front_wheel_speed = Some(50.0);
        assert!(run(EscSystem::Abs, Calibration::Standard, &f).unwrap().is_noop());
    }

    #[test]
    fn ebi_stopping_distance() {
        assert!((stopping_distance(72.0, 8.0) - 25.0).abs() < 1e-12);
        let mut f = frame();
        f.speed = Some(72.0);
        f.obstacle_distance = Some(20.0);
        let i = run(EscSystem::Ebi, Calibration::Standard, &f).unwrap();
        assert_eq!(i.brake_add, 1.0);
        f.obstacle_distance = Some(1000.0);
        assert!(run(EscSystem::Ebi, Calibration::Standard, &f).unwrap().is_noop());
        f.speed = Some(0.0);
        f.obstacle_distance = Some(0.0);
        assert!(run(EscSystem::Ebi, Calibration::Standard, &f).unwrap().is_noop());
    }

    #[test]
    fn cfc_examples() {
        let p = VehicleParams::default();
        let l = cfc(&p, 0.0, 0.0);
        for v in [l.front_left, l.front_right, l.rear_left, l.rear_right] {
            assert_eq!(v, 300.0 * 9.81 / 4.0);
        }
        let l = cfc(&p, -5.0, 0.0);
        assert!((l.front_left - 985.75).abs() < 1e-9);
        assert!((l.front_right - 985.75).abs() < 1e-9);
        assert!((l.rear_left - 485.75).abs() < 1e-9);
        assert!((l.rear_right - 485.75).abs() < 1e-9);
        assert!((l.total() - 2943.0).abs() < 1e-9);
    }

    #[test]
    fn atbs_loads_unloaded_front() {
        let mut f = frame();
        f.steering_angle = Some(0.0);
        f.accel = Some(crate::model::Accel::full(0.0, 0.0, 0.0));
        f.brake = Some(0.0);
        assert!(run(EscSystem::Atbs, Calibration::Standard, &f).unwrap().is_noop());
        f.steering_angle = Some(30.0);
        f.accel = Some(crate::model::Accel::full(4.0, 0.0, 0.0));
        let i = run(EscSystem::Atbs, Calibration::Standard, &f).unwrap();
        assert!(i.brake_add > 0.0);
        assert!(run(EscSystem::Atbs, Calibration::Off, &f).unwrap().is_noop());
    }

    #[test]
    fn atbs_eases_overloaded_front() {
        let mut f = frame();
        f.steering_angle = Some(-25.0);
        // share = 0.5 + h·a/(w·g) > 0.70 needs a > 5.886
        f.accel = Some(crate::model::Accel::full(-8.0, 1.0, 0.0));
        f.brake = Some(0.6);
        let i = run(EscSystem::Atbs, Calibration::Standard, &f).unwrap();
        assert!(i.brake_scale < 1.0);
        assert_eq!(i.brake_add, 0.0);
    }

    #[test]
    fn pipeline_composition() {
        let p = VehicleParams::default();
        let t = EscTables::default();
        let c = pipeline(&p, &t, Calibration::Standard, &frame(), &EscSystem::ALL);
        assert!(c.is_noop());
        assert_eq!(c.skipped.len(), 4);

        // slip 0.15 → throttle 0.5; lock 0.65 → brake 0.5
        let mut f = frame();
        f.rear_wheel_speed = Some(46.0);
        f.front_wheel_speed = Some(40.0);
        f.speed = Some(40.0 / 0.35);
        f.brake = Some(0.5);
        f.obstacle_distance = Some(1.0);
        let c = pipeline(&p, &t, Calibration::Standard, &f, &[EscSystem::Dtcs, EscSystem::Abs]);
        assert!((c.throttle_scale - 0.5).abs() < 1e-9);
        assert!((c.brake_scale - 0.5).abs() < 1e-9);
        assert_eq!(c.brake_add, 0.0);
        let c = pipeline(&p, &t, Calibration::Standard, &f, &EscSystem::ALL);
        assert_eq!(c.brake_add, 1.0);
        assert_eq!(c.active.iter().map(|i| i.source).collect::<Vec<_>>(), [
            EscSystem::Dtcs,
            EscSystem::Abs,
            EscSystem::Ebi
        ]);
        let (throttle, brake) = c.apply(0.8, 0.5);
        assert!((throttle - 0.4).abs() < 1e-9);
        assert_eq!(brake, 1.0);
    }

    proptest! {
        #[test]
        fn cfc_conserves_and_mirrors(
            m in 50.0f64..2000.0, h in 0.1f64..1.5, w in 0.5f64..2.5, l in 1.0f64..5.0,
            af in -20.0f64..20.0, al in -20.0f64..20.0,
        ) {
            let p = VehicleParams { mass: m, cg_height: h, width: w, length: l, ..VehicleParams::default() };
            let a = cfc(&p, af, al);
            prop_assert!((a.total() - m * GRAVITY).abs() <= 1e-9 * m * GRAVITY);
            let b = cfc(&p, af, -al);
            prop_assert!((a.front_left - b.front_right).abs() < 1e-9);
            prop_assert!((a.rear_left - b.rear_right).abs() < 1e-9);
        }

        #[test]
        fn calibrations_are_ordered(
            fw in 0.0f64..150.0, rw in 0.0f64..150.0, v in 0.0f64..150.0,
            brake in 0.0f64..1.0, steer in -40.0f64..40.0, af in -12.0f64..12.0,
            obstacle in 0.0f64..150.0,
        ) {
            let mut f = frame();
            f.front_wheel_speed = Some(fw);
            f.rear_wheel_speed = Some(rw);
            f.speed = Some(v);
            f.brake = Some(brake);
            f.steering_angle = Some(steer);
            f.accel = Some(crate::model::Accel::full(af, 0.0, 0.0));
            f.obstacle_distance = Some(obstacle);
            for s in EscSystem::ALL {
                let fires = |cal| !run(s, cal, &f).unwrap().is_noop();
                prop_assert!(!fires(Calibration::Off));
                prop_assert!(!fires(Calibration::Sport) || fires(Calibration::Aggressive));
                prop_assert!(!fires(Calibration::Aggressive) || fires(Calibration::Standard));
            }
        }

        #[test]
        fn outputs_stay_in_unit_range(
            fw in 0.0f64..200.0, rw in 0.0f64..200.0, v in 0.0f64..200.0,
            brake in 0.0f64..1.0, steer in -90.0f64..90.0, af in -15.0f64..15.0,
            obstacle in 0.0f64..300.0,
        ) {
            let mut f = frame();
            f.front_wheel_speed = Some(fw);
            f.rear_wheel_speed = Some(rw);
            f.speed = Some(v);
            f.brake = Some(brake);
            f.steering_angle = Some(steer);
            f.accel = Some(crate::model::Accel::full(af, 0.0, 0.0));
            f.obstacle_distance = Some(obstacle);
            for cal in Calibration::ALL {
                for s in EscSystem::ALL {
                    let i = run(s, cal, &f).unwrap();
                    for x in [i.throttle_scale, i.brake_scale, i.brake_add] {
                        prop_assert!((0.0..=1.0).contains(&x));
                    }
                }
            }
        }
    }
}
