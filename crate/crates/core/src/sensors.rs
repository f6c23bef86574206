//! Wheel-speed pulse decoding and IMU gravity compensation.

use alloc::vec::Vec;
use core::ops::{Mul, Sub};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::model::Orientation;

/// Converts `c·/(t_r·n)` with `c` in cm and `t_r` in s to km/h.
pub const KMH_PER_CM_PER_S: f64 = 0.036;
pub const DEFAULT_DROPOUT_THRESHOLD: f64 = 1.5;
/// Standard gravity in the world frame, z up.
pub const DEFAULT_GRAVITY: Vec3 = Vec3([0.0, 0.0, -9.81]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WheelConfig {
    /// Wheel circumference in centimeters.
    pub circumference: f64,
    pub magnet_count: u32,
    #[serde(default = "default_speed_constant")]
    pub speed_constant: f64,
    #[serde(default = "default_dropout_threshold")]
    pub dropout_threshold: f64,
}

fn default_speed_constant() -> f64 {
    KMH_PER_CM_PER_S
}

fn default_dropout_threshold() -> f64 {
    DEFAULT_DROPOUT_THRESHOLD
}

impl WheelConfig {
    pub fn new(circumference: f64, magnet_count: u32) -> Result<Self> {
        let c = Self {
            circumference,
            magnet_count,
            speed_constant: KMH_PER_CM_PER_S,
            dropout_threshold: DEFAULT_DROPOUT_THRESHOLD,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.circumference > 0.0) || !self.circumference.is_finite() {
            return Err(Error::Domain("wheel circumference must be positive"));
        }
        if self.magnet_count == 0 {
            return Err(Error::Domain("at least one magnet is required"));
        }
        if !(self.speed_constant > 0.0) || !(self.dropout_threshold > 0.0) {
            return Err(Error::Domain(
                "speed constant and dropout threshold must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

/// Falling-edge timestamps of a Hall switch, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PulseTrain(Vec<f64>);

impl PulseTrain {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        crate::model::check_increasing(edges.iter().copied())?;
        Ok(Self(edges))
    }

    pub fn edges(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Keeps only high→low transitions. A stream that starts low does not count
/// as an edge, since the preceding level is unknown.
pub fn normalize_pulses(raw: &[(f64, Level)]) -> PulseTrain {
    let mut edges = Vec::new();
    let mut prev = None;
    for &(t, level) in raw {
        if prev == Some(Level::High) && level == Level::Low {
            // ties in t cannot form a new edge after a kept one
            if edges.last().is_none_or(|&l| t > l) {
                edges.push(t);
            }
        }
        prev = Some(level);
    }
    PulseTrain(edges)
}

/// Speed in km/h from the interval between two consecutive pulses.
pub fn wheel_speed(config: &WheelConfig, t_prev: f64, t_curr: f64) -> Result<f64> {
    let interval = t_curr - t_prev;
    if !(interval > 0.0) {
        return Err(Error::Ordering {
            index: 1,
            prev: t_prev,
            next: t_curr,
        });
    }
    Ok(config.speed_constant * config.circumference / (interval * config.magnet_count as f64))
}

/// One `(t, v)` sample per pulse interval, stamped at the later pulse.
pub fn decode_speeds(config: &WheelConfig, train: &PulseTrain) -> Vec<(f64, f64)> {
    train
        .edges()
        .windows(2)
        .map(|w| {
            let v = config.speed_constant * config.circumference
                / ((w[1] - w[0]) * config.magnet_count as f64);
            (w[1], v)
        })
        .collect()
}

/// `v0 + 1.8·(a0 + a1)·(t1 − t0)`: trapezoidal integration of m/s² into km/h.
pub fn predict_speed(v0: f64, a0: f64, a1: f64, t0: f64, t1: f64) -> f64 {
    v0 + 1.8 * (a0 + a1) * (t1 - t0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub t: f64,
    /// km/h
    pub v: f64,
    /// m/s²
    pub a: f64,
}

/// Whether `next` is consistent with `anchor` under the acceleration check.
pub fn is_outlier(threshold: f64, anchor: &SpeedSample, next: &SpeedSample) -> bool {
    let vp = predict_speed(anchor.v, anchor.a, next.a, anchor.t, next.t);
    let denom = (vp - anchor.v).abs();
    if denom == 0.0 {
        return false;
    }
    (next.v - vp).abs() / denom > threshold
}

/// Drops bounce samples whose speed disagrees with the integrated
/// acceleration by more than `λ` times the predicted change. Comparisons are
/// always made against the last kept sample.
pub fn dropout_filter(config: &WheelConfig, samples: &[SpeedSample]) -> Vec<SpeedSample> {
    let mut kept: Vec<SpeedSample> = Vec::with_capacity(samples.len());
    for s in samples {
        match kept.last() {
            Some(anchor) if is_outlier(config.dropout_threshold, anchor, s) => {}
            _ => kept.push(*s),
        }
    }
    kept
}

/// Column vector in R³.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn rot_x(phi: f64) -> Mat3 {
        let (s, c) = (libm::sin(phi), libm::cos(phi));
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(theta: f64) -> Mat3 {
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(psi: f64) -> Mat3 {
        let (s, c) = (libm::sin(psi), libm::cos(psi));
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3(core::array::from_fn(|i| core::array::from_fn(|j| m[j][i])))
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        let mut d = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let (a, b) = (&self.0, &o.0);
        Mat3(core::array::from_fn(|i| {
            core::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum())
        }))
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3(core::array::from_fn(|i| {
            (0..3).map(|k| m[i][k] * v.0[k]).sum()
        }))
    }
}

/// `R = R_z(yaw) · R_y(pitch) · R_x(roll)`.
pub fn rotation_matrix(o: &Orientation) -> Mat3 {
    Mat3::rot_z(o.yaw) * Mat3::rot_y(o.pitch) * Mat3::rot_x(o.roll)
}

/// Gravity as seen in the sensor frame, `Rᵀ·g`.
pub fn sensor_gravity(o: &Orientation, g: Vec3) -> Vec3 {
    rotation_matrix(o).transpose() * g
}

/// Linear acceleration: the measured vector minus gravity in the sensor frame.
pub fn compensate_gravity(o: &Orientation, measured: Vec3, g: Vec3) -> Vec3 {
    measured - sensor_gravity(o, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    fn raw(levels: &[Level]) -> Vec<(f64, Level)> {
        levels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as f64, l))
            .collect()
    }

    #[test]
    fn keeps_only_falling_edges() {
        use Level::*;
        let train = normalize_pulses(&raw(&[High, High, Low, Low, Low, High, Low]));
        assert_eq!(train.edges(), &[2.0, 6.0]);
        assert!(normalize_pulses(&raw(&[High; 5])).is_empty());
        let alt = normalize_pulses(&raw(&[High, Low, High, Low, High, Low]));
        assert_eq!(alt.edges(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn speed_formula() {
        let c = WheelConfig::new(100.0, 1).unwrap();
        // 100 cm/s is 1 m/s
        assert!((wheel_speed(&c, 0.0, 1.0).unwrap() - 3.6).abs() < 1e-12);
        let c = WheelConfig::new(157.0, 4).unwrap();
        assert!((wheel_speed(&c, 2.0, 2.05).unwrap() - 28.26).abs() < 1e-9);
        let c2 = WheelConfig::new(157.0, 8).unwrap();
        let v4 = wheel_speed(&c, 0.0, 0.1).unwrap();
        let v8 = wheel_speed(&c2, 0.0, 0.1).unwrap();
        assert!((v4 - 2.0 * v8).abs() < 1e-12);
        assert!(matches!(wheel_speed(&c, 1.0, 1.0), Err(Error::Ordering { .. })));
        assert!(WheelConfig::new(0.0, 1).is_err());
        assert!(WheelConfig::new(10.0, 0).is_err());
    }

    #[test]
    fn literal_constant_mode() {
        let mut c = WheelConfig::new(100.0, 1).unwrap();
        c.speed_constant = 60.0;
        assert_eq!(wheel_speed(&c, 0.0, 1.0).unwrap(), 6000.0);
    }

    #[test]
    fn decode_stamps_later_edge() {
        let c = WheelConfig::new(100.0, 2).unwrap();
        let train = PulseTrain::from_edges(vec![0.0, 0.5, 1.0]).unwrap();
        let v = decode_speeds(&c, &train);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].0, 0.5);
        assert!((v[0].1 - 3.6).abs() < 1e-12);
    }

    #[test]
    fn predicted_speed() {
        assert!((predict_speed(10.0, 1.0, 1.0, 0.0, 1.0) - 13.6).abs() < 1e-12);
        assert_eq!(predict_speed(10.0, 0.0, 0.0, 0.0, 5.0), 10.0);
        assert!((predict_speed(10.0, 2.0, 0.0, 0.0, 0.5) - 11.8).abs() < 1e-12);
    }

    fn s(t: f64, v: f64, a: f64) -> SpeedSample {
        SpeedSample { t, v, a }
    }

    #[test]
    fn dropout_examples() {
        let c = WheelConfig::new(150.0, 1).unwrap();
        let out = dropout_filter(&c, &[s(0.0, 10.0, 1.0), s(1.0, 25.0, 1.0)]);
        assert_eq!(out.len(), 1);
        let out = dropout_filter(&c, &[s(0.0, 10.0, 1.0), s(1.0, 14.0, 1.0)]);
        assert_eq!(out.len(), 2);
        let flat: Vec<_> = (0..10).map(|i| s(i as f64, 30.0, 0.0)).collect();
        assert_eq!(dropout_filter(&c, &flat), flat);
    }

    #[test]
    fn dropped_sample_does_not_move_anchor() {
        let c = WheelConfig::new(150.0, 1).unwrap();
        let out = dropout_filter(
            &c,
            &[s(0.0, 10.0, 1.0), s(1.0, 40.0, 1.0), s(2.0, 17.0, 1.0)],
        );
        // 17 is judged against t=0: vp = 10 + 1.8·2·2 = 17.2
        assert_eq!(out.iter().map(|x| x.t).collect::<Vec<_>>(), vec![0.0, 2.0]);
    }

    #[test]
    fn rotations() {
        let id = rotation_matrix(&Orientation::new(0.0, 0.0, 0.0));
        assert_eq!(id, Mat3::IDENTITY);
        let r = rotation_matrix(&Orientation::new(0.0, FRAC_PI_2, 0.0));
        let want = Mat3([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert!(r.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn gravity_examples() {
        let g = DEFAULT_GRAVITY;
        let level = Orientation::default();
        assert_eq!(compensate_gravity(&level, g, g), Vec3::default());
        let pitched = Orientation::new(0.0, FRAC_PI_2, 0.0);
        let seen = sensor_gravity(&pitched, g);
        assert!((seen - Vec3::new(9.81, 0.0, 0.0)).norm() < 1e-12);
        assert!(compensate_gravity(&pitched, Vec3::new(9.81, 0.0, 0.0), g).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(yaw in -7.0f64..7.0, pitch in -7.0f64..7.0, roll in -7.0f64..7.0) {
            let r = rotation_matrix(&Orientation::new(yaw, pitch, roll));
            prop_assert!((r.transpose() * r).max_abs_diff(&Mat3::IDENTITY) < 1e-12);
            prop_assert!((r.det() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn residual_survives_compensation(yaw in -3.2f64..3.2, pitch in -3.2f64..3.2, roll in -3.2f64..3.2) {
            let o = Orientation::new(yaw, pitch, roll);
            let seen = sensor_gravity(&o, DEFAULT_GRAVITY);
            let measured = Vec3::new(seen.0[0] + 1.0, seen.0[1], seen.0[2]);
            let lin = compensate_gravity(&o, measured, DEFAULT_GRAVITY);
            prop_assert!((lin - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        }

        #[test]
        fn speed_decreases_with_interval(a in 0.001f64..10.0, b in 0.001f64..10.0) {
            prop_assume!(a < b);
            let c = WheelConfig::new(157.0, 3).unwrap();
            prop_assert!(wheel_speed(&c, 0.0, a).unwrap() > wheel_speed(&c, 0.0, b).unwrap());
        }
    }
}
