//! Seeded synthetic telemetry on an elliptic circuit, plus the clocks that
//! drive the frame loop.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use leads_kit_core::esc::{self, Calibration, EscSystem, EscTables, VehicleParams};
use leads_kit_core::geo::EARTH_RADIUS_M;
use leads_kit_core::model::{Accel, Orientation, TelemetryFrame};
use leads_kit_core::pacer::{run_paced_loop, Clock, PacedTrace, SimulatedClock};
use leads_kit_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Config, EmulationConfig};

/// Ground truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    /// Meters east and north of the center.
    pub east: f64,
    pub north: f64,
    /// Radians clockwise from north.
    pub heading: f64,
    /// km/h
    pub speed: f64,
    /// m/s²
    pub accel_forward: f64,
    /// m/s², positive to the right.
    pub accel_lateral: f64,
    /// Signed curvature, 1/m, positive for right turns.
    pub curvature: f64,
}

/// Counter-clockwise ellipse with a sinusoidal pace.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub center: (f64, f64),
    pub a: f64,
    pub b: f64,
    omega: f64,
    k: f64,
    period: f64,
}

impl Circuit {
    pub fn new(cfg: &EmulationConfig) -> Self {
        let (a, b) = (cfg.semi_major, cfg.semi_minor);
        let h = ((a - b) / (a + b)).powi(2);
        // Ramanujan's perimeter approximation
        let perimeter = PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
        Self {
            center: cfg.center,
            a,
            b,
            omega: cfg.mean_speed / 3.6 * 2.0 * PI / perimeter,
            k: cfg.speed_amplitude / cfg.mean_speed,
            period: cfg.speed_period,
        }
    }

    pub fn state(&self, t: f64) -> TrackState {
        let w = 2.0 * PI / self.period;
        let theta = self.omega * (t - self.k / w * ((w * t).cos() - 1.0));
        let dtheta = self.omega * (1.0 + self.k * (w * t).sin());
        let ddtheta = self.omega * self.k * w * (w * t).cos();
        let (s, c) = theta.sin_cos();
        let (a, b) = (self.a, self.b);
        let mag = (a * a * s * s + b * b * c * c).sqrt();
        let dmag = (a * a - b * b) * s * c / mag;
        let v = mag * dtheta;
        // counter-clockwise travel turns left: negative curvature
        let curvature = -a * b / mag.powi(3);
        TrackState {
            east: a * c,
            north: b * s,
            heading: (-a * s).atan2(b * c),
            speed: v * 3.6,
            accel_forward: dmag * dtheta * dtheta + mag * ddtheta,
            accel_lateral: v * v * curvature,
            curvature,
        }
    }

    pub fn fix(&self, east: f64, north: f64) -> (f64, f64) {
        let lat0 = self.center.0.to_radians();
        (
            self.center.0 + (north / EARTH_RADIUS_M).to_degrees(),
            self.center.1 + (east / (EARTH_RADIUS_M * lat0.cos())).to_degrees(),
        )
    }
}

/// Turns track truth into noisy frames. Deterministic for a given seed and
/// sequence of query times.
pub struct Emulator {
    circuit: Circuit,
    params: VehicleParams,
    noise: f64,
    obstacle: Option<f64>,
    rng: ChaCha8Rng,
    unit: Normal<f64>,
    mileage: f64,
    last: Option<(f64, f64)>,
}

impl Emulator {
    pub fn new(cfg: &EmulationConfig, params: VehicleParams) -> Self {
        Self {
            circuit: Circuit::new(cfg),
            params,
            noise: cfg.noise,
            obstacle: cfg.obstacle_distance,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            unit: Normal::new(0.0, 1.0).expect("unit normal"),
            mileage: 0.0,
            last: None,
        }
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    fn n(&mut self, sigma: f64) -> f64 {
        self.unit.sample(&mut self.rng) * sigma * self.noise
    }

    /// Frame at time `t`; times must increase between calls.
    pub fn frame(&mut self, t: f64) -> TelemetryFrame {
        let s = self.circuit.state(t);
        if let Some((t0, v0)) = self.last {
            self.mileage += v0 * (t - t0) / 3600.0;
        }
        self.last = Some((t, s.speed));
        let speed = |e: &mut Self, sigma: f64| (s.speed + e.n(sigma)).max(0.0);
        let mut f = TelemetryFrame::at(t);
        f.speed = Some(speed(self, 0.3));
        f.front_wheel_speed = Some(speed(self, 0.5));
        f.rear_wheel_speed = Some(speed(self, 0.5));
        f.fl = Some(speed(self, 0.5));
        f.fr = Some(speed(self, 0.5));
        f.rl = Some(speed(self, 0.5));
        f.rr = Some(speed(self, 0.5));
        f.gps_ground_speed = Some(speed(self, 0.5));
        if s.accel_forward >= 0.0 {
            f.throttle = Some((0.2 + s.accel_forward / 4.0).clamp(0.0, 1.0));
            f.brake = Some(0.0);
        } else {
            f.throttle = Some(0.0);
            f.brake = Some((-s.accel_forward / 8.0).clamp(0.0, 1.0));
        }
        f.steering_angle = Some((self.params.length * s.curvature).atan().to_degrees() + self.n(0.2));
        f.accel = Some(Accel::full(
            s.accel_forward + self.n(0.05),
            s.accel_lateral + self.n(0.05),
            self.n(0.05),
        ));
        f.orientation = Some(Orientation {
            yaw: s.heading + self.n(0.002),
            pitch: self.n(0.002),
            roll: self.n(0.002),
        });
        let (east, north) = (s.east + self.n(0.5), s.north + self.n(0.5));
        let (lat, lon) = self.circuit.fix(east, north);
        f.gps_lat = Some(lat);
        f.gps_lon = Some(lon);
        f.mileage = Some(self.mileage);
        if let Some(d) = self.obstacle {
            f.obstacle_distance = Some((d + self.n(0.5)).max(0.0));
        }
        f
    }
}

/// Per-frame ESC context shared by both loops.
pub struct EscContext {
    pub params: VehicleParams,
    pub tables: EscTables,
    pub calibration: Calibration,
    pub systems: Vec<EscSystem>,
    pub interventions: usize,
}

impl EscContext {
    pub fn from_config(config: &Config) -> Self {
        Self {
            params: config.vehicle,
            tables: config.esc,
            calibration: config.calibration,
            systems: config.systems.clone(),
            interventions: 0,
        }
    }

    pub fn evaluate(&mut self, frame: &TelemetryFrame) -> esc::Combined {
        let c = esc::pipeline(&self.params, &self.tables, self.calibration, frame, &self.systems);
        self.interventions += c.active.len();
        c
    }
}

/// Gaussian work durations truncated at zero.
pub struct NetDelays {
    rng: ChaCha8Rng,
    dist: Option<Normal<f64>>,
    mean: f64,
}

impl NetDelays {
    pub fn new(seed: u64, mean: f64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist: (std > 0.0).then(|| Normal::new(mean, std).expect("finite std")),
            mean,
        }
    }

    pub fn sample(&mut self) -> f64 {
        match &self.dist {
            Some(d) => d.sample(&mut self.rng).max(0.0),
            None => self.mean.max(0.0),
        }
    }
}

pub struct EmulationRun {
    pub frames: Vec<TelemetryFrame>,
    pub trace: PacedTrace,
    pub interventions: usize,
}

impl EmulationRun {
    /// Measured rate at the end of the run.
    pub fn final_rate(&self) -> f64 {
        self.trace.rate_at(self.trace.frames.last().map_or(0.0, |f| f.start))
    }
}

/// Paced emulation on a simulated clock. Fully deterministic.
pub fn run_simulated(config: &Config) -> Result<EmulationRun> {
    let em = &config.emulation;
    let mut emulator = Emulator::new(em, config.vehicle);
    let mut delays = NetDelays::new(em.seed ^ 0x9e37_79b9_7f4a_7c15, em.net_delay_mean, em.net_delay_std);
    let mut ctx = EscContext::from_config(config);
    let mut frames = Vec::new();
    let mut clock = SimulatedClock::new();
    let trace = run_paced_loop(
        config.pacer.target_rate,
        |clock: &mut SimulatedClock, _| {
            let frame = emulator.frame(clock.now());
            ctx.evaluate(&frame);
            frames.push(frame);
            clock.advance(delays.sample());
        },
        &mut clock,
        em.duration,
    )?;
    Ok(EmulationRun {
        frames,
        trace,
        interventions: ctx.interventions,
    })
}

/// Monotonic wall clock.
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&mut self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    pub frames: usize,
    pub seconds: f64,
    pub interventions: usize,
}

impl Throughput {
    pub fn fps(&self) -> f64 {
        self.frames as f64 / self.seconds
    }
}

/// Unpaced loop on the wall clock: generate, evaluate, repeat for
/// `seconds`. Frames are handed to `sink` and not kept.
pub fn run_uncapped(
    config: &Config,
    seconds: f64,
    mut sink: impl FnMut(&TelemetryFrame),
) -> Throughput {
    let mut emulator = Emulator::new(&config.emulation, config.vehicle);
    let mut ctx = EscContext::from_config(config);
    let clock = WallClock::new();
    let mut frames = 0;
    let mut last = -1.0;
    loop {
        let now = clock.now();
        if now >= seconds {
            break;
        }
        // the wall clock can repeat a reading on coarse timers
        let t = if now > last { now } else { last + 1e-9 };
        last = t;
        let frame = emulator.frame(t);
        ctx.evaluate(&frame);
        sink(&frame);
        frames += 1;
    }
    Throughput {
        frames,
        seconds: clock.now(),
        interventions: ctx.interventions,
    }
}
