//! Frame pacing governor.
//!
//! The pacer keeps the last ten seconds of frame times, net delays (time spent
//! doing work) and delays (time between frame starts). Before each wait it
//! fits a degree-5 least-squares polynomial of net delay over time, predicts
//! the current net delay `p`, and sleeps `1/r − clamp(p, 0, 1/r − 1 ms)`.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEGREE: usize = 5;
const TERMS: usize = DEGREE + 1;
/// Seconds of history kept in each queue.
pub const WINDOW_SECONDS: f64 = 10.0;
/// Smallest wait handed back, in seconds.
pub const MIN_INTERVAL: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct PacerState {
    target_rate: f64,
    limit: usize,
    times: VecDeque<f64>,
    net_delays: VecDeque<f64>,
    delays: VecDeque<f64>,
}

impl PacerState {
    pub fn new(target_rate: f64) -> Result<Self> {
        // a 1/r period must leave room for the 1 ms floor
        if !target_rate.is_finite() || !(target_rate > 0.0) || 1.0 / target_rate <= MIN_INTERVAL {
            return Err(Error::Domain("target rate must be positive and below 1000 FPS"));
        }
        let limit = libm::ceil(WINDOW_SECONDS * target_rate) as usize;
        Ok(Self {
            target_rate,
            limit,
            times: VecDeque::with_capacity(limit),
            net_delays: VecDeque::with_capacity(limit),
            delays: VecDeque::with_capacity(limit),
        })
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    /// Maximum queue length, `⌈10·r⌉`.
    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &VecDeque<f64> {
        &self.times
    }

    pub fn net_delays(&self) -> &VecDeque<f64> {
        &self.net_delays
    }

    pub fn delays(&self) -> &VecDeque<f64> {
        &self.delays
    }

    pub fn record_frame(&mut self, t: f64, net_delay: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Domain("frame time must be finite"));
        }
        if !(net_delay >= 0.0) || !net_delay.is_finite() {
            return Err(Error::Domain("net delay must be finite and non-negative"));
        }
        let delay = match self.times.back() {
            Some(&prev) if !(t > prev) => {
                return Err(Error::Ordering {
                    index: self.times.len(),
                    prev,
                    next: t,
                })
            }
            Some(&prev) => t - prev,
            None => 0.0,
        };
        if self.times.len() == self.limit {
            self.times.pop_front();
            self.net_delays.pop_front();
            self.delays.pop_front();
        }
        self.times.push_back(t);
        self.net_delays.push_back(net_delay);
        self.delays.push_back(delay);
        Ok(())
    }

    pub fn fit_predictor(&self) -> Result<DelayPredictor> {
        DelayPredictor::fit(&self.times, &self.net_delays)
    }

    /// Inter-frame wait at time `t`.
    pub fn next_interval(&self, t: f64) -> Result<f64> {
        let p = self.fit_predictor()?.predict(t);
        Ok(interval_for(self.target_rate, p))
    }
}

/// `1/r − clamp(p, 0, 1/r − 0.001)`; always in `[0.001, 1/r]`.
pub fn interval_for(target_rate: f64, predicted_net_delay: f64) -> f64 {
    let period = 1.0 / target_rate;
    let p = if predicted_net_delay.is_nan() {
        0.0
    } else {
        predicted_net_delay.clamp(0.0, period - MIN_INTERVAL)
    };
    // the subtraction can round just below the floor
    (period - p).max(MIN_INTERVAL)
}

/// Net-delay model over time.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayPredictor {
    /// Fewer than six samples, or a degenerate design: the sample mean.
    Mean(f64),
    /// Polynomial in `x = 2(t − t_min)/(t_max − t_min) − 1`, lowest power first.
    Polynomial {
        coefficients: [f64; TERMS],
        t_min: f64,
        t_max: f64,
    },
}

impl DelayPredictor {
    pub fn fit(times: &VecDeque<f64>, values: &VecDeque<f64>) -> Result<Self> {
        let n = times.len().min(values.len());
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let mean = values.iter().take(n).sum::<f64>() / n as f64;
        if n < TERMS {
            return Ok(DelayPredictor::Mean(mean));
        }
        let t_min = times[0];
        let t_max = times[n - 1];
        if !(t_max > t_min) {
            return Ok(DelayPredictor::Mean(mean));
        }
        let xs = times.iter().take(n).map(|&t| normalize(t, t_min, t_max));
        match least_squares(xs, values.iter().take(n).copied(), n) {
            Some(coefficients) => Ok(DelayPredictor::Polynomial {
                coefficients,
                t_min,
                t_max,
            }),
            None => Ok(DelayPredictor::Mean(mean)),
        }
    }

    /// Regression curve at `t`. Queries outside the fitted span are evaluated
    /// at the nearest edge.
    pub fn predict(&self, t: f64) -> f64 {
        match *self {
            DelayPredictor::Mean(m) => m,
            DelayPredictor::Polynomial {
                coefficients,
                t_min,
                t_max,
            } => {
                let x = if t.is_nan() {
                    1.0
                } else {
                    normalize(t, t_min, t_max).clamp(-1.0, 1.0)
                };
                horner(&coefficients, x)
            }
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, DelayPredictor::Polynomial { .. })
    }
}

fn normalize(t: f64, t_min: f64, t_max: f64) -> f64 {
    2.0 * (t - t_min) / (t_max - t_min) - 1.0
}

fn horner(c: &[f64; TERMS], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

// Householder QR on the Vandermonde design without forming it explicitly
// in a separate pass. Returns None when R is numerically rank deficient.
fn least_squares(
    xs: impl Iterator<Item = f64>,
    ys: impl Iterator<Item = f64>,
    n: usize,
) -> Option<[f64; TERMS]> {
    // column-major design matrix
    let mut a: Vec<f64> = Vec::with_capacity(n * TERMS);
    let xs: Vec<f64> = xs.collect();
    for j in 0..TERMS {
        a.extend(xs.iter().map(|&x| libm::pow(x, j as f64)));
    }
    let mut b: Vec<f64> = ys.collect();
    let col = |j: usize| j * n;

    let mut diag = [0.0; TERMS];
    for k in 0..TERMS {
        let ck = col(k);
        let norm = libm::sqrt(a[ck + k..ck + n].iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[ck + k] > 0.0 { -norm } else { norm };
        // v = a_k - alpha e_k, stored in place of column k
        a[ck + k] -= alpha;
        let vnorm2: f64 = a[ck + k..ck + n].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k + 1..TERMS {
            let cj = col(j);
            let dot: f64 = (k..n).map(|i| a[ck + i] * a[cj + i]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..n {
                a[cj + i] -= s * a[ck + i];
            }
        }
        let dot: f64 = (k..n).map(|i| a[ck + i] * b[i]).sum();
        let s = 2.0 * dot / vnorm2;
        for i in k..n {
            b[i] -= s * a[ck + i];
        }
    }

    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-12 * scale) {
        return None;
    }
    // back substitution on R (upper triangle lives above the diagonal)
    let mut coef = [0.0; TERMS];
    for k in (0..TERMS).rev() {
        let mut s = b[k];
        for j in k + 1..TERMS {
            s -= a[col(j) + k] * coef[j];
        }
        coef[k] = s / diag[k];
    }
    coef.iter().all(|c| c.is_finite()).then_some(coef)
}

/// Source of time for the frame loop.
pub trait Clock {
    /// Seconds since an arbitrary origin.
    fn now(&self) -> f64;
    fn sleep(&mut self, seconds: f64);
}

/// Deterministic clock that only moves when told to.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulatedClock {
    now: f64,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&mut self, seconds: f64) {
        self.now += seconds.max(0.0);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> f64 {
        self.now
    }

    fn sleep(&mut self, seconds: f64) {
        self.advance(seconds);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    /// Frame start, relative to the loop start.
    pub start: f64,
    pub net_delay: f64,
    pub wait: f64,
}

/// Measured rate and mean net delay over the second ending at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub rate: f64,
    pub avg_net_delay: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PacedTrace {
    pub target_rate: f64,
    pub frames: Vec<FrameRecord>,
}

impl PacedTrace {
    /// Frame rate over the trailing second `(t − 1, t]`, measured as frame
    /// intervals per second between the first and last frame start in the
    /// window. Returns 0 with fewer than two frames.
    pub fn rate_at(&self, t: f64) -> f64 {
        let window = self.window(t);
        match (window.first(), window.last()) {
            (Some(a), Some(b)) if window.len() >= 2 && b.start > a.start => {
                (window.len() - 1) as f64 / (b.start - a.start)
            }
            _ => 0.0,
        }
    }

    /// Number of frames started within `(t − 1, t]`.
    pub fn count_at(&self, t: f64) -> usize {
        self.window(t).len()
    }

    pub fn avg_net_delay_at(&self, t: f64) -> f64 {
        let window = self.window(t);
        if window.is_empty() {
            return 0.0;
        }
        window.iter().map(|f| f.net_delay).sum::<f64>() / window.len() as f64
    }

    pub fn checkpoint(&self, t: f64) -> Checkpoint {
        Checkpoint {
            t,
            rate: self.rate_at(t),
            avg_net_delay: self.avg_net_delay_at(t),
        }
    }

    /// Checkpoints at every whole second of the trace.
    pub fn per_second(&self) -> Vec<Checkpoint> {
        let end = self.frames.last().map_or(0.0, |f| f.start + f.net_delay + f.wait);
        (1..=libm::floor(end + 1e-9) as usize)
            .map(|s| self.checkpoint(s as f64))
            .collect()
    }

    fn window(&self, t: f64) -> &[FrameRecord] {
        let lo = self.frames.partition_point(|f| f.start <= t - 1.0);
        let hi = self.frames.partition_point(|f| f.start <= t);
        &self.frames[lo..hi.max(lo)]
    }
}

/// Runs the paced frame loop for `duration` seconds of `clock` time.
///
/// Each frame calls `frame_work`, which does the frame's work and, on a
/// simulated clock, advances it by the work's duration. The elapsed time is
/// recorded as the frame's net delay; the loop then waits `next_interval`.
pub fn run_paced_loop<C, F>(
    target_rate: f64,
    mut frame_work: F,
    clock: &mut C,
    duration: f64,
) -> Result<PacedTrace>
where
    C: Clock + ?Sized,
    F: FnMut(&mut C, usize),
{
    let mut state = PacerState::new(target_rate)?;
    let origin = clock.now();
    let mut trace = PacedTrace {
        target_rate,
        frames: Vec::new(),
    };
    let mut index = 0;
    while clock.now() - origin < duration {
        let start = clock.now();
        frame_work(clock, index);
        let end = clock.now();
        let net_delay = (end - start).max(0.0);
        state.record_frame(start - origin, net_delay)?;
        let wait = state.next_interval(end - origin)?;
        clock.sleep(wait);
        trace.frames.push(FrameRecord {
            start: start - origin,
            net_delay,
            wait,
        });
        index += 1;
    }
    Ok(trace)
}
