use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ScoreError;

/// Source of timestamps in seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// Wall-independent monotonic clock counting from its creation.
#[derive(Debug, Clone)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Manually advanced clock for simulations.
#[derive(Debug, Default)]
pub struct VirtualClock {
    t: Mutex<f64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, dt: f64) {
        *self.t.lock().unwrap() += dt.max(0.0);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.t.lock().unwrap()
    }
}

/// Instantaneous power readings in watts.
pub trait PowerSampler: Send + Sync {
    fn sample(&self, t: f64) -> Result<f64, ScoreError>;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantSampler(pub f64);

impl PowerSampler for ConstantSampler {
    fn sample(&self, _t: f64) -> Result<f64, ScoreError> {
        Ok(self.0.max(0.0))
    }
}

/// Piecewise-linear power profile, optionally repeating every `period` seconds.
#[derive(Debug, Clone)]
pub struct ProfileSampler {
    points: Vec<(f64, f64)>,
    period: Option<f64>,
}

impl ProfileSampler {
    pub fn new(mut points: Vec<(f64, f64)>, period: Option<f64>) -> Result<Self, ScoreError> {
        if points.is_empty() {
            return Err(ScoreError::Sampler("profile needs at least one point".into()));
        }
        if period.is_some_and(|p| !(p > 0.0)) {
            return Err(ScoreError::Sampler("profile period must be positive".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points, period })
    }
}

impl PowerSampler for ProfileSampler {
    fn sample(&self, t: f64) -> Result<f64, ScoreError> {
        let t = match self.period {
            Some(p) => t.rem_euclid(p),
            None => t,
        };
        let pts = &self.points;
        let i = pts.partition_point(|(x, _)| *x <= t);
        let w = if i == 0 {
            pts[0].1
        } else if i == pts.len() {
            pts[i - 1].1
        } else {
            let (x0, y0) = pts[i - 1];
            let (x1, y1) = pts[i];
            y0 + (y1 - y0) * (t - x0) / (x1 - x0)
        };
        Ok(w.max(0.0))
    }
}

/// Replays recorded `<seconds> <watts>` samples as a step function.
#[derive(Debug, Clone)]
pub struct ReplaySampler {
    samples: Vec<(f64, f64)>,
}

impl ReplaySampler {
    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| ScoreError::ReplayParse {
                line: i + 1,
                message: msg.to_string(),
            };
            let mut parts = line.split_whitespace();
            let t: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad timestamp"))?;
            let w: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad wattage"))?;
            if parts.next().is_some() {
                return Err(bad("expected two columns"));
            }
            if !t.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(bad("values must be finite and watts non-negative"));
            }
            samples.push((t, w));
        }
        if samples.is_empty() {
            return Err(ScoreError::Sampler("replay file has no samples".into()));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { samples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoreError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

impl PowerSampler for ReplaySampler {
    fn sample(&self, t: f64) -> Result<f64, ScoreError> {
        let i = self.samples.partition_point(|(x, _)| *x <= t);
        Ok(self.samples[i.saturating_sub(1)].1)
    }
}

/// Latency and energy of one measured call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub latency_s: f64,
    /// Absent when the sampler failed.
    pub p_avg_w: Option<f64>,
    pub energy_j: Option<f64>,
}

impl EnergyRecord {
    pub fn new(t_start: f64, t_end: f64, p_avg_w: Option<f64>) -> Self {
        let latency_s = (t_end - t_start).max(0.0);
        Self {
            t_start,
            t_end,
            latency_s,
            p_avg_w,
            energy_j: p_avg_w.map(|p| energy_joules(p, latency_s)),
        }
    }
}

/// Energy in joules from average power and elapsed time.
pub fn energy_joules(p_avg_w: f64, seconds: f64) -> f64 {
    p_avg_w * seconds
}

/// Times `run` and averages power sampled at its start and end.
pub fn measure<T>(
    clock: &dyn Clock,
    sampler: &dyn PowerSampler,
    run: impl FnOnce() -> T,
) -> (T, EnergyRecord) {
    let t0 = clock.now();
    let s0 = sampler.sample(t0);
    let out = run();
    let t1 = clock.now();
    let s1 = sampler.sample(t1);
    let p = match (s0, s1) {
        (Ok(a), Ok(b)) => Some((a + b) / 2.0),
        (Err(e), _) | (_, Err(e)) => {
            log::warn!("power sampling failed: {e}");
            None
        }
    };
    (out, EnergyRecord::new(t0, t1, p))
}

const MONITOR_LOG_CAP: usize = 100_000;

struct MonitorShared {
    clock: Arc<dyn Clock>,
    sampler: Arc<dyn PowerSampler>,
    log: Mutex<VecDeque<(f64, f64)>>,
    failed: AtomicBool,
}

impl MonitorShared {
    fn record(&self) -> f64 {
        let t = self.clock.now();
        match self.sampler.sample(t) {
            Ok(w) => {
                let mut log = self.log.lock().unwrap();
                if log.len() == MONITOR_LOG_CAP {
                    log.pop_front();
                }
                log.push_back((t, w));
            }
            Err(e) => {
                log::warn!("power sampling failed: {e}");
                self.failed.store(true, Ordering::Relaxed);
            }
        }
        t
    }
}

/// Background power sampler shared by concurrent measurement windows.
///
/// Every sample is timestamped; a window averages the samples that fall inside
/// its own `[start, end]` interval, including the ones it takes itself at both
/// ends.
pub struct PowerMonitor {
    shared: Arc<MonitorShared>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl PowerMonitor {
    /// Starts sampling every `interval`. A zero interval disables the
    /// background thread; windows then rely on their start and end samples.
    pub fn start(clock: Arc<dyn Clock>, sampler: Arc<dyn PowerSampler>, interval: Duration) -> Self {
        let shared = Arc::new(MonitorShared {
            clock,
            sampler,
            log: Mutex::new(VecDeque::new()),
            failed: AtomicBool::new(false),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let worker = (!interval.is_zero()).then(|| {
            let shared = shared.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    shared.record();
                    std::thread::sleep(interval);
                }
            })
        });
        Self {
            shared,
            stop,
            worker,
        }
    }

    pub fn measure<T>(&self, run: impl FnOnce() -> T) -> (T, EnergyRecord) {
        let failed_before = self.shared.failed.load(Ordering::Relaxed);
        let t0 = self.shared.record();
        let out = run();
        let t1 = self.shared.record();
        let failed = !failed_before && self.shared.failed.load(Ordering::Relaxed);
        let log = self.shared.log.lock().unwrap();
        let inside: Vec<f64> = log
            .iter()
            .filter(|(t, _)| *t >= t0 && *t <= t1)
            .map(|(_, w)| *w)
            .collect();
        let p = (!failed && !inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64);
        (out, EnergyRecord::new(t0, t1, p))
    }
}

impl Drop for PowerMonitor {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
