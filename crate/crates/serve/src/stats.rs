//! Request counters and a sliding window of latencies.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use twotower_core::eval::LatencySummary;

const WINDOW: usize = 10_000;

#[derive(Debug)]
pub struct Stats {
    started: Instant,
    requests: AtomicU64,
    errors: AtomicU64,
    rejected: AtomicU64,
    latencies: Mutex<VecDeque<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub requests: u64,
    pub errors: u64,
    /// Requests refused because the in-flight limit was reached.
    pub rejected: u64,
    pub uptime_s: f64,
    /// Completed requests per second since start.
    pub qps: f64,
    /// Over the most recent requests.
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl Default for Stats {
    fn default() -> Self {
        Self {
            started: Instant::now(),
            requests: AtomicU64::new(0),
            errors: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            latencies: Mutex::new(VecDeque::with_capacity(WINDOW)),
        }
    }
}

impl Stats {
    pub fn record(&self, ms: f64, ok: bool) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        if !ok {
            self.errors.fetch_add(1, Ordering::Relaxed);
        }
        let mut l = self.latencies.lock().expect("stats lock");
        if l.len() == WINDOW {
            l.pop_front();
        }
        l.push_back(ms);
    }

    pub fn reject(&self) {
        self.rejected.fetch_add(1, Ordering::Relaxed);
    }

    pub fn report(&self) -> StatsReport {
        let samples: Vec<f64> = self.latencies.lock().expect("stats lock").iter().copied().collect();
        let lat = LatencySummary::from_ms(&samples);
        let uptime_s = self.started.elapsed().as_secs_f64();
        let requests = self.requests.load(Ordering::Relaxed);
        StatsReport {
            requests,
            errors: self.errors.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            uptime_s,
            qps: if uptime_s > 0.0 { requests as f64 / uptime_s } else { 0.0 },
            p50_ms: lat.p50_ms,
            p99_ms: lat.p99_ms,
        }
    }
}
