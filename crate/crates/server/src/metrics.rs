//! Request counters and the render latency histogram.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use crate::cache::CacheStats;

/// Upper bounds (inclusive, milliseconds) of the latency buckets; a final
/// overflow bucket follows.
pub const LATENCY_BUCKETS_MS: [u64; 11] = [5, 10, 25, 50, 100, 250, 500, 1000, 2500, 5000, 10000];

pub struct Metrics {
    requests: Mutex<BTreeMap<String, u64>>,
    render_buckets: [AtomicU64; LATENCY_BUCKETS_MS.len() + 1],
    render_count: AtomicU64,
    render_sum_us: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// `None` for the overflow bucket.
    pub le_ms: Option<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderLatency {
    pub count: u64,
    pub sum_ms: f64,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub requests: BTreeMap<String, u64>,
    pub render_latency: RenderLatency,
    pub cache: CacheStats,
    pub active_sessions: usize,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            requests: Mutex::new(BTreeMap::new()),
            render_buckets: Default::default(),
            render_count: AtomicU64::new(0),
            render_sum_us: AtomicU64::new(0),
        }
    }
}

impl Metrics {
    /// Counts one request against `endpoint`, e.g. `"GET /series/{uid}"`.
    pub fn record_request(&self, endpoint: &str) {
        let mut map = self.requests.lock().unwrap_or_else(|e| e.into_inner());
        *map.entry(endpoint.to_string()).or_default() += 1;
    }

    pub fn record_render(&self, elapsed: Duration) {
        let ms = elapsed.as_secs_f64() * 1000.0;
        let idx = LATENCY_BUCKETS_MS
            .iter()
            .position(|&le| ms <= le as f64)
            .unwrap_or(LATENCY_BUCKETS_MS.len());
        self.render_buckets[idx].fetch_add(1, Ordering::Relaxed);
        self.render_count.fetch_add(1, Ordering::Relaxed);
        self.render_sum_us.fetch_add(elapsed.as_micros() as u64, Ordering::Relaxed);
    }

    pub fn report(&self, cache: CacheStats, active_sessions: usize) -> MetricsReport {
        let buckets = self
            .render_buckets
            .iter()
            .enumerate()
            .map(|(i, c)| Bucket {
                le_ms: LATENCY_BUCKETS_MS.get(i).copied(),
                count: c.load(Ordering::Relaxed),
            })
            .collect();
        MetricsReport {
            requests: self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone(),
            render_latency: RenderLatency {
                count: self.render_count.load(Ordering::Relaxed),
                sum_ms: self.render_sum_us.load(Ordering::Relaxed) as f64 / 1000.0,
                buckets,
            },
            cache,
            active_sessions,
        }
    }
}
