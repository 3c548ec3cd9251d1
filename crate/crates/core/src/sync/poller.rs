use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{SourceConfig, SourceScan, Store};

/// Background thread that rescans each source on its own poll interval.
pub struct Poller {
    stop: mpsc::Sender<()>,
    handle: JoinHandle<()>,
}

impl Poller {
    /// Starts polling; every source is scanned immediately, then whenever
    /// its interval has elapsed. `on_scan` sees the outcome of each round.
    pub fn spawn<F>(store: Arc<Store>, sources: Vec<SourceConfig>, on_scan: F) -> Poller
    where
        F: Fn(&[SourceScan]) + Send + 'static,
    {
        let (stop, rx) = mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("mivs-poller".into())
            .spawn(move || {
                let mut due: Vec<Instant> = vec![Instant::now(); sources.len()];
                loop {
                    let now = Instant::now();
                    let ready: Vec<usize> = (0..sources.len()).filter(|&i| due[i] <= now).collect();
                    if !ready.is_empty() {
                        let batch: Vec<SourceConfig> = ready.iter().map(|&i| sources[i].clone()).collect();
                        let outcome = store.scan(&batch);
                        on_scan(&outcome);
                        let done = Instant::now();
                        for &i in &ready {
                            due[i] = done + sources[i].poll_interval();
                        }
                    }
                    let wait = due
                        .iter()
                        .min()
                        .map_or(Duration::from_secs(3600), |d| d.saturating_duration_since(Instant::now()));
                    match rx.recv_timeout(wait) {
                        Err(RecvTimeoutError::Timeout) => {}
                        _ => break,
                    }
                }
            })
            .expect("spawn poller thread");
        Poller { stop, handle }
    }

    /// Stops after any scan in progress completes.
    pub fn stop(self) {
        let _ = self.stop.send(());
        let _ = self.handle.join();
    }
}
