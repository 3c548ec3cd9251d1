//! Byte-budgeted LRU of loaded volumes with single-flight loading.

use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use mivs_core::volume::Volume;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::OnceCell;

#[derive(Debug, Error)]
pub enum CacheError<E> {
    #[error("volume needs {bytes} bytes but the cache budget is {budget}")]
    TooLarge { bytes: u64, budget: u64 },
    #[error(transparent)]
    Load(E),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub loads: u64,
    pub entries: usize,
    pub resident_bytes: u64,
    pub budget_bytes: u64,
}

pub struct Lookup {
    pub volume: Arc<Volume>,
    pub hit: bool,
}

struct Entry {
    volume: Arc<Volume>,
    bytes: u64,
    last_used: u64,
}

#[derive(Default)]
struct State {
    entries: HashMap<String, Entry>,
    inflight: HashMap<String, Arc<OnceCell<Arc<Volume>>>>,
    resident: u64,
    tick: u64,
}

pub struct VolumeCache {
    budget: u64,
    state: Mutex<State>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    loads: AtomicU64,
}

impl VolumeCache {
    pub fn new(budget_bytes: u64) -> VolumeCache {
        VolumeCache {
            budget: budget_bytes,
            state: Mutex::new(State::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            loads: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn stats(&self) -> CacheStats {
        let st = self.lock();
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            loads: self.loads.load(Ordering::Relaxed),
            entries: st.entries.len(),
            resident_bytes: st.resident,
            budget_bytes: self.budget,
        }
    }

    /// Returns the cached volume for `key` or loads it. Concurrent misses
    /// on one key share a single call to `load`; other keys are not held
    /// up. A volume larger than the whole budget is returned to nobody and
    /// not cached.
    pub async fn get_or_load<F, Fut, E>(&self, key: &str, load: F) -> Result<Lookup, CacheError<E>>
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = Result<Volume, E>>,
    {
        let cell = {
            let mut st = self.lock();
            st.tick += 1;
            let tick = st.tick;
            if let Some(e) = st.entries.get_mut(key) {
                e.last_used = tick;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Lookup {
                    volume: e.volume.clone(),
                    hit: true,
                });
            }
            self.misses.fetch_add(1, Ordering::Relaxed);
            st.inflight.entry(key.to_string()).or_default().clone()
        };

        let result = cell
            .get_or_try_init(|| async {
                self.loads.fetch_add(1, Ordering::Relaxed);
                let volume = Arc::new(load().await?);
                self.insert(key, volume.clone());
                Ok(volume)
            })
            .await
            .cloned();

        {
            let mut st = self.lock();
            if st.inflight.get(key).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
                st.inflight.remove(key);
            }
        }

        let volume = result.map_err(CacheError::Load)?;
        let bytes = volume.byte_size() as u64;
        if bytes > self.budget {
            return Err(CacheError::TooLarge {
                bytes,
                budget: self.budget,
            });
        }
        Ok(Lookup { volume, hit: false })
    }

    fn insert(&self, key: &str, volume: Arc<Volume>) {
        let bytes = volume.byte_size() as u64;
        if bytes > self.budget {
            return;
        }
        let mut st = self.lock();
        if let Some(old) = st.entries.remove(key) {
            st.resident -= old.bytes;
        }
        while st.resident + bytes > self.budget {
            let Some(victim) = st.entries.iter().min_by_key(|(_, e)| e.last_used).map(|(k, _)| k.clone()) else {
                break;
            };
            let e = st.entries.remove(&victim).expect("victim present");
            st.resident -= e.bytes;
            self.evictions.fetch_add(1, Ordering::Relaxed);
        }
        st.tick += 1;
        let last_used = st.tick;
        st.resident += bytes;
        st.entries.insert(
            key.to_string(),
            Entry {
                volume,
                bytes,
                last_used,
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mivs_core::Vec3;
    use proptest::prelude::*;
    use std::convert::Infallible;
    use std::time::Duration;

    fn cube(n: usize) -> Volume {
        Volume::from_fn([n, n, n], [1.0; 3], Vec3::zeros(), |i, _, _| i as f32).unwrap()
    }

    fn rt() -> tokio::runtime::Runtime {
        tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap()
    }

    #[test]
    fn hit_after_miss() {
        rt().block_on(async {
            let cache = VolumeCache::new(1 << 20);
            let a = cache.get_or_load("a", || async { Ok::<_, Infallible>(cube(4)) }).await.unwrap();
            assert!(!a.hit);
            let b = cache
                .get_or_load("a", || async { Err::<Volume, _>("must not reload") })
                .await
                .unwrap();
            assert!(b.hit);
            assert!(Arc::ptr_eq(&a.volume, &b.volume));
            let s = cache.stats();
            assert_eq!((s.hits, s.misses, s.loads, s.resident_bytes), (1, 1, 1, 256));
        });
    }

    #[test]
    fn concurrent_misses_load_once() {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_time().build().unwrap();
        rt.block_on(async {
            let cache = Arc::new(VolumeCache::new(1 << 20));
            let tasks: Vec<_> = (0..32)
                .map(|_| {
                    let cache = cache.clone();
                    tokio::spawn(async move {
                        cache
                            .get_or_load("k", || async {
                                tokio::time::sleep(Duration::from_millis(50)).await;
                                Ok::<_, Infallible>(cube(4))
                            })
                            .await
                            .unwrap()
                            .volume
                    })
                })
                .collect();
            let mut vols = Vec::new();
            for t in tasks {
                vols.push(t.await.unwrap());
            }
            assert!(vols.iter().all(|v| Arc::ptr_eq(v, &vols[0])));
            assert_eq!(cache.stats().loads, 1);
        });
    }

    #[test]
    fn failed_load_is_retried() {
        rt().block_on(async {
            let cache = VolumeCache::new(1 << 20);
            let err = cache.get_or_load("k", || async { Err::<Volume, _>("boom") }).await;
            assert!(matches!(err, Err(CacheError::Load("boom"))));
            assert!(cache.get_or_load("k", || async { Ok::<_, &str>(cube(4)) }).await.is_ok());
            assert_eq!(cache.stats().loads, 2);
        });
    }

    #[test]
    fn oversized_volume_is_refused() {
        rt().block_on(async {
            let cache = VolumeCache::new(100);
            let r = cache.get_or_load("k", || async { Ok::<_, Infallible>(cube(4)) }).await;
            assert!(matches!(r, Err(CacheError::TooLarge { bytes: 256, budget: 100 })));
            assert_eq!(cache.stats().resident_bytes, 0);
        });
    }

    #[test]
    fn least_recently_used_goes_first() {
        rt().block_on(async {
            // room for two 256-byte volumes
            let cache = VolumeCache::new(600);
            let load = || async { Ok::<_, Infallible>(cube(4)) };
            cache.get_or_load("a", load).await.unwrap();
            cache.get_or_load("b", load).await.unwrap();
            cache.get_or_load("a", load).await.unwrap();
            cache.get_or_load("c", load).await.unwrap();
            assert!(cache.get_or_load("a", load).await.unwrap().hit);
            assert!(!cache.get_or_load("b", load).await.unwrap().hit);
            assert_eq!(cache.stats().evictions, 2);
        });
    }

    proptest! {
        #[test]
        fn resident_bytes_stay_within_budget(
            budget in 0u64..4000,
            stream in prop::collection::vec(0usize..6, 1..60),
        ) {
            let rt = rt();
            let cache = VolumeCache::new(budget);
            for key in stream {
                let edge = 2 + key;
                let _ = rt.block_on(cache.get_or_load(&key.to_string(), || async {
                    Ok::<_, Infallible>(cube(edge))
                }));
                let s = cache.stats();
                prop_assert!(s.resident_bytes <= budget);
                let st = cache.lock();
                prop_assert_eq!(st.entries.values().map(|e| e.bytes).sum::<u64>(), st.resident);
            }
        }
    }
}
