use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clap::ValueEnum;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::CliError;

#[derive(Clone, Copy, ValueEnum)]
pub enum Endpoint {
    RenderSlab,
    RenderMpr,
    Series,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    #[arg(long)]
    username: String,
    #[arg(long, env = "MIVS_PASSWORD")]
    password: String,
    /// Concurrent simulated users.
    #[arg(long, default_value_t = 8)]
    users: usize,
    /// Seconds to run.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, value_enum, default_value = "render-slab")]
    endpoint: Endpoint,
    /// Series to render; the first listed series when omitted.
    #[arg(long)]
    series: Option<String>,
    /// Slab thickness in mm.
    #[arg(long, default_value_t = 10.0)]
    thickness: f64,
    #[arg(long, default_value_t = 11)]
    samples: usize,
}

#[derive(Deserialize)]
struct VolumeInfo {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    directions: [[f64; 3]; 3],
}

struct Client {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl Client {
    async fn get_json(&self, path: &str) -> Result<Value, CliError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(|e| CliError::Connection(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| CliError::Connection(e.to_string()))?;
        if !status.is_success() {
            return Err(CliError::Failed(format!("GET {path}: {status} {}", String::from_utf8_lossy(&body))));
        }
        serde_json::from_slice(&body).map_err(|e| CliError::Invalid(format!("GET {path}: {e}")))
    }
}

async fn login(http: &reqwest::Client, base: &str, user: &str, password: &str) -> Result<String, CliError> {
    let resp = http
        .post(format!("{base}/login"))
        .header("content-type", "application/json")
        .body(json!({ "username": user, "password": password }).to_string())
        .send()
        .await
        .map_err(|e| CliError::Connection(e.to_string()))?;
    let status = resp.status();
    let body = resp.bytes().await.map_err(|e| CliError::Connection(e.to_string()))?;
    if !status.is_success() {
        return Err(CliError::Failed(format!("login: {status} {}", String::from_utf8_lossy(&body))));
    }
    let v: Value = serde_json::from_slice(&body).map_err(|e| CliError::Invalid(format!("login: {e}")))?;
    v["token"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::Invalid("login response without token".into()))
}

/// Axial plane through the middle slice, covering the whole slice at
/// native resolution.
fn mid_axial_plane(info: &VolumeInfo) -> Value {
    let [nx, ny, nz] = info.dims;
    let [sx, sy, sz] = info.spacing;
    let mid = (nz as f64 - 1.0) / 2.0 * sz;
    let origin: Vec<f64> = (0..3).map(|a| info.origin[a] + info.directions[2][a] * mid).collect();
    json!({
        "origin": origin,
        "u_dir": info.directions[0],
        "v_dir": info.directions[1],
        "out_spacing": [sx, sy],
        "out_size": [nx, ny],
    })
}

#[derive(Default)]
struct Tally {
    latencies_ms: Vec<f64>,
    errors: usize,
    bodies: HashSet<u64>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn digest(bytes: &[u8]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

pub fn run(a: Args) -> Result<(), CliError> {
    if a.users == 0 || !(a.duration > 0.0) {
        return Err(CliError::Usage("--users and --duration must be positive".into()));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(bench(a))
}

async fn bench(a: Args) -> Result<(), CliError> {
    let base = a.url.trim_end_matches('/').to_string();
    let http = reqwest::Client::new();
    let token = login(&http, &base, &a.username, &a.password).await?;
    let client = Arc::new(Client { http, base, token });

    let uid = match &a.series {
        Some(uid) => uid.clone(),
        None => client.get_json("/series?limit=1").await?["items"][0]["series_uid"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CliError::Failed("server has no series to render".into()))?,
    };
    let request = match a.endpoint {
        Endpoint::Series => None,
        mode => {
            let detail = client.get_json(&format!("/series/{uid}")).await?;
            let info: VolumeInfo = serde_json::from_value(detail["volume"].clone())
                .map_err(|e| CliError::Invalid(format!("volume info: {e}")))?;
            let plane = mid_axial_plane(&info);
            let (path, spec) = match mode {
                Endpoint::RenderSlab => (
                    "/render/slab",
                    json!({ "plane": plane, "thickness": a.thickness, "n_samples": a.samples, "mode": "mip" }),
                ),
                _ => ("/render/mpr", plane),
            };
            Some((path, json!({ "series_uid": uid, "spec": spec }).to_string()))
        }
    };
    let request = Arc::new(request);

    let tally = Arc::new(Mutex::new(Tally::default()));
    let deadline = Instant::now() + Duration::from_secs_f64(a.duration);
    let started = Instant::now();
    let mut tasks = Vec::new();
    for _ in 0..a.users {
        let (client, request, tally, uid) = (client.clone(), request.clone(), tally.clone(), uid.clone());
        tasks.push(tokio::spawn(async move {
            while Instant::now() < deadline {
                let t0 = Instant::now();
                let req = match request.as_ref() {
                    Some((path, body)) => client
                        .http
                        .post(format!("{}{path}", client.base))
                        .header("content-type", "application/json")
                        .body(body.clone()),
                    None => client.http.get(format!("{}/series/{uid}", client.base)),
                };
                let result = match req.bearer_auth(&client.token).send().await {
                    Ok(resp) if resp.status().is_success() => resp.bytes().await.ok(),
                    _ => None,
                };
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let mut t = tally.lock().unwrap();
                match result {
                    Some(body) => {
                        t.latencies_ms.push(ms);
                        t.bodies.insert(digest(&body));
                    }
                    None => t.errors += 1,
                }
            }
        }));
    }
    for t in tasks {
        t.await.map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let elapsed = started.elapsed().as_secs_f64();

    let mut t = std::mem::take(&mut *tally.lock().unwrap());
    t.latencies_ms.sort_by(f64::total_cmp);
    let ok = t.latencies_ms.len();
    // Render responses must be identical across users; extra variants count as errors.
    let mismatched = if request.is_some() { t.bodies.len().saturating_sub(1) } else { 0 };
    let errors = t.errors + mismatched;
    println!(
        "{}",
        json!({
            "endpoint": match a.endpoint {
                Endpoint::RenderSlab => "render-slab",
                Endpoint::RenderMpr => "render-mpr",
                Endpoint::Series => "series",
            },
            "series_uid": uid,
            "users": a.users,
            "duration_s": elapsed,
            "requests": ok + t.errors,
            "errors": errors,
            "throughput_rps": ok as f64 / elapsed,
            "distinct_responses": t.bodies.len(),
            "latency_ms": {
                "p50": percentile(&t.latencies_ms, 50.0),
                "p95": percentile(&t.latencies_ms, 95.0),
                "p99": percentile(&t.latencies_ms, 99.0),
                "max": t.latencies_ms.last().copied().unwrap_or(0.0),
            },
        })
    );
    if errors > 0 {
        return Err(CliError::Failed(format!("{errors} failed requests")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn mid_plane_centres_the_slab() {
        let info = VolumeInfo {
            dims: [4, 6, 9],
            spacing: [0.5, 0.5, 2.0],
            origin: [10.0, 20.0, 30.0],
            directions: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        let p = mid_axial_plane(&info);
        assert_eq!(p["origin"], json!([10.0, 20.0, 38.0]));
        assert_eq!(p["out_size"], json!([4, 6]));
    }
}
