use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use mivs_core::phantom::{PhantomSpec, SeriesIds};
use mivs_core::sync::{load_series_volume, SourceConfig, Store};
use mivs_server::{router, AppState, Config};
use serde_json::{json, Value};
use tower::ServiceExt;

fn mivs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mivs")).args(args).output().expect("spawn mivs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_phantom(spec: &PhantomSpec, dir: &Path, uid: &str) {
    let mut ids = SeriesIds::random("P1");
    ids.series_uid = uid.to_string();
    spec.write_series(dir, &ids).unwrap();
}

fn mpr_spec(dims: [usize; 3], k: usize) -> Value {
    json!({
        "origin": [0.0, 0.0, k as f64],
        "u_dir": [1.0, 0.0, 0.0],
        "v_dir": [0.0, 1.0, 0.0],
        "out_spacing": [1.0, 1.0],
        "out_size": [dims[0], dims[1]],
    })
}

#[test]
fn exit_code_table() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    write_phantom(&PhantomSpec::gradient([8, 8, 8], 0), &src, "1.2.840.1");
    let good = tmp.path().join("mpr.json");
    std::fs::write(&good, mpr_spec([8, 8, 8], 3).to_string()).unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"origin\": [0, 0]").unwrap();
    let invalid = tmp.path().join("invalid.json");
    let mut v = mpr_spec([8, 8, 8], 3);
    v["out_size"] = json!([0, 8]);
    std::fs::write(&invalid, v.to_string()).unwrap();
    let out = tmp.path().join("o.png");
    let (s, g, o) = (src.to_str().unwrap(), good.to_str().unwrap(), out.to_str().unwrap());

    let small = tmp.path().join("small");
    let r = mivs(&["phantom", "--kind", "sphere", "--dims", "4", "--out", small.to_str().unwrap()]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    assert!(!small.join("slice_0000.dcm").exists());

    assert_eq!(code(&mivs(&["render", "mpr"])), 2);
    assert_eq!(code(&mivs(&["render", "warp", "--series", "x", "--spec", g, "--out", o])), 2);
    assert_eq!(code(&mivs(&["frobnicate"])), 2);

    let missing = tmp.path().join("missing.json");
    let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", missing.to_str().unwrap(), "--out", o, "--source", s]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", g, "--out", o, "--source", "/nonexistent/dir"]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    let blocked = tmp.path().join("no/such/dir/o.png");
    let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", g, "--out", blocked.to_str().unwrap(), "--source", s]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));

    for spec in [&bad, &invalid] {
        let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", spec.to_str().unwrap(), "--out", o, "--source", s]);
        assert_eq!(code(&r), 4, "{}", stderr(&r));
    }
    let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", g, "--out", o, "--source", s, "--window", "40,-1"]);
    assert_eq!(code(&r), 4, "{}", stderr(&r));

    let r = mivs(&["render", "mpr", "--series", "9.9.9.404", "--spec", g, "--out", o, "--source", s]);
    assert_eq!(code(&r), 5);
    assert!(stderr(&r).contains("9.9.9.404"), "{}", stderr(&r));

    // Nothing listens on a port we just released.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let r = mivs(&["bench", "--url", &url, "--username", "a", "--password", "b", "--users", "1", "--duration", "0.2"]);
    assert_eq!(code(&r), 6, "{}", stderr(&r));

    let r = mivs(&["render", "mpr", "--series", "1.2.840.1", "--spec", g, "--out", o, "--source", s]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
}

#[test]
fn phantom_gradient_reassembles_to_analytic_field() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("g");
    let r = mivs(&["phantom", "--kind", "gradient", "--dims", "32", "--out", dir.to_str().unwrap(), "--series-uid", "1.2.3.32"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(report["files"], 32);
    assert_eq!(report["series_uid"], "1.2.3.32");
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 32);

    let store = Store::in_memory();
    store.scan(&[SourceConfig {
        source_id: "s".into(),
        root_path: dir,
        poll_interval_secs: 5,
        center_label: String::new(),
    }]);
    let catalog = store.snapshot();
    let v = load_series_volume(catalog.primary_series("1.2.3.32").unwrap()).unwrap();
    assert_eq!(v.dims(), [32, 32, 32]);
    for k in 0..32 {
        for j in 0..32 {
            for i in 0..32 {
                assert!((v.get(i, j, k) as f64 - i as f64).abs() <= 0.5);
            }
        }
    }
}

#[test]
fn phantom_sphere_uses_value_and_background() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    let r = mivs(&[
        "phantom", "--kind", "sphere", "--dims", "16,16,12", "--radius", "4", "--value", "250", "--background", "-50",
        "--out", dir.to_str().unwrap(), "--series-uid", "1.9",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let store = Store::in_memory();
    store.scan(&[SourceConfig {
        source_id: "s".into(),
        root_path: dir,
        poll_interval_secs: 5,
        center_label: String::new(),
    }]);
    let v = load_series_volume(store.snapshot().primary_series("1.9").unwrap()).unwrap();
    let c = [7.5, 7.5, 5.5];
    for k in 0..12 {
        for j in 0..16 {
            for i in 0..16 {
                let d = ((i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2)).sqrt();
                let want = if d <= 4.0 { 250.0 } else { -50.0 };
                assert_eq!(v.get(i, j, k) as f64, want, "voxel {i},{j},{k}");
            }
        }
    }
}

#[test]
fn ingest_reports_events_and_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    write_phantom(&PhantomSpec::gradient([8, 8, 8], 1), &src, "1.5");
    std::fs::write(src.join("junk.dcm"), b"not a dicom file").unwrap();
    let store = tmp.path().join("store");
    let args = ["ingest", "--source", src.to_str().unwrap(), "--store", store.to_str().unwrap()];
    let r = mivs(&args);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let summary: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(summary["added"], 8);
    assert_eq!(summary["rejected"], 1);
    assert_eq!(summary["series"], 1);
    assert!(stderr(&r).contains("junk.dcm"));

    // Same durable store: a rescan finds nothing new.
    let r = mivs(&args);
    let summary: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!((summary["added"].as_u64(), summary["rejected"].as_u64()), (Some(0), Some(0)));
    assert_eq!(summary["instances"], 8);

    let r = mivs(&["ingest", "--source", tmp.path().join("absent").to_str().unwrap()]);
    assert_eq!(code(&r), 3);
}

#[tokio::test]
async fn cli_render_matches_api_render() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    write_phantom(&PhantomSpec::sphere([20, 20, 10], 6.0, 300.0), &src, "1.7");

    let mut config = Config::new("admin", "admin-password-1");
    config.request_log = Some(tmp.path().join("requests.log"));
    config.sources = vec![SourceConfig {
        source_id: "local".into(),
        root_path: src.clone(),
        poll_interval_secs: 5,
        center_label: String::new(),
    }];
    let state = AppState::new(config).unwrap();
    state.scan_sources();
    let app = router(state);
    let login = app
        .clone()
        .oneshot(
            Request::post("/login")
                .header("content-type", "application/json")
                .body(Body::from(json!({"username": "admin", "password": "admin-password-1"}).to_string()))
                .unwrap(),
        )
        .await
        .unwrap();
    let body = axum::body::to_bytes(login.into_body(), usize::MAX).await.unwrap();
    let token = serde_json::from_slice::<Value>(&body).unwrap()["token"].as_str().unwrap().to_string();

    let slab = json!({"plane": mpr_spec([20, 20, 10], 4), "thickness": 4.0, "n_samples": 5, "mode": "mean"});
    let cases = [
        ("mpr", mpr_spec([20, 20, 10], 5), None),
        ("mpr", mpr_spec([20, 20, 10], 5), Some(json!({"center": 100.0, "width": 500.0}))),
        ("slab", slab, None),
    ];
    for (i, (mode, spec, window)) in cases.into_iter().enumerate() {
        let mut req = json!({"series_uid": "1.7", "spec": spec});
        if let Some(w) = &window {
            req["window"] = w.clone();
        }
        let resp = app
            .clone()
            .oneshot(
                Request::post(format!("/render/{mode}"))
                    .header("authorization", format!("Bearer {token}"))
                    .header("content-type", "application/json")
                    .body(Body::from(req.to_string()))
                    .unwrap(),
            )
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let api_png = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();

        let spec_path = tmp.path().join(format!("spec{i}.json"));
        std::fs::write(&spec_path, spec.to_string()).unwrap();
        let out = tmp.path().join(format!("cli{i}.png"));
        let mut args = vec![
            "render".to_string(), mode.to_string(), "--series".into(), "1.7".into(),
            "--spec".into(), spec_path.display().to_string(), "--out".into(), out.display().to_string(),
            "--source".into(), src.display().to_string(),
        ];
        if let Some(w) = &window {
            args.push("--window".into());
            args.push(format!("{},{}", w["center"], w["width"]));
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let r = mivs(&args);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        assert_eq!(std::fs::read(&out).unwrap(), api_png.to_vec(), "case {i} ({mode})");
    }
}

#[tokio::test]
async fn serve_finishes_in_flight_request_on_sigint() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    write_phantom(&PhantomSpec::sphere([96, 96, 96], 30.0, 400.0), &src, "1.96");
    let log = tmp.path().join("requests.log");
    let config = tmp.path().join("mivs.toml");
    std::fs::write(
        &config,
        format!(
            "listen = \"127.0.0.1:0\"\nrequest_log = {:?}\n\n[admin]\nusername = \"admin\"\npassword = \"admin-password-1\"\n\n[[sources]]\nsource_id = \"local\"\nroot_path = {:?}\n",
            log.display().to_string(),
            src.display().to_string()
        ),
    )
    .unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_mivs"))
        .args(["serve", "--config", config.to_str().unwrap()])
        .env_remove("MIVS_LISTEN")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("listen banner").to_string();

    let http = reqwest::Client::new();
    let login: Value = serde_json::from_slice(
        &http
            .post(format!("{base}/login"))
            .header("content-type", "application/json")
            .body(json!({"username": "admin", "password": "admin-password-1"}).to_string())
            .send()
            .await
            .unwrap()
            .bytes()
            .await
            .unwrap(),
    )
    .unwrap();
    let token = login["token"].as_str().unwrap().to_string();

    // Cold volume load plus a large ray cast keeps this request busy.
    let vr = json!({
        "series_uid": "1.96",
        "spec": {
            "camera": {"eye": [47.5, -250.0, 47.5], "look_at": [47.5, 47.5, 47.5], "up": [0, 0, 1], "fov_deg": 30.0, "out_size": [384, 384]},
            "transfer_function": {"breakpoints": [
                {"value": 0.0, "alpha": 0.0, "color": [0, 0, 0]},
                {"value": 400.0, "alpha": 0.05, "color": [1, 1, 1]}
            ]},
            "step": 0.25
        }
    });
    let started = std::time::Instant::now();
    let request = tokio::spawn({
        let (http, base) = (http.clone(), base.clone());
        async move {
            let resp = http
                .post(format!("{base}/render/vr"))
                .bearer_auth(token)
                .header("content-type", "application/json")
                .body(vr.to_string())
                .send()
                .await
                .unwrap();
            let status = resp.status();
            (status, resp.bytes().await.unwrap(), std::time::Instant::now())
        }
    });
    tokio::time::sleep(Duration::from_millis(150)).await;
    let signalled = std::time::Instant::now();
    let kill = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(kill.success());

    let (status, body, finished) = request.await.unwrap();
    assert_eq!(status, reqwest::StatusCode::OK);
    assert!(body.starts_with(b"\x89PNG"));
    let status = tokio::task::spawn_blocking(move || child.wait()).await.unwrap().unwrap();
    assert_eq!(status.code(), Some(0));
    if finished <= signalled {
        eprintln!("note: render finished {:?} after start, before the signal", finished - started);
    }

    let lines = std::fs::read_to_string(&log).unwrap();
    assert!(lines.lines().any(|l| l.contains("/render/vr") && l.contains("200")), "{lines}");
}
