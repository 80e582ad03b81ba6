use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use unmix_core::pipeline::{
    run_pipeline, CandidateDecision, Decision, PipelineConfig, Report, ScriptedConfirmer, Session,
    SessionStatus,
};
use unmix_core::spectra::{parse_spectra_csv, ReferenceLibrary};
use unmix_core::synth::{gen_benchmark, BenchmarkConfig};
use unmix_server::{
    router, ApiSessionView, AppState, JobStatus, JobView, ServiceConfig, ServiceError,
};

struct Fixture {
    _tmp: tempfile::TempDir,
    cfg: ServiceConfig,
    mixture_csv: String,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let mut bench = BenchmarkConfig::benchmark_2(3);
        bench.p = 512;
        let b = gen_benchmark(&bench).unwrap();
        let bench_dir = tmp.path().join("bench");
        b.write_to(&bench_dir).unwrap();
        let mut cfg = ServiceConfig::new(tmp.path().join("data"));
        cfg.library_dir = Some(bench_dir.join("library"));
        let mixture_csv = std::fs::read_to_string(bench_dir.join("mixture.csv")).unwrap();
        Self {
            _tmp: tmp,
            cfg,
            mixture_csv,
        }
    }

    fn app(&self) -> Router {
        router(AppState::open(&self.cfg).unwrap(), self.cfg.body_limit)
    }

    fn create_body(&self) -> Value {
        json!({
            "mixture_csv": self.mixture_csv,
            "knowns": [{"name": "methanol", "bound": 0.5}, {"name": "ethanol", "bound": 0.5}],
            "total_bound": 0.5,
        })
    }

    fn data_dir(&self) -> &Path {
        &self.cfg.data_dir
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    send_raw(app, method, uri, body.map(|b| b.to_string()), &[]).await
}

async fn send_raw(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<String>,
    headers: &[(&str, &str)],
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

async fn create(app: &Router, fx: &Fixture) -> String {
    let (status, body) = send(app, "POST", "/sessions", Some(fx.create_body())).await;
    assert_eq!(
        status,
        StatusCode::CREATED,
        "{}",
        String::from_utf8_lossy(&body)
    );
    json_of(&body)["id"].as_str().unwrap().to_owned()
}

async fn view(app: &Router, id: &str) -> ApiSessionView {
    let (status, body) = send(app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

/// Starts a step and polls its job to completion.
async fn step(app: &Router, id: &str) -> JobView {
    let (status, body) = send(app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_eq!(
        status,
        StatusCode::ACCEPTED,
        "{}",
        String::from_utf8_lossy(&body)
    );
    let job: JobView = serde_json::from_slice(&body).unwrap();
    for _ in 0..3000 {
        let (status, body) = send(app, "GET", &format!("/jobs/{}", job.id), None).await;
        let polled: JobView = serde_json::from_slice(&body).unwrap();
        match polled.status {
            JobStatus::Running => assert_eq!(status, StatusCode::ACCEPTED),
            _ => {
                assert_eq!(status, StatusCode::OK);
                return polled;
            }
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {} did not finish", job.id);
}

async fn decide(app: &Router, id: &str, k: usize, body: Value) -> (StatusCode, Vec<u8>) {
    send(
        app,
        "POST",
        &format!("/sessions/{id}/candidates/{k}/decision"),
        Some(body),
    )
    .await
}

#[tokio::test]
async fn created_session_has_not_run() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app, &fx).await;
    let v = view(&app, &id).await;
    assert_eq!(v.status, SessionStatus::Created);
    assert!(v.iterations.is_empty() && v.candidates.is_empty());
    assert_eq!(v.knowns.len(), 2);
    assert!(fx
        .data_dir()
        .join("sessions")
        .join(format!("{id}.json"))
        .exists());
    let (status, _) = send(&app, "GET", &format!("/sessions/{id}/residual.csv"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn idempotency_key_returns_the_same_session() {
    let fx = Fixture::new();
    let app = fx.app();
    let body = Some(fx.create_body().to_string());
    let key = [("idempotency-key", "upload-1")];
    let (s1, b1) = send_raw(&app, "POST", "/sessions", body.clone(), &key).await;
    let (s2, b2) = send_raw(&app, "POST", "/sessions", body.clone(), &key).await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(json_of(&b1)["id"], json_of(&b2)["id"]);
    let files = std::fs::read_dir(fx.data_dir().join("sessions"))
        .unwrap()
        .count();
    assert_eq!(files, 1);
    // the key survives a restart
    let (s3, b3) = send_raw(&fx.app(), "POST", "/sessions", body, &key).await;
    assert_eq!(s3, StatusCode::OK);
    assert_eq!(json_of(&b1)["id"], json_of(&b3)["id"]);
}

#[tokio::test]
async fn malformed_uploads_are_rejected() {
    let fx = Fixture::new();
    let app = fx.app();
    let bad_grid = "wavenumber,a,b\n100,1,2\n90,1,2\n110,1,2\n";
    let (status, body) = send(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "mixture_csv": bad_grid })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        json_of(&body)["error"]
            .as_str()
            .unwrap()
            .contains("monoton"),
        "{}",
        String::from_utf8_lossy(&body)
    );

    let (status, _) = send_raw(&app, "POST", "/sessions", Some("{not json".into()), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/sessions", Some(json!({ "knowns": [] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut body = fx.create_body();
    body["knowns"] = json!([{"name": "unobtainium", "bound": 1.0}]);
    let (status, _) = send(&app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_payload_is_413() {
    let mut fx = Fixture::new();
    fx.cfg.body_limit = 4096;
    let app = fx.app();
    let (status, _) = send(&app, "POST", "/sessions", Some(fx.create_body())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(unmix_server::DEFAULT_BODY_LIMIT, 64 * 1024 * 1024);
}

#[tokio::test]
async fn unknown_resources_are_404() {
    let fx = Fixture::new();
    let app = fx.app();
    for (method, uri) in [
        ("GET", "/sessions/nope"),
        ("POST", "/sessions/nope/step"),
        ("GET", "/sessions/nope/residual.csv"),
        ("GET", "/sessions/nope/report"),
        ("GET", "/jobs/nope"),
    ] {
        let (status, _) = send(&app, method, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
    }
    let (status, _) = decide(&app, "nope", 0, json!({"action": "reject"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn library_lists_references() {
    let fx = Fixture::new();
    let (status, body) = send(&fx.app(), "GET", "/library", None).await;
    assert_eq!(status, StatusCode::OK);
    let names: Vec<String> = json_of(&body)
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap().to_owned())
        .collect();
    for n in ["acetonitrile", "ethanol", "ethylene_glycol", "methanol"] {
        assert!(names.iter().any(|x| x == n), "{names:?}");
    }
}

/// Confirms the strongest candidate whose best match is still unknown and
/// rejects the rest; returns the decisions sent.
async fn decide_round(app: &Router, id: &str, v: &ApiSessionView) -> Vec<CandidateDecision> {
    let known: Vec<&str> = v.knowns.iter().map(|k| k.name.as_str()).collect();
    let pick = v
        .candidates
        .iter()
        .filter(|c| {
            c.matches
                .first()
                .is_some_and(|m| m.similarity >= 0.9 && !known.contains(&m.name.as_str()))
        })
        .max_by(|a, b| a.score.total_cmp(&b.score))
        .map(|c| c.index);
    let mut sent = Vec::new();
    for c in &v.candidates {
        let d = if Some(c.index) == pick {
            Decision::Confirm {
                name: c.matches[0].name.clone(),
            }
        } else {
            Decision::Reject
        };
        let (status, body) = decide(app, id, c.index, serde_json::to_value(&d).unwrap()).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        sent.push(CandidateDecision {
            candidate: c.index,
            decision: d,
        });
    }
    sent
}

#[tokio::test]
async fn analyst_loop_reaches_convergence() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app, &fx).await;

    let job = step(&app, &id).await;
    assert_eq!(job.status, JobStatus::Succeeded, "{:?}", job.error);
    let v = job.session.unwrap();
    assert_eq!(v.status, SessionStatus::AwaitingConfirmation);
    assert_eq!(v.iterations.len(), 1);
    assert!(!v.candidates.is_empty());
    assert!(v
        .candidates
        .iter()
        .all(|c| c.awaiting_decision && c.spectrum.intensities.len() <= 512));

    // guards
    let (status, _) = send(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = decide(&app, &id, 99, json!({"action": "reject"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = decide(
        &app,
        &id,
        0,
        json!({"action": "confirm", "name": "methanol"}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = decide(&app, &id, 0, json!({"action": "maybe"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = send(&app, "GET", &format!("/sessions/{id}/residual.csv"), None).await;
    assert_eq!(status, StatusCode::OK);
    let residual = parse_spectra_csv::<f64, _>(body.as_slice()).unwrap();
    assert_eq!((residual.rows(), residual.cols()), (512, 5));

    let mut rounds = Vec::new();
    let mut v = v;
    while v.status == SessionStatus::AwaitingConfirmation {
        let round = decide_round(&app, &id, &v).await;
        if let Some(first) = round.first() {
            let (status, _) = decide(&app, &id, first.candidate, json!({"action": "reject"})).await;
            assert_eq!(status, StatusCode::CONFLICT);
        }
        rounds.push(round);
        let job = step(&app, &id).await;
        assert_eq!(job.status, JobStatus::Succeeded, "{:?}", job.error);
        v = job.session.unwrap();
        assert!(rounds.len() <= 10);
    }
    assert_eq!(v.status, SessionStatus::Converged);
    let norms: Vec<f64> = v.iterations.iter().map(|i| i.residual_norm).collect();
    assert!(
        norms.len() >= 2 && norms.windows(2).all(|w| w[1] < w[0]),
        "{norms:?}"
    );
    let names: Vec<&str> = v.knowns.iter().map(|k| k.name.as_str()).collect();
    assert!(
        names.contains(&"acetonitrile") && names.contains(&"ethylene_glycol"),
        "{names:?}"
    );

    // terminal step is a no-op
    let (status, body) = send(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::OK);
    let again: ApiSessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(again, v);

    // the downloaded report equals a local run with the same decisions
    let (status, downloaded) = send(&app, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    let data = parse_spectra_csv::<f64, _>(fx.mixture_csv.as_bytes()).unwrap();
    let library =
        ReferenceLibrary::load_dir(fx.cfg.library_dir.as_ref().unwrap(), data.grid()).unwrap();
    let bounds = unmix_core::spectra::ConcentrationBounds::from_pairs(
        [("methanol", 0.5), ("ethanol", 0.5)],
        Some(0.5),
    )
    .unwrap();
    let mut local =
        Session::new(id.clone(), data, library, bounds, PipelineConfig::default()).unwrap();
    let run = run_pipeline(&mut local, &mut ScriptedConfirmer::new(rounds));
    assert_eq!(
        String::from_utf8(downloaded).unwrap(),
        run.report.to_json().unwrap()
    );
    let _: Report = serde_json::from_str(&run.report.to_json().unwrap()).unwrap();
}

#[tokio::test]
async fn restart_keeps_completed_iterations() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app, &fx).await;
    step(&app, &id).await;
    let (status, _) = decide(&app, &id, 0, json!({"action": "reject"})).await;
    assert_eq!(status, StatusCode::OK);
    let before = view(&app, &id).await;
    drop(app);
    let restarted = fx.app();
    assert_eq!(view(&restarted, &id).await, before);
    assert_eq!(before.candidates[0].decision, Some(Decision::Reject));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_steps_are_serialised() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app, &fx).await;
    let uri = format!("/sessions/{id}/step");
    let (a, b) = tokio::join!(
        send(&app, "POST", &uri, None),
        send(&app, "POST", &uri, None)
    );
    let mut codes = [a.0, b.0];
    codes.sort();
    assert_eq!(codes, [StatusCode::ACCEPTED, StatusCode::CONFLICT]);
    assert_eq!(view(&app, &id).await.iterations.len(), 1);
}

#[tokio::test]
async fn non_loopback_bind_is_refused() {
    let mut cfg = ServiceConfig::new(tempfile::tempdir().unwrap().path());
    cfg.addr = "0.0.0.0:0".parse().unwrap();
    assert!(matches!(
        unmix_server::serve(cfg).await,
        Err(ServiceError::NotLoopback(_))
    ));
}
