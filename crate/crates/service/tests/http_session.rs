use std::sync::Arc;

use anthro_observer::io::generate_dataset;
use anthro_observer::roc::{dprime, wilcoxon_auc};
use anthro_observer::stackgen::{GenConfig, Label};
use anthro_observer::study::{Session, StudyPlan, StudyResults};
use anthro_service::{load_session, router, Store};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

const BLIND_WORDS: [&str; 5] = ["label", "level", "stack_id", "lesion", "healthy"];

struct Fixture {
    _tmp: tempfile::TempDir,
    data: std::path::PathBuf,
    sessions: std::path::PathBuf,
    app: axum::Router,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let sessions = tmp.path().join("sessions");
    generate_dataset(&GenConfig::default(), 6, &[0, 2, 4], &data).unwrap();
    let store = Store::open(&data, &sessions).unwrap();
    Fixture {
        app: router(Arc::new(store)),
        _tmp: tmp,
        data,
        sessions,
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn assert_blind(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes).to_lowercase();
    for w in BLIND_WORDS {
        assert!(!text.contains(w), "payload leaks {w:?}: {text}");
    }
}

fn decode_png(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Grayscale);
    assert_eq!(info.bit_depth, png::BitDepth::Eight);
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

/// Scores by central brightness of frame 16 relative to the frame mean.
fn scripted_score(pixels: &[u8], width: usize) -> i64 {
    let c = width / 2;
    let mut centre = Vec::new();
    for r in c - 2..=c + 2 {
        for col in c - 2..=c + 2 {
            centre.push(f64::from(pixels[r * width + col]));
        }
    }
    let mean = pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / pixels.len() as f64;
    let d = centre.iter().sum::<f64>() / centre.len() as f64 - mean;
    match d {
        d if d < -10.0 => 0,
        d if d < 10.0 => 1,
        d if d < 30.0 => 2,
        _ => 3,
    }
}

fn oracle(session: &Session, scores: &[(usize, u8)]) -> Vec<(u8, f64, f64)> {
    let mut levels: Vec<u8> = session.trials.iter().map(|t| t.level).collect();
    levels.sort_unstable();
    levels.dedup();
    levels
        .into_iter()
        .map(|level| {
            let pick = |label| {
                scores
                    .iter()
                    .filter(|(i, _)| session.trials[*i].level == level && session.trials[*i].label == label)
                    .map(|&(_, s)| f64::from(s))
                    .collect::<Vec<_>>()
            };
            let auc = wilcoxon_auc(&pick(Label::Lesion), &pick(Label::Healthy)).unwrap();
            (level, auc, dprime(auc).unwrap().value)
        })
        .collect()
}

#[tokio::test]
async fn scripted_reader_session() {
    let fx = fixture();
    let plan = StudyPlan {
        stacks_per_condition: 5,
        order_seed: 3,
        ..StudyPlan::default()
    };
    let (status, body) = call(&fx.app, "POST", "/api/sessions", Some(serde_json::to_value(&plan).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_blind(&body);
    let view: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let id = view["session_id"].as_str().unwrap().to_string();
    assert_eq!(view["n_trials"], 30);
    assert_eq!(view["n_frames"], 32);

    let (status, body) = call(&fx.app, "GET", &format!("/api/sessions/{id}/results"), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_blind(&body);

    let tokens: Vec<String> = view["trials"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["token"].as_str().unwrap().to_string())
        .collect();
    let mut submitted = Vec::new();
    for (k, token) in tokens.iter().enumerate() {
        let uri = format!("/api/sessions/{id}/trials/{k}/frames/16");
        let (status, png_a) = call(&fx.app, "GET", &uri, None).await;
        assert_eq!(status, StatusCode::OK);
        let (_, png_b) = call(&fx.app, "GET", &uri, None).await;
        assert_eq!(png_a, png_b, "frames are deterministic");
        // The token addresses the same trial.
        let (_, png_c) = call(&fx.app, "GET", &format!("/api/sessions/{id}/trials/{token}/frames/16"), None).await;
        assert_eq!(png_a, png_c);
        let (w, h, pixels) = decode_png(&png_a);
        assert_eq!((w, h), (64, 64));
        let score = scripted_score(&pixels, w as usize);

        let (status, body) = call(
            &fx.app,
            "POST",
            &format!("/api/sessions/{id}/trials/{k}/score"),
            Some(serde_json::json!({ "score": score, "response_time_ms": 1000 + k as u64 })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let ack: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(ack["n_scored"], k + 1);
        submitted.push((k, score as u8));
        if k + 1 < tokens.len() {
            assert_blind(&body);
            let (status, body) = call(&fx.app, "GET", &format!("/api/sessions/{id}/results"), None).await;
            assert_eq!(status, StatusCode::FORBIDDEN);
            assert_blind(&body);
            let (_, body) = call(&fx.app, "GET", &format!("/api/sessions/{id}"), None).await;
            assert_blind(&body);
        }
    }

    let (status, body) = call(&fx.app, "GET", &format!("/api/sessions/{id}/results"), None).await;
    assert_eq!(status, StatusCode::OK);
    let results: StudyResults = serde_json::from_slice(&body).unwrap();
    assert_eq!(results.n_scored, 30);
    let hist_total: usize = results.histograms.iter().flat_map(|h| &h.counts).sum();
    assert_eq!(hist_total, 30);

    // Oracle: direct roc-module computation from the server-side plan.
    let dir = fx.sessions.join(&id);
    let session: Session = serde_json::from_str(&std::fs::read_to_string(dir.join("session.json")).unwrap()).unwrap();
    let expected = oracle(&session, &submitted);
    assert_eq!(results.levels.len(), expected.len());
    for (got, (level, auc, dp)) in results.levels.iter().zip(expected) {
        assert_eq!(got.level, level);
        assert_eq!(got.n_pos, 5);
        assert_eq!(got.n_neg, 5);
        assert_eq!(got.auc, Some(auc));
        assert_eq!(got.dprime, Some(dp));
    }

    // Replaying the log reproduces the results exactly.
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30);
    let replayed = load_session(&dir).unwrap();
    assert_eq!(anthro_observer::study::study_results(&replayed).unwrap(), results);

    // So does a restarted service.
    let app2 = router(Arc::new(Store::open(&fx.data, &fx.sessions).unwrap()));
    let (status, body2) = call(&app2, "GET", &format!("/api/sessions/{id}/results"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body2, body);
}

#[tokio::test]
async fn submission_errors() {
    let fx = fixture();
    let plan = serde_json::json!({
        "conditions": [{"level": 0, "label": "healthy"}, {"level": 0, "label": "lesion"}],
        "stacks_per_condition": 2,
        "order_seed": 9
    });
    let (status, body) = call(&fx.app, "POST", "/api/sessions", Some(plan)).await;
    assert_eq!(status, StatusCode::CREATED);
    let view: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let id = view["session_id"].as_str().unwrap();
    let score_uri = format!("/api/sessions/{id}/trials/0/score");

    for bad in [4, -1, 300] {
        let (status, _) = call(&fx.app, "POST", &score_uri, Some(serde_json::json!({"score": bad}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "score {bad}");
    }
    let (status, _) = call(&fx.app, "POST", &score_uri, Some(serde_json::json!({"score": 2}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&fx.app, "POST", &score_uri, Some(serde_json::json!({"score": 3}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let log = std::fs::read_to_string(fx.sessions.join(id).join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("\"score\":2"), "first record preserved");

    let uri = |t: &str, f: usize| format!("/api/sessions/{id}/trials/{t}/frames/{f}");
    assert_eq!(call(&fx.app, "GET", &uri("0", 0), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&fx.app, "GET", &uri("0", 33), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&fx.app, "GET", &uri("0", 32), None).await.0, StatusCode::OK);
    assert_eq!(call(&fx.app, "GET", &uri("99", 1), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&fx.app, "GET", &uri("nope", 1), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        call(&fx.app, "GET", "/api/sessions/unknown/results", None).await.0,
        StatusCode::NOT_FOUND
    );

    let too_big = serde_json::json!({"stacks_per_condition": 50});
    let (status, _) = call(&fx.app, "POST", "/api/sessions", Some(too_big)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
