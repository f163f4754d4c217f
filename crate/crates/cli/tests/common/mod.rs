#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cepmine_cli::commands::gen_data;
use cepmine_core::synth::TargetsFile;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    raw_call(app, req.body(body).unwrap()).await
}

pub async fn raw_call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, value)
}

/// Writes a synthetic stream and a run config into `dir`; returns the config path.
pub fn write_run(dir: &Path, expert: Value, schedule: Value) -> PathBuf {
    let corpus = TargetsFile::default_corpus();
    gen_data(&dir.join("stream.csv"), &corpus, 400, 3).unwrap();
    let config = json!({
        "mining": {
            "schema": corpus.schema,
            "max_len": 3,
            "max_conds": 2,
            "within_seconds": 5.0,
            "scale": 5,
            "jump_interval": 1,
            "window_len": 40,
            "seed": 4
        },
        "expert": expert,
        "schedule": schedule,
        "agent": {"trunk_hidden": 32, "head_hidden": 16},
        "predictor": {"hidden": [16, 16, 8]},
        "paths": {"data": "stream.csv", "output_dir": "out"}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}
