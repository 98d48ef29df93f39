use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use poetgen_core::decoding::{Backend, BackendError, Context, Decoder, RemoteBackend, ScriptedBackend, UniformBackend};
use poetgen_core::forms::FormRegistry;
use poetgen_core::validation::{ValidationReport, Validator};
use poetgen_core::vocab::{PrunedVocabulary, Vocabulary};
use poetgen_server::{router, AppState, ErrorBody, FormInfo, GenerateResponse, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURE_POEM_2: &str = "生日恰逢今日，母爱万金难拟。恩重更情浓，岁岁同歌同醉。同醉，同醉，寿星高上天际。";

fn vocab() -> Arc<PrunedVocabulary> {
    static V: OnceLock<Arc<PrunedVocabulary>> = OnceLock::new();
    V.get_or_init(|| Arc::new(Vocabulary::demo().prune())).clone()
}

fn app_with(backend: Arc<dyn Backend>, config: ServiceConfig) -> Router {
    let decoder = Decoder::new(vocab()).unwrap();
    router(AppState::new(
        FormRegistry::bundled(),
        decoder,
        backend,
        Validator::default(),
        config,
    ))
}

fn app() -> Router {
    app_with(Arc::new(UniformBackend::new(vocab().len())), ServiceConfig::default())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

#[tokio::test]
async fn forms_lists_the_registry() {
    let (status, body) = call(&app(), Method::GET, "/api/forms", None).await;
    assert_eq!(status, StatusCode::OK);
    let forms: Vec<FormInfo> = serde_json::from_value(body).unwrap();
    assert_eq!(forms.len(), 10);
    let r = forms.iter().find(|f| f.name == "Rumengling").unwrap();
    assert_eq!(r.total_chars, 33);
    assert_eq!(r.line_counts, vec![6, 6, 5, 6, 2, 2, 6]);
    assert_eq!(r.masked_template.matches("[M]").count(), 33);
}

#[tokio::test]
async fn empty_registry_lists_nothing() {
    let decoder = Decoder::new(vocab()).unwrap();
    let state = AppState::new(
        FormRegistry::new(vec![]).unwrap(),
        decoder,
        Arc::new(UniformBackend::new(vocab().len())),
        Validator::default(),
        ServiceConfig::default(),
    );
    let (status, body) = call(&router(state), Method::GET, "/api/forms", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn strict_generation_validates() {
    let app = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({"prompt": "Write me a poem for my mother's birthday.", "form": "Rumengling", "strict": true, "seed": 7})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: GenerateResponse = serde_json::from_value(body).unwrap();
    assert!(resp.report.passes);
    assert_eq!(resp.seed, 7);
    assert_eq!(resp.masked_template.matches("[M]").count(), 33);
}

#[tokio::test]
async fn scripted_backend_returns_the_fixture() {
    let backend = ScriptedBackend::from_text(&vocab(), FIXTURE_POEM_2).unwrap();
    let app = app_with(Arc::new(backend), ServiceConfig::default());
    let (status, body) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({"prompt": "Write me a poem for my mother's birthday.", "form": "Rumengling"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["poem"], FIXTURE_POEM_2);
    assert_eq!(body["report"]["passes"], true);
    assert_eq!(body["stop_reason"], "eop");
}

#[tokio::test]
async fn request_errors_are_400() {
    let app = app_with(
        Arc::new(UniformBackend::new(vocab().len())),
        ServiceConfig {
            max_prompt_chars: 10,
            ..Default::default()
        },
    );
    let cases = [
        json!({"prompt": "x", "form": "NoSuchForm"}),
        json!({"prompt": "x".repeat(11), "form": "Rumengling"}),
        json!({"prompt": "  ", "form": "Rumengling"}),
        json!({"prompt": "[EOP]", "form": "Rumengling"}),
        json!({"form": "Rumengling"}),
    ];
    for case in cases {
        let (status, body) = call(&app, Method::POST, "/api/generate", Some(case.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{case}");
        let err: ErrorBody = serde_json::from_value(body).unwrap();
        assert!(!err.error.is_empty());
    }
    let (_, body) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({"prompt": "x", "form": "NoSuchForm"})),
    )
    .await;
    assert!(body["error"].as_str().unwrap().contains("NoSuchForm"));
}

#[tokio::test]
async fn unreachable_backend_is_503() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let backend = RemoteBackend::new(addr, vocab().len()).with_timeout(std::time::Duration::from_millis(300));
    let app = app_with(Arc::new(backend), ServiceConfig::default());
    let (status, _) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({"prompt": "x", "form": "Rumengling"})),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

struct Breaks(ScriptedBackend);

impl Backend for Breaks {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }
    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        if ctx.generated.len() == 4 {
            return Err(BackendError::Failed("out of memory".into()));
        }
        self.0.logits(ctx)
    }
}

#[tokio::test]
async fn decode_failure_is_422_with_partial_text() {
    let backend = Breaks(ScriptedBackend::from_text(&vocab(), FIXTURE_POEM_2).unwrap());
    let app = app_with(Arc::new(backend), ServiceConfig::default());
    let (status, body) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some(json!({"prompt": "x", "form": "Rumengling"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["partial"], "生日恰逢");
}

#[tokio::test]
async fn validate_endpoint() {
    let app = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/api/validate",
        Some(json!({"poem": FIXTURE_POEM_2, "form": "Rumengling"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let report: ValidationReport = serde_json::from_value(body).unwrap();
    assert!(report.passes);
    assert_eq!(report.actual_counts(), vec![6, 6, 5, 6, 2, 2, 6]);

    let long = FIXTURE_POEM_2.replacen("生日恰逢今日", "生日恰逢今日好", 1);
    let (_, body) = call(
        &app,
        Method::POST,
        "/api/validate",
        Some(json!({"poem": long, "form": "Rumengling"})),
    )
    .await;
    assert_eq!(body["passes"], false);
    assert_eq!(body["per_line"][0]["match"], false);
    assert_eq!(body["excess_positions"], json!([6]));

    let (status, _) = call(
        &app,
        Method::POST,
        "/api/validate",
        Some(json!({"poem": "x", "form": "Nope"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let resp = app()
        .oneshot(
            Request::builder()
                .method(Method::OPTIONS)
                .uri("/api/generate")
                .header(header::ORIGIN, "http://localhost:5173")
                .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
                .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn static_assets_are_served_when_configured() {
    let dir = std::env::temp_dir().join(format!("poetgen-static-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<h1>ui</h1>").unwrap();
    let app = app_with(
        Arc::new(UniformBackend::new(vocab().len())),
        ServiceConfig {
            static_dir: Some(dir.clone()),
            ..Default::default()
        },
    );
    let resp = app
        .oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&bytes[..], b"<h1>ui</h1>");
    std::fs::remove_dir_all(dir).unwrap();
}
