use std::collections::BTreeMap;
use std::sync::Arc;

use annotsvc::{router, RoundInfo, RoundStatus, Service, ServiceConfig};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use dialsec::annotate::{AnnotationTask, SimulatedAnnotator, TaskStatus};
use dialsec::bootstrap::{LabeledSentence, Provenance};
use dialsec::corpus::{generate_synthetic_corpus, Corpus, GroundTruth, SynthConfig};
use dialsec::embed::EmbeddingProvider;
use dialsec::metrics::SimilarityConfig;
use dialsec::model::TrainConfig;
use dialsec::refine::{PendingRound, RefineConfig, RefineContext, RoundState, RoundStore};
use dialsec::{ClusterVerdict, SectionLabel};
use rand::Rng;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const TOKEN: &str = "s3cret";

struct Fixture {
    _dir: TempDir,
    root: std::path::PathBuf,
    corpus: Arc<Corpus>,
    gold: GroundTruth,
    provider: EmbeddingProvider,
    config: RefineConfig,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let synth = SynthConfig {
            dialogues: 30,
            ..SynthConfig::default()
        };
        let (corpus, gold) = generate_synthetic_corpus(&synth, seed).unwrap();
        let mut config = RefineConfig {
            train: TrainConfig {
                epochs: 3,
                hidden: 16,
                ..TrainConfig::default()
            },
            rounds: 1,
            similarity: SimilarityConfig {
                per_class: 50,
                pairs: 500,
                bins: 10,
            },
            seed,
            ..RefineConfig::default()
        };
        config.cluster.k_max = 5;
        let dir = tempfile::tempdir().unwrap();
        Self {
            root: dir.path().join("rounds"),
            _dir: dir,
            corpus: Arc::new(corpus),
            gold,
            provider: EmbeddingProvider::featurizer(64, seed),
            config,
        }
    }

    fn store(&self) -> RoundStore {
        RoundStore::new(&self.root)
    }

    fn context(&self) -> RefineContext<'_, f32> {
        RefineContext::new(&self.corpus, &self.provider, Some(&self.gold), self.config.clone()).unwrap()
    }

    /// State 0 from gold labels, persisted, plus the clusters of round 1.
    fn prepare(&self) -> (RoundState<f32>, PendingRound<f32>) {
        let ctx = self.context();
        let labels: Vec<LabeledSentence> = self
            .corpus
            .professional_sentences()
            .map(|(r, _, _)| LabeledSentence {
                label: self.gold.get(&r).map_or(ClusterVerdict::Other, ClusterVerdict::from),
                sentence: r,
                round: 0,
                provenance: Provenance::Bootstrap,
                source_cluster: None,
            })
            .collect();
        let state = ctx.initial_state(labels).unwrap();
        self.store().save_state(&state, self.config.seed).unwrap();
        let pending = ctx.prepare_round(&state).unwrap();
        (state, pending)
    }

    fn service(&self, config: ServiceConfig) -> Arc<Service> {
        Arc::new(Service::open(self.corpus.clone(), self.store(), config).unwrap())
    }

    /// Service with round 1 open.
    fn open(&self, config: ServiceConfig) -> (Arc<Service>, RoundState<f32>) {
        let (state, pending) = self.prepare();
        let svc = self.service(config);
        svc.open_round(pending).unwrap();
        (svc, state)
    }
}

fn authed() -> ServiceConfig {
    ServiceConfig {
        token: Some(TOKEN.into()),
        default_annotator: Some("fallback".into()),
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call_raw(app, method, uri, body, Some(TOKEN)).await;
    let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
    (status, value)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn task_ids(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|t| t["task_id"].as_str().unwrap().to_string())
        .collect()
}

fn assert_error_shape(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
    assert!(v.get("details").is_some(), "{v}");
}

async fn judge_all(app: &Router, fx: &Fixture, round: usize) {
    let annotator = SimulatedAnnotator::new(&fx.gold, 0.7);
    let (_, tasks) = call(app, "GET", &format!("/api/rounds/{round}/clusters?status=pending"), None).await;
    let tasks: Vec<AnnotationTask> = serde_json::from_value(tasks).unwrap();
    for t in tasks {
        let v = annotator.verdict_for(&t.sample).unwrap();
        let (s, _) = call(app, "POST", &format!("/api/tasks/{}/verdict", t.task_id), Some(json!({ "verdict": v.as_str() }))).await;
        assert_eq!(s, StatusCode::OK);
    }
}

#[tokio::test]
async fn requests_without_the_token_are_rejected() {
    let fx = Fixture::new(11);
    let (svc, _) = fx.open(authed());
    let app = router(svc);
    for token in [None, Some("wrong")] {
        let (status, body) = call_raw(&app, "GET", "/api/rounds", None, token).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
        assert_error_shape(&serde_json::from_str(&body).unwrap(), "unauthorized");
    }
    let (status, _) = call_raw(&app, "GET", "/api/rounds", None, Some(TOKEN)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn no_token_configured_means_open_access() {
    let fx = Fixture::new(12);
    let (svc, _) = fx.open(ServiceConfig::default());
    let (status, _) = call_raw(&router(svc), "GET", "/api/rounds", None, None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn rounds_report_progress_and_status_filter_splits_tasks() {
    let fx = Fixture::new(13);
    let (svc, _) = fx.open(authed());
    let app = router(svc);

    let (_, rounds) = call(&app, "GET", "/api/rounds", None).await;
    let rounds: Vec<RoundInfo> = serde_json::from_value(rounds).unwrap();
    assert_eq!(rounds.iter().map(|r| r.round).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(rounds[0].status, RoundStatus::Complete);
    let open = &rounds[1];
    assert_eq!(open.status, RoundStatus::Open);
    assert!(open.tasks >= 3, "need at least three clusters, got {}", open.tasks);
    assert_eq!(open.pending, open.tasks);
    assert_eq!(open.clusters_per_class.values().sum::<usize>(), open.tasks);

    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let ids = task_ids(&all);
    for id in &ids[..3] {
        let (s, ack) = call(&app, "POST", &format!("/api/tasks/{id}/verdict"), Some(json!({ "verdict": "other" }))).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(ack["task"]["status"], "done");
        assert_eq!(ack["event"]["annotator_id"], "fallback");
    }
    let (_, done) = call(&app, "GET", "/api/rounds/1/clusters?status=done", None).await;
    assert_eq!(task_ids(&done), ids[..3].to_vec());
    let (_, pending) = call(&app, "GET", "/api/rounds/1/clusters?status=pending", None).await;
    assert_eq!(task_ids(&pending), ids[3..].to_vec());

    let (_, rounds) = call(&app, "GET", "/api/rounds", None).await;
    assert_eq!(rounds[1]["done"], 3);
    assert_eq!(rounds[1]["pending"], ids.len() - 3);

    let (s, body) = call(&app, "GET", "/api/rounds/1/clusters?status=maybe", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error_shape(&body, "bad_request");
}

#[tokio::test]
async fn task_detail_shows_each_sample_in_its_turn() {
    let fx = Fixture::new(14);
    let (svc, _) = fx.open(authed());
    let app = router(svc);
    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let id = task_ids(&all)[0].clone();
    let (s, detail) = call(&app, "GET", &format!("/api/tasks/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(detail["task_id"], id);
    let sample = detail["sample"].as_array().unwrap();
    let context = detail["context"].as_array().unwrap();
    assert_eq!(sample.len(), context.len());
    assert!(!context.is_empty());
    for c in context {
        assert_eq!(c["speaker"], "professional");
        let text = c["turn_text"].as_str().unwrap();
        let (a, b) = (c["highlight"][0].as_u64().unwrap() as usize, c["highlight"][1].as_u64().unwrap() as usize);
        let idx = c["sentence"]["sentence_index"].as_u64().unwrap() as usize;
        assert_eq!(&text[a..b], c["sentences"][idx].as_str().unwrap());
    }
}

#[tokio::test]
async fn unknown_tasks_and_rounds_are_not_found() {
    let fx = Fixture::new(15);
    let (svc, _) = fx.open(authed());
    let app = router(svc);
    for uri in ["/api/tasks/r1-c999", "/api/tasks/r7-c0", "/api/tasks/garbage"] {
        let (s, body) = call(&app, "GET", uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_error_shape(&body, "unknown_task");
    }
    let (s, body) = call(&app, "POST", "/api/tasks/r1-c999/verdict", Some(json!({ "verdict": "other" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["details"]["task_id"], "r1-c999");
}

#[tokio::test]
async fn malformed_verdicts_are_rejected_without_logging() {
    let fx = Fixture::new(16);
    let (svc, _) = fx.open(authed());
    let app = router(svc.clone());
    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let id = task_ids(&all)[0].clone();
    let uri = format!("/api/tasks/{id}/verdict");

    let (s, body) = call(&app, "POST", &uri, Some(json!({ "verdict": "diagnosis" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error_shape(&body, "bad_request");
    let allowed: Vec<&str> = body["details"]["allowed"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(allowed, ClusterVerdict::ALL.map(|v| v.as_str()).to_vec());

    let (s, body) = call(&app, "POST", &uri, Some(json!({ "label": "other" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error_shape(&body, "bad_request");

    assert!(svc.store().event_log(1).unwrap().events().is_empty());
    assert_eq!(svc.task(&id).unwrap().status, TaskStatus::Pending);
}

#[tokio::test]
async fn resubmission_keeps_the_latest_verdict_and_both_events() {
    let fx = Fixture::new(17);
    let (svc, _) = fx.open(authed());
    let app = router(svc.clone());
    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let id = task_ids(&all)[0].clone();
    let uri = format!("/api/tasks/{id}/verdict");
    let (_, a) = call(&app, "POST", &uri, Some(json!({ "verdict": "education", "annotator_id": "ann-a" }))).await;
    let (_, b) = call(&app, "POST", &uri, Some(json!({ "verdict": "mixed", "annotator_id": "ann-b" }))).await;
    assert_eq!(a["event"]["seq"], 1);
    assert_eq!(b["event"]["seq"], 2);

    let (_, task) = call(&app, "GET", &format!("/api/tasks/{id}"), None).await;
    assert_eq!(task["verdict"], "mixed");
    let events = svc.store().event_log(1).unwrap().events().to_vec();
    assert_eq!(events.len(), 2);
    assert_eq!(events[0].annotator_id, "ann-a");
    assert_eq!(events[1].verdict, ClusterVerdict::Mixed);
}

#[tokio::test]
async fn finalize_waits_for_every_cluster_then_is_idempotent() {
    let fx = Fixture::new(18);
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let (state, pending) = fx.prepare();
    let svc = Arc::new(Service::open(fx.corpus.clone(), fx.store(), authed()).unwrap().with_finalize_channel(tx));
    svc.open_round(pending).unwrap();
    let app = router(svc.clone());

    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let ids = task_ids(&all);
    let (s, _) = call(&app, "POST", &format!("/api/tasks/{}/verdict", ids[0]), Some(json!({ "verdict": "other" }))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = call(&app, "POST", "/api/rounds/1/finalize", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error_shape(&body, "pending_verdicts");
    assert_eq!(body["details"]["pending_clusters"].as_array().unwrap().len(), ids.len() - 1);
    assert!(rx.try_recv().is_err());

    let (_, preview) = call(&app, "GET", "/api/rounds/1/relabel-log", None).await;
    assert_eq!(preview["entries"].as_array().unwrap().len(), 1);

    judge_all(&app, &fx, 1).await;
    let (s, first) = call(&app, "POST", "/api/rounds/1/finalize", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["clusters"], ids.len());
    let (s, second) = call(&app, "POST", "/api/rounds/1/finalize", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first, second);

    let judged = rx.try_recv().expect("finalized round sent to the trainer");
    assert!(rx.try_recv().is_err(), "a repeated finalize must not retrain");
    assert!(judged.clusters.iter().all(|c| c.verdict.is_some()));

    let (_, rounds) = call(&app, "GET", "/api/rounds", None).await;
    assert_eq!(rounds[1]["status"], "finalized");
    let (s, body) = call(&app, "POST", &format!("/api/tasks/{}/verdict", ids[0]), Some(json!({ "verdict": "education" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error_shape(&body, "round_order");

    let (s, body) = call(&app, "GET", "/api/rounds/1/metrics", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error_shape(&body, "not_found");

    let ctx = fx.context();
    let next = ctx.finalize_round(judged, &state, Provenance::Human).unwrap();
    assert_eq!(serde_json::to_value(&next.relabel_log).unwrap(), first["log"]);
    svc.store().save_state(&next, fx.config.seed).unwrap();
    svc.close_round(1);

    let (_, rounds) = call(&app, "GET", "/api/rounds", None).await;
    assert_eq!(rounds[1]["status"], "complete");
    assert_eq!(rounds[1]["pending"], 0);
    let (s, metrics) = call(&app, "GET", "/api/rounds/1/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    for key in ["label_eval", "model_eval", "similarity", "turn_eval"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let (s, log) = call(&app, "GET", "/api/rounds/1/relabel-log", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(log, first["log"]);
    let (s, csv) = call_raw(&app, "GET", "/api/rounds/1/similarity.csv", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("class,pairs,bin_left,bin_right,count"));
    assert!(lines.all(|l| l.split(',').count() == 5));
    let (s, done) = call(&app, "GET", "/api/rounds/1/clusters?status=done", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(task_ids(&done), ids);
}

#[tokio::test]
async fn restart_resumes_the_same_task_statuses() {
    let fx = Fixture::new(19);
    let (svc, _) = fx.open(authed());
    let app = router(svc.clone());
    let (_, all) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    let ids = task_ids(&all);
    for id in ids.iter().step_by(2) {
        call(&app, "POST", &format!("/api/tasks/{id}/verdict"), Some(json!({ "verdict": "care_plan" }))).await;
    }
    let (_, before) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    drop(app);
    drop(svc);

    let app = router(fx.service(authed()));
    let (_, after) = call(&app, "GET", "/api/rounds/1/clusters", None).await;
    assert_eq!(before, after);
    let (_, pending) = call(&app, "GET", "/api/rounds/1/clusters?status=pending", None).await;
    assert_eq!(task_ids(&pending), ids.iter().skip(1).step_by(2).cloned().collect::<Vec<_>>());
}

#[test]
fn replay_after_random_kill_points_matches_acknowledged_verdicts() {
    let fx = Fixture::new(20);
    let (_, pending) = fx.prepare();
    let ids: Vec<String> = pending.board.tasks().map(|t| t.task_id.clone()).collect();
    fx.service(authed()).open_round(pending).unwrap();

    let mut rng = dialsec::seeds::rng(20);
    let mut acked: BTreeMap<String, ClusterVerdict> = BTreeMap::new();
    for _ in 0..8 {
        let svc = fx.service(authed());
        for _ in 0..rng.random_range(0..6) {
            let id = &ids[rng.random_range(0..ids.len())];
            let v = ClusterVerdict::ALL[rng.random_range(0..ClusterVerdict::ALL.len())];
            svc.submit(id, v, Some("ann")).unwrap();
            acked.insert(id.clone(), v);
        }
        if rng.random_bool(0.5) {
            use std::io::Write;
            let path = fx.store().path(1, RoundStore::VERDICTS);
            let mut f = std::fs::OpenOptions::new().append(true).open(path).unwrap();
            f.write_all(br#"{"seq":999,"task_id":"r1-c0","verd"#).unwrap();
        }
        drop(svc);

        let svc = fx.service(authed());
        for t in svc.tasks(1, None).unwrap() {
            assert_eq!(t.verdict, acked.get(&t.task_id).copied(), "{}", t.task_id);
            let want = if acked.contains_key(&t.task_id) { TaskStatus::Done } else { TaskStatus::Pending };
            assert_eq!(t.status, want);
        }
    }
}

#[test]
fn open_round_keeps_verdicts_already_on_disk() {
    let fx = Fixture::new(21);
    let (_, pending) = fx.prepare();
    let id = pending.board.tasks().next().unwrap().task_id.clone();
    let svc = fx.service(authed());
    svc.open_round(pending.clone()).unwrap();
    svc.submit(&id, ClusterVerdict::Education, None).unwrap();
    drop(svc);

    let svc = fx.service(authed());
    svc.open_round(pending).unwrap();
    assert_eq!(svc.task(&id).unwrap().verdict, Some(ClusterVerdict::Education));
    let infos = svc.round_infos().unwrap();
    assert_eq!(infos.iter().find(|r| r.round == 1).unwrap().done, 1);
    assert!(infos.iter().all(|r| r.clusters_per_class.keys().all(|l| SectionLabel::ALL.contains(l))));
}
