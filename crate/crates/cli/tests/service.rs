use std::net::SocketAddr;

use promptknn::service::{serve_on, HealthResponse, PredictResponse, ServiceConfig};
use promptknn_core::eval::{make_fixture, SyntheticFixture, SyntheticFixtureSpec};
use promptknn_core::{predict, FusionConfig};
use serde_json::json;
use tokio::sync::oneshot;

fn small_fixture() -> SyntheticFixture {
    make_fixture(&SyntheticFixtureSpec {
        n_clusters: 8,
        prompts_per_cluster: 16,
        n_queries: 20,
        clip_dim: 16,
        sent_dim: 8,
        noise_sigma: 0.2,
        seed: 3,
    })
    .unwrap()
}

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(fx: &SyntheticFixture, cfg: ServiceConfig) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let index = fx.index().unwrap();
        let handle = tokio::spawn(async move {
            serve_on(listener, index, &cfg, async {
                let _ = rx.await;
            })
            .await
        });
        Self {
            base: format!("http://{addr}"),
            stop: Some(tx),
            handle,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.handle.await.unwrap().unwrap();
    }
}

#[tokio::test]
async fn health_reports_corpus_shape() {
    let fx = small_fixture();
    let server = Server::start(&fx, ServiceConfig::default()).await;
    let health: HealthResponse = reqwest::get(server.url("/healthz"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.corpus_count, 128);
    assert_eq!(health.clip_dim, 16);
    server.shutdown().await;
}

#[tokio::test]
async fn responses_match_the_library() {
    let fx = small_fixture();
    let index = fx.index().unwrap();
    let server = Server::start(&fx, ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    for i in 0..fx.queries.rows() {
        let q = fx.queries.row_vector(i);
        let cap = fx.ground_truth.row_vector(i);
        let body = json!({ "image_embedding": q.as_slice(), "caption_embedding": cap.as_slice(), "k": 5 });
        let resp = client.post(server.url("/v1/predict")).json(&body).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        let got: PredictResponse = resp.json().await.unwrap();
        let want = predict(&index, &q, Some(&cap), &FusionConfig::with_k(5)).unwrap();
        assert_eq!(got.neighbors.len(), 5);
        for (a, b) in got.neighbors.iter().zip(&want.neighbors.neighbors) {
            assert_eq!(a.row, b.row);
            assert!((a.score - b.score).abs() < 1e-6);
            assert_eq!(a.prompt, fx.prompts[a.row]);
        }
        for (a, b) in got.e_pred.iter().zip(want.e_pred.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    // Querying with a corpus row returns that row first.
    let body = json!({ "image_embedding": fx.clip.row(37) });
    let got: PredictResponse = client
        .post(server.url("/v1/predict"))
        .json(&body)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(got.neighbors[0].row, 37);
    server.shutdown().await;
}

#[tokio::test]
async fn bad_requests_are_rejected_with_the_right_status() {
    let fx = small_fixture();
    let cfg = ServiceConfig {
        max_body_bytes: 4096,
        ..ServiceConfig::default()
    };
    let server = Server::start(&fx, cfg).await;
    let client = reqwest::Client::new();
    let post = |body: String| {
        client
            .post(server.url("/v1/predict"))
            .header("content-type", "application/json")
            .body(body)
            .send()
    };

    let resp = post(json!({ "image_embedding": vec![1.0f64; 15] }).to_string())
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    assert!(resp.text().await.unwrap().contains("expected 16"));

    let resp = post(json!({ "image_embedding": vec![1.0f64; 16], "caption_embedding": vec![1.0f64; 3] }).to_string())
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    assert_eq!(post("{not json".into()).await.unwrap().status(), 400);
    assert_eq!(
        post(json!({ "image_embedding": vec![1.0f64; 16], "k": 0 }).to_string())
            .await
            .unwrap()
            .status(),
        400
    );
    assert_eq!(
        post(json!({ "image_embedding": vec![0.0f64; 16] }).to_string())
            .await
            .unwrap()
            .status(),
        422
    );
    // Finite in JSON but not representable as f32.
    let mut huge = vec![1.0f64; 16];
    huge[3] = 1e300;
    assert_eq!(
        post(json!({ "image_embedding": huge }).to_string())
            .await
            .unwrap()
            .status(),
        422
    );

    let oversized = json!({ "image_embedding": vec![0.123456789f64; 2000] }).to_string();
    assert!(oversized.len() > 4096);
    assert_eq!(post(oversized).await.unwrap().status(), 413);

    assert_eq!(client.get(server.url("/nope")).send().await.unwrap().status(), 404);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_agree() {
    let fx = small_fixture();
    let server = Server::start(&fx, ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    let body = json!({ "image_embedding": fx.queries.row(0), "k": 10 });
    let requests = (0..32).map(|_| {
        let client = client.clone();
        let url = server.url("/v1/predict");
        let body = body.clone();
        tokio::spawn(async move { client.post(url).json(&body).send().await.unwrap().text().await.unwrap() })
    });
    let mut bodies = Vec::new();
    for r in requests {
        bodies.push(r.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    server.shutdown().await;
}
