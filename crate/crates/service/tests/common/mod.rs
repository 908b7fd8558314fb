#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use leveler_core::corpus::{self, Article, LeveledPair};
use leveler_core::harness::{BenchCorpus, ResponseBank, RunStore};
use leveler_core::prompting::PromptTemplates;
use leveler_core::providers::{LexicalEmbedder, MockScript, OfflineTransport, ProviderConfig};
use leveler_core::readability::Scorer;
use leveler_service::{AppState, ServiceConfig, Workbench};
use serde_json::Value;
use ureq::Agent;

/// The bundled seed articles with sets 1-7 for training, 8-9 for
/// validation and 10 for testing.
pub fn seed_corpus(scorer: &Scorer) -> BenchCorpus {
    let articles = corpus::ingest(corpus::SEED_CORPUS.as_bytes(), scorer).unwrap().articles;
    let of = |sets: std::ops::RangeInclusive<u32>| -> Vec<LeveledPair> {
        let picked: Vec<Article> = articles.iter().filter(|a| sets.contains(&a.set_id)).cloned().collect();
        corpus::permute_pairs(&picked)
    };
    BenchCorpus {
        train: of(1..=7),
        valid: of(8..=9),
        test: of(10..=10),
    }
}

pub fn workbench(dir: &std::path::Path) -> Workbench {
    let scorer = Scorer::bundled();
    let corpus = seed_corpus(&scorer);
    Workbench {
        scorer,
        templates: PromptTemplates::bundled(),
        corpus,
        bank: Arc::new(ResponseBank::open(dir.join("bank")).unwrap()),
        runs: RunStore::new(dir.join("runs")),
        providers: vec![
            ProviderConfig::mock("oracle", MockScript::oracle()),
            ProviderConfig::mock("echo", MockScript::echo_source()),
        ],
        transport: Arc::new(OfflineTransport),
        embedder: Some(Arc::new(LexicalEmbedder::default())),
    }
}

/// Starts the service on an ephemeral loopback port and returns its base URL.
pub fn start(state: AppState) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    listener.set_nonblocking(true).unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener).unwrap();
            leveler_service::serve(l, state).await.unwrap();
        });
    });
    format!("http://{addr}")
}

pub fn start_default(dir: &std::path::Path) -> (String, AppState) {
    let state = AppState::new(workbench(dir), ServiceConfig::default());
    (start(state.clone()), state)
}

pub struct Client {
    pub base: String,
    agent: Agent,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub headers: ureq::http::HeaderMap,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }

    pub fn code(&self) -> String {
        self.json()["error"]["code"].as_str().unwrap().to_string()
    }
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: base.to_string(),
            agent,
        }
    }

    fn finish(mut r: ureq::http::Response<ureq::Body>) -> Reply {
        Reply {
            status: r.status().as_u16(),
            headers: r.headers().clone(),
            body: r.body_mut().read_to_string().unwrap(),
        }
    }

    pub fn get(&self, path: &str) -> Reply {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> Reply {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send_json(body).unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> Reply {
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .send(body)
                .unwrap(),
        )
    }

    pub fn put(&self, path: &str, body: &Value) -> Reply {
        Self::finish(self.agent.put(format!("{}{path}", self.base)).send_json(body).unwrap())
    }

    pub fn options(&self, path: &str, origin: &str) -> Reply {
        Self::finish(
            self.agent
                .options(format!("{}{path}", self.base))
                .header("origin", origin)
                .header("access-control-request-method", "POST")
                .call()
                .unwrap(),
        )
    }

    /// Polls `/runs/{id}` until the run and its embedding pass settle.
    pub fn wait_for_run(&self, run_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let s = self.get(&format!("/runs/{run_id}")).json();
            if s["state"] != "running" && s["embeddings"] != "pending" {
                return s;
            }
            assert!(Instant::now() < deadline, "run {run_id} did not finish: {s}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}
