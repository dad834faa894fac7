//! In-process stand-in for the Wikidata action API and query service,
//! answering from `fixtures/wikidata_facts.json` in the wire formats of the
//! real endpoints.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use gazetteer::config::{ConfigLayers, PipelineConfig};
use gazetteer::http::{HttpRequest, HttpResponse, Method, Transport, TransportError};
use gazetteer::http_cache::{CacheMode, CachingTransport, HttpCache};
use gazetteer::pipeline::{Pipeline, RunSummary, StageError};
use gazetteer::HashingEmbedder;
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Deserialize)]
pub struct Item {
    pub label: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub coords: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Facts {
    pub search: BTreeMap<String, Vec<String>>,
    pub items: BTreeMap<String, Item>,
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

impl Facts {
    pub fn load() -> Facts {
        let path = fixtures_dir().join("wikidata_facts.json");
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
    }
}

pub struct FakeWikidata {
    pub facts: Facts,
    calls: AtomicUsize,
}

impl FakeWikidata {
    pub fn new(facts: Facts) -> Self {
        Self { facts, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn search(&self, params: &BTreeMap<String, String>) -> Value {
        let query = params.get("search").cloned().unwrap_or_default();
        let limit: usize = params.get("limit").and_then(|l| l.parse().ok()).unwrap_or(7);
        let hits: Vec<Value> = self
            .facts
            .search
            .get(&query)
            .into_iter()
            .flatten()
            .take(limit)
            .map(|id| {
                let item = &self.facts.items[id];
                let mut hit = json!({
                    "id": id,
                    "title": id,
                    "repository": "wikidata",
                    "url": format!("//www.wikidata.org/wiki/{id}"),
                    "concepturi": format!("http://www.wikidata.org/entity/{id}"),
                    "label": item.label,
                    "match": {"type": "label", "language": "sv", "text": item.label},
                });
                if let Some(d) = &item.description {
                    hit["description"] = json!(d);
                }
                hit
            })
            .collect();
        json!({"searchinfo": {"search": query}, "search": hits, "success": 1})
    }

    fn entities(&self, params: &BTreeMap<String, String>) -> Value {
        let mut entities = serde_json::Map::new();
        for id in params.get("ids").map(String::as_str).unwrap_or_default().split('|') {
            let entity = match self.facts.items.get(id) {
                Some(item) => {
                    let descriptions = match &item.description {
                        Some(d) => json!({"sv": {"language": "sv", "value": d}}),
                        None => json!({}),
                    };
                    json!({"type": "item", "id": id, "descriptions": descriptions})
                }
                None => json!({"id": id, "missing": ""}),
            };
            entities.insert(id.to_string(), entity);
        }
        json!({"entities": entities, "success": 1})
    }

    fn sparql(&self, body: &[u8]) -> Value {
        let query = url::form_urlencoded::parse(body)
            .find(|(k, _)| k == "query")
            .map(|(_, v)| v.into_owned())
            .unwrap_or_default();
        let mut rows = Vec::new();
        for token in query.split_whitespace() {
            let Some(id) = token.strip_prefix("wd:") else { continue };
            for point in self.facts.items.get(id).map(|i| i.coords.as_slice()).unwrap_or_default() {
                rows.push(json!({
                    "item": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{id}")},
                    "coords": {
                        "datatype": "http://www.opengis.net/ont/geosparql#wktLiteral",
                        "type": "literal",
                        "value": point,
                    },
                }));
            }
        }
        json!({"head": {"vars": ["item", "coords"]}, "results": {"bindings": rows}})
    }
}

impl Transport for FakeWikidata {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let url = url::Url::parse(&request.url).map_err(|e| TransportError::Network(e.to_string()))?;
        let body = match request.method {
            Method::Post => self.sparql(request.body.as_deref().unwrap_or_default()),
            Method::Get => {
                let params: BTreeMap<String, String> = url.query_pairs().into_owned().collect();
                match params.get("action").map(String::as_str) {
                    Some("wbsearchentities") => self.search(&params),
                    Some("wbgetentities") => self.entities(&params),
                    _ => return Err(TransportError::Status { status: 400, url: request.url.clone() }),
                }
            }
        };
        Ok(HttpResponse { status: 200, body: body.to_string() })
    }
}

/// Fixture configuration with every output redirected under `work`.
pub fn fixture_config(work: &Path, cache_dir: &Path, mode: CacheMode) -> PipelineConfig {
    let mut layers = ConfigLayers::new();
    layers.load_file(&fixtures_dir().join("gazetteer.toml")).unwrap();
    let paths = [
        ("dataset", work.join("dataset.jsonl")),
        ("model", work.join("model.json")),
        ("geojson", work.join("gazetteer.geojson")),
        ("histogram", work.join("distance_histogram.csv")),
        ("svg", work.join("map.svg")),
        ("cache_dir", cache_dir.to_path_buf()),
    ];
    for (key, path) in paths {
        layers.set(key, path.to_str().unwrap()).unwrap();
    }
    layers.set("cache_mode", mode.to_string()).unwrap();
    layers.build().unwrap()
}

/// Runs the whole fixture pipeline in record mode against the stand-in,
/// writing one cache file per distinct request into `cache_dir`.
pub fn record_cache(cache_dir: &Path) -> Result<Vec<RunSummary>, StageError> {
    let work = tempfile::tempdir().unwrap();
    let config = fixture_config(work.path(), cache_dir, CacheMode::Record);
    let upstream: Box<dyn Transport> = Box::new(FakeWikidata::new(Facts::load()));
    let transport = CachingTransport::new(CacheMode::Record, Some(HttpCache::new(cache_dir)), Some(upstream)).unwrap();
    let provider = Box::new(HashingEmbedder::new(config.embed_dim));
    Pipeline::with_parts(config, provider, Arc::new(transport)).run().map_err(|(_, e)| e)
}
