//! Wikidata access: entity search, descriptions and P625 coordinates.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::http::{HttpRequest, Transport, TransportError};

pub const DEFAULT_API_URL: &str = "https://www.wikidata.org/w/api.php";
pub const DEFAULT_SPARQL_URL: &str = "https://query.wikidata.org/sparql";
pub const DEFAULT_USER_AGENT: &str =
    concat!("gazetteer/", env!("CARGO_PKG_VERSION"), " (historical encyclopedia geocoding; batch research tool)");

/// QIDs per SPARQL `VALUES` clause.
pub const SPARQL_BATCH: usize = 200;
/// The entity API accepts at most 50 ids per `wbgetentities` call.
pub const DESCRIPTION_BATCH: usize = 50;
pub const MAX_SEARCH_LIMIT: usize = 50;

#[derive(Debug, Error)]
pub enum WikidataError {
    #[error("invalid QID {0:?}")]
    InvalidQid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("bad WKT point {0:?}")]
    BadPoint(String),
}

/// Wikidata item identifier, `Q` followed by a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Qid(u64);

impl Qid {
    pub fn new(n: u64) -> Result<Self, WikidataError> {
        if n == 0 {
            Err(WikidataError::InvalidQid("Q0".into()))
        } else {
            Ok(Self(n))
        }
    }

    pub fn number(self) -> u64 {
        self.0
    }

    /// Parses the trailing segment of an entity IRI such as
    /// `http://www.wikidata.org/entity/Q1754`.
    pub fn from_entity_uri(uri: &str) -> Result<Self, WikidataError> {
        uri.rsplit('/').next().unwrap_or(uri).parse()
    }
}

impl FromStr for Qid {
    type Err = WikidataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WikidataError::InvalidQid(s.to_string());
        let digits = s.strip_prefix('Q').ok_or_else(bad)?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        digits.parse::<u64>().map(Qid).map_err(|_| bad())
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

impl Serialize for Qid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Qid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikidataCandidate {
    pub qid: Qid,
    pub label: String,
    pub description_sv: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateRecord {
    pub qid: Qid,
    pub lat: f64,
    pub lon: f64,
}

/// Parses a `Point(<lon> <lat>)` literal, optionally preceded by a datum
/// IRI in angle brackets, and returns `(lat, lon)`.
pub fn parse_wkt_point(literal: &str) -> Result<(f64, f64), WikidataError> {
    let bad = || WikidataError::BadPoint(literal.to_string());
    let mut rest = literal.trim();
    if rest.starts_with('<') {
        let end = rest.find('>').ok_or_else(bad)?;
        rest = rest[end + 1..].trim_start();
    }
    if rest.len() < 5 || !rest[..5].eq_ignore_ascii_case("point") {
        return Err(bad());
    }
    let inner = rest[5..].trim_start().strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
    let mut parts = inner.split_whitespace();
    let (Some(lon), Some(lat), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let lon: f64 = lon.parse().map_err(|_| bad())?;
    let lat: f64 = lat.parse().map_err(|_| bad())?;
    if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(bad());
    }
    Ok((lat, lon))
}

/// SPARQL text asking for the P625 value of every QID in `qids`.
pub fn coordinate_query(qids: &[Qid]) -> String {
    let values: Vec<String> = qids.iter().map(|q| format!("wd:{q}")).collect();
    format!("SELECT ?item ?coords WHERE {{ VALUES ?item {{ {} }} ?item wdt:P625 ?coords }}", values.join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WikidataConfig {
    pub api_url: String,
    pub sparql_url: String,
    pub language: String,
    pub user_agent: String,
}

impl Default for WikidataConfig {
    fn default() -> Self {
        Self {
            api_url: DEFAULT_API_URL.into(),
            sparql_url: DEFAULT_SPARQL_URL.into(),
            language: "sv".into(),
            user_agent: DEFAULT_USER_AGENT.into(),
        }
    }
}

pub struct WikidataClient {
    transport: Box<dyn Transport>,
    config: WikidataConfig,
    coordinate_warnings: AtomicUsize,
}

fn protocol(msg: impl Into<String>) -> WikidataError {
    WikidataError::Protocol(msg.into())
}

impl WikidataClient {
    pub fn new(transport: Box<dyn Transport>, config: WikidataConfig) -> Self {
        Self { transport, config, coordinate_warnings: AtomicUsize::new(0) }
    }

    pub fn config(&self) -> &WikidataConfig {
        &self.config
    }

    /// SPARQL rows skipped so far because their coordinate did not parse.
    pub fn coordinate_warnings(&self) -> usize {
        self.coordinate_warnings.load(Ordering::Relaxed)
    }

    fn api_get(&self, params: &[(&str, &str)]) -> Result<Value, WikidataError> {
        let mut url = url::Url::parse(&self.config.api_url).map_err(|e| WikidataError::InvalidInput(e.to_string()))?;
        url.query_pairs_mut().extend_pairs(params);
        let request = HttpRequest::get(url.as_str()).header("User-Agent", &self.config.user_agent);
        let response = self.transport.execute(&request)?;
        let body: Value = serde_json::from_str(&response.body).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
        if let Some(err) = body.get("error") {
            return Err(protocol(format!("API error: {err}")));
        }
        Ok(body)
    }

    /// Items whose labels or aliases match `headword`, in the order the
    /// search endpoint ranks them, at most `limit` of them.
    pub fn search_candidates(&self, headword: &str, limit: usize) -> Result<Vec<WikidataCandidate>, WikidataError> {
        let headword = headword.trim();
        if headword.is_empty() {
            return Err(WikidataError::InvalidInput("empty headword".into()));
        }
        if !(1..=MAX_SEARCH_LIMIT).contains(&limit) {
            return Err(WikidataError::InvalidInput(format!("limit {limit} outside 1..={MAX_SEARCH_LIMIT}")));
        }
        let limit_str = limit.to_string();
        let lang = self.config.language.as_str();
        let body = self.api_get(&[
            ("action", "wbsearchentities"),
            ("search", headword),
            ("language", lang),
            ("uselang", lang),
            ("limit", &limit_str),
            ("format", "json"),
        ])?;
        let hits = body.get("search").and_then(Value::as_array).ok_or_else(|| protocol("missing `search` array"))?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for hit in hits {
            let id = hit.get("id").and_then(Value::as_str).ok_or_else(|| protocol("search hit without id"))?;
            let qid: Qid = id.parse().map_err(|_| protocol(format!("search hit with invalid id {id:?}")))?;
            if !seen.insert(qid) {
                continue;
            }
            let label = hit.get("label").and_then(Value::as_str).unwrap_or_default().to_string();
            out.push(WikidataCandidate { qid, label, description_sv: None });
            if out.len() == limit {
                break;
            }
        }
        Ok(out)
    }

    /// Descriptions in the configured language. Unknown items and items
    /// without a description map to `None`.
    pub fn fetch_descriptions(&self, qids: &[Qid]) -> Result<BTreeMap<Qid, Option<String>>, WikidataError> {
        if qids.is_empty() {
            return Err(WikidataError::InvalidInput("no QIDs given".into()));
        }
        let unique: BTreeSet<Qid> = qids.iter().copied().collect();
        let unique: Vec<Qid> = unique.into_iter().collect();
        let lang = self.config.language.as_str();
        let mut out = BTreeMap::new();
        for batch in unique.chunks(DESCRIPTION_BATCH) {
            let ids = batch.iter().map(Qid::to_string).collect::<Vec<_>>().join("|");
            let body = self.api_get(&[
                ("action", "wbgetentities"),
                ("ids", &ids),
                ("props", "descriptions"),
                ("languages", lang),
                ("format", "json"),
            ])?;
            let entities = body.get("entities").and_then(Value::as_object).ok_or_else(|| protocol("missing `entities`"))?;
            for &qid in batch {
                let description = entities
                    .get(&qid.to_string())
                    .and_then(|e| e.pointer(&format!("/descriptions/{lang}/value")))
                    .and_then(Value::as_str)
                    .map(str::to_string);
                out.insert(qid, description);
            }
        }
        Ok(out)
    }

    /// P625 coordinates for the given items, one record per item that has
    /// one. QIDs are deduplicated and sorted, then queried in batches of 200;
    /// when an item has several P625 rows the first one wins.
    pub fn fetch_coordinates(&self, qids: &[Qid]) -> Result<Vec<CoordinateRecord>, WikidataError> {
        if qids.is_empty() {
            return Err(WikidataError::InvalidInput("no QIDs given".into()));
        }
        let unique: Vec<Qid> = qids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut records = Vec::new();
        for batch in unique.chunks(SPARQL_BATCH) {
            records.extend(self.coordinate_batch(batch)?);
        }
        Ok(records)
    }

    fn coordinate_batch(&self, batch: &[Qid]) -> Result<Vec<CoordinateRecord>, WikidataError> {
        let body: String = url::form_urlencoded::Serializer::new(String::new())
            .append_pair("query", &coordinate_query(batch))
            .finish();
        let request = HttpRequest::post(&self.config.sparql_url, body)
            .header("User-Agent", &self.config.user_agent)
            .header("Accept", "application/sparql-results+json")
            .header("Content-Type", "application/x-www-form-urlencoded");
        let response = self.transport.execute(&request)?;
        let parsed: Value = serde_json::from_str(&response.body).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
        let rows = parsed
            .pointer("/results/bindings")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("missing results.bindings"))?;
        let wanted: HashSet<Qid> = batch.iter().copied().collect();
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for row in rows {
            let Some(item) = row.pointer("/item/value").and_then(Value::as_str) else {
                self.coordinate_warnings.fetch_add(1, Ordering::Relaxed);
                continue;
            };
            let Ok(qid) = Qid::from_entity_uri(item) else {
                self.coordinate_warnings.fetch_add(1, Ordering::Relaxed);
                continue;
            };
            if !wanted.contains(&qid) || seen.contains(&qid) {
                continue;
            }
            let point = row.pointer("/coords/value").and_then(Value::as_str).map(parse_wkt_point);
            match point {
                Some(Ok((lat, lon))) => {
                    seen.insert(qid);
                    records.push(CoordinateRecord { qid, lat, lon });
                }
                _ => {
                    log::warn!("skipping unparseable coordinate for {qid}");
                    self.coordinate_warnings.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(records)
    }
}
