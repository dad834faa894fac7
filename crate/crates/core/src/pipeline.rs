//! Stage orchestration over a JSONL dataset.
//!
//! Every stage reads the dataset, does its work and rewrites the file
//! atomically. A stage that fails leaves the previous file untouched.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::classifier::{self, LogisticModel};
use crate::config::{PipelineConfig, ProviderKind};
use crate::corpus::{self, Entry};
use crate::dataset::{self, DatasetError};
use crate::embedding::{CachedEmbedder, EmbeddingProvider, HashingEmbedder, RemoteEmbedder};
use crate::exec::Execution;
use crate::geo::{self, GeoPoint, LinkedPlace};
use crate::http::{ReqwestTransport, RetryPolicy, ThrottledTransport, Transport};
use crate::http_cache::{CacheMode, CachingTransport, HttpCache};
use crate::linker::Linker;
use crate::wikidata::WikidataClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Classify,
    Link,
    Coords,
    Report,
}

impl Stage {
    /// Process exit status used when this stage fails.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 1,
            Stage::Ingest => 2,
            Stage::Train => 3,
            Stage::Classify => 4,
            Stage::Link => 5,
            Stage::Coords => 6,
            Stage::Report => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Link => "link",
            Stage::Coords => "coords",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
    /// Entries the failure is attributed to, if any.
    pub entry_ids: Vec<String>,
}

impl StageError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, message: message.into(), entry_ids: Vec::new() }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)?;
        if !self.entry_ids.is_empty() {
            write!(f, " (entries: {})", self.entry_ids.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for StageError {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub stage: Stage,
    pub input_count: usize,
    pub output_count: usize,
    pub error_count: usize,
    pub warning_count: usize,
    pub wall_time_ms: u64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub ratios: BTreeMap<String, f64>,
}

impl RunSummary {
    fn new(stage: Stage, started: Instant) -> Self {
        Self {
            stage,
            input_count: 0,
            output_count: 0,
            error_count: 0,
            warning_count: 0,
            wall_time_ms: started.elapsed().as_millis() as u64,
            ratios: BTreeMap::new(),
        }
    }

    fn counts(mut self, input: usize, output: usize) -> Self {
        self.input_count = input;
        self.output_count = output;
        self
    }

    fn ratio(mut self, name: &str, value: f64) -> Self {
        self.ratios.insert(name.to_string(), value);
        self
    }
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

type StageFn = fn(&Pipeline) -> Result<RunSummary, StageError>;

pub struct Pipeline {
    config: PipelineConfig,
    provider: Box<dyn EmbeddingProvider>,
    wikidata: Arc<dyn Transport>,
    exec: Execution,
}

impl Pipeline {
    /// Builds providers and the Wikidata transport stack from configuration.
    pub fn from_config(config: PipelineConfig) -> Result<Self, StageError> {
        let cfg_err = |m: String| StageError::new(Stage::Config, m);
        let timeout = Duration::from_secs(config.timeout_secs);
        let http = || -> Result<ReqwestTransport, StageError> {
            ReqwestTransport::new(&config.wikidata.user_agent, timeout).map_err(|e| cfg_err(e.to_string()))
        };

        let base: Box<dyn EmbeddingProvider> = match config.embed_provider {
            ProviderKind::Local => Box::new(HashingEmbedder::new(config.embed_dim)),
            ProviderKind::Remote => {
                let url = config.embed_url.clone().ok_or_else(|| cfg_err("embed_url is not set".into()))?;
                let transport = ThrottledTransport::new(http()?, Duration::ZERO, config.concurrency, RetryPolicy::default());
                Box::new(RemoteEmbedder::new(url, config.embed_dim, transport).with_max_in_flight(config.concurrency))
            }
        };
        let provider: Box<dyn EmbeddingProvider> = match &config.embed_cache {
            Some(path) => Box::new(CachedEmbedder::open(base, path).map_err(|e| cfg_err(e.to_string()))?),
            None => base,
        };

        let upstream: Option<Box<dyn Transport>> = match config.cache_mode {
            CacheMode::Replay => None,
            _ => Some(Box::new(ThrottledTransport::new(
                http()?,
                Duration::from_millis(config.min_interval_ms),
                config.concurrency,
                RetryPolicy::default(),
            ))),
        };
        let cache = match config.cache_mode {
            CacheMode::Live => None,
            _ => Some(HttpCache::new(&config.cache_dir)),
        };
        let transport = CachingTransport::new(config.cache_mode, cache, upstream).map_err(cfg_err)?;
        Ok(Self::with_parts(config, provider, Arc::new(transport)))
    }

    /// Assembles a pipeline from prebuilt parts.
    pub fn with_parts(config: PipelineConfig, provider: Box<dyn EmbeddingProvider>, wikidata: Arc<dyn Transport>) -> Self {
        Self { config, provider, wikidata, exec: Execution::default() }
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn client(&self) -> WikidataClient {
        WikidataClient::new(Box::new(self.wikidata.clone()), self.config.wikidata.clone())
    }

    fn load(&self, stage: Stage) -> Result<Vec<Entry>, StageError> {
        dataset::load_dataset(&self.config.dataset).map_err(|e| StageError::new(stage, e.to_string()))
    }

    fn save(&self, stage: Stage, entries: &[Entry]) -> Result<(), StageError> {
        dataset::save_dataset(&self.config.dataset, entries).map_err(|e| StageError::new(stage, e.to_string()))
    }

    /// Segments the raw pages into the dataset. Enrichment already present
    /// for an unchanged entry is carried over.
    pub fn ingest(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let err = |m: String| StageError::new(Stage::Ingest, m);
        let out = corpus::ingest_dir(&self.config.raw_dir, &self.config.page_pattern, self.exec).map_err(|e| err(e.to_string()))?;
        let previous = match dataset::load_dataset(&self.config.dataset) {
            Ok(entries) => entries,
            Err(DatasetError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(err(e.to_string())),
        };
        let previous: HashMap<String, Entry> = previous.into_iter().map(|e| (e.id.clone(), e)).collect();
        let mut entries = out.entries;
        let mut kept = 0;
        for entry in &mut entries {
            if let Some(old) = previous.get(&entry.id) {
                if old.raw_text == entry.raw_text {
                    *entry = old.clone();
                    kept += 1;
                }
            }
        }
        self.save(Stage::Ingest, &entries)?;
        let stats = corpus::corpus_stats(&entries);
        let mut summary = RunSummary::new(Stage::Ingest, started)
            .counts(out.pages_read, entries.len())
            .ratio("mean_words_per_entry", stats.mean_words_per_entry)
            .ratio("mean_chars_per_entry", stats.mean_chars_per_entry);
        summary.warning_count = out.blank_pages;
        log::info!("ingest: {} pages, {} entries, {} carried over", out.pages_read, entries.len(), kept);
        Ok(summary)
    }

    /// Fits the location classifier on the annotated entries and saves it.
    pub fn train(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let err = |m: String| StageError::new(Stage::Train, m);
        let entries = self.load(Stage::Train)?;
        let annotations = dataset::load_annotations(&self.config.annotations).map_err(|e| err(e.to_string()))?;
        let by_id: HashMap<&str, &Entry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let missing: Vec<String> =
            annotations.iter().filter(|a| !by_id.contains_key(a.entry_id.as_str())).map(|a| a.entry_id.clone()).collect();
        if !missing.is_empty() {
            let mut e = err(format!("{} annotated ids are not in the dataset", missing.len()));
            e.entry_ids = missing;
            return Err(e);
        }
        let texts: Vec<&str> = annotations.iter().map(|a| by_id[a.entry_id.as_str()].definition.as_str()).collect();
        let vectors = self.provider.embed_batch(&texts, self.exec).map_err(|e| err(e.to_string()))?;
        let data: Vec<_> = vectors.into_iter().zip(annotations.iter().map(|a| a.label)).collect();
        let model = classifier::train(&data, self.config.hyperparams).map_err(|e| err(e.to_string()))?;
        let report = classifier::evaluate_with(&model, &data, self.exec).map_err(|e| err(e.to_string()))?;
        model.save(&self.config.model).map_err(|e| err(e.to_string()))?;
        Ok(RunSummary::new(Stage::Train, started)
            .counts(annotations.len(), model.trained_on)
            .ratio("training_accuracy", report.accuracy))
    }

    fn load_model(&self, stage: Stage) -> Result<LogisticModel, StageError> {
        let model = LogisticModel::load(&self.config.model).map_err(|e| StageError::new(stage, e.to_string()))?;
        if model.dim != self.provider.dim() {
            return Err(StageError::new(
                stage,
                format!("model dimension {} does not match embedding dimension {}", model.dim, self.provider.dim()),
            ));
        }
        Ok(model)
    }

    fn classify_entries(&self, stage: Stage, model: &LogisticModel, entries: &mut [Entry], only_missing: bool) -> Result<usize, StageError> {
        let idx: Vec<usize> = (0..entries.len()).filter(|&i| !only_missing || entries[i].is_location.is_none()).collect();
        let texts: Vec<&str> = idx.iter().map(|&i| entries[i].definition.as_str()).collect();
        let vectors = self.provider.embed_batch(&texts, self.exec).map_err(|e| StageError::new(stage, e.to_string()))?;
        for (&i, v) in idx.iter().zip(&vectors) {
            let label = model.classify(v).map_err(|e| StageError::new(stage, e.to_string()))?;
            let entry = &mut entries[i];
            if entry.is_location != Some(label) {
                entry.is_location = Some(label);
                if !label {
                    entry.qid = None;
                    entry.similarity = None;
                    entry.lat = None;
                    entry.lon = None;
                }
            }
        }
        Ok(idx.len())
    }

    /// Labels every entry as location or not.
    pub fn classify(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let model = self.load_model(Stage::Classify)?;
        let mut entries = self.load(Stage::Classify)?;
        self.classify_entries(Stage::Classify, &model, &mut entries, false)?;
        self.save(Stage::Classify, &entries)?;
        let locations = entries.iter().filter(|e| e.is_location == Some(true)).count();
        Ok(RunSummary::new(Stage::Classify, started)
            .counts(entries.len(), locations)
            .ratio("location_fraction", fraction(locations, entries.len())))
    }

    /// Links unlinked location entries to Wikidata items. If any entry
    /// fails, nothing is written and the failing ids are reported.
    pub fn link(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let mut entries = self.load(Stage::Link)?;
        if entries.iter().any(|e| e.is_location.is_none()) {
            let model = self.load_model(Stage::Link)?;
            self.classify_entries(Stage::Link, &model, &mut entries, true)?;
        }
        let targets: Vec<Entry> =
            entries.iter().filter(|e| e.is_location == Some(true) && e.qid.is_none()).cloned().collect();
        let client = self.client();
        let linker = Linker::new(self.provider.as_ref(), &client)
            .candidate_limit(self.config.candidate_limit)
            .max_in_flight(self.config.concurrency)
            .min_similarity(self.config.min_sim)
            .execution(self.exec);
        let results = linker.link_batch(&targets);

        let failed: Vec<_> = results.iter().filter(|r| r.error.is_some()).collect();
        if !failed.is_empty() {
            for r in &failed {
                log::error!("link {}: {}", r.entry_id, r.error.as_deref().unwrap_or_default());
            }
            let mut e = StageError::new(
                Stage::Link,
                format!("{} of {} entries failed: {}", failed.len(), targets.len(), failed[0].error.as_deref().unwrap_or_default()),
            );
            e.entry_ids = failed.iter().map(|r| r.entry_id.clone()).collect();
            return Err(e);
        }

        let by_id: HashMap<&str, _> = results.iter().map(|r| (r.entry_id.as_str(), r)).collect();
        let mut linked = 0;
        for entry in &mut entries {
            if let Some(r) = by_id.get(entry.id.as_str()) {
                if let Some(qid) = r.chosen {
                    entry.qid = Some(qid);
                    entry.similarity = Some(r.similarity);
                    entry.lat = None;
                    entry.lon = None;
                    linked += 1;
                }
            }
        }
        self.save(Stage::Link, &entries)?;
        Ok(RunSummary::new(Stage::Link, started)
            .counts(targets.len(), linked)
            .ratio("linked_fraction", fraction(linked, targets.len())))
    }

    /// Fills coordinates for linked entries. All linked QIDs are queried so
    /// that the request sequence does not depend on earlier runs.
    pub fn coords(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let mut entries = self.load(Stage::Coords)?;
        let mut qids: Vec<_> = entries.iter().filter_map(|e| e.qid).collect();
        qids.sort();
        qids.dedup();
        let client = self.client();
        let records = if qids.is_empty() {
            Vec::new()
        } else {
            client.fetch_coordinates(&qids).map_err(|e| StageError::new(Stage::Coords, e.to_string()))?
        };
        let coords: HashMap<_, _> = records.iter().map(|r| (r.qid, (r.lat, r.lon))).collect();
        let mut lacking = 0;
        let mut filled = 0;
        for entry in &mut entries {
            let Some(qid) = entry.qid else { continue };
            if entry.lat.is_some() && entry.lon.is_some() {
                continue;
            }
            lacking += 1;
            if let Some(&(lat, lon)) = coords.get(&qid) {
                entry.lat = Some(lat);
                entry.lon = Some(lon);
                filled += 1;
            }
        }
        self.save(Stage::Coords, &entries)?;
        let mut summary = RunSummary::new(Stage::Coords, started)
            .counts(lacking, filled)
            .ratio("resolved_fraction", fraction(filled, lacking));
        summary.warning_count = client.coordinate_warnings();
        Ok(summary)
    }

    /// Writes the GeoJSON file, the distance histogram and the SVG map.
    pub fn report(&self) -> Result<RunSummary, StageError> {
        let started = Instant::now();
        let err = |m: String| StageError::new(Stage::Report, m);
        let entries = self.load(Stage::Report)?;
        let places = linked_places(&entries).map_err(err)?;
        let points: Vec<GeoPoint> = places.iter().map(|p| p.point).collect();
        let histogram = geo::distance_histogram_with(&points, self.config.reference, self.config.bucket_km, self.exec)
            .map_err(|e| err(e.to_string()))?;
        write_atomic(&self.config.geojson, &geo::geojson_string(&places)).map_err(err)?;
        write_atomic(&self.config.histogram, &histogram.to_csv()).map_err(err)?;
        write_atomic(&self.config.svg, &geo::render_svg_map(&places, self.config.svg_width)).map_err(err)?;
        let linked = entries.iter().filter(|e| e.qid.is_some()).count();
        Ok(RunSummary::new(Stage::Report, started)
            .counts(linked, places.len())
            .ratio("geocoded_fraction", fraction(places.len(), linked)))
    }

    /// Runs every stage in order, training first when no model exists yet.
    pub fn run(&self) -> Result<Vec<RunSummary>, (Vec<RunSummary>, StageError)> {
        let mut done = Vec::new();
        let stages: [StageFn; 6] =
            [Self::ingest, Self::train, Self::classify, Self::link, Self::coords, Self::report];
        for (i, stage) in stages.iter().enumerate() {
            if i == 1 && self.config.model.exists() {
                continue;
            }
            match stage(self) {
                Ok(s) => done.push(s),
                Err(e) => return Err((done, e)),
            }
        }
        Ok(done)
    }
}

/// Entries with a QID and coordinates, in dataset order.
pub fn linked_places(entries: &[Entry]) -> Result<Vec<LinkedPlace>, String> {
    entries
        .iter()
        .filter_map(|e| match (e.qid, e.lat, e.lon) {
            (Some(qid), Some(lat), Some(lon)) => Some((e, qid, lat, lon)),
            _ => None,
        })
        .map(|(e, qid, lat, lon)| {
            let point = GeoPoint::new(lat, lon).map_err(|err| format!("entry {}: {err}", e.id))?;
            Ok(LinkedPlace {
                entry_id: e.id.clone(),
                headword: e.headword.clone(),
                qid,
                point,
                similarity: e.similarity.unwrap_or(0.0),
            })
        })
        .collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), String> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
    tmp.persist(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let stages = [Stage::Config, Stage::Ingest, Stage::Train, Stage::Classify, Stage::Link, Stage::Coords, Stage::Report];
        let codes: Vec<i32> = stages.iter().map(|s| s.exit_code()).collect();
        assert_eq!(codes, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn summary_serializes_flat() {
        let s = RunSummary::new(Stage::Classify, Instant::now()).counts(10, 4).ratio("location_fraction", 0.4);
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["stage"], "classify");
        assert_eq!(v["input_count"], 10);
        assert_eq!(v["ratios"]["location_fraction"], 0.4);
    }

    #[test]
    fn stage_error_lists_entries() {
        let mut e = StageError::new(Stage::Link, "replay miss");
        e.entry_ids = vec!["1:3:1".into()];
        assert_eq!(e.to_string(), "link failed: replay miss (entries: 1:3:1)");
        assert_eq!(e.exit_code(), 5);
    }
}
