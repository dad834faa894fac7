//! Candidate ranking and entry-to-item linking.
//!
//! For a location entry: search Wikidata with its headword, keep up to five
//! items, embed the entry definition and each item's description, rank the
//! items by cosine similarity and link the entry to the top one.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{extract_headword, Entry};
use crate::embedding::{cosine_similarity, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::exec::Execution;
use crate::wikidata::{Qid, WikidataCandidate, WikidataClient, WikidataError};

pub const DEFAULT_CANDIDATE_LIMIT: usize = 5;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("entry {entry_id}: {source}")]
    Wikidata {
        entry_id: String,
        #[source]
        source: WikidataError,
    },
    #[error("entry {entry_id}: embedding failed: {source}")]
    Embedding {
        entry_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("entry {entry_id}: no usable headword")]
    NoHeadword { entry_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: WikidataCandidate,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub entry_id: String,
    pub chosen: Option<Qid>,
    /// Similarity of the chosen candidate; 0 when nothing was chosen.
    pub similarity: f64,
    /// All candidates, best first.
    pub considered: Vec<ScoredCandidate>,
    /// Set when linking this entry failed; the entry is then unlinked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LinkResult {
    fn unlinked(entry_id: &str, error: Option<String>) -> Self {
        Self { entry_id: entry_id.to_string(), chosen: None, similarity: 0.0, considered: Vec::new(), error }
    }
}

/// Ranking order: similarity descending, then numeric QID ascending.
fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then(a.candidate.qid.cmp(&b.candidate.qid))
}

/// Scores every candidate against the entry vector and sorts them best first.
pub fn rank_candidates(
    entry_vec: &EmbeddingVector,
    candidates: Vec<(WikidataCandidate, EmbeddingVector)>,
) -> Result<Vec<ScoredCandidate>, EmbedError> {
    let mut scored = candidates
        .into_iter()
        .map(|(candidate, vec)| Ok(ScoredCandidate { similarity: cosine_similarity(entry_vec, &vec)?, candidate }))
        .collect::<Result<Vec<_>, EmbedError>>()?;
    scored.sort_by(rank_order);
    Ok(scored)
}

/// Links entries using one embedding provider and one Wikidata client.
pub struct Linker<'a> {
    provider: &'a dyn EmbeddingProvider,
    client: &'a WikidataClient,
    candidate_limit: usize,
    max_in_flight: usize,
    min_similarity: f64,
    exec: Execution,
}

impl<'a> Linker<'a> {
    pub fn new(provider: &'a dyn EmbeddingProvider, client: &'a WikidataClient) -> Self {
        Self {
            provider,
            client,
            candidate_limit: DEFAULT_CANDIDATE_LIMIT,
            max_in_flight: 4,
            min_similarity: -1.0,
            exec: Execution::default(),
        }
    }

    pub fn candidate_limit(mut self, limit: usize) -> Self {
        self.candidate_limit = limit;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    /// Leaves an entry unlinked when its best similarity is below `min`.
    /// The default of -1 never rejects anything.
    pub fn min_similarity(mut self, min: f64) -> Self {
        self.min_similarity = min;
        self
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn link_entry(&self, entry: &Entry) -> Result<LinkResult, LinkError> {
        let entry_id = entry.id.as_str();
        let wd = |source| LinkError::Wikidata { entry_id: entry_id.to_string(), source };
        let headword = extract_headword(&entry.raw_text)
            .ok()
            .or_else(|| Some(entry.headword.clone()).filter(|h| !h.trim().is_empty()))
            .ok_or_else(|| LinkError::NoHeadword { entry_id: entry_id.to_string() })?;

        let mut candidates = self.client.search_candidates(&headword, self.candidate_limit).map_err(wd)?;
        if candidates.is_empty() {
            return Ok(LinkResult::unlinked(entry_id, None));
        }
        let qids: Vec<Qid> = candidates.iter().map(|c| c.qid).collect();
        let descriptions = self.client.fetch_descriptions(&qids).map_err(wd)?;
        for c in &mut candidates {
            c.description_sv = descriptions.get(&c.qid).cloned().flatten();
        }

        let embed_err = |source| LinkError::Embedding { entry_id: entry_id.to_string(), source };
        let mut texts: Vec<&str> = vec![entry.definition.as_str()];
        texts.extend(candidates.iter().map(|c| c.description_sv.as_deref().unwrap_or("")));
        let mut vectors = self.provider.embed_batch(&texts, Execution::Sequential).map_err(embed_err)?.into_iter();
        let entry_vec = vectors.next().expect("one vector per text");
        let considered = rank_candidates(&entry_vec, candidates.into_iter().zip(vectors).collect()).map_err(embed_err)?;

        let best = considered.first().filter(|best| best.similarity >= self.min_similarity);
        Ok(LinkResult {
            entry_id: entry_id.to_string(),
            chosen: best.map(|b| b.candidate.qid),
            similarity: best.map_or(0.0, |b| b.similarity),
            considered,
            error: None,
        })
    }

    /// Links every entry, in input order. Failures are recorded on the
    /// corresponding result instead of aborting the batch.
    pub fn link_batch(&self, entries: &[Entry]) -> Vec<LinkResult> {
        self.exec.map_bounded(entries, self.max_in_flight, |entry| {
            self.link_entry(entry).unwrap_or_else(|err| {
                log::warn!("{err}");
                LinkResult::unlinked(&entry.id, Some(err.to_string()))
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::http::{HttpRequest, HttpResponse, Transport, TransportError};
    use crate::wikidata::WikidataConfig;

    fn q(n: u64) -> Qid {
        Qid::new(n).unwrap()
    }

    fn cand(n: u64) -> WikidataCandidate {
        WikidataCandidate { qid: q(n), label: format!("item {n}"), description_sv: None }
    }

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn singleton_ranks_first_whatever_its_score() {
        let ranked = rank_candidates(&v(&[1.0, 0.0]), vec![(cand(9), v(&[-1.0, 0.0]))]).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].candidate.qid, q(9));
        assert_eq!(ranked[0].similarity, -1.0);
    }

    #[test]
    fn orders_by_similarity() {
        // unit entry vector e1; candidates at cos 0.2 and 0.9
        let low = v(&[0.2, (1.0f64 - 0.04).sqrt()]);
        let high = v(&[0.9, (1.0f64 - 0.81).sqrt()]);
        let ranked = rank_candidates(&v(&[1.0, 0.0]), vec![(cand(1), low), (cand(2), high)]).unwrap();
        assert_eq!(ranked[0].candidate.qid, q(2));
        assert!((ranked[0].similarity - 0.9).abs() < 1e-12);
        assert!((ranked[1].similarity - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lower_qid() {
        let same = v(&[0.5, 0.5]);
        let ranked =
            rank_candidates(&v(&[1.0, 0.0]), vec![(cand(500), same.clone()), (cand(17), same.clone()), (cand(90), same)])
                .unwrap();
        let order: Vec<u64> = ranked.iter().map(|r| r.candidate.qid.number()).collect();
        assert_eq!(order, [17, 90, 500]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(rank_candidates(&v(&[1.0, 0.0]), vec![(cand(1), v(&[1.0]))]).is_err());
    }

    /// Search returns nothing for every headword except "Iowa".
    struct TinyWikidata;

    impl Transport for TinyWikidata {
        fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
            let body = if request.url.contains("wbsearchentities") {
                if request.url.contains("search=Iowa") {
                    r#"{"search":[{"id":"Q1546","label":"Iowa"},{"id":"Q99670857","label":"Iowa"}]}"#
                } else if request.url.contains("search=Broken") {
                    return Err(TransportError::Status { status: 404, url: request.url.clone() });
                } else {
                    r#"{"search":[]}"#
                }
            } else {
                r#"{"entities":{"Q1546":{"descriptions":{"sv":{"value":"state of the United States of America"}}},"Q99670857":{"descriptions":{"sv":{"value":"the federated state of Iowa in the USA as depicted in Star Trek"}}}}}"#
            };
            Ok(HttpResponse { status: 200, body: body.into() })
        }
    }

    fn entry(raw: &str, ordinal: u32) -> Entry {
        Entry::from_raw(12, 1, ordinal, raw).unwrap()
    }

    #[test]
    fn empty_search_gives_unlinked_result() {
        let client = WikidataClient::new(Box::new(TinyWikidata), WikidataConfig::default());
        let provider = HashingEmbedder::default();
        let r = Linker::new(&provider, &client).link_entry(&entry("Arktonnesos, halfö.", 1)).unwrap();
        assert_eq!(r.chosen, None);
        assert!(r.considered.is_empty());
        assert!(r.error.is_none());
    }

    #[test]
    fn chosen_is_argmax_and_score_is_reproducible() {
        let client = WikidataClient::new(Box::new(TinyWikidata), WikidataConfig::default());
        let provider = HashingEmbedder::default();
        let e = entry("Iowa, en af Nord-Amerikas förenta stater.", 1);
        let r = Linker::new(&provider, &client).link_entry(&e).unwrap();
        assert_eq!(r.considered.len(), 2);
        let best = &r.considered[0];
        assert_eq!(r.chosen, Some(best.candidate.qid));
        assert!(r.considered.iter().all(|c| c.similarity <= r.similarity));
        let recomputed = cosine_similarity(
            &provider.embed(&e.definition).unwrap(),
            &provider.embed(best.candidate.description_sv.as_deref().unwrap()).unwrap(),
        )
        .unwrap();
        assert!((recomputed - r.similarity).abs() < 1e-9);
    }

    #[test]
    fn min_similarity_can_reject_the_best_candidate() {
        let client = WikidataClient::new(Box::new(TinyWikidata), WikidataConfig::default());
        let provider = HashingEmbedder::default();
        let r = Linker::new(&provider, &client)
            .min_similarity(0.99)
            .link_entry(&entry("Iowa, en af Nord-Amerikas förenta stater.", 1))
            .unwrap();
        assert_eq!(r.chosen, None);
        assert_eq!(r.considered.len(), 2);
    }

    #[test]
    fn batch_keeps_order_and_isolates_failures() {
        let client = WikidataClient::new(Box::new(TinyWikidata), WikidataConfig::default());
        let provider = HashingEmbedder::default();
        let entries = [entry("Iowa, stat.", 1), entry("Broken, x.", 2), entry("Aal, fisk.", 3)];
        let results = Linker::new(&provider, &client).link_batch(&entries);
        let ids: Vec<&str> = results.iter().map(|r| r.entry_id.as_str()).collect();
        assert_eq!(ids, ["12:1:1", "12:1:2", "12:1:3"]);
        assert!(results[0].chosen.is_some());
        assert!(results[1].error.as_deref().unwrap().contains("12:1:2"));
        assert!(results[2].error.is_none());
        assert!(Linker::new(&provider, &client).link_batch(&[]).is_empty());
    }
}
