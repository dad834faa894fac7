//! Page loading, entry segmentation and the definition truncation rule.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::wikidata::Qid;

/// Maximum length of a stored definition, in Unicode scalar values.
pub const DEFINITION_MAX_CHARS: usize = 200;

/// A new entry starts only if its first `,` or `.` falls inside this window.
const ENTRY_START_WINDOW: usize = 40;

/// Default layout of a raw dump: one file per page, grouped by volume.
pub const DEFAULT_PAGE_PATTERN: &str = "{volume}/{page}.txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("entry text is empty or whitespace only")]
    UnusableEntry,
    #[error("duplicate page volume {volume} page {page}")]
    DuplicatePage { volume: u32, page: u32 },
    #[error("invalid page pattern {0:?}: expected a {{volume}} placeholder")]
    BadPattern(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("walking {0}: {1}")]
    Walk(PathBuf, walkdir::Error),
}

/// OCR text of one scanned page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPage {
    pub volume: u32,
    pub page_no: u32,
    pub text: String,
}

impl RawPage {
    pub fn new(volume: u32, page_no: u32, text: impl Into<String>) -> Self {
        Self { volume, page_no, text: text.into() }
    }
}

/// One encyclopedia article, plus the fields later stages fill in.
///
/// This is also the on-disk dataset record; optional fields stay absent
/// until the stage that owns them has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub volume: u32,
    pub page: u32,
    pub headword: String,
    pub definition: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_location: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<Qid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl Entry {
    /// Builds an entry from its untruncated text. Headword and definition
    /// are derived from `raw_text`.
    pub fn from_raw(volume: u32, page: u32, ordinal: u32, raw_text: impl Into<String>) -> Result<Self, CorpusError> {
        let raw_text = raw_text.into();
        let headword = extract_headword(&raw_text)?;
        Ok(Self {
            id: format!("{volume}:{page}:{ordinal}"),
            volume,
            page,
            headword,
            definition: truncate_definition(&raw_text),
            raw_text,
            is_location: None,
            qid: None,
            similarity: None,
            lat: None,
            lon: None,
        })
    }

    /// Drops everything the classify/link/coords stages wrote.
    pub fn clear_enrichment(&mut self) {
        self.is_location = None;
        self.qid = None;
        self.similarity = None;
        self.lat = None;
        self.lon = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub entry_count: usize,
    pub mean_words_per_entry: f64,
    pub mean_chars_per_entry: f64,
}

/// Cuts `text` after 200 characters, then drops everything after the last
/// period in what remains. A prefix without any period is kept whole.
pub fn truncate_definition(text: &str) -> String {
    let prefix = match text.char_indices().nth(DEFINITION_MAX_CHARS) {
        Some((byte_idx, _)) => &text[..byte_idx],
        None => text,
    };
    match prefix.rfind('.') {
        Some(idx) => prefix[..=idx].to_string(),
        None => prefix.to_string(),
    }
}

/// First whitespace-delimited token with bracketed hints and trailing
/// `, . : ;` removed. Tokens that are pure punctuation are returned as is.
pub fn extract_headword(raw_text: &str) -> Result<String, CorpusError> {
    let token = raw_text.split_whitespace().next().ok_or(CorpusError::UnusableEntry)?;
    let unbracketed = token.split('[').next().unwrap_or(token);
    let stripped = unbracketed.trim_end_matches([',', '.', ':', ';']);
    if stripped.is_empty() {
        Ok(token.to_string())
    } else {
        Ok(stripped.to_string())
    }
}

pub fn corpus_stats(entries: &[Entry]) -> CorpusStats {
    if entries.is_empty() {
        return CorpusStats { entry_count: 0, mean_words_per_entry: 0.0, mean_chars_per_entry: 0.0 };
    }
    let (words, chars) = entries.iter().fold((0usize, 0usize), |(w, c), e| {
        (w + e.raw_text.split_whitespace().count(), c + e.raw_text.chars().count())
    });
    let n = entries.len() as f64;
    CorpusStats {
        entry_count: entries.len(),
        mean_words_per_entry: words as f64 / n,
        mean_chars_per_entry: chars as f64 / n,
    }
}

/// How the previous non-empty line ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineEnd {
    /// Start of a volume, or a blank line was seen.
    Break,
    /// Sentence-final punctuation.
    Terminal,
    /// Word broken by a line-end hyphen.
    Hyphen,
    Open,
}

fn line_end(line: &str) -> LineEnd {
    let mut rev = line.chars().rev();
    match rev.next() {
        Some('-') if rev.next().is_some_and(char::is_alphabetic) => LineEnd::Hyphen,
        Some('.' | '!' | '?' | ')' | ']' | ':') => LineEnd::Terminal,
        _ => LineEnd::Open,
    }
}

/// A line opens an entry when its first token is capitalized and a `,` or
/// `.` appears within the first 40 characters.
fn looks_like_entry_start(line: &str) -> bool {
    let mut chars = line.chars();
    if !chars.next().is_some_and(char::is_uppercase) {
        return false;
    }
    line.chars().take(ENTRY_START_WINDOW).skip(1).any(|c| c == ',' || c == '.')
}

struct PendingEntry {
    page: u32,
    ordinal: u32,
    text: String,
}

fn segment_volume(volume: u32, pages: &[&RawPage]) -> Vec<Entry> {
    let mut entries = Vec::new();
    let mut current: Option<PendingEntry> = None;
    let mut ordinals: HashMap<u32, u32> = HashMap::new();
    let mut prev = LineEnd::Break;

    let finish = |pending: Option<PendingEntry>, entries: &mut Vec<Entry>| {
        if let Some(p) = pending {
            // raw text always holds at least one non-blank line
            if let Ok(entry) = Entry::from_raw(volume, p.page, p.ordinal, p.text) {
                entries.push(entry);
            }
        }
    };

    for page in pages {
        for line in page.text.lines() {
            let line = line.trim();
            if line.is_empty() {
                if prev != LineEnd::Hyphen {
                    prev = LineEnd::Break;
                }
                continue;
            }
            let starts_lower = line.chars().next().is_some_and(char::is_lowercase);
            match current.as_mut() {
                Some(pending) if prev == LineEnd::Hyphen => {
                    if starts_lower {
                        pending.text.pop();
                    }
                    pending.text.push_str(line);
                }
                Some(pending)
                    if !(matches!(prev, LineEnd::Break | LineEnd::Terminal) && looks_like_entry_start(line)) =>
                {
                    pending.text.push(' ');
                    pending.text.push_str(line);
                }
                _ => {
                    finish(current.take(), &mut entries);
                    let ordinal = ordinals.entry(page.page_no).or_insert(0);
                    *ordinal += 1;
                    current = Some(PendingEntry { page: page.page_no, ordinal: *ordinal, text: line.to_string() });
                }
            }
            prev = line_end(line);
        }
    }
    finish(current.take(), &mut entries);
    entries
}

/// Splits page text into entries. Pages must be sorted by
/// `(volume, page_no)`; entries running over a page break are merged, but
/// volumes are segmented independently of each other.
pub fn segment_pages(pages: &[RawPage]) -> Vec<Entry> {
    segment_pages_with(pages, Execution::default())
}

pub fn segment_pages_with(pages: &[RawPage], exec: Execution) -> Vec<Entry> {
    let mut volumes: BTreeMap<u32, Vec<&RawPage>> = BTreeMap::new();
    for page in pages {
        volumes.entry(page.volume).or_default().push(page);
    }
    let volumes: Vec<(u32, Vec<&RawPage>)> = volumes.into_iter().collect();
    exec.map(&volumes, |(volume, pages)| segment_volume(*volume, pages)).into_iter().flatten().collect()
}

/// Location of one page file inside a raw dump directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageFile {
    pub volume: u32,
    pub page_no: u32,
    pub path: PathBuf,
}

fn pattern_regex(pattern: &str) -> Result<Regex, CorpusError> {
    if !pattern.contains("{volume}") {
        return Err(CorpusError::BadPattern(pattern.to_string()));
    }
    let mut re = String::from("^");
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        re.push_str(&regex::escape(&rest[..start]));
        let tail = &rest[start..];
        if let Some(r) = tail.strip_prefix("{volume}") {
            re.push_str(r"(?P<volume>\d+)");
            rest = r;
        } else if let Some(r) = tail.strip_prefix("{page}") {
            re.push_str(r"(?P<page>\d+)");
            rest = r;
        } else {
            return Err(CorpusError::BadPattern(pattern.to_string()));
        }
    }
    re.push_str(&regex::escape(rest));
    re.push('$');
    Regex::new(&re).map_err(|_| CorpusError::BadPattern(pattern.to_string()))
}

/// Lists the page files under `root` matching `pattern`, sorted by volume
/// and page. A pattern without `{page}` treats each file as a whole volume
/// with page number 1.
pub fn discover_pages(root: &Path, pattern: &str) -> Result<Vec<PageFile>, CorpusError> {
    let re = pattern_regex(pattern)?;
    let mut found = Vec::new();
    for item in walkdir::WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| CorpusError::Walk(root.to_path_buf(), e))?;
        if !item.file_type().is_file() {
            continue;
        }
        let Ok(rel) = item.path().strip_prefix(root) else { continue };
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let Some(caps) = re.captures(&rel) else { continue };
        let volume = caps["volume"].parse().unwrap_or(0);
        let page_no = caps.name("page").map_or(Some(1), |m| m.as_str().parse().ok()).unwrap_or(0);
        if volume == 0 || page_no == 0 {
            continue;
        }
        found.push(PageFile { volume, page_no, path: item.into_path() });
    }
    found.sort_by_key(|p| (p.volume, p.page_no));
    for pair in found.windows(2) {
        if (pair[0].volume, pair[0].page_no) == (pair[1].volume, pair[1].page_no) {
            return Err(CorpusError::DuplicatePage { volume: pair[0].volume, page: pair[0].page_no });
        }
    }
    Ok(found)
}

/// Reads a page file. Blank pages yield `None`.
pub fn read_page(file: &PageFile) -> Result<Option<RawPage>, CorpusError> {
    let text = fs::read_to_string(&file.path).map_err(|source| CorpusError::Io { path: file.path.clone(), source })?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(RawPage::new(file.volume, file.page_no, text)))
}

/// Result of ingesting a raw dump directory.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub entries: Vec<Entry>,
    pub pages_read: usize,
    pub blank_pages: usize,
}

/// Reads and segments every volume under `root`. Volumes are loaded and
/// segmented one at a time per worker, so memory scales with the widest
/// volume rather than the whole dump.
pub fn ingest_dir(root: &Path, pattern: &str, exec: Execution) -> Result<IngestOutput, CorpusError> {
    let files = discover_pages(root, pattern)?;
    let mut by_volume: BTreeMap<u32, Vec<PageFile>> = BTreeMap::new();
    for file in files {
        by_volume.entry(file.volume).or_default().push(file);
    }
    let volumes: Vec<(u32, Vec<PageFile>)> = by_volume.into_iter().collect();
    let results = exec.map(&volumes, |(volume, files)| -> Result<(Vec<Entry>, usize, usize), CorpusError> {
        let mut pages = Vec::with_capacity(files.len());
        let mut blank = 0;
        for file in files {
            match read_page(file)? {
                Some(page) => pages.push(page),
                None => blank += 1,
            }
        }
        let refs: Vec<&RawPage> = pages.iter().collect();
        Ok((segment_volume(*volume, &refs), pages.len(), blank))
    });
    let mut out = IngestOutput { entries: Vec::new(), pages_read: 0, blank_pages: 0 };
    for result in results {
        let (entries, read, blank) = result?;
        out.entries.extend(entries);
        out.pages_read += read;
        out.blank_pages += blank;
    }
    Ok(out)
}
