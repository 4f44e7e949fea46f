//! Guideline ingestion and retrieval: `## <section>` documents are split into
//! paragraph-bounded chunks, embedded, and searched by exhaustive cosine.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAX_CHUNK_CHARS: usize = 1500;
pub const HASHING_DIM: usize = 256;
pub const STORE_FORMAT: &str = "guideline-store/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    PreEndoscopicManagement,
    EndoscopicManagement,
    SummaryOfEvidence,
    Recommendations,
    Conclusions,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::PreEndoscopicManagement,
        Section::EndoscopicManagement,
        Section::SummaryOfEvidence,
        Section::Recommendations,
        Section::Conclusions,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Section::PreEndoscopicManagement => "pre_endoscopic_management",
            Section::EndoscopicManagement => "endoscopic_management",
            Section::SummaryOfEvidence => "summary_of_evidence",
            Section::Recommendations => "recommendations",
            Section::Conclusions => "conclusions",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Section::PreEndoscopicManagement => "Pre-endoscopic management",
            Section::EndoscopicManagement => "Endoscopic management",
            Section::SummaryOfEvidence => "Summary of evidence",
            Section::Recommendations => "Recommendations",
            Section::Conclusions => "Conclusions",
        }
    }

    /// Matches a header case-insensitively, treating `-`/`_` as spaces.
    pub fn from_header(header: &str) -> Option<Section> {
        let norm: String = header
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        Section::ALL
            .into_iter()
            .find(|s| s.label().replace('_', " ") == norm)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub trait Embedder: Send + Sync {
    /// Stable identifier persisted alongside stored vectors.
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: HASHING_DIM }
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-sha256-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let digest = Sha256::digest(token.as_bytes());
            let h = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Validation("text has no embeddable tokens".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineChunk {
    pub id: usize,
    pub section: Section,
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: usize,
    pub section: Section,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    pub format: String,
    pub embedder_id: String,
    pub dim: usize,
    pub chunks: Vec<GuidelineChunk>,
}

/// Splits a document into (section, body) pairs. Text outside recognized
/// `## ` headers is ignored.
pub fn split_sections(document: &str) -> Vec<(Section, String)> {
    let mut out: Vec<(Section, String)> = Vec::new();
    let mut current: Option<usize> = None;
    for line in document.lines() {
        if let Some(header) = line.trim_start().strip_prefix("## ") {
            current = Section::from_header(header).map(|s| {
                out.push((s, String::new()));
                out.len() - 1
            });
            continue;
        }
        if let Some(i) = current {
            out[i].1.push_str(line);
            out[i].1.push('\n');
        }
    }
    out
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Splits an over-long paragraph at whitespace into ≤ `max` character pieces.
fn split_long(paragraph: &str, max: usize) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    for word in paragraph.split_whitespace() {
        if char_len(word) > max {
            // A single unbroken token longer than a chunk: hard cut.
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            let chars: Vec<char> = word.chars().collect();
            pieces.extend(chars.chunks(max).map(|part| part.iter().collect::<String>()));
            continue;
        }
        if !current.is_empty() && char_len(&current) + 1 + char_len(word) > max {
            pieces.push(std::mem::take(&mut current));
        }
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(word);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Greedy packing of blank-line-separated paragraphs into chunks of at most
/// `max` characters, joined by a blank line. No overlap.
pub fn chunk_section(body: &str, max: usize) -> Vec<String> {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    for line in body.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !words.is_empty() {
                let p = words.join(" ");
                words.clear();
                if char_len(&p) > max {
                    paragraphs.extend(split_long(&p, max));
                } else {
                    paragraphs.push(p);
                }
            }
        } else {
            words.extend(line.split_whitespace());
        }
    }
    let mut chunks = Vec::new();
    let mut current = String::new();
    for p in paragraphs {
        if current.is_empty() {
            current = p;
        } else if char_len(&current) + 2 + char_len(&p) <= max {
            current.push_str("\n\n");
            current.push_str(&p);
        } else {
            chunks.push(std::mem::replace(&mut current, p));
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

pub fn ingest_guidelines(document: &str, embedder: &dyn Embedder) -> Result<VectorStore> {
    let sections = split_sections(document);
    if sections.is_empty() {
        return Err(Error::Ingestion(
            "document has no recognized `## <section>` headers".into(),
        ));
    }
    let mut chunks = Vec::new();
    for (section, body) in sections {
        for text in chunk_section(&body, MAX_CHUNK_CHARS) {
            let embedding = embedder.embed(&text)?;
            chunks.push(GuidelineChunk {
                id: chunks.len(),
                section,
                text,
                embedding,
            });
        }
    }
    if chunks.is_empty() {
        return Err(Error::Ingestion("recognized sections contain no text".into()));
    }
    let dim = chunks[0].embedding.len();
    if chunks.iter().any(|c| c.embedding.len() != dim) {
        return Err(Error::Ingestion("embedder returned inconsistent dimensions".into()));
    }
    Ok(VectorStore {
        format: STORE_FORMAT.to_string(),
        embedder_id: embedder.id(),
        dim,
        chunks,
    })
}

impl VectorStore {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: usize) -> Option<&GuidelineChunk> {
        self.chunks.iter().find(|c| c.id == id)
    }

    /// Top-k chunks by cosine to `query`, descending; ties by ascending id.
    pub fn search(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<SearchHit>> {
        if self.chunks.is_empty() {
            return Err(Error::Retrieval("vector store is empty".into()));
        }
        if k == 0 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if embedder.id() != self.embedder_id {
            return Err(Error::Retrieval(format!(
                "store was built with embedder {}, query uses {}",
                self.embedder_id,
                embedder.id()
            )));
        }
        let q = embedder.embed(query)?;
        if q.len() != self.dim {
            return Err(Error::Retrieval(format!(
                "query embedding has {} dimensions, store has {}",
                q.len(),
                self.dim
            )));
        }
        let mut hits: Vec<SearchHit> = self
            .chunks
            .iter()
            .map(|c| SearchHit {
                chunk_id: c.id,
                section: c.section,
                score: cosine(&q, &c.embedding),
                text: c.text.clone(),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id)));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Loads a store, refusing one built by a different embedder.
    pub fn load(path: &Path, embedder_id: &str) -> Result<Self> {
        let store: VectorStore = serde_json::from_str(&fs::read_to_string(path)?)?;
        if store.format != STORE_FORMAT {
            return Err(Error::Schema(format!("unsupported store format {}", store.format)));
        }
        if store.embedder_id != embedder_id {
            return Err(Error::Schema(format!(
                "store embedder {} does not match configured embedder {embedder_id}",
                store.embedder_id
            )));
        }
        Ok(store)
    }
}
