//! Lexical retrieval over a protocol-document corpus.
//!
//! Documents are tokenized (lowercase, split on anything that is not
//! alphanumeric), cut into overlapping token windows and indexed with
//! BM25. The persisted index is one JSON file whose keys appear in the
//! order `params, chunks, df, avg_len`.

mod eval;

pub use eval::{augment, grade, load_questions, parse_choice, CategoryScore, EvalReport, McQuestion};

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    /// Standards body or release label, e.g. "3GPP TS 38.211 Rel-17".
    #[serde(default)]
    pub source: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    /// Character offsets into the original text, end exclusive.
    pub start: usize,
    pub end: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut idx = 0;
    for (i, ch) in text.chars().enumerate() {
        idx = i + 1;
        if ch.is_alphanumeric() {
            let entry = current.get_or_insert_with(|| (i, String::new()));
            entry.1.extend(ch.to_lowercase());
        } else if let Some((start, term)) = current.take() {
            tokens.push(Token { term, start, end: i });
        }
    }
    if let Some((start, term)) = current {
        tokens.push(Token { term, start, end: idx });
    }
    tokens
}

fn terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.term).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub source: String,
    /// `(start_char, end_char)`, end exclusive.
    pub span: (usize, usize),
    pub text: String,
    pub token_count: usize,
    /// Term frequencies within the chunk.
    pub tf: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub chunk_tokens: usize,
    pub overlap_tokens: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            chunk_tokens: 256,
            overlap_tokens: 64,
            k1: 1.2,
            b: 0.75,
        }
    }
}

impl IndexParams {
    pub fn with_chunking(chunk_tokens: usize, overlap_tokens: usize) -> Self {
        IndexParams {
            chunk_tokens,
            overlap_tokens,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chunk_tokens == 0 {
            return Err(Error::invalid("chunk size must be at least one token"));
        }
        if self.overlap_tokens >= self.chunk_tokens {
            return Err(Error::invalid("overlap must be smaller than the chunk size"));
        }
        if !(self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b)) {
            return Err(Error::invalid("BM25 parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkIndex {
    pub params: IndexParams,
    pub chunks: Vec<Chunk>,
    /// Number of chunks containing each term.
    pub df: BTreeMap<String, u32>,
    pub avg_len: f64,
}

pub const DEFAULT_TOP_K: usize = 5;

pub fn ingest(docs: &[DocumentRecord], chunk_tokens: usize, overlap_tokens: usize) -> Result<ChunkIndex> {
    ingest_with(docs, IndexParams::with_chunking(chunk_tokens, overlap_tokens))
}

pub fn ingest_with(docs: &[DocumentRecord], params: IndexParams) -> Result<ChunkIndex> {
    params.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
        if d.text.is_empty() {
            return Err(Error::invalid(format!("document `{}` has no text", d.doc_id)));
        }
    }

    let step = params.chunk_tokens - params.overlap_tokens;
    let mut chunks = Vec::new();
    for d in docs {
        let tokens = tokenize(&d.text);
        let chars: Vec<char> = d.text.chars().collect();
        let mut start = 0;
        while start < tokens.len() {
            let end = (start + params.chunk_tokens).min(tokens.len());
            let window = &tokens[start..end];
            let span = (window[0].start, window[window.len() - 1].end);
            let mut tf = BTreeMap::new();
            for t in window {
                *tf.entry(t.term.clone()).or_insert(0) += 1;
            }
            chunks.push(Chunk {
                doc_id: d.doc_id.clone(),
                source: d.source.clone(),
                span,
                text: chars[span.0..span.1].iter().collect(),
                token_count: window.len(),
                tf,
            });
            if end == tokens.len() {
                break;
            }
            start += step;
        }
    }
    Ok(ChunkIndex::from_chunks(params, chunks))
}

impl ChunkIndex {
    fn from_chunks(params: IndexParams, chunks: Vec<Chunk>) -> Self {
        let mut df = BTreeMap::new();
        for c in &chunks {
            for term in c.tf.keys() {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let avg_len = if chunks.is_empty() {
            0.0
        } else {
            chunks.iter().map(|c| c.token_count as f64).sum::<f64>() / chunks.len() as f64
        };
        ChunkIndex {
            params,
            chunks,
            df,
            avg_len,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: ChunkIndex =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        index.check_consistency()?;
        Ok(index)
    }

    fn check_consistency(&self) -> Result<()> {
        let rebuilt = ChunkIndex::from_chunks(self.params, self.chunks.clone());
        if rebuilt.df != self.df {
            return Err(Error::invalid("index document frequencies disagree with its chunks"));
        }
        if (rebuilt.avg_len - self.avg_len).abs() > 1e-9 * self.avg_len.max(1.0) {
            return Err(Error::invalid("index average length disagrees with its chunks"));
        }
        Ok(())
    }

    /// Okapi BM25 with the non-negative `ln(1 + (N − df + ½)/(df + ½))` IDF.
    pub fn score(&self, chunk: &Chunk, query_terms: &[String]) -> f64 {
        let n = self.chunks.len() as f64;
        let IndexParams { k1, b, .. } = self.params;
        let norm = k1 * (1.0 - b + b * chunk.token_count as f64 / self.avg_len);
        query_terms
            .iter()
            .filter_map(|term| {
                let tf = *chunk.tf.get(term)? as f64;
                let df = *self.df.get(term)? as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                Some(idf * tf * (k1 + 1.0) / (tf + norm))
            })
            .sum()
    }

    /// Top-`k` chunks by descending score. Ties go to the smaller
    /// `(doc_id, span.start)`; zero scores are dropped.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<(&Chunk, f64)> {
        let mut seen = HashSet::new();
        let query_terms: Vec<String> = terms(query).into_iter().filter(|t| seen.insert(t.clone())).collect();
        if query_terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(&Chunk, f64)> = self
            .chunks
            .iter()
            .map(|c| (c, self.score(c, &query_terms)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|(a, sa), (b, sb)| {
            sb.total_cmp(sa)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
                .then_with(|| a.span.0.cmp(&b.span.0))
        });
        scored.truncate(k);
        scored
    }
}

pub fn retrieve<'a>(index: &'a ChunkIndex, query: &str, k: usize) -> Vec<(&'a Chunk, f64)> {
    index.retrieve(query, k)
}

pub fn load_documents(path: &Path) -> Result<Vec<DocumentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            source: "test".into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    fn words(n: usize, prefix: &str) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn tokenizer_lowercases_and_keeps_digits() {
        let toks = tokenize("NR-PDSCH uses 5G, Rel.17!");
        let terms: Vec<&str> = toks.iter().map(|t| t.term.as_str()).collect();
        assert_eq!(terms, ["nr", "pdsch", "uses", "5g", "rel", "17"]);
        assert_eq!((toks[1].start, toks[1].end), (3, 8));
        assert!(tokenize("  ,;  ").is_empty());
    }

    #[test]
    fn chunk_windows() {
        let idx = ingest(&[doc("a", &words(100, "w"))], 256, 64).unwrap();
        assert_eq!(idx.chunks.len(), 1);
        assert_eq!(idx.chunks[0].token_count, 100);

        let text = words(300, "w");
        let idx = ingest(&[doc("a", &text)], 256, 64).unwrap();
        assert_eq!(idx.chunks.len(), 2);
        assert_eq!(idx.chunks[0].token_count, 256);
        let first_term_of_second = tokenize(&idx.chunks[1].text)[0].term.clone();
        assert_eq!(first_term_of_second, "w192");
        assert_eq!(idx.chunks[1].token_count, 108);
        for c in &idx.chunks {
            let slice: String = text.chars().skip(c.span.0).take(c.span.1 - c.span.0).collect();
            assert_eq!(slice, c.text);
            assert!(c.span.0 < c.span.1);
        }
        assert!((idx.avg_len - 182.0).abs() < 1e-12);
        assert_eq!(idx.df["w200"], 2);
        assert_eq!(idx.df["w10"], 1);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(ingest(&[], 256, 64), Err(Error::EmptyCorpus)));
        assert!(matches!(
            ingest(&[doc("a", "x"), doc("a", "y")], 256, 64),
            Err(Error::DuplicateDocId(_))
        ));
        assert!(ingest(&[doc("a", "x")], 0, 0).is_err());
        assert!(ingest(&[doc("a", "x")], 8, 8).is_err());
    }

    #[test]
    fn ingest_is_deterministic() {
        let docs = [doc("b", "beam management procedure"), doc("a", "random access channel")];
        assert_eq!(ingest(&docs, 4, 1).unwrap().to_json(), ingest(&docs, 4, 1).unwrap().to_json());
    }

    #[test]
    fn persisted_key_order() {
        let json = ingest(&[doc("a", "x y z")], 4, 1).unwrap().to_json();
        let pos: Vec<usize> = ["\"params\"", "\"chunks\"", "\"df\"", "\"avg_len\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn retrieval_basics() {
        let docs = [
            doc("a", "the physical random access channel carries the preamble"),
            doc("b", "the paging channel carries paging messages"),
            doc("c", "harq feedback timing"),
        ];
        let idx = ingest(&docs, 256, 64).unwrap();
        assert!(idx.retrieve("", 5).is_empty());
        assert!(idx.retrieve("?!", 5).is_empty());
        let hits = idx.retrieve("random access preamble", 5);
        assert_eq!(hits[0].0.doc_id, "a");
        assert_eq!(hits.len(), 1);
        let all = idx.retrieve("channel harq", 10);
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(idx.retrieve("unrelatedterm", 3).is_empty());
    }

    #[test]
    fn ties_break_by_doc_then_offset() {
        let docs = [doc("z", "alpha beta"), doc("m", "alpha gamma"), doc("a", "alpha delta")];
        let idx = ingest(&docs, 256, 64).unwrap();
        let ids: Vec<&str> = idx.retrieve("alpha", 3).iter().map(|(c, _)| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn unrelated_document_keeps_order() {
        let base = vec![
            doc("a", "scheduling request resource scheduling"),
            doc("b", "scheduling grant"),
            doc("c", "grant free uplink"),
        ];
        let before: Vec<String> = ingest(&base, 256, 64)
            .unwrap()
            .retrieve("scheduling grant", 5)
            .iter()
            .map(|(c, _)| c.doc_id.clone())
            .collect();
        let mut more = base.clone();
        more.push(doc("d", "carrier aggregation secondary cell"));
        let after: Vec<String> = ingest(&more, 256, 64)
            .unwrap()
            .retrieve("scheduling grant", 5)
            .iter()
            .map(|(c, _)| c.doc_id.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn load_rejects_tampered_index() {
        let mut idx = ingest(&[doc("a", "x y z")], 4, 1).unwrap();
        idx.df.insert("phantom".into(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        idx.save(&path).unwrap();
        assert!(ChunkIndex::load(&path).is_err());
    }
}
