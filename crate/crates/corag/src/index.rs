//! Okapi BM25 inverted index over a passage store.
//!
//! Scoring follows the standard Okapi form,
//! `idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avglen))` with
//! `idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5))`, which keeps idf
//! nonnegative. Documents matching no query term are never returned.

use crate::corpus::{Passage, PassageId, TokenSeq};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty store")]
    EmptyStore,
    #[error("duplicate passage id `{0}` in store")]
    DuplicateId(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid index cache {path}: {reason}")]
    BadCache { path: String, reason: String },
}

/// BM25 free parameters. Defaults are the usual k1=1.2, b=0.75.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index. Documents are internally numbered by ascending
/// passage id, which makes builds independent of insertion order and gives
/// postings a canonical order.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<PassageId>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
    avg_doc_len: f64,
    params: Bm25Params,
}

/// Search results ordered by descending score, ties broken by ascending
/// passage id. Contains no duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<(PassageId, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Bm25Index {
    /// Builds an index over the given passages. Tokenization is the shared
    /// index-path normalization.
    pub fn build(passages: &[Arc<Passage>], params: Bm25Params) -> Result<Self, IndexError> {
        if passages.is_empty() {
            return Err(IndexError::EmptyStore);
        }
        let mut sorted: Vec<&Arc<Passage>> = passages.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in sorted.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(IndexError::DuplicateId(pair[0].id.clone()));
            }
        }

        let mut doc_ids = Vec::with_capacity(sorted.len());
        let mut doc_lengths = Vec::with_capacity(sorted.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (doc, passage) in sorted.iter().enumerate() {
            let tokens = crate::corpus::normalize(&passage.text);
            doc_ids.push(passage.id.clone());
            doc_lengths.push(tokens.len() as u32);

            let mut tf: HashMap<&str, u32> = HashMap::new();
            for token in tokens.iter() {
                *tf.entry(token.as_str()).or_insert(0) += 1;
            }
            // Insert in sorted-term order so per-term posting vectors grow in
            // doc order and builds stay deterministic.
            let mut terms: Vec<(&str, u32)> = tf.into_iter().collect();
            terms.sort_unstable();
            for (term, count) in terms {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
        }

        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        Ok(Bm25Index {
            doc_ids,
            doc_lengths,
            postings,
            avg_doc_len,
            params,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_ids(&self) -> &[PassageId] {
        &self.doc_ids
    }

    /// Document length (token count) by passage id.
    pub fn doc_len(&self, id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
            .map(|i| self.doc_lengths[i])
    }

    /// Number of documents containing `term`.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, |p| p.len())
    }

    /// Top-k search. Documents matching zero query terms are excluded; an
    /// empty query yields an empty list.
    pub fn search(&self, query: &TokenSeq, k: usize) -> RankedList {
        if query.is_empty() || k == 0 {
            return RankedList::default();
        }
        let n = self.n_docs() as f64;
        let Bm25Params { k1, b } = self.params;

        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in query.iter() {
            let Some(postings) = self.postings.get(term.as_str()) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for posting in postings {
                let tf = posting.tf as f64;
                let len = self.doc_lengths[posting.doc as usize] as f64;
                let norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / self.avg_doc_len));
                *scores.entry(posting.doc).or_insert(0.0) += idf * norm;
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        // Descending score, ascending id. Doc numbers are in id order, so
        // comparing them is comparing ids.
        ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        RankedList {
            entries: ranked
                .into_iter()
                .map(|(doc, score)| (self.doc_ids[doc as usize].clone(), score))
                .collect(),
        }
    }

    /// Writes a versioned binary cache. The layout is fully canonical
    /// (sorted ids and terms), so the same (store, params) always produces
    /// identical bytes.
    pub fn save_cache(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.params.k1.to_le_bytes());
        buf.extend_from_slice(&self.params.b.to_le_bytes());
        buf.extend_from_slice(&(self.doc_ids.len() as u32).to_le_bytes());
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut buf, id);
            buf.extend_from_slice(&len.to_le_bytes());
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort_unstable();
        buf.extend_from_slice(&(terms.len() as u32).to_le_bytes());
        for term in terms {
            write_str(&mut buf, term);
            let postings = &self.postings[term];
            buf.extend_from_slice(&(postings.len() as u32).to_le_bytes());
            for p in postings {
                buf.extend_from_slice(&p.doc.to_le_bytes());
                buf.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        std::fs::write(path, &buf).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a cache written by [`Bm25Index::save_cache`].
    pub fn load_cache(path: &Path) -> Result<Self, IndexError> {
        let display = path.display().to_string();
        let mut file = std::fs::File::open(path).map_err(|source| IndexError::Io {
            path: display.clone(),
            source,
        })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|source| IndexError::Io {
            path: display.clone(),
            source,
        })?;
        let bad = |reason: &str| IndexError::BadCache {
            path: display.clone(),
            reason: reason.to_string(),
        };

        let mut cur = std::io::Cursor::new(&buf);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut cur).map_err(|_| bad("truncated version"))?;
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let k1 = read_f64(&mut cur).map_err(|_| bad("truncated params"))?;
        let b = read_f64(&mut cur).map_err(|_| bad("truncated params"))?;
        let n_docs = read_u32(&mut cur).map_err(|_| bad("truncated doc count"))? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_ids.push(read_str(&mut cur).map_err(|_| bad("truncated doc table"))?);
            doc_lengths.push(read_u32(&mut cur).map_err(|_| bad("truncated doc table"))?);
        }
        let n_terms = read_u32(&mut cur).map_err(|_| bad("truncated term count"))? as usize;
        let mut postings = HashMap::with_capacity(n_terms);
        for _ in 0..n_terms {
            let term = read_str(&mut cur).map_err(|_| bad("truncated postings"))?;
            let len = read_u32(&mut cur).map_err(|_| bad("truncated postings"))? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc = read_u32(&mut cur).map_err(|_| bad("truncated postings"))?;
                let tf = read_u32(&mut cur).map_err(|_| bad("truncated postings"))?;
                if doc as usize >= n_docs {
                    return Err(bad("posting references unknown doc"));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        if n_docs == 0 {
            return Err(bad("empty index"));
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / n_docs as f64;
        Ok(Bm25Index {
            doc_ids,
            doc_lengths,
            postings,
            avg_doc_len,
            params: Bm25Params { k1, b },
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"CORAGIDX";
const CACHE_VERSION: u32 = 1;

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn read_u32(cur: &mut std::io::Cursor<&Vec<u8>>) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(cur: &mut std::io::Cursor<&Vec<u8>>) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(cur: &mut std::io::Cursor<&Vec<u8>>) -> std::io::Result<String> {
    let len = read_u32(cur)? as usize;
    let mut b = vec![0u8; len];
    cur.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
