//! Embedding matrices, relevance judgments and TREC run files.
//!
//! Ids are opaque strings at the file boundary and dense row indices
//! everywhere else. Loaders validate every invariant and fail rather than
//! hand back a partially valid value.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Magic prefix of the binary embedding format.
pub const EMBEDDING_MAGIC: &[u8; 5] = b"TRIV1";

/// Tag written in the sixth column of run files.
pub const DEFAULT_RUN_TAG: &str = "trisampler";

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::Data("empty identifier".into()));
    }
    if id.chars().any(char::is_whitespace) {
        return Err(Error::Data(format!("identifier {id:?} contains whitespace")));
    }
    Ok(())
}

/// Row-major dense vectors with one stable string id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    rows: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Data(format!(
                "{} values cannot fill {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at row {} column {}",
                data[pos],
                pos / dim,
                pos % dim
            )));
        }
        let mut rows = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            check_id(id)?;
            if rows.insert(id.clone(), row).is_some() {
                return Err(Error::Data(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self { dim, data, ids, rows })
    }

    /// Builds a matrix from per-row vectors. All rows must share one length.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != ids.len() {
            return Err(Error::Data(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {bad} has dimension {} but row 0 has {dim}",
                rows[bad].len()
            )));
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.rows.get(id).copied()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Serializes into the binary embedding format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|id| id.len() + 1).sum();
        let mut out = Vec::with_capacity(21 + id_bytes + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary embedding format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 21 {
            return Err(Error::Format(format!(
                "embedding header needs 21 bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..5] != EMBEDDING_MAGIC {
            return Err(Error::Format("missing TRIV1 magic".into()));
        }
        let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let dim = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("declared dimension is zero".into()));
        }
        let count = usize::try_from(count)
            .map_err(|_| Error::Format(format!("declared count {count} is too large")))?;
        let dim =
            usize::try_from(dim).map_err(|_| Error::Format(format!("declared dim {dim} is too large")))?;

        let mut cursor = 21;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let rest = &bytes[cursor..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format(format!("id block ends after {i} of {count} ids")))?;
            let id = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::Format(format!("id {i} is not valid UTF-8")))?;
            ids.push(id.to_owned());
            cursor += end + 1;
        }

        let payload = &bytes[cursor..];
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("declared shape overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "declared {count}x{dim} needs {expected} payload bytes, found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(ids, dim, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Binary relevance judgments: query id to its set of positive document ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeSet<String>>,
}

/// Result of parsing a qrels file: the judgments plus the queries that were
/// dropped because no line for them carried a positive grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedQrels {
    pub qrels: Qrels,
    pub dropped: Vec<String>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<Q, D>(pairs: impl IntoIterator<Item = (Q, D)>) -> Self
    where
        Q: Into<String>,
        D: Into<String>,
    {
        let mut qrels = Self::new();
        for (q, d) in pairs {
            qrels.insert(q, d);
        }
        qrels
    }

    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>) {
        self.entries.entry(query.into()).or_default().insert(doc.into());
    }

    pub fn positives(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(query)
    }

    pub fn contains(&self, query: &str, doc: &str) -> bool {
        self.entries.get(query).is_some_and(|s| s.contains(doc))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.entries.iter()
    }

    /// Number of queries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of (query, positive) pairs.
    pub fn pair_count(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    /// Maps every id onto row indices of the given matrices.
    pub fn resolve(&self, queries: &EmbeddingMatrix, corpus: &EmbeddingMatrix) -> Result<ResolvedQrels> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for (q, docs) in &self.entries {
            let query = queries
                .row_of(q)
                .ok_or_else(|| Error::Data(format!("qrels query {q:?} has no embedding")))?;
            let mut positives = docs
                .iter()
                .map(|d| {
                    corpus.row_of(d).ok_or_else(|| {
                        Error::Data(format!("qrels document {d:?} (query {q:?}) not in corpus"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            positives.sort_unstable();
            entries.push(ResolvedQuery { query, positives });
        }
        Ok(ResolvedQrels { entries })
    }
}

/// One query's judgments as row indices. `positives` is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQuery {
    pub query: usize,
    pub positives: Vec<usize>,
}

impl ResolvedQuery {
    pub fn is_positive(&self, doc: usize) -> bool {
        self.positives.binary_search(&doc).is_ok()
    }
}

/// Qrels resolved against a query matrix and a corpus, in query-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQrels {
    pub entries: Vec<ResolvedQuery>,
}

impl ResolvedQrels {
    pub fn pair_count(&self) -> usize {
        self.entries.iter().map(|e| e.positives.len()).sum()
    }

    /// All (query row, positive row) pairs in a stable order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries
            .iter()
            .flat_map(|e| e.positives.iter().map(move |&p| (e.query, p)))
    }
}

/// Parses TREC-style qrels: `qid doc rel` or `qid iter doc rel`.
/// Any grade >= 1 counts as relevant.
pub fn read_qrels(reader: impl BufRead) -> Result<ParsedQrels> {
    let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let (q, d, rel) = match fields.as_slice() {
            [q, d, rel] | [q, _, d, rel] => (*q, *d, *rel),
            _ => {
                return Err(Error::Format(format!(
                    "qrels line {} has {} fields, expected 3 or 4",
                    lineno + 1,
                    fields.len()
                )))
            }
        };
        let grade: i64 = rel.parse().map_err(|_| {
            Error::Format(format!(
                "qrels line {}: relevance {rel:?} is not an integer",
                lineno + 1
            ))
        })?;
        seen.insert(q.to_owned());
        if grade >= 1 {
            entries.entry(q.to_owned()).or_default().insert(d.to_owned());
        }
    }
    let dropped = seen.into_iter().filter(|q| !entries.contains_key(q)).collect();
    Ok(ParsedQrels {
        qrels: Qrels { entries },
        dropped,
    })
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = read_qrels(BufReader::new(file))?;
    for q in &parsed.dropped {
        warn!("{}: query {q} has no positive judgments, dropped", path.display());
    }
    Ok(parsed.qrels)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for (q, docs) in qrels.iter() {
        for d in docs {
            writeln!(out, "{q}\t{d}\t1").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranked retrieval output per query.
///
/// Ranks start at 1 and ascend; scores never increase with rank and equal
/// scores are ordered by document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

/// Score descending, then id ascending.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Groups `(query, doc, score)` triples by query and assigns ranks.
    pub fn from_scores<Q, D>(triples: impl IntoIterator<Item = (Q, D, f64)>) -> Self
    where
        Q: Into<String>,
        D: Into<String>,
    {
        let mut grouped: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (q, d, s) in triples {
            grouped.entry(q.into()).or_default().push((d.into(), s));
        }
        let mut run = Self::new();
        for (q, docs) in grouped {
            run.insert_ranked(q, docs);
        }
        run
    }

    /// Sorts `docs` by score and replaces any existing ranking for `query`.
    pub fn insert_ranked(&mut self, query: impl Into<String>, mut docs: Vec<(String, f64)>) {
        docs.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        let entries = docs
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        self.queries.insert(query.into(), entries);
    }

    pub fn ranking(&self, query: &str) -> Option<&[RunEntry]> {
        self.queries.get(query).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<RunEntry>)> {
        self.queries.iter()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (q, entries) in &self.queries {
            let mut docs = BTreeSet::new();
            for (i, e) in entries.iter().enumerate() {
                if e.rank != i + 1 {
                    return Err(Error::Data(format!(
                        "query {q}: entry {i} has rank {}, expected {}",
                        e.rank,
                        i + 1
                    )));
                }
                if !e.score.is_finite() {
                    return Err(Error::Data(format!("query {q}: non-finite score")));
                }
                if !docs.insert(e.doc_id.as_str()) {
                    return Err(Error::Data(format!(
                        "query {q}: document {} ranked twice",
                        e.doc_id
                    )));
                }
                if i > 0 {
                    let prev = &entries[i - 1];
                    if rank_order(prev.score, &prev.doc_id, e.score, &e.doc_id) != Ordering::Less {
                        return Err(Error::Data(format!(
                            "query {q}: ranks {} and {} out of order",
                            prev.rank, e.rank
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn write_run(run: &RunFile, path: impl AsRef<Path>) -> Result<()> {
    write_run_with_tag(run, path, DEFAULT_RUN_TAG)
}

pub fn write_run_with_tag(run: &RunFile, path: impl AsRef<Path>, tag: &str) -> Result<()> {
    let path = path.as_ref();
    run.validate()?;
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for (q, entries) in run.iter() {
        for e in entries {
            writeln!(out, "{q} Q0 {} {} {} {tag}", e.doc_id, e.rank, e.score).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_run(reader: impl BufRead) -> Result<RunFile> {
    let mut queries: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, d, rank, score, _tag] = fields.as_slice() else {
            return Err(Error::Format(format!(
                "run line {} has {} fields, expected 6",
                lineno + 1,
                fields.len()
            )));
        };
        let rank = rank
            .parse()
            .map_err(|_| Error::Format(format!("run line {}: bad rank {rank:?}", lineno + 1)))?;
        let score = score
            .parse()
            .map_err(|_| Error::Format(format!("run line {}: bad score {score:?}", lineno + 1)))?;
        queries.entry((*q).to_owned()).or_default().push(RunEntry {
            doc_id: (*d).to_owned(),
            score,
            rank,
        });
    }
    for entries in queries.values_mut() {
        entries.sort_by_key(|e| e.rank);
    }
    let run = RunFile { queries };
    run.validate()?;
    Ok(run)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_run(BufReader::new(file))
}
