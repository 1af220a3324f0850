//! Top-K inner-product retrieval over a corpus.
//!
//! Exact mode is an exhaustive partial selection and is the reference for
//! everything else; approximate mode is an inverted-file (IVF) index whose
//! coarse quantizer is a spherical k-means over the corpus.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rank_order, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::geometry::dot;

const SCAN_CHUNK: usize = 2048;

/// Inverted-file parameters. Zero means "derive from corpus size":
/// `nlist = round(sqrt(n))`, `nprobe = ceil(0.8 * nlist)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvfParams {
    pub nlist: usize,
    pub nprobe: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self {
            nlist: 0,
            nprobe: 0,
            iterations: 8,
            seed: 0x1df,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum IndexMode {
    #[default]
    Exact,
    Approximate(IvfParams),
}

/// One retrieved row and its inner-product score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub score: f64,
}

/// Hits sorted by score descending, ties by document id ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopKResult {
    pub entries: Vec<Hit>,
}

impl TopKResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|h| h.row)
    }

    /// Bit-level equality, so `-0.0` and `0.0` differ.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.row == b.row && a.score.to_bits() == b.score.to_bits())
    }
}

/// Rows to leave out of a result.
enum Exclusion<'a> {
    Few(&'a [usize]),
    Many(HashSet<usize>),
}

impl<'a> Exclusion<'a> {
    fn new(rows: &'a [usize]) -> Self {
        if rows.len() <= 16 {
            Exclusion::Few(rows)
        } else {
            Exclusion::Many(rows.iter().copied().collect())
        }
    }

    #[inline]
    fn contains(&self, row: usize) -> bool {
        match self {
            Exclusion::Few(rows) => rows.contains(&row),
            Exclusion::Many(set) => set.contains(&row),
        }
    }

    fn len(&self) -> usize {
        match self {
            Exclusion::Few(rows) => rows.len(),
            Exclusion::Many(set) => set.len(),
        }
    }
}

/// Heap entry ordered so that the *worst* hit sits at the top.
struct Ranked<'a> {
    hit: Hit,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.hit.score, self.id, other.hit.score, other.id)
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

/// Bounded selection of the k best hits.
struct Selector<'a> {
    k: usize,
    heap: BinaryHeap<Ranked<'a>>,
}

impl<'a> Selector<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, hit: Hit, id: &'a str) {
        let item = Ranked { hit, id };
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if item < *worst {
                *worst = item;
            }
        }
    }

    fn merge(mut self, other: Selector<'a>) -> Self {
        for item in other.heap {
            self.offer(item.hit, item.id);
        }
        self
    }

    fn finish(self) -> TopKResult {
        TopKResult {
            entries: self.heap.into_sorted_vec().into_iter().map(|r| r.hit).collect(),
        }
    }
}

fn check_query(corpus: &EmbeddingMatrix, query: &[f32], k: usize) -> Result<()> {
    if query.len() != corpus.dim() {
        return Err(Error::Contract(format!(
            "query has dimension {}, corpus has {}",
            query.len(),
            corpus.dim()
        )));
    }
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    Ok(())
}

/// Exhaustive scan with a full sort. Slow on purpose: it shares nothing
/// with [`Index::top_k`] beyond the dot product.
pub fn brute_force_top_k(
    corpus: &EmbeddingMatrix,
    query: &[f32],
    k: usize,
    exclude: &[usize],
) -> Result<TopKResult> {
    check_query(corpus, query, k)?;
    let mut all: Vec<Hit> = (0..corpus.count())
        .filter(|row| !exclude.contains(row))
        .map(|row| Hit {
            row,
            score: dot(query, corpus.row(row)),
        })
        .collect();
    all.sort_by(|a, b| rank_order(a.score, corpus.id(a.row), b.score, corpus.id(b.row)));
    all.truncate(k);
    Ok(TopKResult { entries: all })
}

#[derive(Debug, Clone)]
struct Ivf {
    centroids: Vec<Vec<f32>>,
    lists: Vec<Vec<usize>>,
    nprobe: usize,
}

impl Ivf {
    fn train(corpus: &EmbeddingMatrix, params: &IvfParams) -> Self {
        let n = corpus.count();
        let nlist = match params.nlist {
            0 => ((n as f64).sqrt().round() as usize).max(1),
            v => v,
        }
        .min(n);
        let nprobe = match params.nprobe {
            // isotropic data needs most lists for 0.95 recall; clustered data far fewer
            0 => (nlist * 4).div_ceil(5),
            v => v,
        }
        .clamp(1, nlist);

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut centroids: Vec<Vec<f32>> = sample(&mut rng, n, nlist)
            .into_iter()
            .map(|row| unit(corpus.row(row)))
            .collect();
        let mut assign = vec![0usize; n];
        for _ in 0..params.iterations.max(1) {
            assign = (0..n)
                .into_par_iter()
                .map(|row| nearest(&centroids, corpus.row(row)))
                .collect();
            let dim = corpus.dim();
            let mut sums = vec![vec![0f64; dim]; nlist];
            let mut counts = vec![0usize; nlist];
            for (row, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &x) in sums[c].iter_mut().zip(corpus.row(row)) {
                    *s += f64::from(x);
                }
            }
            for (c, sum) in sums.iter().enumerate() {
                if counts[c] > 0 {
                    let mean: Vec<f32> = sum.iter().map(|s| (s / counts[c] as f64) as f32).collect();
                    centroids[c] = unit(&mean);
                }
            }
        }
        let mut lists = vec![Vec::new(); nlist];
        for (row, &c) in assign.iter().enumerate() {
            lists[c].push(row);
        }
        Self {
            centroids,
            lists,
            nprobe,
        }
    }

    fn probe_order(&self, query: &[f32]) -> Vec<usize> {
        let mut order: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, dot(query, centroid)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        order.into_iter().take(self.nprobe).map(|(c, _)| c).collect()
    }
}

fn unit(v: &[f32]) -> Vec<f32> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
}

fn nearest(centroids: &[Vec<f32>], v: &[f32]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(v, centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// An immutable index over one corpus generation.
#[derive(Debug, Clone)]
pub struct Index {
    corpus: Arc<EmbeddingMatrix>,
    mode: IndexMode,
    epoch: u64,
    ivf: Option<Ivf>,
}

impl Index {
    pub fn build(corpus: Arc<EmbeddingMatrix>, mode: IndexMode) -> Result<Self> {
        Self::build_at_epoch(corpus, mode, 0)
    }

    /// Builds the next generation over `corpus` with this index's mode.
    pub fn rebuild(&self, corpus: Arc<EmbeddingMatrix>) -> Result<Self> {
        Self::build_at_epoch(corpus, self.mode, self.epoch + 1)
    }

    fn build_at_epoch(corpus: Arc<EmbeddingMatrix>, mode: IndexMode, epoch: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Contract("cannot index an empty corpus".into()));
        }
        let ivf = match &mode {
            IndexMode::Exact => None,
            IndexMode::Approximate(params) => Some(Ivf::train(&corpus, params)),
        };
        Ok(Self {
            corpus,
            mode,
            epoch,
            ivf,
        })
    }

    pub fn corpus(&self) -> &EmbeddingMatrix {
        &self.corpus
    }

    pub fn corpus_arc(&self) -> &Arc<EmbeddingMatrix> {
        &self.corpus
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The `k` highest-scoring rows not listed in `exclude`.
    pub fn top_k(&self, query: &[f32], k: usize, exclude: &[usize]) -> Result<TopKResult> {
        check_query(&self.corpus, query, k)?;
        let exclusion = Exclusion::new(exclude);
        match &self.ivf {
            None => Ok(self.exact(query, k, &exclusion)),
            Some(ivf) => Ok(self.approximate(ivf, query, k, &exclusion)),
        }
    }

    fn exact(&self, query: &[f32], k: usize, exclude: &Exclusion<'_>) -> TopKResult {
        let corpus = &*self.corpus;
        let scan = |start: usize| {
            let end = (start + SCAN_CHUNK).min(corpus.count());
            let mut sel = Selector::new(k);
            for row in start..end {
                if exclude.contains(row) {
                    continue;
                }
                let hit = Hit {
                    row,
                    score: dot(query, corpus.row(row)),
                };
                sel.offer(hit, corpus.id(row));
            }
            sel
        };
        let starts = (0..corpus.count()).step_by(SCAN_CHUNK);
        let sel = if corpus.count() <= SCAN_CHUNK {
            scan(0)
        } else {
            starts
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(scan)
                .reduce(|| Selector::new(k), Selector::merge)
        };
        sel.finish()
    }

    fn approximate(&self, ivf: &Ivf, query: &[f32], k: usize, exclude: &Exclusion<'_>) -> TopKResult {
        let corpus = &*self.corpus;
        // over-fetch so that filtering cannot starve the result
        let mut sel = Selector::new(k + exclude.len());
        for list in ivf.probe_order(query) {
            for &row in &ivf.lists[list] {
                let hit = Hit {
                    row,
                    score: dot(query, corpus.row(row)),
                };
                sel.offer(hit, corpus.id(row));
            }
        }
        let mut result = sel.finish();
        result.entries.retain(|h| !exclude.contains(h.row));
        result.entries.truncate(k);
        result
    }
}
