//! Clustered synthetic retrieval data.
//!
//! Cluster centers lie on the unit sphere. Queries scatter around a center,
//! each query's positives sit closer to the query than anything else in its
//! cluster, and a fraction of the corpus are traps: unlabeled documents
//! placed as close to a training query as its positive. A trap is a false
//! negative. It scores high against its query yet is no closer to the
//! positive than the query is, so it usually falls outside the triangular
//! region. Held-out queries get positives but no traps and serve as the
//! evaluation split.
//!
//! All vectors are unit length, so with the identity encoder the inner
//! product is cosine similarity.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, Qrels};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub clusters: usize,
    /// Corpus size, positives and traps included.
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    /// Noise radius of a positive around its query.
    pub positive_spread: f64,
    /// Fraction of the corpus that are traps.
    pub trap_rate: f64,
    /// Noise radius of a trap around its query.
    pub trap_spread: f64,
    /// Noise radius of queries and ordinary documents around a center.
    pub cluster_spread: f64,
    pub positives_per_query: usize,
    /// Extra queries with their own positives but no traps, kept out of
    /// training and used for evaluation.
    pub heldout_queries: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 20,
            docs: 5000,
            queries: 200,
            dim: 64,
            positive_spread: 0.2,
            trap_rate: 0.1,
            trap_spread: 0.35,
            cluster_spread: 0.6,
            positives_per_query: 1,
            heldout_queries: 200,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if self.clusters == 0 || self.queries == 0 || self.dim == 0 || self.positives_per_query == 0 {
            return bad("clusters, queries, dim and positives_per_query must be at least 1".into());
        }
        let spreads = [self.positive_spread, self.trap_spread, self.cluster_spread];
        if spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("spreads must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.trap_rate) {
            return bad(format!("trap_rate {} outside [0, 1]", self.trap_rate));
        }
        let positives = (self.queries + self.heldout_queries) * self.positives_per_query;
        let traps = self.trap_count();
        if positives + traps > self.docs {
            return bad(format!(
                "{} docs cannot hold {positives} positives and {traps} traps",
                self.docs
            ));
        }
        Ok(())
    }

    fn trap_count(&self) -> usize {
        (self.trap_rate * self.docs as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub corpus: EmbeddingMatrix,
    pub queries: EmbeddingMatrix,
    pub qrels: Qrels,
    /// Empty matrix and qrels when `heldout_queries` is 0.
    pub heldout_queries: Option<EmbeddingMatrix>,
    pub heldout_qrels: Qrels,
}

impl SyntheticDataset {
    /// Held-out split when present, otherwise the training queries.
    pub fn eval_split(&self) -> (&EmbeddingMatrix, &Qrels) {
        match &self.heldout_queries {
            Some(q) => (q, &self.heldout_qrels),
            None => (&self.queries, &self.qrels),
        }
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// `normalize(base + spread * g / sqrt(dim))` with `g` standard normal.
fn jitter(base: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = spread / (base.len() as f64).sqrt();
    unit(
        base.iter()
            .map(|b| b + s * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Generates the dataset described by `spec`, seeded by `seed`.
///
/// Document ids are `d0..`, training query ids `q0..` and held-out query
/// ids `h0..`. Row order is shuffled so that
/// positives and traps are not recognizable by position.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let dim = spec.dim;
    let mut rng = rng_for(seed, "synthetic");
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| unit((0..dim).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();

    let total = spec.queries + spec.heldout_queries;
    let queries: Vec<Vec<f64>> = (0..total)
        .map(|i| jitter(&centers[i % spec.clusters], spec.cluster_spread, &mut rng))
        .collect();

    // (vector, owning query for positives)
    let mut docs: Vec<(Vec<f64>, Option<usize>)> = Vec::with_capacity(spec.docs);
    for (qi, q) in queries.iter().enumerate() {
        for _ in 0..spec.positives_per_query {
            docs.push((jitter(q, spec.positive_spread, &mut rng), Some(qi)));
        }
    }
    // traps surround training queries only
    let query_ids: Vec<usize> = (0..spec.queries).collect();
    for _ in 0..spec.trap_count() {
        let &qi = query_ids.choose(&mut rng).expect("at least one query");
        docs.push((jitter(&queries[qi], spec.trap_spread, &mut rng), None));
    }
    while docs.len() < spec.docs {
        let c = rng.random_range(0..spec.clusters);
        docs.push((jitter(&centers[c], spec.cluster_spread, &mut rng), None));
    }

    // Fisher-Yates over row slots
    for i in (1..docs.len()).rev() {
        let j = rng.random_range(0..=i);
        docs.swap(i, j);
    }

    let query_id = |qi: usize| {
        if qi < spec.queries {
            format!("q{qi}")
        } else {
            format!("h{}", qi - spec.queries)
        }
    };
    let mut qrels = Qrels::new();
    let mut heldout_qrels = Qrels::new();
    let mut doc_data = Vec::with_capacity(spec.docs * dim);
    let mut doc_ids = Vec::with_capacity(spec.docs);
    for (row, (v, owner)) in docs.into_iter().enumerate() {
        let id = format!("d{row}");
        match owner {
            Some(qi) if qi < spec.queries => qrels.insert(query_id(qi), id.clone()),
            Some(qi) => heldout_qrels.insert(query_id(qi), id.clone()),
            None => {}
        }
        doc_ids.push(id);
        doc_data.extend(v.into_iter().map(|x| x as f32));
    }
    let corpus = EmbeddingMatrix::new(doc_ids, dim, doc_data)?;
    let matrix = |range: std::ops::Range<usize>| {
        EmbeddingMatrix::new(
            range.clone().map(query_id).collect(),
            dim,
            queries[range].iter().flatten().map(|&x| x as f32).collect(),
        )
    };
    let heldout_queries = if spec.heldout_queries > 0 {
        Some(matrix(spec.queries..total)?)
    } else {
        None
    };
    Ok(SyntheticDataset {
        corpus,
        queries: matrix(0..spec.queries)?,
        qrels,
        heldout_queries,
        heldout_qrels,
    })
}
