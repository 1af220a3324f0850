//! Negative samplers.
//!
//! The TriSampler pipeline runs in three stages over an index generation:
//!
//! 1. candidates: the top-K non-positive documents by `s(q, d)`, each with
//!    its cached `s(q, d-)` and `s(d+, d-)`;
//! 2. transitional draw: `m` candidates without replacement, weighted by
//!    `exp(-c * (s(q,d-) - s(q,d+))^2)` with `c = 1/4`, which keeps
//!    negatives about as hard as the positive;
//! 3. final draw: `n` of those, weighted by `max(0, s(d+,d-) - s(q,d-))`,
//!    which only admits negatives closer to the positive than to the query.
//!
//! When no transitional negative has a positive final weight the final draw
//! falls back to the stage-2 weights; when only a few do, the remaining
//! slots are filled the same way. Both cases are flagged on the sample.
//!
//! The baseline variants reuse the same candidate pool with a different
//! weighting (or none). `Debiased` subtracts a fraction of the positive's
//! exponentiated score from each negative's; see [`debiased_weights`].

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, ResolvedQrels, ResolvedQuery};
use crate::error::{Error, Result};
use crate::geometry::dot;
use crate::index::Index;
use crate::seeding::rng_for;

/// Positive-to-negative ratio 1:15.
pub const DEFAULT_NEGATIVES: usize = 15;
/// Candidate pool for passage-scale corpora.
pub const PASSAGE_CANDIDATES: usize = 200;
/// Candidate pool for document-scale corpora.
pub const DOCUMENT_CANDIDATES: usize = 400;
/// Coefficient of the squared score gap in the transitional distribution.
pub const DEFAULT_GAUSSIAN_COEF: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Trisampler,
    Uniform,
    TopNs,
    RandNs,
    TopkWeighted,
    Debiased,
    Simans,
    CandidatesQd,
    CandidatesDd,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Trisampler,
        Variant::Uniform,
        Variant::TopNs,
        Variant::RandNs,
        Variant::TopkWeighted,
        Variant::Debiased,
        Variant::Simans,
        Variant::CandidatesQd,
        Variant::CandidatesDd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Trisampler => "trisampler",
            Variant::Uniform => "uniform",
            Variant::TopNs => "top_ns",
            Variant::RandNs => "rand_ns",
            Variant::TopkWeighted => "topk_weighted",
            Variant::Debiased => "debiased",
            Variant::Simans => "simans",
            Variant::CandidatesQd => "candidates_qd",
            Variant::CandidatesDd => "candidates_dd",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown sampler variant {s:?}")))
    }
}

/// Corpus scale, which sets the default candidate pool size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusProfile {
    Passage,
    Document,
}

impl CorpusProfile {
    pub fn candidate_pool(self) -> usize {
        match self {
            CorpusProfile::Passage => PASSAGE_CANDIDATES,
            CorpusProfile::Document => DOCUMENT_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Candidate pool size K.
    pub k: usize,
    /// Transitional pool size m; `None` means `min(4n, K)`.
    pub m: Option<usize>,
    /// Negatives per training triple.
    pub n: usize,
    pub variant: Variant,
    pub seed: u64,
    pub simans_a: f64,
    pub simans_b: f64,
    pub gaussian_coef: f64,
    /// Fraction of the positive's exponentiated score removed by `Debiased`.
    pub debias_tau: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: PASSAGE_CANDIDATES,
            m: None,
            n: DEFAULT_NEGATIVES,
            variant: Variant::Trisampler,
            seed: 0,
            simans_a: 0.5,
            simans_b: 0.0,
            gaussian_coef: DEFAULT_GAUSSIAN_COEF,
            debias_tau: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn for_profile(profile: CorpusProfile) -> Self {
        Self {
            k: profile.candidate_pool(),
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn transitional_size(&self) -> usize {
        self.m.unwrap_or_else(|| (4 * self.n).min(self.k))
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.transitional_size();
        if !(1 <= self.n && self.n <= m && m <= self.k) {
            return Err(Error::Contract(format!(
                "sampler sizes must satisfy 1 <= n <= m <= K, got n={} m={m} K={}",
                self.n, self.k
            )));
        }
        for (name, v) in [
            ("simans_a", self.simans_a),
            ("simans_b", self.simans_b),
            ("gaussian_coef", self.gaussian_coef),
            ("debias_tau", self.debias_tau),
        ] {
            if !v.is_finite() || (name != "simans_b" && v < 0.0) {
                return Err(Error::Contract(format!("{name} = {v} is out of range")));
            }
        }
        Ok(())
    }
}

/// Which score ranks the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateAxis {
    /// Top-K by `s(q, d)`.
    QueryDoc,
    /// Top-K by `s(d+, d)`.
    DocDoc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub row: usize,
    /// s(q, d-)
    pub s_neg: f64,
    /// s(d+, d-)
    pub s_pp: f64,
}

impl ScoredCandidate {
    pub fn in_region(&self) -> bool {
        self.s_pp > self.s_neg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query: usize,
    pub positive: usize,
    /// s(q, d+)
    pub s_pos: f64,
    pub candidates: Vec<ScoredCandidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn select(&self, picks: &[usize]) -> CandidateSet {
        CandidateSet {
            candidates: picks.iter().map(|&i| self.candidates[i]).collect(),
            ..*self
        }
    }
}

/// How the final draw was weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    /// Every negative came from the variant's own distribution.
    #[default]
    None,
    /// The ReLU mass ran out after some draws; this many slots were filled
    /// from the transitional weights.
    Filled(usize),
    /// No transitional negative was strictly inside the region.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    pub query: usize,
    pub positive: usize,
    pub s_pos: f64,
    pub negatives: Vec<ScoredCandidate>,
    /// Normalized probability of each negative under the final distribution
    /// (before any draw), aligned with `negatives`. Fill-ins from the
    /// fallback record their zero ReLU weight.
    pub weights_used: Vec<f64>,
    pub fallback: Fallback,
}

impl NegativeSample {
    pub fn negative_rows(&self) -> Vec<usize> {
        self.negatives.iter().map(|c| c.row).collect()
    }

    pub fn in_region_count(&self) -> usize {
        self.negatives.iter().filter(|c| c.in_region()).count()
    }
}

/// Read-only inputs shared by every sampling call in one index generation.
#[derive(Clone, Copy)]
pub struct SamplingContext<'a> {
    pub index: &'a Index,
    pub queries: &'a EmbeddingMatrix,
    pub qrels: &'a ResolvedQrels,
}

fn scored(q: &[f32], pos: &[f32], corpus: &EmbeddingMatrix, row: usize) -> ScoredCandidate {
    let d = corpus.row(row);
    ScoredCandidate {
        row,
        s_neg: dot(q, d),
        s_pp: dot(pos, d),
    }
}

/// Top-K pool for one `(q, d+)` pair, excluding every positive of `q`.
pub fn construct_candidates(
    index: &Index,
    queries: &EmbeddingMatrix,
    judged: &ResolvedQuery,
    positive: usize,
    k: usize,
    axis: CandidateAxis,
) -> Result<CandidateSet> {
    if !judged.is_positive(positive) {
        return Err(Error::Contract(format!(
            "row {positive} is not a positive of query row {}",
            judged.query
        )));
    }
    let corpus = index.corpus();
    let q = queries.row(judged.query);
    let pos = corpus.row(positive);
    let anchor = match axis {
        CandidateAxis::QueryDoc => q,
        CandidateAxis::DocDoc => pos,
    };
    let top = index.top_k(anchor, k, &judged.positives)?;
    let candidates = top
        .entries
        .iter()
        .map(|hit| {
            let mut c = scored(q, pos, corpus, hit.row);
            // reuse the index score for the ranking axis
            match axis {
                CandidateAxis::QueryDoc => c.s_neg = hit.score,
                CandidateAxis::DocDoc => c.s_pp = hit.score,
            }
            c
        })
        .collect();
    Ok(CandidateSet {
        query: judged.query,
        positive,
        s_pos: dot(q, pos),
        candidates,
    })
}

/// Unnormalized transitional weight; 1 at `s_neg == s_pos`.
pub fn gaussian_weight(s_neg: f64, s_pos: f64, coef: f64) -> f64 {
    (-coef * (s_neg - s_pos).powi(2)).exp()
}

/// Normalizes log-weights with a max shift so that no weight underflows to
/// an all-zero vector.
fn softmax(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let logits: Vec<f64> = logits.collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    normalize(&mut w);
    w
}

/// Scales to unit sum. Returns false (leaving `w` untouched) when the sum is
/// zero.
fn normalize(w: &mut [f64]) -> bool {
    let total: f64 = w.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return false;
    }
    for x in w.iter_mut() {
        *x /= total;
    }
    true
}

/// Stage-2 distribution over the candidate pool.
pub fn transitional_weights(cands: &CandidateSet, s_pos: f64, coef: f64) -> Vec<f64> {
    softmax(cands.candidates.iter().map(|c| -coef * (c.s_neg - s_pos).powi(2)))
}

/// Unnormalized final weight.
pub fn relu_weight(c: &ScoredCandidate) -> f64 {
    (c.s_pp - c.s_neg).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalWeights {
    pub weights: Vec<f64>,
    /// True when every ReLU weight was zero and `weights` are the
    /// transitional weights instead.
    pub fallback: bool,
}

/// Stage-3 distribution over the transitional pool.
pub fn final_weights(trans: &CandidateSet, coef: f64) -> FinalWeights {
    let mut weights: Vec<f64> = trans.candidates.iter().map(relu_weight).collect();
    if normalize(&mut weights) {
        FinalWeights {
            weights,
            fallback: false,
        }
    } else {
        FinalWeights {
            weights: transitional_weights(trans, trans.s_pos, coef),
            fallback: true,
        }
    }
}

pub fn uniform_weights(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

/// Weights proportional to `exp(s_neg)`.
pub fn score_weights(cands: &CandidateSet) -> Vec<f64> {
    softmax(cands.candidates.iter().map(|c| c.s_neg))
}

/// Weights proportional to `max(0, exp(s_neg) - tau * exp(s_pos))`: each
/// negative's softmax mass minus a share attributed to the positive. Falls
/// back to [`score_weights`] when the correction removes everything.
pub fn debiased_weights(cands: &CandidateSet, tau: f64) -> Vec<f64> {
    let max = cands
        .candidates
        .iter()
        .map(|c| c.s_neg)
        .fold(cands.s_pos, f64::max);
    let bias = tau * (cands.s_pos - max).exp();
    let mut w: Vec<f64> = cands
        .candidates
        .iter()
        .map(|c| ((c.s_neg - max).exp() - bias).max(0.0))
        .collect();
    if normalize(&mut w) {
        w
    } else {
        score_weights(cands)
    }
}

/// Weights proportional to `exp(-a * (s_neg - s_pos - b)^2)`.
pub fn simans_weights(cands: &CandidateSet, a: f64, b: f64) -> Vec<f64> {
    softmax(
        cands
            .candidates
            .iter()
            .map(|c| -a * (c.s_neg - cands.s_pos - b).powi(2)),
    )
}

/// Draws up to `count` distinct indices with probability proportional to
/// `weights`, renormalizing over the remaining items after each draw.
/// Zero-weight items are never drawn, so fewer than `count` indices come
/// back when the positive mass runs out.
pub fn weighted_draws<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut taken = vec![false; weights.len()];
    let mut picks = Vec::with_capacity(count.min(weights.len()));
    while picks.len() < count {
        let total: f64 = weights
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&w, _)| w)
            .sum();
        if total.is_nan() || total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, (&w, &t)) in weights.iter().zip(&taken).enumerate() {
            if t || w <= 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        // rounding can leave target just above acc; the last live item wins
        let i = chosen.expect("positive mass implies a live item");
        taken[i] = true;
        picks.push(i);
    }
    picks
}

/// Stage 2: `m` transitional negatives, or the whole pool if it is smaller.
pub fn sample_transitional<R: Rng + ?Sized>(
    cands: &CandidateSet,
    weights: &[f64],
    m: usize,
    rng: &mut R,
) -> CandidateSet {
    if cands.len() <= m {
        return cands.clone();
    }
    let mut picks = weighted_draws(weights, m, rng);
    if picks.len() < m {
        fill_uniform(&mut picks, cands.len(), m, rng);
    }
    cands.select(&picks)
}

/// Appends distinct unpicked indices uniformly at random until `want`.
fn fill_uniform<R: Rng + ?Sized>(picks: &mut Vec<usize>, len: usize, want: usize, rng: &mut R) {
    let mut rest: Vec<usize> = (0..len).filter(|i| !picks.contains(i)).collect();
    while picks.len() < want && !rest.is_empty() {
        let j = rng.random_range(0..rest.len());
        picks.push(rest.swap_remove(j));
    }
}

/// Stage 3: `n` final negatives from the transitional pool.
pub fn sample_final<R: Rng + ?Sized>(
    trans: &CandidateSet,
    weights: &FinalWeights,
    n: usize,
    coef: f64,
    rng: &mut R,
) -> NegativeSample {
    let mut fallback = if weights.fallback {
        Fallback::Full
    } else {
        Fallback::None
    };
    let picks = if trans.len() <= n {
        (0..trans.len()).collect()
    } else {
        let mut picks = weighted_draws(&weights.weights, n, rng);
        if picks.len() < n {
            let filled = n - picks.len();
            let backup = transitional_weights(trans, trans.s_pos, coef);
            let masked: Vec<f64> = backup
                .iter()
                .enumerate()
                .map(|(i, &w)| if picks.contains(&i) { 0.0 } else { w })
                .collect();
            picks.extend(weighted_draws(&masked, filled, rng));
            if picks.len() < n {
                fill_uniform(&mut picks, trans.len(), n, rng);
            }
            fallback = Fallback::Filled(filled);
        }
        picks
    };
    NegativeSample {
        query: trans.query,
        positive: trans.positive,
        s_pos: trans.s_pos,
        negatives: picks.iter().map(|&i| trans.candidates[i]).collect(),
        weights_used: picks.iter().map(|&i| weights.weights[i]).collect(),
        fallback,
    }
}

fn draw_from_pool<R: Rng + ?Sized>(
    cands: &CandidateSet,
    weights: Vec<f64>,
    n: usize,
    rng: &mut R,
) -> NegativeSample {
    let fw = FinalWeights {
        weights,
        fallback: false,
    };
    let mut picks = weighted_draws(&fw.weights, n, rng);
    if picks.len() < n.min(cands.len()) {
        fill_uniform(&mut picks, cands.len(), n, rng);
    }
    NegativeSample {
        query: cands.query,
        positive: cands.positive,
        s_pos: cands.s_pos,
        negatives: picks.iter().map(|&i| cands.candidates[i]).collect(),
        weights_used: picks.iter().map(|&i| fw.weights[i]).collect(),
        fallback: Fallback::None,
    }
}

/// Uniform draw over every non-positive document of the corpus.
fn rand_ns<R: Rng + ?Sized>(
    ctx: &SamplingContext<'_>,
    judged: &ResolvedQuery,
    positive: usize,
    n: usize,
    rng: &mut R,
) -> NegativeSample {
    let corpus = ctx.index.corpus();
    let q = ctx.queries.row(judged.query);
    let pos = corpus.row(positive);
    let pool = corpus.count() - judged.positives.len();
    let rows: Vec<usize> = if pool <= n {
        (0..corpus.count()).filter(|&r| !judged.is_positive(r)).collect()
    } else {
        let mut rows = Vec::with_capacity(n);
        while rows.len() < n {
            let r = rng.random_range(0..corpus.count());
            if !judged.is_positive(r) && !rows.contains(&r) {
                rows.push(r);
            }
        }
        rows
    };
    NegativeSample {
        query: judged.query,
        positive,
        s_pos: dot(q, pos),
        weights_used: vec![1.0 / pool.max(1) as f64; rows.len()],
        negatives: rows.into_iter().map(|r| scored(q, pos, corpus, r)).collect(),
        fallback: Fallback::None,
    }
}

/// Draws the negatives of one `(q, d+)` pair under `config.variant`.
pub fn sample<R: Rng + ?Sized>(
    ctx: &SamplingContext<'_>,
    judged: &ResolvedQuery,
    positive: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<NegativeSample> {
    config.validate()?;
    let n = config.n;
    let pool = |axis| construct_candidates(ctx.index, ctx.queries, judged, positive, config.k, axis);
    let sample = match config.variant {
        Variant::Trisampler => {
            let cands = pool(CandidateAxis::QueryDoc)?;
            let tw = transitional_weights(&cands, cands.s_pos, config.gaussian_coef);
            let trans = sample_transitional(&cands, &tw, config.transitional_size(), rng);
            let fw = final_weights(&trans, config.gaussian_coef);
            sample_final(&trans, &fw, n, config.gaussian_coef, rng)
        }
        Variant::TopNs => {
            let mut cands = pool(CandidateAxis::QueryDoc)?;
            cands.candidates.truncate(n);
            NegativeSample {
                query: cands.query,
                positive: cands.positive,
                s_pos: cands.s_pos,
                weights_used: uniform_weights(cands.len()),
                negatives: cands.candidates,
                fallback: Fallback::None,
            }
        }
        Variant::RandNs => rand_ns(ctx, judged, positive, n, rng),
        Variant::Uniform | Variant::CandidatesQd => {
            let cands = pool(CandidateAxis::QueryDoc)?;
            draw_from_pool(&cands, uniform_weights(cands.len()), n, rng)
        }
        Variant::CandidatesDd => {
            let cands = pool(CandidateAxis::DocDoc)?;
            draw_from_pool(&cands, uniform_weights(cands.len()), n, rng)
        }
        Variant::TopkWeighted => {
            let cands = pool(CandidateAxis::QueryDoc)?;
            draw_from_pool(&cands, score_weights(&cands), n, rng)
        }
        Variant::Debiased => {
            let cands = pool(CandidateAxis::QueryDoc)?;
            draw_from_pool(&cands, debiased_weights(&cands, config.debias_tau), n, rng)
        }
        Variant::Simans => {
            let cands = pool(CandidateAxis::QueryDoc)?;
            let w = simans_weights(&cands, config.simans_a, config.simans_b);
            draw_from_pool(&cands, w, n, rng)
        }
    };
    Ok(sample)
}

/// Samples every `(q, d+)` pair. Each query draws from its own generator,
/// seeded from `config.seed` and the query id, so output does not depend on
/// thread scheduling. Results follow [`ResolvedQrels::pairs`] order.
pub fn sample_all(ctx: &SamplingContext<'_>, config: &SamplerConfig) -> Result<Vec<NegativeSample>> {
    config.validate()?;
    let available = ctx.index.corpus().count();
    if config.k > available {
        warn!(
            "candidate pool K={} exceeds corpus size {available}; pools will be smaller",
            config.k
        );
    }
    let per_query: Vec<Vec<NegativeSample>> = ctx
        .qrels
        .entries
        .par_iter()
        .map(|judged| {
            let mut rng = rng_for(config.seed, ctx.queries.id(judged.query));
            judged
                .positives
                .iter()
                .map(|&p| sample(ctx, judged, p, config, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Summary of one sampling pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplerStats {
    pub triples: usize,
    pub negatives: usize,
    /// Fraction of negatives with `s(d+,d-) > s(q,d-)`.
    pub in_region_fraction: f64,
    pub full_fallbacks: usize,
    pub filled_slots: usize,
}

impl SamplerStats {
    pub fn of(samples: &[NegativeSample]) -> Self {
        let negatives: usize = samples.iter().map(|s| s.negatives.len()).sum();
        let inside: usize = samples.iter().map(NegativeSample::in_region_count).sum();
        let mut stats = Self {
            triples: samples.len(),
            negatives,
            in_region_fraction: if negatives == 0 {
                0.0
            } else {
                inside as f64 / negatives as f64
            },
            ..Self::default()
        };
        for s in samples {
            match s.fallback {
                Fallback::None => {}
                Fallback::Full => stats.full_fallbacks += 1,
                Fallback::Filled(k) => stats.filled_slots += k,
            }
        }
        stats
    }
}

/// One line of the negative-sample dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeRecord {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Writes `query \t positive \t neg_1 ... \t neg_n`, one line per sample.
pub fn write_negatives(
    samples: &[NegativeSample],
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        write!(out, "{}\t{}", queries.id(s.query), corpus.id(s.positive)).map_err(io)?;
        for c in &s.negatives {
            write!(out, "\t{}", corpus.id(c.row)).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_negatives(reader: impl BufRead) -> Result<Vec<NegativeRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::to_owned);
        match (fields.next(), fields.next()) {
            (Some(query), Some(positive)) => records.push(NegativeRecord {
                query,
                positive,
                negatives: fields.collect(),
            }),
            _ => {
                return Err(Error::Format(format!(
                    "negatives line {} needs query and positive ids",
                    lineno + 1
                )))
            }
        }
    }
    Ok(records)
}

pub fn load_negatives(path: impl AsRef<Path>) -> Result<Vec<NegativeRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_negatives(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Qrels;
    use crate::index::{brute_force_top_k, IndexMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn set(s_pos: f64, cands: &[(f64, f64)]) -> CandidateSet {
        CandidateSet {
            query: 0,
            positive: 0,
            s_pos,
            candidates: cands
                .iter()
                .enumerate()
                .map(|(i, &(s_neg, s_pp))| ScoredCandidate {
                    row: i + 1,
                    s_neg,
                    s_pp,
                })
                .collect(),
        }
    }

    fn total_variation(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Random corpus plus queries; query i has positives {i, i + nq}.
    fn fixture(n_docs: usize, nq: usize, dim: usize, seed: u64) -> (Index, EmbeddingMatrix, ResolvedQrels) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let corpus = EmbeddingMatrix::new(
            (0..n_docs).map(|i| format!("d{i:05}")).collect(),
            dim,
            gauss(n_docs * dim),
        )
        .unwrap();
        let queries = EmbeddingMatrix::new(
            (0..nq).map(|i| format!("q{i:03}")).collect(),
            dim,
            gauss(nq * dim),
        )
        .unwrap();
        let qrels = Qrels::from_pairs((0..nq).flat_map(|i| {
            [
                (format!("q{i:03}"), format!("d{i:05}")),
                (format!("q{i:03}"), format!("d{:05}", i + nq)),
            ]
        }))
        .resolve(&queries, &corpus)
        .unwrap();
        let index = Index::build(Arc::new(corpus), IndexMode::Exact).unwrap();
        (index, queries, qrels)
    }

    #[test]
    fn defaults_and_validation() {
        let c = SamplerConfig::default();
        assert_eq!((c.k, c.n, c.transitional_size()), (200, 15, 60));
        assert_eq!(SamplerConfig::for_profile(CorpusProfile::Document).k, 400);
        c.validate().unwrap();
        let bad = SamplerConfig {
            n: 5,
            m: Some(4),
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            k: 10,
            m: Some(20),
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!("nope".parse::<Variant>().is_err());
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn candidates_exclude_positives_and_exhaust_small_pools() {
        let corpus = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![1., 0., 0., 1., 1., 1.],
        )
        .unwrap();
        let queries = EmbeddingMatrix::new(vec!["q".into()], 2, vec![1., 0.]).unwrap();
        let qrels = Qrels::from_pairs([("q", "a")])
            .resolve(&queries, &corpus)
            .unwrap();
        let index = Index::build(Arc::new(corpus), IndexMode::Exact).unwrap();
        let judged = &qrels.entries[0];
        let c = construct_candidates(&index, &queries, judged, 0, 5, CandidateAxis::QueryDoc).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.candidates[0].row, 2);
        assert_eq!(c.candidates[0].s_neg, 1.0);
        assert_eq!(c.candidates[0].s_pp, 1.0);
        assert_eq!(c.s_pos, 1.0);
        assert!(matches!(
            construct_candidates(&index, &queries, judged, 1, 5, CandidateAxis::QueryDoc),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn query_axis_matches_brute_force() {
        let (index, queries, qrels) = fixture(800, 10, 16, 4);
        for judged in &qrels.entries {
            let p = judged.positives[0];
            let c = construct_candidates(&index, &queries, judged, p, 50, CandidateAxis::QueryDoc).unwrap();
            let oracle =
                brute_force_top_k(index.corpus(), queries.row(judged.query), 50, &judged.positives).unwrap();
            assert_eq!(
                c.candidates.iter().map(|c| c.row).collect::<Vec<_>>(),
                oracle.rows().collect::<Vec<_>>()
            );
            for (c, h) in c.candidates.iter().zip(&oracle.entries) {
                assert_eq!(c.s_neg.to_bits(), h.score.to_bits());
                assert_eq!(c.s_pp, dot(index.corpus().row(p), index.corpus().row(c.row)));
            }
        }
    }

    #[test]
    fn doc_axis_ranks_by_positive() {
        // q = e1, d+ = e2 (orthogonal). Near-query docs and near-positive
        // docs swap places between the two axes.
        let corpus = EmbeddingMatrix::new(
            ["pos", "nq1", "nq2", "np1", "np2"].map(String::from).to_vec(),
            2,
            vec![0., 1., 0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8],
        )
        .unwrap();
        let queries = EmbeddingMatrix::new(vec!["q".into()], 2, vec![1., 0.]).unwrap();
        let qrels = Qrels::from_pairs([("q", "pos")])
            .resolve(&queries, &corpus)
            .unwrap();
        let index = Index::build(Arc::new(corpus), IndexMode::Exact).unwrap();
        let j = &qrels.entries[0];
        let rows = |axis| {
            construct_candidates(&index, &queries, j, 0, 4, axis)
                .unwrap()
                .candidates
                .iter()
                .map(|c| c.row)
                .collect::<Vec<_>>()
        };
        assert_eq!(rows(CandidateAxis::QueryDoc), vec![1, 2, 4, 3]);
        assert_eq!(rows(CandidateAxis::DocDoc), vec![3, 4, 2, 1]);
    }

    #[test]
    fn transitional_weight_examples() {
        assert_eq!(gaussian_weight(0.7, 0.7, 0.25), 1.0);
        assert!((gaussian_weight(2.5, 0.5, 0.25) - (-1f64).exp()).abs() < 1e-15);
        let c = set(0.0, &[(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]);
        let w = transitional_weights(&c, 0.0, 0.25);
        let e = (-0.25f64).exp();
        let z = 1.0 + 2.0 * e;
        assert!((w[0] - e / z).abs() < 1e-15);
        assert!((w[1] - 1.0 / z).abs() < 1e-15);
        assert_eq!(w[0], w[2]);
    }

    #[test]
    fn transitional_weights_survive_huge_gaps() {
        let c = set(0.0, &[(100.0, 0.0), (200.0, 0.0)]);
        let w = transitional_weights(&c, 0.0, 0.25);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn final_weight_examples() {
        let c = set(0.6, &[(0.5, 0.8), (0.5, 0.4)]);
        assert!((relu_weight(&c.candidates[0]) - 0.3).abs() < 1e-15);
        assert_eq!(relu_weight(&c.candidates[1]), 0.0);
        let fw = final_weights(&c, 0.25);
        assert!(!fw.fallback);
        assert_eq!(fw.weights, vec![1.0, 0.0]);

        let outside = set(0.6, &[(0.5, 0.1), (0.9, 0.2)]);
        let fw = final_weights(&outside, 0.25);
        assert!(fw.fallback);
        assert_eq!(fw.weights, transitional_weights(&outside, 0.6, 0.25));
    }

    #[test]
    fn transitional_draw_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = set(0.0, &[(0.1, 0.0), (0.2, 0.0), (0.3, 0.0)]);
        let all = sample_transitional(&c, &uniform_weights(3), 3, &mut rng);
        assert_eq!(all, c);
        for _ in 0..50 {
            let t = sample_transitional(&c, &[0.0, 1.0, 0.0], 2, &mut rng);
            assert_eq!(t.candidates[0].row, 2);
            assert_eq!(t.len(), 2);
        }
    }

    #[test]
    fn single_draw_frequencies_match_weights() {
        let weights = [0.02, 0.05, 0.08, 0.1, 0.15, 0.2, 0.05, 0.12, 0.13, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[weighted_draws(&weights, 1, &mut rng)[0]] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
        assert!(total_variation(&freq, &weights) < 0.01);
    }

    #[test]
    fn draws_are_distinct_and_skip_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let picks = weighted_draws(&[0.3, 0.0, 0.5, 0.2, 0.0], 5, &mut rng);
            let mut sorted = picks.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 2, 3]);
        }
    }

    #[test]
    fn final_draw_prefers_positive_weights_then_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trans = set(0.5, &[(0.5, 0.9), (0.4, 0.1), (0.45, 0.8), (0.3, 0.2)]);
        let fw = final_weights(&trans, 0.25);
        for _ in 0..100 {
            let s = sample_final(&trans, &fw, 2, 0.25, &mut rng);
            let mut rows = s.negative_rows();
            rows.sort_unstable();
            assert_eq!(rows, vec![1, 3]);
            assert_eq!(s.fallback, Fallback::None);
            let s = sample_final(&trans, &fw, 3, 0.25, &mut rng);
            assert_eq!(s.fallback, Fallback::Filled(1));
            assert_eq!(s.weights_used[2], 0.0);
            assert!(s.weights_used[..2].iter().all(|&w| w > 0.0));
        }
        let s = sample_final(&trans, &fw, 4, 0.25, &mut rng);
        assert_eq!(s.negative_rows(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn trisampler_region_guarantee() {
        let (index, queries, qrels) = fixture(2000, 20, 12, 8);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        let samples = sample_all(&ctx, &SamplerConfig::default()).unwrap();
        assert_eq!(samples.len(), 40);
        let corpus = index.corpus();
        for s in &samples {
            assert_eq!(s.negatives.len(), 15);
            for (c, &w) in s.negatives.iter().zip(&s.weights_used) {
                assert!(!qrels
                    .entries
                    .iter()
                    .any(|e| e.query == s.query && e.is_positive(c.row)));
                if w > 0.0 && s.fallback != Fallback::Full {
                    let q = queries.row(s.query);
                    let p = corpus.row(s.positive);
                    let d = corpus.row(c.row);
                    assert!(dot(p, d) > dot(q, d));
                }
            }
        }
    }

    #[test]
    fn uniform_variant_frequencies() {
        let (index, queries, qrels) = fixture(300, 1, 8, 2);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        let config = SamplerConfig {
            k: 20,
            n: 1,
            variant: Variant::Uniform,
            ..SamplerConfig::default()
        };
        let judged = &qrels.entries[0];
        let pool = construct_candidates(
            &index,
            &queries,
            judged,
            judged.positives[0],
            20,
            CandidateAxis::QueryDoc,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = std::collections::HashMap::new();
        let runs = 100_000;
        for _ in 0..runs {
            let s = sample(&ctx, judged, judged.positives[0], &config, &mut rng).unwrap();
            *counts.entry(s.negatives[0].row).or_insert(0usize) += 1;
        }
        let freq: Vec<f64> = pool
            .candidates
            .iter()
            .map(|c| *counts.get(&c.row).unwrap_or(&0) as f64 / runs as f64)
            .collect();
        assert_eq!(counts.len(), 20);
        assert!(total_variation(&freq, &uniform_weights(20)) < 0.01);
    }

    #[test]
    fn top_ns_is_deterministic_top_n() {
        let (index, queries, qrels) = fixture(500, 3, 8, 6);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        let config = SamplerConfig {
            n: 3,
            variant: Variant::TopNs,
            ..SamplerConfig::default()
        };
        let a = sample_all(&ctx, &config).unwrap();
        let b = sample_all(
            &ctx,
            &SamplerConfig {
                seed: 99,
                ..config.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        for s in &a {
            let judged = qrels.entries.iter().find(|e| e.query == s.query).unwrap();
            let top = brute_force_top_k(index.corpus(), queries.row(s.query), 3, &judged.positives).unwrap();
            assert_eq!(s.negative_rows(), top.rows().collect::<Vec<_>>());
        }
    }

    #[test]
    fn every_variant_excludes_positives_and_is_reproducible() {
        let (index, queries, qrels) = fixture(400, 6, 8, 12);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        for variant in Variant::ALL {
            let config = SamplerConfig {
                k: 40,
                n: 5,
                seed: 3,
                variant,
                ..SamplerConfig::default()
            };
            let a = sample_all(&ctx, &config).unwrap();
            assert_eq!(a, sample_all(&ctx, &config).unwrap(), "{variant}");
            for s in &a {
                assert_eq!(s.negatives.len(), 5, "{variant}");
                let judged = qrels.entries.iter().find(|e| e.query == s.query).unwrap();
                let rows = s.negative_rows();
                assert!(rows.iter().all(|&r| !judged.is_positive(r)), "{variant}");
                let mut dedup = rows.clone();
                dedup.sort_unstable();
                dedup.dedup();
                assert_eq!(dedup.len(), rows.len(), "{variant}");
            }
        }
    }

    #[test]
    fn k_beyond_corpus_shrinks_pool() {
        let (index, queries, qrels) = fixture(12, 2, 4, 1);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        let samples = sample_all(&ctx, &SamplerConfig::default()).unwrap();
        for s in samples {
            assert_eq!(s.negatives.len(), 10);
        }
    }

    #[test]
    fn baseline_weight_shapes() {
        let c = set(1.0, &[(2.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        let w = score_weights(&c);
        assert!((w[0] / w[1] - 1f64.exp()).abs() < 1e-12);
        let w = simans_weights(&c, 0.5, 0.0);
        assert!((w[0] - w[2]).abs() < 1e-15 && w[1] > w[0]);
        let w = debiased_weights(&c, 0.5);
        // exp(s) - 0.5 exp(1): the candidate at s = 0 is removed entirely
        assert_eq!(w[2], 0.0);
        assert!(w[0] > w[1] && w[1] > 0.0);
        let w = debiased_weights(&set(5.0, &[(0.0, 0.0), (1.0, 0.0)]), 0.5);
        assert_eq!(w, score_weights(&set(5.0, &[(0.0, 0.0), (1.0, 0.0)])));
    }

    #[test]
    fn negative_dump_round_trip() {
        let (index, queries, qrels) = fixture(200, 3, 4, 9);
        let ctx = SamplingContext {
            index: &index,
            queries: &queries,
            qrels: &qrels,
        };
        let samples = sample_all(
            &ctx,
            &SamplerConfig {
                n: 4,
                ..SamplerConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.tsv");
        write_negatives(&samples, &queries, index.corpus(), &path).unwrap();
        let records = load_negatives(&path).unwrap();
        assert_eq!(records.len(), samples.len());
        for (r, s) in records.iter().zip(&samples) {
            assert_eq!(r.query, queries.id(s.query));
            assert_eq!(r.negatives.len(), 4);
            assert_eq!(r.negatives[0], index.corpus().id(s.negatives[0].row));
        }
    }

    proptest! {
        #[test]
        fn gaussian_weight_shape(s_pos in -10.0f64..10.0, a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let peak = gaussian_weight(s_pos, s_pos, 0.25);
            prop_assert_eq!(peak, 1.0);
            // (s_pos + a) - s_pos is not exactly a in floating point
            prop_assert!((gaussian_weight(s_pos + a, s_pos, 0.25) - gaussian_weight(s_pos - a, s_pos, 0.25)).abs() < 1e-12);
            if a < b {
                prop_assert!(gaussian_weight(s_pos + a, s_pos, 0.25) >= gaussian_weight(s_pos + b, s_pos, 0.25));
            }
        }

        #[test]
        fn relu_support_is_strict_region(s_neg in -5.0f64..5.0, s_pp in -5.0f64..5.0) {
            let c = ScoredCandidate { row: 0, s_neg, s_pp };
            prop_assert_eq!(relu_weight(&c) > 0.0, c.in_region());
        }

        #[test]
        fn final_order_invariant_under_common_shift(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..20),
            shift in -2.0f64..2.0,
        ) {
            let a = set(0.0, &pairs);
            let shifted: Vec<(f64, f64)> = pairs.iter().map(|&(n, p)| (n + shift, p + shift)).collect();
            let b = set(0.0, &shifted);
            let (wa, wb) = (final_weights(&a, 0.25), final_weights(&b, 0.25));
            if !wa.fallback && !wb.fallback {
                for i in 0..pairs.len() {
                    for j in 0..pairs.len() {
                        // skip pairs whose raw gap is below the rounding of the shift
                        let gap = (pairs[i].1 - pairs[i].0) - (pairs[j].1 - pairs[j].0);
                        if gap.abs() > 1e-9 {
                            prop_assert_eq!(wa.weights[i] > wa.weights[j], wb.weights[i] > wb.weights[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn normalized_weights_sum_to_one(
            pairs in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..50),
            s_pos in -20.0f64..20.0,
        ) {
            let c = set(s_pos, &pairs);
            for w in [
                transitional_weights(&c, s_pos, 0.25),
                final_weights(&c, 0.25).weights,
                score_weights(&c),
                debiased_weights(&c, 0.1),
                simans_weights(&c, 0.5, 0.0),
                uniform_weights(c.len()),
            ] {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
