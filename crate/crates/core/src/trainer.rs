//! Desk-scale dual-encoder training.
//!
//! Each tower is one linear projection, so a score is
//! `s(q, d) = (x_q W_q) . (x_d W_d)` and its gradient is derived by hand.
//! Negatives come from the configured sampler and are redrawn every
//! `refresh_every` steps against a freshly encoded corpus and a new index
//! generation. Between refreshes the cached candidate scores are stale;
//! the loss itself always uses live scores.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingMatrix, Qrels, ResolvedQrels};
use crate::error::{Error, Result};
use crate::index::{Index, IndexMode};
use crate::sampler::{sample_all, SamplerConfig, SamplerStats, SamplingContext};
use crate::seeding::rng_for;

/// `-log(e^{s_pos} / (e^{s_pos} + sum_i e^{s_neg_i}))` in log-sum-exp form.
pub fn contrastive_loss(s_pos: f64, s_negs: &[f64]) -> f64 {
    assert!(!s_negs.is_empty(), "contrastive loss needs a negative");
    // the maximal term contributes exactly 1; ln_1p keeps the rest exact
    // when the positive dominates
    let all = || std::iter::once(s_pos).chain(s_negs.iter().copied());
    let (argmax, max) =
        all().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, s)| if s > best.1 { (i, s) } else { best },
        );
    let rest: f64 = all()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, s)| (s - max).exp())
        .sum();
    (max - s_pos) + rest.ln_1p()
}

/// Partial derivatives of [`contrastive_loss`] with respect to `s_pos` and
/// each `s_neg`. `g_pos = -(1 - p_pos)`, `g_neg_j = p_j`, where `p` is the
/// softmax over all scores.
pub fn loss_gradients(s_pos: f64, s_negs: &[f64]) -> (f64, Vec<f64>) {
    assert!(!s_negs.is_empty(), "contrastive loss needs a negative");
    let max = s_negs.iter().copied().fold(s_pos, f64::max);
    let e_pos = (s_pos - max).exp();
    let e_negs: Vec<f64> = s_negs.iter().map(|s| (s - max).exp()).collect();
    let neg_mass: f64 = e_negs.iter().sum();
    let z = e_pos + neg_mass;
    let g_negs = e_negs.into_iter().map(|e| e / z).collect();
    (-neg_mass / z, g_negs)
}

/// Two linear towers. `w_q` and `w_d` are `dim_in x dim_out`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub dim_in: usize,
    pub dim_out: usize,
    pub w_q: Vec<f64>,
    pub w_d: Vec<f64>,
}

impl ToyEncoder {
    /// Gaussian towers with entries `N(0, scale^2 / dim_in)`. Tied towers
    /// start from the same draw, as two encoders initialized from one
    /// checkpoint do.
    pub fn random<R: Rng + ?Sized>(
        dim_in: usize,
        dim_out: usize,
        scale: f64,
        tied: bool,
        rng: &mut R,
    ) -> Self {
        let std = scale / (dim_in as f64).sqrt();
        let mut draw = || -> Vec<f64> {
            (0..dim_in * dim_out)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                .collect()
        };
        let w_q = draw();
        let w_d = if tied { w_q.clone() } else { draw() };
        Self {
            dim_in,
            dim_out,
            w_q,
            w_d,
        }
    }

    /// Both towers equal to the identity; scores are raw inner products.
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            dim_in: dim,
            dim_out: dim,
            w_q: w.clone(),
            w_d: w,
        }
    }

    fn project(&self, w: &[f64], x: &[f32], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let xi = f64::from(xi);
            let row = &w[i * self.dim_out..(i + 1) * self.dim_out];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }

    pub fn encode_query(&self, x: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_out];
        self.project(&self.w_q, x, &mut out);
        out
    }

    pub fn encode_doc(&self, x: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_out];
        self.project(&self.w_d, x, &mut out);
        out
    }

    fn encode_matrix(&self, w: &[f64], m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if m.dim() != self.dim_in {
            return Err(Error::Contract(format!(
                "encoder expects dimension {}, input has {}",
                self.dim_in,
                m.dim()
            )));
        }
        let data: Vec<f32> = (0..m.count())
            .into_par_iter()
            .flat_map_iter(|row| {
                let mut out = vec![0.0; self.dim_out];
                self.project(w, m.row(row), &mut out);
                out.into_iter().map(|v| v as f32)
            })
            .collect();
        EmbeddingMatrix::new(m.ids().to_vec(), self.dim_out, data)
    }

    pub fn encode_queries(&self, queries: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.encode_matrix(&self.w_q, queries)
    }

    pub fn encode_corpus(&self, corpus: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.encode_matrix(&self.w_d, corpus)
    }

    pub fn score(&self, query: &[f32], doc: &[f32]) -> f64 {
        dot64(&self.encode_query(query), &self.encode_doc(doc))
    }

    pub fn is_finite(&self) -> bool {
        self.w_q.iter().chain(&self.w_d).all(|v| v.is_finite())
    }
}

/// Refresh cadence of the full-scale setting, in optimizer steps.
pub const REFERENCE_REFRESH_STEPS: usize = 2000;
/// [`REFERENCE_REFRESH_STEPS`] scaled to the 5000-document synthetic corpus.
pub const DEFAULT_REFRESH_EVERY: usize = 200;

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(q, d+, [d-; n])` as row indices into the raw query and corpus matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Steps between index rebuild and negative resampling; see
    /// [`DEFAULT_REFRESH_EVERY`].
    pub refresh_every: usize,
    pub batch_size: usize,
    /// Output dimension; 0 keeps the input dimension.
    pub dim_out: usize,
    /// Standard deviation multiplier of the initial weights. Scores scale
    /// with its square. The Gaussian stage of the sampler has a fixed
    /// width in score units, so at scale 1 (cosine-sized scores) it is
    /// nearly flat; 3 puts candidate score gaps at a few units.
    pub init_scale: f64,
    /// Start both towers from identical weights.
    pub tied_init: bool,
    pub log_every: usize,
    /// Record wall-clock time per log record. Off makes logs reproducible
    /// byte for byte.
    pub record_timing: bool,
    pub index: IndexMode,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 1000,
            refresh_every: DEFAULT_REFRESH_EVERY,
            batch_size: 32,
            dim_out: 0,
            init_scale: 3.0,
            tied_init: true,
            log_every: 50,
            record_timing: false,
            index: IndexMode::Exact,
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refresh_every == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Contract(
                "refresh_every, batch_size and log_every must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Contract(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Contract("init_scale must be positive".into()));
        }
        self.sampler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub epoch: u64,
    pub in_region_fraction: f64,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    /// Sampler statistics of every refresh, epoch 0 first.
    #[serde(skip)]
    pub refreshes: Vec<SamplerStats>,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn final_epoch(&self) -> u64 {
        self.records.last().map_or(0, |r| r.epoch)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Per-batch gradient buffers, same layout as the encoder.
struct Grad {
    w_q: Vec<f64>,
    w_d: Vec<f64>,
}

impl Grad {
    fn zeros(enc: &ToyEncoder) -> Self {
        Self {
            w_q: vec![0.0; enc.w_q.len()],
            w_d: vec![0.0; enc.w_d.len()],
        }
    }

    fn add(mut self, other: Grad) -> Self {
        for (a, b) in self.w_q.iter_mut().zip(other.w_q) {
            *a += b;
        }
        for (a, b) in self.w_d.iter_mut().zip(other.w_d) {
            *a += b;
        }
        self
    }
}

/// `acc += scale * outer(x, v)` for a row-major `x.len() x v.len()` matrix.
fn add_outer(acc: &mut [f64], x: &[f32], v: &[f64], scale: f64) {
    let cols = v.len();
    for (i, &xi) in x.iter().enumerate() {
        let c = scale * f64::from(xi);
        if c == 0.0 {
            continue;
        }
        for (a, &vj) in acc[i * cols..(i + 1) * cols].iter_mut().zip(v) {
            *a += c * vj;
        }
    }
}

/// Loss of one triple and its gradient accumulated into `grad`.
fn triple_step(
    enc: &ToyEncoder,
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    t: &TrainingTriple,
    grad: Option<&mut Grad>,
) -> f64 {
    let xq = queries.row(t.query);
    let hq = enc.encode_query(xq);
    let docs: Vec<usize> = std::iter::once(t.positive)
        .chain(t.negatives.iter().copied())
        .collect();
    let hd: Vec<Vec<f64>> = docs.iter().map(|&d| enc.encode_doc(corpus.row(d))).collect();
    let s_pos = dot64(&hq, &hd[0]);
    let s_negs: Vec<f64> = hd[1..].iter().map(|h| dot64(&hq, h)).collect();
    let loss = contrastive_loss(s_pos, &s_negs);
    if let Some(grad) = grad {
        let (g_pos, g_negs) = loss_gradients(s_pos, &s_negs);
        let coeffs: Vec<f64> = std::iter::once(g_pos).chain(g_negs).collect();
        // dL/dh_q = sum_j g_j h_j ; dL/dh_j = g_j h_q
        let mut dh_q = vec![0.0; enc.dim_out];
        for (g, h) in coeffs.iter().zip(&hd) {
            for (a, &b) in dh_q.iter_mut().zip(h) {
                *a += g * b;
            }
        }
        add_outer(&mut grad.w_q, xq, &dh_q, 1.0);
        for (&g, &d) in coeffs.iter().zip(&docs) {
            add_outer(&mut grad.w_d, corpus.row(d), &hq, g);
        }
    }
    loss
}

/// Mean loss over `triples` and, when asked, the mean gradient.
fn batch_loss(
    enc: &ToyEncoder,
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    triples: &[&TrainingTriple],
    with_grad: bool,
) -> (f64, Option<Grad>) {
    if triples.is_empty() {
        return (0.0, with_grad.then(|| Grad::zeros(enc)));
    }
    // fixed-order reduction keeps results independent of the thread count
    let parts: Vec<(f64, Option<Grad>)> = triples
        .par_iter()
        .map(|t| {
            let mut g = with_grad.then(|| Grad::zeros(enc));
            let loss = triple_step(enc, queries, corpus, t, g.as_mut());
            (loss, g)
        })
        .collect();
    let n = triples.len() as f64;
    let mut loss = 0.0;
    let mut total: Option<Grad> = None;
    for (l, g) in parts {
        loss += l;
        total = match (total, g) {
            (None, g) => g,
            (Some(acc), Some(g)) => Some(acc.add(g)),
            (acc, None) => acc,
        };
    }
    if let Some(g) = total.as_mut() {
        for v in g.w_q.iter_mut().chain(g.w_d.iter_mut()) {
            *v /= n;
        }
    }
    (loss / n, total)
}

/// Loss and gradient of one triple, exposed for gradient checks.
pub fn triple_loss_and_grad(
    enc: &ToyEncoder,
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    triple: &TrainingTriple,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut g = Grad::zeros(enc);
    let loss = triple_step(enc, queries, corpus, triple, Some(&mut g));
    (loss, g.w_q, g.w_d)
}

/// Triple-level loss with no gradient.
pub fn triple_loss(
    enc: &ToyEncoder,
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    triple: &TrainingTriple,
) -> f64 {
    triple_step(enc, queries, corpus, triple, None)
}

struct Refresh {
    index: Index,
    triples: Vec<TrainingTriple>,
    stats: SamplerStats,
}

fn refresh(
    enc: &ToyEncoder,
    corpus: &EmbeddingMatrix,
    queries: &EmbeddingMatrix,
    qrels: &ResolvedQrels,
    previous: Option<&Index>,
    config: &TrainerConfig,
) -> Result<Refresh> {
    let encoded = Arc::new(enc.encode_corpus(corpus)?);
    let index = match previous {
        None => Index::build(encoded, config.index)?,
        Some(prev) => prev.rebuild(encoded)?,
    };
    let encoded_queries = enc.encode_queries(queries)?;
    let ctx = SamplingContext {
        index: &index,
        queries: &encoded_queries,
        qrels,
    };
    let sampler = SamplerConfig {
        seed: crate::seeding::derive_seed(config.sampler.seed, &format!("epoch{}", index.epoch())),
        ..config.sampler.clone()
    };
    let samples = sample_all(&ctx, &sampler)?;
    let stats = SamplerStats::of(&samples);
    let triples = samples
        .into_iter()
        .map(|s| TrainingTriple {
            query: s.query,
            positive: s.positive,
            negatives: s.negative_rows(),
        })
        .collect();
    Ok(Refresh {
        index,
        triples,
        stats,
    })
}

/// The encoder [`train`] starts from for inputs of dimension `dim_in`.
pub fn initial_encoder(dim_in: usize, config: &TrainerConfig) -> ToyEncoder {
    let dim_out = if config.dim_out == 0 {
        dim_in
    } else {
        config.dim_out
    };
    ToyEncoder::random(
        dim_in,
        dim_out,
        config.init_scale,
        config.tied_init,
        &mut rng_for(config.seed, "init"),
    )
}

/// Trains a [`ToyEncoder`] with SGD on the contrastive loss.
pub fn train(
    corpus: &EmbeddingMatrix,
    queries: &EmbeddingMatrix,
    qrels: &Qrels,
    config: &TrainerConfig,
) -> Result<(ToyEncoder, TrainingLog)> {
    config.validate()?;
    if corpus.dim() != queries.dim() {
        return Err(Error::Contract(format!(
            "corpus dimension {} differs from query dimension {}",
            corpus.dim(),
            queries.dim()
        )));
    }
    let resolved = qrels.resolve(queries, corpus)?;
    if resolved.pair_count() == 0 {
        return Err(Error::Contract("no (query, positive) pairs to train on".into()));
    }
    let started = Instant::now();
    let elapsed = || config.record_timing.then(|| started.elapsed().as_millis() as u64);

    let mut enc = initial_encoder(corpus.dim(), config);
    let mut order_rng = rng_for(config.seed, "batches");

    let mut current = refresh(&enc, corpus, queries, &resolved, None, config)?;
    let mut log = TrainingLog::default();
    log.refreshes.push(current.stats);

    let all: Vec<&TrainingTriple> = current.triples.iter().collect();
    let (init_loss, _) = batch_loss(&enc, queries, corpus, &all, false);
    check_finite(init_loss, 0)?;
    log.records.push(LogRecord {
        step: 0,
        loss: init_loss,
        epoch: 0,
        in_region_fraction: current.stats.in_region_fraction,
        wall_ms: elapsed(),
    });

    let mut order: Vec<usize> = (0..current.triples.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut window_loss = 0.0;
    let mut window_steps = 0;

    for step in 1..=config.steps {
        let batch: Vec<&TrainingTriple> = (0..config.batch_size.min(order.len()))
            .map(|_| {
                if cursor == order.len() {
                    order.shuffle(&mut order_rng);
                    cursor = 0;
                }
                cursor += 1;
                &current.triples[order[cursor - 1]]
            })
            .collect();
        let (loss, grad) = batch_loss(&enc, queries, corpus, &batch, true);
        check_finite(loss, step)?;
        let grad = grad.expect("gradient requested");
        for (w, g) in enc.w_q.iter_mut().zip(&grad.w_q) {
            *w -= config.learning_rate * g;
        }
        for (w, g) in enc.w_d.iter_mut().zip(&grad.w_d) {
            *w -= config.learning_rate * g;
        }
        if !enc.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: "non-finite encoder parameters".into(),
            });
        }
        window_loss += loss;
        window_steps += 1;

        if step % config.refresh_every == 0 {
            current = refresh(&enc, corpus, queries, &resolved, Some(&current.index), config)?;
            log.refreshes.push(current.stats);
            order = (0..current.triples.len()).collect();
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        if step % config.log_every == 0 || step == config.steps {
            log.records.push(LogRecord {
                step,
                loss: window_loss / window_steps as f64,
                epoch: current.index.epoch(),
                in_region_fraction: current.stats.in_region_fraction,
                wall_ms: elapsed(),
            });
            window_loss = 0.0;
            window_steps = 0;
        }
    }
    Ok((enc, log))
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            reason: format!("loss is {loss}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn loss_examples() {
        assert!((contrastive_loss(0.3, &[0.3]) - LN_2).abs() < 1e-15);
        assert!((contrastive_loss(0.0, &[0.0, 0.0, 0.0]) - 4f64.ln()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let l = contrastive_loss(i as f64, &[0.0, 1.0]);
            assert!(l < prev);
            prev = l;
        }
        assert!(prev > 0.0 && prev < 1e-80);
        assert_eq!(contrastive_loss(800.0, &[0.0]), 0.0);
        assert!(contrastive_loss(-800.0, &[0.0]).is_finite());
    }

    #[test]
    fn gradient_examples() {
        let (gp, gn) = loss_gradients(1.5, &[1.5]);
        assert!((gp + 0.5).abs() < 1e-15);
        assert!((gn[0] - 0.5).abs() < 1e-15);
        let (gp, gn) = loss_gradients(0.2, &[1.0, -3.0, 700.0]);
        assert!((gp + gn.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let base = contrastive_loss(0.4, &[1.0, -0.5]);
        assert!((base - contrastive_loss(10.4, &[11.0, 9.5])).abs() < 1e-12);
    }

    fn small_problem() -> (EmbeddingMatrix, EmbeddingMatrix, TrainingTriple) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut row = |n| -> Vec<f32> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let corpus = EmbeddingMatrix::new((0..5).map(|i| format!("d{i}")).collect(), 3, row(15)).unwrap();
        let queries = EmbeddingMatrix::new(vec!["q".into()], 3, row(3)).unwrap();
        let t = TrainingTriple {
            query: 0,
            positive: 1,
            negatives: vec![0, 3, 4],
        };
        (corpus, queries, t)
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let (corpus, queries, t) = small_problem();
        let enc = ToyEncoder::random(3, 4, 1.0, false, &mut ChaCha8Rng::seed_from_u64(1));
        let (_, gq, gd) = triple_loss_and_grad(&enc, &queries, &corpus, &t);
        let h = 1e-6;
        for which in 0..2 {
            for i in 0..12 {
                let mut plus = enc.clone();
                let mut minus = enc.clone();
                let (p, m) = if which == 0 {
                    (&mut plus.w_q[i], &mut minus.w_q[i])
                } else {
                    (&mut plus.w_d[i], &mut minus.w_d[i])
                };
                *p += h;
                *m -= h;
                let fd = (triple_loss(&plus, &queries, &corpus, &t)
                    - triple_loss(&minus, &queries, &corpus, &t))
                    / (2.0 * h);
                let analytic = if which == 0 { gq[i] } else { gd[i] };
                assert!((fd - analytic).abs() < 1e-7, "{which} {i}: {fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn identity_encoder_scores_are_inner_products() {
        let (corpus, queries, _) = small_problem();
        let enc = ToyEncoder::identity(3);
        let s = enc.score(queries.row(0), corpus.row(2));
        assert!((s - crate::geometry::dot(queries.row(0), corpus.row(2))).abs() < 1e-12);
        let encoded = enc.encode_corpus(&corpus).unwrap();
        assert_eq!(encoded, corpus);
    }

    proptest::proptest! {
        #[test]
        fn softmax_identities(s_pos in -50.0f64..50.0, s_negs in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let (gp, gn) = loss_gradients(s_pos, &s_negs);
            proptest::prop_assert!((gp + gn.iter().sum::<f64>()).abs() < 1e-12);
            for j in 0..gn.len() {
                for k in 0..gn.len() {
                    if gn[k] > 1e-300 && gn[j] > 1e-300 {
                        let ratio = gn[j] / gn[k];
                        let expected = (s_negs[j] - s_negs[k]).exp();
                        proptest::prop_assert!((ratio - expected).abs() <= 1e-9 * expected);
                    }
                }
            }
        }

        #[test]
        fn loss_shift_invariance(s_pos in -20.0f64..20.0, s_negs in proptest::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = s_negs.iter().map(|s| s + c).collect();
            let a = contrastive_loss(s_pos, &s_negs);
            let b = contrastive_loss(s_pos + c, &shifted);
            proptest::prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            refresh_every: 0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            learning_rate: f64::NAN,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
