//! Skip-gram with negative sampling over patient code sequences.
//!
//! Center vectors form the exported embedding matrix; context vectors are
//! training scaffolding only. Row `V` of the matrix (one past the last kept
//! code) is reserved for dropped, unknown and padding codes and stays zero.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::math::{self, dot, ln, norm, sigmoid, softplus};
use crate::numerics::{AdamConfig, ParamId, ParamStore, Tensor};
use crate::synthgen::PatientRecord;
use crate::vocab::{MedicalCode, Vocabulary};
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Context positions considered on each side of the center.
    pub window: usize,
    /// Noise samples per (center, context) pair.
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    /// The noise distribution is the unigram distribution raised to this power.
    pub noise_exponent: f64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 256,
            noise_exponent: 0.75,
            seed: 42,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.batch_size == 0 {
            return Err(Error::Config("skip-gram dim, window, negatives and batch_size must be >= 1".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }
}

/// Per-code dense vectors with a reserved all-zero row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    vectors: Tensor,
}

impl EmbeddingMatrix {
    /// Wraps a `(V + 1) x d` matrix whose last row must be zero.
    pub fn new(vectors: Tensor) -> Result<Self> {
        let (rows, _) = vectors.dims2()?;
        if rows == 0 {
            return Err(Error::Empty("embedding matrix"));
        }
        vectors.check_finite("embedding matrix")?;
        if vectors.row(rows - 1).iter().any(|&x| x != 0.0) {
            return Err(Error::Config("reserved embedding row must be zero".into()));
        }
        Ok(EmbeddingMatrix { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Number of kept codes `V`.
    pub fn vocab_len(&self) -> usize {
        self.vectors.rows() - 1
    }

    /// Index of the reserved zero row.
    pub fn zero_row(&self) -> usize {
        self.vocab_len()
    }

    /// Vector for a kept-code index; `None` maps to the zero row.
    pub fn vector(&self, index: Option<usize>) -> &[f64] {
        self.vectors.row(index.unwrap_or(self.zero_row()))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.vectors
    }

    /// `W h(v)`: the embedding of a code, zero when the code is not kept.
    pub fn embed(&self, vocab: &Vocabulary, code: &MedicalCode) -> &[f64] {
        self.vector(vocab.index_of(code))
    }
}

/// Loss and gradients of one (center, context, negatives) example.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsLoss {
    pub loss: f64,
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

/// `−ln σ(u_ctx·v) − Σ_n ln σ(−u_n·v)` and its gradients.
pub fn sgns_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> Result<SgnsLoss> {
    let d = center.len();
    if context.len() != d {
        return Err(Error::dim("sgns_loss", d, context.len()));
    }
    if let Some(n) = negatives.iter().find(|n| n.len() != d) {
        return Err(Error::dim("sgns_loss", d, n.len()));
    }
    let s = dot(context, center);
    // −ln σ(s) = softplus(−s)
    let mut loss = softplus(-s);
    let coef = sigmoid(s) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| coef * u).collect();
    let d_context = center.iter().map(|v| coef * v).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let sn = dot(n, center);
        loss += softplus(sn);
        let c = sigmoid(sn);
        for (dc, u) in d_center.iter_mut().zip(n.iter()) {
            *dc += c * u;
        }
        d_negatives.push(center.iter().map(|v| c * v).collect());
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("sgns_loss".into()));
    }
    Ok(SgnsLoss {
        loss,
        d_center,
        d_context,
        d_negatives,
    })
}

/// Result of [`train_skipgram`].
#[derive(Debug, Clone)]
pub struct SkipGramRun {
    pub embedding: EmbeddingMatrix,
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains center/context vectors with row-sparse Adam over all
/// (center, context) pairs within `window` of each other. Dropped codes are
/// removed from the sequences before windowing.
pub fn train_skipgram(records: &[PatientRecord], vocab: &Vocabulary, cfg: &SgnsConfig) -> Result<SkipGramRun> {
    cfg.validate()?;
    let v = vocab.len();
    if v == 0 {
        return Err(Error::Empty("vocabulary"));
    }
    let d = cfg.dim;
    let mut rng = rng_from_seed(cfg.seed);
    let bound = 0.5 / d as f64;
    let mut center = Tensor::zeros(&[v + 1, d]);
    for x in &mut center.data_mut()[..v * d] {
        *x = rng.random_range(-bound..bound);
    }
    let mut store = ParamStore::new();
    let cid = store.add("center", center)?;
    let xid = store.add("context", Tensor::zeros(&[v + 1, d]))?;

    let seqs: Vec<Vec<usize>> = records
        .iter()
        .map(|r| r.codes.iter().filter_map(|c| vocab.index_of(c)).collect::<Vec<_>>())
        .filter(|s| s.len() >= 2)
        .collect();
    if seqs.is_empty() {
        return Err(Error::InsufficientData("no sequence has two kept codes".into()));
    }
    let noise_weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| math::powf(c as f64, cfg.noise_exponent))
        .collect();
    let noise = WeightedIndex::new(noise_weights).map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut batch = Batch::new(v + 1, d);
    let scale = 1.0 / cfg.batch_size as f64;
    let mut negs = vec![0usize; cfg.negatives];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut pairs) = (0.0, 0usize);
        for &s in &order {
            let seq = &seqs[s];
            for (i, &c) in seq.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(seq.len() - 1);
                for (j, &ctx) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    for n in negs.iter_mut() {
                        *n = noise.sample(&mut rng);
                    }
                    total += batch.add_pair(&mut store, (cid, xid), c, ctx, &negs, scale);
                    pairs += 1;
                    if batch.len == cfg.batch_size {
                        batch.flush(&mut store, (cid, xid), &adam)?;
                    }
                }
            }
        }
        batch.flush(&mut store, (cid, xid), &adam)?;
        if !total.is_finite() {
            return Err(Error::NonFinite("skip-gram loss".into()));
        }
        epoch_losses.push(total / pairs.max(1) as f64);
    }
    let embedding = EmbeddingMatrix::new(store.value(cid).clone())?;
    Ok(SkipGramRun { embedding, epoch_losses })
}

/// Gradient accumulation for one minibatch of pairs.
struct Batch {
    len: usize,
    touched_center: Vec<usize>,
    touched_context: Vec<usize>,
    seen_center: Vec<bool>,
    seen_context: Vec<bool>,
    center: Vec<f64>,
    d_center: Vec<f64>,
}

impl Batch {
    fn new(rows: usize, dim: usize) -> Self {
        Batch {
            len: 0,
            touched_center: Vec::new(),
            touched_context: Vec::new(),
            seen_center: vec![false; rows],
            seen_context: vec![false; rows],
            center: vec![0.0; dim],
            d_center: vec![0.0; dim],
        }
    }

    /// Same value and gradients as [`sgns_loss`], accumulated in place
    /// (scaled by `scale`) without allocating.
    fn add_pair(&mut self, store: &mut ParamStore, (cid, xid): (ParamId, ParamId), c: usize, ctx: usize, negs: &[usize], scale: f64) -> f64 {
        self.center.copy_from_slice(store.value(cid).row(c));
        self.d_center.fill(0.0);
        let mut loss = 0.0;
        let targets = core::iter::once((ctx, 1.0)).chain(negs.iter().map(|&n| (n, 0.0)));
        for (row, label) in targets {
            let u = store.value(xid).row(row);
            let s = dot(u, &self.center);
            let (sig, sp) = math::sigmoid_softplus(s);
            // −ln σ(s) = softplus(s) − s;  −ln σ(−s) = softplus(s)
            loss += sp - label * s;
            let coef = sig - label;
            axpy(&mut self.d_center, u, coef);
            axpy(store.grad_mut(xid).row_mut(row), &self.center, scale * coef);
        }
        axpy(store.grad_mut(cid).row_mut(c), &self.d_center, scale);
        mark(&mut self.seen_center, &mut self.touched_center, c);
        mark(&mut self.seen_context, &mut self.touched_context, ctx);
        for &n in negs {
            mark(&mut self.seen_context, &mut self.touched_context, n);
        }
        self.len += 1;
        loss
    }

    fn flush(&mut self, store: &mut ParamStore, (cid, xid): (ParamId, ParamId), adam: &AdamConfig) -> Result<()> {
        if self.len == 0 {
            return Ok(());
        }
        store.adam_step_rows(&[(cid, &self.touched_center), (xid, &self.touched_context)], adam)?;
        for &r in &self.touched_center {
            self.seen_center[r] = false;
        }
        for &r in &self.touched_context {
            self.seen_context[r] = false;
        }
        self.touched_center.clear();
        self.touched_context.clear();
        self.len = 0;
        Ok(())
    }
}

fn mark(seen: &mut [bool], touched: &mut Vec<usize>, row: usize) {
    if !seen[row] {
        seen[row] = true;
        touched.push(row);
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean pairwise cosine similarity within groups (`intra`) and across groups (`inter`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSeparation {
    pub intra: f64,
    pub inter: f64,
}

impl ClusterSeparation {
    pub fn gap(&self) -> f64 {
        self.intra - self.inter
    }
}

/// Cluster separation of the kept codes listed in `groups`. Requires at
/// least two groups with at least two kept codes each.
pub fn cluster_separation(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    groups: &BTreeMap<MedicalCode, usize>,
) -> Result<ClusterSeparation> {
    let members: Vec<(usize, usize)> = groups
        .iter()
        .filter_map(|(code, &g)| vocab.index_of(code).map(|i| (i, g)))
        .collect();
    cluster_separation_indexed(emb, &members)
}

/// [`cluster_separation`] over `(row, group)` pairs.
pub fn cluster_separation_indexed(emb: &EmbeddingMatrix, members: &[(usize, usize)]) -> Result<ClusterSeparation> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &(_, g) in members {
        *sizes.entry(g).or_default() += 1;
    }
    if sizes.len() < 2 || sizes.values().any(|&n| n < 2) {
        return Err(Error::InsufficientData("cluster separation needs >= 2 groups of >= 2 codes".into()));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (a, &(ia, ga)) in members.iter().enumerate() {
        for &(ib, gb) in &members[a + 1..] {
            let c = cosine(emb.vector(Some(ia)), emb.vector(Some(ib)))?;
            if ga == gb {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    Ok(ClusterSeparation {
        intra: intra / n_intra as f64,
        inter: inter / n_inter as f64,
    })
}

/// Mean of [`sgns_loss`] at all-zero parameters: `(1 + k) ln 2`.
pub fn zero_parameter_loss(negatives: usize) -> f64 {
    (1 + negatives) as f64 * ln(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::synthgen::{generate_cohort, CodeUniverse, CohortConfig};

    #[test]
    fn batched_pair_update_matches_reference_loss() {
        let mut rng = rng_from_seed(3);
        let mut store = ParamStore::new();
        let rand_matrix = |rng: &mut crate::Rng| {
            Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let cid = store.add("center", rand_matrix(&mut rng)).unwrap();
        let xid = store.add("context", rand_matrix(&mut rng)).unwrap();
        let negs = [4, 1, 4, 5, 0];
        let mut batch = Batch::new(6, 4);
        let loss = batch.add_pair(&mut store, (cid, xid), 2, 3, &negs, 0.5);

        let (cen, ctxm) = (store.value(cid), store.value(xid));
        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| ctxm.row(n)).collect();
        let reference = sgns_loss(cen.row(2), ctxm.row(3), &neg_rows).unwrap();
        assert!((loss - reference.loss).abs() < 1e-12);
        let mut expected_ctx = Tensor::zeros(&[6, 4]);
        for (j, x) in reference.d_context.iter().enumerate() {
            expected_ctx.row_mut(3)[j] += 0.5 * x;
        }
        for (&n, g) in negs.iter().zip(&reference.d_negatives) {
            for (j, x) in g.iter().enumerate() {
                expected_ctx.row_mut(n)[j] += 0.5 * x;
            }
        }
        for (a, b) in store.grad(xid).data().iter().zip(expected_ctx.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in store.grad(cid).row(2).iter().zip(&reference.d_center) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
        assert_eq!(batch.touched_context.len(), 5);
    }

    #[test]
    fn zero_vectors_give_six_ln_two() {
        let z = [0.0; 4];
        let out = sgns_loss(&z, &z, &[&z[..]; 5]).unwrap();
        assert!((out.loss - 6.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!((out.loss - 4.1589).abs() < 1e-4);
        assert!((zero_parameter_loss(5) - out.loss).abs() < 1e-12);
    }

    #[test]
    fn saturated_example_has_near_zero_loss() {
        let c = [2.0, 0.0, 0.0, 0.0];
        let pos = [10.0, 0.0, 0.0, 0.0];
        let neg = [-10.0, 0.0, 0.0, 0.0];
        let out = sgns_loss(&c, &pos, &[&neg[..]; 5]).unwrap();
        // six terms of about e^-20 each
        assert!(out.loss >= 0.0 && out.loss < 1e-7);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(sgns_loss(&[0.0; 3], &[0.0; 2], &[]).is_err());
        assert!(sgns_loss(&[0.0; 3], &[0.0; 3], &[&[0.0; 4]]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let (d, k) = (6, 5);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..d * (2 + k)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
                let negs: Vec<&[f64]> = (0..k).map(|n| &t[(2 + n) * d..(3 + n) * d]).collect();
                let out = sgns_loss(&t[..d], &t[d..2 * d], &negs)?;
                let mut g = out.d_center;
                g.extend(out.d_context);
                out.d_negatives.into_iter().for_each(|n| g.extend(n));
                Ok((out.loss, g))
            };
            let r = grad_check(f, &theta, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    fn corpus() -> (Vec<PatientRecord>, CohortConfig) {
        let cfg = CohortConfig {
            n_patients: 600,
            vocab_size: 60,
            ..Default::default()
        };
        (generate_cohort(&cfg).unwrap(), cfg)
    }

    #[test]
    fn training_reduces_loss_and_keeps_zero_row() {
        let (records, _) = corpus();
        let vocab = Vocabulary::build(&records, 5).unwrap();
        let cfg = SgnsConfig {
            epochs: 5,
            ..Default::default()
        };
        let run = train_skipgram(&records, &vocab, &cfg).unwrap();
        assert_eq!(run.epoch_losses.len(), 5);
        assert!(run.epoch_losses[4] < run.epoch_losses[0], "{:?}", run.epoch_losses);
        let emb = &run.embedding;
        assert!(emb.vector(None).iter().all(|&x| x == 0.0));
        assert_eq!(emb.vocab_len(), vocab.len());
        let again = train_skipgram(&records, &vocab, &cfg).unwrap();
        assert_eq!(again.embedding, run.embedding);
    }

    #[test]
    fn area_codes_cluster_after_training() {
        let (records, cohort_cfg) = corpus();
        let vocab = Vocabulary::build(&records, 5).unwrap();
        let run = train_skipgram(&records, &vocab, &SgnsConfig::default()).unwrap();
        let groups = CodeUniverse::new(&cohort_cfg).unwrap().code_groups();
        let sep = cluster_separation(&run.embedding, &vocab, &groups).unwrap();
        assert!(sep.gap() > 0.1, "{sep:?}");
    }

    #[test]
    fn cluster_separation_examples() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 0.0]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let emb = EmbeddingMatrix::new(Tensor::matrix(5, 2, flat).unwrap()).unwrap();
        let sep = cluster_separation_indexed(&emb, &[(0, 0), (1, 0), (2, 1), (3, 1)]).unwrap();
        assert!((sep.intra - 1.0).abs() < 1e-12);
        assert_eq!(sep.inter, 0.0);
        assert!(cluster_separation_indexed(&emb, &[(0, 0), (1, 0), (2, 1)]).is_err());
        assert!(cluster_separation_indexed(&emb, &[(0, 0), (1, 0)]).is_err());
    }

    #[test]
    fn cluster_separation_is_scale_invariant() {
        let mut rng = rng_from_seed(8);
        let data: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).chain([0.0; 3]).collect();
        let a = EmbeddingMatrix::new(Tensor::matrix(7, 3, data.clone()).unwrap()).unwrap();
        let b = EmbeddingMatrix::new(Tensor::matrix(7, 3, data.iter().map(|x| 3.7 * x).collect()).unwrap()).unwrap();
        let members = [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2)];
        let (sa, sb) = (
            cluster_separation_indexed(&a, &members).unwrap(),
            cluster_separation_indexed(&b, &members).unwrap(),
        );
        assert!((sa.intra - sb.intra).abs() < 1e-12 && (sa.inter - sb.inter).abs() < 1e-12);
    }

    #[test]
    fn reserved_row_must_be_zero() {
        assert!(EmbeddingMatrix::new(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).is_err());
    }
}
