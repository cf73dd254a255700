//! Fixed-length patient features: pad or truncate to `N` codes, embed, run a
//! single-layer LSTM, max-pool hidden states over real (unpadded) positions,
//! append age and gender, then min-max scale to `[-1, 1]`.
//!
//! The LSTM is trained once on labeled patients through a throwaway logistic
//! head and is frozen afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingMatrix;
use crate::math::{self, sigmoid, softplus};
use crate::numerics::{matmul, matmul_acc, AdamConfig, ParamId, ParamStore, Tensor};
use crate::synthgen::{Label, PatientRecord};
use crate::vocab::{MedicalCode, Vocabulary};
use crate::{rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Padded sequence length `N`.
    pub max_len: usize,
    /// LSTM hidden width `d_S`.
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            max_len: 60,
            hidden: 32,
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("encoder max_len, hidden and batch_size must be >= 1".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }

    /// Width of the final feature vector: pooled state, age, gender.
    pub fn feature_dim(&self) -> usize {
        self.hidden + 2
    }
}

/// Keeps the last `n` items (most recent history) or post-pads with `None`.
/// The mask marks real positions.
pub fn pad_or_truncate<T: Clone>(codes: &[T], n: usize) -> Result<(Vec<Option<T>>, Vec<bool>)> {
    if n == 0 {
        return Err(Error::Config("padded length must be >= 1".into()));
    }
    if codes.is_empty() {
        return Err(Error::Empty("code sequence"));
    }
    let start = codes.len().saturating_sub(n);
    let mut seq: Vec<Option<T>> = codes[start..].iter().cloned().map(Some).collect();
    let mut mask = vec![true; seq.len()];
    seq.resize(n, None);
    mask.resize(n, false);
    Ok((seq, mask))
}

/// Single-layer LSTM. Gate blocks in the weight columns are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

/// Forward activations kept for backpropagation through time.
pub struct LstmTrace {
    steps: usize,
    batch: usize,
    xs: Tensor,
    /// Per step `[batch, 4h]`: i, f, g, o after their nonlinearities.
    gates: Vec<Tensor>,
    /// Per step `[batch, h]`, index 0 is the zero initial state.
    cells: Vec<Tensor>,
    /// Per step `[batch, h]`, index 0 is the zero initial state.
    hiddens: Vec<Tensor>,
}

impl LstmTrace {
    /// Hidden state after step `t` (0-based).
    pub fn hidden(&self, t: usize) -> &Tensor {
        &self.hiddens[t + 1]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl LstmCell {
    /// PyTorch-style uniform init in `±1/sqrt(h)` with the forget bias at 1.
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / math::sqrt(hidden as f64);
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w_x = Tensor::matrix(input_dim, 4 * hidden, uniform(input_dim * 4 * hidden))?;
        let w_h = Tensor::matrix(hidden, 4 * hidden, uniform(hidden * 4 * hidden))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        Ok(LstmCell {
            input_dim,
            hidden,
            w_x: store.add(format!("{prefix}.w_x"), w_x)?,
            w_h: store.add(format!("{prefix}.w_h"), w_h)?,
            b: store.add(format!("{prefix}.b"), Tensor::vector(b))?,
        })
    }

    /// Re-binds a cell to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::Config(format!("missing LSTM parameter `{prefix}.{n}`")))
        };
        let (w_x, w_h, b) = (get("w_x")?, get("w_h")?, get("b")?);
        let (input_dim, four_h) = store.value(w_x).dims2()?;
        let hidden = four_h / 4;
        if store.value(w_h).shape() != [hidden, four_h] || store.value(b).len() != four_h {
            return Err(Error::Config("inconsistent LSTM parameter shapes".into()));
        }
        Ok(LstmCell {
            input_dim,
            hidden,
            w_x,
            w_h,
            b,
        })
    }

    /// One application of the cell: returns `(h', c')`.
    pub fn step(&self, store: &ParamStore, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut a = matmul(x, false, store.value(self.w_x), false)?;
        matmul_acc(&mut a, h, false, store.value(self.w_h), false, 1.0)?;
        let (h2, c2, _) = self.gate_update(store, &a, c)?;
        Ok((h2, c2))
    }

    fn gate_update(&self, store: &ParamStore, a: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let hd = self.hidden;
        let batch = a.rows();
        let bias = store.value(self.b).data();
        let mut gates = Tensor::zeros(&[batch, 4 * hd]);
        let mut h2 = Tensor::zeros(&[batch, hd]);
        let mut c2 = Tensor::zeros(&[batch, hd]);
        for r in 0..batch {
            let ar = a.row(r);
            let cr = c.row(r);
            let gr = gates.row_mut(r);
            for j in 0..hd {
                gr[j] = sigmoid(ar[j] + bias[j]);
                gr[hd + j] = sigmoid(ar[hd + j] + bias[hd + j]);
                gr[2 * hd + j] = math::tanh(ar[2 * hd + j] + bias[2 * hd + j]);
                gr[3 * hd + j] = sigmoid(ar[3 * hd + j] + bias[3 * hd + j]);
            }
            let (cn, hn) = (c2.row_mut(r), h2.row_mut(r));
            for j in 0..hd {
                cn[j] = gr[hd + j] * cr[j] + gr[j] * gr[2 * hd + j];
                hn[j] = gr[3 * hd + j] * math::tanh(cn[j]);
            }
        }
        Ok((h2, c2, gates))
    }

    /// Runs the recurrence over `steps` time steps. `xs` is time-major:
    /// row `t * batch + b` holds the input of sequence `b` at step `t`.
    pub fn forward(&self, store: &ParamStore, xs: &Tensor, steps: usize, batch: usize) -> Result<LstmTrace> {
        if xs.rows() != steps * batch || xs.cols() != self.input_dim {
            return Err(Error::dim(
                "lstm_forward",
                format!("{}x{}", steps * batch, self.input_dim),
                format!("{}x{}", xs.rows(), xs.cols()),
            ));
        }
        let ax = matmul(xs, false, store.value(self.w_x), false)?;
        let hd = self.hidden;
        let mut hiddens = vec![Tensor::zeros(&[batch, hd])];
        let mut cells = vec![Tensor::zeros(&[batch, hd])];
        let mut gates = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut a = ax.slice_rows(t * batch, (t + 1) * batch);
            matmul_acc(&mut a, &hiddens[t], false, store.value(self.w_h), false, 1.0)?;
            let (h2, c2, g) = self.gate_update(store, &a, &cells[t])?;
            h2.check_finite("lstm_forward")?;
            hiddens.push(h2);
            cells.push(c2);
            gates.push(g);
        }
        Ok(LstmTrace {
            steps,
            batch,
            xs: xs.clone(),
            gates,
            cells,
            hiddens,
        })
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient with
    /// respect to the hidden state after step `t`. Parameter gradients are
    /// accumulated into `grads`.
    pub fn backward(&self, grads: &mut ParamStore, trace: &LstmTrace, dh: &[Tensor]) -> Result<()> {
        let (steps, batch, hd) = (trace.steps, trace.batch, self.hidden);
        if dh.len() != steps {
            return Err(Error::dim("lstm_backward", steps, dh.len()));
        }
        let w_h = grads.value(self.w_h).clone();
        let mut da_all = Tensor::zeros(&[steps * batch, 4 * hd]);
        let mut dw_h = Tensor::zeros(&[hd, 4 * hd]);
        let mut dh_next = Tensor::zeros(&[batch, hd]);
        let mut dc_next = Tensor::zeros(&[batch, hd]);
        for t in (0..steps).rev() {
            let g = &trace.gates[t];
            let c_prev = &trace.cells[t];
            let c_t = &trace.cells[t + 1];
            let mut da = Tensor::zeros(&[batch, 4 * hd]);
            for r in 0..batch {
                let (gr, cp, ct) = (g.row(r), c_prev.row(r), c_t.row(r));
                let dhr: Vec<f64> = dh[t].row(r).iter().zip(dh_next.row(r)).map(|(a, b)| a + b).collect();
                let dcr = dc_next.row_mut(r);
                let dar = da.row_mut(r);
                for j in 0..hd {
                    let (i, f, gg, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                    let tc = math::tanh(ct[j]);
                    let dc = dcr[j] + dhr[j] * o * (1.0 - tc * tc);
                    dar[j] = dc * gg * i * (1.0 - i);
                    dar[hd + j] = dc * cp[j] * f * (1.0 - f);
                    dar[2 * hd + j] = dc * i * (1.0 - gg * gg);
                    dar[3 * hd + j] = dhr[j] * tc * o * (1.0 - o);
                    dcr[j] = dc * f;
                }
            }
            matmul_acc(&mut dw_h, &trace.hiddens[t], true, &da, false, 1.0)?;
            dh_next = matmul(&da, false, &w_h, true)?;
            da_all.data_mut()[t * batch * 4 * hd..(t + 1) * batch * 4 * hd].copy_from_slice(da.data());
        }
        let dw_x = matmul(&trace.xs, true, &da_all, false)?;
        grads.accumulate(self.w_x, &dw_x)?;
        grads.accumulate(self.w_h, &dw_h)?;
        grads.accumulate(self.b, &Tensor::vector(da_all.sum_rows()))?;
        Ok(())
    }
}

/// Single-sequence LSTM pass over an `N x d_w` embedded sequence. Returns the
/// `N x d_S` hidden states; rows at masked positions are computed but are
/// meaningless downstream.
pub fn lstm_forward(store: &ParamStore, cell: &LstmCell, embedded: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (n, _) = embedded.dims2()?;
    if mask.len() != n {
        return Err(Error::dim("lstm_forward mask", n, mask.len()));
    }
    let trace = cell.forward(store, embedded, n, 1)?;
    let rows: Vec<&Tensor> = (0..n).map(|t| trace.hidden(t)).collect();
    Tensor::vstack(&rows)
}

/// Coordinate-wise max over real positions. Returns the pooled `[batch, h]`
/// matrix and, per coordinate, the step that attained it.
fn masked_max_pool(trace: &LstmTrace, lengths: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (batch, hd) = (trace.batch, trace.hidden(0).cols());
    let mut pooled = Tensor::filled(&[batch, hd], f64::NEG_INFINITY);
    let mut arg = vec![0usize; batch * hd];
    for (b, &len) in lengths.iter().enumerate() {
        if len == 0 {
            return Err(Error::Empty("sequence with no real positions"));
        }
        for t in 0..len {
            let h = trace.hidden(t).row(b);
            let p = pooled.row_mut(b);
            for j in 0..hd {
                if h[j] > p[j] {
                    p[j] = h[j];
                    arg[b * hd + j] = t;
                }
            }
        }
    }
    Ok((pooled, arg))
}

/// A batch of sequences prepared for the LSTM.
struct PreparedBatch {
    xs: Tensor,
    steps: usize,
    lengths: Vec<usize>,
}

fn prepare_batch(
    records: &[&PatientRecord],
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<PreparedBatch> {
    let mut padded = Vec::with_capacity(records.len());
    let mut lengths = Vec::with_capacity(records.len());
    for r in records {
        let (seq, mask) = pad_or_truncate::<MedicalCode>(&r.codes, max_len)?;
        lengths.push(mask.iter().filter(|&&m| m).count());
        padded.push(seq);
    }
    // Post-padding: positions past the longest real sequence never matter.
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let (batch, d) = (records.len(), emb.dim());
    let mut xs = Tensor::zeros(&[steps * batch, d]);
    for t in 0..steps {
        for (b, seq) in padded.iter().enumerate() {
            let idx = seq[t].as_ref().and_then(|c| vocab.index_of(c));
            xs.row_mut(t * batch + b).copy_from_slice(emb.vector(idx));
        }
    }
    Ok(PreparedBatch { xs, steps, lengths })
}

/// The trained (frozen) sequence encoder.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    cfg: EncoderConfig,
    store: ParamStore,
    cell: LstmCell,
}

const LSTM_PREFIX: &str = "lstm";

/// Result of [`FeatureEncoder::train`].
#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub encoder: FeatureEncoder,
    /// Mean binary cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl FeatureEncoder {
    /// Randomly initialized encoder over `input_dim`-wide embeddings.
    pub fn new(input_dim: usize, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, LSTM_PREFIX, input_dim, cfg.hidden, &mut rng)?;
        Ok(FeatureEncoder {
            cfg: cfg.clone(),
            store,
            cell,
        })
    }

    /// Rebuilds an encoder from saved LSTM parameters.
    pub fn from_parameters(cfg: &EncoderConfig, params: &[(alloc::string::String, Tensor)]) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in params {
            store.add(name.clone(), t.clone())?;
        }
        let cell = LstmCell::bind(&store, LSTM_PREFIX)?;
        if cell.hidden != cfg.hidden {
            return Err(Error::dim("FeatureEncoder::from_parameters", cfg.hidden, cell.hidden));
        }
        Ok(FeatureEncoder {
            cfg: cfg.clone(),
            store,
            cell,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn parameters(&self) -> &ParamStore {
        &self.store
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    /// Trains the LSTM plus a temporary logistic head with binary
    /// cross-entropy on labeled records, then drops the head.
    pub fn train(
        records: &[PatientRecord],
        emb: &EmbeddingMatrix,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
    ) -> Result<EncoderTraining> {
        let labeled: Vec<(&PatientRecord, f64)> = records
            .iter()
            .filter_map(|r| r.label.binary().map(|y| (r, f64::from(y))))
            .collect();
        let positives = labeled.iter().filter(|(_, y)| *y == 1.0).count();
        if positives == 0 || positives == labeled.len() {
            return Err(Error::SingleClass("encoder training"));
        }
        let mut enc = FeatureEncoder::new(emb.dim(), cfg)?;
        let mut rng = rng_from_seed(crate::derive_seed(cfg.seed, 1));
        let bound = 1.0 / math::sqrt(cfg.hidden as f64);
        let w0 = (0..cfg.hidden).map(|_| rng.random_range(-bound..bound)).collect();
        let head_w = enc.store.add("head.w", Tensor::vector(w0))?;
        let head_b = enc.store.add("head.b", Tensor::zeros(&[1]))?;
        let adam = AdamConfig::with_learning_rate(cfg.learning_rate);

        let mut order: Vec<usize> = (0..labeled.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let recs: Vec<&PatientRecord> = chunk.iter().map(|&i| labeled[i].0).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| labeled[i].1).collect();
                let batch = prepare_batch(&recs, emb, vocab, cfg.max_len)?;
                let loss = enc.head_loss_and_grads(&batch, &ys, head_w, head_b)?;
                total += loss * chunk.len() as f64;
                enc.store.adam_step(&adam)?;
            }
            epoch_losses.push(total / labeled.len() as f64);
        }
        let lstm_only: Vec<_> = enc
            .store
            .named_tensors()
            .into_iter()
            .filter(|(n, _)| n.starts_with(LSTM_PREFIX))
            .collect();
        let encoder = FeatureEncoder::from_parameters(cfg, &lstm_only)?;
        Ok(EncoderTraining { encoder, epoch_losses })
    }

    fn head_loss_and_grads(&mut self, batch: &PreparedBatch, ys: &[f64], head_w: ParamId, head_b: ParamId) -> Result<f64> {
        let w = self.store.value(head_w).data().to_vec();
        let b = self.store.value(head_b).data()[0];
        let g = pooled_logistic_loss(&self.cell, &mut self.store, &batch.xs, batch.steps, &batch.lengths, &w, b, ys)?;
        self.store.accumulate(head_w, &Tensor::vector(g.d_head_w))?;
        self.store.accumulate(head_b, &Tensor::vector(vec![g.d_head_b]))?;
        Ok(g.loss)
    }

    /// Max-pooled LSTM states, one row per record.
    pub fn pooled(&self, records: &[PatientRecord], emb: &EmbeddingMatrix, vocab: &Vocabulary) -> Result<Tensor> {
        let hd = self.cfg.hidden;
        let mut out = Tensor::zeros(&[records.len(), hd]);
        let refs: Vec<&PatientRecord> = records.iter().collect();
        let mut row = 0;
        for chunk in refs.chunks(256) {
            let batch = prepare_batch(chunk, emb, vocab, self.cfg.max_len)?;
            let trace = self.cell.forward(&self.store, &batch.xs, batch.steps, chunk.len())?;
            let (pooled, _) = masked_max_pool(&trace, &batch.lengths)?;
            for r in 0..chunk.len() {
                out.row_mut(row).copy_from_slice(pooled.row(r));
                row += 1;
            }
        }
        Ok(out)
    }

    /// Unscaled features: pooled state, then age, then gender.
    pub fn raw_features(&self, records: &[PatientRecord], emb: &EmbeddingMatrix, vocab: &Vocabulary) -> Result<Tensor> {
        let pooled = self.pooled(records, emb, vocab)?;
        let hd = self.cfg.hidden;
        let mut out = Tensor::zeros(&[records.len(), hd + 2]);
        for (i, r) in records.iter().enumerate() {
            let row = out.row_mut(i);
            row[..hd].copy_from_slice(pooled.row(i));
            row[hd] = f64::from(r.age);
            row[hd + 1] = f64::from(r.gender);
        }
        Ok(out)
    }

    /// Scaled feature vector of one record.
    pub fn encode(
        &self,
        record: &PatientRecord,
        emb: &EmbeddingMatrix,
        vocab: &Vocabulary,
        scaler: &FeatureScaler,
    ) -> Result<Vec<f64>> {
        let raw = self.raw_features(core::slice::from_ref(record), emb, vocab)?;
        scaler.apply(raw.row(0))
    }
}

/// Per-dimension min-max map onto `[-1, 1]`, fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Tensor) -> Result<Self> {
        let (rows, cols) = features.dims2()?;
        if rows == 0 {
            return Err(Error::Empty("scaler training features"));
        }
        features.check_finite("scaler training features")?;
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in 0..rows {
            for (j, &x) in features.row(r).iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Ok(FeatureScaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps `min → -1`, `max → 1`, clamping outside values; constant
    /// dimensions map to 0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::dim("FeatureScaler::apply", self.dim(), row.len()));
        }
        Ok(row
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| {
                if hi > lo {
                    (2.0 * ((x - lo) / (hi - lo)) - 1.0).clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn transform(&self, features: &Tensor) -> Result<Tensor> {
        let (rows, cols) = features.dims2()?;
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&self.apply(features.row(r))?);
        }
        Ok(out)
    }
}

/// Loss and head gradients from [`pooled_logistic_loss`].
#[derive(Debug, Clone)]
pub struct PooledLogistic {
    pub loss: f64,
    pub d_head_w: Vec<f64>,
    pub d_head_b: f64,
}

/// Mean binary cross-entropy of a logistic head on max-pooled LSTM states:
/// the encoder's training objective. `xs` is time-major (`steps * batch`
/// rows), `lengths` the real length of each sequence. LSTM gradients are
/// accumulated into `store`; head gradients are returned.
#[allow(clippy::too_many_arguments)]
pub fn pooled_logistic_loss(
    cell: &LstmCell,
    store: &mut ParamStore,
    xs: &Tensor,
    steps: usize,
    lengths: &[usize],
    head_w: &[f64],
    head_b: f64,
    ys: &[f64],
) -> Result<PooledLogistic> {
    let n = ys.len();
    let hd = cell.hidden;
    if head_w.len() != hd {
        return Err(Error::dim("pooled_logistic_loss", hd, head_w.len()));
    }
    if lengths.len() != n {
        return Err(Error::dim("pooled_logistic_loss", n, lengths.len()));
    }
    let trace = cell.forward(store, xs, steps, n)?;
    let (pooled, arg) = masked_max_pool(&trace, lengths)?;
    let denom = n as f64;
    let mut loss = 0.0;
    let mut dw = vec![0.0; hd];
    let mut db = 0.0;
    let mut dh: Vec<Tensor> = (0..steps).map(|_| Tensor::zeros(&[n, hd])).collect();
    for (r, &y) in ys.iter().enumerate() {
        let p = pooled.row(r);
        let z = math::dot(p, head_w) + head_b;
        loss += softplus(z) - y * z;
        let dz = (sigmoid(z) - y) / denom;
        db += dz;
        for j in 0..hd {
            dw[j] += dz * p[j];
            let t = arg[r * hd + j];
            let v = dh[t].get(r, j) + dz * head_w[j];
            dh[t].set(r, j, v);
        }
    }
    cell.backward(store, &trace, &dh)?;
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite("encoder loss".into()));
    }
    Ok(PooledLogistic {
        loss,
        d_head_w: dw,
        d_head_b: db,
    })
}

/// Records that carry a training label.
pub fn labeled_only(records: &[PatientRecord]) -> Vec<PatientRecord> {
    records.iter().filter(|r| r.label != Label::Unlabeled).cloned().collect()
}
