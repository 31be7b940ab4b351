//! Deterministic training loops for the three loss modes.
//!
//! One optimizer, fixed seeds, no dropout: identical inputs produce
//! bitwise-identical parameter trajectories. The dev-BLEU-best epoch is kept
//! as the checkpoint.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bleu::{corpus_bleu, exact_match, token_accuracy, BleuError};
use crate::corpus::{ParallelCorpus, BOS_TOKEN, EOS_TOKEN};
use crate::distill::{cross_entropy_smoothed, LossWeights};
use crate::seq2seq::{
    forward, greedy_decode, loss_and_grads, DistillContext, LossMode, ModelConfig, Parameters,
    Seq2SeqError,
};
use crate::teacher::NeighborCache;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Extra decoding steps allowed beyond the source length.
const DECODE_SLACK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Diverged { epoch: usize },
    EmptyTrainCorpus,
    ZeroBatchSize,
    Model(Seq2SeqError),
    Bleu(BleuError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Self::EmptyTrainCorpus => write!(f, "training corpus is empty"),
            Self::ZeroBatchSize => write!(f, "batch size must be at least 1"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Bleu(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<Seq2SeqError> for TrainError {
    fn from(e: Seq2SeqError) -> Self {
        Self::Model(e)
    }
}

impl From<BleuError> for TrainError {
    fn from(e: BleuError) -> Self {
        Self::Bleu(e)
    }
}

/// Adam with bias correction:
///
/// ```text
/// m ← β1·m + (1 − β1)·g        β1 = 0.9
/// v ← β2·v + (1 − β2)·g²       β2 = 0.999
/// θ ← θ − lr·(m / (1 − β1^t)) / (sqrt(v / (1 − β2^t)) + ε)    ε = 1e-8
/// ```
pub struct AdamState {
    m: Parameters,
    v: Parameters,
    step: u64,
    pow_beta1: f64,
    pow_beta2: f64,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
            step: 0,
            pow_beta1: 1.0,
            pow_beta2: 1.0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64) {
        self.step += 1;
        self.pow_beta1 *= ADAM_BETA1;
        self.pow_beta2 *= ADAM_BETA2;
        let c1 = 1.0 / (1.0 - self.pow_beta1);
        let c2 = 1.0 / (1.0 - self.pow_beta2);
        let mut ps = params.data_mut();
        let gs = grads.data();
        let mut ms = self.m.data_mut();
        let mut vs = self.v.data_mut();
        for t in 0..ps.len() {
            let p = &mut ps[t];
            let g = gs[t];
            let m = &mut ms[t];
            let v = &mut vs[t];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                p[i] -= lr * mhat / (libm::sqrt(vhat) + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mode: LossMode,
    pub weights: LossWeights,
    /// Neighbors per position in the distillation modes.
    pub k: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-3,
            mode: LossMode::Ce,
            weights: LossWeights::default(),
            k: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best dev-BLEU epoch.
    pub params: Parameters,
    /// 1-based epoch the checkpoint came from (0 when epochs = 0).
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Label-smoothed cross-entropy per decoding step, averaged per sentence and
/// then over the corpus. No gradients; used for held-out loss tracking.
pub fn corpus_loss(
    params: &Parameters,
    corpus: &ParallelCorpus,
    label_smoothing: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for pair in &corpus.pairs {
        let mut prefix = Vec::with_capacity(pair.tgt.len() + 1);
        prefix.push(BOS_TOKEN);
        prefix.extend_from_slice(&pair.tgt);
        let trace = forward(params, &pair.src, &prefix)?;
        let mut sent = 0.0;
        for (j, z) in trace.logits.iter().enumerate() {
            let target = if j < pair.tgt.len() { pair.tgt[j] } else { EOS_TOKEN };
            let (loss, _) = cross_entropy_smoothed(z, target, label_smoothing)
                .map_err(Seq2SeqError::Distill)?;
            sent += loss;
        }
        total += sent / trace.logits.len() as f64;
    }
    Ok(total / corpus.len() as f64)
}

/// Greedy-decoding quality metrics on a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub bleu: f64,
    pub token_accuracy: f64,
    pub exact_match: f64,
}

pub fn evaluate(params: &Parameters, corpus: &ParallelCorpus) -> Result<EvalMetrics, TrainError> {
    let mut hyps = Vec::with_capacity(corpus.len());
    for pair in &corpus.pairs {
        hyps.push(greedy_decode(params, &pair.src, pair.src.len() + DECODE_SLACK)?);
    }
    let refs = corpus.references();
    Ok(EvalMetrics {
        bleu: corpus_bleu(&hyps, &refs)?,
        token_accuracy: token_accuracy(&hyps, &refs)?,
        exact_match: exact_match(&hyps, &refs)?,
    })
}

/// Train from a fresh seeded initialization; the shuffling stream is derived
/// from the model seed, so one seed pins the whole trajectory.
pub fn train(
    config: &ModelConfig,
    train_corpus: &ParallelCorpus,
    dev_corpus: &ParallelCorpus,
    cache: Option<&NeighborCache>,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let init = Parameters::init(config)?;
    train_from(init, train_corpus, dev_corpus, cache, opts)
}

/// Train from explicit starting parameters.
pub fn train_from(
    init: Parameters,
    train_corpus: &ParallelCorpus,
    dev_corpus: &ParallelCorpus,
    cache: Option<&NeighborCache>,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    if train_corpus.is_empty() {
        return Err(TrainError::EmptyTrainCorpus);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::ZeroBatchSize);
    }
    let config = init.config;
    let mut params = init;
    let mut adam = AdamState::new(&config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e_5f72_6e67);
    let distill_ctx = cache.map(|c| DistillContext { cache: c, k: opts.k });

    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_bleu = -1.0f64;
    let mut history = Vec::with_capacity(opts.epochs);

    let n = train_corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=opts.epochs {
        for i in (1..n).rev() {
            order.swap(i, shuffle_rng.random_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let (loss, grads) = loss_and_grads(
                &params,
                train_corpus,
                batch,
                opts.mode,
                distill_ctx.as_ref(),
                &opts.weights,
            )?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            adam.step(&mut params, &grads, opts.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        let dev_loss = if dev_corpus.is_empty() {
            0.0
        } else {
            corpus_loss(&params, dev_corpus, opts.weights.label_smoothing)?
        };
        let dev_bleu =
            if dev_corpus.is_empty() { 0.0 } else { evaluate(&params, dev_corpus)?.bleu };
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            dev_loss,
            dev_bleu,
        });
        if dev_bleu > best_bleu {
            best_bleu = dev_bleu;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }
    Ok(TrainOutcome { params: best_params, best_epoch, history })
}
